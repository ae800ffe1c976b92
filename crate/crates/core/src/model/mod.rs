//! Small encoder-decoder sequence model with a task-shared representation
//! layer and five auxiliary heads, all with exact analytic gradients.
//!
//! The encoder output `H` (one d_h vector per input position) feeds the
//! decoder through cross-attention. For multi-task fine-tuning, `H` also
//! passes through the affine task-shared layer `H_s = W₁H + b₁`, from which
//! the POS, NER, MLM and encoder Keep/Translate heads project per-position
//! class logits; the decoder Keep/Translate head reads decoder states
//! directly. The MLM head sees a second encoder pass over the masked copy
//! of the input and is evaluated only at masked positions.

mod checkpoint;
mod joint;
pub(crate) mod layers;
pub mod math;
mod net;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use joint::{ItemLabels, JointResult, TrainItem};
pub use layers::{Attention, Ffn, LayerNorm, Linear};
pub use math::Mat;
pub use net::{DecCache, EncCache, ModelParams};

use thiserror::Error;

use crate::corpus::{BOS_ID, EOS_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    Vocab { id: u32, vocab_size: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Model dimensions and class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Encoder/decoder hidden size.
    pub d_h: usize,
    /// Task-shared representation size.
    pub d_h_s: usize,
    /// Encoder and decoder depth.
    pub layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Feed-forward inner size.
    pub d_ff: usize,
    /// Shared encoder/decoder vocabulary size (also the MLM class count).
    pub vocab_size: usize,
    pub c_pos: usize,
    pub c_ner: usize,
    pub c_kt: usize,
    /// Decode-length cap.
    pub max_len: usize,
}

impl ModelConfig {
    /// The laptop-scale default: d_h 64, two layers, two heads.
    pub fn standard(vocab_size: usize, c_pos: usize, c_ner: usize) -> ModelConfig {
        ModelConfig {
            d_h: 64,
            d_h_s: 64,
            layers: 2,
            heads: 2,
            d_ff: 128,
            vocab_size,
            c_pos,
            c_ner,
            c_kt: 2,
            max_len: 48,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_h == 0 || self.heads == 0 || self.d_h % self.heads != 0 {
            return Err(ModelError::Shape(format!(
                "d_h {} must be a positive multiple of heads {}",
                self.d_h, self.heads
            )));
        }
        for (name, v) in [
            ("d_h_s", self.d_h_s),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(ModelError::Shape(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("c_pos", self.c_pos),
            ("c_ner", self.c_ner),
            ("c_kt", self.c_kt),
        ] {
            if v < 2 {
                return Err(ModelError::Shape(format!("{name} must be at least 2, got {v}")));
            }
        }
        Ok(())
    }
}

/// The model: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl SeqModel {
    /// Fresh model with uniform(−1/√d_h, 1/√d_h) initialization under the
    /// given seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<SeqModel, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(SeqModel { config, params })
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(ModelError::Vocab { id, vocab_size: self.config.vocab_size });
            }
        }
        Ok(())
    }

    /// Encoder output H: one d_h row per input position.
    pub fn encode(&self, input_ids: &[u32]) -> Result<Mat, ModelError> {
        self.check_ids(input_ids)?;
        Ok(net::encoder_forward(&self.params, &self.config, input_ids).0)
    }

    /// The task-shared representation H_s = W₁H + b₁ (no nonlinearity).
    pub fn shared_layer(&self, h: &Mat) -> Mat {
        layers::linear_forward(&self.params.shared, h)
    }

    /// Per-position POS distributions (rows sum to 1).
    pub fn head_pos(&self, h_s: &Mat) -> Mat {
        softmax_head(&self.params.head_pos, h_s)
    }

    pub fn head_ner(&self, h_s: &Mat) -> Mat {
        softmax_head(&self.params.head_ner, h_s)
    }

    pub fn head_kt_enc(&self, h_s: &Mat) -> Mat {
        softmax_head(&self.params.head_kt_enc, h_s)
    }

    /// MLM distributions at the masked positions only.
    pub fn head_mlm(&self, h_s: &Mat, masked_positions: &[usize]) -> Vec<Vec<f64>> {
        let full = softmax_head(&self.params.head_mlm, h_s);
        masked_positions.iter().map(|&p| full.row(p).to_vec()).collect()
    }

    /// Keep/Translate distribution per decoder state.
    pub fn head_kt_dec(&self, dec_states: &Mat) -> Mat {
        softmax_head(&self.params.head_kt_dec, dec_states)
    }

    /// Teacher-forced decoder states for a target prefix.
    pub fn decoder_states(&self, h: &Mat, prefix: &[u32]) -> Result<Mat, ModelError> {
        self.check_ids(prefix)?;
        Ok(net::decoder_forward(&self.params, &self.config, h, prefix).0)
    }

    /// Next-token distribution after a target prefix.
    pub fn decode(&self, h: &Mat, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let states = self.decoder_states(h, prefix)?;
        let logits = net::output_logits(&self.params, &states);
        let mut last = Mat { rows: 1, cols: logits.cols, data: logits.row(logits.rows - 1).to_vec() };
        math::softmax_rows(&mut last);
        Ok(last.data)
    }

    /// Greedy decoding from `<bos>`, stopping at `<eos>` or `max_len`
    /// generated tokens. Returns the generated ids without markers.
    pub fn greedy_decode(&self, enc_ids: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
        let h = self.encode(enc_ids)?;
        let mut prefix = vec![BOS_ID];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let states = net::decoder_forward(&self.params, &self.config, &h, &prefix).0;
            let logits = net::output_logits(&self.params, &states);
            let last = logits.row(logits.rows - 1);
            let next = argmax(last) as u32;
            if next == EOS_ID {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }
}

fn softmax_head(head: &layers::Linear, input: &Mat) -> Mat {
    let mut logits = layers::linear_forward(head, input);
    math::softmax_rows(&mut logits);
    logits
}

/// Index of the largest value; ties resolve to the smallest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_h: 8,
            d_h_s: 8,
            layers: 1,
            heads: 2,
            d_ff: 16,
            vocab_size: 24,
            c_pos: 5,
            c_ner: 3,
            c_kt: 2,
            max_len: 16,
        }
    }

    #[test]
    fn config_validation_catches_bad_dims() {
        let mut cfg = tiny_config();
        cfg.d_h = 9; // not divisible by 2 heads
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.c_pos = 1;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn encode_yields_one_vector_per_position() {
        let model = SeqModel::new(tiny_config(), 3).unwrap();
        let h = model.encode(&[6, 7, 8, 9, 10]).unwrap();
        assert_eq!(h.rows, 5);
        assert_eq!(h.cols, 8);
    }

    #[test]
    fn encode_rejects_bad_input() {
        let model = SeqModel::new(tiny_config(), 3).unwrap();
        assert!(matches!(model.encode(&[]), Err(ModelError::EmptyInput)));
        assert!(matches!(
            model.encode(&[6, 99]),
            Err(ModelError::Vocab { id: 99, .. })
        ));
    }

    #[test]
    fn permuting_tokens_changes_the_encoding() {
        let model = SeqModel::new(tiny_config(), 3).unwrap();
        let a = model.encode(&[6, 7, 8]).unwrap();
        let b = model.encode(&[7, 6, 8]).unwrap();
        assert_ne!(a.data, b.data);
        // determinism
        let c = model.encode(&[6, 7, 8]).unwrap();
        assert_eq!(a.data, c.data);
    }

    #[test]
    fn shared_layer_is_affine() {
        let mut model = SeqModel::new(tiny_config(), 5).unwrap();
        let h1 = model.encode(&[6, 7]).unwrap();
        let h2 = model.encode(&[9, 11]).unwrap();

        // identity weights, zero bias → H_s == H
        for r in 0..8 {
            for c in 0..8 {
                *model.params.shared.w.at_mut(r, c) = f64::from(u8::from(r == c));
            }
            model.params.shared.b[r] = 0.0;
        }
        assert_eq!(model.shared_layer(&h1).data, h1.data);

        // zero input → bias broadcast
        model.params.shared.b = (0..8).map(|i| i as f64).collect();
        let hs = model.shared_layer(&Mat::zeros(3, 8));
        for r in 0..3 {
            assert_eq!(hs.row(r), &model.params.shared.b[..]);
        }

        // affine identity: f(a·h1 + b·h2) == a·f(h1) + b·f(h2) − (a+b−1)·b₁
        let model = SeqModel::new(tiny_config(), 5).unwrap();
        let (a, b) = (0.7, -1.3);
        let mut mix = Mat::zeros(2, 8);
        for r in 0..2 {
            for c in 0..8 {
                *mix.at_mut(r, c) = a * h1.at(r, c) + b * h2.at(r, c);
            }
        }
        let lhs = model.shared_layer(&mix);
        let f1 = model.shared_layer(&h1);
        let f2 = model.shared_layer(&h2);
        for r in 0..2 {
            for c in 0..8 {
                let rhs = a * f1.at(r, c) + b * f2.at(r, c)
                    - (a + b - 1.0) * model.params.shared.b[c];
                assert!((lhs.at(r, c) - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn head_outputs_are_distributions() {
        let model = SeqModel::new(tiny_config(), 7).unwrap();
        let h = model.encode(&[6, 7, 8, 9]).unwrap();
        let hs = model.shared_layer(&h);
        for probs in [model.head_pos(&hs), model.head_ner(&hs), model.head_kt_enc(&hs)] {
            for r in 0..probs.rows {
                let sum: f64 = probs.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(probs.row(r).iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn zeroed_head_is_uniform() {
        let mut model = SeqModel::new(tiny_config(), 7).unwrap();
        model.params.head_pos = Linear::zeros(5, 8);
        let h = model.encode(&[6, 7]).unwrap();
        let hs = model.shared_layer(&h);
        let probs = model.head_pos(&hs);
        for r in 0..probs.rows {
            for &p in probs.row(r) {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_argmax_is_shift_invariant() {
        let model = SeqModel::new(tiny_config(), 9).unwrap();
        let h = model.encode(&[6, 7, 8]).unwrap();
        let hs = model.shared_layer(&h);
        let logits = layers::linear_forward(&model.params.head_pos, &hs);
        let probs = model.head_pos(&hs);
        for r in 0..logits.rows {
            let shifted: Vec<f64> = logits.row(r).iter().map(|v| v + 123.0).collect();
            assert_eq!(argmax(probs.row(r)), argmax(&shifted));
        }
    }

    #[test]
    fn mlm_head_restricts_to_masked_positions() {
        let model = SeqModel::new(tiny_config(), 11).unwrap();
        let h = model.encode(&[6, 7, 8, 9, 10]).unwrap();
        let hs = model.shared_layer(&h);
        assert!(model.head_mlm(&hs, &[]).is_empty());
        let preds = model.head_mlm(&hs, &[1, 3]);
        assert_eq!(preds.len(), 2);
        for p in &preds {
            assert_eq!(p.len(), 24);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_returns_a_distribution() {
        let model = SeqModel::new(tiny_config(), 13).unwrap();
        let h = model.encode(&[6, 7, 8]).unwrap();
        let dist = model.decode(&h, &[BOS_ID, 6]).unwrap();
        assert_eq!(dist.len(), 24);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(matches!(model.decode(&h, &[]), Err(ModelError::EmptyInput)));
    }

    #[test]
    fn kt_dec_output_covers_the_prefix() {
        let model = SeqModel::new(tiny_config(), 13).unwrap();
        let h = model.encode(&[6, 7, 8]).unwrap();
        let states = model.decoder_states(&h, &[BOS_ID, 6, 7, 8]).unwrap();
        let probs = model.head_kt_dec(&states);
        assert_eq!(probs.rows, 4);
        for r in 0..probs.rows {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
