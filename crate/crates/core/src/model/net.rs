//! Parameter container and the encoder/decoder stack passes.
//!
//! Pre-norm layers: `x + attn(ln(x))` then `x + ffn(ln(x))`, a final
//! layer norm after each stack. The decoder inserts cross-attention over
//! the encoder output between self-attention and the feed-forward block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    attention_backward, attention_forward, ffn_backward, ffn_forward, layernorm_backward,
    layernorm_forward, linear_backward, linear_forward, Attention, AttnCache, Ffn, FfnCache,
    LayerNorm, Linear, LnCache,
};
use super::math::{add_positional_encoding, Mat};
use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: Attention,
    pub ln2: LayerNorm,
    pub cross_attn: Attention,
    pub ln3: LayerNorm,
    pub ffn: Ffn,
}

/// Every trainable array in the model. The same struct doubles as the
/// gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc_embed: Mat,
    pub dec_embed: Mat,
    pub enc_layers: Vec<EncoderLayer>,
    pub enc_ln: LayerNorm,
    pub dec_layers: Vec<DecoderLayer>,
    pub dec_ln: LayerNorm,
    pub out_proj: Linear,
    /// Task-shared representation layer W₁, b₁ (affine, no activation).
    pub shared: Linear,
    pub head_pos: Linear,
    pub head_ner: Linear,
    pub head_mlm: Linear,
    pub head_kt_enc: Linear,
    pub head_kt_dec: Linear,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> ModelParams {
        let d = cfg.d_h;
        let enc_layer = || EncoderLayer {
            ln1: LayerNorm::zeros(d),
            attn: Attention::zeros(d),
            ln2: LayerNorm::zeros(d),
            ffn: Ffn::zeros(d, cfg.d_ff),
        };
        let dec_layer = || DecoderLayer {
            ln1: LayerNorm::zeros(d),
            self_attn: Attention::zeros(d),
            ln2: LayerNorm::zeros(d),
            cross_attn: Attention::zeros(d),
            ln3: LayerNorm::zeros(d),
            ffn: Ffn::zeros(d, cfg.d_ff),
        };
        ModelParams {
            enc_embed: Mat::zeros(cfg.vocab_size, d),
            dec_embed: Mat::zeros(cfg.vocab_size, d),
            enc_layers: (0..cfg.layers).map(|_| enc_layer()).collect(),
            enc_ln: LayerNorm::zeros(d),
            dec_layers: (0..cfg.layers).map(|_| dec_layer()).collect(),
            dec_ln: LayerNorm::zeros(d),
            out_proj: Linear::zeros(cfg.vocab_size, d),
            shared: Linear::zeros(cfg.d_h_s, d),
            head_pos: Linear::zeros(cfg.c_pos, cfg.d_h_s),
            head_ner: Linear::zeros(cfg.c_ner, cfg.d_h_s),
            head_mlm: Linear::zeros(cfg.vocab_size, cfg.d_h_s),
            head_kt_enc: Linear::zeros(cfg.c_kt, cfg.d_h_s),
            head_kt_dec: Linear::zeros(cfg.c_kt, d),
        }
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> ModelParams {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_h;
        let bound = 1.0 / (d as f64).sqrt();
        let embed = |rng: &mut ChaCha8Rng| Mat {
            rows: cfg.vocab_size,
            cols: d,
            data: (0..cfg.vocab_size * d)
                .map(|_| super::layers::quantize(rand::Rng::random_range(rng, -bound..bound)))
                .collect(),
        };
        ModelParams {
            enc_embed: embed(rng),
            dec_embed: embed(rng),
            enc_layers: (0..cfg.layers)
                .map(|_| EncoderLayer {
                    ln1: LayerNorm::new(d),
                    attn: Attention::init(d, rng),
                    ln2: LayerNorm::new(d),
                    ffn: Ffn::init(d, cfg.d_ff, rng),
                })
                .collect(),
            enc_ln: LayerNorm::new(d),
            dec_layers: (0..cfg.layers)
                .map(|_| DecoderLayer {
                    ln1: LayerNorm::new(d),
                    self_attn: Attention::init(d, rng),
                    ln2: LayerNorm::new(d),
                    cross_attn: Attention::init(d, rng),
                    ln3: LayerNorm::new(d),
                    ffn: Ffn::init(d, cfg.d_ff, rng),
                })
                .collect(),
            dec_ln: LayerNorm::new(d),
            out_proj: Linear::init(cfg.vocab_size, d, rng),
            shared: Linear::init(cfg.d_h_s, d, rng),
            head_pos: Linear::init(cfg.c_pos, cfg.d_h_s, rng),
            head_ner: Linear::init(cfg.c_ner, cfg.d_h_s, rng),
            head_mlm: Linear::init(cfg.vocab_size, cfg.d_h_s, rng),
            head_kt_enc: Linear::init(cfg.c_kt, cfg.d_h_s, rng),
            head_kt_dec: Linear::init(cfg.c_kt, d, rng),
        }
    }

    /// Visits every tensor as (stable name, values), in a fixed order.
    pub fn for_each(&self, f: &mut impl FnMut(&str, &[f64])) {
        f("enc_embed", &self.enc_embed.data);
        f("dec_embed", &self.dec_embed.data);
        for (i, l) in self.enc_layers.iter().enumerate() {
            let p = format!("enc.{i}");
            f(&format!("{p}.ln1.gain"), &l.ln1.gain);
            f(&format!("{p}.ln1.bias"), &l.ln1.bias);
            for (name, lin) in [
                ("attn.wq", &l.attn.wq),
                ("attn.wk", &l.attn.wk),
                ("attn.wv", &l.attn.wv),
                ("attn.wo", &l.attn.wo),
            ] {
                f(&format!("{p}.{name}.w"), &lin.w.data);
                f(&format!("{p}.{name}.b"), &lin.b);
            }
            f(&format!("{p}.ln2.gain"), &l.ln2.gain);
            f(&format!("{p}.ln2.bias"), &l.ln2.bias);
            f(&format!("{p}.ffn.w1.w"), &l.ffn.w1.w.data);
            f(&format!("{p}.ffn.w1.b"), &l.ffn.w1.b);
            f(&format!("{p}.ffn.w2.w"), &l.ffn.w2.w.data);
            f(&format!("{p}.ffn.w2.b"), &l.ffn.w2.b);
        }
        f("enc_ln.gain", &self.enc_ln.gain);
        f("enc_ln.bias", &self.enc_ln.bias);
        for (i, l) in self.dec_layers.iter().enumerate() {
            let p = format!("dec.{i}");
            f(&format!("{p}.ln1.gain"), &l.ln1.gain);
            f(&format!("{p}.ln1.bias"), &l.ln1.bias);
            for (name, lin) in [
                ("self_attn.wq", &l.self_attn.wq),
                ("self_attn.wk", &l.self_attn.wk),
                ("self_attn.wv", &l.self_attn.wv),
                ("self_attn.wo", &l.self_attn.wo),
            ] {
                f(&format!("{p}.{name}.w"), &lin.w.data);
                f(&format!("{p}.{name}.b"), &lin.b);
            }
            f(&format!("{p}.ln2.gain"), &l.ln2.gain);
            f(&format!("{p}.ln2.bias"), &l.ln2.bias);
            for (name, lin) in [
                ("cross_attn.wq", &l.cross_attn.wq),
                ("cross_attn.wk", &l.cross_attn.wk),
                ("cross_attn.wv", &l.cross_attn.wv),
                ("cross_attn.wo", &l.cross_attn.wo),
            ] {
                f(&format!("{p}.{name}.w"), &lin.w.data);
                f(&format!("{p}.{name}.b"), &lin.b);
            }
            f(&format!("{p}.ln3.gain"), &l.ln3.gain);
            f(&format!("{p}.ln3.bias"), &l.ln3.bias);
            f(&format!("{p}.ffn.w1.w"), &l.ffn.w1.w.data);
            f(&format!("{p}.ffn.w1.b"), &l.ffn.w1.b);
            f(&format!("{p}.ffn.w2.w"), &l.ffn.w2.w.data);
            f(&format!("{p}.ffn.w2.b"), &l.ffn.w2.b);
        }
        f("dec_ln.gain", &self.dec_ln.gain);
        f("dec_ln.bias", &self.dec_ln.bias);
        for (name, lin) in [
            ("out_proj", &self.out_proj),
            ("shared", &self.shared),
            ("head_pos", &self.head_pos),
            ("head_ner", &self.head_ner),
            ("head_mlm", &self.head_mlm),
            ("head_kt_enc", &self.head_kt_enc),
            ("head_kt_dec", &self.head_kt_dec),
        ] {
            f(&format!("{name}.w"), &lin.w.data);
            f(&format!("{name}.b"), &lin.b);
        }
    }

    /// Mutable twin of [`ModelParams::for_each`]; must visit the same
    /// names in the same order.
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&str, &mut [f64])) {
        f("enc_embed", &mut self.enc_embed.data);
        f("dec_embed", &mut self.dec_embed.data);
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            let p = format!("enc.{i}");
            f(&format!("{p}.ln1.gain"), &mut l.ln1.gain);
            f(&format!("{p}.ln1.bias"), &mut l.ln1.bias);
            for (name, lin) in [
                ("attn.wq", &mut l.attn.wq),
                ("attn.wk", &mut l.attn.wk),
                ("attn.wv", &mut l.attn.wv),
                ("attn.wo", &mut l.attn.wo),
            ] {
                f(&format!("{p}.{name}.w"), &mut lin.w.data);
                f(&format!("{p}.{name}.b"), &mut lin.b);
            }
            f(&format!("{p}.ln2.gain"), &mut l.ln2.gain);
            f(&format!("{p}.ln2.bias"), &mut l.ln2.bias);
            f(&format!("{p}.ffn.w1.w"), &mut l.ffn.w1.w.data);
            f(&format!("{p}.ffn.w1.b"), &mut l.ffn.w1.b);
            f(&format!("{p}.ffn.w2.w"), &mut l.ffn.w2.w.data);
            f(&format!("{p}.ffn.w2.b"), &mut l.ffn.w2.b);
        }
        f("enc_ln.gain", &mut self.enc_ln.gain);
        f("enc_ln.bias", &mut self.enc_ln.bias);
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            let p = format!("dec.{i}");
            f(&format!("{p}.ln1.gain"), &mut l.ln1.gain);
            f(&format!("{p}.ln1.bias"), &mut l.ln1.bias);
            for (name, lin) in [
                ("self_attn.wq", &mut l.self_attn.wq),
                ("self_attn.wk", &mut l.self_attn.wk),
                ("self_attn.wv", &mut l.self_attn.wv),
                ("self_attn.wo", &mut l.self_attn.wo),
            ] {
                f(&format!("{p}.{name}.w"), &mut lin.w.data);
                f(&format!("{p}.{name}.b"), &mut lin.b);
            }
            f(&format!("{p}.ln2.gain"), &mut l.ln2.gain);
            f(&format!("{p}.ln2.bias"), &mut l.ln2.bias);
            for (name, lin) in [
                ("cross_attn.wq", &mut l.cross_attn.wq),
                ("cross_attn.wk", &mut l.cross_attn.wk),
                ("cross_attn.wv", &mut l.cross_attn.wv),
                ("cross_attn.wo", &mut l.cross_attn.wo),
            ] {
                f(&format!("{p}.{name}.w"), &mut lin.w.data);
                f(&format!("{p}.{name}.b"), &mut lin.b);
            }
            f(&format!("{p}.ln3.gain"), &mut l.ln3.gain);
            f(&format!("{p}.ln3.bias"), &mut l.ln3.bias);
            f(&format!("{p}.ffn.w1.w"), &mut l.ffn.w1.w.data);
            f(&format!("{p}.ffn.w1.b"), &mut l.ffn.w1.b);
            f(&format!("{p}.ffn.w2.w"), &mut l.ffn.w2.w.data);
            f(&format!("{p}.ffn.w2.b"), &mut l.ffn.w2.b);
        }
        f("dec_ln.gain", &mut self.dec_ln.gain);
        f("dec_ln.bias", &mut self.dec_ln.bias);
        for (name, lin) in [
            ("out_proj", &mut self.out_proj),
            ("shared", &mut self.shared),
            ("head_pos", &mut self.head_pos),
            ("head_ner", &mut self.head_ner),
            ("head_mlm", &mut self.head_mlm),
            ("head_kt_enc", &mut self.head_kt_enc),
            ("head_kt_dec", &mut self.head_kt_dec),
        ] {
            f(&format!("{name}.w"), &mut lin.w.data);
            f(&format!("{name}.b"), &mut lin.b);
        }
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        self.for_each(&mut |_, t| flat.extend_from_slice(t));
        flat
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.for_each_mut(&mut |_, t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

pub struct EncLayerCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ffn: FfnCache,
}

pub struct EncCache {
    pub ids: Vec<u32>,
    layers: Vec<EncLayerCache>,
    final_ln: LnCache,
}

fn embed(table: &Mat, ids: &[u32]) -> Mat {
    let mut x = Mat::zeros(ids.len(), table.cols);
    for (pos, &id) in ids.iter().enumerate() {
        x.row_mut(pos).copy_from_slice(table.row(id as usize));
    }
    add_positional_encoding(&mut x);
    x
}

fn embed_backward(grad_table: &mut Mat, ids: &[u32], dx: &Mat) {
    for (pos, &id) in ids.iter().enumerate() {
        for (g, &d) in grad_table.row_mut(id as usize).iter_mut().zip(dx.row(pos)) {
            *g += d;
        }
    }
}

/// Runs the encoder; returns per-position vectors H (len × d_h).
pub fn encoder_forward(params: &ModelParams, cfg: &ModelConfig, ids: &[u32]) -> (Mat, EncCache) {
    let mut x = embed(&params.enc_embed, ids);
    let mut layers = Vec::with_capacity(params.enc_layers.len());
    for layer in &params.enc_layers {
        let (a_in, ln1) = layernorm_forward(&layer.ln1, &x);
        let (attn_out, attn) = attention_forward(&layer.attn, &a_in, &a_in, cfg.heads, false);
        x.add_assign(&attn_out);
        let (f_in, ln2) = layernorm_forward(&layer.ln2, &x);
        let (ffn_out, ffn) = ffn_forward(&layer.ffn, &f_in);
        x.add_assign(&ffn_out);
        layers.push(EncLayerCache { ln1, attn, ln2, ffn });
    }
    let (h, final_ln) = layernorm_forward(&params.enc_ln, &x);
    (h, EncCache { ids: ids.to_vec(), layers, final_ln })
}

/// Backward through the encoder, accumulating into `grads`.
pub fn encoder_backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncCache,
    d_h: &Mat,
    grads: &mut ModelParams,
) {
    let mut dx = layernorm_backward(&params.enc_ln, &mut grads.enc_ln, &cache.final_ln, d_h);
    for i in (0..params.enc_layers.len()).rev() {
        let layer = &params.enc_layers[i];
        let lcache = &cache.layers[i];
        let glayer = &mut grads.enc_layers[i];
        // x2 = x1 + ffn(ln2(x1))
        let d_f_in = ffn_backward(&layer.ffn, &mut glayer.ffn, &lcache.ffn, &dx);
        dx.add_assign(&layernorm_backward(&layer.ln2, &mut glayer.ln2, &lcache.ln2, &d_f_in));
        // x1 = x0 + attn(ln1(x0))
        let (dx_q, dx_kv) =
            attention_backward(&layer.attn, &mut glayer.attn, &lcache.attn, &dx, cfg.heads);
        let mut d_a_in = dx_q;
        d_a_in.add_assign(&dx_kv);
        dx.add_assign(&layernorm_backward(&layer.ln1, &mut glayer.ln1, &lcache.ln1, &d_a_in));
    }
    embed_backward(&mut grads.enc_embed, &cache.ids, &dx);
}

pub struct DecLayerCache {
    ln1: LnCache,
    self_attn: AttnCache,
    ln2: LnCache,
    cross_attn: AttnCache,
    ln3: LnCache,
    ffn: FfnCache,
}

pub struct DecCache {
    pub ids: Vec<u32>,
    layers: Vec<DecLayerCache>,
    final_ln: LnCache,
}

/// Teacher-forced decoder pass over `input_ids`; self-attention is causal
/// and every layer cross-attends into the encoder output.
pub fn decoder_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    enc_h: &Mat,
    input_ids: &[u32],
) -> (Mat, DecCache) {
    let mut x = embed(&params.dec_embed, input_ids);
    let mut layers = Vec::with_capacity(params.dec_layers.len());
    for layer in &params.dec_layers {
        let (a_in, ln1) = layernorm_forward(&layer.ln1, &x);
        let (sa_out, self_attn) =
            attention_forward(&layer.self_attn, &a_in, &a_in, cfg.heads, true);
        x.add_assign(&sa_out);
        let (c_in, ln2) = layernorm_forward(&layer.ln2, &x);
        let (ca_out, cross_attn) =
            attention_forward(&layer.cross_attn, &c_in, enc_h, cfg.heads, false);
        x.add_assign(&ca_out);
        let (f_in, ln3) = layernorm_forward(&layer.ln3, &x);
        let (ffn_out, ffn) = ffn_forward(&layer.ffn, &f_in);
        x.add_assign(&ffn_out);
        layers.push(DecLayerCache { ln1, self_attn, ln2, cross_attn, ln3, ffn });
    }
    let (states, final_ln) = layernorm_forward(&params.dec_ln, &x);
    (states, DecCache { ids: input_ids.to_vec(), layers, final_ln })
}

/// Backward through the decoder, accumulating into `grads`; returns the
/// gradient w.r.t. the encoder output (summed over all cross-attentions).
pub fn decoder_backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &DecCache,
    enc_h_rows: usize,
    d_states: &Mat,
    grads: &mut ModelParams,
) -> Mat {
    let mut d_enc_h = Mat::zeros(enc_h_rows, d_states.cols);
    let mut dx = layernorm_backward(&params.dec_ln, &mut grads.dec_ln, &cache.final_ln, d_states);
    for i in (0..params.dec_layers.len()).rev() {
        let layer = &params.dec_layers[i];
        let lcache = &cache.layers[i];
        let glayer = &mut grads.dec_layers[i];
        // x3 = x2 + ffn(ln3(x2))
        let d_f_in = ffn_backward(&layer.ffn, &mut glayer.ffn, &lcache.ffn, &dx);
        dx.add_assign(&layernorm_backward(&layer.ln3, &mut glayer.ln3, &lcache.ln3, &d_f_in));
        // x2 = x1 + cross(ln2(x1), enc_h)
        let (dx_q, dx_kv) = attention_backward(
            &layer.cross_attn,
            &mut glayer.cross_attn,
            &lcache.cross_attn,
            &dx,
            cfg.heads,
        );
        d_enc_h.add_assign(&dx_kv);
        dx.add_assign(&layernorm_backward(&layer.ln2, &mut glayer.ln2, &lcache.ln2, &dx_q));
        // x1 = x0 + self_attn(ln1(x0))
        let (dx_q, dx_kv) = attention_backward(
            &layer.self_attn,
            &mut glayer.self_attn,
            &lcache.self_attn,
            &dx,
            cfg.heads,
        );
        let mut d_a_in = dx_q;
        d_a_in.add_assign(&dx_kv);
        dx.add_assign(&layernorm_backward(&layer.ln1, &mut glayer.ln1, &lcache.ln1, &d_a_in));
    }
    embed_backward(&mut grads.dec_embed, &cache.ids, &dx);
    d_enc_h
}

/// Logits over the vocabulary for every decoder state.
pub fn output_logits(params: &ModelParams, states: &Mat) -> Mat {
    linear_forward(&params.out_proj, states)
}

/// Backward through the output projection; returns d_states.
pub fn output_logits_backward(
    params: &ModelParams,
    states: &Mat,
    d_logits: &Mat,
    grads: &mut ModelParams,
) -> Mat {
    linear_backward(&params.out_proj, &mut grads.out_proj, states, d_logits)
}
