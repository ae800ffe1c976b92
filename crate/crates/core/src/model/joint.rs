//! The joint multi-task pass: all active task losses in one forward, their
//! exact gradients in one backward.
//!
//! The joint objective over the active task set is
//! `L = (1/K) Σ_k λ_k · mean_k`, where `mean_k` averages the per-position
//! losses of task k over every contributing position in the batch (masked
//! positions only for MLM). Gradients are therefore scaled per position by
//! `λ_k / (K · N_k)` before flowing back, which keeps the backward an exact
//! derivative of [`JointResult::combined`].

use std::collections::BTreeMap;

use crate::corpus::BOS_ID;
use crate::losses::LossSpec;
use crate::tasks::{TaskId, TaskSet};

use super::layers::{linear_backward, linear_forward};
use super::math::Mat;
use super::net;
use super::{ModelError, ModelParams, SeqModel};

/// Subtask labels for one example, aligned with the encoder input and the
/// decoder target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemLabels {
    pub pos: Vec<u32>,
    pub ner: Vec<u32>,
    pub kt_enc: Vec<u32>,
    pub kt_dec: Vec<u32>,
    pub mlm_input: Vec<u32>,
    pub mlm_positions: Vec<usize>,
    pub mlm_targets: Vec<u32>,
}

/// One training example in model terms: encoder ids, the decoder target
/// `<bos> pe <eos>`, and (for fine-tuning) the subtask labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub enc_ids: Vec<u32>,
    pub dec_target: Vec<u32>,
    pub labels: Option<ItemLabels>,
}

/// Per-task batch means and contributing position counts.
#[derive(Debug, Clone, PartialEq)]
pub struct JointResult {
    pub mean_losses: [f64; 6],
    pub positions: [usize; 6],
}

impl JointResult {
    /// The joint objective value `(1/K) Σ λ_k · mean_k` over active tasks.
    pub fn combined(&self, active: &TaskSet, weights: &[f64; 6]) -> f64 {
        let k = active.count() as f64;
        active
            .iter()
            .map(|t| weights[t.index()] * self.mean_losses[t.index()])
            .sum::<f64>()
            / k
    }
}

/// Copies the given rows of `m` into a dense sub-matrix.
fn take_rows(m: &Mat, rows: impl Iterator<Item = usize>) -> Mat {
    let picked: Vec<usize> = rows.collect();
    let mut out = Mat::zeros(picked.len(), m.cols);
    for (i, &r) in picked.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(r));
    }
    out
}

fn scatter_add_rows(dst: &mut Mat, src: &Mat, rows: impl Iterator<Item = usize>) {
    for (i, r) in rows.enumerate() {
        for (d, &s) in dst.row_mut(r).iter_mut().zip(src.row(i)) {
            *d += s;
        }
    }
}

impl SeqModel {
    /// Forward-only joint losses (the function finite differences probe).
    pub fn joint_forward(
        &self,
        items: &[TrainItem],
        active: &TaskSet,
        weights: &[f64; 6],
        specs: &BTreeMap<TaskId, LossSpec>,
    ) -> Result<JointResult, ModelError> {
        self.joint_pass(items, active, weights, specs, None)
    }

    /// Joint losses plus exact gradients for every parameter.
    pub fn joint_backward(
        &self,
        items: &[TrainItem],
        active: &TaskSet,
        weights: &[f64; 6],
        specs: &BTreeMap<TaskId, LossSpec>,
    ) -> Result<(JointResult, ModelParams), ModelError> {
        let mut grads = ModelParams::zeros(&self.config);
        let result = self.joint_pass(items, active, weights, specs, Some(&mut grads))?;
        Ok((result, grads))
    }

    fn validate_items(
        &self,
        items: &[TrainItem],
        active: &TaskSet,
        counts: &mut [usize; 6],
    ) -> Result<(), ModelError> {
        let aux_active = active.count() > usize::from(active.contains(TaskId::Pe));
        for item in items {
            self.check_ids(&item.enc_ids)?;
            self.check_ids(&item.dec_target)?;
            if item.dec_target.len() < 2 || item.dec_target[0] != BOS_ID {
                return Err(ModelError::Shape(
                    "decoder target must be <bos> … <eos>".into(),
                ));
            }
            let enc_len = item.enc_ids.len();
            let pe_len = item.dec_target.len() - 2;
            if active.contains(TaskId::Pe) {
                counts[TaskId::Pe.index()] += item.dec_target.len() - 1;
            }
            if !aux_active {
                continue;
            }
            let labels = item.labels.as_ref().ok_or_else(|| {
                ModelError::Shape("active subtasks require item labels".into())
            })?;
            for (task, len) in [
                (TaskId::Pos, labels.pos.len()),
                (TaskId::Ner, labels.ner.len()),
                (TaskId::KtEnc, labels.kt_enc.len()),
            ] {
                if active.contains(task) {
                    if len != enc_len {
                        return Err(ModelError::Shape(format!(
                            "{} labels cover {len} of {enc_len} encoder positions",
                            task.name()
                        )));
                    }
                    counts[task.index()] += len;
                }
            }
            if active.contains(TaskId::KtDec) {
                if labels.kt_dec.len() != pe_len {
                    return Err(ModelError::Shape(format!(
                        "kt_dec labels cover {} of {pe_len} pe positions",
                        labels.kt_dec.len()
                    )));
                }
                counts[TaskId::KtDec.index()] += pe_len;
            }
            if active.contains(TaskId::Mlm) {
                self.check_ids(&labels.mlm_input)?;
                if labels.mlm_input.len() != enc_len
                    || labels.mlm_positions.len() != labels.mlm_targets.len()
                    || labels.mlm_positions.iter().any(|&p| p >= enc_len)
                {
                    return Err(ModelError::Shape("inconsistent mlm masking".into()));
                }
                counts[TaskId::Mlm.index()] += labels.mlm_positions.len();
            }
        }
        Ok(())
    }

    fn joint_pass(
        &self,
        items: &[TrainItem],
        active: &TaskSet,
        weights: &[f64; 6],
        specs: &BTreeMap<TaskId, LossSpec>,
        mut grads: Option<&mut ModelParams>,
    ) -> Result<JointResult, ModelError> {
        if active.count() == 0 {
            return Err(ModelError::Shape("no active tasks".into()));
        }
        let mut counts = [0usize; 6];
        self.validate_items(items, active, &mut counts)?;

        let spec_for = |task: TaskId| -> Result<&LossSpec, ModelError> {
            specs.get(&task).ok_or_else(|| {
                ModelError::Shape(format!("no loss spec for task {}", task.name()))
            })
        };
        let k = active.count() as f64;
        let scale_for = |task: TaskId| -> f64 {
            let n = counts[task.index()];
            if n == 0 {
                0.0
            } else {
                weights[task.index()] / (k * n as f64)
            }
        };

        let mut sums = [0.0f64; 6];
        let params = &self.params;
        let cfg = &self.config;

        for item in items {
            let (h, enc_cache) = net::encoder_forward(params, cfg, &item.enc_ids);
            let enc_len = h.rows;
            let mut d_enc_h = Mat::zeros(enc_len, cfg.d_h);

            // encoder-side heads over the task-shared layer
            let enc_heads: Vec<TaskId> = [TaskId::Pos, TaskId::Ner, TaskId::KtEnc]
                .into_iter()
                .filter(|t| active.contains(*t))
                .collect();
            if !enc_heads.is_empty() {
                let labels = item.labels.as_ref().expect("validated");
                let hs = linear_forward(&params.shared, &h);
                let mut d_hs = Mat::zeros(enc_len, cfg.d_h_s);
                for task in enc_heads {
                    let (head, tags) = match task {
                        TaskId::Pos => (&params.head_pos, &labels.pos),
                        TaskId::Ner => (&params.head_ner, &labels.ner),
                        _ => (&params.head_kt_enc, &labels.kt_enc),
                    };
                    let spec = spec_for(task)?;
                    let scale = scale_for(task);
                    let logits = linear_forward(head, &hs);
                    let mut d_logits = Mat::zeros(logits.rows, logits.cols);
                    for p in 0..enc_len {
                        let (loss, grad) = spec.loss_and_grad(logits.row(p), tags[p] as usize)?;
                        sums[task.index()] += loss;
                        for (slot, g) in d_logits.row_mut(p).iter_mut().zip(grad) {
                            *slot = g * scale;
                        }
                    }
                    if let Some(g) = grads.as_deref_mut() {
                        let ghead = match task {
                            TaskId::Pos => &mut g.head_pos,
                            TaskId::Ner => &mut g.head_ner,
                            _ => &mut g.head_kt_enc,
                        };
                        d_hs.add_assign(&linear_backward(head, ghead, &hs, &d_logits));
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    d_enc_h.add_assign(&linear_backward(&params.shared, &mut g.shared, &h, &d_hs));
                }
            }

            // decoder: main generation loss and the decoder KT head
            if active.contains(TaskId::Pe) || active.contains(TaskId::KtDec) {
                let dec_input = &item.dec_target[..item.dec_target.len() - 1];
                let (states, dec_cache) = net::decoder_forward(params, cfg, &h, dec_input);
                let mut d_states = Mat::zeros(states.rows, states.cols);

                if active.contains(TaskId::Pe) {
                    let spec = spec_for(TaskId::Pe)?;
                    let scale = scale_for(TaskId::Pe);
                    let logits = net::output_logits(params, &states);
                    let mut d_logits = Mat::zeros(logits.rows, logits.cols);
                    for t in 0..states.rows {
                        let target = item.dec_target[t + 1] as usize;
                        let (loss, grad) = spec.loss_and_grad(logits.row(t), target)?;
                        sums[TaskId::Pe.index()] += loss;
                        for (slot, g) in d_logits.row_mut(t).iter_mut().zip(grad) {
                            *slot = g * scale;
                        }
                    }
                    if let Some(g) = grads.as_deref_mut() {
                        d_states.add_assign(&net::output_logits_backward(
                            params, &states, &d_logits, g,
                        ));
                    }
                }

                if active.contains(TaskId::KtDec) {
                    let labels = item.labels.as_ref().expect("validated");
                    let pe_len = item.dec_target.len() - 2;
                    // pe token j is the decoder input at position j+1
                    let sub = take_rows(&states, 1..=pe_len);
                    let spec = spec_for(TaskId::KtDec)?;
                    let scale = scale_for(TaskId::KtDec);
                    let logits = linear_forward(&params.head_kt_dec, &sub);
                    let mut d_logits = Mat::zeros(logits.rows, logits.cols);
                    for (j, &tag) in labels.kt_dec.iter().enumerate() {
                        let (loss, grad) = spec.loss_and_grad(logits.row(j), tag as usize)?;
                        sums[TaskId::KtDec.index()] += loss;
                        for (slot, g) in d_logits.row_mut(j).iter_mut().zip(grad) {
                            *slot = g * scale;
                        }
                    }
                    if let Some(g) = grads.as_deref_mut() {
                        let d_sub =
                            linear_backward(&params.head_kt_dec, &mut g.head_kt_dec, &sub, &d_logits);
                        scatter_add_rows(&mut d_states, &d_sub, 1..=pe_len);
                    }
                }

                if let Some(g) = grads.as_deref_mut() {
                    d_enc_h.add_assign(&net::decoder_backward(
                        params, cfg, &dec_cache, enc_len, &d_states, g,
                    ));
                }
            }

            if let Some(g) = grads.as_deref_mut() {
                net::encoder_backward(params, cfg, &enc_cache, &d_enc_h, g);
            }

            // second encoder pass over the masked copy for MLM
            if active.contains(TaskId::Mlm) {
                let labels = item.labels.as_ref().expect("validated");
                if !labels.mlm_positions.is_empty() {
                    let (h_m, enc_cache_m) = net::encoder_forward(params, cfg, &labels.mlm_input);
                    let hs_m = linear_forward(&params.shared, &h_m);
                    let sub = take_rows(&hs_m, labels.mlm_positions.iter().copied());
                    let spec = spec_for(TaskId::Mlm)?;
                    let scale = scale_for(TaskId::Mlm);
                    let logits = linear_forward(&params.head_mlm, &sub);
                    let mut d_logits = Mat::zeros(logits.rows, logits.cols);
                    for (j, &target) in labels.mlm_targets.iter().enumerate() {
                        let (loss, grad) = spec.loss_and_grad(logits.row(j), target as usize)?;
                        sums[TaskId::Mlm.index()] += loss;
                        for (slot, g) in d_logits.row_mut(j).iter_mut().zip(grad) {
                            *slot = g * scale;
                        }
                    }
                    if let Some(g) = grads.as_deref_mut() {
                        let d_sub =
                            linear_backward(&params.head_mlm, &mut g.head_mlm, &sub, &d_logits);
                        let mut d_hs_m = Mat::zeros(h_m.rows, cfg.d_h_s);
                        scatter_add_rows(&mut d_hs_m, &d_sub, labels.mlm_positions.iter().copied());
                        let d_h_m =
                            linear_backward(&params.shared, &mut g.shared, &h_m, &d_hs_m);
                        net::encoder_backward(params, cfg, &enc_cache_m, &d_h_m, g);
                    }
                }
            }
        }

        let mut mean_losses = [0.0f64; 6];
        for t in TaskId::ALL {
            let i = t.index();
            if counts[i] > 0 {
                mean_losses[i] = sums[i] / counts[i] as f64;
            }
        }
        Ok(JointResult { mean_losses, positions: counts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::assign_losses;
    use crate::align::TaskClassCounts;
    use crate::corpus::EOS_ID;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> super::super::ModelConfig {
        super::super::ModelConfig {
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

    fn specs() -> BTreeMap<TaskId, LossSpec> {
        let counts = TaskClassCounts {
            pos: vec![4; 9],
            ner: vec![4; 3],
            kt_enc: vec![10, 5],
            kt_dec: vec![3, 3],
        };
        assign_losses(&counts, 2.0)
    }

    pub(crate) fn random_item(rng: &mut ChaCha8Rng, cfg: &super::super::ModelConfig) -> TrainItem {
        let enc_len = rng.random_range(5..10);
        let pe_len = rng.random_range(2..5);
        let tok = |rng: &mut ChaCha8Rng| rng.random_range(6..cfg.vocab_size as u32);
        let enc_ids: Vec<u32> = (0..enc_len).map(|_| tok(rng)).collect();
        let mut dec_target = vec![BOS_ID];
        dec_target.extend((0..pe_len).map(|_| tok(rng)));
        dec_target.push(EOS_ID);

        let n_masked = 1 + enc_len / 8;
        let mut mlm_positions: Vec<usize> =
            rand::seq::index::sample(rng, enc_len, n_masked).into_iter().collect();
        mlm_positions.sort_unstable();
        let mut mlm_input = enc_ids.clone();
        let mut mlm_targets = Vec::new();
        for &p in &mlm_positions {
            mlm_targets.push(mlm_input[p]);
            mlm_input[p] = crate::corpus::MASK_ID;
        }

        TrainItem {
            labels: Some(ItemLabels {
                pos: (0..enc_len).map(|_| rng.random_range(0..cfg.c_pos as u32)).collect(),
                ner: (0..enc_len).map(|_| rng.random_range(0..cfg.c_ner as u32)).collect(),
                kt_enc: (0..enc_len).map(|_| rng.random_range(0..2)).collect(),
                kt_dec: (0..pe_len).map(|_| rng.random_range(0..2)).collect(),
                mlm_input,
                mlm_positions,
                mlm_targets,
            }),
            enc_ids,
            dec_target,
        }
    }

    #[test]
    fn losses_are_finite_and_positive_at_init() {
        let model = super::super::SeqModel::new(tiny_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let items: Vec<TrainItem> = (0..3).map(|_| random_item(&mut rng, &model.config)).collect();
        let r = model
            .joint_forward(&items, &TaskSet::all(), &[1.0; 6], &specs())
            .unwrap();
        for t in TaskId::ALL {
            assert!(r.mean_losses[t.index()].is_finite());
            assert!(r.mean_losses[t.index()] > 0.0, "{} loss", t.name());
            assert!(r.positions[t.index()] > 0);
        }
        let combined = r.combined(&TaskSet::all(), &[1.0; 6]);
        assert!(combined.is_finite() && combined > 0.0);
    }

    #[test]
    fn all_unit_weights_equal_unweighted_mean() {
        let model = super::super::SeqModel::new(tiny_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items: Vec<TrainItem> = (0..2).map(|_| random_item(&mut rng, &model.config)).collect();
        let r = model
            .joint_forward(&items, &TaskSet::all(), &[1.0; 6], &specs())
            .unwrap();
        let mean: f64 = r.mean_losses.iter().sum::<f64>() / 6.0;
        assert!((r.combined(&TaskSet::all(), &[1.0; 6]) - mean).abs() < 1e-12);
    }

    #[test]
    fn joint_gradient_is_the_weighted_sum_of_task_gradients() {
        let model = super::super::SeqModel::new(tiny_config(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let items: Vec<TrainItem> = (0..2).map(|_| random_item(&mut rng, &model.config)).collect();
        let sp = specs();
        let active = TaskSet::all();

        let lambda = [1.3, 0.7, 0.4, 1.9, 0.2, 1.1];
        let (_, joint) = model.joint_backward(&items, &active, &lambda, &sp).unwrap();

        let mut summed = vec![0.0; joint.n_params()];
        for task in TaskId::ALL {
            let mut one_hot = [0.0; 6];
            one_hot[task.index()] = 1.0;
            let (_, g) = model.joint_backward(&items, &active, &one_hot, &sp).unwrap();
            for (acc, v) in summed.iter_mut().zip(g.to_flat()) {
                *acc += lambda[task.index()] * v;
            }
        }
        for (a, b) in joint.to_flat().iter().zip(&summed) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weight_detaches_a_task_head() {
        let model = super::super::SeqModel::new(tiny_config(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let items = vec![random_item(&mut rng, &model.config)];
        let mut weights = [1.0; 6];
        weights[TaskId::Pos.index()] = 0.0;
        let (_, g) = model
            .joint_backward(&items, &TaskSet::all(), &weights, &specs())
            .unwrap();
        assert!(g.head_pos.w.data.iter().all(|&v| v == 0.0));
        assert!(g.head_pos.b.iter().all(|&v| v == 0.0));
        // other heads still learn
        assert!(g.head_ner.w.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn unmasked_mlm_contributes_nothing() {
        let model = super::super::SeqModel::new(tiny_config(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut item = random_item(&mut rng, &model.config);
        {
            let labels = item.labels.as_mut().unwrap();
            labels.mlm_positions.clear();
            labels.mlm_targets.clear();
            labels.mlm_input = item.enc_ids.clone();
        }
        let (r, g) = model
            .joint_backward(&[item], &TaskSet::all(), &[1.0; 6], &specs())
            .unwrap();
        assert_eq!(r.mean_losses[TaskId::Mlm.index()], 0.0);
        assert_eq!(r.positions[TaskId::Mlm.index()], 0);
        assert!(g.head_mlm.w.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn main_only_items_need_no_labels() {
        let model = super::super::SeqModel::new(tiny_config(), 11).unwrap();
        let item = TrainItem {
            enc_ids: vec![6, 7, 8],
            dec_target: vec![BOS_ID, 9, 10, EOS_ID],
            labels: None,
        };
        let r = model
            .joint_forward(&[item], &TaskSet::main_only(), &[1.0; 6], &specs())
            .unwrap();
        assert!(r.mean_losses[TaskId::Pe.index()] > 0.0);
        assert_eq!(r.positions[TaskId::Pe.index()], 3);
    }

    #[test]
    fn every_parameter_gradient_matches_finite_differences() {
        let model = super::super::SeqModel::new(tiny_config(), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let items = vec![random_item(&mut rng, &model.config)];
        let sp = specs();
        let active = TaskSet::all();
        let weights = [1.0, 0.8, 1.2, 0.9, 1.1, 0.7];

        let (_, grads) = model.joint_backward(&items, &active, &weights, &sp).unwrap();
        let analytic = grads.to_flat();

        let h = 1e-4;
        let mut probe = model.clone();
        let base = model.params.to_flat();
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut flat = base.clone();
            flat[i] += h;
            probe.params.copy_from_flat(&flat);
            let up = probe
                .joint_forward(&items, &active, &weights, &sp)
                .unwrap()
                .combined(&active, &weights);
            flat[i] -= 2.0 * h;
            probe.params.copy_from_flat(&flat);
            let down = probe
                .joint_forward(&items, &active, &weights, &sp)
                .unwrap()
                .combined(&active, &weights);
            let fd = (up - down) / (2.0 * h);
            let diff = (analytic[i] - fd).abs();
            let denom = analytic[i].abs().max(fd.abs());
            let rel = if denom > 0.0 { diff / denom } else { 0.0 };
            if diff > 1e-8 {
                assert!(rel <= 1e-3, "param {i}: analytic {} vs fd {fd}", analytic[i]);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn labels_required_when_subtasks_active() {
        let model = super::super::SeqModel::new(tiny_config(), 11).unwrap();
        let item = TrainItem {
            enc_ids: vec![6, 7, 8],
            dec_target: vec![BOS_ID, 9, EOS_ID],
            labels: None,
        };
        assert!(model
            .joint_forward(&[item], &TaskSet::all(), &[1.0; 6], &specs())
            .is_err());
    }
}
