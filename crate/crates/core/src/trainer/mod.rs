//! Curriculum-stage orchestration, the joint multi-task training step,
//! checkpoint hand-off between stages, and the ablation harness.
//!
//! Steps 1–3 train the generation loss only, each over progressively
//! richer encoder inputs; the fine-tune stage activates the auxiliary
//! heads (when configured) with DWA re-weighting at every epoch boundary.
//! Parameters carry over between stages; optimizer moments reset.

mod ablation;
mod config;
mod optim;

pub use ablation::{
    run_cts_suite, run_dwa_suite, run_finetune_arms, run_mls_suite, AblationReport, AblationRow,
    CtsArm, MlsArm,
};
pub use config::{stage_from_number, stage_number, ModelDims, StageConfig, TrainConfig};
pub use optim::{AdamW, OptimConfig};

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::align::{build_task_batch, mask_mlm, TaskBatch, TaskClassCounts};
use crate::corpus::{
    assemble_stage_input, generate_synthetic_corpus, number_filter, ApeExample, CorpusError,
    GeneratorConfig, NerTag, PosTag, Stage, StageInput, Vocab,
};
use crate::dwa::{DwaError, DwaState};
use crate::losses::{assign_losses, LossSpec};
use crate::metrics::{evaluate, EvalReport, MetricError};
use crate::model::{
    Checkpoint, ItemLabels, JointResult, ModelConfig, ModelError, SeqModel, TrainItem,
};
use crate::tasks::{TaskId, TaskSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dwa(#[from] DwaError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training diverged: non-finite loss in {stage} epoch {epoch}")]
    Diverged { stage: &'static str, epoch: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// splitmix64-style mixing for derived seeds; all randomness in a run is a
/// pure function of the base seed and structural indices.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fine-tune behavior: which subtasks run and whether DWA re-weights them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlsOptions {
    pub tasks: TaskSet,
    pub use_dwa: bool,
}

impl MlsOptions {
    /// All five subtasks with DWA — the default fine-tune configuration.
    pub fn full() -> MlsOptions {
        MlsOptions { tasks: TaskSet::all(), use_dwa: true }
    }

    pub fn full_without_dwa() -> MlsOptions {
        MlsOptions { tasks: TaskSet::all(), use_dwa: false }
    }

    /// Generation loss only.
    pub fn vanilla() -> MlsOptions {
        MlsOptions { tasks: TaskSet::main_only(), use_dwa: false }
    }
}

/// One DWA update, for the training report.
#[derive(Debug, Clone, PartialEq)]
pub struct DwaTraceRow {
    pub epoch: usize,
    pub task: TaskId,
    pub omega: f64,
    pub lambda: f64,
}

/// Per-stage training record.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    /// Per-epoch mean loss per task (indexed by [`TaskId::index`]).
    pub epoch_means: Vec<[f64; 6]>,
    pub dwa_trace: Vec<DwaTraceRow>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanSummary {
    pub stages: Vec<StageSummary>,
}

impl PlanSummary {
    /// CSV of the DWA trajectory: `epoch,task,omega,lambda`.
    pub fn dwa_csv(&self) -> String {
        let mut out = String::from("epoch,task,omega,lambda\n");
        for stage in &self.stages {
            for row in &stage.dwa_trace {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6}\n",
                    row.epoch,
                    row.task.name(),
                    row.omega,
                    row.lambda
                ));
            }
        }
        out
    }
}

/// Pre-assembled stage inputs plus (for fine-tuning) static subtask labels.
struct StageData {
    inputs: Vec<StageInput>,
    batches: Option<Vec<TaskBatch>>,
    label_seed: u64,
}

impl StageData {
    fn prepare(
        corpus: &[ApeExample],
        stage: Stage,
        vocab: &Vocab,
        needs_labels: bool,
        label_seed: u64,
    ) -> Result<StageData, TrainError> {
        let mut inputs = Vec::with_capacity(corpus.len());
        for ex in corpus {
            inputs.push(assemble_stage_input(ex, stage, vocab)?);
        }
        let batches = if needs_labels {
            let mut b = Vec::with_capacity(corpus.len());
            for (i, (ex, si)) in corpus.iter().zip(&inputs).enumerate() {
                b.push(build_task_batch(ex, si, mix_seed(label_seed, i as u64))?);
            }
            Some(b)
        } else {
            None
        };
        Ok(StageData { inputs, batches, label_seed })
    }

    fn len(&self) -> usize {
        self.inputs.len()
    }

    /// Builds the training item for one example; the MLM mask is redrawn
    /// each epoch.
    fn item(&self, index: usize, epoch: usize, remask_mlm: bool) -> TrainItem {
        let si = &self.inputs[index];
        let labels = self.batches.as_ref().map(|batches| {
            let tb = &batches[index];
            let mlm = if remask_mlm {
                mask_mlm(
                    &si.encoder_ids,
                    mix_seed(self.label_seed, mix_seed(epoch as u64 + 1, index as u64)),
                )
            } else {
                tb.mlm.clone()
            };
            ItemLabels {
                pos: tb.pos_tags.clone(),
                ner: tb.ner_tags.clone(),
                kt_enc: tb.kt_enc.ids(),
                kt_dec: tb.kt_dec.ids(),
                mlm_input: mlm.input_ids,
                mlm_positions: mlm.target_positions,
                mlm_targets: mlm.target_ids,
            }
        });
        TrainItem {
            enc_ids: si.encoder_ids.clone(),
            dec_target: si.decoder_target_ids.clone(),
            labels,
        }
    }
}

/// Everything a resumable training run carries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: SeqModel,
    pub vocab: Vocab,
    pub optim: AdamW,
    pub dwa: Option<DwaState>,
    pub stage_index: usize,
    pub epoch_in_stage: usize,
    pub base_seed: u64,
    pub dwa_temperature: f64,
    pub dwa_include_main: bool,
    pub loss_gamma: f64,
    base_optim: OptimConfig,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<TrainState, TrainError> {
        let vocab = Vocab::synthetic();
        let model_cfg = ModelConfig {
            d_h: cfg.model.d_h,
            d_h_s: cfg.model.d_h_s,
            layers: cfg.model.layers,
            heads: cfg.model.heads,
            d_ff: cfg.model.d_ff,
            vocab_size: vocab.size(),
            c_pos: PosTag::COUNT,
            c_ner: NerTag::COUNT,
            c_kt: 2,
            max_len: cfg.model.max_len,
        };
        let model = SeqModel::new(model_cfg, mix_seed(cfg.data_seed, 0x6d6f_6465))?;
        let optim = AdamW::new(cfg.optim, model.params.n_params());
        Ok(TrainState {
            model,
            vocab,
            optim,
            dwa: None,
            stage_index: 0,
            epoch_in_stage: 0,
            base_seed: cfg.data_seed,
            dwa_temperature: cfg.dwa_temperature,
            dwa_include_main: cfg.dwa_include_main,
            loss_gamma: cfg.loss_gamma,
            base_optim: cfg.optim,
        })
    }

    /// The tasks DWA re-weights: the active set, minus the main task when
    /// `dwa.include_main` is off.
    fn dwa_tasks(&self, active: &TaskSet) -> Vec<TaskId> {
        active
            .iter()
            .filter(|t| self.dwa_include_main || *t != TaskId::Pe)
            .collect()
    }

    /// Current λ per task: 1 everywhere until DWA has two epochs of
    /// history.
    pub fn task_weights(&self, active: &TaskSet) -> Result<[f64; 6], TrainError> {
        let mut weights = [1.0; 6];
        if let Some(dwa) = &self.dwa {
            for (i, task) in self.dwa_tasks(active).iter().enumerate() {
                weights[task.index()] = dwa.weight_for(i)?;
            }
        }
        Ok(weights)
    }

    /// One joint optimization step over a batch: all active losses, their
    /// gradients, one AdamW update.
    pub fn joint_step(
        &mut self,
        items: &[TrainItem],
        active: &TaskSet,
        specs: &BTreeMap<TaskId, LossSpec>,
    ) -> Result<JointResult, TrainError> {
        let weights = self.task_weights(active)?;
        let (result, grads) = self.model.joint_backward(items, active, &weights, specs)?;
        if result.mean_losses.iter().any(|l| !l.is_finite()) {
            return Err(TrainError::Diverged { stage: "step", epoch: self.epoch_in_stage });
        }
        let mut flat = self.model.params.to_flat();
        self.optim.step(&mut flat, &grads.to_flat())?;
        self.model.params.copy_from_flat(&flat);
        Ok(result)
    }

    /// Loss specs for a stage: the per-task assignment when subtask labels
    /// exist, otherwise plain cross-entropy for the generation task.
    fn stage_specs(&self, data: &StageData) -> BTreeMap<TaskId, LossSpec> {
        match &data.batches {
            Some(batches) => {
                let counts = TaskClassCounts::collect(batches.iter());
                assign_losses(&counts, self.loss_gamma)
            }
            None => {
                let mut map = BTreeMap::new();
                map.insert(TaskId::Pe, LossSpec::CrossEntropy);
                map
            }
        }
    }

    /// Trains one curriculum stage over `corpus`. Parameters come in from
    /// the previous stage untouched; the optimizer restarts (unless the
    /// state resumes mid-stage). With `out_dir`, a checkpoint is written
    /// after every epoch, so a later divergence still leaves the last good
    /// epoch on disk.
    pub fn run_stage(
        &mut self,
        stage_cfg: &StageConfig,
        corpus: &[ApeExample],
        mls: &MlsOptions,
        out_dir: Option<&Path>,
    ) -> Result<StageSummary, TrainError> {
        let stage = stage_cfg.stage;
        let stage_no = stage_number(stage) as u64;
        let is_finetune = stage == Stage::FineTune;
        let active = if is_finetune { mls.tasks } else { TaskSet::main_only() };
        if !active.contains(TaskId::Pe) {
            return Err(TrainError::Config("the generation task cannot be disabled".into()));
        }
        let needs_labels = is_finetune && active.count() > 1;

        let data = StageData::prepare(
            corpus,
            stage,
            &self.vocab,
            needs_labels,
            mix_seed(self.base_seed, mix_seed(stage_no, 0x6c61_6265)),
        )?;
        if data.len() == 0 {
            return Err(TrainError::Corpus(CorpusError::Data("empty stage corpus".into())));
        }
        let specs = self.stage_specs(&data);
        let remask = active.contains(TaskId::Mlm);

        let fresh_entry = self.epoch_in_stage == 0;
        if fresh_entry {
            let mut opt_cfg = self.base_optim;
            if let Some(lr) = stage_cfg.lr {
                opt_cfg.lr = lr;
            }
            self.optim = AdamW::new(opt_cfg, self.model.params.n_params());
            self.dwa = None;
            if is_finetune && mls.use_dwa {
                let k = self.dwa_tasks(&active).len();
                if k >= 2 {
                    self.dwa = Some(DwaState::new(k, self.dwa_temperature));
                }
            }
        }

        let mut summary = StageSummary { stage, epoch_means: Vec::new(), dwa_trace: Vec::new() };
        let start_epoch = self.epoch_in_stage;
        for epoch in start_epoch..stage_cfg.epochs {
            let order = shuffled_indices(
                data.len(),
                mix_seed(self.base_seed, mix_seed(stage_no, epoch as u64)),
            );
            let mut sums = [0.0f64; 6];
            let mut counts = [0usize; 6];
            for chunk in order.chunks(stage_cfg.batch_size.max(1)) {
                let items: Vec<TrainItem> =
                    chunk.iter().map(|&i| data.item(i, epoch, remask)).collect();
                let result = self.joint_step(&items, &active, &specs).map_err(|e| match e {
                    TrainError::Diverged { .. } => {
                        TrainError::Diverged { stage: stage.name(), epoch }
                    }
                    other => other,
                })?;
                for t in TaskId::ALL {
                    sums[t.index()] +=
                        result.mean_losses[t.index()] * result.positions[t.index()] as f64;
                    counts[t.index()] += result.positions[t.index()];
                }
            }
            let mut means = [0.0f64; 6];
            for t in TaskId::ALL {
                if counts[t.index()] > 0 {
                    means[t.index()] = sums[t.index()] / counts[t.index()] as f64;
                }
            }
            summary.epoch_means.push(means);

            if let Some(dwa) = &mut self.dwa {
                let dwa_tasks: Vec<TaskId> = active
                    .iter()
                    .filter(|t| self.dwa_include_main || *t != TaskId::Pe)
                    .collect();
                // subtask losses can underflow to zero once saturated
                let epoch_losses: Vec<f64> =
                    dwa_tasks.iter().map(|t| means[t.index()].max(1e-9)).collect();
                dwa.record_epoch(&epoch_losses)?;
                dwa.update_weights();
                for (i, task) in dwa_tasks.iter().enumerate() {
                    summary.dwa_trace.push(DwaTraceRow {
                        epoch,
                        task: *task,
                        omega: dwa.omegas()[i],
                        lambda: dwa.weights()[i],
                    });
                }
            }

            self.epoch_in_stage = epoch + 1;
            if let Some(dir) = out_dir {
                self.save(&dir.join("latest.ckpt"))?;
            }
        }

        self.stage_index += 1;
        self.epoch_in_stage = 0;
        if let Some(dir) = out_dir {
            self.save(&dir.join(format!("{}.ckpt", stage.name())))?;
        }
        Ok(summary)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        crate::model::write_checkpoint(path, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainState, TrainError> {
        TrainState::from_checkpoint(&crate::model::read_checkpoint(path)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        ckpt.set("train.stage_index", self.stage_index);
        ckpt.set("train.epoch_in_stage", self.epoch_in_stage);
        ckpt.set("train.base_seed", self.base_seed);
        ckpt.set("train.dwa_temperature", format_f64(self.dwa_temperature));
        ckpt.set("train.dwa_include_main", self.dwa_include_main);
        ckpt.set("train.loss_gamma", format_f64(self.loss_gamma));
        set_optim_config(&mut ckpt, "opt", &self.optim.config);
        set_optim_config(&mut ckpt, "opt_base", &self.base_optim);
        ckpt.set("opt.step", self.optim.step_count());
        let (m, v) = self.optim.moments();
        ckpt.push_record("opt.m", m.iter().map(|&x| x as f32).collect());
        ckpt.push_record("opt.v", v.iter().map(|&x| x as f32).collect());
        if let Some(dwa) = &self.dwa {
            ckpt.set("dwa.k", dwa.task_count());
            ckpt.set("dwa.weights", join_f64(dwa.weights()));
            ckpt.set("dwa.omegas", join_f64(dwa.omegas()));
            ckpt.set("dwa.epochs", dwa.epochs_recorded());
            for (i, epoch) in dwa.history().iter().enumerate() {
                ckpt.set(&format!("dwa.hist.{i}"), join_f64(epoch));
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<TrainState, TrainError> {
        let model = SeqModel::from_checkpoint(ckpt)?;
        let n = model.params.n_params();
        let optim_cfg = get_optim_config(ckpt, "opt")?;
        let base_optim = get_optim_config(ckpt, "opt_base")?;
        let step: u64 = ckpt.get_parsed("opt.step")?;
        let m = record_f64(ckpt, "opt.m", n)?;
        let v = record_f64(ckpt, "opt.v", n)?;
        let dwa = match ckpt.get("dwa.k") {
            Some(_) => {
                let k: usize = ckpt.get_parsed("dwa.k")?;
                let temperature: f64 = ckpt.get_parsed("train.dwa_temperature")?;
                let weights = split_f64(ckpt.get("dwa.weights").unwrap_or(""), k)?;
                let omegas = split_f64(ckpt.get("dwa.omegas").unwrap_or(""), k)?;
                let epochs: usize = ckpt.get_parsed("dwa.epochs")?;
                let mut history = Vec::with_capacity(epochs);
                for i in 0..epochs {
                    let line = ckpt
                        .get(&format!("dwa.hist.{i}"))
                        .ok_or_else(|| ModelError::Checkpoint(format!("missing dwa.hist.{i}")))?;
                    history.push(split_f64(line, k)?);
                }
                Some(DwaState::from_parts(temperature, history, weights, omegas))
            }
            None => None,
        };
        Ok(TrainState {
            vocab: Vocab::synthetic(),
            optim: AdamW::restore(optim_cfg, step, m, v),
            dwa,
            stage_index: ckpt.get_parsed("train.stage_index")?,
            epoch_in_stage: ckpt.get_parsed("train.epoch_in_stage")?,
            base_seed: ckpt.get_parsed("train.base_seed")?,
            dwa_temperature: ckpt.get_parsed("train.dwa_temperature")?,
            dwa_include_main: ckpt.get_parsed("train.dwa_include_main")?,
            loss_gamma: ckpt.get_parsed("train.loss_gamma")?,
            base_optim,
            model,
        })
    }
}

/// Shortest round-trip decimal form, so parse(format(x)) == x bitwise.
fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn set_optim_config(ckpt: &mut Checkpoint, prefix: &str, cfg: &OptimConfig) {
    ckpt.set(&format!("{prefix}.lr"), format_f64(cfg.lr));
    ckpt.set(&format!("{prefix}.beta1"), format_f64(cfg.beta1));
    ckpt.set(&format!("{prefix}.beta2"), format_f64(cfg.beta2));
    ckpt.set(&format!("{prefix}.eps"), format_f64(cfg.eps));
    ckpt.set(&format!("{prefix}.weight_decay"), format_f64(cfg.weight_decay));
    ckpt.set(&format!("{prefix}.warmup"), cfg.warmup_steps);
}

fn get_optim_config(ckpt: &Checkpoint, prefix: &str) -> Result<OptimConfig, TrainError> {
    Ok(OptimConfig {
        lr: ckpt.get_parsed(&format!("{prefix}.lr"))?,
        beta1: ckpt.get_parsed(&format!("{prefix}.beta1"))?,
        beta2: ckpt.get_parsed(&format!("{prefix}.beta2"))?,
        eps: ckpt.get_parsed(&format!("{prefix}.eps"))?,
        weight_decay: ckpt.get_parsed(&format!("{prefix}.weight_decay"))?,
        warmup_steps: ckpt.get_parsed(&format!("{prefix}.warmup"))?,
    })
}

fn record_f64(ckpt: &Checkpoint, name: &str, n: usize) -> Result<Vec<f64>, TrainError> {
    let rec = ckpt
        .record(name)
        .ok_or_else(|| ModelError::Checkpoint(format!("missing record {name}")))?;
    if rec.len() != n {
        return Err(ModelError::Checkpoint(format!(
            "record {name} has {} values, expected {n}",
            rec.len()
        ))
        .into());
    }
    Ok(rec.iter().map(|&v| v as f64).collect())
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|&v| format_f64(v)).collect::<Vec<_>>().join(",")
}

fn split_f64(text: &str, expect: usize) -> Result<Vec<f64>, TrainError> {
    let values: Vec<f64> = text
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| ModelError::Checkpoint(format!("bad float list: {text}")))?;
    if values.len() != expect {
        return Err(ModelError::Checkpoint(format!(
            "float list has {} entries, expected {expect}",
            values.len()
        ))
        .into());
    }
    Ok(values)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    order
}

/// The synthetic corpus for one curriculum stage: news-style data for
/// Steps 1–2, APE-style quadruples (with external MT) afterwards. The
/// number filter runs over everything, mirroring the data pipeline.
pub fn stage_corpus(
    cfg: &TrainConfig,
    stage_cfg: &StageConfig,
) -> Result<Vec<ApeExample>, TrainError> {
    let profile = match stage_cfg.stage {
        Stage::Step1 | Stage::Step2 => GeneratorConfig::news(),
        Stage::Step3 | Stage::FineTune => GeneratorConfig::ape(),
    };
    let seed = mix_seed(cfg.data_seed, stage_number(stage_cfg.stage) as u64);
    let mut corpus = generate_synthetic_corpus(seed, stage_cfg.n_examples, &profile)?;
    corpus.retain(number_filter);
    Ok(corpus)
}

/// A held-out APE-style evaluation corpus, disjoint from every stage seed.
pub fn eval_corpus(cfg: &TrainConfig) -> Result<Vec<ApeExample>, TrainError> {
    let seed = mix_seed(cfg.data_seed, 0x6576_616c);
    Ok(generate_synthetic_corpus(seed, cfg.eval_examples, &GeneratorConfig::ape())?)
}

/// Runs the whole curriculum plan; returns the trained state and the
/// per-stage summaries.
pub fn run_plan(
    cfg: &TrainConfig,
    mls: &MlsOptions,
    out_dir: Option<&Path>,
) -> Result<(TrainState, PlanSummary), TrainError> {
    let mut state = TrainState::new(cfg)?;
    let mut summary = PlanSummary::default();
    for stage_cfg in &cfg.stages {
        let corpus = stage_corpus(cfg, stage_cfg)?;
        summary.stages.push(state.run_stage(stage_cfg, &corpus, mls, out_dir)?);
    }
    if let Some(dir) = out_dir {
        state.save(&dir.join("final.ckpt"))?;
        std::fs::write(dir.join("dwa_trace.csv"), summary.dwa_csv())?;
    }
    Ok((state, summary))
}

/// Greedy-decodes the corpus in the fine-tune input format and scores
/// TER/BLEU against the post-edits.
pub fn evaluate_model(
    model: &SeqModel,
    vocab: &Vocab,
    corpus: &[ApeExample],
) -> Result<EvalReport, TrainError> {
    let mut hyps = Vec::with_capacity(corpus.len());
    let mut refs = Vec::with_capacity(corpus.len());
    for ex in corpus {
        let si = assemble_stage_input(ex, Stage::FineTune, vocab)?;
        let ids = model.greedy_decode(&si.encoder_ids, model.config.max_len)?;
        let tokens: Vec<String> = ids
            .iter()
            .map(|&id| vocab.token_of(id).unwrap_or(crate::corpus::UNK_TOKEN).to_string())
            .collect();
        hyps.push(tokens);
        refs.push(ex.pe.clone());
    }
    Ok(evaluate(&hyps, &refs)?)
}
