//! Ablation harness: curriculum arms, multi-task arms, and the DWA on/off
//! comparison, each scored with TER/BLEU on a held-out corpus.
//!
//! Within one seed, the MLS and DWA suites share a single Steps-1–3 base
//! model and only re-run the fine-tune stage per arm, so arm differences
//! are exactly the fine-tune configuration.

use crate::corpus::Stage;
use crate::tasks::{TaskId, TaskSet};

use super::{
    eval_corpus, evaluate_model, run_plan, stage_corpus, stage_number, MlsOptions, TrainConfig,
    TrainError, TrainState,
};

/// Curriculum ablation arms (all fine-tune without subtasks, isolating the
/// staging).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtsArm {
    Full,
    WithoutStep2,
    WithoutStep3,
    FineTuneOnly,
}

impl CtsArm {
    pub const ALL: [CtsArm; 4] =
        [CtsArm::Full, CtsArm::WithoutStep2, CtsArm::WithoutStep3, CtsArm::FineTuneOnly];

    pub fn name(self) -> &'static str {
        match self {
            CtsArm::Full => "full_cts",
            CtsArm::WithoutStep2 => "wo_step2",
            CtsArm::WithoutStep3 => "wo_step3",
            CtsArm::FineTuneOnly => "finetune_only",
        }
    }

    fn stage_numbers(self) -> &'static [usize] {
        match self {
            CtsArm::Full => &[1, 2, 3, 4],
            CtsArm::WithoutStep2 => &[1, 3, 4],
            CtsArm::WithoutStep3 => &[1, 2, 4],
            CtsArm::FineTuneOnly => &[4],
        }
    }
}

/// Fine-tune ablation arms over the subtask set and DWA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlsArm {
    Vanilla,
    WithPos,
    WithNer,
    WithMlm,
    WithKt,
    FullNoDwa,
    FullWithDwa,
}

impl MlsArm {
    pub const ALL: [MlsArm; 7] = [
        MlsArm::Vanilla,
        MlsArm::WithPos,
        MlsArm::WithNer,
        MlsArm::WithMlm,
        MlsArm::WithKt,
        MlsArm::FullNoDwa,
        MlsArm::FullWithDwa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MlsArm::Vanilla => "vanilla",
            MlsArm::WithPos => "with_pos",
            MlsArm::WithNer => "with_ner",
            MlsArm::WithMlm => "with_mlm",
            MlsArm::WithKt => "with_kt",
            MlsArm::FullNoDwa => "mls_wo_dwa",
            MlsArm::FullWithDwa => "mls_w_dwa",
        }
    }

    pub fn options(self) -> MlsOptions {
        let single = |task: TaskId| MlsOptions {
            tasks: TaskSet::main_only().with(task, true),
            use_dwa: true,
        };
        match self {
            MlsArm::Vanilla => MlsOptions::vanilla(),
            MlsArm::WithPos => single(TaskId::Pos),
            MlsArm::WithNer => single(TaskId::Ner),
            MlsArm::WithMlm => single(TaskId::Mlm),
            MlsArm::WithKt => MlsOptions {
                tasks: TaskSet::main_only().with(TaskId::KtEnc, true).with(TaskId::KtDec, true),
                use_dwa: true,
            },
            MlsArm::FullNoDwa => MlsOptions::full_without_dwa(),
            MlsArm::FullWithDwa => MlsOptions::full(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub ter: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub suite: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("suite,arm,seed,ter,bleu\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4}\n",
                self.suite, row.arm, row.seed, row.ter, row.bleu
            ));
        }
        out
    }

    fn arm_values(&self, arm: &str, pick: impl Fn(&AblationRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.arm == arm).map(pick).collect()
    }

    pub fn median_ter(&self, arm: &str) -> Option<f64> {
        median(self.arm_values(arm, |r| r.ter))
    }

    pub fn median_bleu(&self, arm: &str) -> Option<f64> {
        median(self.arm_values(arm, |r| r.bleu))
    }

    /// Human-readable medians table, arms in first-seen order.
    pub fn table(&self) -> String {
        let mut arms: Vec<String> = Vec::new();
        for row in &self.rows {
            if !arms.contains(&row.arm) {
                arms.push(row.arm.clone());
            }
        }
        let mut out = format!("{:<16} {:>8} {:>8}\n", "arm", "TER", "BLEU");
        for arm in arms {
            out.push_str(&format!(
                "{:<16} {:>8.2} {:>8.2}\n",
                arm,
                self.median_ter(&arm).unwrap_or(f64::NAN),
                self.median_bleu(&arm).unwrap_or(f64::NAN),
            ));
        }
        out
    }
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

fn arm_config(cfg: &TrainConfig, seed: u64, stage_numbers: &[usize]) -> TrainConfig {
    let mut arm = cfg.clone();
    arm.data_seed = seed;
    arm.stages = cfg
        .stages
        .iter()
        .filter(|s| stage_numbers.contains(&stage_number(s.stage)))
        .copied()
        .collect();
    arm
}

/// Curriculum ablation: each arm trains its stage subset end to end and is
/// scored on the arm's held-out corpus.
pub fn run_cts_suite(cfg: &TrainConfig, seeds: &[u64]) -> Result<AblationReport, TrainError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for arm in CtsArm::ALL {
            let arm_cfg = arm_config(cfg, seed, arm.stage_numbers());
            let (state, _) = run_plan(&arm_cfg, &MlsOptions::vanilla(), None)?;
            let eval = eval_corpus(&arm_cfg)?;
            let report = evaluate_model(&state.model, &state.vocab, &eval)?;
            rows.push(AblationRow {
                arm: arm.name().to_string(),
                seed,
                ter: report.ter,
                bleu: report.bleu,
            });
        }
    }
    Ok(AblationReport { suite: "cts".into(), rows })
}

/// Trains the shared Steps-1–3 base for one seed.
fn cts_base(cfg: &TrainConfig, seed: u64) -> Result<(TrainConfig, TrainState), TrainError> {
    let base_cfg = arm_config(cfg, seed, &[1, 2, 3]);
    let mut state = TrainState::new(&base_cfg)?;
    for stage_cfg in &base_cfg.stages {
        let corpus = stage_corpus(&base_cfg, stage_cfg)?;
        state.run_stage(stage_cfg, &corpus, &MlsOptions::vanilla(), None)?;
    }
    Ok((arm_config(cfg, seed, &[1, 2, 3, 4]), state))
}

/// Fine-tune arm comparison from a shared per-seed curriculum base.
pub fn run_finetune_arms(
    cfg: &TrainConfig,
    seeds: &[u64],
    arms: &[MlsArm],
    suite: &str,
) -> Result<AblationReport, TrainError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let (full_cfg, base) = cts_base(cfg, seed)?;
        let finetune_cfg = *full_cfg
            .stages
            .iter()
            .find(|s| s.stage == Stage::FineTune)
            .ok_or_else(|| TrainError::Config("no fine-tune stage configured".into()))?;
        let corpus = stage_corpus(&full_cfg, &finetune_cfg)?;
        let eval = eval_corpus(&full_cfg)?;
        for &arm in arms {
            let mut state = base.clone();
            state.run_stage(&finetune_cfg, &corpus, &arm.options(), None)?;
            let report = evaluate_model(&state.model, &state.vocab, &eval)?;
            rows.push(AblationRow {
                arm: arm.name().to_string(),
                seed,
                ter: report.ter,
                bleu: report.bleu,
            });
        }
    }
    Ok(AblationReport { suite: suite.into(), rows })
}

/// Subtask ablation: Vanilla, each subtask alone, and the full set with
/// and without DWA, all from the same curriculum base.
pub fn run_mls_suite(cfg: &TrainConfig, seeds: &[u64]) -> Result<AblationReport, TrainError> {
    run_finetune_arms(cfg, seeds, &MlsArm::ALL, "mls")
}

/// DWA on/off over the full subtask set.
pub fn run_dwa_suite(cfg: &TrainConfig, seeds: &[u64]) -> Result<AblationReport, TrainError> {
    run_finetune_arms(cfg, seeds, &[MlsArm::FullWithDwa, MlsArm::FullNoDwa], "dwa")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians_of_odd_and_even_counts() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn arm_configs_filter_stages() {
        let cfg = TrainConfig::default();
        let arm = arm_config(&cfg, 7, CtsArm::WithoutStep3.stage_numbers());
        let numbers: Vec<usize> = arm.stages.iter().map(|s| stage_number(s.stage)).collect();
        assert_eq!(numbers, vec![1, 2, 4]);
        assert_eq!(arm.data_seed, 7);
    }

    #[test]
    fn report_is_byte_stable() {
        let report = AblationReport {
            suite: "cts".into(),
            rows: vec![
                AblationRow { arm: "full_cts".into(), seed: 42, ter: 10.125, bleu: 80.9 },
                AblationRow { arm: "full_cts".into(), seed: 43, ter: 11.0, bleu: 79.0 },
            ],
        };
        assert_eq!(report.csv(), report.csv());
        assert!(report.csv().contains("cts,full_cts,42,10.1250,80.9000\n"));
        assert_eq!(report.median_ter("full_cts"), Some(10.5625));
        assert!(report.table().contains("full_cts"));
    }

    #[test]
    fn single_subtask_arms_activate_one_task() {
        let opts = MlsArm::WithPos.options();
        assert_eq!(opts.tasks.count(), 2);
        assert!(opts.tasks.contains(TaskId::Pe));
        assert!(opts.tasks.contains(TaskId::Pos));
        let kt = MlsArm::WithKt.options();
        assert_eq!(kt.tasks.count(), 3);
    }
}
