//! Flat `key = value` training configuration.
//!
//! Every key has a default; unknown keys are errors. `stages` selects the
//! curriculum (`1,2,3,4`; the fine-tune stage 4 is mandatory), and
//! `stage.N.*` keys override per-stage epochs, batch size, corpus size and
//! learning rate.

use std::collections::BTreeMap;

use crate::corpus::Stage;

use super::optim::OptimConfig;
use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub d_h: usize,
    pub d_h_s: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelDims {
    fn default() -> ModelDims {
        ModelDims { d_h: 64, d_h_s: 64, layers: 2, heads: 2, d_ff: 128, max_len: 48 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_examples: usize,
    pub lr: Option<f64>,
}

impl StageConfig {
    /// Data-volume gradient across the curriculum: big news-style corpora
    /// early, a small fine-tune set last.
    pub fn default_for(stage: Stage) -> StageConfig {
        let (epochs, batch_size, n_examples) = match stage {
            Stage::Step1 => (2, 32, 3000),
            Stage::Step2 => (2, 32, 2200),
            Stage::Step3 => (2, 32, 1200),
            Stage::FineTune => (30, 16, 200),
        };
        StageConfig { stage, epochs, batch_size, n_examples, lr: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelDims,
    pub optim: OptimConfig,
    pub stages: Vec<StageConfig>,
    pub data_seed: u64,
    pub dwa_temperature: f64,
    pub dwa_include_main: bool,
    pub loss_gamma: f64,
    pub eval_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            model: ModelDims::default(),
            optim: OptimConfig::default(),
            stages: Stage::ALL.iter().map(|&s| StageConfig::default_for(s)).collect(),
            data_seed: 42,
            dwa_temperature: crate::dwa::DEFAULT_TEMPERATURE,
            dwa_include_main: true,
            loss_gamma: 2.0,
            eval_examples: 500,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<TrainConfig, TrainError> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(TrainError::Config(format!("duplicate key {key}")));
            }
        }
        TrainConfig::from_pairs(&pairs)
    }

    fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<TrainConfig, TrainError> {
        let mut cfg = TrainConfig::default();
        let mut stage_overrides: BTreeMap<usize, StageConfig> = cfg
            .stages
            .iter()
            .map(|s| (stage_number(s.stage), *s))
            .collect();
        let mut selected: Vec<usize> = vec![1, 2, 3, 4];

        for (key, value) in pairs {
            let bad = |what: &str| {
                TrainError::Config(format!("bad value for {key}: {value} ({what})"))
            };
            match key.as_str() {
                "stages" => {
                    selected = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>().map_err(|_| bad("stage number")))
                        .collect::<Result<_, _>>()?;
                }
                "model.d_h" => cfg.model.d_h = parse_num(value, &bad)?,
                "model.d_h_s" => cfg.model.d_h_s = parse_num(value, &bad)?,
                "model.layers" => cfg.model.layers = parse_num(value, &bad)?,
                "model.heads" => cfg.model.heads = parse_num(value, &bad)?,
                "model.d_ff" => cfg.model.d_ff = parse_num(value, &bad)?,
                "model.max_len" => cfg.model.max_len = parse_num(value, &bad)?,
                "opt.lr" => cfg.optim.lr = parse_num(value, &bad)?,
                "opt.beta1" => cfg.optim.beta1 = parse_num(value, &bad)?,
                "opt.beta2" => cfg.optim.beta2 = parse_num(value, &bad)?,
                "opt.eps" => cfg.optim.eps = parse_num(value, &bad)?,
                "opt.weight_decay" => cfg.optim.weight_decay = parse_num(value, &bad)?,
                "opt.warmup" => cfg.optim.warmup_steps = parse_num(value, &bad)?,
                "data.seed" => cfg.data_seed = parse_num(value, &bad)?,
                "dwa.T" => cfg.dwa_temperature = parse_num(value, &bad)?,
                "dwa.include_main" => {
                    cfg.dwa_include_main = match value.as_str() {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad("expected true or false")),
                    }
                }
                "loss.gamma" => cfg.loss_gamma = parse_num(value, &bad)?,
                "eval.examples" => cfg.eval_examples = parse_num(value, &bad)?,
                _ => {
                    if let Some(rest) = key.strip_prefix("stage.") {
                        let (num, field) = rest.split_once('.').ok_or_else(|| {
                            TrainError::Config(format!("unknown key {key}"))
                        })?;
                        let n: usize =
                            num.parse().map_err(|_| bad("stage number"))?;
                        let stage = stage_from_number(n)
                            .ok_or_else(|| bad("stage must be 1..4"))?;
                        let entry = stage_overrides
                            .entry(n)
                            .or_insert_with(|| StageConfig::default_for(stage));
                        match field {
                            "epochs" => entry.epochs = parse_num(value, &bad)?,
                            "batch_size" => entry.batch_size = parse_num(value, &bad)?,
                            "examples" => entry.n_examples = parse_num(value, &bad)?,
                            "lr" => entry.lr = Some(parse_num(value, &bad)?),
                            _ => return Err(TrainError::Config(format!("unknown key {key}"))),
                        }
                    } else {
                        return Err(TrainError::Config(format!("unknown key {key}")));
                    }
                }
            }
        }

        let mut stages = Vec::new();
        let mut prev = 0usize;
        for n in selected {
            if n <= prev {
                return Err(TrainError::Config(
                    "stages must be strictly increasing".into(),
                ));
            }
            prev = n;
            let stage = stage_from_number(n)
                .ok_or_else(|| TrainError::Config(format!("no stage {n}")))?;
            stages.push(
                stage_overrides
                    .get(&n)
                    .copied()
                    .unwrap_or_else(|| StageConfig::default_for(stage)),
            );
        }
        if stages.last().map(|s| s.stage) != Some(Stage::FineTune) {
            return Err(TrainError::Config(
                "every plan must end with the fine-tune stage (4)".into(),
            ));
        }
        for s in &stages {
            if s.epochs == 0 || s.batch_size == 0 || s.n_examples == 0 {
                return Err(TrainError::Config(format!(
                    "stage {} needs positive epochs/batch_size/examples",
                    stage_number(s.stage)
                )));
            }
        }
        cfg.stages = stages;
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(
    value: &str,
    bad: &impl Fn(&str) -> TrainError,
) -> Result<T, TrainError> {
    value.parse().map_err(|_| bad("not a number"))
}

pub fn stage_number(stage: Stage) -> usize {
    match stage {
        Stage::Step1 => 1,
        Stage::Step2 => 2,
        Stage::Step3 => 3,
        Stage::FineTune => 4,
    }
}

pub fn stage_from_number(n: usize) -> Option<Stage> {
    match n {
        1 => Some(Stage::Step1),
        2 => Some(Stage::Step2),
        3 => Some(Stage::Step3),
        4 => Some(Stage::FineTune),
        _ => None,
    }
}
