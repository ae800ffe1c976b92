//! Manual calibration probes (ignored by default; run with
//! `cargo test --test calibrate -- --ignored --nocapture`).

use ape_core::corpus::{generate_synthetic_corpus, GeneratorConfig, Stage};
use ape_core::trainer::{
    eval_corpus, evaluate_model, stage_corpus, MlsOptions, ModelDims, StageConfig, TrainConfig,
    TrainState,
};

fn overfit_config(lr: f64, epochs: usize) -> (TrainConfig, StageConfig) {
    let mut cfg = TrainConfig::default();
    cfg.optim.lr = lr;
    cfg.optim.warmup_steps = 30;
    let stage = StageConfig {
        stage: Stage::FineTune,
        epochs,
        batch_size: 8,
        n_examples: 8,
        lr: None,
    };
    cfg.stages = vec![stage];
    (cfg, stage)
}

#[test]
#[ignore]
fn probe_overfit() {
    for lr in [1e-3, 2e-3, 4e-3] {
        let start = std::time::Instant::now();
        let (cfg, stage) = overfit_config(lr, 300);
        let corpus = generate_synthetic_corpus(4242, 8, &GeneratorConfig::ape()).unwrap();
        let mut state = TrainState::new(&cfg).unwrap();
        let summary = state.run_stage(&stage, &corpus, &MlsOptions::full(), None).unwrap();
        let pe_first = summary.epoch_means.first().unwrap()[0];
        let pe_last = summary.epoch_means.last().unwrap()[0];
        let mut exact = 0;
        for ex in &corpus {
            let si = ape_core::corpus::assemble_stage_input(ex, Stage::FineTune, &state.vocab)
                .unwrap();
            let ids = state.model.greedy_decode(&si.encoder_ids, 48).unwrap();
            let toks: Vec<String> = ids
                .iter()
                .map(|&i| state.vocab.token_of(i).unwrap().to_string())
                .collect();
            if toks == ex.pe {
                exact += 1;
            }
        }
        println!(
            "lr={lr}: pe loss {pe_first:.4} -> {pe_last:.4}, exact {exact}/8, {:?}",
            start.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_stage_timing() {
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&cfg).unwrap();
    let corpus = stage_corpus(&cfg, &cfg.stages[0]).unwrap();
    let t = std::time::Instant::now();
    let one_epoch = StageConfig { epochs: 1, ..cfg.stages[0] };
    state.run_stage(&one_epoch, &corpus[..500], &MlsOptions::vanilla(), None).unwrap();
    println!("500 step1 examples (d_h=64): {:?}", t.elapsed());

    let ft = cfg.stages[3];
    let ft_corpus = stage_corpus(&cfg, &ft).unwrap();
    let t = std::time::Instant::now();
    let one_epoch = StageConfig { epochs: 1, ..ft };
    state.run_stage(&one_epoch, &ft_corpus, &MlsOptions::full(), None).unwrap();
    println!("200 finetune examples (mls): {:?}", t.elapsed());

    let eval = eval_corpus(&cfg).unwrap();
    let t = std::time::Instant::now();
    let report = evaluate_model(&state.model, &state.vocab, &eval[..100]).unwrap();
    println!("eval 100 examples: {:?} (ter {:.2})", t.elapsed(), report.ter);
}

fn probe_config(lr: f64, pre_epochs: usize, ft_epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.optim.lr = lr;
    cfg.stages = vec![
        StageConfig { stage: Stage::Step1, epochs: pre_epochs, batch_size: 32, n_examples: 2000, lr: None },
        StageConfig { stage: Stage::Step2, epochs: pre_epochs, batch_size: 32, n_examples: 1500, lr: None },
        StageConfig { stage: Stage::Step3, epochs: pre_epochs, batch_size: 32, n_examples: 1000, lr: None },
        StageConfig { stage: Stage::FineTune, epochs: ft_epochs, batch_size: 16, n_examples: 200, lr: None },
    ];
    cfg
}

#[test]
#[ignore]
fn probe_cts_direction() {
    use ape_core::trainer::run_cts_suite;
    for (lr, pre, ft) in [(1e-3, 2, 20), (1e-3, 2, 12)] {
        let cfg = probe_config(lr, pre, ft);
        let t = std::time::Instant::now();
        let report = run_cts_suite(&cfg, &[42]).unwrap();
        println!("lr={lr} pre={pre} ft={ft}:\n{}", report.csv());
        println!("suite took {:?}", t.elapsed());
    }
}

#[test]
#[ignore]
fn probe_mls_direction() {
    use ape_core::trainer::ModelDims;
    for d_h in [64usize, 96] {
        let mut cfg = TrainConfig::default();
        cfg.model = ModelDims {
            d_h,
            d_h_s: d_h,
            layers: 2,
            heads: 2,
            d_ff: 2 * d_h,
            max_len: 48,
        };
        cfg.optim.lr = 1e-3;
        cfg.stages[3].epochs = 40;
        cfg.stages[3].lr = Some(2e-3);
        let t = std::time::Instant::now();
        let report = ape_core::trainer::run_finetune_arms(
            &cfg,
            &[42, 43, 44],
            &[
                ape_core::trainer::MlsArm::Vanilla,
                ape_core::trainer::MlsArm::FullWithDwa,
                ape_core::trainer::MlsArm::FullNoDwa,
            ],
            "dwa",
        )
        .unwrap();
        println!("d_h={d_h}:\n{}", report.csv());
        for arm in ["vanilla", "mls_w_dwa", "mls_wo_dwa"] {
            println!("  median {arm}: {:.4}", report.median_ter(arm).unwrap());
        }
        println!("suite took {:?}", t.elapsed());
    }
}

#[test]
#[ignore]
fn probe_model_dims_timing() {
    for (d_h, d_ff) in [(32, 64), (48, 96)] {
        let mut cfg = TrainConfig::default();
        cfg.model = ModelDims { d_h, d_h_s: d_h, layers: 2, heads: 2, d_ff, max_len: 48 };
        let mut state = TrainState::new(&cfg).unwrap();
        let corpus = stage_corpus(&cfg, &cfg.stages[0]).unwrap();
        let t = std::time::Instant::now();
        let one_epoch = StageConfig { epochs: 1, ..cfg.stages[0] };
        state.run_stage(&one_epoch, &corpus[..500], &MlsOptions::vanilla(), None).unwrap();
        println!("500 step1 examples (d_h={d_h}): {:?}", t.elapsed());
    }
}
