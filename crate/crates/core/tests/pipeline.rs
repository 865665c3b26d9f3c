use wcse_core::checkpoint::Checkpoint;
use wcse_core::encoder::{Augmentation, EncoderState};
use wcse_core::pipeline::ablate::{ablate, Sweep};
use wcse_core::pipeline::train::{dev_pairs, evaluate};
use wcse_core::pipeline::{train, TrainConfig, TrainingData};

#[test]
fn default_training_improves_uniformity_and_alignment() {
    let config = TrainConfig::default();
    let data = TrainingData::synthetic(&config).unwrap();
    let out = train(&config, &data).unwrap();
    let first = out.report.records[0].metrics;
    let last = out.report.final_record().metrics;
    assert_eq!(out.report.final_record().step, 2000);
    assert!(
        last.uniformity < first.uniformity,
        "uniformity {} → {}",
        first.uniformity,
        last.uniformity
    );
    assert!(
        last.alignment < first.alignment,
        "alignment {} → {}",
        first.alignment,
        last.alignment
    );
}

#[test]
fn untrained_encoder_has_near_zero_spearman() {
    let rhos: Vec<f64> = (0..30u64)
        .map(|seed| {
            let config = TrainConfig {
                seed,
                data_seed: seed,
                ..TrainConfig::default()
            };
            let data = TrainingData::synthetic(&config).unwrap();
            let encoder = EncoderState::new(
                config.input_dim,
                config.hidden_dim,
                config.embed_dim,
                config.dropout,
                seed,
            )
            .unwrap();
            let checkpoint = Checkpoint {
                encoder,
                eval_whitening: None,
            };
            evaluate(&checkpoint, &data, &dev_pairs(&data, &config).unwrap(), config.ridge)
                .unwrap()
                .spearman
        })
        .collect();
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    assert!(mean.abs() < 0.2, "mean ρ over 30 random encoders = {mean:.3}: {rhos:.3?}");
}

#[test]
fn sgw_ablation_lowers_uniformity() {
    let config = TrainConfig::default();
    let data = TrainingData::synthetic(&config).unwrap();
    let sweep: Sweep = "aug_kind=dropout_only,sgw".parse().unwrap();
    let rows = ablate(&config, &data, &sweep, |_| Ok(())).unwrap();
    let dropout = rows[0].report.final_record();
    let sgw = rows[1].report.final_record();
    assert_eq!(dropout.step, sgw.step);
    assert!(
        sgw.metrics.uniformity < dropout.metrics.uniformity,
        "sgw {} vs dropout {}",
        sgw.metrics.uniformity,
        dropout.metrics.uniformity
    );
}

#[test]
fn group_size_sweep_completes() {
    let config = TrainConfig {
        steps: 100,
        eval_every: 50,
        ..TrainConfig::default()
    };
    let data = TrainingData::synthetic(&config).unwrap();
    let mut lines = Vec::new();
    let rows = ablate(&config, &data, &"group_size=2,4,8,16".parse().unwrap(), |l| {
        lines.push(l.to_string());
        Ok(())
    })
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert!(lines.iter().all(|l| l.contains("status=ok")));
}

#[test]
fn dropout_only_run_stores_no_eval_whitening() {
    let config = TrainConfig {
        aug_kind: Augmentation::DropoutOnly,
        num_positives: 2,
        steps: 10,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let data = TrainingData::synthetic(&config).unwrap();
    let out = train(&config, &data).unwrap();
    assert!(out.best.eval_whitening.is_none());
    let sgw = train(&TrainConfig { aug_kind: Augmentation::Sgw, ..config }, &data).unwrap();
    let stored = sgw.best.eval_whitening.unwrap();
    assert_eq!(stored.stats.len(), 16 / 8);
}
