use std::collections::BTreeMap;

use pogars::data::{normalize_all, synth_generate, ClipWindow, Sample, SynthConfig};
use pogars::model::{Fusion, PogarsConfig, PogarsParams};
use pogars::train::tables::{
    confusion_table, history_table, mean_temporal_table, predictions_table, read_table,
};
use pogars::train::*;
use pogars::Tensor;
use proptest::prelude::*;

fn small_config() -> PogarsConfig {
    PogarsConfig {
        persons: 3,
        frames: 8,
        keyframe_index: 3,
        channels: vec![64, 16, 16, 32],
        phi_hidden: 8,
        psi_hidden: 8,
        head_hidden: 16,
        ..PogarsConfig::default()
    }
}

fn samples(cfg: &PogarsConfig, classes: usize, per_class: usize, seed: u64) -> Vec<Sample> {
    let records = synth_generate(&SynthConfig {
        classes,
        per_class,
        persons: cfg.persons,
        frames: cfg.frames + 3,
        noise: 0.01,
        seed,
        ball_cue: false,
    })
    .unwrap();
    normalize_all(&records, ClipWindow::from(cfg)).unwrap()
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn trained(epochs: usize) -> (Trainer<f32>, Vec<Sample>) {
    let cfg = small_config();
    let data = samples(&cfg, 4, 3, 1);
    let mut t = Trainer::new(cfg, train_config(epochs)).unwrap();
    t.fit(&data, |_| true).unwrap();
    (t, data)
}

#[test]
fn adam_first_step_by_hand() {
    let mut theta = Tensor::<f64>::from_f64([1], &[1.0])
        .unwrap()
        .requiring_grad();
    theta.accumulate_grad(&[1.0]).unwrap();
    let mut params = PogarsParams::from_tensors(BTreeMap::from([("theta".to_string(), theta)]));
    let mut state = AdamState::new(&params);
    state.step(&mut params, 0.1).unwrap();
    let want = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    assert!((params.get("theta").unwrap().values()[0] - want).abs() < 1e-15);
    assert_eq!(state.step, 1);
    assert!(pogars::verify::adam_oracle_check(1000, 2) < 1e-12);
}

#[test]
fn training_is_deterministic_and_finite() {
    let (a, data) = trained(3);
    let (b, _) = trained(3);
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert!(a.params.all_finite());
    assert_eq!(
        history_table(&[], &a.history),
        history_table(&[], &b.history)
    );

    // a different seed changes both init and data order
    let cfg = small_config();
    let mut c = Trainer::<f32>::new(
        cfg,
        TrainConfig {
            seed: 4,
            ..train_config(3)
        },
    )
    .unwrap();
    c.fit(&data, |_| true).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_run() {
    let (full, data) = trained(4);
    let (half, _) = trained(2);
    let bytes = half.checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    resumed.config.epochs = 4;
    resumed.fit(&data, |_| true).unwrap();
    assert_eq!(resumed.history, full.history[2..]);
    assert_eq!(resumed.params, full.params);
}

#[test]
fn evaluation_agrees_with_a_recount_of_its_predictions() {
    let (t, data) = trained(2);
    let ev = evaluate(&t.params, &t.model, &data, 5).unwrap();
    let group_right = ev
        .predictions
        .iter()
        .filter(|p| p.group_pred == p.group_true)
        .count();
    assert_eq!(ev.group_accuracy, group_right as f64 / data.len() as f64);
    let (mut persons, mut right) = (0, 0);
    for p in &ev.predictions {
        persons += p.actions_true.len();
        right += p
            .actions_true
            .iter()
            .zip(&p.actions_pred)
            .filter(|(a, b)| a == b)
            .count();
    }
    assert_eq!(ev.action_accuracy, right as f64 / persons as f64);
    assert_eq!(ev.confusion.total(), data.len() as u64);
    assert_eq!(ev.confusion.accuracy(), ev.group_accuracy);
    for (class, sum) in ev.confusion.row_sums().iter().enumerate() {
        assert_eq!(
            *sum,
            data.iter().filter(|s| s.group == class).count() as u64
        );
    }
    for p in &ev.predictions {
        assert!((p.group_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p.group_pred, argmax(&p.group_probs));
    }

    // batch size does not change the result
    assert_eq!(evaluate(&t.params, &t.model, &data, 1).unwrap(), ev);

    let one = evaluate(&t.params, &t.model, &data[..1], 16).unwrap();
    assert_eq!(one.confusion.total(), 1);
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len())
        .max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a)))
        .unwrap()
}

#[test]
fn report_tables_carry_config_and_counts() {
    let (t, data) = trained(1);
    let ev = evaluate(&t.params, &t.model, &data, 16).unwrap();
    let config = serde_json::to_string(&t.model).unwrap();
    let text = confusion_table(&[format!("model: {config}")], &ev.confusion);
    assert!(text.starts_with("# model: {"));
    let (header, rows) = read_table(&text).unwrap();
    assert_eq!((header.len(), rows.len()), (9, 8));
    let total: u64 = rows
        .iter()
        .flat_map(|r| r[1..].iter().map(|v| v.parse::<u64>().unwrap()))
        .sum();
    assert_eq!(total, data.len() as u64);

    let (header, rows) = read_table(&predictions_table(&[], &ev.predictions)).unwrap();
    assert_eq!(header.len(), 2 + 8 + 3);
    assert_eq!(rows.len(), data.len());
    let (header, rows) = read_table(&history_table(&[], &t.history)).unwrap();
    assert_eq!(header, ["epoch", "lr", "L_MT", "L_GA", "L_IA", "train_acc"]);
    assert_eq!(rows.len(), 1);
}

#[test]
fn zeroed_attention_outputs_give_uniform_weights() {
    let cfg = small_config();
    let data = samples(&cfg, 2, 2, 2);
    let mut params = PogarsParams::<f32>::init(&cfg, 5).unwrap();
    for name in [
        "temporal_attn.1.weight",
        "temporal_attn.1.bias",
        "spatial_attn.1.weight",
        "spatial_attn.1.bias",
    ] {
        params.get_mut(name).unwrap().values_mut().fill(0.0);
    }
    let r = export_attention(&params, &cfg, &data, 3).unwrap();
    assert_eq!(r.ids.len(), 4);
    for (temporal, spatial) in r.temporal.iter().zip(&r.spatial) {
        assert!(temporal
            .iter()
            .flatten()
            .all(|w| (w - 1.0 / 8.0).abs() < 1e-7));
        assert!(spatial.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-7));
    }
    assert!((r.mean_temporal.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let (_, rows) = read_table(&mean_temporal_table(&[], &r)).unwrap();
    assert_eq!(rows.len(), 8);
}

#[test]
fn attention_rows_are_distributions_after_training() {
    let (t, data) = trained(2);
    let r = export_attention(&t.params, &t.model, &data, 16).unwrap();
    for (temporal, spatial) in r.temporal.iter().zip(&r.spatial) {
        for row in temporal {
            assert!(row.iter().all(|w| *w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!((spatial.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn early_fusion_has_no_attention_report() {
    let cfg = PogarsConfig {
        fusion: Fusion::Early,
        ..small_config()
    };
    let data = samples(&cfg, 2, 1, 2);
    let params = PogarsParams::<f32>::init(&cfg, 1).unwrap();
    assert!(matches!(
        export_attention(&params, &cfg, &data, 4),
        Err(TrainError::Unsupported(_))
    ));
    assert_eq!(
        evaluate(&params, &cfg, &data, 4).unwrap().confusion.total(),
        2
    );
}

#[test]
fn checkpoint_files_round_trip_bit_exactly() {
    let (t, data) = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a, &t.checkpoint()).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.params, t.params);
    let before = evaluate(&t.params, &t.model, &data, 16).unwrap();
    let after = evaluate(&loaded.params, &loaded.model, &data, 16).unwrap();
    assert_eq!(before, after);

    let bytes = std::fs::read(&a).unwrap();
    std::fs::write(&b, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&b), Err(TrainError::Truncated(_))));
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing")),
        Err(TrainError::Io(_))
    ));
}

#[test]
fn mismatched_dataset_is_rejected_before_training() {
    let cfg = small_config();
    let data = samples(
        &PogarsConfig {
            persons: 4,
            ..cfg.clone()
        },
        1,
        1,
        1,
    );
    let mut t = Trainer::<f32>::new(cfg, train_config(1)).unwrap();
    assert!(t.fit(&data, |_| true).is_err());
    assert!(t.history.is_empty());
    assert!(matches!(
        t.fit(&[], |_| true),
        Err(TrainError::EmptyDataset)
    ));
}

proptest! {
    #[test]
    fn learning_rate_never_increases(step in 1usize..20, gamma in 0.01f64..=1.0, epoch in 0usize..200) {
        let cfg = TrainConfig { lr_step: step, lr_gamma: gamma, ..TrainConfig::default() };
        prop_assert!(lr_at(epoch + 1, &cfg) <= lr_at(epoch, &cfg));
        prop_assert!(lr_at(epoch, &cfg) <= cfg.initial_lr);
    }
}
