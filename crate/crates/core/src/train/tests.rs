use super::*;
use crate::dataset::{generate_dataset, GenConfig, TopologyFamily};
use crate::model::ModelConfig;

fn labeled(seed: u64, n: usize) -> Vec<LabeledScenario> {
    let cfg = GenConfig {
        seed,
        n_scenarios: n,
        node_range: [3, 4],
        topology_family: TopologyFamily::Line,
        path_router_range: [2, 3],
        flows_per_scenario: [2, 3],
        duration_s: 0.4,
        ..GenConfig::default()
    };
    let named = generate_dataset(&cfg)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("s{i}"), s))
        .collect();
    label_all(named)
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        state_dim: 6,
        mp_iterations: 2,
        ..ModelConfig::default()
    }
}

fn quick(epochs: usize, steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        steps_per_epoch: steps,
        lr,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_one_step_is_one_update() {
    let data = labeled(1, 4);
    let out = train(&quick(1, 1, 1e-2), &tiny_model(), &data[..3], &data[3..]).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.updates, 1);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let data = labeled(2, 4);
    let out = train(&quick(3, 2, 0.0), &tiny_model(), &data[..3], &data[3..]).unwrap();
    assert_eq!(out.checkpoint.blocks, ModelParams::init(&tiny_model(), 7));
    let v0 = out.history[0].val_mape;
    assert!(out.history.iter().all(|h| h.val_mape == v0));
}

#[test]
fn plateau_reduces_after_patience_non_improving_epochs() {
    let mut p = Plateau::new(1.0, 10);
    for epoch in 1..=10 {
        let step = p.observe(1.0);
        assert_eq!(
            step,
            if epoch == 10 {
                PlateauStep::Reduce
            } else {
                PlateauStep::Wait
            }
        );
    }
    assert_eq!(p.observe(0.5), PlateauStep::Improved);
    assert_eq!(p.observe(0.5), PlateauStep::Wait);
}

#[test]
fn training_is_reproducible_and_keeps_the_best_epoch() {
    let data = labeled(3, 5);
    let run = || train(&quick(3, 5, 5e-3), &tiny_model(), &data[..4], &data[4..]).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
    let best = a.history[a.best_epoch].val_mape;
    assert!(a.history.iter().all(|h| best <= h.val_mape));
}

#[test]
fn empty_sets_are_rejected() {
    let data = labeled(4, 2);
    assert!(matches!(
        train(&quick(1, 1, 1e-3), &tiny_model(), &[], &data),
        Err(TrainError::Empty("training"))
    ));
    assert!(matches!(
        train(&quick(1, 1, 1e-3), &tiny_model(), &data, &[]),
        Err(TrainError::Empty("validation"))
    ));
}

#[test]
fn report_mape_matches_the_loss_on_the_same_cells() {
    let data = labeled(5, 3);
    let norm = Normalizer::fit(data.iter().map(|l| &l.features));
    let cfg = tiny_model();
    let ckpt = Checkpoint::new(cfg.clone(), 0.1, norm, ModelParams::init(&cfg, 1));
    let ev = evaluate(&ckpt, &data).unwrap();
    let samples = prepare(&data, &norm, &cfg).unwrap();
    let mut p = Vec::new();
    let (mut y, mut m) = (Vec::new(), Vec::new());
    for s in &samples {
        p.extend(infer(&ckpt.blocks, &cfg, &s.prep.graph, &s.prep.inputs).unwrap().values);
        y.extend_from_slice(&s.target);
        m.extend_from_slice(&s.present);
    }
    let loss = mape_loss(&p, &y, &m).unwrap() * 100.0;
    let report = ev.report.overall_mape.unwrap();
    assert!((loss - report).abs() <= 1e-9 * loss, "{loss} vs {report}");
    let n: usize = ev.residuals.iter().map(|(_, r)| r.len()).sum();
    assert_eq!(n, m.iter().filter(|&&b| b).count());
}

#[test]
fn evaluation_checks_inputs() {
    let data = labeled(6, 1);
    let cfg = tiny_model();
    let norm = Normalizer::fit(data.iter().map(|l| &l.features));
    let ckpt = Checkpoint::new(cfg.clone(), 0.2, norm, ModelParams::init(&cfg, 1));
    assert!(matches!(evaluate(&ckpt, &[]), Err(TrainError::Empty("test"))));
    assert!(matches!(
        evaluate(&ckpt, &data),
        Err(TrainError::Model(ModelError::WindowMismatch { .. }))
    ));
}
