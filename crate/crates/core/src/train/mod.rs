//! Training loop, evaluation and inference timing.

mod bench;
mod metrics;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::des::{aggregate, simulate, GroundTruth};
use crate::model::{
    check_window, forward, infer, Checkpoint, ModelConfig, ModelError, ModelParams, PreparedScenario, N_TARGETS,
};
use crate::nn::{Adam, Normalizer, Tape, TapeError, Tensor};
use crate::scenario::{compute_window_features, Scenario, WindowFeatures};

pub use bench::{bench_inference, scale_traffic, BenchRow};
pub use metrics::{
    mape_loss, metrics, write_residuals_csv, Cells, EvalReport, Metrics, NoValidTargets, Residual, StatRow,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("{0} has no valid targets")]
    NoTargets(&'static str),
    #[error("scenarios mix window sizes {0} s and {1} s")]
    MixedWindows(f64, f64),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch}, step {step} (scenario {scenario}): {value}")]
    Diverged {
        epoch: usize,
        step: usize,
        scenario: String,
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub seed: u64,
    /// scenarios per gradient step
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            steps_per_epoch: 500,
            lr: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.5,
            seed: 0,
            batch_size: 1,
        }
    }
}

impl TrainConfig {
    /// Reduced schedule used for desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            max_epochs: 50,
            steps_per_epoch: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.max_epochs > 0
            && self.steps_per_epoch > 0
            && self.lr >= 0.0
            && self.plateau_patience > 0
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("{self:?}")))
        }
    }
}

/// A scenario with its input features and simulated ground truth.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub name: String,
    pub scenario: Scenario,
    pub features: WindowFeatures,
    pub truth: GroundTruth,
}

impl LabeledScenario {
    /// Simulates the scenario to obtain its ground truth.
    pub fn simulate(name: impl Into<String>, scenario: Scenario) -> Self {
        let truth = ground_truth(&scenario);
        Self::with_truth(name, scenario, truth)
    }

    pub fn with_truth(name: impl Into<String>, scenario: Scenario, truth: GroundTruth) -> Self {
        Self {
            name: name.into(),
            features: compute_window_features(&scenario),
            scenario,
            truth,
        }
    }
}

pub fn ground_truth(s: &Scenario) -> GroundTruth {
    aggregate(&simulate(s), s.window_s, s.n_windows())
}

/// Simulates every scenario in parallel; output order follows input order.
pub fn label_all(named: Vec<(String, Scenario)>) -> Vec<LabeledScenario> {
    named
        .into_par_iter()
        .map(|(n, s)| LabeledScenario::simulate(n, s))
        .collect()
}

/// Model-ready scenario with targets in seconds, laid out like [`crate::model::Prediction::values`].
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub prep: PreparedScenario,
    pub target: Vec<f64>,
    /// ground truth exists for the cell
    pub present: Vec<bool>,
}

impl Sample {
    pub fn new(l: &LabeledScenario, normalizer: &Normalizer, cfg: &ModelConfig) -> Result<Self, ModelError> {
        let prep = PreparedScenario::from_features(&l.scenario, &l.features, normalizer, cfg)?;
        let w = l.scenario.n_windows();
        let n = prep.graph.n_flows() * w * N_TARGETS;
        let (mut target, mut present) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for t in 0..w {
            for &f in &prep.graph.flow_ids {
                let cells = l.truth.get(f, t).map_or([None; N_TARGETS], |s| s.targets());
                for c in cells {
                    target.push(c.unwrap_or(0.0));
                    present.push(c.is_some());
                }
            }
        }
        Ok(Self {
            name: l.name.clone(),
            prep,
            target,
            present,
        })
    }

    pub fn has_targets(&self) -> bool {
        self.target.iter().zip(&self.present).any(|(&y, &p)| p && y > 0.0)
    }
}

fn prepare(data: &[LabeledScenario], normalizer: &Normalizer, cfg: &ModelConfig) -> Result<Vec<Sample>, ModelError> {
    data.par_iter().map(|l| Sample::new(l, normalizer, cfg)).collect()
}

fn common_window(sets: &[&[LabeledScenario]]) -> Result<f64, TrainError> {
    let mut dt: Option<f64> = None;
    for l in sets.iter().flat_map(|s| s.iter()) {
        let w = l.scenario.window_s;
        match dt {
            None => dt = Some(w),
            Some(d) if (d - w).abs() > 1e-9 * d.max(w) => return Err(TrainError::MixedWindows(d, w)),
            _ => {}
        }
    }
    dt.ok_or(TrainError::Empty("training"))
}

/// Masked MAPE loss of one scenario and its parameter gradients.
pub fn loss_and_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    sample: &Sample,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = forward(&mut tape, &bound, &sample.prep.graph, &sample.prep.inputs, cfg)?;
    let pred = tape.concat_rows(&out.predictions).map_err(ModelError::from)?;
    let target: Vec<f64> = sample.target.iter().map(|y| y * cfg.target_scale).collect();
    let loss = tape.mape(pred, &target, &sample.present)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).item().expect("scalar loss");
    Ok((value, bound.nodes().into_iter().map(|n| grads.take(n)).collect()))
}

/// Pooled validation MAPE in percent.
fn pooled_mape(params: &ModelParams, cfg: &ModelConfig, samples: &[Sample]) -> Result<f64, TrainError> {
    let preds = samples
        .par_iter()
        .map(|s| infer(params, cfg, &s.prep.graph, &s.prep.inputs))
        .collect::<Result<Vec<_>, _>>()?;
    let p: Vec<f64> = preds.iter().flat_map(|p| p.values.iter().copied()).collect();
    let y: Vec<f64> = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
    let m: Vec<bool> = samples.iter().flat_map(|s| s.present.iter().copied()).collect();
    mape_loss(&p, &y, &m)
        .map(|v| v * 100.0)
        .map_err(|_| TrainError::NoTargets("validation set"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauStep {
    Improved,
    Wait,
    /// `patience` epochs in a row without strict improvement
    Reduce,
}

/// Reduce-on-plateau bookkeeping; the counter restarts after each reduction.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub best: f64,
    wait: usize,
    patience: usize,
}

impl Plateau {
    pub fn new(initial: f64, patience: usize) -> Self {
        Self {
            best: initial,
            wait: 0,
            patience,
        }
    }

    pub fn observe(&mut self, value: f64) -> PlateauStep {
        if value < self.best {
            self.best = value;
            self.wait = 0;
            return PlateauStep::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            PlateauStep::Reduce
        } else {
            PlateauStep::Wait
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the untrained model
    pub epoch: usize,
    pub lr: f64,
    /// mean training loss over the epoch's steps, percent
    pub train_mape: Option<f64>,
    pub val_mape: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MAPE seen.
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    /// optimizer steps taken
    pub updates: u64,
}

/// Adam on per-scenario MAPE with a reduce-on-plateau schedule. Keeps the
/// parameters with the best validation MAPE, including the initial ones.
pub fn train(
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    train_set: &[LabeledScenario],
    val_set: &[LabeledScenario],
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::Empty("validation"));
    }
    let window_s = common_window(&[train_set, val_set])?;
    let normalizer = Normalizer::fit(train_set.iter().map(|l| &l.features));
    let samples: Vec<Sample> = prepare(train_set, &normalizer, mcfg)?
        .into_iter()
        .filter(Sample::has_targets)
        .collect();
    if samples.is_empty() {
        return Err(TrainError::NoTargets("training set"));
    }
    let val = prepare(val_set, &normalizer, mcfg)?;

    let mut params = ModelParams::init(mcfg, tcfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(tcfg.lr);

    let initial = pooled_mape(&params, mcfg, &val)?;
    let mut history = vec![EpochLog {
        epoch: 0,
        lr: adam.lr,
        train_mape: None,
        val_mape: initial,
    }];
    let mut plateau = Plateau::new(initial, tcfg.plateau_patience);
    let (mut best_params, mut best_epoch) = (params.clone(), 0);
    log::info!("epoch 0: val MAPE {initial:.3}%");

    for epoch in 1..=tcfg.max_epochs {
        let mut loss_sum = 0.0;
        for step in 0..tcfg.steps_per_epoch {
            let batch: Vec<usize> = (0..tcfg.batch_size)
                .map(|_| rng.random_range(0..samples.len()))
                .collect();
            let results = batch
                .par_iter()
                .map(|&i| loss_and_gradients(&params, mcfg, &samples[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let mut grads: Option<Vec<Tensor>> = None;
            let mut loss = 0.0;
            for ((l, g), &i) in results.into_iter().zip(&batch) {
                if !l.is_finite() || g.iter().any(|t| t.data().iter().any(|x| !x.is_finite())) {
                    return Err(TrainError::Diverged {
                        epoch,
                        step,
                        scenario: samples[i].name.clone(),
                        value: l,
                    });
                }
                loss += l;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = grads.expect("batch is non-empty");
            if tcfg.batch_size > 1 {
                let k = 1.0 / tcfg.batch_size as f64;
                grads
                    .iter_mut()
                    .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= k));
            }
            loss_sum += loss / tcfg.batch_size as f64;
            adam.update(&mut params.tensors_mut(), &grads)
                .map_err(ModelError::from)?;
        }

        let val_mape = pooled_mape(&params, mcfg, &val)?;
        let train_mape = 100.0 * loss_sum / tcfg.steps_per_epoch as f64;
        history.push(EpochLog {
            epoch,
            lr: adam.lr,
            train_mape: Some(train_mape),
            val_mape,
        });
        log::info!(
            "epoch {epoch}: lr {:.3e}, train MAPE {train_mape:.3}%, val MAPE {val_mape:.3}%",
            adam.lr
        );
        match plateau.observe(val_mape) {
            PlateauStep::Improved => (best_params, best_epoch) = (params.clone(), epoch),
            PlateauStep::Reduce => {
                adam.lr *= tcfg.plateau_factor;
                log::info!("validation plateau: learning rate reduced to {:.3e}", adam.lr);
            }
            PlateauStep::Wait => {}
        }
    }

    let mut checkpoint = Checkpoint::new(mcfg.clone(), window_s, normalizer, best_params);
    checkpoint.hyperparameters = serde_json::to_value(tcfg).expect("config serializes");
    Ok(TrainOutcome {
        checkpoint,
        best_epoch,
        history,
        updates: adam.steps(),
    })
}

/// Report plus per-scenario residuals.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub residuals: Vec<(String, Vec<Residual>)>,
}

/// Metrics of a checkpoint against ground truth.
pub fn evaluate(ckpt: &Checkpoint, data: &[LabeledScenario]) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty("test"));
    }
    for l in data {
        check_window(ckpt, &l.scenario)?;
    }
    let samples = prepare(data, &ckpt.normalizer, &ckpt.config)?;
    let timed = samples
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let p = infer(&ckpt.blocks, &ckpt.config, &s.prep.graph, &s.prep.inputs)?;
            Ok((p, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let mut cols = vec![Cells::default(); N_TARGETS];
    let mut residuals = Vec::with_capacity(samples.len());
    let mut elapsed = 0.0;
    for (s, (p, dt)) in samples.iter().zip(&timed) {
        elapsed += dt;
        let mut rows = Vec::new();
        for (i, (&y, &present)) in s.target.iter().zip(&s.present).enumerate() {
            if !present {
                continue;
            }
            let k = i % N_TARGETS;
            let flow = (i / N_TARGETS) % p.n_flows();
            let window = i / (N_TARGETS * p.n_flows());
            cols[k].pred.push(p.values[i]);
            cols[k].target.push(y);
            rows.push(Residual {
                flow: p.flow_ids[flow],
                window,
                statistic: k,
                target: y,
                prediction: p.values[i],
            });
        }
        residuals.push((s.name.clone(), rows));
    }
    Ok(Evaluation {
        report: EvalReport::from_cells(&cols, samples.len(), elapsed),
        residuals,
    })
}

#[cfg(test)]
mod tests;
