use std::collections::BTreeMap;

use serde::{Serialize, Serializer};

use super::{forward, Checkpoint, ModelConfig, ModelError, ModelInputs, ModelParams};
use crate::des::Stats;
use crate::graph::ExpandedGraph;
use crate::nn::{Normalizer, Tape};
use crate::scenario::{compute_window_features, Scenario, WindowFeatures};

pub const TARGET_NAMES: [&str; 10] = [
    "delay_avg",
    "delay_median",
    "delay_p90",
    "delay_p95",
    "delay_p99",
    "jitter_avg",
    "jitter_median",
    "jitter_p90",
    "jitter_p95",
    "jitter_p99",
];

/// Predicted statistics in seconds for every (flow, window).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Original flow ids in graph order.
    pub flow_ids: Vec<u64>,
    pub n_windows: usize,
    pub n_targets: usize,
    /// Window-major, then flow, then target.
    pub values: Vec<f64>,
}

impl Prediction {
    pub fn n_flows(&self) -> usize {
        self.flow_ids.len()
    }

    /// Targets of flow index `flow` (graph order) in window `window`.
    pub fn get(&self, flow: usize, window: usize) -> &[f64] {
        let start = (window * self.n_flows() + flow) * self.n_targets;
        &self.values[start..start + self.n_targets]
    }

    /// Like [`Self::get`] but by original flow id.
    pub fn by_id(&self, flow_id: u64, window: usize) -> Option<&[f64]> {
        let f = self.flow_ids.iter().position(|&id| id == flow_id)?;
        (window < self.n_windows).then(|| self.get(f, window))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prediction serializes")
    }
}

#[derive(Serialize)]
struct WindowOut {
    delay: Stats,
    jitter: Stats,
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let split = |v: &[f64]| {
            let mut d = [0.0; 5];
            let mut j = [0.0; 5];
            d.copy_from_slice(&v[..5]);
            j.copy_from_slice(&v[5..10]);
            WindowOut {
                delay: Stats::from_array(d),
                jitter: Stats::from_array(j),
            }
        };
        let map: BTreeMap<u64, BTreeMap<usize, WindowOut>> = self
            .flow_ids
            .iter()
            .enumerate()
            .map(|(f, &id)| (id, (0..self.n_windows).map(|w| (w, split(self.get(f, w)))).collect()))
            .collect();
        map.serialize(ser)
    }
}

/// Graph and normalized inputs of one scenario, ready for the model.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub graph: ExpandedGraph,
    pub inputs: ModelInputs,
}

impl PreparedScenario {
    pub fn new(s: &Scenario, normalizer: &Normalizer, cfg: &ModelConfig) -> Result<Self, ModelError> {
        Self::from_features(s, &compute_window_features(s), normalizer, cfg)
    }

    /// `features` are raw (unnormalized) window features of `s`.
    pub fn from_features(
        s: &Scenario,
        features: &WindowFeatures,
        normalizer: &Normalizer,
        cfg: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let graph = ExpandedGraph::build(s);
        let inputs = ModelInputs::new(&normalizer.apply(features), &graph, cfg)?;
        Ok(Self { graph, inputs })
    }
}

/// Inference-only forward pass, converted to seconds.
pub fn infer(
    params: &ModelParams,
    cfg: &ModelConfig,
    graph: &ExpandedGraph,
    inputs: &ModelInputs,
) -> Result<Prediction, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward(&mut tape, &bound, graph, inputs, cfg)?;
    let mut values = Vec::with_capacity(out.predictions.len() * graph.n_flows() * cfg.n_targets);
    for &p in &out.predictions {
        values.extend(tape.value(p).data().iter().map(|v| v / cfg.target_scale));
    }
    Ok(Prediction {
        flow_ids: graph.flow_ids.clone(),
        n_windows: out.predictions.len(),
        n_targets: cfg.n_targets,
        values,
    })
}

/// Fails unless the scenario uses the window size the checkpoint was trained with.
pub fn check_window(ckpt: &Checkpoint, s: &Scenario) -> Result<(), ModelError> {
    let (a, b) = (ckpt.window_s, s.window_s);
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
        return Err(ModelError::WindowMismatch { trained: a, got: b });
    }
    Ok(())
}

pub fn predict(ckpt: &Checkpoint, s: &Scenario) -> Result<Prediction, ModelError> {
    check_window(ckpt, s)?;
    let prep = PreparedScenario::new(s, &ckpt.normalizer, &ckpt.config)?;
    infer(&ckpt.blocks, &ckpt.config, &prep.graph, &prep.inputs)
}
