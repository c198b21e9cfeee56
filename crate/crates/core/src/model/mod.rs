//! The expanded-graph message-passing model with windowed state carryover.
//!
//! Per scenario: queue states are encoded from static queue features and
//! device states from one update step over the sum of their queues. Then, for
//! every window, flow and link states are re-encoded from that window's
//! features, `T` rounds of message passing run over flows, queues, devices
//! and links, and the readout sums a per-hop contribution along each path.
//! Queue and device states leave a window as the next window's initial states.

mod checkpoint;
mod prediction;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::ExpandedGraph;
use crate::nn::{BoundGru, BoundMlp, GruCell, Mlp, NodeId, OutputActivation, ShapeError, Tape, Tensor};
use crate::scenario::WindowFeatures;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use prediction::{check_window, infer, predict, Prediction, PreparedScenario, TARGET_NAMES};

/// Five delay statistics then five jitter statistics.
pub const N_TARGETS: usize = 10;
pub const FLOW_FEATURES: usize = 3;
pub const LINK_FEATURES: usize = 1;
pub const QUEUE_FEATURES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("message passing needs at least one iteration")]
    NoIterations,
    #[error("scenario has no windows")]
    NoWindows,
    #[error("scenario window is {got} s but the model was trained with {trained} s windows")]
    WindowMismatch { trained: f64, got: f64 },
    #[error("features do not match the graph: {0}")]
    FeatureMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub state_dim: usize,
    /// message-passing rounds per window
    pub mp_iterations: usize,
    pub n_targets: usize,
    /// ReLU hidden layers in every MLP; each as wide as the state.
    pub mlp_hidden_layers: usize,
    /// Model output units per second of delay/jitter.
    pub target_scale: f64,
    /// Packet size is fed to the flow encoder in multiples of this many bits.
    pub packet_size_unit: f64,
}

impl ModelConfig {
    /// Reduced size used for desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            state_dim: 16,
            mp_iterations: 4,
            ..Self::default()
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 32,
            mp_iterations: 8,
            n_targets: N_TARGETS,
            mlp_hidden_layers: 2,
            target_scale: 1e3,
            packet_size_unit: 1e4,
        }
    }
}

impl ModelConfig {
    fn mlp_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.state_dim, self.mlp_hidden_layers));
        sizes.push(output);
        sizes
    }
}

/// The eight shared building blocks. Every queue, link, flow and device of
/// every scenario and window uses these same weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "E_f")]
    pub flow_encoder: Mlp,
    #[serde(rename = "E_l")]
    pub link_encoder: Mlp,
    #[serde(rename = "E_q")]
    pub queue_encoder: Mlp,
    #[serde(rename = "U_F")]
    pub flow_update: GruCell,
    #[serde(rename = "U_Q")]
    pub queue_update: GruCell,
    #[serde(rename = "U_D")]
    pub device_update: GruCell,
    #[serde(rename = "U_L")]
    pub link_update: GruCell,
    #[serde(rename = "R")]
    pub readout: Mlp,
}

pub const BLOCK_NAMES: [&str; 8] = ["E_f", "E_l", "E_q", "U_F", "U_Q", "U_D", "U_L", "R"];

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.state_dim;
        Self {
            flow_encoder: Mlp::new(&cfg.mlp_sizes(FLOW_FEATURES, d), OutputActivation::Identity, &mut rng),
            link_encoder: Mlp::new(&cfg.mlp_sizes(LINK_FEATURES, d), OutputActivation::Identity, &mut rng),
            queue_encoder: Mlp::new(&cfg.mlp_sizes(QUEUE_FEATURES, d), OutputActivation::Identity, &mut rng),
            flow_update: GruCell::new(2 * d, d, &mut rng),
            queue_update: GruCell::new(2 * d, d, &mut rng),
            device_update: GruCell::new(d, d, &mut rng),
            link_update: GruCell::new(d, d, &mut rng),
            readout: Mlp::new(&cfg.mlp_sizes(d, cfg.n_targets), OutputActivation::Softplus, &mut rng),
        }
    }

    /// Blocks by name, each with its tensors in canonical order.
    pub fn blocks(&self) -> Vec<(&'static str, Vec<&Tensor>)> {
        vec![
            ("E_f", self.flow_encoder.tensors()),
            ("E_l", self.link_encoder.tensors()),
            ("E_q", self.queue_encoder.tensors()),
            ("U_F", self.flow_update.tensors()),
            ("U_Q", self.queue_update.tensors()),
            ("U_D", self.device_update.tensors()),
            ("U_L", self.link_update.tensors()),
            ("R", self.readout.tensors()),
        ]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.blocks().into_iter().flat_map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.extend(self.flow_encoder.tensors_mut());
        out.extend(self.link_encoder.tensors_mut());
        out.extend(self.queue_encoder.tensors_mut());
        out.extend(self.flow_update.tensors_mut());
        out.extend(self.queue_update.tensors_mut());
        out.extend(self.device_update.tensors_mut());
        out.extend(self.link_update.tensors_mut());
        out.extend(self.readout.tensors_mut());
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<(), ShapeError> {
        let d = cfg.state_dim;
        for m in [
            &self.flow_encoder,
            &self.link_encoder,
            &self.queue_encoder,
            &self.readout,
        ] {
            m.check()?;
        }
        for g in [
            &self.flow_update,
            &self.queue_update,
            &self.device_update,
            &self.link_update,
        ] {
            g.check()?;
            if g.hidden_dim() != d {
                return Err(ShapeError::new(format!("GRU state {} != {d}", g.hidden_dim())));
            }
        }
        let dims = [
            (self.flow_encoder.input_dim(), FLOW_FEATURES),
            (self.link_encoder.input_dim(), LINK_FEATURES),
            (self.queue_encoder.input_dim(), QUEUE_FEATURES),
            (self.flow_encoder.output_dim(), d),
            (self.link_encoder.output_dim(), d),
            (self.queue_encoder.output_dim(), d),
            (self.flow_update.input_dim(), 2 * d),
            (self.queue_update.input_dim(), 2 * d),
            (self.device_update.input_dim(), d),
            (self.link_update.input_dim(), d),
            (self.readout.input_dim(), d),
            (self.readout.output_dim(), cfg.n_targets),
        ];
        match dims.iter().find(|(got, want)| got != want) {
            Some((got, want)) => Err(ShapeError::new(format!("block width {got}, expected {want}"))),
            None => Ok(()),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        BoundParams {
            flow_encoder: self.flow_encoder.bind(tape, trainable),
            link_encoder: self.link_encoder.bind(tape, trainable),
            queue_encoder: self.queue_encoder.bind(tape, trainable),
            flow_update: self.flow_update.bind(tape, trainable),
            queue_update: self.queue_update.bind(tape, trainable),
            device_update: self.device_update.bind(tape, trainable),
            link_update: self.link_update.bind(tape, trainable),
            readout: self.readout.bind(tape, trainable),
        }
    }
}

/// [`ModelParams`] registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub flow_encoder: BoundMlp,
    pub link_encoder: BoundMlp,
    pub queue_encoder: BoundMlp,
    pub flow_update: BoundGru,
    pub queue_update: BoundGru,
    pub device_update: BoundGru,
    pub link_update: BoundGru,
    pub readout: BoundMlp,
}

impl BoundParams {
    /// Leaf nodes in the same order as [`ModelParams::tensors`].
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        out.extend(self.flow_encoder.nodes());
        out.extend(self.link_encoder.nodes());
        out.extend(self.queue_encoder.nodes());
        out.extend(self.flow_update.nodes());
        out.extend(self.queue_update.nodes());
        out.extend(self.device_update.nodes());
        out.extend(self.link_update.nodes());
        out.extend(self.readout.nodes());
        out
    }
}

/// Encoder inputs of one scenario, already normalized, in graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    /// Per window: `flows x 3` (z-scored load, z-scored packet rate, scaled packet size).
    pub flow: Vec<Tensor>,
    /// Per window: `links x 1` expected load.
    pub link: Vec<Tensor>,
    /// `queues x 3` device-type one-hot.
    pub queue: Tensor,
}

impl ModelInputs {
    /// `features` must already be normalized.
    pub fn new(features: &WindowFeatures, graph: &ExpandedGraph, cfg: &ModelConfig) -> Result<Self, ModelError> {
        let ids_match = features
            .flows
            .iter()
            .map(|f| f.flow_id)
            .eq(graph.flow_ids.iter().copied())
            && features.link_ids == graph.link_ids
            && features.queue_ids == graph.queue_ids;
        if !ids_match {
            return Err(ModelError::FeatureMismatch(
                "element ids differ from the graph".to_string(),
            ));
        }
        let w = features.n_windows;
        if w == 0 {
            return Err(ModelError::NoWindows);
        }
        let flow = (0..w)
            .map(|t| {
                let data = features
                    .flows
                    .iter()
                    .flat_map(|f| [f.avg_load[t], f.packet_rate[t], f.packet_size / cfg.packet_size_unit])
                    .collect();
                Tensor::matrix(features.flows.len(), FLOW_FEATURES, data)
            })
            .collect();
        let link = (0..w)
            .map(|t| {
                let data = features.link_load.iter().map(|l| l[t]).collect();
                Tensor::matrix(features.link_ids.len(), LINK_FEATURES, data)
            })
            .collect();
        let queue = Tensor::matrix(
            features.queue_ids.len(),
            QUEUE_FEATURES,
            features.queue_kind.iter().flatten().copied().collect(),
        );
        Ok(Self { flow, link, queue })
    }

    pub fn n_windows(&self) -> usize {
        self.flow.len()
    }
}

/// Hidden states of every element, as tape nodes (`count x state_dim`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenStates {
    pub flow: NodeId,
    pub link: NodeId,
    pub queue: NodeId,
    pub device: NodeId,
}

/// Queue states from the static queue encoder, device states from one
/// device-update step on the sum of their queue states with a zero state.
pub fn init_static_states(
    tape: &mut Tape,
    params: &BoundParams,
    graph: &ExpandedGraph,
    queue_features: NodeId,
) -> Result<(NodeId, NodeId), ModelError> {
    let h_q = params.queue_encoder.forward(tape, queue_features)?;
    let m_d = tape.scatter_add_rows(h_q, graph.queue_device_index.clone(), graph.n_devices())?;
    let d = params.device_update.hidden_dim();
    let zero = tape.constant(Tensor::zeros(&[graph.n_devices(), d]));
    let h_d = params.device_update.step(tape, m_d, zero)?;
    Ok((h_q, h_d))
}

/// Result of the message-passing phase of one window.
#[derive(Debug, Clone)]
pub struct MessagePassingOutput {
    /// Last-round flow messages per path position (`hops at position x state_dim`).
    pub messages: Vec<NodeId>,
    pub states: HiddenStates,
}

/// `iterations` rounds of flow scan, queue, device and link updates.
pub fn message_passing(
    tape: &mut Tape,
    params: &BoundParams,
    graph: &ExpandedGraph,
    states: HiddenStates,
    iterations: usize,
) -> Result<MessagePassingOutput, ModelError> {
    if iterations == 0 {
        return Err(ModelError::NoIterations);
    }
    let mut s = states;
    let mut messages = Vec::new();
    for _ in 0..iterations {
        // Flows: scan each path in order with the previous round's link and queue states.
        let mut h_f = s.flow;
        messages.clear();
        for pos in &graph.positions {
            let h_l = tape.gather_rows(s.link, pos.links.clone())?;
            let h_q = tape.gather_rows(s.queue, pos.queues.clone())?;
            let input = tape.concat_cols(h_l, h_q)?;
            let prev = tape.gather_rows(h_f, pos.flows.clone())?;
            let next = params.flow_update.step(tape, input, prev)?;
            messages.push(next);
            h_f = tape.replace_rows(h_f, next, pos.flows.clone())?;
        }

        // Queues: owning device's previous state || sum of messages crossing the queue.
        let all = tape.concat_rows(&messages)?;
        let flow_sum = tape.scatter_add_rows(all, graph.hop_queue.clone(), graph.n_queues())?;
        let dev = tape.gather_rows(s.device, graph.queue_device_index.clone())?;
        let m_q = tape.concat_cols(dev, flow_sum)?;
        let h_q = params.queue_update.step(tape, m_q, s.queue)?;

        // Devices: sum of their queues' new states.
        let m_d = tape.scatter_add_rows(h_q, graph.queue_device_index.clone(), graph.n_devices())?;
        let h_d = params.device_update.step(tape, m_d, s.device)?;

        // Links: new state of the feeding queue.
        let m_l = tape.gather_rows(h_q, graph.link_queue_index.clone())?;
        let h_l = params.link_update.step(tape, m_l, s.link)?;

        s = HiddenStates {
            flow: h_f,
            link: h_l,
            queue: h_q,
            device: h_d,
        };
    }
    Ok(MessagePassingOutput { messages, states: s })
}

/// Per-flow sum of the readout over every hop message (`flows x n_targets`).
pub fn readout(
    tape: &mut Tape,
    params: &BoundParams,
    graph: &ExpandedGraph,
    messages: &[NodeId],
) -> Result<NodeId, ModelError> {
    let all = tape.concat_rows(messages)?;
    let per_hop = params.readout.forward(tape, all)?;
    Ok(tape.scatter_add_rows(per_hop, graph.hop_flow.clone(), graph.n_flows())?)
}

/// Outputs of [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Per window, `flows x n_targets` in model units.
    pub predictions: Vec<NodeId>,
    /// Queue/device states entering each window.
    pub carry_in: Vec<(NodeId, NodeId)>,
    /// Queue/device states leaving each window.
    pub carry_out: Vec<(NodeId, NodeId)>,
}

/// Runs the model over every window of one scenario.
pub fn forward(
    tape: &mut Tape,
    params: &BoundParams,
    graph: &ExpandedGraph,
    inputs: &ModelInputs,
    cfg: &ModelConfig,
) -> Result<ForwardOutput, ModelError> {
    if inputs.n_windows() == 0 {
        return Err(ModelError::NoWindows);
    }
    if cfg.mp_iterations == 0 {
        return Err(ModelError::NoIterations);
    }
    let queue_x = tape.constant(inputs.queue.clone());
    let (mut h_q, mut h_d) = init_static_states(tape, params, graph, queue_x)?;
    let mut out = ForwardOutput {
        predictions: Vec::with_capacity(inputs.n_windows()),
        carry_in: Vec::new(),
        carry_out: Vec::new(),
    };
    for (x_f, x_l) in inputs.flow.iter().zip(&inputs.link) {
        let x_f = tape.constant(x_f.clone());
        let x_l = tape.constant(x_l.clone());
        let h_f = params.flow_encoder.forward(tape, x_f)?;
        let h_l = params.link_encoder.forward(tape, x_l)?;
        out.carry_in.push((h_q, h_d));
        let mp = message_passing(
            tape,
            params,
            graph,
            HiddenStates {
                flow: h_f,
                link: h_l,
                queue: h_q,
                device: h_d,
            },
            cfg.mp_iterations,
        )?;
        out.predictions.push(readout(tape, params, graph, &mp.messages)?);
        h_q = mp.states.queue;
        h_d = mp.states.device;
        out.carry_out.push((h_q, h_d));
    }
    Ok(out)
}

/// Convenience: index lists shared by gather/scatter calls.
pub fn index(v: &[usize]) -> Arc<[usize]> {
    Arc::from(v)
}

#[cfg(test)]
mod tests;
