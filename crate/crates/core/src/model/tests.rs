use super::*;
use crate::nn::Normalizer;
use crate::scenario::tests::three_node;
use crate::scenario::{compute_window_features, Flow, Hop, Scenario, TrafficProfile};

fn two_flows() -> Scenario {
    let mut s = three_node();
    s.flows.push(Flow {
        id: 1,
        src_device: 2,
        dst_device: 0,
        path: vec![Hop { link: 3, queue: 3 }, Hop { link: 1, queue: 1 }],
        packet_size: 12000,
        profile: TrafficProfile::TraceReplay {
            timestamps: vec![0.01, 0.02, 0.31, 0.32, 0.33],
        },
    });
    s
}

fn prepared(s: &Scenario, cfg: &ModelConfig) -> PreparedScenario {
    let wf = compute_window_features(s);
    PreparedScenario::from_features(s, &wf, &Normalizer::fit([&wf]), cfg).unwrap()
}

fn zeroed(cfg: &ModelConfig) -> ModelParams {
    let mut p = ModelParams::init(cfg, 0);
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    p
}

fn small() -> ModelConfig {
    ModelConfig {
        state_dim: 4,
        mp_iterations: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn parameter_store_has_eight_blocks_of_fixed_size() {
    let cfg = small();
    let p = ModelParams::init(&cfg, 3);
    let names: Vec<_> = p.blocks().iter().map(|(n, _)| *n).collect();
    assert_eq!(names, BLOCK_NAMES);
    p.check(&cfg).unwrap();
    let json = serde_json::to_value(&p).unwrap();
    let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    let mut want: Vec<_> = BLOCK_NAMES.iter().map(|s| s.to_string()).collect();
    want.sort();
    assert_eq!(keys, want);
}

#[test]
fn zero_parameters_give_zero_states_and_ln2_per_hop() {
    let cfg = small();
    let params = zeroed(&cfg);
    let s = two_flows();
    let prep = prepared(&s, &cfg);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward(&mut tape, &bound, &prep.graph, &prep.inputs, &cfg).unwrap();
    for &(q, d) in &out.carry_out {
        assert!(tape.value(q).data().iter().all(|&x| x == 0.0));
        assert!(tape.value(d).data().iter().all(|&x| x == 0.0));
    }
    // Every flow has two hops; each hop contributes softplus(0).
    for &p in &out.predictions {
        for &v in tape.value(p).data() {
            assert_eq!(v, 2.0 * std::f64::consts::LN_2);
        }
    }
}

#[test]
fn zero_iterations_is_rejected() {
    let cfg = small();
    let params = ModelParams::init(&cfg, 1);
    let prep = prepared(&three_node(), &cfg);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let h = tape.constant(Tensor::zeros(&[1, 4]));
    let hl = tape.constant(Tensor::zeros(&[4, 4]));
    let hd = tape.constant(Tensor::zeros(&[3, 4]));
    let states = HiddenStates {
        flow: h,
        link: hl,
        queue: hl,
        device: hd,
    };
    let err = message_passing(&mut tape, &bound, &prep.graph, states, 0).unwrap_err();
    assert!(matches!(err, ModelError::NoIterations));
}

#[test]
fn readout_sums_equal_messages_along_the_path() {
    let cfg = small();
    let params = ModelParams::init(&cfg, 5);
    let g = ExpandedGraph::build(&three_node());
    let m = Tensor::matrix(1, 4, vec![0.3, -0.2, 0.7, 0.1]);
    let single = params.readout.forward(&m).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let msgs: Vec<NodeId> = (0..2).map(|_| tape.constant(m.clone())).collect();
    let y = readout(&mut tape, &bound, &g, &msgs).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(single.data()) {
        assert!((a - 2.0 * b).abs() <= 1e-15 * b.abs().max(1.0));
    }
}

#[test]
fn carryover_states_are_bit_identical() {
    let cfg = small();
    let params = ModelParams::init(&cfg, 7);
    let prep = prepared(&two_flows(), &cfg);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward(&mut tape, &bound, &prep.graph, &prep.inputs, &cfg).unwrap();
    for t in 1..out.carry_in.len() {
        let (qi, di) = out.carry_in[t];
        let (qo, d_o) = out.carry_out[t - 1];
        assert_eq!(tape.value(qi), tape.value(qo));
        assert_eq!(tape.value(di), tape.value(d_o));
    }
}

#[test]
fn repeating_a_scenario_in_time_does_not_repeat_predictions() {
    let cfg = small();
    let params = ModelParams::init(&cfg, 11);
    let s = two_flows();
    let mut doubled = s.clone();
    doubled.duration_s = 2.0;
    for f in &mut doubled.flows {
        if let TrafficProfile::TraceReplay { timestamps } = &mut f.profile {
            let shifted: Vec<f64> = timestamps.iter().map(|t| t + 1.0).collect();
            timestamps.extend(shifted);
        }
    }
    let wf = compute_window_features(&doubled);
    let norm = Normalizer::fit([&wf]);
    let prep = PreparedScenario::from_features(&doubled, &wf, &norm, &cfg).unwrap();
    assert_eq!(prep.inputs.flow[0], prep.inputs.flow[10]);
    let p = infer(&params, &cfg, &prep.graph, &prep.inputs).unwrap();
    let diff: f64 = (0..10)
        .flat_map(|w| {
            p.get(0, w)
                .iter()
                .zip(p.get(0, w + 10))
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .sum();
    assert!(diff > 1e-12, "carryover had no effect");
}

#[test]
fn graph_size_not_packet_count_sets_the_work() {
    let cfg = small();
    let params = ModelParams::init(&cfg, 2);
    let tape_len = |s: &Scenario| {
        let prep = prepared(s, &cfg);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        forward(&mut tape, &bound, &prep.graph, &prep.inputs, &cfg).unwrap();
        tape.len()
    };
    let sparse = two_flows();
    let mut dense = two_flows();
    dense.flows[0].profile = TrafficProfile::TraceReplay {
        timestamps: (0..900).map(|i| i as f64 * 1e-3).collect(),
    };
    assert_eq!(tape_len(&sparse), tape_len(&dense));
}

#[test]
fn predictions_are_positive_and_serialize_by_flow_then_window() {
    let cfg = small();
    let s = two_flows();
    let wf = compute_window_features(&s);
    let ckpt = Checkpoint::new(
        cfg.clone(),
        s.window_s,
        Normalizer::fit([&wf]),
        ModelParams::init(&cfg, 4),
    );
    let p = predict(&ckpt, &s).unwrap();
    assert_eq!(p.values.len(), 2 * 10 * N_TARGETS);
    assert!(p.values.iter().all(|&v| v > 0.0));
    let json: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
    let cell = &json["1"]["3"];
    assert_eq!(cell["jitter"]["p99"].as_f64().unwrap(), p.by_id(1, 3).unwrap()[9]);
    assert_eq!(cell["delay"]["avg"].as_f64().unwrap(), p.by_id(1, 3).unwrap()[0]);
}

#[test]
fn window_mismatch_names_trained_size() {
    let cfg = small();
    let s = three_node();
    let wf = compute_window_features(&s);
    let ckpt = Checkpoint::new(cfg.clone(), 0.2, Normalizer::fit([&wf]), ModelParams::init(&cfg, 4));
    let err = predict(&ckpt, &s).unwrap_err();
    assert!(matches!(err, ModelError::WindowMismatch { .. }));
    assert!(err.to_string().contains("0.2 s"), "{err}");
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let cfg = small();
    let s = three_node();
    let wf = compute_window_features(&s);
    let ckpt = Checkpoint::new(cfg.clone(), 0.1, Normalizer::fit([&wf]), ModelParams::init(&cfg, 9));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(predict(&back, &s).unwrap(), predict(&ckpt, &s).unwrap());
}

#[test]
fn checkpoint_with_wrong_block_shape_is_rejected() {
    let cfg = small();
    let s = three_node();
    let wf = compute_window_features(&s);
    let mut ckpt = Checkpoint::new(cfg.clone(), 0.1, Normalizer::fit([&wf]), ModelParams::init(&cfg, 9));
    ckpt.config.state_dim = 5;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&ckpt, &path).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Shape { .. })));
}
