use super::{BurstSpec, Flow, TrafficProfile};

fn burst_times(b: &BurstSpec, packet_size: u32, duration: f64, out: &mut Vec<f64>) {
    let gap = f64::from(packet_size) / b.rate;
    let end = b.stop.min(duration);
    for k in 0u64.. {
        let burst_start = b.start + k as f64 * b.period;
        if burst_start >= end {
            break;
        }
        let burst_end = (burst_start + b.burst_duration).min(end);
        for j in 0u64.. {
            let t = burst_start + j as f64 * gap;
            if t >= burst_end {
                break;
            }
            out.push(t);
        }
    }
}

/// Generation times of a flow's packets in `[0, duration)`, ascending.
pub fn generate_packets(flow: &Flow, duration: f64) -> Vec<f64> {
    let mut out = Vec::new();
    match &flow.profile {
        TrafficProfile::ConstantBurst(b) => burst_times(b, flow.packet_size, duration, &mut out),
        TrafficProfile::MultiBurst { components } => {
            for b in components {
                burst_times(b, flow.packet_size, duration, &mut out);
            }
            out.sort_by(f64::total_cmp);
        }
        TrafficProfile::TraceReplay { timestamps } => {
            out.extend(timestamps.iter().copied().filter(|&t| (0.0..duration).contains(&t)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Hop;

    fn flow(profile: TrafficProfile) -> Flow {
        Flow {
            id: 0,
            src_device: 0,
            dst_device: 1,
            path: vec![Hop { link: 0, queue: 0 }],
            packet_size: 8000,
            profile,
        }
    }

    fn burst(rate: f64, burst_duration: f64, period: f64) -> BurstSpec {
        BurstSpec {
            rate,
            burst_duration,
            period,
            start: 0.0,
            stop: f64::INFINITY,
        }
    }

    #[test]
    fn slow_rate_admits_one_packet_per_burst() {
        // 8000 bits at 800 kbps: 10 ms between packets, longer than the 1 ms burst.
        let f = flow(TrafficProfile::ConstantBurst(burst(800e3, 1e-3, 10e-3)));
        assert_eq!(generate_packets(&f, 20e-3), vec![0.0, 10e-3]);
    }

    #[test]
    fn fast_rate_emits_back_to_back_within_burst() {
        // 8 Mbps: 1 ms gap, 3.5 ms burst -> t = 0, 1, 2, 3 ms; then next period at 10 ms.
        let f = flow(TrafficProfile::ConstantBurst(burst(8e6, 3.5e-3, 10e-3)));
        let t = generate_packets(&f, 12e-3);
        assert_eq!(t.len(), 6);
        assert!((t[3] - 3e-3).abs() < 1e-15);
        assert!((t[4] - 10e-3).abs() < 1e-15);
    }

    #[test]
    fn trace_is_filtered_to_duration() {
        let f = flow(TrafficProfile::TraceReplay {
            timestamps: vec![0.05, 0.15],
        });
        assert_eq!(generate_packets(&f, 0.1), vec![0.05]);
    }

    #[test]
    fn identical_components_duplicate_every_time() {
        let b = burst(800e3, 1e-3, 10e-3);
        let single = generate_packets(&flow(TrafficProfile::ConstantBurst(b.clone())), 50e-3);
        let double = generate_packets(
            &flow(TrafficProfile::MultiBurst {
                components: vec![b.clone(), b],
            }),
            50e-3,
        );
        let expected: Vec<f64> = single.iter().flat_map(|&t| [t, t]).collect();
        assert_eq!(double, expected);
    }

    #[test]
    fn start_and_stop_clip_emission() {
        let mut b = burst(8e6, 10e-3, 10e-3);
        b.start = 2e-3;
        b.stop = 5e-3;
        let t = generate_packets(&flow(TrafficProfile::ConstantBurst(b)), 1.0);
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|&x| (2e-3..5e-3).contains(&x)));
    }
}
