//! Property tests for the pure-function invariants: clamp bounds, subset
//! partitions, rasterization determinism and peak-detection equivariances.

use proptest::prelude::*;

use toa_tomo_core::geometry::{rasterize, Ellipse, PhantomSpec};
use toa_tomo_core::projection::make_subsets;
use toa_tomo_core::signal::{detect_first_peak, nearest_delta_from_times, SignalTrace};

proptest! {
    /// |nearest_peak_delta| never exceeds the clamp, for any peak list.
    #[test]
    fn clamp_bounds_every_delta(
        peaks in prop::collection::vec(-5e-8f64..5e-8, 1..12),
        t in -5e-8f64..5e-8,
        clamp in 1e-12f64..5e-9,
    ) {
        let d = nearest_delta_from_times(peaks.iter().copied(), t, clamp).unwrap();
        prop_assert!(d.abs() <= clamp);
        // And the unclamped nearest offset is indeed the nearest.
        let nearest = peaks
            .iter()
            .map(|p| p - t)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap();
        prop_assert_eq!(d, nearest.clamp(-clamp, clamp));
    }

    /// Interleaved subsets partition the sources with sizes within one.
    #[test]
    fn subsets_partition_sources(count in 2usize..400, subsets in 1usize..40) {
        prop_assume!(subsets <= count);
        let p = make_subsets(count, subsets).unwrap();
        let mut seen = vec![0usize; count];
        let mut sizes = Vec::new();
        for id in 0..subsets {
            let members: Vec<usize> = p.sources_in(id).collect();
            sizes.push(members.len());
            for s in members {
                seen[s] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let lo = sizes.iter().min().unwrap();
        let hi = sizes.iter().max().unwrap();
        prop_assert!(hi - lo <= 1);
    }

    /// Amplitude scaling never moves the detected peak; whole-sample shifts
    /// move it by exactly the shift.
    #[test]
    fn peak_detection_equivariances(
        t0_frac in 0.25f64..0.75,
        sigma_samples in 3.0f64..20.0,
        scale in 1e-6f64..1e6,
        shift in 0usize..40,
    ) {
        let n = 256;
        let tau = 1e-10;
        let t0 = t0_frac * n as f64 * tau;
        let sigma = sigma_samples * tau;
        let base: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * tau;
                (-((t - t0) / sigma).powi(2) / 2.0).exp()
            })
            .collect();
        let trace = |samples: Vec<f64>| SignalTrace {
            start_time: 0.0,
            sample_period: tau,
            samples,
        };
        let p0 = detect_first_peak(&trace(base.clone()), 0.2);
        prop_assert!(p0.valid);
        let scaled: Vec<f64> = base.iter().map(|v| v * scale).collect();
        let ps = detect_first_peak(&trace(scaled), 0.2);
        prop_assert!((ps.time - p0.time).abs() < 1e-18);
        let mut shifted = vec![0.0; shift];
        shifted.extend_from_slice(&base[..n - shift]);
        let ph = detect_first_peak(&trace(shifted), 0.2);
        prop_assert!((ph.time - p0.time - shift as f64 * tau).abs() < 1e-15);
    }

    /// Rasterization is a pure point function: permuting evaluation order or
    /// repeating it cannot change the result, and every value comes from the
    /// declared regions.
    #[test]
    fn rasterization_is_deterministic(
        cx in -0.05f64..0.05,
        cy in -0.05f64..0.05,
        a in 0.02f64..0.08,
        b in 0.02f64..0.08,
        rot in 0.0f64..3.14,
    ) {
        let spec = PhantomSpec {
            ellipses: vec![Ellipse {
                center_x: cx,
                center_y: cy,
                semi_axis_a: a,
                semi_axis_b: b,
                rotation: rot,
                epsilon: 16.0,
            }],
            background_epsilon: 53.0,
            outer_axis_a: 0.3,
            outer_axis_b: 0.3,
        };
        let m1 = rasterize(&spec, 0.01, (0.3, 0.3)).unwrap();
        let m2 = rasterize(&spec, 0.01, (0.3, 0.3)).unwrap();
        prop_assert_eq!(&m1.epsilon, &m2.epsilon);
        for (idx, &v) in m1.epsilon.iter().enumerate() {
            let (i, j) = (idx % m1.geom.nx, idx / m1.geom.nx);
            let (x, y) = m1.geom.node_pos(i, j);
            let expected = if spec.ellipses[0].contains(x, y) { 16.0 } else { 53.0 };
            prop_assert_eq!(v, expected);
        }
    }
}
