//! Shared fixtures for the pipeline benchmarks.

use toa_tomo_core::fdtd::{gaussian_pulse, FdtdSim, SimConfig, SourceWaveform};
use toa_tomo_core::geometry::{rasterize, MediumMap, PhantomSpec};
use toa_tomo_core::signal::SignalTrace;

/// Uniform medium of the given grid size for stencil throughput runs.
pub fn bench_medium(nodes: usize, eps: f64) -> MediumMap {
    let dx = 0.003;
    let len = (nodes - 1) as f64 * dx;
    let spec = PhantomSpec {
        ellipses: vec![],
        background_epsilon: eps,
        outer_axis_a: len,
        outer_axis_b: len,
    };
    rasterize(&spec, dx, (len, len)).unwrap()
}

pub fn bench_sim(nodes: usize, boundary_cells: usize) -> FdtdSim {
    let medium = bench_medium(nodes, 53.0);
    let cfg = SimConfig {
        dx: 0.003,
        courant_factor: 0.5,
        record_period: 10e-12,
        duration: 1e-9,
        boundary_cells,
    };
    FdtdSim::new(&medium, &cfg).unwrap()
}

pub fn bench_waveform() -> SourceWaveform {
    gaussian_pulse(3.0e8, 4.5e8)
}

/// Energy trace with a couple of bursts, for the signal-chain benchmarks.
pub fn bench_trace(n: usize) -> SignalTrace {
    let tau = 10e-12;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * tau;
            let burst = |t0: f64, sigma: f64, amp: f64| {
                let env: f64 = (-((t - t0) / sigma).powi(2) / 2.0).exp();
                let carrier = (2.0 * std::f64::consts::PI * 3.0e8 * t).cos();
                amp * (env * carrier).powi(2)
            };
            burst(6e-9, 2e-9, 1.0) + burst(11e-9, 1.5e-9, 0.4)
        })
        .collect();
    SignalTrace { start_time: 0.0, sample_period: tau, samples }
}
