//! Hot-path benchmarks: the FDTD stencil at the three stage resolutions,
//! the envelope/peak signal chain, and the regression solve.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toa_tomo_bench::{bench_sim, bench_trace, bench_waveform};
use toa_tomo_core::recon::solve_regression;
use toa_tomo_core::signal::{detect_first_peak, envelope};

fn fdtd_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("fdtd_step");
    // Node counts of the production stages over a 1 m domain.
    for &nodes in &[57usize, 112, 334] {
        let mut sim = bench_sim(nodes, 12.min(nodes / 6));
        let wf = bench_waveform();
        let src = sim.interior_node(0.0, 0.0).unwrap();
        let dt = sim.dt;
        group.throughput(Throughput::Elements((nodes * nodes) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(nodes), &nodes, |b, _| {
            b.iter(|| {
                let t = (sim.step_index() + 1) as f64 * dt;
                sim.step(&[(src, wf.value(t))]);
            });
        });
    }
    group.finish();
}

fn signal_chain(c: &mut Criterion) {
    let trace = bench_trace(4000);
    c.bench_function("envelope_and_first_peak_4k", |b| {
        b.iter(|| {
            let env = envelope(&trace, 4.5e8).unwrap();
            detect_first_peak(&env, 0.2)
        });
    });
}

fn regression(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let columns: Vec<Vec<f64>> = (0..48)
        .map(|_| (0..9000).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect())
        .collect();
    let target: Vec<f64> = (0..9000).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
    c.bench_function("solve_regression_48x9000", |b| {
        b.iter(|| solve_regression(&columns, &target, 1.0).unwrap());
    });
}

criterion_group!(benches, fdtd_step, signal_chain, regression);
criterion_main!(benches);
