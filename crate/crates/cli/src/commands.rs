//! Subcommand implementations.

use std::fs;
use std::path::Path;

use toa_tomo_core::config::{PhantomChoice, RunConfig};
use toa_tomo_core::error::{Result, TomoError};
use toa_tomo_core::fdtd::simulate_observed;
use toa_tomo_core::geometry::{
    make_shepp_logan, make_two_ellipse, parse_phantom_spec, format_phantom_spec, rasterize,
    rasterize_mask, transducer_positions, PhantomSpec,
};
use toa_tomo_core::grid::Grid2;
use toa_tomo_core::io;
use toa_tomo_core::metrics::{resolution_bound, resolution_bound_exact};
use toa_tomo_core::projection::{forward_project_with_traces, ReferencePeaks, SqrtEpsImage};
use toa_tomo_core::recon::{run_reconstruction, AcquiredReference, ReconState};

use crate::plot;
use crate::Common;

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)?;
        cfg.apply_file(&text)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    let workers = if cfg.workers > 0 {
        cfg.workers
    } else {
        std::env::var("TOA_TOMO_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0)
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    builder
        .build()
        .map_err(|e| TomoError::SpecError(format!("failed to build worker pool: {e}")))
}

fn resolve_phantom(
    cfg: &RunConfig,
    builtin: Option<&str>,
    spec_path: Option<&Path>,
) -> Result<PhantomSpec> {
    if let Some(path) = spec_path {
        return parse_phantom_spec(&fs::read_to_string(path)?);
    }
    let choice = match builtin {
        Some(name) => PhantomChoice::Builtin(name.to_string()),
        None => cfg.phantom.clone(),
    };
    match choice {
        PhantomChoice::Builtin(name) => match name.as_str() {
            "shepp-logan" => Ok(make_shepp_logan(cfg.ring_axis_a, cfg.ring_axis_b)),
            "two-ellipse" => Ok(make_two_ellipse(cfg.ring_axis_a, cfg.ring_axis_b)),
            other => Err(TomoError::SpecError(format!("unknown builtin phantom: {other}"))),
        },
        PhantomChoice::File(path) => parse_phantom_spec(&fs::read_to_string(path)?),
    }
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mut text = String::new();
    for line in cfg.canonical_lines() {
        text.push_str(&line);
        text.push('\n');
    }
    text.push_str(&format!("workers = {}\n", cfg.workers));
    fs::write(dir.join("config.txt"), text)?;
    Ok(())
}

pub fn cmd_phantom(
    common: &Common,
    builtin: Option<&str>,
    spec_path: Option<&Path>,
    dx: Option<f64>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let spec = resolve_phantom(&cfg, builtin, spec_path)?;
    let dx = dx.unwrap_or_else(|| cfg.stages.last().map_or(0.003, |s| s.dx));
    if dx <= 0.0 {
        return Err(TomoError::SpecError(format!("dx must be positive, got {dx}")));
    }
    let medium = rasterize(&spec, dx, (cfg.domain, cfg.domain))?;
    fs::create_dir_all(&common.out)?;
    let hash = cfg.hash();
    io::write_medium_csv(&common.out.join("medium.csv"), &medium, hash)?;
    let (lo, hi) = medium.eps_range();
    io::write_pgm(&common.out.join("medium.pgm"), &medium.epsilon, lo, hi, hash)?;
    fs::write(common.out.join("phantom.spec"), format_phantom_spec(&spec))?;
    echo_config(&common.out, &cfg)?;
    println!(
        "phantom: {}x{} grid at dx={dx:e} m, eps in [{lo}, {hi}], written to {}",
        medium.geom.nx,
        medium.geom.ny,
        common.out.display()
    );
    Ok(())
}

pub fn cmd_acquire(common: &Common, dump_fields: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let spec = resolve_phantom(&cfg, None, None)?;
    let pool = build_pool(&cfg)?;
    let stage = cfg.stages.len() - 1;
    let dx = cfg.stages[stage].dx;
    let medium = rasterize(&spec, dx, (cfg.domain, cfg.domain))?;
    let mask = rasterize_mask(cfg.ring_axis_a, cfg.ring_axis_b, medium.geom);
    let truth = SqrtEpsImage::from_medium(&medium, mask);
    let pcfg = cfg.projection_config(stage);
    let ring = cfg.ring();
    let hash = cfg.acquisition_hash();

    fs::create_dir_all(&common.out)?;
    let (y0, traces) = pool.install(|| forward_project_with_traces(&truth, &ring, &pcfg))?;
    io::write_projection_csv(&common.out.join("y0.csv"), &y0, hash)?;
    io::write_projection_bin(&common.out.join("y0.bin"), &y0, hash)?;
    let trace_dir = common.out.join("traces");
    fs::create_dir_all(&trace_dir)?;
    for (s, row) in traces.iter().enumerate() {
        io::write_trace_archive(&trace_dir.join(io::trace_archive_name(s)), s, row, hash)?;
    }
    io::write_medium_csv(&common.out.join("truth_medium.csv"), &medium, hash)?;
    let (lo, hi) = medium.eps_range();
    io::write_pgm(&common.out.join("truth_medium.pgm"), &medium.epsilon, lo, hi, hash)?;
    fs::write(common.out.join("phantom.spec"), format_phantom_spec(&spec))?;
    echo_config(&common.out, &cfg)?;

    if let Some(every) = dump_fields {
        dump_field_snapshots(&cfg, &truth, every.max(1), &common.out, hash)?;
    }
    let valid = y0.valid.iter().filter(|&&v| v).count();
    println!(
        "acquired {} pairs ({} valid) at dx={dx:e} m into {}",
        y0.len(),
        valid,
        common.out.display()
    );
    Ok(())
}

fn dump_field_snapshots(
    cfg: &RunConfig,
    truth: &SqrtEpsImage,
    every: usize,
    out: &Path,
    hash: u64,
) -> Result<()> {
    let stage = cfg.stages.len() - 1;
    let pcfg = cfg.projection_config(stage);
    let ring = cfg.ring();
    let positions = transducer_positions(&ring)?;
    let probes = toa_tomo_core::fdtd::ProbeSet { positions: positions.clone() };
    let dir = out.join("fields");
    fs::create_dir_all(&dir)?;
    let medium = truth.to_medium();
    let mut result = Ok(());
    simulate_observed(&medium, positions[0], &pcfg.waveform, &probes, &pcfg.sim, |step, sim| {
        if result.is_err() || step % every != 0 {
            return;
        }
        let nx = sim.nx();
        let ny = sim.ny();
        let grid = Grid2::from_vec(nx, ny, sim.ez().to_vec());
        let max = grid.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
        let path = dir.join(format!("step_{step:06}.pgm"));
        result = io::write_pgm(&path, &grid, -max, max, hash);
    })?;
    result
}

fn load_reference(measured: &Path, cfg: &RunConfig) -> Result<AcquiredReference> {
    let bin = measured.join("y0.bin");
    let y0 = if bin.exists() {
        let (y0, hash) = io::read_projection_bin(&bin)?;
        if hash != cfg.acquisition_hash() {
            return Err(TomoError::CheckpointMismatch(format!(
                "measured data was acquired under geometry/source config {}, active is {}",
                io::hash_hex(hash),
                io::hash_hex(cfg.acquisition_hash())
            )));
        }
        y0
    } else {
        io::read_projection_csv(&measured.join("y0.csv"))?
    };
    let trace_dir = measured.join("traces");
    let mut traces = vec![Vec::new(); y0.sources];
    for s in 0..y0.sources {
        let path = trace_dir.join(io::trace_archive_name(s));
        let (src, row, _) = io::read_trace_archive(&path)?;
        if src != s {
            return Err(TomoError::SpecError(format!(
                "trace archive {} holds source {src}",
                path.display()
            )));
        }
        traces[s] = row;
    }
    let wf = cfg.waveform();
    let peaks = ReferencePeaks::from_traces(
        &traces,
        cfg.envelope_cutoff,
        cfg.threshold_fraction,
        wf.peak_time(),
    )?;
    Ok(AcquiredReference { y0, peaks })
}

pub fn cmd_reconstruct(
    common: &Common,
    measured: &Path,
    snapshot_every: Option<u64>,
    checkpoint_every: Option<u64>,
    resume_from: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(every) = snapshot_every {
        cfg.snapshot_every = every;
    }
    if let Some(every) = checkpoint_every {
        cfg.checkpoint_every = every;
    }
    let hash = cfg.hash();
    let pool = build_pool(&cfg)?;
    let reference = load_reference(measured, &cfg)?;
    if reference.y0.sources != cfg.ring_count || reference.y0.receivers != cfg.ring_count {
        return Err(TomoError::SpecError(format!(
            "measured projection is {}x{} but the ring has {} transducers",
            reference.y0.sources, reference.y0.receivers, cfg.ring_count
        )));
    }

    // Truth is only used for quality metrics, never for updates.
    let truth_path = measured.join("phantom.spec");
    let truth_spec = if truth_path.exists() {
        Some(parse_phantom_spec(&fs::read_to_string(&truth_path)?)?)
    } else {
        None
    };

    let mut state = match resume_from {
        Some(ckpt) => io::read_checkpoint(ckpt, hash)?,
        None => ReconState::new(&cfg)?,
    };

    fs::create_dir_all(&common.out)?;
    echo_config(&common.out, &cfg)?;
    let mut metrics =
        io::MetricsWriter::create(&common.out.join("metrics.csv"), hash, truth_spec.is_some())?;
    let snap_dir = common.out.join("snapshots");
    let ckpt_dir = common.out.join("checkpoints");
    fs::create_dir_all(&snap_dir)?;
    fs::create_dir_all(&ckpt_dir)?;

    let mut pinned_from: Option<u64> = None;
    let out_dir = common.out.clone();
    let cfg_ref = &cfg;
    pool.install(|| {
        run_reconstruction(&mut state, &reference, cfg_ref, truth_spec.as_ref(), |s, r| {
            metrics.append(r)?;
            if r.pinned && pinned_from.is_none() {
                pinned_from = Some(r.iteration);
            }
            if cfg_ref.snapshot_every > 0 && r.iteration % cfg_ref.snapshot_every == 0 {
                write_image(&snap_dir, &format!("iter_{:05}", r.iteration), &s.x, hash)?;
            }
            if cfg_ref.checkpoint_every > 0 && r.iteration % cfg_ref.checkpoint_every == 0 {
                let path = ckpt_dir.join(format!("iter_{:05}.ckpt", r.iteration));
                io::write_checkpoint(&path, s, hash)?;
            }
            Ok(())
        })
    })?;

    write_image(&out_dir, "final_image", &state.x, hash)?;
    io::write_checkpoint(&out_dir.join("final.ckpt"), &state, hash)?;
    fs::write(
        out_dir.join("pinning.txt"),
        match pinned_from {
            Some(it) => format!("pinned_from={it}\n"),
            None => "pinned_from=none\n".to_string(),
        },
    )?;
    let last = state.history.last();
    println!(
        "reconstruction finished at iteration {} (final residual {})",
        state.iteration - 1,
        last.map_or("n/a".to_string(), |r| format!("{:e}", r.e_after))
    );
    Ok(())
}

fn write_image(dir: &Path, stem: &str, x: &SqrtEpsImage, hash: u64) -> Result<()> {
    io::write_grid_csv(&dir.join(format!("{stem}.csv")), &x.values, x.geom, hash)?;
    let (lo, hi) = x
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    io::write_pgm(&dir.join(format!("{stem}.pgm")), &x.values, lo, hi, hash)?;
    Ok(())
}

pub fn cmd_report(run: &Path) -> Result<()> {
    let metrics_path = run.join("metrics.csv");
    if !metrics_path.exists() {
        return Err(TomoError::NoData(format!("{} not found", metrics_path.display())));
    }
    let rows = io::read_metrics_csv(&metrics_path)?;
    let subset_count = read_subset_count(run).unwrap_or(1);
    let pinned_from = read_pinned_from(run);
    let report_dir = run.join("report");
    fs::create_dir_all(&report_dir)?;

    let hash = 0u64; // derived outputs carry the run's hash via the inputs
    let mut residual_rows = String::from("iter,E,display_scale,E_display\n");
    let mut residual_points = Vec::new();
    for r in &rows {
        let scale = match pinned_from {
            Some(p) if r.iteration >= p => subset_count as f64,
            _ => 1.0,
        };
        residual_rows.push_str(&format!("{},{:e},{},{:e}\n", r.iteration, r.e, scale, r.e * scale));
        residual_points.push((r.iteration as f64, r.e * scale));
    }
    fs::write(report_dir.join("residual_curve.csv"), residual_rows)?;
    plot::render_curve(&report_dir.join("residual_curve.pgm"), &residual_points, hash)?;

    let with_nrmse: Vec<_> = rows.iter().filter_map(|r| r.nrmse.map(|n| (r, n))).collect();
    if !with_nrmse.is_empty() {
        let mut nrmse_rows = String::from("iter,nrmse\n");
        let mut nrmse_points = Vec::new();
        let mut scatter_rows = String::from("E,nrmse\n");
        let mut scatter_points = Vec::new();
        for (r, n) in &with_nrmse {
            nrmse_rows.push_str(&format!("{},{:e}\n", r.iteration, n));
            nrmse_points.push((r.iteration as f64, *n));
            scatter_rows.push_str(&format!("{:e},{:e}\n", r.e, n));
            scatter_points.push((r.e, *n));
        }
        fs::write(report_dir.join("nrmse_curve.csv"), nrmse_rows)?;
        plot::render_curve(&report_dir.join("nrmse_curve.pgm"), &nrmse_points, hash)?;
        fs::write(report_dir.join("residual_vs_nrmse.csv"), scatter_rows)?;
        plot::render_scatter(&report_dir.join("residual_vs_nrmse.pgm"), &scatter_points, hash)?;
    }
    println!(
        "report: {} iterations, {} with image error, written to {}",
        rows.len(),
        with_nrmse.len(),
        report_dir.display()
    );
    Ok(())
}

fn read_subset_count(run: &Path) -> Option<usize> {
    let text = fs::read_to_string(run.join("config.txt")).ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("recon.subset_count = ") {
            return rest.trim().parse().ok();
        }
    }
    None
}

fn read_pinned_from(run: &Path) -> Option<u64> {
    let text = fs::read_to_string(run.join("pinning.txt")).ok()?;
    let rest = text.trim().strip_prefix("pinned_from=")?;
    rest.parse().ok()
}

pub fn cmd_resolution_bound(tau: f64, epsilon: f64, delta_epsilon: f64) -> Result<()> {
    let s = resolution_bound(tau, epsilon, delta_epsilon)?;
    let s_exact = resolution_bound_exact(tau, epsilon, delta_epsilon)?;
    let invariant = s * delta_epsilon / (epsilon * epsilon.sqrt());
    println!("tau = {tau:e} s, eps = {epsilon}, delta_eps = {delta_epsilon}");
    println!("s = {s:e} m (linearized)");
    println!("s_exact = {s_exact:e} m");
    println!("s*delta_eps/(eps*sqrt(eps)) = 2*tau*c = {invariant:e} m");
    Ok(())
}

