//! Iterative learned-update reconstruction: random training perturbations,
//! least-squares combination weights, residual-gated image updates, ordered
//! subsets, training-pair reuse, the multi-resolution schedule and the
//! oscillation fallback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Result, TomoError};
use crate::filters::{gaussian_blur_grid, median_blur_grid};
use crate::geometry::{rasterize, rasterize_mask, PhantomSpec, TransducerRing};
use crate::grid::{resample_bilinear, Grid2, GridGeometry};
use crate::metrics::{nrmse, residual_error};
use crate::projection::{
    forward_project, make_subsets, projection_delta, ProjectionConfig, ProjectionVector,
    ReferencePeaks, SqrtEpsImage, SubsetPartition,
};

/// Random training-image generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// White noise smoothed by a Gaussian of randomized width.
    Noise,
    /// Current image minus a median- or Gaussian-filtered copy of itself.
    Residual,
    /// Elementwise product of a Noise and a Residual image.
    Product,
}

impl Scheme {
    fn code(self) -> u8 {
        match self {
            Scheme::Noise => 1,
            Scheme::Residual => 2,
            Scheme::Product => 3,
        }
    }
}

/// Schemes allowed at an iteration given the configured gates.
pub fn available_schemes(iteration: u64, cfg: &RunConfig) -> Vec<Scheme> {
    let mut out = vec![Scheme::Noise];
    if iteration > cfg.scheme_residual_after {
        out.push(Scheme::Residual);
    }
    if iteration > cfg.scheme_product_after {
        out.push(Scheme::Product);
    }
    out
}

/// One regression column: an image perturbation and the projection change it
/// induced, tied to the subset and stage it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Perturbation on the image grid, zero outside the mask.
    pub dx_image: Grid2<f64>,
    /// Arrival-time deltas `f(x + dx) - f(x)` per pair (full pair indexing;
    /// only the pairs of `subset` are valid).
    pub dy: Vec<f64>,
    pub dy_valid: Vec<bool>,
    pub subset: usize,
    pub stage: usize,
    /// Amplitude cap the perturbation was generated under.
    pub cap: f64,
}

/// Regression output: combination weights for the training columns.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateWeights {
    pub v: Vec<f64>,
    pub lambda: f64,
    /// Evaluation residual achieved by the update, once known.
    pub achieved_residual: Option<f64>,
}

/// `V = argmin || lambda * target - Y V ||_2` via damped normal equations.
///
/// Rank deficiency is resolved by adding `1e-9 * trace(Y^T Y) / L` to the
/// diagonal, which keeps collinear random columns solvable while perturbing
/// well-conditioned systems below 1e-8 relative.
pub fn solve_regression(
    columns: &[Vec<f64>],
    target: &[f64],
    lambda: f64,
) -> Result<UpdateWeights> {
    let l = columns.len();
    assert!(l >= 1, "regression needs at least one column");
    for c in columns {
        assert_eq!(c.len(), target.len(), "column/target length mismatch");
    }
    let mut gram = vec![0.0f64; l * l];
    let mut rhs = vec![0.0f64; l];
    for i in 0..l {
        for k in i..l {
            let dot: f64 = columns[i].iter().zip(&columns[k]).map(|(a, b)| a * b).sum();
            gram[i * l + k] = dot;
            gram[k * l + i] = dot;
        }
        rhs[i] = lambda * columns[i].iter().zip(target).map(|(a, b)| a * b).sum::<f64>();
    }
    let trace: f64 = (0..l).map(|i| gram[i * l + i]).sum();
    if !(trace > 0.0) {
        return Err(TomoError::ZeroDesignMatrix);
    }
    let damp = 1e-9 * trace / l as f64;
    for i in 0..l {
        gram[i * l + i] += damp;
    }
    let v = cholesky_solve(&mut gram, &rhs, l).ok_or(TomoError::ZeroDesignMatrix)?;
    Ok(UpdateWeights { v, lambda, achieved_residual: None })
}

/// In-place Cholesky factorization and solve for an SPD system.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i * n + k] * y[k];
        }
        y[i] = sum / a[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= a[k * n + i] * x[k];
        }
        x[i] = sum / a[i * n + i];
    }
    Some(x)
}

/// Generate one training perturbation. Zero outside the mask, max absolute
/// value equal to the iteration's cap (unless the raw image is identically
/// zero, in which case it stays zero).
pub fn gen_training_image(
    scheme: Scheme,
    iteration: u64,
    current: &SqrtEpsImage,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Grid2<f64>> {
    let allowed = available_schemes(iteration, cfg);
    if !allowed.contains(&scheme) {
        return Err(TomoError::SchemeNotAvailable { scheme: scheme.code(), iteration });
    }
    let raw = raw_training_image(scheme, iteration, current, cfg, rng)?;
    // A raw image that is zero up to roundoff (a self-difference of an
    // already-smooth image) must stay zero instead of amplifying noise to
    // the cap.
    let scale = current.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let zero_floor = match scheme {
        Scheme::Noise => 1e-30,
        Scheme::Residual | Scheme::Product => 1e-12 * scale.max(1.0),
    };
    Ok(mask_and_rescale(raw, &current.mask, cfg.cap_at(iteration), zero_floor))
}

fn raw_training_image(
    scheme: Scheme,
    iteration: u64,
    current: &SqrtEpsImage,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Grid2<f64>> {
    let geom = current.geom;
    match scheme {
        Scheme::Noise => {
            let (lo, hi) = cfg.fwhm_range_at(iteration);
            let fwhm = lo + (hi - lo) * rng.gen::<f64>();
            let sigma_cells = fwhm / (2.0 * (2.0f64.ln() * 2.0).sqrt()) / geom.dx;
            let mut noise = Grid2::filled(geom.nx, geom.ny, 0.0);
            for v in noise.as_mut_slice() {
                *v = 2.0 * rng.gen::<f64>() - 1.0;
            }
            Ok(gaussian_blur_grid(&noise, sigma_cells))
        }
        Scheme::Residual => {
            let filtered = if rng.gen::<bool>() {
                let (lo, hi) = cfg.residual_median_cells;
                let window = rng.gen_range(lo..=hi);
                median_blur_grid(&current.values, window)
            } else {
                let (lo, hi) = cfg.residual_gaussian_fwhm;
                let fwhm = lo + (hi - lo) * rng.gen::<f64>();
                let sigma_cells = fwhm / (2.0 * (2.0f64.ln() * 2.0).sqrt()) / geom.dx;
                gaussian_blur_grid(&current.values, sigma_cells)
            };
            let mut diff = current.values.clone();
            for (d, f) in diff.as_mut_slice().iter_mut().zip(filtered.iter()) {
                *d -= f;
            }
            Ok(diff)
        }
        Scheme::Product => {
            let a = gen_training_image(Scheme::Noise, iteration, current, cfg, rng)?;
            let b = gen_training_image(Scheme::Residual, iteration, current, cfg, rng)?;
            let mut out = a;
            for (x, y) in out.as_mut_slice().iter_mut().zip(b.iter()) {
                *x *= y;
            }
            Ok(out)
        }
    }
}

fn mask_and_rescale(
    mut img: Grid2<f64>,
    mask: &Grid2<bool>,
    cap: f64,
    zero_floor: f64,
) -> Grid2<f64> {
    let mut max_abs = 0.0f64;
    for (v, &m) in img.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        if !m {
            *v = 0.0;
        } else if v.abs() > max_abs {
            max_abs = v.abs();
        }
    }
    if max_abs > zero_floor {
        let scale = cap / max_abs;
        for v in img.as_mut_slice() {
            *v *= scale;
        }
    } else if max_abs > 0.0 {
        for v in img.as_mut_slice() {
            *v = 0.0;
        }
    }
    img
}

/// One row of the residual history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRecord {
    pub iteration: u64,
    pub stage: usize,
    /// Subset the regression target was built on.
    pub subset: usize,
    /// Subset residuals were evaluated on (differs once pinned).
    pub eval_subset: usize,
    pub e_before: f64,
    pub e_after: f64,
    pub accepted: bool,
    pub fresh_pairs: usize,
    pub valid_pairs: usize,
    pub pinned: bool,
    /// Cap-weighted sum of |V|, the guaranteed bound on the update.
    pub step_bound: f64,
    /// Max |X V| actually applied.
    pub step_max: f64,
    pub nrmse: Option<f64>,
}

/// Measured reference: arrival times plus per-pair envelope peak lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquiredReference {
    pub y0: ProjectionVector,
    pub peaks: ReferencePeaks,
}

/// Full reconstruction state; checkpointable and bit-reproducible.
pub struct ReconState {
    pub x: SqrtEpsImage,
    /// Next iteration to run, 1-based.
    pub iteration: u64,
    pub stage: usize,
    pub subset_rotation: usize,
    pub history: Vec<ResidualRecord>,
    /// Reusable training pairs of the current stage, per subset.
    pub pool: Vec<Vec<TrainingPair>>,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub pinned_eval_subset: Option<usize>,
    /// Evaluation residual of the current image: (subset, E, valid pairs).
    pub cached_eval: Option<(usize, f64, usize)>,
}

impl ReconState {
    /// Fresh state at the first stage: uniform image inside the mask.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        if cfg.stages.is_empty() {
            return Err(TomoError::SpecError("no resolution stages configured".into()));
        }
        let s = &cfg.stages[0];
        let geom = GridGeometry::for_area(cfg.domain, cfg.domain, s.dx);
        let mask = rasterize_mask(cfg.ring_axis_a, cfg.ring_axis_b, geom);
        let x = SqrtEpsImage::uniform(
            geom,
            mask,
            cfg.initial_epsilon.sqrt(),
            cfg.exterior_epsilon.sqrt(),
        );
        Ok(ReconState {
            x,
            iteration: 1,
            stage: 0,
            subset_rotation: 0,
            history: Vec::new(),
            pool: vec![Vec::new(); cfg.subset_count],
            seed: cfg.seed,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pinned_eval_subset: None,
            cached_eval: None,
        })
    }
}

/// Resample the image to the next stage's grid and reset stage-local data.
/// Training pairs never cross stages; the mask is re-rasterized at the new
/// spacing.
pub fn advance_stage(state: &mut ReconState, next_stage: usize, cfg: &RunConfig) {
    let s = &cfg.stages[next_stage];
    let geom = GridGeometry::for_area(cfg.domain, cfg.domain, s.dx);
    let values = resample_bilinear(&state.x.values, state.x.geom, geom);
    let mask = rasterize_mask(cfg.ring_axis_a, cfg.ring_axis_b, geom);
    let mut x = SqrtEpsImage { geom, values, mask };
    x.enforce_bounds(cfg.exterior_epsilon.sqrt());
    state.x = x;
    state.stage = next_stage;
    state.pool = vec![Vec::new(); cfg.subset_count];
    state.cached_eval = None;
}

/// Trailing-window oscillation test: no net decrease (least-squares slope
/// not below zero, up to float noise) while the relative spread of the
/// residual exceeds `variance_floor`.
pub fn detect_oscillation(residuals: &[f64], variance_floor: f64) -> bool {
    let n = residuals.len();
    if n < 2 {
        return false;
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return false;
    }
    let t_mean = (n as f64 - 1.0) / 2.0;
    let mut cov = 0.0f64;
    let mut var_t = 0.0f64;
    let mut var_r = 0.0f64;
    for (k, &r) in residuals.iter().enumerate() {
        let dt = k as f64 - t_mean;
        let dr = r - mean;
        cov += dt * dr;
        var_t += dt * dt;
        var_r += dr * dr;
    }
    let slope = cov / var_t;
    let spread = (var_r / n as f64).sqrt();
    slope >= -1e-12 * mean && spread > variance_floor * mean
}

fn evaluate_residual(
    x: &SqrtEpsImage,
    subset: usize,
    reference: &AcquiredReference,
    ring: &TransducerRing,
    pcfg: &ProjectionConfig,
    partition: &SubsetPartition,
    clamp: f64,
) -> Result<(f64, usize)> {
    let y = forward_project(x, ring, pcfg, Some((subset, partition)))?;
    let (delta, valid) = projection_delta(&reference.y0, &y, &reference.peaks, clamp);
    match residual_error(&delta, &valid) {
        Ok(r) => Ok((r.e, r.valid_pair_count)),
        Err(TomoError::NoValidPairs) => Err(TomoError::SubsetUnusable(subset)),
        Err(e) => Err(e),
    }
}

/// Run one iteration: build the clamped subset delta, grow a batch of fresh
/// training pairs until the regression update lowers the evaluation residual
/// (or the fresh-pair budget runs out), and advance the subset rotation.
pub fn iterate(
    state: &mut ReconState,
    reference: &AcquiredReference,
    cfg: &RunConfig,
    truth: Option<&SqrtEpsImage>,
) -> Result<()> {
    let iteration = state.iteration;
    let stage = state.stage;
    let pcfg = cfg.projection_config(stage);
    let ring = cfg.ring();
    let partition = make_subsets(cfg.ring_count, cfg.subset_count)?;
    let subset = state.subset_rotation;
    let exterior = cfg.exterior_epsilon.sqrt();
    let cap = cfg.cap_at(iteration);

    let yn = forward_project(&state.x, &ring, &pcfg, Some((subset, &partition)))?;
    let (delta0, valid0) = projection_delta(&reference.y0, &yn, &reference.peaks, cfg.clamp);
    let target_rows: Vec<usize> =
        (0..delta0.len()).filter(|&k| valid0[k]).collect();
    if target_rows.is_empty() {
        return Err(TomoError::SubsetUnusable(subset));
    }

    let eval_subset = state.pinned_eval_subset.unwrap_or(subset);
    let (e_before, valid_before) = if eval_subset == subset {
        let r = residual_error(&delta0, &valid0)?;
        (r.e, r.valid_pair_count)
    } else if let Some((s, e, c)) = state.cached_eval {
        if s == eval_subset {
            (e, c)
        } else {
            evaluate_residual(&state.x, eval_subset, reference, &ring, &pcfg, &partition, cfg.clamp)?
        }
    } else {
        evaluate_residual(&state.x, eval_subset, reference, &ring, &pcfg, &partition, cfg.clamp)?
    };

    let schemes = available_schemes(iteration, cfg);
    let mut fresh: Vec<TrainingPair> = Vec::new();
    let mut accepted = false;
    let mut outcome: Option<(SqrtEpsImage, f64, usize)> = None;
    let mut step_bound = 0.0f64;
    let mut step_max = 0.0f64;

    while fresh.len() < cfg.fresh_budget {
        let n_new = cfg.batch_size.min(cfg.fresh_budget - fresh.len());
        // Random draws happen here, sequentially, before any parallel work.
        let mut images = Vec::with_capacity(n_new);
        for _ in 0..n_new {
            let scheme = schemes[state.rng.gen_range(0..schemes.len())];
            images.push(gen_training_image(scheme, iteration, &state.x, cfg, &mut state.rng)?);
        }
        let current = &state.x;
        let deltas: Vec<(Vec<f64>, Vec<bool>)> = images
            .par_iter()
            .map(|img| {
                let mut perturbed = current.clone();
                for (v, d) in perturbed.values.as_mut_slice().iter_mut().zip(img.iter()) {
                    *v += d;
                }
                perturbed.enforce_bounds(exterior);
                let yp = forward_project(&perturbed, &ring, &pcfg, Some((subset, &partition)))?;
                let mut dy = vec![0.0f64; yn.len()];
                let mut dv = vec![false; yn.len()];
                for k in 0..yn.len() {
                    if yp.valid[k] && yn.valid[k] {
                        dy[k] = yp.arrival[k] - yn.arrival[k];
                        dv[k] = true;
                    }
                }
                Ok((dy, dv))
            })
            .collect::<Result<_>>()?;
        for (img, (dy, dy_valid)) in images.into_iter().zip(deltas) {
            fresh.push(TrainingPair { dx_image: img, dy, dy_valid, subset, stage, cap });
        }

        let columns_src: Vec<&TrainingPair> =
            state.pool[subset].iter().chain(fresh.iter()).collect();
        let rows: Vec<usize> = target_rows
            .iter()
            .copied()
            .filter(|&k| columns_src.iter().all(|p| p.dy_valid[k]))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let target: Vec<f64> = rows.iter().map(|&k| delta0[k]).collect();
        let columns: Vec<Vec<f64>> = columns_src
            .iter()
            .map(|p| rows.iter().map(|&k| p.dy[k]).collect())
            .collect();
        let weights = match solve_regression(&columns, &target, cfg.lambda) {
            Ok(w) => w,
            Err(TomoError::ZeroDesignMatrix) => continue,
            Err(e) => return Err(e),
        };

        // Candidate image x' = x + X V, clipped and frozen outside the mask.
        let mut combo = Grid2::filled(state.x.geom.nx, state.x.geom.ny, 0.0f64);
        for (pair, &w) in columns_src.iter().zip(&weights.v) {
            for (c, d) in combo.as_mut_slice().iter_mut().zip(pair.dx_image.iter()) {
                *c += w * d;
            }
        }
        step_bound = columns_src
            .iter()
            .zip(&weights.v)
            .map(|(p, &w)| p.cap * w.abs())
            .sum();
        step_max = combo.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut candidate = state.x.clone();
        for (v, d) in candidate.values.as_mut_slice().iter_mut().zip(combo.iter()) {
            *v += d;
        }
        candidate.enforce_bounds(exterior);

        let (e_after, valid_after) = evaluate_residual(
            &candidate,
            eval_subset,
            reference,
            &ring,
            &pcfg,
            &partition,
            cfg.clamp,
        )?;
        if e_after < e_before {
            accepted = true;
            outcome = Some((candidate, e_after, valid_after));
            break;
        }
    }

    let fresh_count = fresh.len();
    let (e_after, valid_after) = if let Some((candidate, e, c)) = outcome {
        state.x = candidate;
        state.cached_eval = Some((eval_subset, e, c));
        (e, c)
    } else {
        state.cached_eval = Some((eval_subset, e_before, valid_before));
        (e_before, valid_before)
    };

    let nrmse_val = match truth {
        Some(t) => Some(nrmse(&state.x, t)?),
        None => None,
    };
    state.history.push(ResidualRecord {
        iteration,
        stage,
        subset,
        eval_subset,
        e_before,
        e_after,
        accepted,
        fresh_pairs: fresh_count,
        valid_pairs: valid_after,
        pinned: state.pinned_eval_subset.is_some(),
        step_bound,
        step_max,
        nrmse: nrmse_val,
    });

    let pool = &mut state.pool[subset];
    pool.extend(fresh);
    if pool.len() > cfg.pool_cap {
        let excess = pool.len() - cfg.pool_cap;
        pool.drain(..excess);
    }

    // Oscillation fallback: once the trailing residual window shows spread
    // without trend, pin evaluation to one subset for the rest of the run.
    if state.pinned_eval_subset.is_none() {
        let window = cfg.oscillation_window();
        if window >= 2 * cfg.subset_count && state.history.len() >= window {
            let tail: Vec<f64> = state.history[state.history.len() - window..]
                .iter()
                .map(|r| r.e_after)
                .collect();
            if detect_oscillation(&tail, cfg.variance_floor) {
                state.pinned_eval_subset = Some(0);
                state.cached_eval = None;
            }
        }
    }

    state.subset_rotation = (subset + 1) % cfg.subset_count;
    state.iteration += 1;
    Ok(())
}

/// Drive the staged iteration loop from the state's current position to the
/// end of the schedule, invoking `on_iteration` after every iteration.
pub fn run_reconstruction(
    state: &mut ReconState,
    reference: &AcquiredReference,
    cfg: &RunConfig,
    truth_spec: Option<&PhantomSpec>,
    mut on_iteration: impl FnMut(&ReconState, &ResidualRecord) -> Result<()>,
) -> Result<()> {
    let total = cfg.total_iterations();
    let mut truth: Option<SqrtEpsImage> = None;
    let mut truth_stage = usize::MAX;
    while state.iteration <= total {
        let n = state.iteration;
        let stage = cfg
            .stage_for_iteration(n)
            .ok_or_else(|| TomoError::SpecError(format!("no stage covers iteration {n}")))?;
        if stage != state.stage {
            advance_stage(state, stage, cfg);
        }
        if truth_stage != stage {
            truth = match truth_spec {
                Some(spec) => {
                    let medium = rasterize(spec, cfg.stages[stage].dx, (cfg.domain, cfg.domain))?;
                    let mask = rasterize_mask(cfg.ring_axis_a, cfg.ring_axis_b, medium.geom);
                    Some(SqrtEpsImage::from_medium(&medium, mask))
                }
                None => None,
            };
            truth_stage = stage;
        }
        iterate(state, reference, cfg, truth.as_ref())?;
        let record = *state.history.last().expect("iterate appends a record");
        on_iteration(state, &record)?;
    }
    Ok(())
}
