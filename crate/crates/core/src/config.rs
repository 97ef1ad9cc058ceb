//! Experiment configuration: geometry, source, signal chain, resolution
//! schedule and reconstruction parameters, with a flat key-value file format
//! and a stable hash recorded in every output.

use std::path::PathBuf;

use crate::error::{Result, TomoError};
use crate::fdtd::{gaussian_pulse, SimConfig, SourceWaveform};
use crate::geometry::TransducerRing;
use crate::projection::ProjectionConfig;

/// One entry of the coarse-to-fine schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionStage {
    pub dx: f64,
    pub record_period: f64,
    pub boundary_cells: usize,
    /// First iteration of this stage (1-based, inclusive).
    pub start_iteration: u64,
    /// Last iteration of this stage (inclusive).
    pub end_iteration: u64,
}

/// Which phantom to build.
#[derive(Debug, Clone, PartialEq)]
pub enum PhantomChoice {
    Builtin(String),
    File(PathBuf),
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub phantom: PhantomChoice,
    /// Side of the square simulation area (meters).
    pub domain: f64,
    pub ring_count: usize,
    /// Full-axis lengths of the transducer/phantom boundary ellipse.
    pub ring_axis_a: f64,
    pub ring_axis_b: f64,
    pub source_center_frequency: f64,
    pub source_width: f64,
    pub envelope_cutoff: f64,
    pub threshold_fraction: f64,
    /// Clamp applied to per-pair time deltas (seconds).
    pub clamp: f64,
    pub courant_factor: f64,
    /// Fixed simulation duration; 0 selects the automatic path-based bound.
    pub duration_override: f64,
    pub stages: Vec<ResolutionStage>,
    pub subset_count: usize,
    pub batch_size: usize,
    /// Maximum fresh training pairs per iteration.
    pub fresh_budget: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Maximum pooled pairs kept per (stage, subset); oldest evicted.
    pub pool_cap: usize,
    pub initial_epsilon: f64,
    pub exterior_epsilon: f64,
    /// Amplitude cap schedule: (active strictly after iteration, cap).
    pub caps: Vec<(u64, f64)>,
    pub scheme_residual_after: u64,
    pub scheme_product_after: u64,
    /// Noise-image smoothing FWHM schedule: (after iteration, min m, max m).
    pub fwhm_ranges: Vec<(u64, f64, f64)>,
    pub residual_median_cells: (usize, usize),
    pub residual_gaussian_fwhm: (f64, f64),
    /// Oscillation detection window; 0 selects 4 x subset_count.
    pub oscillation_window: usize,
    /// Relative spread floor for oscillation detection.
    pub variance_floor: f64,
    pub checkpoint_every: u64,
    pub snapshot_every: u64,
    /// Worker threads; 0 follows TOA_TOMO_WORKERS or the core count.
    /// Execution detail: excluded from the config hash.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phantom: PhantomChoice::Builtin("shepp-logan".into()),
            domain: 1.0,
            ring_count: 300,
            ring_axis_a: 0.345,
            ring_axis_b: 0.46,
            source_center_frequency: 3.0e8,
            source_width: 4.5e8,
            envelope_cutoff: 4.5e8,
            threshold_fraction: 0.2,
            clamp: 1.0e-9,
            courant_factor: 0.5,
            duration_override: 0.0,
            stages: vec![
                ResolutionStage {
                    dx: 0.018,
                    record_period: 60e-12,
                    boundary_cells: 12,
                    start_iteration: 1,
                    end_iteration: 200,
                },
                ResolutionStage {
                    dx: 0.009,
                    record_period: 30e-12,
                    boundary_cells: 14,
                    start_iteration: 201,
                    end_iteration: 900,
                },
                ResolutionStage {
                    dx: 0.003,
                    record_period: 10e-12,
                    boundary_cells: 20,
                    start_iteration: 901,
                    end_iteration: 1200,
                },
            ],
            subset_count: 10,
            batch_size: 8,
            fresh_budget: 200,
            lambda: 1.0,
            seed: 1,
            pool_cap: 48,
            initial_epsilon: 49.0,
            exterior_epsilon: 53.0,
            caps: vec![(0, 0.3), (500, 0.15), (700, 0.1)],
            scheme_residual_after: 400,
            scheme_product_after: 700,
            fwhm_ranges: vec![
                (0, 0.009, 0.018),
                (700, 0.003, 0.018),
                (900, 0.001, 0.006),
            ],
            residual_median_cells: (2, 15),
            residual_gaussian_fwhm: (0.015, 0.030),
            oscillation_window: 0,
            variance_floor: 0.01,
            checkpoint_every: 10,
            snapshot_every: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn total_iterations(&self) -> u64 {
        self.stages.last().map_or(0, |s| s.end_iteration)
    }

    pub fn stage_for_iteration(&self, iteration: u64) -> Option<usize> {
        self.stages
            .iter()
            .position(|s| iteration >= s.start_iteration && iteration <= s.end_iteration)
    }

    pub fn ring(&self) -> TransducerRing {
        TransducerRing {
            count: self.ring_count,
            outer_axis_a: self.ring_axis_a,
            outer_axis_b: self.ring_axis_b,
        }
    }

    pub fn waveform(&self) -> SourceWaveform {
        gaussian_pulse(self.source_center_frequency, self.source_width)
    }

    /// Simulation parameters for one resolution stage.
    pub fn sim_config(&self, stage: usize) -> SimConfig {
        let s = &self.stages[stage];
        let wf = self.waveform();
        let duration = if self.duration_override > 0.0 {
            self.duration_override
        } else {
            SimConfig::auto_duration(
                (self.domain, self.domain),
                self.exterior_epsilon.max(self.initial_epsilon),
                &wf,
                s.record_period,
            )
        };
        SimConfig {
            dx: s.dx,
            courant_factor: self.courant_factor,
            record_period: s.record_period,
            duration,
            boundary_cells: s.boundary_cells,
        }
    }

    pub fn projection_config(&self, stage: usize) -> ProjectionConfig {
        ProjectionConfig {
            sim: self.sim_config(stage),
            waveform: self.waveform(),
            envelope_cutoff: self.envelope_cutoff,
            threshold_fraction: self.threshold_fraction,
        }
    }

    /// Amplitude cap active at an iteration.
    pub fn cap_at(&self, iteration: u64) -> f64 {
        let mut cap = self.caps.first().map_or(0.3, |&(_, c)| c);
        for &(after, c) in &self.caps {
            if iteration > after {
                cap = c;
            }
        }
        cap
    }

    /// Noise-smoothing FWHM range active at an iteration.
    pub fn fwhm_range_at(&self, iteration: u64) -> (f64, f64) {
        let mut range = self
            .fwhm_ranges
            .first()
            .map_or((0.009, 0.018), |&(_, lo, hi)| (lo, hi));
        for &(after, lo, hi) in &self.fwhm_ranges {
            if iteration > after {
                range = (lo, hi);
            }
        }
        range
    }

    pub fn oscillation_window(&self) -> usize {
        if self.oscillation_window == 0 {
            4 * self.subset_count
        } else {
            self.oscillation_window
        }
    }

    /// Canonical `key = value` lines, sorted, for echoing and hashing.
    pub fn canonical_lines(&self) -> Vec<String> {
        let phantom = match &self.phantom {
            PhantomChoice::Builtin(name) => format!("builtin:{name}"),
            PhantomChoice::File(path) => format!("file:{}", path.display()),
        };
        let stages = self
            .stages
            .iter()
            .map(|s| {
                format!(
                    "{:e}:{:e}:{}:{}",
                    s.dx, s.record_period, s.boundary_cells, s.end_iteration
                )
            })
            .collect::<Vec<_>>()
            .join(";");
        let caps = self
            .caps
            .iter()
            .map(|(a, c)| format!("{a}:{c:e}"))
            .collect::<Vec<_>>()
            .join(";");
        let fwhm = self
            .fwhm_ranges
            .iter()
            .map(|(a, lo, hi)| format!("{a}:{lo:e}:{hi:e}"))
            .collect::<Vec<_>>()
            .join(";");
        let mut lines = vec![
            format!("checkpoint.every = {}", self.checkpoint_every),
            format!("domain.size = {:e}", self.domain),
            format!("phantom = {phantom}"),
            format!("recon.batch_size = {}", self.batch_size),
            format!("recon.caps = {caps}"),
            format!("recon.exterior_epsilon = {:e}", self.exterior_epsilon),
            format!("recon.fresh_budget = {}", self.fresh_budget),
            format!("recon.fwhm_ranges = {fwhm}"),
            format!("recon.initial_epsilon = {:e}", self.initial_epsilon),
            format!("recon.lambda = {:e}", self.lambda),
            format!("recon.oscillation_window = {}", self.oscillation_window),
            format!("recon.pool_cap = {}", self.pool_cap),
            format!(
                "recon.residual_gaussian_fwhm = {:e}:{:e}",
                self.residual_gaussian_fwhm.0, self.residual_gaussian_fwhm.1
            ),
            format!(
                "recon.residual_median_cells = {}:{}",
                self.residual_median_cells.0, self.residual_median_cells.1
            ),
            format!("recon.scheme_product_after = {}", self.scheme_product_after),
            format!("recon.scheme_residual_after = {}", self.scheme_residual_after),
            format!("recon.seed = {}", self.seed),
            format!("recon.subset_count = {}", self.subset_count),
            format!("recon.variance_floor = {:e}", self.variance_floor),
            format!("ring.axis_a = {:e}", self.ring_axis_a),
            format!("ring.axis_b = {:e}", self.ring_axis_b),
            format!("ring.count = {}", self.ring_count),
            format!("signal.clamp = {:e}", self.clamp),
            format!("signal.envelope_cutoff = {:e}", self.envelope_cutoff),
            format!("signal.threshold_fraction = {:e}", self.threshold_fraction),
            format!("sim.courant = {:e}", self.courant_factor),
            format!("sim.duration = {:e}", self.duration_override),
            format!("snapshot.every = {}", self.snapshot_every),
            format!("source.center_frequency = {:e}", self.source_center_frequency),
            format!("source.width = {:e}", self.source_width),
            format!("stages = {stages}"),
        ];
        lines.sort();
        lines
    }

    /// Stable hash of the scientifically relevant configuration. Execution
    /// details (workers, output cadence) are excluded so runs that differ
    /// only in those still match checkpoints.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for line in self.canonical_lines() {
            if line.starts_with("checkpoint.every") || line.starts_with("snapshot.every") {
                continue;
            }
            h.write(line.as_bytes());
            h.write(b"\n");
        }
        h.finish()
    }

    /// Hash of the acquisition-relevant keys only (phantom, geometry,
    /// source, signal chain, finest stage). Measured datasets are stamped
    /// with this, so reconstruction parameters may vary against the same
    /// acquisition.
    pub fn acquisition_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        let finest = self.stages.last().expect("validated configs have stages");
        let lines = [
            format!("acq.dx = {:e}", finest.dx),
            format!("acq.tau = {:e}", finest.record_period),
            format!("acq.boundary_cells = {}", finest.boundary_cells),
        ];
        for line in self
            .canonical_lines()
            .iter()
            .filter(|l| {
                l.starts_with("phantom")
                    || l.starts_with("domain.")
                    || l.starts_with("ring.")
                    || l.starts_with("source.")
                    || l.starts_with("signal.")
                    || l.starts_with("sim.")
            })
            .chain(lines.iter())
        {
            h.write(line.as_bytes());
            h.write(b"\n");
        }
        h.finish()
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| TomoError::SpecError(format!("bad value for {what}: {value}"));
        let f = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
        let u = |what: &str| value.parse::<u64>().map_err(|_| bad(what));
        let us = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
        match key {
            "phantom" => {
                self.phantom = match value.split_once(':') {
                    Some(("builtin", name)) => PhantomChoice::Builtin(name.to_string()),
                    Some(("file", path)) => PhantomChoice::File(PathBuf::from(path)),
                    _ => PhantomChoice::Builtin(value.to_string()),
                };
            }
            "domain.size" => self.domain = f(key)?,
            "ring.count" => self.ring_count = us(key)?,
            "ring.axis_a" => self.ring_axis_a = f(key)?,
            "ring.axis_b" => self.ring_axis_b = f(key)?,
            "source.center_frequency" => self.source_center_frequency = f(key)?,
            "source.width" => self.source_width = f(key)?,
            "signal.envelope_cutoff" => self.envelope_cutoff = f(key)?,
            "signal.threshold_fraction" => self.threshold_fraction = f(key)?,
            "signal.clamp" => self.clamp = f(key)?,
            "sim.courant" => self.courant_factor = f(key)?,
            "sim.duration" => self.duration_override = f(key)?,
            "stages" => {
                let mut stages = Vec::new();
                let mut start = 1u64;
                for part in value.split(';') {
                    let fields: Vec<&str> = part.split(':').collect();
                    if fields.len() != 4 {
                        return Err(bad("stages (want dx:tau:boundary_cells:end_iter)"));
                    }
                    let dx = fields[0].parse::<f64>().map_err(|_| bad("stage dx"))?;
                    let tau = fields[1].parse::<f64>().map_err(|_| bad("stage tau"))?;
                    let bc = fields[2].parse::<usize>().map_err(|_| bad("stage cells"))?;
                    let end = fields[3].parse::<u64>().map_err(|_| bad("stage end"))?;
                    if end < start {
                        return Err(bad("stages (end iterations must increase)"));
                    }
                    stages.push(ResolutionStage {
                        dx,
                        record_period: tau,
                        boundary_cells: bc,
                        start_iteration: start,
                        end_iteration: end,
                    });
                    start = end + 1;
                }
                self.stages = stages;
            }
            "recon.subset_count" => self.subset_count = us(key)?,
            "recon.batch_size" => self.batch_size = us(key)?,
            "recon.fresh_budget" => self.fresh_budget = us(key)?,
            "recon.lambda" => self.lambda = f(key)?,
            "recon.seed" => self.seed = u(key)?,
            "recon.pool_cap" => self.pool_cap = us(key)?,
            "recon.initial_epsilon" => self.initial_epsilon = f(key)?,
            "recon.exterior_epsilon" => self.exterior_epsilon = f(key)?,
            "recon.caps" => {
                let mut caps = Vec::new();
                for part in value.split(';') {
                    let (a, c) = part.split_once(':').ok_or_else(|| bad("caps"))?;
                    caps.push((
                        a.parse::<u64>().map_err(|_| bad("caps"))?,
                        c.parse::<f64>().map_err(|_| bad("caps"))?,
                    ));
                }
                self.caps = caps;
            }
            "recon.scheme_residual_after" => self.scheme_residual_after = u(key)?,
            "recon.scheme_product_after" => self.scheme_product_after = u(key)?,
            "recon.fwhm_ranges" => {
                let mut ranges = Vec::new();
                for part in value.split(';') {
                    let fields: Vec<&str> = part.split(':').collect();
                    if fields.len() != 3 {
                        return Err(bad("fwhm_ranges (want after:min:max)"));
                    }
                    ranges.push((
                        fields[0].parse::<u64>().map_err(|_| bad("fwhm_ranges"))?,
                        fields[1].parse::<f64>().map_err(|_| bad("fwhm_ranges"))?,
                        fields[2].parse::<f64>().map_err(|_| bad("fwhm_ranges"))?,
                    ));
                }
                self.fwhm_ranges = ranges;
            }
            "recon.residual_median_cells" => {
                let (lo, hi) = value.split_once(':').ok_or_else(|| bad(key))?;
                self.residual_median_cells = (
                    lo.parse().map_err(|_| bad(key))?,
                    hi.parse().map_err(|_| bad(key))?,
                );
            }
            "recon.residual_gaussian_fwhm" => {
                let (lo, hi) = value.split_once(':').ok_or_else(|| bad(key))?;
                self.residual_gaussian_fwhm = (
                    lo.parse().map_err(|_| bad(key))?,
                    hi.parse().map_err(|_| bad(key))?,
                );
            }
            "recon.oscillation_window" => self.oscillation_window = us(key)?,
            "recon.variance_floor" => self.variance_floor = f(key)?,
            "checkpoint.every" => self.checkpoint_every = u(key)?,
            "snapshot.every" => self.snapshot_every = u(key)?,
            "workers" => self.workers = us(key)?,
            _ => return Err(TomoError::SpecError(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    /// Parse a flat key-value config file; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TomoError::SpecError(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Basic sanity checks before running.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(TomoError::SpecError("no resolution stages configured".into()));
        }
        for w in self.stages.windows(2) {
            if w[1].record_period > w[0].record_period || w[1].dx > w[0].dx {
                return Err(TomoError::SpecError(
                    "stages must go coarse to fine in both dx and tau".into(),
                ));
            }
        }
        if self.subset_count == 0 || self.subset_count > self.ring_count {
            return Err(TomoError::SpecError(format!(
                "subset count {} outside 1..={}",
                self.subset_count, self.ring_count
            )));
        }
        if self.ring_axis_a >= self.domain || self.ring_axis_b >= self.domain {
            return Err(TomoError::SpecError(
                "transducer ring does not fit inside the domain".into(),
            ));
        }
        let positive = [
            ("domain.size", self.domain),
            ("ring.axis_a", self.ring_axis_a),
            ("ring.axis_b", self.ring_axis_b),
            ("source.center_frequency", self.source_center_frequency),
            ("source.width", self.source_width),
            ("signal.envelope_cutoff", self.envelope_cutoff),
            ("signal.clamp", self.clamp),
            ("recon.lambda", self.lambda),
            ("recon.initial_epsilon", self.initial_epsilon),
            ("recon.exterior_epsilon", self.exterior_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(TomoError::SpecError(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(TomoError::SpecError(format!(
                "signal.threshold_fraction must lie in (0,1), got {}",
                self.threshold_fraction
            )));
        }
        if self.batch_size == 0 || self.fresh_budget < self.batch_size {
            return Err(TomoError::SpecError(
                "recon.batch_size must be >= 1 and <= recon.fresh_budget".into(),
            ));
        }
        Ok(())
    }
}

/// FNV-1a 64-bit hash; stable across platforms and runs.
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}
