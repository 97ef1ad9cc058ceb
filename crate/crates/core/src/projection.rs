//! Forward projection: arrival times for all source-receiver pairs of a
//! sqrt-permittivity image, plus clamped projection deltas against a
//! measured reference and the ordered-subset partition.

use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::fdtd::{simulate, ProbeSet, SimConfig, SourceWaveform};
use crate::geometry::{transducer_positions, MediumMap, TransducerRing};
use crate::grid::{Grid2, GridGeometry};
use crate::signal::{detect_first_peak, envelope, nearest_delta_from_times, peak_candidates, SignalTrace};

/// The reconstruction unknown: sqrt(relative permittivity) on grid nodes,
/// with a mask of cells inside the known phantom boundary. Values outside
/// the mask stay frozen at the known exterior value.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtEpsImage {
    pub geom: GridGeometry,
    pub values: Grid2<f64>,
    pub mask: Grid2<bool>,
}

impl SqrtEpsImage {
    /// Uniform image: `inside` on masked cells, `exterior` elsewhere.
    pub fn uniform(geom: GridGeometry, mask: Grid2<bool>, inside: f64, exterior: f64) -> Self {
        let mut values = Grid2::filled(geom.nx, geom.ny, exterior);
        for k in 0..values.len() {
            if mask.as_slice()[k] {
                values.as_mut_slice()[k] = inside;
            }
        }
        SqrtEpsImage { geom, values, mask }
    }

    /// sqrt(eps) image of a rasterized medium.
    pub fn from_medium(medium: &MediumMap, mask: Grid2<bool>) -> Self {
        let values = Grid2::from_vec(
            medium.geom.nx,
            medium.geom.ny,
            medium.epsilon.iter().map(|&e| e.sqrt()).collect(),
        );
        SqrtEpsImage { geom: medium.geom, values, mask }
    }

    /// Medium with `eps = values^2`.
    pub fn to_medium(&self) -> MediumMap {
        MediumMap {
            geom: self.geom,
            epsilon: Grid2::from_vec(
                self.geom.nx,
                self.geom.ny,
                self.values.iter().map(|&v| v * v).collect(),
            ),
        }
    }

    /// Clip masked values to the physical floor and force unmasked cells to
    /// the exterior value.
    pub fn enforce_bounds(&mut self, exterior: f64) {
        for k in 0..self.values.len() {
            if self.mask.as_slice()[k] {
                if self.values.as_slice()[k] < 1.0 {
                    self.values.as_mut_slice()[k] = 1.0;
                }
            } else {
                self.values.as_mut_slice()[k] = exterior;
            }
        }
    }

    pub fn masked_cell_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Arrival time (seconds) per (source, receiver) pair, row-major by source.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionVector {
    pub sources: usize,
    pub receivers: usize,
    pub arrival: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ProjectionVector {
    pub fn invalid(sources: usize, receivers: usize) -> Self {
        ProjectionVector {
            sources,
            receivers,
            arrival: vec![0.0; sources * receivers],
            valid: vec![false; sources * receivers],
        }
    }

    #[inline]
    pub fn pair(&self, source: usize, receiver: usize) -> usize {
        source * self.receivers + receiver
    }

    pub fn len(&self) -> usize {
        self.arrival.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrival.is_empty()
    }
}

/// Ordered-subset assignment of sources, interleaved so each subset spans
/// the full angular range.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPartition {
    pub subset_count: usize,
    pub assignment: Vec<usize>,
}

pub fn make_subsets(source_count: usize, subset_count: usize) -> Result<SubsetPartition> {
    if subset_count == 0 || subset_count > source_count {
        return Err(TomoError::InvalidPartition(format!(
            "subset count {subset_count} outside 1..={source_count}"
        )));
    }
    Ok(SubsetPartition {
        subset_count,
        assignment: (0..source_count).map(|k| k % subset_count).collect(),
    })
}

impl SubsetPartition {
    pub fn sources_in(&self, subset: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == subset)
            .map(|(k, _)| k)
    }
}

/// Everything the forward projection needs besides the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub sim: SimConfig,
    pub waveform: SourceWaveform,
    pub envelope_cutoff: f64,
    pub threshold_fraction: f64,
}

fn project_one_source(
    medium: &MediumMap,
    source_pos: (f64, f64),
    probes: &ProbeSet,
    cfg: &ProjectionConfig,
) -> Result<Vec<(f64, bool)>> {
    let traces = simulate(medium, source_pos, &cfg.waveform, probes, &cfg.sim)?;
    let t0 = cfg.waveform.peak_time();
    traces
        .iter()
        .map(|trace| {
            let env = envelope(trace, cfg.envelope_cutoff)?;
            let peak = detect_first_peak(&env, cfg.threshold_fraction);
            Ok((if peak.valid { peak.time - t0 } else { 0.0 }, peak.valid))
        })
        .collect()
}

/// Forward projection `y = f(x)`: one FDTD run per source, first-peak
/// arrival per receiver (emission-referenced). With `subset` given, sources
/// outside it are skipped and their entries marked invalid. Deterministic
/// for fixed inputs regardless of worker count.
pub fn forward_project(
    x: &SqrtEpsImage,
    ring: &TransducerRing,
    cfg: &ProjectionConfig,
    subset: Option<(usize, &SubsetPartition)>,
) -> Result<ProjectionVector> {
    assert!(
        (cfg.sim.dx - x.geom.dx).abs() < 1e-15,
        "sim config dx must match the image grid"
    );
    let positions = transducer_positions(ring)?;
    let medium = x.to_medium();
    let probes = ProbeSet { positions: positions.clone() };
    let receivers = positions.len();
    let rows: Vec<Option<Vec<(f64, bool)>>> = positions
        .par_iter()
        .enumerate()
        .map(|(s, &pos)| {
            if let Some((id, partition)) = subset {
                if partition.assignment[s] != id {
                    return Ok(None);
                }
            }
            project_one_source(&medium, pos, &probes, cfg).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut out = ProjectionVector::invalid(positions.len(), receivers);
    for (s, row) in rows.into_iter().enumerate() {
        if let Some(row) = row {
            for (r, (arrival, valid)) in row.into_iter().enumerate() {
                let k = out.pair(s, r);
                out.arrival[k] = arrival;
                out.valid[k] = valid;
            }
        }
    }
    Ok(out)
}

/// Forward projection that also returns the raw traces per pair; used by the
/// acquisition step to persist the measured reference.
pub fn forward_project_with_traces(
    x: &SqrtEpsImage,
    ring: &TransducerRing,
    cfg: &ProjectionConfig,
) -> Result<(ProjectionVector, Vec<Vec<SignalTrace>>)> {
    let positions = transducer_positions(ring)?;
    let medium = x.to_medium();
    let probes = ProbeSet { positions: positions.clone() };
    let t0 = cfg.waveform.peak_time();
    let per_source: Vec<(Vec<(f64, bool)>, Vec<SignalTrace>)> = positions
        .par_iter()
        .map(|&pos| {
            let traces = simulate(&medium, pos, &cfg.waveform, &probes, &cfg.sim)?;
            let mut row = Vec::with_capacity(traces.len());
            for trace in &traces {
                let env = envelope(trace, cfg.envelope_cutoff)?;
                let peak = detect_first_peak(&env, cfg.threshold_fraction);
                row.push((if peak.valid { peak.time - t0 } else { 0.0 }, peak.valid));
            }
            Ok((row, traces))
        })
        .collect::<Result<_>>()?;

    let receivers = positions.len();
    let mut out = ProjectionVector::invalid(positions.len(), receivers);
    let mut all_traces = Vec::with_capacity(positions.len());
    for (s, (row, traces)) in per_source.into_iter().enumerate() {
        for (r, (arrival, valid)) in row.into_iter().enumerate() {
            let k = out.pair(s, r);
            out.arrival[k] = arrival;
            out.valid[k] = valid;
        }
        all_traces.push(traces);
    }
    Ok((out, all_traces))
}

/// Emission-referenced peak times of the measured reference traces, one
/// sorted list per pair. Computed once per acquisition and reused for all
/// nearest-peak matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePeaks {
    pub sources: usize,
    pub receivers: usize,
    pub peak_times: Vec<Vec<f64>>,
}

impl ReferencePeaks {
    pub fn from_traces(
        traces: &[Vec<SignalTrace>],
        envelope_cutoff: f64,
        threshold_fraction: f64,
        emission_time: f64,
    ) -> Result<Self> {
        let sources = traces.len();
        let receivers = traces.first().map_or(0, Vec::len);
        let peak_times: Vec<Vec<Vec<f64>>> = traces
            .par_iter()
            .map(|row| {
                row.iter()
                    .map(|trace| {
                        let env = envelope(trace, envelope_cutoff)?;
                        Ok(peak_candidates(&env, threshold_fraction)
                            .into_iter()
                            .map(|p| p.time - emission_time)
                            .collect())
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()
            })
            .collect::<Result<_>>()?;
        Ok(ReferencePeaks {
            sources,
            receivers,
            peak_times: peak_times.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn pair(&self, source: usize, receiver: usize) -> usize {
        source * self.receivers + receiver
    }
}

/// Per-pair clamped time offsets between the measured reference and the
/// current projection: for each pair valid in both, the nearest reference
/// peak to the current first-peak time, clamped to `[-clamp, clamp]`.
/// Invalid pairs contribute 0 and are flagged out.
pub fn projection_delta(
    y0: &ProjectionVector,
    yn: &ProjectionVector,
    reference: &ReferencePeaks,
    clamp: f64,
) -> (Vec<f64>, Vec<bool>) {
    assert_eq!(y0.len(), yn.len(), "projection shapes differ");
    assert_eq!(y0.len(), reference.peak_times.len(), "reference shape differs");
    let n = y0.len();
    let mut delta = vec![0.0f64; n];
    let mut valid = vec![false; n];
    for k in 0..n {
        if !(y0.valid[k] && yn.valid[k]) {
            continue;
        }
        match nearest_delta_from_times(reference.peak_times[k].iter().copied(), yn.arrival[k], clamp)
        {
            Some(d) => {
                delta[k] = d;
                valid[k] = true;
            }
            None => {}
        }
    }
    (delta, valid)
}
