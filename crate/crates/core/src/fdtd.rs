//! 2D transverse-magnetic FDTD propagation (Ez, Hx, Hy on a Yee grid) with a
//! graded matched-loss absorbing boundary and energy probes.
//!
//! The internal time step comes from the Courant factor; recorded traces are
//! resampled to the coarser record period `tau` by taking the per-bin maximum
//! of the instantaneous field energy Ez^2.

use crate::error::{Result, TomoError};
use crate::geometry::MediumMap;
use crate::grid::GridGeometry;
use crate::signal::SignalTrace;

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_8128e-12;
/// Vacuum permeability derived from `1/(EPS0 c^2)` so the discrete wave
/// speed matches `C0` exactly.
pub const MU0: f64 = 1.0 / (EPS0 * C0 * C0);

/// Free-space impedance (ohms).
const ETA0: f64 = 376.730_313_668;

/// Polynomial grading order of the absorber conductivity profile.
const ABSORBER_ORDER: f64 = 3.0;
/// Target round-trip reflection of the graded absorber at normal incidence.
const ABSORBER_REFLECTION: f64 = 1e-6;

/// Gaussian-enveloped sinusoidal pulse.
///
/// The envelope's temporal sigma is `1/width`, matching the convention of
/// FDTD packages that specify the pulse by its spectral width: the discrete
/// spectrum then peaks at `center_frequency`. The pulse is delayed so it
/// ramps up from (numerically) zero and is cut off once the envelope falls
/// below 1e-6 of its peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceWaveform {
    pub center_frequency: f64,
    pub width: f64,
    pub cutoff_duration: f64,
    pub amplitude: f64,
}

/// Envelope delay in units of sigma. `exp(-5.5^2/2) = 2.7e-7 < 1e-6`.
const DELAY_SIGMAS: f64 = 5.5;

pub fn gaussian_pulse(center_frequency: f64, width: f64) -> SourceWaveform {
    assert!(center_frequency > 0.0 && width > 0.0, "frequencies must be positive");
    let sigma = 1.0 / width;
    SourceWaveform {
        center_frequency,
        width,
        cutoff_duration: 2.0 * DELAY_SIGMAS * sigma,
        amplitude: 1.0,
    }
}

impl SourceWaveform {
    pub fn sigma(&self) -> f64 {
        1.0 / self.width
    }

    /// Time at which the envelope peaks; the emission reference for
    /// arrival-time measurements.
    pub fn peak_time(&self) -> f64 {
        DELAY_SIGMAS * self.sigma()
    }

    /// Source value at time `t`; zero outside `[0, cutoff_duration]`.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.cutoff_duration {
            return 0.0;
        }
        let u = t - self.peak_time();
        let sigma = self.sigma();
        let envelope = (-u * u / (2.0 * sigma * sigma)).exp();
        self.amplitude * envelope * (2.0 * std::f64::consts::PI * self.center_frequency * u).cos()
    }
}

/// FDTD run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Grid spacing (meters).
    pub dx: f64,
    /// Courant factor in (0, 1/sqrt(2)]; internal dt = factor * dx / c.
    pub courant_factor: f64,
    /// Record period tau of the output traces (seconds).
    pub record_period: f64,
    /// Total simulated time (seconds).
    pub duration: f64,
    /// Thickness of the absorbing layer in cells on each side.
    pub boundary_cells: usize,
}

impl SimConfig {
    /// Duration long enough for the slowest path across the domain plus the
    /// full pulse and a settling margin.
    pub fn auto_duration(
        area: (f64, f64),
        eps_max: f64,
        waveform: &SourceWaveform,
        record_period: f64,
    ) -> f64 {
        let slowest = (area.0 + area.1) * eps_max.sqrt() / C0;
        slowest + waveform.cutoff_duration + 20.0 * record_period
    }
}

/// Validates the Courant factor and returns the internal time step.
pub fn stability_check(config: &SimConfig) -> Result<f64> {
    if config.dx <= 0.0 {
        return Err(TomoError::StabilityViolation(format!(
            "grid spacing must be positive, got {}",
            config.dx
        )));
    }
    let bound = std::f64::consts::FRAC_1_SQRT_2;
    if config.courant_factor <= 0.0 || config.courant_factor > bound + 1e-12 {
        return Err(TomoError::StabilityViolation(format!(
            "courant factor {} outside (0, {bound:.6}]",
            config.courant_factor
        )));
    }
    Ok(config.courant_factor * config.dx / C0)
}

/// Probe positions; snapped to the nearest grid node at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub positions: Vec<(f64, f64)>,
}

/// Live simulation state. Field arrays are allocated `nx * ny` each; the
/// trailing Hx row and Hy column are unused and stay zero.
pub struct FdtdSim {
    pub geom: GridGeometry,
    pub dt: f64,
    pub boundary_cells: usize,
    step_index: usize,
    ez: Vec<f64>,
    hx: Vec<f64>,
    hy: Vec<f64>,
    // Per-node update coefficients (material and absorber loss folded in).
    ca: Vec<f64>,
    cb: Vec<f64>,
    da_hx: Vec<f64>,
    db_hx: Vec<f64>,
    da_hy: Vec<f64>,
    db_hy: Vec<f64>,
    eps_rel: Vec<f64>,
}

/// Normalized absorber depth of coordinate `u` (node units) for a grid with
/// `n` nodes and `w` absorber cells; 0 in the interior, 1 at the wall.
fn absorber_depth(u: f64, n: usize, w: usize) -> f64 {
    if w == 0 {
        return 0.0;
    }
    let w = w as f64;
    let left = (w - u) / w;
    let right = (u - (n as f64 - 1.0 - w)) / w;
    left.max(right).clamp(0.0, 1.0)
}

impl FdtdSim {
    pub fn new(medium: &MediumMap, config: &SimConfig) -> Result<Self> {
        let dt = stability_check(config)?;
        let geom = medium.geom;
        let (nx, ny) = (geom.nx, geom.ny);
        if nx < 3 || ny < 3 {
            return Err(TomoError::InvalidGeometry(format!("grid {nx}x{ny} too small")));
        }
        if 2 * config.boundary_cells + 2 >= nx.min(ny) {
            return Err(TomoError::InvalidGeometry(format!(
                "absorber of {} cells leaves no interior in a {nx}x{ny} grid",
                config.boundary_cells
            )));
        }
        let n = nx * ny;
        let mut sim = FdtdSim {
            geom,
            dt,
            boundary_cells: config.boundary_cells,
            step_index: 0,
            ez: vec![0.0; n],
            hx: vec![0.0; n],
            hy: vec![0.0; n],
            ca: vec![0.0; n],
            cb: vec![0.0; n],
            da_hx: vec![0.0; n],
            db_hx: vec![0.0; n],
            da_hy: vec![0.0; n],
            db_hy: vec![0.0; n],
            eps_rel: medium.epsilon.as_slice().to_vec(),
        };
        sim.build_coefficients(config)?;
        Ok(sim)
    }

    fn build_coefficients(&mut self, config: &SimConfig) -> Result<()> {
        let (nx, ny) = (self.geom.nx, self.geom.ny);
        let dt = self.dt;
        let dx = self.geom.dx;
        let w = config.boundary_cells;
        let order = ABSORBER_ORDER;
        // sigma_0 = -(m+1) ln(R0) sqrt(eps_r) / (2 eta0 W dx), graded as depth^m.
        let sigma_base = if w == 0 {
            0.0
        } else {
            -(order + 1.0) * ABSORBER_REFLECTION.ln() / (2.0 * ETA0 * w as f64 * dx)
        };
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let eps = self.eps_rel[k];
                if !(eps >= 1.0) || !eps.is_finite() {
                    return Err(TomoError::InvalidPermittivity(eps));
                }
                let px = absorber_depth(i as f64, nx, w).powf(order);
                let py = absorber_depth(j as f64, ny, w).powf(order);
                let px_half = absorber_depth(i as f64 + 0.5, nx, w).powf(order);
                let py_half = absorber_depth(j as f64 + 0.5, ny, w).powf(order);
                // Electric loss: sum of both axis profiles, locally matched
                // magnetic loss per axis. All rates are sigma/(eps0 eps_r).
                let rate = sigma_base * eps.sqrt() / (EPS0 * eps);
                let ae = rate * (px + py) * dt / 2.0;
                self.ca[k] = (1.0 - ae) / (1.0 + ae);
                self.cb[k] = dt / (EPS0 * eps * dx) / (1.0 + ae);
                let am_x = rate * py_half * dt / 2.0;
                self.da_hx[k] = (1.0 - am_x) / (1.0 + am_x);
                self.db_hx[k] = dt / (MU0 * dx) / (1.0 + am_x);
                let am_y = rate * px_half * dt / 2.0;
                self.da_hy[k] = (1.0 - am_y) / (1.0 + am_y);
                self.db_hy[k] = dt / (MU0 * dx) / (1.0 + am_y);
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.geom.nx
    }

    pub fn ny(&self) -> usize {
        self.geom.ny
    }

    pub fn ez(&self) -> &[f64] {
        &self.ez
    }

    pub fn hx(&self) -> &[f64] {
        &self.hx
    }

    pub fn hy(&self) -> &[f64] {
        &self.hy
    }

    pub fn eps_rel(&self) -> &[f64] {
        &self.eps_rel
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Node index of a physical position, or an error when it falls outside
    /// the non-absorbing interior.
    pub fn interior_node(&self, x: f64, y: f64) -> Result<usize> {
        let (sx, sy) = self.geom.span();
        if x.abs() > sx / 2.0 + self.geom.dx / 2.0 || y.abs() > sy / 2.0 + self.geom.dx / 2.0 {
            return Err(TomoError::InvalidProbe(format!("({x}, {y}) outside the domain")));
        }
        let (i, j) = self.geom.nearest_node(x, y);
        let w = self.boundary_cells;
        if i < w || i + w >= self.geom.nx || j < w || j + w >= self.geom.ny {
            return Err(TomoError::InvalidProbe(format!(
                "({x}, {y}) lies inside the absorbing layer"
            )));
        }
        Ok(j * self.geom.nx + i)
    }

    /// Advance one full leapfrog step (H then E), adding `sources` to Ez.
    pub fn step(&mut self, sources: &[(usize, f64)]) {
        let nx = self.geom.nx;
        let ny = self.geom.ny;

        // Hx: rows 0..ny-1 read the Ez row above.
        for j in 0..ny - 1 {
            let row = j * nx;
            let (ez_here, ez_up) = {
                let (a, b) = self.ez.split_at(row + nx);
                (&a[row..], &b[..nx])
            };
            let hx = &mut self.hx[row..row + nx];
            let da = &self.da_hx[row..row + nx];
            let db = &self.db_hx[row..row + nx];
            for i in 0..nx {
                hx[i] = da[i] * hx[i] - db[i] * (ez_up[i] - ez_here[i]);
            }
        }

        // Hy: all rows, columns 0..nx-1 read the Ez column to the right.
        for j in 0..ny {
            let row = j * nx;
            let ez = &self.ez[row..row + nx];
            let hy = &mut self.hy[row..row + nx];
            let da = &self.da_hy[row..row + nx];
            let db = &self.db_hy[row..row + nx];
            for i in 0..nx - 1 {
                hy[i] = da[i] * hy[i] + db[i] * (ez[i + 1] - ez[i]);
            }
        }

        // Ez: interior nodes only; the outermost ring stays zero (PEC wall
        // behind the absorber).
        for j in 1..ny - 1 {
            let row = j * nx;
            let (hx_down, hx_here) = {
                let (a, b) = self.hx.split_at(row);
                (&a[row - nx..], &b[..nx])
            };
            let hy = &self.hy[row..row + nx];
            let ez = &mut self.ez[row + 1..row + nx - 1];
            let ca = &self.ca[row + 1..row + nx - 1];
            let cb = &self.cb[row + 1..row + nx - 1];
            for i in 0..ez.len() {
                let gi = i + 1;
                let curl = (hy[gi] - hy[gi - 1]) - (hx_here[gi] - hx_down[gi]);
                ez[i] = ca[i] * ez[i] + cb[i] * curl;
            }
        }

        for &(node, value) in sources {
            self.ez[node] += value;
        }
        self.step_index += 1;
    }
}

/// Run a full simulation: propagate `waveform` from `source_pos` through
/// `medium` and record the per-bin maximum of Ez^2 at each probe.
pub fn simulate(
    medium: &MediumMap,
    source_pos: (f64, f64),
    waveform: &SourceWaveform,
    probes: &ProbeSet,
    config: &SimConfig,
) -> Result<Vec<SignalTrace>> {
    simulate_observed(medium, source_pos, waveform, probes, config, |_, _| {})
}

/// [`simulate`] with a per-step observer (used for field snapshot dumps).
pub fn simulate_observed(
    medium: &MediumMap,
    source_pos: (f64, f64),
    waveform: &SourceWaveform,
    probes: &ProbeSet,
    config: &SimConfig,
    mut observe: impl FnMut(usize, &FdtdSim),
) -> Result<Vec<SignalTrace>> {
    let mut sim = FdtdSim::new(medium, config)?;
    let dt = sim.dt;
    let tau = config.record_period;
    if tau < dt {
        return Err(TomoError::StabilityViolation(format!(
            "record period {tau} s is finer than the internal step {dt} s"
        )));
    }
    if config.duration <= 0.0 {
        return Err(TomoError::StabilityViolation("duration must be positive".into()));
    }
    let source_node = sim.interior_node(source_pos.0, source_pos.1)?;
    let probe_nodes: Vec<usize> = probes
        .positions
        .iter()
        .map(|&(x, y)| sim.interior_node(x, y))
        .collect::<Result<_>>()?;

    let steps = (config.duration / dt).ceil() as usize;
    let nbins = (config.duration / tau).ceil() as usize;
    let mut traces = vec![vec![0.0f64; nbins]; probe_nodes.len()];

    for n in 0..steps {
        let t = (n + 1) as f64 * dt;
        let s = waveform.value(t);
        sim.step(&[(source_node, s)]);
        let bin = ((t / tau) as usize).min(nbins - 1);
        for (trace, &node) in traces.iter_mut().zip(&probe_nodes) {
            let v = sim.ez[node];
            let e = v * v;
            if e > trace[bin] {
                trace[bin] = e;
            }
        }
        observe(n, &sim);
    }

    Ok(traces
        .into_iter()
        .map(|samples| SignalTrace {
            start_time: 0.5 * tau,
            sample_period: tau,
            samples,
        })
        .collect())
}
