//! Phantom geometry: elliptical regions, the transducer ring and
//! rasterization of relative permittivity onto a simulation grid.

use crate::error::{Result, TomoError};
use crate::grid::{Grid2, GridGeometry};

/// One elliptical region of constant relative permittivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    /// Rotation of the `a` axis against x, radians, counterclockwise.
    pub rotation: f64,
    pub epsilon: f64,
}

impl Ellipse {
    /// Point-in-ellipse test in the ellipse's own frame.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let (sin, cos) = self.rotation.sin_cos();
        let u = (dx * cos + dy * sin) / self.semi_axis_a;
        let v = (-dx * sin + dy * cos) / self.semi_axis_b;
        u * u + v * v <= 1.0
    }

    /// Image of this ellipse under the anisotropic scaling `(x, y) -> (sx*x, sy*y)`.
    ///
    /// Works on the quadratic form, so rotated ellipses stay exact ellipses.
    pub fn scaled(&self, sx: f64, sy: f64) -> Ellipse {
        let (sin, cos) = self.rotation.sin_cos();
        let ia2 = 1.0 / (self.semi_axis_a * self.semi_axis_a);
        let ib2 = 1.0 / (self.semi_axis_b * self.semi_axis_b);
        // Q = R diag(1/a^2, 1/b^2) R^T, then Q' = S^-1 Q S^-1.
        let qxx = (cos * cos * ia2 + sin * sin * ib2) / (sx * sx);
        let qyy = (sin * sin * ia2 + cos * cos * ib2) / (sy * sy);
        let qxy = (cos * sin * (ia2 - ib2)) / (sx * sy);
        let mean = 0.5 * (qxx + qyy);
        let disc = (0.5 * (qxx - qyy)).hypot(qxy);
        let lo = mean - disc;
        let hi = mean + disc;
        // Keep the identity of the `a` axis: of the two principal directions
        // of Q', give `semi_axis_a` the one closest to the image of the
        // original a-axis direction.
        let a_dir = (sx * cos, sy * sin);
        let (rotation, a, b) = if qxy.abs() < 1e-12 * mean.abs().max(1e-300) {
            if a_dir.0.abs() >= a_dir.1.abs() {
                (0.0, 1.0 / qxx.sqrt(), 1.0 / qyy.sqrt())
            } else {
                (std::f64::consts::FRAC_PI_2, 1.0 / qyy.sqrt(), 1.0 / qxx.sqrt())
            }
        } else {
            let e_lo = (qxy, lo - qxx);
            let e_hi = (qxy, hi - qxx);
            let align = |e: (f64, f64)| {
                (e.0 * a_dir.0 + e.1 * a_dir.1).abs() / e.0.hypot(e.1)
            };
            if align(e_lo) >= align(e_hi) {
                (f64::atan2(e_lo.1, e_lo.0), 1.0 / lo.sqrt(), 1.0 / hi.sqrt())
            } else {
                (f64::atan2(e_hi.1, e_hi.0), 1.0 / hi.sqrt(), 1.0 / lo.sqrt())
            }
        };
        Ellipse {
            center_x: self.center_x * sx,
            center_y: self.center_y * sy,
            semi_axis_a: a,
            semi_axis_b: b,
            rotation,
            epsilon: self.epsilon,
        }
    }
}

/// Declarative phantom: ordered ellipse list over a uniform background.
/// Later entries overwrite earlier ones where they overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub ellipses: Vec<Ellipse>,
    pub background_epsilon: f64,
    /// Full-axis lengths of the bounding phantom ellipse (meters).
    pub outer_axis_a: f64,
    pub outer_axis_b: f64,
}

impl PhantomSpec {
    /// Permittivity at a point: last containing ellipse wins, else background.
    pub fn epsilon_at(&self, x: f64, y: f64) -> f64 {
        for e in self.ellipses.iter().rev() {
            if e.contains(x, y) {
                return e.epsilon;
            }
        }
        self.background_epsilon
    }
}

/// Ring of transducers on the bounding ellipse, uniformly spaced in angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransducerRing {
    pub count: usize,
    /// Full-axis lengths of the boundary ellipse (meters).
    pub outer_axis_a: f64,
    pub outer_axis_b: f64,
}

impl TransducerRing {
    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.count;
        (0..n).map(move |k| 2.0 * std::f64::consts::PI * k as f64 / n as f64)
    }
}

/// Positions `(a cos t, b sin t)` with `a`, `b` the boundary semi-axes.
pub fn transducer_positions(ring: &TransducerRing) -> Result<Vec<(f64, f64)>> {
    if ring.count < 2 {
        return Err(TomoError::InvalidGeometry(format!(
            "transducer ring needs at least 2 elements, got {}",
            ring.count
        )));
    }
    let a = ring.outer_axis_a / 2.0;
    let b = ring.outer_axis_b / 2.0;
    Ok(ring.angles().map(|t| (a * t.cos(), b * t.sin())).collect())
}

/// Relative permittivity sampled on grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumMap {
    pub geom: GridGeometry,
    pub epsilon: Grid2<f64>,
}

impl MediumMap {
    pub fn eps_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in self.epsilon.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Rasterize a phantom onto a centered node grid covering `area` meters.
pub fn rasterize(spec: &PhantomSpec, dx: f64, area: (f64, f64)) -> Result<MediumMap> {
    assert!(dx > 0.0, "grid spacing must be positive");
    if spec.background_epsilon < 1.0 {
        return Err(TomoError::InvalidPermittivity(spec.background_epsilon));
    }
    if let Some(e) = spec.ellipses.iter().find(|e| e.epsilon < 1.0) {
        return Err(TomoError::InvalidPermittivity(e.epsilon));
    }
    let geom = GridGeometry::for_area(area.0, area.1, dx);
    let mut eps = Grid2::filled(geom.nx, geom.ny, spec.background_epsilon);
    for j in 0..geom.ny {
        for i in 0..geom.nx {
            let (x, y) = geom.node_pos(i, j);
            eps.set(i, j, spec.epsilon_at(x, y));
        }
    }
    Ok(MediumMap { geom, epsilon: eps })
}

/// Boolean mask of nodes inside the phantom's bounding ellipse.
pub fn rasterize_mask(outer_axis_a: f64, outer_axis_b: f64, geom: GridGeometry) -> Grid2<bool> {
    let a = outer_axis_a / 2.0;
    let b = outer_axis_b / 2.0;
    let mut mask = Grid2::filled(geom.nx, geom.ny, false);
    for j in 0..geom.ny {
        for i in 0..geom.nx {
            let (x, y) = geom.node_pos(i, j);
            let u = x / a;
            let v = y / b;
            mask.set(i, j, u * u + v * v <= 1.0);
        }
    }
    mask
}

/// Classic ten-ellipse head phantom in unit coordinates, with the three
/// permittivity classes (outer shell, large dark lobes, small features).
const SHEPP_LOGAN_UNIT: [(f64, f64, f64, f64, f64); 10] = [
    // (a, b, x0, y0, phi_degrees)
    (0.69, 0.92, 0.0, 0.0, 0.0),
    (0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (0.11, 0.31, 0.22, 0.0, -18.0),
    (0.16, 0.41, -0.22, 0.0, 18.0),
    (0.21, 0.25, 0.0, 0.35, 0.0),
    (0.046, 0.046, 0.0, 0.1, 0.0),
    (0.046, 0.046, 0.0, -0.1, 0.0),
    (0.046, 0.023, -0.08, -0.605, 0.0),
    (0.023, 0.023, 0.0, -0.606, 0.0),
    (0.023, 0.046, 0.06, -0.605, 0.0),
];

pub const EPS_OUTER_SHELL: f64 = 50.0;
pub const EPS_DARK_LOBES: f64 = 16.0;
pub const EPS_SMALL_FEATURES: f64 = 45.0;
pub const EPS_EXTERIOR: f64 = 53.0;

/// Head phantom scaled so its outer ellipse has the given full-axis lengths.
pub fn make_shepp_logan(axis_a: f64, axis_b: f64) -> PhantomSpec {
    assert!(axis_a > 0.0 && axis_b > 0.0, "phantom axes must be positive");
    let sx = (axis_a / 2.0) / SHEPP_LOGAN_UNIT[0].0;
    let sy = (axis_b / 2.0) / SHEPP_LOGAN_UNIT[0].1;
    let ellipses = SHEPP_LOGAN_UNIT
        .iter()
        .enumerate()
        .map(|(k, &(a, b, x0, y0, deg))| {
            let epsilon = match k {
                0 | 1 => EPS_OUTER_SHELL,
                2 | 3 => EPS_DARK_LOBES,
                _ => EPS_SMALL_FEATURES,
            };
            Ellipse {
                center_x: x0,
                center_y: y0,
                semi_axis_a: a,
                semi_axis_b: b,
                rotation: deg.to_radians(),
                epsilon,
            }
            .scaled(sx, sy)
        })
        .collect();
    PhantomSpec {
        ellipses,
        background_epsilon: EPS_EXTERIOR,
        outer_axis_a: axis_a,
        outer_axis_b: axis_b,
    }
}

/// Small two-region phantom used by the desk-scale experiment: a bright
/// outer ellipse with one dark inclusion.
pub fn make_two_ellipse(axis_a: f64, axis_b: f64) -> PhantomSpec {
    assert!(axis_a > 0.0 && axis_b > 0.0, "phantom axes must be positive");
    let a = axis_a / 2.0;
    let b = axis_b / 2.0;
    PhantomSpec {
        ellipses: vec![
            Ellipse {
                center_x: 0.0,
                center_y: 0.0,
                semi_axis_a: a,
                semi_axis_b: b,
                rotation: 0.0,
                epsilon: EPS_OUTER_SHELL,
            },
            Ellipse {
                center_x: 0.2 * a,
                center_y: -0.25 * b,
                semi_axis_a: 0.4 * a,
                semi_axis_b: 0.45 * b,
                rotation: 0.4,
                epsilon: EPS_DARK_LOBES,
            },
        ],
        background_epsilon: EPS_EXTERIOR,
        outer_axis_a: axis_a,
        outer_axis_b: axis_b,
    }
}

/// Parse the line-oriented phantom spec format:
/// `background <eps>`, `outer <axis_a> <axis_b>`, then one
/// `cx cy sa sb rot eps` line per ellipse. `#` starts a comment.
pub fn parse_phantom_spec(text: &str) -> Result<PhantomSpec> {
    let mut background = None;
    let mut outer = None;
    let mut ellipses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap();
        let parse =
            |tok: Option<&str>| -> Result<f64> {
                tok.and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| {
                    TomoError::SpecError(format!("line {}: bad number", lineno + 1))
                })
            };
        match head {
            "background" => background = Some(parse(toks.next())?),
            "outer" => outer = Some((parse(toks.next())?, parse(toks.next())?)),
            _ => {
                let cx = head.parse::<f64>().map_err(|_| {
                    TomoError::SpecError(format!("line {}: unknown directive {head}", lineno + 1))
                })?;
                let cy = parse(toks.next())?;
                let sa = parse(toks.next())?;
                let sb = parse(toks.next())?;
                let rot = parse(toks.next())?;
                let eps = parse(toks.next())?;
                if sa <= 0.0 || sb <= 0.0 {
                    return Err(TomoError::SpecError(format!(
                        "line {}: semi-axes must be positive",
                        lineno + 1
                    )));
                }
                ellipses.push(Ellipse {
                    center_x: cx,
                    center_y: cy,
                    semi_axis_a: sa,
                    semi_axis_b: sb,
                    rotation: rot,
                    epsilon: eps,
                });
            }
        }
    }
    let background_epsilon =
        background.ok_or_else(|| TomoError::SpecError("missing `background` line".into()))?;
    let (outer_axis_a, outer_axis_b) =
        outer.ok_or_else(|| TomoError::SpecError("missing `outer` line".into()))?;
    Ok(PhantomSpec { ellipses, background_epsilon, outer_axis_a, outer_axis_b })
}

/// Serialize a phantom to the format accepted by [`parse_phantom_spec`].
pub fn format_phantom_spec(spec: &PhantomSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("background {:e}\n", spec.background_epsilon));
    out.push_str(&format!("outer {:e} {:e}\n", spec.outer_axis_a, spec.outer_axis_b));
    for e in &spec.ellipses {
        out.push_str(&format!(
            "{:e} {:e} {:e} {:e} {:e} {:e}\n",
            e.center_x, e.center_y, e.semi_axis_a, e.semi_axis_b, e.rotation, e.epsilon
        ));
    }
    out
}
