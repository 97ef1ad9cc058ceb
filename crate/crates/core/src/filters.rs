//! Mask-aware smoothing filters for reconstructed images.
//!
//! Windows are restricted to masked cells instead of padding, so the frozen
//! exterior never bleeds into the reconstruction region.

use crate::error::{Result, TomoError};
use crate::grid::Grid2;
use crate::projection::SqrtEpsImage;

/// Per-cell median over an odd `window x window` neighborhood restricted to
/// masked cells. Unmasked cells pass through untouched. Even-sized sample
/// sets take the lower middle element, so outputs are always input values.
pub fn median_filter(x: &SqrtEpsImage, window: usize) -> Result<SqrtEpsImage> {
    if window % 2 == 0 || window == 0 {
        return Err(TomoError::InvalidWindow(window));
    }
    let half = (window / 2) as isize;
    let (nx, ny) = (x.geom.nx, x.geom.ny);
    let mut out = x.clone();
    let mut buf = Vec::with_capacity(window * window);
    for j in 0..ny {
        for i in 0..nx {
            if !*x.mask.get(i, j) {
                continue;
            }
            buf.clear();
            for dj in -half..=half {
                for di in -half..=half {
                    let ii = i as isize + di;
                    let jj = j as isize + dj;
                    if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                        continue;
                    }
                    let (ii, jj) = (ii as usize, jj as usize);
                    if *x.mask.get(ii, jj) {
                        buf.push(*x.values.get(ii, jj));
                    }
                }
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.values.set(i, j, buf[(buf.len() - 1) / 2]);
        }
    }
    Ok(out)
}

/// Gaussian blur with `sigma = fwhm / 2.3548`, weights renormalized over the
/// masked cells inside the truncation radius. Unmasked cells pass through.
pub fn gaussian_filter(x: &SqrtEpsImage, fwhm: f64) -> SqrtEpsImage {
    assert!(fwhm > 0.0, "fwhm must be positive");
    let sigma_cells = fwhm / (2.0 * (2.0f64.ln() * 2.0).sqrt()) / x.geom.dx;
    // 5.5 sigma truncation keeps the discarded tail below 1e-6 of the mass.
    let radius = (5.5 * sigma_cells).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for d in -radius..=radius {
        kernel.push((-((d as f64) * (d as f64)) / (2.0 * sigma_cells * sigma_cells)).exp());
    }
    let (nx, ny) = (x.geom.nx, x.geom.ny);
    let mut out = x.clone();
    for j in 0..ny {
        for i in 0..nx {
            if !*x.mask.get(i, j) {
                continue;
            }
            let mut acc = 0.0f64;
            let mut weight = 0.0f64;
            for dj in -radius..=radius {
                let jj = j as isize + dj;
                if jj < 0 || jj >= ny as isize {
                    continue;
                }
                let wj = kernel[(dj + radius) as usize];
                for di in -radius..=radius {
                    let ii = i as isize + di;
                    if ii < 0 || ii >= nx as isize {
                        continue;
                    }
                    if *x.mask.get(ii as usize, jj as usize) {
                        let w = wj * kernel[(di + radius) as usize];
                        acc += w * *x.values.get(ii as usize, jj as usize);
                        weight += w;
                    }
                }
            }
            out.values.set(i, j, acc / weight);
        }
    }
    out
}

/// Plain separable full-grid Gaussian blur (no mask handling); used where a
/// perturbation gets masked afterwards anyway.
pub fn gaussian_blur_grid(values: &Grid2<f64>, sigma_cells: f64) -> Grid2<f64> {
    if sigma_cells <= 1e-9 {
        return values.clone();
    }
    let radius = (5.5 * sigma_cells).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for d in -radius..=radius {
        let w = (-((d as f64) * (d as f64)) / (2.0 * sigma_cells * sigma_cells)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }
    let (nx, ny) = (values.nx, values.ny);
    let mut tmp = Grid2::filled(nx, ny, 0.0);
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for d in -radius..=radius {
                let ii = i as isize + d;
                if ii < 0 || ii >= nx as isize {
                    continue;
                }
                let w = kernel[(d + radius) as usize];
                acc += w * *values.get(ii as usize, j);
                norm += w;
            }
            tmp.set(i, j, acc / norm);
        }
    }
    let mut out = Grid2::filled(nx, ny, 0.0);
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for d in -radius..=radius {
                let jj = j as isize + d;
                if jj < 0 || jj >= ny as isize {
                    continue;
                }
                let w = kernel[(d + radius) as usize];
                acc += w * *tmp.get(i, jj as usize);
                norm += w;
            }
            out.set(i, j, acc / norm);
        }
    }
    out
}

/// Median over a `w x w` window with asymmetric offsets for even `w`; the
/// training-image scheme draws window sizes from 2..=15 which includes even
/// values. Full-grid, no mask handling.
pub fn median_blur_grid(values: &Grid2<f64>, window: usize) -> Grid2<f64> {
    assert!(window >= 1);
    let lo = -((window as isize - 1) / 2);
    let hi = window as isize / 2;
    let (nx, ny) = (values.nx, values.ny);
    let mut out = Grid2::filled(nx, ny, 0.0);
    let mut buf = Vec::with_capacity(window * window);
    for j in 0..ny {
        for i in 0..nx {
            buf.clear();
            for dj in lo..=hi {
                for di in lo..=hi {
                    let ii = (i as isize + di).clamp(0, nx as isize - 1) as usize;
                    let jj = (j as isize + dj).clamp(0, ny as isize - 1) as usize;
                    buf.push(*values.get(ii, jj));
                }
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.set(i, j, buf[(buf.len() - 1) / 2]);
        }
    }
    out
}
