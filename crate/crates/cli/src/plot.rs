//! Minimal PGM plot rendering for report curves and scatters. Numeric data
//! lives in the companion CSVs; these images are quick-look renders.

use std::path::Path;

use toa_tomo_core::error::Result;
use toa_tomo_core::grid::Grid2;
use toa_tomo_core::io::write_pgm;

const WIDTH: usize = 640;
const HEIGHT: usize = 440;
const MARGIN: usize = 40;

struct Canvas {
    pixels: Grid2<f64>,
}

impl Canvas {
    fn new() -> Self {
        Canvas { pixels: Grid2::filled(WIDTH, HEIGHT, 1.0) }
    }

    fn set(&mut self, x: isize, y: isize) {
        if x >= 0 && y >= 0 && (x as usize) < WIDTH && (y as usize) < HEIGHT {
            self.pixels.set(x as usize, y as usize, 0.0);
        }
    }

    fn line(&mut self, (x0, y0): (isize, isize), (x1, y1): (isize, isize)) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        let (mut x, mut y) = (x0, y0);
        loop {
            self.set(x, y);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn dot(&mut self, x: isize, y: isize) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                self.set(x + dx, y + dy);
            }
        }
    }

    fn write(&self, path: &Path, hash: u64) -> Result<()> {
        write_pgm(path, &self.pixels, 0.0, 1.0, hash)
    }
}

fn data_range(points: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xr = (xr.0.min(x), xr.1.max(x));
        yr = (yr.0.min(y), yr.1.max(y));
    }
    if xr.0 == xr.1 {
        xr = (xr.0 - 0.5, xr.1 + 0.5);
    }
    if yr.0 == yr.1 {
        yr = (yr.0 - 0.5, yr.1 + 0.5);
    }
    (xr, yr)
}

fn to_pixel(p: (f64, f64), xr: (f64, f64), yr: (f64, f64)) -> (isize, isize) {
    let w = (WIDTH - 2 * MARGIN) as f64;
    let h = (HEIGHT - 2 * MARGIN) as f64;
    let px = MARGIN as f64 + (p.0 - xr.0) / (xr.1 - xr.0) * w;
    // PGM writes row ny-1 first, so larger y lands higher up already; keep
    // the mapping direct.
    let py = MARGIN as f64 + (p.1 - yr.0) / (yr.1 - yr.0) * h;
    (px.round() as isize, py.round() as isize)
}

fn axes(canvas: &mut Canvas) {
    let m = MARGIN as isize;
    canvas.line((m, m), ((WIDTH - MARGIN) as isize, m));
    canvas.line((m, m), (m, (HEIGHT - MARGIN) as isize));
}

pub fn render_curve(path: &Path, points: &[(f64, f64)], hash: u64) -> Result<()> {
    let mut canvas = Canvas::new();
    axes(&mut canvas);
    if !points.is_empty() {
        let (xr, yr) = data_range(points);
        let mut prev: Option<(isize, isize)> = None;
        for &p in points {
            let px = to_pixel(p, xr, yr);
            if let Some(q) = prev {
                canvas.line(q, px);
            }
            prev = Some(px);
        }
    }
    canvas.write(path, hash)
}

pub fn render_scatter(path: &Path, points: &[(f64, f64)], hash: u64) -> Result<()> {
    let mut canvas = Canvas::new();
    axes(&mut canvas);
    if !points.is_empty() {
        let (xr, yr) = data_range(points);
        for &p in points {
            let (x, y) = to_pixel(p, xr, yr);
            canvas.dot(x, y);
        }
    }
    canvas.write(path, hash)
}
