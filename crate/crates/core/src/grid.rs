//! Dense 2D node grid used for media, images and field arrays.
//!
//! Values live on grid nodes spaced `dx` apart. The grid is centered on the
//! origin: node `(i, j)` sits at `((i - (nx-1)/2) * dx, (j - (ny-1)/2) * dx)`.
//! Node-centered sampling keeps coarse nodes exactly on top of fine nodes
//! when the spacing is halved, which the multi-resolution schedule relies on.

/// Row-major 2D array with `nx` the fast (x) dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub nx: usize,
    pub ny: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid2<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Grid2 { nx, ny, data: vec![value; nx * ny] }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nx * ny, "grid data length mismatch");
        Grid2 { nx, ny, data }
    }
}

impl<T> Grid2<T> {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        let k = self.idx(i, j);
        self.data[k] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }
}

/// Maps between node indices and physical coordinates for a centered grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
}

impl GridGeometry {
    /// Node counts for a grid spanning `(len_x, len_y)` meters at spacing `dx`.
    ///
    /// `round(len/dx)` cells, hence `round(len/dx) + 1` nodes per axis.
    pub fn for_area(len_x: f64, len_y: f64, dx: f64) -> Self {
        let nx = (len_x / dx).round() as usize + 1;
        let ny = (len_y / dx).round() as usize + 1;
        GridGeometry { nx, ny, dx }
    }

    /// Physical position of node `(i, j)`.
    #[inline]
    pub fn node_pos(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - (self.nx as f64 - 1.0) / 2.0) * self.dx,
            (j as f64 - (self.ny as f64 - 1.0) / 2.0) * self.dx,
        )
    }

    /// Nearest node to a physical position. Positions outside the grid clamp
    /// to the boundary node.
    pub fn nearest_node(&self, x: f64, y: f64) -> (usize, usize) {
        let fi = x / self.dx + (self.nx as f64 - 1.0) / 2.0;
        let fj = y / self.dx + (self.ny as f64 - 1.0) / 2.0;
        let i = fi.round().clamp(0.0, self.nx as f64 - 1.0) as usize;
        let j = fj.round().clamp(0.0, self.ny as f64 - 1.0) as usize;
        (i, j)
    }

    /// Physical extent covered by the nodes per axis.
    pub fn span(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.dx, (self.ny - 1) as f64 * self.dx)
    }
}

/// Bilinear resample of node values onto a new centered grid.
///
/// Sample points outside the source hull clamp to the edge, so a constant
/// field resamples to the same constant exactly.
pub fn resample_bilinear(
    src: &Grid2<f64>,
    src_geom: GridGeometry,
    dst_geom: GridGeometry,
) -> Grid2<f64> {
    let mut out = Grid2::filled(dst_geom.nx, dst_geom.ny, 0.0);
    for j in 0..dst_geom.ny {
        for i in 0..dst_geom.nx {
            let (x, y) = dst_geom.node_pos(i, j);
            let fi = (x / src_geom.dx + (src_geom.nx as f64 - 1.0) / 2.0)
                .clamp(0.0, src_geom.nx as f64 - 1.0);
            let fj = (y / src_geom.dx + (src_geom.ny as f64 - 1.0) / 2.0)
                .clamp(0.0, src_geom.ny as f64 - 1.0);
            let i0 = (fi.floor() as usize).min(src_geom.nx - 1);
            let j0 = (fj.floor() as usize).min(src_geom.ny - 1);
            let i1 = (i0 + 1).min(src_geom.nx - 1);
            let j1 = (j0 + 1).min(src_geom.ny - 1);
            let tx = fi - i0 as f64;
            let ty = fj - j0 as f64;
            let v00 = *src.get(i0, j0);
            let v10 = *src.get(i1, j0);
            let v01 = *src.get(i0, j1);
            let v11 = *src.get(i1, j1);
            let v = v00 * (1.0 - tx) * (1.0 - ty)
                + v10 * tx * (1.0 - ty)
                + v01 * (1.0 - tx) * ty
                + v11 * tx * ty;
            out.set(i, j, v);
        }
    }
    out
}
