//! Uniform cubic grid on `[-L, L]³` and grid-function storage.
//!
//! Grid points are indexed `0..=N_h+1` on each axis; `1..=N_h` are interior.
//! Full-grid arrays (including the boundary layer) use x-fastest order over
//! `(N_h+2)³` points. The unknown vector of the nonlinear system covers the
//! `N_h³` interior points only, also x-fastest, so neighbours of unknown `m`
//! sit at `m ± 1`, `m ± N_h`, `m ± N_h²`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid3 {
    half_width: f64,
    n: usize,
    h: f64,
}

impl UniformGrid3 {
    pub fn new(half_width: f64, n_interior: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::invalid(format!("grid half-width must be positive, got {half_width}")));
        }
        if n_interior == 0 {
            return Err(Error::invalid("grid needs at least one interior point per axis"));
        }
        Ok(Self {
            half_width,
            n: n_interior,
            h: 2.0 * half_width / (n_interior as f64 + 1.0),
        })
    }

    /// Grid with the interior count chosen so the spacing equals `spacing`.
    pub fn with_spacing(half_width: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        let intervals = 2.0 * half_width / spacing;
        let rounded = intervals.round();
        if (intervals - rounded).abs() > 1e-9 * intervals.max(1.0) || rounded < 2.0 {
            return Err(Error::invalid(format!(
                "spacing {spacing} does not divide the box width {}",
                2.0 * half_width
            )));
        }
        Self::new(half_width, rounded as usize - 1)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_interior(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn points_per_axis(&self) -> usize {
        self.n + 2
    }

    pub fn total_points(&self) -> usize {
        let p = self.n + 2;
        p * p * p
    }

    pub fn interior_count(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Coordinate of grid line `i` (0 ≤ i ≤ N_h+1) along any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    #[inline]
    pub fn grid_index(&self, i: usize, j: usize, k: usize) -> usize {
        let p = self.n + 2;
        i + p * (j + p * k)
    }

    #[inline]
    pub fn grid_coords(&self, idx: usize) -> (usize, usize, usize) {
        let p = self.n + 2;
        (idx % p, (idx / p) % p, idx / (p * p))
    }

    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        let last = self.n + 1;
        i == 0 || j == 0 || k == 0 || i == last || j == last || k == last
    }

    /// Flat unknown index of interior lattice point `(i, j, k)`, each in `1..=N_h`.
    pub fn interior_index(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        let n = self.n;
        if !(1..=n).contains(&i) || !(1..=n).contains(&j) || !(1..=n).contains(&k) {
            return Err(Error::invalid(format!("({i}, {j}, {k}) is not an interior point of a grid with N_h = {n}")));
        }
        Ok((i - 1) + n * ((j - 1) + n * (k - 1)))
    }

    /// Inverse of [`interior_index`](Self::interior_index).
    pub fn interior_coords(&self, m: usize) -> (usize, usize, usize) {
        let n = self.n;
        (m % n + 1, (m / n) % n + 1, m / (n * n) + 1)
    }

    /// Full-grid index of interior unknown `m`.
    #[inline]
    pub fn interior_to_grid(&self, m: usize) -> usize {
        let (i, j, k) = self.interior_coords(m);
        self.grid_index(i, j, k)
    }

    /// Cell containing `x` and the fractional offsets inside it, for trilinear
    /// interpolation. `None` when `x` lies outside the box.
    pub fn locate(&self, x: [f64; 3]) -> Option<([usize; 3], [f64; 3])> {
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        let last = self.n + 1;
        for a in 0..3 {
            let t = (x[a] + self.half_width) / self.h;
            if !(t >= -1e-9 && t <= last as f64 + 1e-9) {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(last - 1);
            cell[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        Some((cell, frac))
    }
}

/// What the numbers in a [`GridFunction`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldUnit {
    /// Dimensionless potential `βeψ`, numerically equal to k_BT/e.
    Potential,
    /// Number density, ions per Å³.
    NumberDensity,
    /// Molar concentration.
    Molar,
    /// Lengths such as level-set distances, Å.
    Length,
    Unitless,
}

/// Values on every point of a grid, boundary layer included.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: UniformGrid3,
    values: Vec<f64>,
    unit: FieldUnit,
}

impl GridFunction {
    pub fn zeros(grid: UniformGrid3, unit: FieldUnit) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.total_points()],
            unit,
        }
    }

    pub fn from_values(grid: UniformGrid3, values: Vec<f64>, unit: FieldUnit) -> Result<Self> {
        if values.len() != grid.total_points() {
            return Err(Error::invalid(format!(
                "grid function needs {} values, got {}",
                grid.total_points(),
                values.len()
            )));
        }
        Ok(Self { grid, values, unit })
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn(grid: UniformGrid3, unit: FieldUnit, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let p = grid.points_per_axis();
        let mut values = vec![0.0; grid.total_points()];
        values.par_chunks_mut(p * p).enumerate().for_each(|(k, plane)| {
            for j in 0..p {
                for i in 0..p {
                    plane[i + p * j] = f(grid.point(i, j, k));
                }
            }
        });
        Self { grid, values, unit }
    }

    pub fn grid(&self) -> &UniformGrid3 {
        &self.grid
    }

    pub fn unit(&self) -> FieldUnit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.grid_index(i, j, k)]
    }

    /// Interior values in unknown-vector order.
    pub fn gather_interior(&self) -> Vec<f64> {
        let n = self.grid.n_interior();
        let mut out = Vec::with_capacity(n * n * n);
        for k in 1..=n {
            for j in 1..=n {
                let start = self.grid.grid_index(1, j, k);
                out.extend_from_slice(&self.values[start..start + n]);
            }
        }
        out
    }

    /// Overwrites interior values from an unknown vector; boundary values are kept.
    pub fn scatter_interior(&mut self, interior: &[f64]) {
        let n = self.grid.n_interior();
        assert_eq!(interior.len(), n * n * n);
        for k in 1..=n {
            for j in 1..=n {
                let start = self.grid.grid_index(1, j, k);
                let src = n * ((j - 1) + n * (k - 1));
                self.values[start..start + n].copy_from_slice(&interior[src..src + n]);
            }
        }
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    /// Trilinear interpolation at an arbitrary point inside the box.
    pub fn interpolate(&self, x: [f64; 3]) -> Option<f64> {
        let ([i, j, k], [fx, fy, fz]) = self.grid.locate(x)?;
        let mut acc = 0.0;
        for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
            for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let w = wx * wy * wz;
                    if w != 0.0 {
                        acc += w * self.at(i + di, j + dj, k + dk);
                    }
                }
            }
        }
        Some(acc)
    }
}
