//! Geometric multigrid V-cycle used as a preconditioner for flexible CG.
//!
//! Vertex-centred full coarsening: fine interior size `n` (odd) maps to
//! `(n − 1)/2`, coarse point `i` sitting on fine point `2i`. Coarse faces are
//! the harmonic mean of the two fine faces they span, divided by 4 for the
//! doubled spacing; the diagonal shift is restricted by full weighting.

use rayon::prelude::*;

use super::cg::{pcg, rb_sweep};
use super::{dot, norm2, not_converged, residual_into, xpby, DivergenceGuard, LinearMethod, LinearSolveConfig, LinearStats};
use crate::assembly::StencilOperator;
use crate::error::Result;
use crate::mesh::UniformGrid3;

/// Coarsening stops before a level would have fewer interior points per axis.
pub const MIN_COARSE_POINTS: usize = 3;

const COARSE_TOLERANCE: f64 = 1e-10;
const COARSE_MAX_ITERATIONS: usize = 10_000;

pub struct Hierarchy<'a> {
    fine: &'a StencilOperator,
    fine_shift: Option<&'a [f64]>,
    coarse: Vec<(StencilOperator, Option<Vec<f64>>)>,
}

impl<'a> Hierarchy<'a> {
    pub fn build(fine: &'a StencilOperator, fine_shift: Option<&'a [f64]>) -> Result<Self> {
        let mut coarse: Vec<(StencilOperator, Option<Vec<f64>>)> = Vec::new();
        loop {
            let (op, shift) = match coarse.last() {
                Some((op, shift)) => (op, shift.as_deref()),
                None => (fine, fine_shift),
            };
            let n = op.grid().n_interior();
            if n % 2 == 0 || (n - 1) / 2 < MIN_COARSE_POINTS {
                break;
            }
            let cgrid = UniformGrid3::new(op.grid().half_width(), (n - 1) / 2)?;
            let cop = coarsen_operator(op, cgrid);
            let cshift = shift.map(|s| {
                let mut out = vec![0.0; cgrid.total_points()];
                restrict(op.grid(), &cgrid, s, &mut out);
                out
            });
            coarse.push((cop, cshift));
        }
        Ok(Self { fine, fine_shift, coarse })
    }

    /// Number of grid levels including the fine one.
    pub fn depth(&self) -> usize {
        self.coarse.len() + 1
    }

    /// Interior points per axis on each level, finest first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.fine.grid().n_interior())
            .chain(self.coarse.iter().map(|(op, _)| op.grid().n_interior()))
            .collect()
    }

    fn level(&self, l: usize) -> (&StencilOperator, Option<&[f64]>) {
        if l == 0 {
            (self.fine, self.fine_shift)
        } else {
            let (op, s) = &self.coarse[l - 1];
            (op, s.as_deref())
        }
    }

    /// One V-cycle applied to `b` from a zero initial guess.
    fn vcycle(&self, l: usize, b: &[f64], sweeps: usize) -> Result<Vec<f64>> {
        let (op, shift) = self.level(l);
        let total = b.len();
        if l + 1 == self.depth() {
            let cfg = LinearSolveConfig {
                method: LinearMethod::ConjugateGradient,
                tolerance: COARSE_TOLERANCE,
                max_iterations: COARSE_MAX_ITERATIONS,
                smoother_sweeps: 1,
            };
            return Ok(pcg(op, shift, b, None, &cfg)?.0);
        }
        let mut x = vec![0.0; total];
        let mut scratch = vec![0.0; total];
        for _ in 0..sweeps {
            rb_sweep(op, shift, b, &mut x, &mut scratch, 0);
            rb_sweep(op, shift, b, &mut x, &mut scratch, 1);
        }
        let mut r = vec![0.0; total];
        residual_into(op, shift, &x, b, &mut r);
        let (cop, _) = self.level(l + 1);
        let mut rc = vec![0.0; cop.grid().total_points()];
        restrict(op.grid(), cop.grid(), &r, &mut rc);
        let ec = self.vcycle(l + 1, &rc, sweeps)?;
        prolong_add(op.grid(), cop.grid(), &ec, &mut x);
        for _ in 0..sweeps {
            rb_sweep(op, shift, b, &mut x, &mut scratch, 1);
            rb_sweep(op, shift, b, &mut x, &mut scratch, 0);
        }
        Ok(x)
    }

    /// Flexible (Polak–Ribière) CG preconditioned by one V-cycle per iteration.
    pub fn solve(&self, rhs: &[f64], x0: Option<&[f64]>, config: &LinearSolveConfig) -> Result<(Vec<f64>, LinearStats)> {
        let total = rhs.len();
        let method = LinearMethod::Multigrid;
        let (op, shift) = self.level(0);
        let bnorm = norm2(rhs);
        let mut x = x0.map_or_else(|| vec![0.0; total], <[f64]>::to_vec);
        let mut stats = LinearStats { method, iterations: 0, initial_residual: 0.0, relative_residual: 0.0 };
        if bnorm == 0.0 {
            x.fill(0.0);
            return Ok((x, stats));
        }
        let mut r = vec![0.0; total];
        residual_into(op, shift, &x, rhs, &mut r);
        let mut rnorm = norm2(&r);
        stats.initial_residual = rnorm;
        stats.relative_residual = rnorm / bnorm;
        let target = config.tolerance * bnorm;
        if rnorm <= target {
            return Ok((x, stats));
        }
        let sweeps = config.smoother_sweeps;
        let mut z = self.vcycle(0, &r, sweeps)?;
        let mut p = z.clone();
        let mut q = vec![0.0; total];
        let mut rz = dot(&r, &z);
        let mut r_old = vec![0.0; total];
        let mut guard = DivergenceGuard::new(rnorm);
        while stats.iterations < config.max_iterations {
            op.apply(&p, shift, &mut q);
            let alpha = rz / dot(&p, &q);
            r_old.copy_from_slice(&r);
            super::axpy(alpha, &p, &mut x);
            super::axpy(-alpha, &q, &mut r);
            stats.iterations += 1;
            rnorm = norm2(&r);
            stats.relative_residual = rnorm / bnorm;
            guard.check(stats.iterations, rnorm, method)?;
            if rnorm <= target {
                return Ok((x, stats));
            }
            z = self.vcycle(0, &r, sweeps)?;
            let rz_new = dot(&r, &z);
            let beta = ((rz_new - dot(&z, &r_old)) / rz).max(0.0);
            xpby(&z, beta, &mut p);
            rz = rz_new;
        }
        Err(not_converged(&stats, config))
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

fn coarsen_operator(fine: &StencilOperator, cgrid: UniformGrid3) -> StencilOperator {
    let fg = fine.grid();
    let nc = cgrid.n_interior();
    let total = cgrid.total_points();
    let fine_step = [1, fg.points_per_axis(), fg.points_per_axis().pow(2)];
    let faces = [0, 1, 2].map(|axis| {
        let f = fine.face(axis);
        let mut out = vec![0.0; total];
        out.par_iter_mut().enumerate().for_each(|(q, o)| {
            let (i, j, k) = cgrid.grid_coords(q);
            let c = [i, j, k];
            if c[axis] > nc || (0..3).any(|a| a != axis && (c[a] == 0 || c[a] > nc)) {
                return;
            }
            let qf = fg.grid_index(2 * i, 2 * j, 2 * k);
            *o = 0.25 * harmonic(f[qf], f[qf + fine_step[axis]]);
        });
        out
    });
    StencilOperator::from_faces(cgrid, faces)
}

/// Full-weighting restriction `R = Pᵀ/8` onto coarse interior points.
pub(crate) fn restrict(fg: &UniformGrid3, cg: &UniformGrid3, fine: &[f64], coarse: &mut [f64]) {
    let nc = cg.n_interior();
    let pf = fg.points_per_axis();
    let (s1, s2) = (pf as isize, (pf * pf) as isize);
    const W: [f64; 3] = [0.5, 1.0, 0.5];
    coarse.par_iter_mut().enumerate().for_each(|(q, out)| {
        let (i, j, k) = cg.grid_coords(q);
        if i == 0 || j == 0 || k == 0 || i > nc || j > nc || k > nc {
            *out = 0.0;
            return;
        }
        let centre = fg.grid_index(2 * i, 2 * j, 2 * k) as isize;
        let mut acc = 0.0;
        for (dz, wz) in W.iter().enumerate() {
            for (dy, wy) in W.iter().enumerate() {
                for (dx, wx) in W.iter().enumerate() {
                    let idx = centre + (dx as isize - 1) + (dy as isize - 1) * s1 + (dz as isize - 1) * s2;
                    acc += wx * wy * wz * fine[idx as usize];
                }
            }
        }
        *out = acc / 8.0;
    });
}

/// `fine += P coarse` with trilinear interpolation; fine boundary entries stay untouched.
pub(crate) fn prolong_add(fg: &UniformGrid3, cg: &UniformGrid3, coarse: &[f64], fine: &mut [f64]) {
    let n = fg.n_interior();
    let pf = fg.points_per_axis();
    fine.par_chunks_mut(pf * pf).enumerate().for_each(|(k, plane)| {
        if k == 0 || k > n {
            return;
        }
        let wk = weights(k);
        for j in 1..=n {
            let wj = weights(j);
            for i in 1..=n {
                let wi = weights(i);
                let mut acc = 0.0;
                for &(ck, a) in wk.iter().flatten() {
                    for &(cj, b) in wj.iter().flatten() {
                        for &(ci, c) in wi.iter().flatten() {
                            acc += a * b * c * coarse[cg.grid_index(ci, cj, ck)];
                        }
                    }
                }
                plane[i + pf * j] += acc;
            }
        }
    });
}

fn weights(i: usize) -> [Option<(usize, f64)>; 2] {
    if i % 2 == 0 {
        [Some((i / 2, 1.0)), None]
    } else {
        [Some((i / 2, 0.5)), Some((i / 2 + 1, 0.5))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dielectric::{DielectricModel, LevelSetField};
    use crate::mesh::{FieldUnit, GridFunction};

    #[test]
    fn restriction_is_scaled_prolongation_transpose() {
        let fg = UniformGrid3::new(1.0, 7).unwrap();
        let cg = UniformGrid3::new(1.0, 3).unwrap();
        let mut state = 7u64;
        let mut rand = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut f = vec![0.0; fg.total_points()];
        for m in 0..fg.interior_count() {
            f[fg.interior_to_grid(m)] = rand();
        }
        let mut c = vec![0.0; cg.total_points()];
        for m in 0..cg.interior_count() {
            c[cg.interior_to_grid(m)] = rand();
        }
        let mut rf = vec![0.0; cg.total_points()];
        restrict(&fg, &cg, &f, &mut rf);
        let mut pc = vec![0.0; fg.total_points()];
        prolong_add(&fg, &cg, &c, &mut pc);
        let lhs = dot(&rf, &c);
        let rhs = dot(&f, &pc) / 8.0;
        assert!((lhs - rhs).abs() < 1e-14, "{lhs} {rhs}");
    }

    #[test]
    fn prolongation_reproduces_linear_functions_inside() {
        let fg = UniformGrid3::new(1.0, 7).unwrap();
        let cg = UniformGrid3::new(1.0, 3).unwrap();
        let lin = |x: [f64; 3]| 1.0 + x[0] - 2.0 * x[1] + 0.5 * x[2];
        let mut c = vec![0.0; cg.total_points()];
        for q in 0..cg.total_points() {
            let (i, j, k) = cg.grid_coords(q);
            if !cg.is_boundary(i, j, k) {
                c[q] = lin(cg.point(i, j, k));
            }
        }
        let mut f = vec![0.0; fg.total_points()];
        prolong_add(&fg, &cg, &c, &mut f);
        for (i, j, k) in [(2, 2, 2), (3, 4, 5), (5, 3, 3), (4, 4, 4)] {
            let q = fg.grid_index(i, j, k);
            assert!((f[q] - lin(fg.point(i, j, k))).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_operator_of_constant_coefficient_is_rediscretisation() {
        let fg = UniformGrid3::new(1.0, 7).unwrap();
        let ls = LevelSetField(GridFunction::from_fn(fg, FieldUnit::Length, |_| 100.0));
        let d = DielectricModel::build(&ls, 3.0, 3.0, 0.5).unwrap();
        let fine = StencilOperator::from_dielectric(&d);
        let h = Hierarchy::build(&fine, None).unwrap();
        assert_eq!(h.sizes(), vec![7, 3]);
        let cg = UniformGrid3::new(1.0, 3).unwrap();
        let expected = 3.0 / (cg.spacing() * cg.spacing());
        let (cop, _) = h.level(1);
        let q = cg.grid_index(2, 2, 2);
        for axis in 0..3 {
            assert!((cop.face(axis)[q] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn hierarchy_depths() {
        for (n, sizes) in [(49, vec![49, 24]), (99, vec![99, 49, 24]), (7, vec![7, 3]), (5, vec![5]), (8, vec![8])] {
            let fg = UniformGrid3::new(10.0, n).unwrap();
            let ls = LevelSetField(GridFunction::from_fn(fg, FieldUnit::Length, |_| 100.0));
            let d = DielectricModel::build(&ls, 1.0, 1.0, 0.5).unwrap();
            let fine = StencilOperator::from_dielectric(&d);
            assert_eq!(Hierarchy::build(&fine, None).unwrap().sizes(), sizes);
        }
    }
}
