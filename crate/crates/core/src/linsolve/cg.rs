//! Conjugate gradients with a symmetric red-black Gauss–Seidel preconditioner.

use rayon::prelude::*;

use super::{axpy, dot, norm2, not_converged, residual_into, xpby, DivergenceGuard, LinearMethod, LinearSolveConfig, LinearStats};
use crate::assembly::StencilOperator;
use crate::error::Result;

/// One red-black Gauss–Seidel half sweep on points with `(i + j + k) % 2 == colour`.
///
/// `scratch` receives a copy of `x` so the colour update reads only values of
/// the other colour, which it leaves untouched.
pub(crate) fn rb_sweep(
    op: &StencilOperator,
    shift: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    scratch: &mut [f64],
    colour: usize,
) {
    let g = op.grid();
    let p = g.points_per_axis();
    let n = g.n_interior();
    let (s1, s2) = (p, p * p);
    let (fx, fy, fz) = (op.face(0), op.face(1), op.face(2));
    let diag = op.diagonal();
    scratch.copy_from_slice(x);
    let old: &[f64] = scratch;
    x.par_chunks_mut(s2).enumerate().for_each(|(k, plane)| {
        if k == 0 || k > n {
            return;
        }
        for j in 1..=n {
            let start = 1 + (colour + j + k + 1) % 2;
            let mut i = start;
            while i <= n {
                let q = i + p * j + s2 * k;
                let off = fx[q] * old[q + 1]
                    + fx[q - 1] * old[q - 1]
                    + fy[q] * old[q + s1]
                    + fy[q - s1] * old[q - s1]
                    + fz[q] * old[q + s2]
                    + fz[q - s2] * old[q - s2];
                let d = diag[q] + shift.map_or(0.0, |s| s[q]);
                plane[i + p * j] = (b[q] + off) / d;
                i += 2;
            }
        }
    });
}

/// Symmetric Gauss–Seidel preconditioner `z = M⁻¹ r`: red, black, red sweeps from zero.
pub(crate) fn sgs_apply(op: &StencilOperator, shift: Option<&[f64]>, r: &[f64], z: &mut [f64], scratch: &mut [f64]) {
    z.fill(0.0);
    rb_sweep(op, shift, r, z, scratch, 0);
    rb_sweep(op, shift, r, z, scratch, 1);
    rb_sweep(op, shift, r, z, scratch, 0);
}

pub(crate) fn pcg(
    op: &StencilOperator,
    shift: Option<&[f64]>,
    rhs: &[f64],
    x0: Option<&[f64]>,
    config: &LinearSolveConfig,
) -> Result<(Vec<f64>, LinearStats)> {
    let total = rhs.len();
    let method = LinearMethod::ConjugateGradient;
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
    let mut scratch = vec![0.0; total];
    let mut z = vec![0.0; total];
    sgs_apply(op, shift, &r, &mut z, &mut scratch);
    let mut p = z.clone();
    let mut q = vec![0.0; total];
    let mut rz = dot(&r, &z);
    let mut guard = DivergenceGuard::new(rnorm);
    while stats.iterations < config.max_iterations {
        op.apply(&p, shift, &mut q);
        let alpha = rz / dot(&p, &q);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        stats.iterations += 1;
        rnorm = norm2(&r);
        stats.relative_residual = rnorm / bnorm;
        guard.check(stats.iterations, rnorm, method)?;
        if rnorm <= target {
            return Ok((x, stats));
        }
        sgs_apply(op, shift, &r, &mut z, &mut scratch);
        let rz_new = dot(&r, &z);
        xpby(&z, rz_new / rz, &mut p);
        rz = rz_new;
    }
    Err(not_converged(&stats, config))
}
