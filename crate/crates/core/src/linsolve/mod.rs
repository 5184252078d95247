//! Symmetric positive definite solves with `A + diag(shift)`.
//!
//! Two methods share one contract (`‖(A + D)x − b‖₂ ≤ tol·‖b‖₂`): conjugate
//! gradients preconditioned by a symmetric red-black Gauss–Seidel sweep, and
//! flexible CG preconditioned by a geometric multigrid V-cycle. All vectors
//! use the padded full-grid layout with zero boundary entries.

mod cg;
mod multigrid;

use rayon::prelude::*;
use serde::Deserialize;

use crate::assembly::StencilOperator;
use crate::error::{Error, Result};

pub use multigrid::{Hierarchy, MIN_COARSE_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearMethod {
    ConjugateGradient,
    Multigrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSolveConfig {
    pub method: LinearMethod,
    /// Relative 2-norm residual target.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Red-black sweeps before and after each coarse correction.
    pub smoother_sweeps: usize,
}

impl Default for LinearSolveConfig {
    fn default() -> Self {
        Self { method: LinearMethod::Multigrid, tolerance: 1e-10, max_iterations: 2000, smoother_sweeps: 2 }
    }
}

impl LinearSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!("linear tolerance must lie in (0, 1), got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("linear max_iterations must be at least 1".into()));
        }
        if self.smoother_sweeps == 0 {
            return Err(Error::Config("smoother_sweeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearStats {
    pub method: LinearMethod,
    pub iterations: usize,
    /// `‖b − (A + D)x₀‖₂`.
    pub initial_residual: f64,
    /// Final residual divided by `‖b‖₂`.
    pub relative_residual: f64,
}

/// Solves `(A + diag(shift)) x = rhs`, starting from `x0` (zero if absent).
pub fn solve_spd(
    op: &StencilOperator,
    shift: Option<&[f64]>,
    rhs: &[f64],
    x0: Option<&[f64]>,
    config: &LinearSolveConfig,
) -> Result<(Vec<f64>, LinearStats)> {
    config.validate()?;
    let total = op.grid().total_points();
    if rhs.len() != total || shift.is_some_and(|s| s.len() != total) || x0.is_some_and(|x| x.len() != total) {
        return Err(Error::invalid("linear solve vectors must use the full-grid layout"));
    }
    if let Some(s) = shift {
        if let Some(bad) = s.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::numerical("linsolve", format!("diagonal shift {} at index {bad} breaks definiteness", s[bad])));
        }
    }
    match config.method {
        LinearMethod::ConjugateGradient => cg::pcg(op, shift, rhs, x0, config),
        LinearMethod::Multigrid => {
            let hierarchy = Hierarchy::build(op, shift)?;
            hierarchy.solve(rhs, x0, config)
        }
    }
}

/// Deterministic dot product: per-plane partial sums added in plane order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunk = chunk_len(a.len());
    let partial: Vec<f64> = a
        .par_chunks(chunk)
        .zip(b.par_chunks(chunk))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// `y = x + beta * y`.
pub fn xpby(x: &[f64], beta: f64, y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi = xi + beta * *yi);
}

fn chunk_len(n: usize) -> usize {
    (n / 64).max(4096)
}

/// `r = b − (A + D) x`.
pub(crate) fn residual_into(op: &StencilOperator, shift: Option<&[f64]>, x: &[f64], b: &[f64], r: &mut [f64]) {
    op.apply(x, shift, r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Tracks the non-divergence rule: every 10 iterations the residual may not
/// exceed ten times its value at the previous check.
pub(crate) struct DivergenceGuard {
    last: f64,
}

impl DivergenceGuard {
    pub(crate) fn new(initial: f64) -> Self {
        Self { last: initial }
    }

    pub(crate) fn check(&mut self, iteration: usize, residual: f64, method: LinearMethod) -> Result<()> {
        if !residual.is_finite() {
            return Err(Error::numerical("linsolve", format!("{method:?}: non-finite residual at iteration {iteration}")));
        }
        if iteration % 10 == 0 {
            if residual > 10.0 * self.last {
                return Err(Error::numerical(
                    "linsolve",
                    format!("{method:?}: residual grew from {:.3e} to {residual:.3e} by iteration {iteration}", self.last),
                ));
            }
            self.last = residual;
        }
        Ok(())
    }
}

pub(crate) fn not_converged(stats: &LinearStats, config: &LinearSolveConfig) -> Error {
    Error::numerical(
        "linsolve",
        format!(
            "{:?} did not reach relative residual {:.1e} in {} iterations (reached {:.3e})",
            stats.method, config.tolerance, stats.iterations, stats.relative_residual
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dielectric::{sphere_union_levelset, DielectricModel, LevelSetField};
    use crate::mesh::{FieldUnit, GridFunction, UniformGrid3};
    use crate::solute::Atom;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use stericpb_oracles as oracles;

    fn sphere_operator(n: usize) -> StencilOperator {
        let g = UniformGrid3::new(10.0, n).unwrap();
        let atoms = vec![Atom::new([0.3, 0.0, -0.2], -5.0, 5.0).unwrap()];
        let d = DielectricModel::build(&sphere_union_levelset(&atoms, g), 1.0, 78.0, 1.5).unwrap();
        StencilOperator::from_dielectric(&d)
    }

    fn random_interior(op: &StencilOperator, seed: u64, scale: f64) -> Vec<f64> {
        let g = op.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0.0; g.total_points()];
        for m in 0..g.interior_count() {
            v[g.interior_to_grid(m)] = rng.gen_range(-scale..scale);
        }
        v
    }

    fn check_solution(op: &StencilOperator, shift: Option<&[f64]>, rhs: &[f64], x: &[f64], tol: f64) {
        let mut r = vec![0.0; rhs.len()];
        residual_into(op, shift, x, rhs, &mut r);
        assert!(norm2(&r) <= tol * norm2(rhs), "{} > {}", norm2(&r), tol * norm2(rhs));
    }

    #[test]
    fn zero_rhs_needs_no_iterations() {
        let op = sphere_operator(7);
        for method in [LinearMethod::ConjugateGradient, LinearMethod::Multigrid] {
            let cfg = LinearSolveConfig { method, ..Default::default() };
            let rhs = vec![0.0; op.grid().total_points()];
            let (x, stats) = solve_spd(&op, None, &rhs, None, &cfg).unwrap();
            assert_eq!(stats.iterations, 0);
            assert!(x.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_eps_matches_dense_direct_solve() {
        let g = UniformGrid3::new(1.0, 3).unwrap();
        let ls = LevelSetField(GridFunction::from_fn(g, FieldUnit::Length, |_| 100.0));
        let d = DielectricModel::build(&ls, 1.0, 4.0, 0.5).unwrap();
        let op = StencilOperator::from_dielectric(&d);
        let rhs = random_interior(&op, 1, 1.0);
        let dense = op.to_dense(None).unwrap();
        let m = g.interior_count();
        let b: Vec<f64> = (0..m).map(|i| rhs[g.interior_to_grid(i)]).collect();
        let direct = oracles::dense_solve_small(&DMatrix::from_row_slice(m, m, &dense), &b);
        for method in [LinearMethod::ConjugateGradient, LinearMethod::Multigrid] {
            let cfg = LinearSolveConfig { method, tolerance: 1e-10, ..Default::default() };
            let (x, _) = solve_spd(&op, None, &rhs, None, &cfg).unwrap();
            let scale = direct.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..m {
                assert!((x[g.interior_to_grid(i)] - direct.values[i]).abs() <= 10.0 * 1e-10 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn dominant_shift_converges_quickly() {
        let op = sphere_operator(9);
        let shift = vec![1e9; op.grid().total_points()];
        let rhs = random_interior(&op, 2, 1.0);
        let cfg = LinearSolveConfig { method: LinearMethod::ConjugateGradient, ..Default::default() };
        let (x, stats) = solve_spd(&op, Some(&shift), &rhs, None, &cfg).unwrap();
        assert!(stats.iterations <= 4, "{}", stats.iterations);
        check_solution(&op, Some(&shift), &rhs, &x, 1e-10);
    }

    #[test]
    fn methods_agree_on_sphere_problem_with_shift() {
        let op = sphere_operator(23);
        let g = *op.grid();
        let mut shift = vec![0.0; g.total_points()];
        for m in 0..g.interior_count() {
            let q = g.interior_to_grid(m);
            let x = g.point(g.grid_coords(q).0, g.grid_coords(q).1, g.grid_coords(q).2);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            shift[q] = if r > 5.0 { 50.0 * (-(r - 5.0)).exp() } else { 0.0 };
        }
        let rhs = random_interior(&op, 3, 100.0);
        let tol = 1e-10;
        let mut sols = Vec::new();
        for method in [LinearMethod::ConjugateGradient, LinearMethod::Multigrid] {
            let cfg = LinearSolveConfig { method, tolerance: tol, ..Default::default() };
            let (x, stats) = solve_spd(&op, Some(&shift), &rhs, None, &cfg).unwrap();
            assert!(stats.relative_residual <= tol);
            check_solution(&op, Some(&shift), &rhs, &x, tol);
            sols.push(x);
        }
        let scale = sols[0].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = sols[0].iter().zip(&sols[1]).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        assert!(diff <= 1e-7 * scale, "{diff} vs {scale}");
    }

    #[test]
    fn multigrid_iteration_count_is_grid_independent() {
        let mut counts = Vec::new();
        for n in [23, 47] {
            let op = sphere_operator(n);
            let rhs = random_interior(&op, 4, 1.0);
            let cfg = LinearSolveConfig { method: LinearMethod::Multigrid, tolerance: 1e-8, ..Default::default() };
            let (_, stats) = solve_spd(&op, None, &rhs, None, &cfg).unwrap();
            counts.push(stats.iterations);
        }
        assert!(counts[1] <= counts[0] + 6, "{counts:?}");
    }

    #[test]
    fn rejects_negative_shift_and_reports_budget() {
        let op = sphere_operator(7);
        let rhs = random_interior(&op, 5, 1.0);
        let mut shift = vec![0.0; op.grid().total_points()];
        shift[op.grid().grid_index(3, 3, 3)] = -1.0;
        assert!(solve_spd(&op, Some(&shift), &rhs, None, &LinearSolveConfig::default()).is_err());
        let cfg = LinearSolveConfig { method: LinearMethod::ConjugateGradient, tolerance: 1e-12, max_iterations: 1, smoother_sweeps: 1 };
        let err = solve_spd(&op, None, &rhs, None, &cfg).unwrap_err();
        assert!(err.to_string().contains("did not reach"), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(LinearSolveConfig::default().validate().is_ok());
        assert!(LinearSolveConfig::default().with_tolerance(1.5).validate().is_err());
        assert!(LinearSolveConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn solution_satisfies_contract(seed in 0u64..1000, tol_exp in 4i32..11, use_mg in any::<bool>()) {
            let op = sphere_operator(11);
            let rhs = random_interior(&op, seed, 10.0);
            let shift = random_interior(&op, seed + 1, 5.0).iter().map(|v| v.abs()).collect::<Vec<_>>();
            let tol = 10f64.powi(-tol_exp);
            let method = if use_mg { LinearMethod::Multigrid } else { LinearMethod::ConjugateGradient };
            let cfg = LinearSolveConfig { method, tolerance: tol, ..Default::default() };
            let (x, _) = solve_spd(&op, Some(&shift), &rhs, None, &cfg).unwrap();
            check_solution(&op, Some(&shift), &rhs, &x, tol);
            let g = op.grid();
            for q in 0..g.total_points() {
                let (i, j, k) = g.grid_coords(q);
                if g.is_boundary(i, j, k) {
                    prop_assert_eq!(x[q], 0.0);
                }
            }
        }
    }
}
