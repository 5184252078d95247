//! Newton iteration with backtracking and truncation to the bounds `u⁻ ≤ ψ ≤ u⁺`.

use crate::assembly::{max_norm, AssembledSystem};
use crate::closure::{Closure, IonSpecies};
use crate::error::{Error, Result};
use crate::linsolve::{solve_spd, LinearSolveConfig};
use crate::mesh::GridFunction;

/// Smallest accepted backtracking factor.
pub const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;
/// Relative tolerance of the two bound solves.
pub const BOUNDS_TOLERANCE: f64 = 1e-12;
const INNER_TOLERANCE_MAX: f64 = 1e-10;
const INNER_TOLERANCE_MIN: f64 = 1e-14;

/// Pointwise bounds on the reaction potential, in the unknown layout (zero on the boundary).
#[derive(Debug, Clone)]
pub struct Bounds {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// `A u± − b − 4πλ χ ρ±`, the linear-solve defect of each bound.
    pub upper_defect: Vec<f64>,
    pub lower_defect: Vec<f64>,
}

impl Bounds {
    pub fn upper_field(&self, system: &AssembledSystem) -> GridFunction {
        system.to_field(&self.upper)
    }

    pub fn lower_field(&self, system: &AssembledSystem) -> GridFunction {
        system.to_field(&self.lower)
    }

    pub fn contains(&self, psi: &[f64]) -> bool {
        psi.iter().zip(self.lower.iter().zip(&self.upper)).all(|(p, (lo, hi))| lo <= p && p <= hi)
    }
}

/// Extreme charge densities a bounded closure can reach: `ρ ∈ [min(0, min z/v), max(0, max z/v)]`.
pub fn charge_density_range(species: &[IonSpecies]) -> (f64, f64) {
    species.iter().fold((0.0f64, 0.0f64), |(lo, hi), s| {
        let r = s.valence_to_volume();
        (lo.min(r), hi.max(r))
    })
}

/// Solves `A u± = b + 4πλ χ ρ±` with `ρ±` from [`charge_density_range`].
pub fn compute_bounds(system: &AssembledSystem, species: &[IonSpecies], linear: &LinearSolveConfig) -> Result<Bounds> {
    let (rho_lo, rho_hi) = charge_density_range(species);
    let cfg = linear.with_tolerance(linear.tolerance.min(BOUNDS_TOLERANCE));
    let coupling = system.coupling();
    let rhs_with = |rho: f64| -> Vec<f64> {
        system.rhs().iter().zip(system.chi()).map(|(b, chi)| b + coupling * chi * rho).collect()
    };
    let (lower, _) = solve_spd(system.operator(), None, &rhs_with(rho_lo), None, &cfg)?;
    let gap_rhs: Vec<f64> = system.chi().iter().map(|chi| coupling * chi * (rho_hi - rho_lo)).collect();
    let (mut gap, _) = solve_spd(system.operator(), None, &gap_rhs, None, &cfg)?;
    let scale = max_norm(&gap).max(max_norm(&lower)).max(1.0);
    if let Some(q) = gap.iter().position(|&d| d < -1e-8 * scale) {
        return Err(Error::Internal(format!("bound ordering violated at grid index {q}: u+ - u- = {:.3e}", gap[q])));
    }
    gap.iter_mut().for_each(|d| *d = d.max(0.0));
    let upper: Vec<f64> = lower.iter().zip(&gap).map(|(l, d)| l + d).collect();
    let defect = |u: &[f64], rho: f64| -> Vec<f64> {
        let mut au = system.zeros();
        system.operator().apply(u, None, &mut au);
        au.iter().zip(rhs_with(rho)).map(|(a, r)| a - r).collect()
    };
    Ok(Bounds { upper_defect: defect(&upper, rho_hi), lower_defect: defect(&lower, rho_lo), upper, lower })
}

impl Bounds {
    /// Bounds given directly, with zero defect. Intended for tests and
    /// externally verified bounds.
    pub fn exact(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = lower.len();
        Self { upper, lower, upper_defect: vec![0.0; n], lower_defect: vec![0.0; n] }
    }

    /// Largest energy increase a truncation from `psi_bar` to `psi` can show
    /// because the bounds solve their linear systems only approximately:
    /// `Σ |defect_p| |ψ̄_p − ψ_p|` over clamped components.
    pub fn truncation_slack(&self, psi_bar: &[f64], psi: &[f64]) -> f64 {
        psi_bar
            .iter()
            .zip(psi)
            .enumerate()
            .filter(|(_, (b, p))| b != p)
            .map(|(q, (b, p))| {
                let defect = if b > p { self.upper_defect[q] } else { self.lower_defect[q] };
                defect.abs() * (b - p).abs()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub psi: Vec<f64>,
    pub clamped_upper: usize,
    pub clamped_lower: usize,
}

/// Componentwise clamp to `[u⁻, u⁺]`.
pub fn truncate(psi_bar: &[f64], bounds: &Bounds) -> Truncation {
    let mut clamped_upper = 0;
    let mut clamped_lower = 0;
    let psi = psi_bar
        .iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&p, (&lo, &hi))| {
            if p > hi {
                clamped_upper += 1;
                hi
            } else if p < lo {
                clamped_lower += 1;
                lo
            } else {
                p
            }
        })
        .collect();
    Truncation { psi, clamped_upper, clamped_lower }
}

/// Ion-free reaction potential `A ψ = b`, an initial guess that already
/// carries the dielectric response to the solute charges.
pub fn linear_initial_guess(system: &AssembledSystem, linear: &LinearSolveConfig) -> Result<Vec<f64>> {
    Ok(solve_spd(system.operator(), None, system.rhs(), None, linear)?.0)
}

/// `E(ψ) = ½ψᵀAψ − Σ_m ∫₀^{ψ_m} g − bᵀψ`.
pub fn discrete_energy(system: &AssembledSystem, closure: &dyn Closure, psi: &[f64]) -> Result<f64> {
    system.energy(closure, psi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Stop once `‖F‖∞ ≤ tol`.
    pub tol: f64,
    pub max_steps: usize,
    pub linear: LinearSolveConfig,
    /// Clamp iterates to the bounds (ignored when no bounds are passed).
    pub truncate: bool,
    /// Record `E(ψ̄) − E(ψ)` across each truncation.
    pub record_energy: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_steps: 50, linear: LinearSolveConfig::default(), truncate: true, record_energy: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    pub step: usize,
    /// `‖F‖∞` after the step (and truncation).
    pub residual_norm: f64,
    pub omega: f64,
    pub halvings: u32,
    pub clamped_upper: usize,
    pub clamped_lower: usize,
    pub linear_iterations: usize,
    /// `E(ψ̄) − E(ψ)` for the pre- and post-truncation iterates, when recorded.
    pub truncation_energy_drop: Option<f64>,
    /// [`Bounds::truncation_slack`] for the same truncation, when recorded.
    pub truncation_slack: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NewtonState {
    pub psi: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub steps: usize,
    pub last_omega: f64,
    pub halvings: u32,
    pub clamped_upper: usize,
    pub clamped_lower: usize,
    /// `‖F‖∞` at the initial guess and after every step.
    pub history: Vec<f64>,
    pub records: Vec<NewtonStep>,
}

/// Inner relative tolerance for a Newton step taken at residual `fnorm`.
pub fn inner_tolerance(tol: f64, fnorm: f64, configured: f64) -> f64 {
    configured.min(INNER_TOLERANCE_MAX).min(1e-2 * tol / fnorm).max(INNER_TOLERANCE_MIN)
}

/// Runs Newton's method from `psi0` until `‖F‖∞ ≤ config.tol`.
pub fn newton_solve(
    system: &AssembledSystem,
    closure: &dyn Closure,
    bounds: Option<&Bounds>,
    psi0: &[f64],
    config: &NewtonConfig,
) -> Result<NewtonState> {
    if !(config.tol > 0.0) {
        return Err(Error::invalid(format!("Newton tolerance must be positive, got {}", config.tol)));
    }
    let bounds = bounds.filter(|_| config.truncate);
    let (mut psi, clamped_upper, clamped_lower) = match bounds {
        Some(b) => {
            let t = truncate(psi0, b);
            (t.psi, t.clamped_upper, t.clamped_lower)
        }
        None => (psi0.to_vec(), 0, 0),
    };
    let (mut f, mut shift) = system.residual_and_shift(closure, &psi)?;
    let mut fnorm = max_norm(&f);
    let mut state = NewtonState {
        psi: Vec::new(),
        residual: Vec::new(),
        residual_norm: fnorm,
        steps: 0,
        last_omega: 1.0,
        halvings: 0,
        clamped_upper,
        clamped_lower,
        history: vec![fnorm],
        records: Vec::new(),
    };
    while fnorm > config.tol {
        if state.steps >= config.max_steps {
            return Err(Error::numerical(
                "newton",
                format!("no convergence in {} steps (|F|inf = {fnorm:.3e}, tol = {:.1e})", state.steps, config.tol),
            ));
        }
        let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let lin = config.linear.with_tolerance(inner_tolerance(config.tol, fnorm, config.linear.tolerance));
        let (delta, stats) = solve_spd(system.operator(), Some(&shift), &neg_f, None, &lin)?;

        let mut omega = 1.0;
        let mut halvings = 0;
        let (trial, trial_f) = loop {
            let trial: Vec<f64> = psi.iter().zip(&delta).map(|(p, d)| p + omega * d).collect();
            let tf = system.residual(closure, &trial)?;
            let tn = max_norm(&tf);
            if tn.is_finite() && tn <= fnorm {
                break (trial, tf);
            }
            omega *= 0.5;
            halvings += 1;
            if omega < MIN_STEP {
                return Err(Error::numerical(
                    "newton",
                    format!(
                        "backtracking stagnated at step {} (|F|inf = {fnorm:.3e}, trial {tn:.3e}, step below 2^-30)",
                        state.steps + 1
                    ),
                ));
            }
        };

        let mut record = NewtonStep {
            step: state.steps + 1,
            residual_norm: 0.0,
            omega,
            halvings,
            clamped_upper: 0,
            clamped_lower: 0,
            linear_iterations: stats.iterations,
            truncation_energy_drop: None,
            truncation_slack: None,
        };
        match bounds {
            Some(b) => {
                let t = truncate(&trial, b);
                record.clamped_upper = t.clamped_upper;
                record.clamped_lower = t.clamped_lower;
                if config.record_energy {
                    record.truncation_energy_drop = Some(system.energy_difference(closure, &trial, &t.psi)?);
                    record.truncation_slack = Some(b.truncation_slack(&trial, &t.psi));
                }
                psi = t.psi;
            }
            None => psi = trial,
        }
        if record.clamped_upper + record.clamped_lower > 0 {
            (f, shift) = system.residual_and_shift(closure, &psi)?;
        } else {
            f = trial_f;
            shift = system.residual_and_shift(closure, &psi)?.1;
        }
        fnorm = max_norm(&f);
        record.residual_norm = fnorm;
        state.steps += 1;
        state.last_omega = omega;
        state.halvings += halvings;
        state.clamped_upper += record.clamped_upper;
        state.clamped_lower += record.clamped_lower;
        state.history.push(fnorm);
        log::info!(
            "newton step {}: |F|inf = {:.3e}, omega = {}, halvings = {}, clamped upper = {}, clamped lower = {}, linear iterations = {}",
            record.step,
            fnorm,
            omega,
            halvings,
            record.clamped_upper,
            record.clamped_lower,
            record.linear_iterations
        );
        state.records.push(record);
    }
    state.psi = psi;
    state.residual = f;
    state.residual_norm = fnorm;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::{BulkState, ClassicalClosure, StericDirect, DEFAULT_GAMMA_TOL};
    use crate::dielectric::{sphere_union_levelset, DielectricModel, LevelSetField};
    use crate::mesh::{FieldUnit, UniformGrid3};
    use crate::solute::{debye_kappa, molar_to_number_density, psi_f_field, reaction_boundary_field, Atom, PhysicalConstants};
    use proptest::prelude::*;
    use stericpb_oracles as oracles;

    fn species() -> Vec<IonSpecies> {
        let c = molar_to_number_density(0.1);
        vec![IonSpecies::new(1, 2.76f64.powi(3), c).unwrap(), IonSpecies::new(-1, 3.62f64.powi(3), c).unwrap()]
    }

    fn steric() -> StericDirect {
        StericDirect::new(BulkState::new(species(), 2.75f64.powi(3)).unwrap(), DEFAULT_GAMMA_TOL).unwrap()
    }

    /// Sphere with zero reaction-potential boundary data: the far solvent
    /// sees the unscreened `ψ^f` and saturates.
    fn sphere_system(n: usize, charge: f64) -> AssembledSystem {
        let g = UniformGrid3::new(10.0, n).unwrap();
        let atoms = vec![Atom::new([0.0; 3], charge, 5.0).unwrap()];
        let d = DielectricModel::build(&sphere_union_levelset(&atoms, g), 1.0, 78.0, 1.5).unwrap();
        let consts = PhysicalConstants::default();
        let pf = psi_f_field(g, &atoms, &consts, 1.0);
        let zero = GridFunction::zeros(g, FieldUnit::Potential);
        AssembledSystem::new(&d, &pf, &zero, &consts, None).unwrap()
    }

    fn screened_sphere_system(n: usize, charge: f64) -> AssembledSystem {
        let g = UniformGrid3::new(10.0, n).unwrap();
        let atoms = vec![Atom::new([0.0; 3], charge, 5.0).unwrap()];
        let d = DielectricModel::build(&sphere_union_levelset(&atoms, g), 1.0, 78.0, 1.5).unwrap();
        let consts = PhysicalConstants::default();
        let pf = psi_f_field(g, &atoms, &consts, 1.0);
        let kappa = debye_kappa(&consts, 78.0, &species());
        let bnd = reaction_boundary_field(g, &atoms, &consts, 1.0, 78.0, kappa);
        AssembledSystem::new(&d, &pf, &bnd, &consts, None).unwrap()
    }

    #[test]
    fn truncation_examples() {
        let b = Bounds::exact(vec![-1.0, -2.0, 0.0], vec![1.0, 2.0, 0.5]);
        let inside = truncate(&[0.5, -1.0, 0.25], &b);
        assert_eq!(inside.psi, vec![0.5, -1.0, 0.25]);
        assert_eq!((inside.clamped_upper, inside.clamped_lower), (0, 0));
        let above: Vec<f64> = b.upper.iter().map(|u| u + 1.0).collect();
        let t = truncate(&above, &b);
        assert_eq!(t.psi, b.upper);
        assert_eq!(t.clamped_upper, 3);
    }

    proptest! {
        #[test]
        fn truncation_never_increases_componentwise_error(
            bar in -50.0f64..50.0, lo in -20.0f64..0.0, width in 0.0f64..30.0, frac in 0.0f64..=1.0,
        ) {
            let hi = lo + width;
            let star = lo + frac * width;
            let b = Bounds::exact(vec![lo], vec![hi]);
            let t = truncate(&[bar], &b);
            prop_assert!((t.psi[0] - star).abs() <= (bar - star).abs());
        }
    }

    #[test]
    fn bounds_are_constant_boundary_value_without_ions() {
        let g = UniformGrid3::new(5.0, 9).unwrap();
        let ls = LevelSetField(GridFunction::from_fn(g, FieldUnit::Length, |_| -100.0));
        let d = DielectricModel::build(&ls, 2.0, 78.0, 1.5).unwrap();
        let consts = PhysicalConstants::default();
        let pf = psi_f_field(g, &[], &consts, 2.0);
        let bnd = GridFunction::from_fn(g, FieldUnit::Potential, |_| 1.25);
        let sys = AssembledSystem::new(&d, &pf, &bnd, &consts, None).unwrap();
        let b = compute_bounds(&sys, &species(), &LinearSolveConfig::default()).unwrap();
        let up = b.upper_field(&sys);
        let lo = b.lower_field(&sys);
        for (u, l) in up.values().iter().zip(lo.values()) {
            assert!((u - 1.25).abs() < 1e-9 && (l - 1.25).abs() < 1e-9);
        }
    }

    #[test]
    fn charge_range_includes_zero() {
        let one = vec![IonSpecies::new(2, 10.0, 1e-4).unwrap()];
        assert_eq!(charge_density_range(&one), (0.0, 0.2));
        let (lo, hi) = charge_density_range(&species());
        assert!((hi - 1.0 / 2.76f64.powi(3)).abs() < 1e-15 && (lo + 1.0 / 3.62f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn linear_problem_converges_in_one_step() {
        let g = UniformGrid3::new(10.0, 9).unwrap();
        let atoms = vec![Atom::new([0.0; 3], -5.0, 5.0).unwrap()];
        let consts = PhysicalConstants::default();
        let mut d = DielectricModel::build(&sphere_union_levelset(&atoms, g), 1.0, 78.0, 1.5).unwrap();
        d.chi = GridFunction::zeros(g, FieldUnit::Unitless);
        let pf = psi_f_field(g, &atoms, &consts, 1.0);
        let sys = AssembledSystem::new(&d, &pf, &GridFunction::zeros(g, FieldUnit::Potential), &consts, None).unwrap();
        let st = newton_solve(&sys, &steric(), None, &sys.zeros(), &NewtonConfig::default()).unwrap();
        assert_eq!(st.steps, 1);
        assert_eq!(st.last_omega, 1.0);
    }

    #[test]
    fn single_unknown_matches_scalar_root() {
        let g = UniformGrid3::new(2.0, 1).unwrap();
        let atoms = vec![Atom::new([0.4, -0.3, 0.2], 1.0, 0.5).unwrap()];
        let consts = PhysicalConstants::default();
        let ls = LevelSetField(GridFunction::from_fn(g, FieldUnit::Length, |x| {
            if x == [0.0; 3] { 0.3 } else { 5.0 }
        }));
        let d = DielectricModel::build(&ls, 1.0, 78.0, 1.0).unwrap();
        let pf = psi_f_field(g, &atoms, &consts, 1.0);
        let bnd = GridFunction::from_fn(g, FieldUnit::Potential, |_| 0.7);
        let sys = AssembledSystem::new(&d, &pf, &bnd, &consts, None).unwrap();
        let cl = steric();
        let bounds = compute_bounds(&sys, cl.species(), &LinearSolveConfig::default()).unwrap();
        let cfg = NewtonConfig { tol: 1e-9, ..Default::default() };
        let st = newton_solve(&sys, &cl, Some(&bounds), &sys.zeros(), &cfg).unwrap();
        let q = g.grid_index(1, 1, 1);
        let a = sys.operator().diagonal()[q];
        let (b, chi, base, coupling) = (sys.rhs()[q], sys.chi()[q], sys.psi_f()[q], sys.coupling());
        let f = |x: f64| a * x - coupling * chi * cl.charge(base + x).unwrap().0 - b;
        let root = oracles::scalar_newton_reference(f, -1e3, 1e3).scalar();
        assert!((st.psi[q] - root).abs() <= 1e-10 * root.abs().max(1.0), "{} vs {root}", st.psi[q]);
    }

    #[test]
    fn steric_sphere_converges_within_bounds_and_energy_drops() {
        let sys = sphere_system(19, -5.0);
        let cl = steric();
        let bounds = compute_bounds(&sys, cl.species(), &LinearSolveConfig::default()).unwrap();
        assert!(bounds.lower.iter().zip(&bounds.upper).all(|(l, u)| l <= u));
        let cfg = NewtonConfig { record_energy: true, ..Default::default() };
        let st = newton_solve(&sys, &cl, Some(&bounds), &sys.zeros(), &cfg).unwrap();
        assert!(st.residual_norm <= 1e-6);
        assert!(bounds.contains(&st.psi));
        for r in &st.records {
            assert!(r.truncation_energy_drop.unwrap() >= -r.truncation_slack.unwrap(), "{r:?}");
        }
        let start: Vec<f64> = bounds.upper.clone();
        let other = newton_solve(&sys, &cl, Some(&bounds), &start, &cfg).unwrap();
        let diff = st.psi.iter().zip(&other.psi).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let scale = max_norm(&st.psi);
        assert!(diff <= 1e-6 * scale.max(1.0), "{diff}");
    }

    #[test]
    fn screened_steric_sphere_converges_quadratically() {
        let sys = screened_sphere_system(19, -5.0);
        let cl = steric();
        let bounds = compute_bounds(&sys, cl.species(), &LinearSolveConfig::default()).unwrap();
        let cfg = NewtonConfig { record_energy: true, ..Default::default() };
        let st = newton_solve(&sys, &cl, Some(&bounds), &sys.zeros(), &cfg).unwrap();
        assert!(st.steps <= 10, "{:?}", st.history);
        assert!(bounds.contains(&st.psi));
        for r in &st.records {
            assert!(r.truncation_energy_drop.unwrap() >= -r.truncation_slack.unwrap(), "{r:?}");
        }
        let tail = &st.records[st.records.len() - 2..];
        assert!(tail.iter().all(|r| r.omega == 1.0));
    }

    #[test]
    fn classical_mode_runs_without_bounds() {
        let sys = screened_sphere_system(15, -1.0);
        let cl = ClassicalClosure::new(species()).unwrap();
        let cfg = NewtonConfig { truncate: false, ..Default::default() };
        let guess = linear_initial_guess(&sys, &cfg.linear).unwrap();
        let st = newton_solve(&sys, &cl, None, &guess, &cfg).unwrap();
        assert!(st.residual_norm <= 1e-6);
        assert_eq!(st.clamped_lower + st.clamped_upper, 0);
    }

    #[test]
    fn step_budget_error() {
        let sys = sphere_system(9, -5.0);
        let cfg = NewtonConfig { max_steps: 1, tol: 1e-12, ..Default::default() };
        let err = newton_solve(&sys, &steric(), None, &sys.zeros(), &cfg).unwrap_err();
        assert!(err.to_string().contains("no convergence"), "{err}");
    }

    #[test]
    fn inner_tolerance_schedule() {
        assert_eq!(inner_tolerance(1e-6, 1.0, 1e-10), 1e-10);
        assert_eq!(inner_tolerance(1e-6, 1e6, 1e-10), 1e-14);
        assert!((inner_tolerance(1e-6, 1e3, 1e-10) - 1e-11).abs() < 1e-25);
    }
}
