//! End-to-end runs: geometry, dielectric, closure table, bounds, Newton, report.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::assembly::{mms_source, AssembledSystem, SphereGeometry};
use crate::closure::{ClassicalClosure, Closure, StericDirect, StericTable, DEFAULT_GAMMA_TOL};
use crate::config::{GeometrySection, InitialGuess, Mode, RunConfig};
use crate::dielectric::{load_levelset, sphere_union_levelset, DielectricModel, LevelSetField};
use crate::error::{Error, Result};
use crate::mesh::{FieldUnit, GridFunction, UniformGrid3};
use crate::newton::{compute_bounds, linear_initial_guess, newton_solve, Bounds, NewtonConfig, NewtonState};
use crate::postproc::{
    concentration_fields, iso_band_csv, iso_band_samples, line_profile_csv, masked_maxima, reaction_field_energy,
    surface_mask, surface_stats, write_text, SolveReport,
};
use crate::solute::{debye_kappa, psi_f_field, read_pqr_file, reaction_boundary_field, Atom, PhysicalConstants};
use crate::vtk;

/// Geometry and discretisation of one run on one grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub constants: PhysicalConstants,
    pub atoms: Vec<Atom>,
    pub levelset: LevelSetField,
    pub dielectric: DielectricModel,
    pub psi_f: GridFunction,
    pub system: AssembledSystem,
    /// Exact reaction potential of a manufactured-solution run.
    pub exact: Option<GridFunction>,
}

impl Problem {
    pub fn grid(&self) -> &UniformGrid3 {
        self.system.grid()
    }
}

fn sphere_of(config: &RunConfig) -> Option<SphereGeometry> {
    match config.geometry {
        GeometrySection::Sphere { radius, charge } => Some(SphereGeometry { radius, charge }),
        GeometrySection::Molecule { .. } => None,
    }
}

fn load_geometry(config: &RunConfig, grid: UniformGrid3) -> Result<(Vec<Atom>, LevelSetField)> {
    match &config.geometry {
        GeometrySection::Sphere { radius, charge } => {
            let atoms = vec![Atom::new([0.0; 3], *charge, *radius)?];
            let ls = sphere_union_levelset(&atoms, grid);
            Ok((atoms, ls))
        }
        GeometrySection::Molecule { pqr, levelset } => {
            let atoms = read_pqr_file(pqr)?.atoms;
            let ls = match levelset {
                Some(p) => load_levelset(p, grid)?,
                None => sphere_union_levelset(&atoms, grid),
            };
            Ok((atoms, ls))
        }
    }
}

/// Closure used to build the manufactured source: always evaluated directly.
fn exact_closure(config: &RunConfig) -> Result<Box<dyn Closure>> {
    Ok(match config.mode {
        Mode::Steric => Box::new(StericDirect::new(config.bulk()?, DEFAULT_GAMMA_TOL)?),
        Mode::Classical => Box::new(ClassicalClosure::new(config.species.clone())?),
    })
}

/// Builds the discrete problem on `grid`. With `mms` the boundary data and
/// source come from the manufactured solution; otherwise the boundary is the
/// screened Coulomb potential of the solute.
pub fn build_problem(config: &RunConfig, grid: UniformGrid3, mms: bool) -> Result<Problem> {
    let constants = config.constants();
    let p = &config.physics;
    let (atoms, levelset) = load_geometry(config, grid)?;
    let dielectric = DielectricModel::build(&levelset, p.eps_m, p.eps_w, p.tau)?;
    let psi_f = psi_f_field(grid, &atoms, &constants, p.eps_m);
    let (system, exact) = if mms {
        let sphere = sphere_of(config)
            .ok_or_else(|| Error::Unsupported("the manufactured solution needs the sphere geometry".into()))?;
        let closure = exact_closure(config)?;
        let problem = mms_source(&dielectric, &sphere, &constants, closure.as_ref())?;
        let sys = AssembledSystem::new(&dielectric, &psi_f, &problem.exact, &constants, Some(&problem.source))?;
        (sys, Some(problem.exact))
    } else {
        let kappa = debye_kappa(&constants, p.eps_w, &config.species);
        let boundary = reaction_boundary_field(grid, &atoms, &constants, p.eps_m, p.eps_w, kappa);
        (AssembledSystem::new(&dielectric, &psi_f, &boundary, &constants, None)?, None)
    };
    Ok(Problem { constants, atoms, levelset, dielectric, psi_f, system, exact })
}

/// Range of the total potential `ψ^f + u∓` over solvent points (`χ > 0`).
pub fn potential_range(system: &AssembledSystem, bounds: &Bounds) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (q, &chi) in system.chi().iter().enumerate() {
        if chi > 0.0 {
            lo = lo.min(system.psi_f()[q] + bounds.lower[q]);
            hi = hi.max(system.psi_f()[q] + bounds.upper[q]);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Table interval: the configured override, or the bound range padded on both sides.
fn table_interval(config: &RunConfig, range: Option<(f64, f64)>) -> (f64, f64) {
    if let Some([lo, hi]) = config.table.range {
        return (lo, hi);
    }
    let pad = config.table.padding.max(1e-3);
    let (lo, hi) = range.unwrap_or((0.0, 0.0));
    (lo - pad, hi + pad)
}

/// Builds the steric table on the configured or derived interval.
pub fn build_table(config: &RunConfig, range: Option<(f64, f64)>) -> Result<StericTable> {
    let (lo, hi) = table_interval(config, range);
    let t0 = Instant::now();
    let table = match config.table.nodes {
        Some(n) => StericTable::build(config.bulk()?, lo, hi, n, DEFAULT_GAMMA_TOL)?,
        None => StericTable::build_with_spacing(config.bulk()?, lo, hi, config.table.spacing, DEFAULT_GAMMA_TOL)?,
    };
    log::info!(
        "table: [{lo:.3}, {hi:.3}] with {} nodes (spacing {:.4}) in {:.2?}",
        table.nodes().len(),
        table.spacing(),
        t0.elapsed()
    );
    Ok(table)
}

fn newton_config(config: &RunConfig) -> NewtonConfig {
    NewtonConfig {
        tol: config.solver.tol,
        max_steps: config.solver.max_steps,
        linear: config.solver.linear,
        truncate: config.mode == Mode::Steric,
        record_energy: config.solver.record_energy,
    }
}

fn initial_guess(config: &RunConfig, system: &AssembledSystem) -> Result<Vec<f64>> {
    match config.initial_guess() {
        InitialGuess::Zero => Ok(system.zeros()),
        InitialGuess::Linear => linear_initial_guess(system, &config.solver.linear),
    }
}

/// Bounds (steric mode only) and the closure the Newton solve uses.
/// `shared_table` is used as is when given.
fn prepare_closure(
    config: &RunConfig,
    system: &AssembledSystem,
    shared_table: Option<&StericTable>,
) -> Result<(Option<Bounds>, Option<Box<dyn Closure>>)> {
    match config.mode {
        Mode::Classical => Ok((None, Some(Box::new(ClassicalClosure::new(config.species.clone())?)))),
        Mode::Steric => {
            let bounds = compute_bounds(system, &config.species, &config.solver.linear)?;
            let closure: Option<Box<dyn Closure>> = match (shared_table, config.table.enabled) {
                (Some(_), _) => None,
                (None, true) => Some(Box::new(build_table(config, potential_range(system, &bounds))?)),
                (None, false) => Some(Box::new(StericDirect::new(config.bulk()?, DEFAULT_GAMMA_TOL)?)),
            };
            Ok((Some(bounds), closure))
        }
    }
}

/// Result of [`run_solve`], with every field kept for inspection.
#[derive(Debug)]
pub struct SolveOutcome {
    pub problem: Problem,
    pub bounds: Option<Bounds>,
    pub state: NewtonState,
    /// Reaction potential including its boundary values.
    pub psi_r: GridFunction,
    /// `ψ^f + ψ^r`.
    pub psi_total: GridFunction,
    /// Molar concentration per species.
    pub concentrations: Vec<GridFunction>,
    pub surface_mask: Vec<bool>,
    pub report: SolveReport,
}

/// Full pipeline on the configured grid. Artifacts are written when
/// `output.directory` is set.
pub fn run_solve(config: &RunConfig) -> Result<SolveOutcome> {
    let t0 = Instant::now();
    let grid = config.grid.build()?;
    let problem = build_problem(config, grid, false)?;
    let system = &problem.system;
    let (bounds, closure) = prepare_closure(config, system, None)?;
    let closure = closure.expect("built when no table is shared");
    let psi0 = initial_guess(config, system)?;
    let state = newton_solve(system, closure.as_ref(), bounds.as_ref(), &psi0, &newton_config(config))?;

    let psi_r = system.to_field(&state.psi);
    let total: Vec<f64> = psi_r.values().iter().zip(problem.psi_f.values()).map(|(a, b)| a + b).collect();
    let psi_total = GridFunction::from_values(grid, total, FieldUnit::Potential)?;
    let concentrations = concentration_fields(&psi_total, &problem.dielectric.chi, closure.as_ref())?;
    let mask = surface_mask(&problem.levelset, &problem.dielectric.chi, config.physics.tau);
    let solvent: Vec<bool> = problem.dielectric.chi.values().iter().map(|&x| x > 0.0).collect();
    let report = SolveReport {
        mode: match config.mode {
            Mode::Steric => "steric".into(),
            Mode::Classical => "classical".into(),
        },
        grid_points: grid.points_per_axis(),
        spacing: grid.spacing(),
        reaction_field_energy: reaction_field_energy(&problem.atoms, &psi_r)?,
        surface: surface_stats(&psi_total, &mask),
        surface_max_concentration: masked_maxima(&concentrations, &mask),
        max_concentration: masked_maxima(&concentrations, &solvent),
        newton_steps: state.steps,
        residual_norm: state.residual_norm,
        halvings: state.halvings,
        clamped_upper: state.clamped_upper,
        clamped_lower: state.clamped_lower,
        linear_iterations: state.records.iter().map(|r| r.linear_iterations).sum(),
        saturation_count: closure.saturation_count(),
        seconds: t0.elapsed().as_secs_f64(),
    };
    let outcome = SolveOutcome {
        problem,
        bounds,
        state,
        psi_r,
        psi_total,
        concentrations,
        surface_mask: mask,
        report,
    };
    write_solve_outputs(config, &outcome)?;
    Ok(outcome)
}

fn write_solve_outputs(config: &RunConfig, out: &SolveOutcome) -> Result<()> {
    let Some(dir) = &config.output.directory else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("report.txt"), &out.report.render())?;
    let names: Vec<String> = (0..out.concentrations.len()).map(|l| format!("concentration_{l}")).collect();
    let mut fields: Vec<(&str, &GridFunction)> = vec![("potential", &out.psi_total), ("reaction_potential", &out.psi_r)];
    fields.extend(names.iter().map(String::as_str).zip(&out.concentrations));
    if config.output.vtk {
        let mut all = fields.clone();
        all.push(("levelset", out.problem.levelset.field()));
        all.push(("solvent_indicator", &out.problem.dielectric.chi));
        vtk::write_structured_points(&dir.join("fields.vtk"), "stericpb solution", &all)?;
    }
    if let Some(p) = &config.output.profile {
        write_text(&dir.join("profile.csv"), &line_profile_csv(&fields, p.start, p.end, p.samples)?)?;
    }
    if let Some(b) = &config.output.iso_band {
        let half = b.half_width.unwrap_or(0.5 * out.problem.grid().spacing());
        let values: Vec<&GridFunction> = fields.iter().map(|(_, f)| *f).collect();
        let samples = iso_band_samples(&out.problem.levelset, b.level, half, &values);
        let labels: Vec<&str> = fields.iter().map(|(n, _)| *n).collect();
        write_text(&dir.join("iso_band.csv"), &iso_band_csv(&labels, &samples))?;
    }
    Ok(())
}

/// One grid level of a manufactured-solution study.
#[derive(Debug, Clone)]
pub struct MmsLevel {
    pub spacing: f64,
    pub points_per_axis: usize,
    /// `‖ψ − ψ_ex‖∞ / ‖ψ_ex‖∞` over interior points.
    pub relative_error: f64,
    pub state: NewtonState,
    /// Bounds violated by the converged solution (should be 0).
    pub outside_bounds: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MmsOutcome {
    pub levels: Vec<MmsLevel>,
    /// Observed order between each level and the previous one (`None` for the first).
    pub orders: Vec<Option<f64>>,
}

impl MmsOutcome {
    pub fn render(&self) -> String {
        let mut out = String::from("h,points,relative_error,order,newton_steps,final_residual,seconds\n");
        for (lvl, ord) in self.levels.iter().zip(&self.orders) {
            let ord = ord.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{},{},{:.4e},{},{},{:.3e},{:.2}",
                lvl.spacing,
                lvl.points_per_axis,
                lvl.relative_error,
                ord,
                lvl.state.steps,
                lvl.state.residual_norm,
                lvl.seconds
            );
        }
        out
    }
}

/// Manufactured-solution study over `spacings` (default: `mms.spacings`).
/// In steric mode with the table enabled, one table covering every level is
/// built up front and shared.
pub fn run_mms(config: &RunConfig, spacings: Option<&[f64]>) -> Result<MmsOutcome> {
    let default = config.mms.clone().unwrap_or_default().spacings;
    let spacings = spacings.unwrap_or(&default);
    if spacings.is_empty() {
        return Err(Error::Config("no grid spacings for the manufactured-solution study".into()));
    }
    let grids = spacings
        .iter()
        .map(|&h| config.with_spacing(h).grid.build())
        .collect::<Result<Vec<_>>>()?;

    let shared = if config.mode == Mode::Steric && config.table.enabled {
        let mut range: Option<(f64, f64)> = None;
        if config.table.range.is_none() {
            for &g in &grids {
                let p = build_problem(config, g, true)?;
                let b = compute_bounds(&p.system, &config.species, &config.solver.linear)?;
                if let Some((lo, hi)) = potential_range(&p.system, &b) {
                    range = Some(range.map_or((lo, hi), |(a, c)| (a.min(lo), c.max(hi))));
                }
            }
        }
        Some(build_table(config, range)?)
    } else {
        None
    };

    let mut levels = Vec::with_capacity(grids.len());
    for (&h, &grid) in spacings.iter().zip(&grids) {
        let t0 = Instant::now();
        let problem = build_problem(config, grid, true)?;
        let system = &problem.system;
        let (bounds, own) = prepare_closure(config, system, shared.as_ref())?;
        let closure: &dyn Closure = match (&own, &shared) {
            (Some(c), _) => c.as_ref(),
            (None, Some(t)) => t,
            (None, None) => unreachable!("a closure is always available"),
        };
        let psi0 = initial_guess(config, system)?;
        let state = newton_solve(system, closure, bounds.as_ref(), &psi0, &newton_config(config))?;
        let exact = system.from_field(problem.exact.as_ref().expect("manufactured problem"));
        let (num, den) = state
            .psi
            .iter()
            .zip(&exact)
            .fold((0.0f64, 0.0f64), |(n, d), (p, e)| (n.max((p - e).abs()), d.max(e.abs())));
        let outside_bounds = bounds.as_ref().map_or(0, |b| count_outside(b, &state.psi));
        log::info!("mms: h = {h}, relative error {:.4e}, {} Newton steps", num / den, state.steps);
        levels.push(MmsLevel {
            spacing: h,
            points_per_axis: grid.points_per_axis(),
            relative_error: num / den,
            state,
            outside_bounds,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let pairs: Vec<(f64, f64)> = levels.iter().map(|l| (l.spacing, l.relative_error)).collect();
    let mut orders = vec![None];
    if pairs.len() >= 2 {
        orders.extend(crate::postproc::convergence_report(&pairs)?);
    }
    Ok(MmsOutcome { levels, orders })
}

/// Points where `ψ` leaves `[u−, u+]` by more than the bound solve's accuracy.
pub fn count_outside(bounds: &Bounds, psi: &[f64]) -> usize {
    let scale = bounds.upper.iter().chain(&bounds.lower).fold(1.0f64, |a, v| a.max(v.abs()));
    let slack = 1e-9 * scale;
    psi.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .filter(|(p, (lo, hi))| **p < **lo - slack || **p > **hi + slack)
        .count()
}

/// Extremes of the truncation bounds on the configured grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsSummary {
    pub lower_min: f64,
    pub lower_max: f64,
    pub upper_min: f64,
    pub upper_max: f64,
    /// `ψ^f + u∓` over solvent points, before padding.
    pub potential_range: Option<(f64, f64)>,
}

impl BoundsSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "lower_min: {:.6e}\nlower_max: {:.6e}\nupper_min: {:.6e}\nupper_max: {:.6e}\n",
            self.lower_min, self.lower_max, self.upper_min, self.upper_max
        );
        if let Some((lo, hi)) = self.potential_range {
            let _ = writeln!(out, "solvent_potential_range: [{lo:.6e}, {hi:.6e}]");
        }
        out
    }
}

/// Interior extremes of `u∓`. The bounds exist only for the steric closure.
pub fn run_bounds(config: &RunConfig) -> Result<BoundsSummary> {
    if config.mode != Mode::Steric {
        return Err(Error::Unsupported("truncation bounds exist only for the steric closure".into()));
    }
    let problem = build_problem(config, config.grid.build()?, config.mms.is_some())?;
    let b = compute_bounds(&problem.system, &config.species, &config.solver.linear)?;
    let grid = problem.grid();
    let mut ext = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for m in 0..grid.interior_count() {
        let q = grid.interior_to_grid(m);
        ext[0] = ext[0].min(b.lower[q]);
        ext[1] = ext[1].max(b.lower[q]);
        ext[2] = ext[2].min(b.upper[q]);
        ext[3] = ext[3].max(b.upper[q]);
    }
    Ok(BoundsSummary {
        lower_min: ext[0],
        lower_max: ext[1],
        upper_min: ext[2],
        upper_max: ext[3],
        potential_range: potential_range(&problem.system, &b),
    })
}

/// Builds the table a solve on the configured grid would use and writes it to `path`.
pub fn run_table_dump(config: &RunConfig, path: &Path) -> Result<StericTable> {
    if config.mode != Mode::Steric {
        return Err(Error::Unsupported("the closure table exists only for the steric closure".into()));
    }
    let range = if config.table.range.is_some() {
        None
    } else {
        run_bounds(config)?.potential_range
    };
    let table = build_table(config, range)?;
    table.dump(path)?;
    Ok(table)
}

/// Human-readable summary of a validated configuration.
pub fn info(config: &RunConfig) -> Result<String> {
    let grid = config.grid.build()?;
    let constants = config.constants();
    let p = &config.physics;
    let mut out = String::new();
    let _ = writeln!(out, "mode: {:?}", config.mode);
    let _ = writeln!(
        out,
        "grid: half_width {} A, {} interior points per axis, spacing {} A",
        grid.half_width(),
        grid.n_interior(),
        grid.spacing()
    );
    let _ = writeln!(out, "temperature: {} K (coupling length {:.4} A)", p.temperature, constants.coupling_length());
    let _ = writeln!(out, "eps_m: {}, eps_w: {}, tau: {} A", p.eps_m, p.eps_w, p.tau);
    let _ = writeln!(out, "solvent_volume: {:.4} A^3", config.solvent_volume);
    for (l, s) in config.species.iter().enumerate() {
        let _ = writeln!(
            out,
            "species {l}: z = {:+}, v = {:.4} A^3, c = {:.4} M",
            s.valence,
            s.volume,
            crate::solute::number_density_to_molar(s.bulk)
        );
    }
    if config.mode == Mode::Steric {
        let _ = writeln!(out, "bulk solvent fraction: {:.10}", config.bulk()?.gamma_inf());
    }
    let kappa = debye_kappa(&constants, p.eps_w, &config.species);
    if kappa > 0.0 {
        let _ = writeln!(out, "debye_length: {:.4} A", 1.0 / kappa);
    }
    let geometry = match &config.geometry {
        GeometrySection::Sphere { radius, charge } => format!("sphere, radius {radius} A, charge {charge} e"),
        GeometrySection::Molecule { pqr, levelset } => match levelset {
            Some(l) => format!("molecule {}, level set {}", pqr.display(), l.display()),
            None => format!("molecule {}, union of atomic balls", pqr.display()),
        },
    };
    let _ = writeln!(out, "geometry: {geometry}");
    let _ = writeln!(out, "newton: tol {:.1e}, at most {} steps", config.solver.tol, config.solver.max_steps);
    Ok(out)
}
