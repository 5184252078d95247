use stericpb::config::{Mode, RunConfig};
use stericpb::pipeline::{count_outside, info, run_bounds, run_mms, run_solve, run_table_dump};
use stericpb::Error;

const SMALL: &str = r#"
[grid]
half_width = 8.0
spacing = 0.5

[geometry]
kind = "sphere"
radius = 4.0
charge = -3.0

[solver]
tol = 1e-10
"#;

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text, None).unwrap()
}

#[test]
fn table_and_direct_closure_agree() {
    let with_table = cfg(SMALL);
    let mut direct = with_table.clone();
    direct.table.enabled = false;
    let a = run_solve(&with_table).unwrap();
    let b = run_solve(&direct).unwrap();
    let diff = a.psi_r.values().iter().zip(b.psi_r.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff <= 1e-8, "{diff:e}");
    assert_eq!(count_outside(a.bounds.as_ref().unwrap(), &a.state.psi), 0);
    assert!(a.report.residual_norm <= 1e-10);
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let c = cfg(SMALL);
    let a = run_solve(&c).unwrap();
    let b = run_solve(&c).unwrap();
    assert_eq!(a.report.reaction_field_energy.to_bits(), b.report.reaction_field_energy.to_bits());
    assert_eq!(a.state.psi, b.state.psi);
}

#[test]
fn bounds_collapse_without_solvent_or_charge() {
    // The ball covers the whole box, so χ ≡ 0, and the boundary data vanish.
    let text = SMALL.replace("radius = 4.0", "radius = 40.0").replace("charge = -3.0", "charge = 0.0");
    let s = run_bounds(&cfg(&text)).unwrap();
    for v in [s.lower_min, s.lower_max, s.upper_min, s.upper_max] {
        assert!(v.abs() < 1e-12, "{s:?}");
    }
    assert!(s.potential_range.is_none());
}

#[test]
fn bounds_bracket_the_solution_range() {
    let c = cfg(SMALL);
    let s = run_bounds(&c).unwrap();
    let out = run_solve(&c).unwrap();
    let grid = *out.problem.grid();
    let (lo, hi) = (0..grid.interior_count())
        .map(|m| out.state.psi[grid.interior_to_grid(m)])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    assert!(s.lower_min <= lo + 1e-9 && hi <= s.upper_max + 1e-9);
    assert!(s.lower_min < s.upper_max);
}

#[test]
fn mms_shares_one_table_and_reports_orders() {
    let c = cfg(&SMALL.replace("tol = 1e-10", "tol = 1e-8"));
    let out = run_mms(&c, Some(&[1.0, 0.5])).unwrap();
    assert_eq!(out.levels.len(), 2);
    assert!(out.orders[0].is_none());
    assert!(out.levels[1].relative_error < out.levels[0].relative_error);
    assert!(out.orders[1].unwrap() > 1.0);
    assert!(out.levels.iter().all(|l| l.outside_bounds == 0));
    assert_eq!(out.render().lines().count(), 3);
}

#[test]
fn classical_mode_has_no_bounds_and_no_table() {
    let mut c = cfg(SMALL);
    c.mode = Mode::Classical;
    // Boltzmann factors near e^700 at the surface: Newton walks down the
    // exponential about one unit of potential per step.
    c.solver.max_steps = 400;
    let out = run_solve(&c).unwrap();
    assert!(out.bounds.is_none());
    assert_eq!(out.report.mode, "classical");
    assert!(matches!(run_bounds(&c), Err(Error::Unsupported(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_table_dump(&c, &dir.path().join("t")), Err(Error::Unsupported(_))));
}

#[test]
fn table_dump_round_trips() {
    let c = cfg(SMALL);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.txt");
    let table = run_table_dump(&c, &path).unwrap();
    let loaded = stericpb::closure::StericTable::load(&path, &c.bulk().unwrap()).unwrap();
    assert_eq!(loaded.nodes().len(), table.nodes().len());
    assert!(info(&c).unwrap().contains("bulk solvent fraction"));
}
