//! Run configuration read from TOML.
//!
//! Units: lengths in Å, volumes in Å³ (a number, or `"a^3"` for a cube of
//! side `a`), concentrations in mol/L, temperature in K. Unknown keys are
//! rejected. Defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `physics.temperature` | 298.15 |
//! | `physics.eps_m`, `physics.eps_w` | 1, 78 |
//! | `physics.tau` | 1.5 |
//! | `solvent_volume` | `"2.75^3"` |
//! | `species` | `+1` with `"2.76^3"` and `-1` with `"3.62^3"`, both 0.1 M |
//! | `mode` | `"steric"` |
//! | `table.enabled`, `table.spacing`, `table.padding` | true, 0.005, 2 |
//! | `solver.tol`, `solver.max_steps` | 1e-6, 50 |
//! | `solver.initial_guess` | `"zero"` (steric), `"linear"` (classical) |
//! | `solver.linear` | multigrid-preconditioned CG, 1e-10, 2000 iterations, 2 sweeps |
//! | `solver.record_energy` | false |
//! | `mms.spacings` | `[0.4, 0.2]` |

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::closure::{BulkState, IonSpecies};
use crate::error::{Error, Result};
use crate::linsolve::LinearSolveConfig;
use crate::mesh::UniformGrid3;
use crate::solute::{molar_to_number_density, PhysicalConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Steric,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    /// Zero reaction potential, truncated into the bounds.
    Zero,
    /// Ion-free solution `A ψ = b`.
    Linear,
}

/// Volume given as Å³ or as `"a^3"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Volume {
    Cubic(f64),
    Text(String),
}

impl Volume {
    pub fn cubic_angstrom(&self) -> Result<f64> {
        let v = match self {
            Volume::Cubic(v) => *v,
            Volume::Text(s) => parse_volume(s)?,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("volume must be positive, got {v}")));
        }
        Ok(v)
    }
}

/// Parses `"2.75^3"` (side cubed) or a plain number.
pub fn parse_volume(text: &str) -> Result<f64> {
    let t = text.trim();
    let bad = || Error::Config(format!("cannot read volume {text:?}; expected a number or \"a^3\""));
    match t.split_once('^') {
        Some((side, exp)) => {
            if exp.trim() != "3" {
                return Err(bad());
            }
            let a: f64 = side.trim().parse().map_err(|_| bad())?;
            Ok(a * a * a)
        }
        None => t.parse().map_err(|_| bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub half_width: f64,
    pub interior_points: Option<usize>,
    pub spacing: Option<f64>,
}

impl GridSection {
    pub fn build(&self) -> Result<UniformGrid3> {
        match (self.interior_points, self.spacing) {
            (Some(n), None) => UniformGrid3::new(self.half_width, n).map_err(config_err),
            (None, Some(h)) => UniformGrid3::with_spacing(self.half_width, h).map_err(config_err),
            _ => Err(Error::Config("grid needs exactly one of interior_points or spacing".into())),
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub temperature: f64,
    pub eps_m: f64,
    pub eps_w: f64,
    pub tau: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self { temperature: 298.15, eps_m: 1.0, eps_w: 78.0, tau: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesEntry {
    pub valence: i32,
    pub volume: Volume,
    /// Bulk concentration in mol/L.
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometrySection {
    /// Charge `charge` (e) at the origin inside a ball of radius `radius` (Å).
    Sphere { radius: f64, charge: f64 },
    /// Atoms from a PQR file; the surface is the union of atomic balls unless
    /// a level-set file is given.
    Molecule { pqr: PathBuf, levelset: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub enabled: bool,
    pub spacing: f64,
    /// Node count override; the spacing is then derived from the range.
    pub nodes: Option<usize>,
    /// Explicit `[ψ_L, ψ_R]`; otherwise taken from the bounds.
    pub range: Option<[f64; 2]>,
    /// Added on both sides of the range derived from the bounds.
    pub padding: f64,
}

impl Default for TableSection {
    fn default() -> Self {
        Self { enabled: true, spacing: crate::closure::DEFAULT_TABLE_SPACING, nodes: None, range: None, padding: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_steps: usize,
    pub initial_guess: Option<InitialGuess>,
    pub linear: LinearSolveConfig,
    /// Record the energy change across every truncation.
    pub record_energy: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { tol: 1e-6, max_steps: 50, initial_guess: None, linear: LinearSolveConfig::default(), record_energy: false }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoBandSection {
    pub level: f64,
    /// Half-width of the band; defaults to half the grid spacing.
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for every artifact; nothing is written when absent.
    pub directory: Option<PathBuf>,
    /// Write the potential, reaction potential, concentrations and level set as VTK.
    pub vtk: bool,
    pub profile: Option<ProfileSection>,
    pub iso_band: Option<IsoBandSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmsSection {
    pub spacings: Vec<f64>,
}

impl Default for MmsSection {
    fn default() -> Self {
        Self { spacings: vec![0.4, 0.2] }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default)]
    mms: Option<MmsSection>,
    grid: GridSection,
    #[serde(default)]
    physics: PhysicsSection,
    #[serde(default = "default_solvent_volume")]
    solvent_volume: Volume,
    #[serde(default = "default_species")]
    species: Vec<SpeciesEntry>,
    geometry: GeometrySection,
    #[serde(default)]
    table: TableSection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    output: OutputSection,
}

fn default_mode() -> Mode {
    Mode::Steric
}

fn default_solvent_volume() -> Volume {
    Volume::Text("2.75^3".into())
}

fn default_species() -> Vec<SpeciesEntry> {
    vec![
        SpeciesEntry { valence: 1, volume: Volume::Text("2.76^3".into()), concentration: 0.1 },
        SpeciesEntry { valence: -1, volume: Volume::Text("3.62^3".into()), concentration: 0.1 },
    ]
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub solvent_volume: f64,
    /// Bulk concentrations already converted to ions/Å³.
    pub species: Vec<IonSpecies>,
    pub geometry: GeometrySection,
    pub table: TableSection,
    pub solver: SolverSection,
    pub output: OutputSection,
    /// Present when the run is a manufactured-solution study.
    pub mms: Option<MmsSection>,
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let species = raw
            .species
            .iter()
            .map(|s| IonSpecies::new(s.valence, s.volume.cubic_angstrom()?, molar_to_number_density(s.concentration)))
            .collect::<Result<Vec<_>>>()
            .map_err(config_err)?;
        let resolve = |p: PathBuf| match base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        };
        let geometry = match raw.geometry {
            GeometrySection::Molecule { pqr, levelset } => {
                GeometrySection::Molecule { pqr: resolve(pqr), levelset: levelset.map(resolve) }
            }
            s => s,
        };
        let mut output = raw.output;
        output.directory = output.directory.map(resolve);
        let cfg = Self {
            mode: raw.mode,
            grid: raw.grid,
            physics: raw.physics,
            solvent_volume: raw.solvent_volume.cubic_angstrom()?,
            species,
            geometry,
            table: raw.table,
            solver: raw.solver,
            output,
            mms: raw.mms,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        let p = &self.physics;
        PhysicalConstants::new(p.temperature).map_err(config_err)?;
        for (name, v) in [("eps_m", p.eps_m), ("eps_w", p.eps_w), ("tau", p.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("physics.{name} must be positive, got {v}")));
            }
        }
        if self.mode == Mode::Steric {
            if self.species.is_empty() {
                return Err(Error::Config("the steric closure needs at least one ion species".into()));
            }
            BulkState::new(self.species.clone(), self.solvent_volume).map_err(config_err)?;
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol must be positive, got {}", self.solver.tol)));
        }
        if self.solver.max_steps == 0 {
            return Err(Error::Config("solver.max_steps must be at least 1".into()));
        }
        self.solver.linear.validate()?;
        let t = &self.table;
        if !(t.spacing > 0.0) || !(t.padding >= 0.0) || t.nodes.is_some_and(|n| n < 4) {
            return Err(Error::Config("table needs spacing > 0, padding >= 0 and at least 4 nodes".into()));
        }
        if let Some([lo, hi]) = t.range {
            if !(lo < hi) {
                return Err(Error::Config(format!("table.range must be increasing, got [{lo}, {hi}]")));
            }
        }
        if let GeometrySection::Sphere { radius, .. } = self.geometry {
            if !(radius > 0.0) {
                return Err(Error::Config(format!("sphere radius must be positive, got {radius}")));
            }
        }
        if let Some(m) = &self.mms {
            if !matches!(self.geometry, GeometrySection::Sphere { .. }) {
                return Err(Error::Unsupported("the manufactured solution needs the sphere geometry".into()));
            }
            if m.spacings.is_empty() || m.spacings.iter().any(|h| !(*h > 0.0)) {
                return Err(Error::Config("mms.spacings must be a nonempty list of positive spacings".into()));
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants::new(self.physics.temperature).expect("validated")
    }

    pub fn bulk(&self) -> Result<BulkState> {
        BulkState::new(self.species.clone(), self.solvent_volume)
    }

    pub fn initial_guess(&self) -> InitialGuess {
        self.solver.initial_guess.unwrap_or(match self.mode {
            Mode::Steric => InitialGuess::Zero,
            Mode::Classical => InitialGuess::Linear,
        })
    }

    /// Same configuration on another grid spacing.
    pub fn with_spacing(&self, spacing: f64) -> Self {
        let mut c = self.clone();
        c.grid.spacing = Some(spacing);
        c.grid.interior_points = None;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
        [grid]
        half_width = 10.0
        spacing = 0.4

        [geometry]
        kind = "sphere"
        radius = 5.0
        charge = -5.0
    "#;

    #[test]
    fn minimal_sphere_config_uses_documented_defaults() {
        let c = RunConfig::parse(SPHERE, None).unwrap();
        assert_eq!(c.mode, Mode::Steric);
        assert_eq!(c.physics.tau, 1.5);
        assert_eq!(c.physics.eps_m, 1.0);
        assert_eq!(c.physics.eps_w, 78.0);
        assert!((c.solvent_volume - 2.75f64.powi(3)).abs() < 1e-12);
        assert!((c.species[0].volume - 2.76f64.powi(3)).abs() < 1e-12);
        assert!((c.species[1].volume - 3.62f64.powi(3)).abs() < 1e-12);
        assert!((c.species[0].bulk - molar_to_number_density(0.1)).abs() < 1e-18);
        assert_eq!(c.grid.build().unwrap().n_interior(), 49);
        assert_eq!(c.initial_guess(), InitialGuess::Zero);
        assert!(c.table.enabled);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{SPHERE}\n[solver]\ntoll = 1e-6\n");
        let err = RunConfig::parse(&text, None).unwrap_err();
        assert!(err.to_string().contains("toll"), "{err}");
        let text = format!("colour = 1\n{SPHERE}");
        assert!(RunConfig::parse(&text, None).unwrap_err().to_string().contains("colour"));
    }

    #[test]
    fn overpacked_species_rejected_with_gamma() {
        let text = format!(
            "{SPHERE}\n[[species]]\nvalence = 1\nvolume = \"10^3\"\nconcentration = 1.0\n[[species]]\nvalence = -1\nvolume = 1000.0\nconcentration = 1.0\n"
        );
        let err = RunConfig::parse(&text, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("-0.2044"), "{err}");
    }

    #[test]
    fn classical_mode_skips_packing_check_and_defaults_linear_guess() {
        let text = format!(
            "mode = \"classical\"\n{SPHERE}\n[[species]]\nvalence = 1\nvolume = \"10^3\"\nconcentration = 1.0\n[[species]]\nvalence = -1\nvolume = 1000.0\nconcentration = 1.0\n"
        );
        let c = RunConfig::parse(&text, None).unwrap();
        assert_eq!(c.initial_guess(), InitialGuess::Linear);
    }

    #[test]
    fn volume_shorthand() {
        assert!((parse_volume("2.75^3").unwrap() - 20.796875).abs() < 1e-12);
        assert_eq!(parse_volume(" 27 ").unwrap(), 27.0);
        assert!(parse_volume("3^2").is_err());
        assert!(parse_volume("abc").is_err());
        assert!(Volume::Cubic(-1.0).cubic_angstrom().is_err());
    }

    #[test]
    fn grid_and_solver_validation() {
        let both = SPHERE.replace("spacing = 0.4", "spacing = 0.4\ninterior_points = 49");
        assert!(RunConfig::parse(&both, None).is_err());
        let bad_h = SPHERE.replace("spacing = 0.4", "spacing = 0.3");
        assert!(RunConfig::parse(&bad_h, None).is_err());
        let text = format!("{SPHERE}\n[solver]\ntol = 0.0\n");
        assert!(RunConfig::parse(&text, None).is_err());
        let text = format!("{SPHERE}\n[solver.linear]\nmethod = \"conjugate-gradient\"\ntolerance = 1e-8\n");
        let c = RunConfig::parse(&text, None).unwrap();
        assert_eq!(c.solver.linear.method, crate::linsolve::LinearMethod::ConjugateGradient);
        assert_eq!(c.solver.linear.max_iterations, 2000);
    }

    #[test]
    fn molecule_paths_resolve_against_base() {
        let text = r#"
            [grid]
            half_width = 12.0
            interior_points = 23
            [geometry]
            kind = "molecule"
            pqr = "mol.pqr"
            [output]
            directory = "out"
        "#;
        let c = RunConfig::parse(text, Some(Path::new("/data/run"))).unwrap();
        match &c.geometry {
            GeometrySection::Molecule { pqr, levelset } => {
                assert_eq!(pqr, Path::new("/data/run/mol.pqr"));
                assert!(levelset.is_none());
            }
            _ => panic!(),
        }
        assert_eq!(c.output.directory.as_deref(), Some(Path::new("/data/run/out")));
        let mms = format!("{text}\n[mms]\nspacings = [1.0]\n");
        assert!(matches!(RunConfig::parse(&mms, None), Err(Error::Unsupported(_))));
    }
}
