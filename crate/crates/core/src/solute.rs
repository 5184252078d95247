//! Solute atoms, physical constants, and the two analytic potentials built
//! from them: the vacuum Coulomb potential of the solute charges and the
//! screened (Yukawa) potential used as Dirichlet data on the box boundary.
//!
//! Potentials are returned in dimensionless form `βeψ`, which is numerically
//! the potential in units of k_BT/e.

use std::io::BufRead;

use crate::closure::IonSpecies;
use crate::error::{Error, Result};
use crate::mesh::{FieldUnit, GridFunction, UniformGrid3};

const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
const BOLTZMANN: f64 = 1.380_649e-23;
const AVOGADRO: f64 = 6.022_140_76e23;

/// Ions per Å³ in a one-molar solution.
pub const MOLAR_TO_NUMBER_DENSITY: f64 = AVOGADRO * 1e-27;

/// Smallest atom-to-point distance used in the Coulomb sum, Å.
pub const MIN_DISTANCE: f64 = 1e-6;

pub fn molar_to_number_density(molar: f64) -> f64 {
    molar * MOLAR_TO_NUMBER_DENSITY
}

pub fn number_density_to_molar(density: f64) -> f64 {
    density / MOLAR_TO_NUMBER_DENSITY
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    temperature: f64,
    coupling_length: f64,
}

impl PhysicalConstants {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        let lambda = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE
            / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY * BOLTZMANN * temperature)
            * 1e10;
        Ok(Self {
            temperature,
            coupling_length: lambda,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Vacuum Bjerrum length `βe²/(4πε₀)` in Å.
    pub fn coupling_length(&self) -> f64 {
        self.coupling_length
    }

    /// `4πλ`: converts a charge density (e/Å³) into the right-hand side of the
    /// dimensionless Poisson equation `−∇·ε∇u = 4πλ ρ`.
    pub fn poisson_coupling(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.coupling_length
    }

    /// k_BT/e in millivolts.
    pub fn thermal_voltage_mv(&self) -> f64 {
        BOLTZMANN * self.temperature / ELEMENTARY_CHARGE * 1e3
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::new(298.15).expect("room temperature is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub position: [f64; 3],
    /// Partial charge in units of e.
    pub charge: f64,
    /// Radius in Å.
    pub radius: f64,
}

impl Atom {
    pub fn new(position: [f64; 3], charge: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !position.iter().all(|x| x.is_finite()) || !charge.is_finite() {
            return Err(Error::invalid(format!(
                "atom at {position:?} with charge {charge} and radius {radius} is not valid"
            )));
        }
        Ok(Self { position, charge, radius })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoluteModel {
    pub atoms: Vec<Atom>,
}

impl SoluteModel {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn total_charge(&self) -> f64 {
        self.atoms.iter().map(|a| a.charge).sum()
    }
}

/// Reads ATOM/HETATM records from PQR text.
///
/// Records are split on whitespace and the last five fields are taken as
/// `x y z charge radius`, so chain identifiers and insertion codes may be
/// present or absent. Every other line is ignored.
pub fn parse_pqr<R: BufRead>(reader: R, source_name: &str) -> Result<SoluteModel> {
    let mut atoms = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let record = line.split_whitespace().next().unwrap_or("");
        if record != "ATOM" && record != "HETATM" {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: lineno + 1,
            message,
        };
        if fields.len() < 6 {
            return Err(parse_err(format!("{record} record has too few fields")));
        }
        let tail = &fields[fields.len() - 5..];
        let mut nums = [0.0; 5];
        for (slot, text) in nums.iter_mut().zip(tail) {
            *slot = text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("malformed numeric field '{text}'")))?;
        }
        let atom = Atom::new([nums[0], nums[1], nums[2]], nums[3], nums[4]).map_err(|e| parse_err(e.to_string()))?;
        atoms.push(atom);
    }
    if atoms.is_empty() {
        log::warn!("{source_name}: no ATOM/HETATM records found");
    }
    Ok(SoluteModel { atoms })
}

pub fn read_pqr_file(path: &std::path::Path) -> Result<SoluteModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pqr(std::io::BufReader::new(file), &path.display().to_string())
}

#[inline]
fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Vacuum potential of the solute charges in a uniform dielectric `eps_m`:
/// `Σ λ Q_i / (ε_m |x − x_i|)`, distances clamped below at [`MIN_DISTANCE`].
pub fn eval_psi_f(atoms: &[Atom], constants: &PhysicalConstants, eps_m: f64, point: [f64; 3]) -> f64 {
    let lambda = constants.coupling_length();
    atoms
        .iter()
        .map(|a| lambda * a.charge / (eps_m * distance(point, a.position).max(MIN_DISTANCE)))
        .sum()
}

/// Inverse Debye length (Å⁻¹) of a bulk electrolyte in solvent permittivity `eps_w`.
pub fn debye_kappa(constants: &PhysicalConstants, eps_w: f64, species: &[IonSpecies]) -> f64 {
    let ionic: f64 = species.iter().map(|s| (s.valence as f64).powi(2) * s.bulk).sum();
    (constants.poisson_coupling() * ionic / eps_w).sqrt()
}

/// Screened Coulomb potential `Σ λ Q_i exp(−κr)/(ε_w r)` used as boundary data.
pub fn eval_yukawa_boundary(atoms: &[Atom], constants: &PhysicalConstants, eps_w: f64, kappa: f64, point: [f64; 3]) -> f64 {
    let lambda = constants.coupling_length();
    atoms
        .iter()
        .map(|a| {
            let r = distance(point, a.position).max(MIN_DISTANCE);
            lambda * a.charge * (-kappa * r).exp() / (eps_w * r)
        })
        .sum()
}

/// `ψ^f` sampled on every grid point.
pub fn psi_f_field(grid: UniformGrid3, atoms: &[Atom], constants: &PhysicalConstants, eps_m: f64) -> GridFunction {
    GridFunction::from_fn(grid, FieldUnit::Potential, |x| eval_psi_f(atoms, constants, eps_m, x))
}

/// Dirichlet data for the reaction potential: `ψ_Yukawa − ψ^f` on the
/// boundary layer, zero inside.
pub fn reaction_boundary_field(
    grid: UniformGrid3,
    atoms: &[Atom],
    constants: &PhysicalConstants,
    eps_m: f64,
    eps_w: f64,
    kappa: f64,
) -> GridFunction {
    let mut f = GridFunction::zeros(grid, FieldUnit::Potential);
    for (q, v) in f.values_mut().iter_mut().enumerate() {
        let (i, j, k) = grid.grid_coords(q);
        if grid.is_boundary(i, j, k) {
            let x = grid.point(i, j, k);
            *v = eval_yukawa_boundary(atoms, constants, eps_w, kappa, x) - eval_psi_f(atoms, constants, eps_m, x);
        }
    }
    f
}
