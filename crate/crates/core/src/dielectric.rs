//! Level-set geometry and the smoothed dielectric built on it.
//!
//! The solvent indicator is smeared over a band of half-width `τ` around the
//! zero level set, `χ = H_τ(φ)`, and the permittivity is the linear blend
//! `ε = (1 − χ) ε_m + χ ε_w`. Finite-difference face coefficients are harmonic
//! means of the two adjacent point values.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{FieldUnit, GridFunction, UniformGrid3};
use crate::solute::Atom;
use crate::vtk;

/// Level-set value used when there are no atoms at all (pure solvent).
pub const ALL_SOLVENT_DISTANCE: f64 = 1e6;

/// Smeared Heaviside step of half-width `tau`.
pub fn smeared_heaviside(s: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("transition width must be positive, got {tau}")));
    }
    Ok(heaviside_unchecked(s, tau))
}

#[inline]
pub(crate) fn heaviside_unchecked(s: f64, tau: f64) -> f64 {
    use std::f64::consts::PI;
    if s >= tau {
        1.0
    } else if s <= -tau {
        0.0
    } else {
        0.5 + s / (2.0 * tau) + (PI * s / tau).sin() / (2.0 * PI)
    }
}

/// Derivative of [`smeared_heaviside`] with respect to `s`.
pub fn smeared_heaviside_derivative(s: f64, tau: f64) -> f64 {
    use std::f64::consts::PI;
    if s.abs() > tau {
        0.0
    } else {
        (1.0 + (PI * s / tau).cos()) / (2.0 * tau)
    }
}

pub fn harmonic_average(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid(format!("harmonic average needs positive inputs, got {a} and {b}")));
    }
    Ok(ha(a, b))
}

#[inline]
fn ha(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Signed distance to the solute surface: negative inside, positive in solvent.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField(pub GridFunction);

impl LevelSetField {
    pub fn field(&self) -> &GridFunction {
        &self.0
    }
}

/// `φ(x) = min_i (|x − x_i| − r_i)`: the van der Waals surface of a union of balls.
pub fn sphere_union_levelset(atoms: &[Atom], grid: UniformGrid3) -> LevelSetField {
    if atoms.is_empty() {
        log::warn!("no atoms: treating the whole box as solvent");
        return LevelSetField(GridFunction::from_fn(grid, FieldUnit::Length, |_| ALL_SOLVENT_DISTANCE));
    }
    LevelSetField(GridFunction::from_fn(grid, FieldUnit::Length, |x| {
        atoms
            .iter()
            .map(|a| {
                let d = [x[0] - a.position[0], x[1] - a.position[1], x[2] - a.position[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - a.radius
            })
            .fold(f64::INFINITY, f64::min)
            .min(ALL_SOLVENT_DISTANCE)
    }))
}

/// Reads a level-set field sampled on exactly `grid`.
///
/// Two layouts are accepted: the VTK structured-points files written by this
/// crate (first scalar array, or the one named `levelset`), and a plain text
/// file whose first non-comment line is `N_h L h` followed by `(N_h+2)³`
/// whitespace-separated values in x-fastest order.
pub fn load_levelset(path: &Path, grid: UniformGrid3) -> Result<LevelSetField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_levelset(&text, &path.display().to_string(), grid)
}

pub fn parse_levelset(text: &str, source_name: &str, grid: UniformGrid3) -> Result<LevelSetField> {
    if text.starts_with("# vtk DataFile") {
        let sp = vtk::parse_structured_points(text, source_name)?;
        let name = sp.array("levelset").map(|_| "levelset");
        return Ok(LevelSetField(sp.to_grid_function(name, grid, FieldUnit::Length)?));
    }
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| Error::Config(format!("{source_name}: empty level-set file")))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line: line + 1,
        message,
    };
    if parts.len() != 3 {
        return Err(parse_err(hl, "header must be 'N_h L h'".into()));
    }
    let n: usize = parts[0].parse().map_err(|_| parse_err(hl, format!("bad N_h '{}'", parts[0])))?;
    let l: f64 = parts[1].parse().map_err(|_| parse_err(hl, format!("bad L '{}'", parts[1])))?;
    let h: f64 = parts[2].parse().map_err(|_| parse_err(hl, format!("bad h '{}'", parts[2])))?;
    let tol = 1e-9 * grid.half_width();
    if n != grid.n_interior() || (l - grid.half_width()).abs() > tol || (h - grid.spacing()).abs() > tol {
        return Err(Error::Config(format!(
            "{source_name}: level set is for N_h={n}, L={l}, h={h}; run grid has N_h={}, L={}, h={}",
            grid.n_interior(),
            grid.half_width(),
            grid.spacing()
        )));
    }
    let mut values = Vec::with_capacity(grid.total_points());
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = match tok {
                "nan" | "NaN" => f64::NAN,
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                t => t.parse().map_err(|_| parse_err(ln, format!("bad value '{t}'")))?,
            };
            values.push(v);
        }
    }
    if values.len() != grid.total_points() {
        return Err(Error::Config(format!(
            "{source_name}: expected {} values, found {}",
            grid.total_points(),
            values.len()
        )));
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{source_name}: non-finite level-set value at index {bad}")));
    }
    Ok(LevelSetField(GridFunction::from_values(grid, values, FieldUnit::Length)?))
}

/// Writes a level set in the plain text layout accepted by [`load_levelset`].
pub fn render_levelset_text(levelset: &LevelSetField) -> String {
    use std::fmt::Write as _;
    let g = levelset.0.grid();
    let mut s = format!("# level set\n{} {:?} {:?}\n", g.n_interior(), g.half_width(), g.spacing());
    for row in levelset.0.values().chunks(g.points_per_axis()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

#[derive(Debug, Clone)]
pub struct DielectricModel {
    pub eps_m: f64,
    pub eps_w: f64,
    pub tau: f64,
    /// Smeared solvent indicator `χ^{w,τ}` on every grid point.
    pub chi: GridFunction,
    /// Smoothed relative permittivity on every grid point.
    pub eps: GridFunction,
    /// Harmonic-mean permittivity on the face between grid point `p` and its
    /// `+x`, `+y`, `+z` neighbour, stored at index `p` (full-grid layout).
    pub face: [Vec<f64>; 3],
}

impl DielectricModel {
    pub fn build(levelset: &LevelSetField, eps_m: f64, eps_w: f64, tau: f64) -> Result<Self> {
        if !(eps_m > 0.0 && eps_w > 0.0) {
            return Err(Error::invalid(format!("permittivities must be positive, got {eps_m} and {eps_w}")));
        }
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("transition width must be positive, got {tau}")));
        }
        let phi = levelset.field();
        let grid = *phi.grid();
        let chi_vals: Vec<f64> = phi.values().par_iter().map(|&s| heaviside_unchecked(s, tau)).collect();
        let eps_vals: Vec<f64> = chi_vals.par_iter().map(|&c| (1.0 - c) * eps_m + c * eps_w).collect();
        let face = face_averages(&grid, &eps_vals);
        Ok(Self {
            eps_m,
            eps_w,
            tau,
            chi: GridFunction::from_values(grid, chi_vals, FieldUnit::Unitless)?,
            eps: GridFunction::from_values(grid, eps_vals, FieldUnit::Unitless)?,
            face,
        })
    }

    pub fn grid(&self) -> &UniformGrid3 {
        self.eps.grid()
    }
}

fn face_averages(grid: &UniformGrid3, eps: &[f64]) -> [Vec<f64>; 3] {
    let p = grid.points_per_axis();
    let strides = [1, p, p * p];
    let mut out: [Vec<f64>; 3] = Default::default();
    for (axis, stride) in strides.into_iter().enumerate() {
        let mut f = vec![0.0; eps.len()];
        f.par_chunks_mut(p * p).enumerate().for_each(|(k, plane)| {
            for j in 0..p {
                for i in 0..p {
                    let c = [i, j, k];
                    if c[axis] + 1 < p {
                        let idx = grid.grid_index(i, j, k);
                        plane[i + p * j] = ha(eps[idx], eps[idx + stride]);
                    }
                }
            }
        });
        out[axis] = f;
    }
    out
}
