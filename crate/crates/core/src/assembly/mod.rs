//! Discrete nonlinear system for the reaction potential `ψ^r`.
//!
//! With `A` the 7-point operator `−∇_h·ε∇_h` (harmonic-mean faces, divided by
//! `h²`) acting on interior unknowns, the system is
//!
//! `F(ψ) = Aψ − 4πλ χ ρ(ψ^f + ψ) − b = 0`,
//!
//! where `ρ` is the closure's ionic charge density and `b` collects the
//! Dirichlet data, the `ψ^f` flux source with faces `HA(ε) − ε_m`, and any
//! manufactured source. All quantities are dimensionless per Å².
//!
//! Vectors of unknowns use the full-grid layout of [`UniformGrid3`] with the
//! boundary entries held at zero, so stencil loops need no branches.

mod mms;

use rayon::prelude::*;

use crate::closure::Closure;
use crate::dielectric::DielectricModel;
use crate::error::{Error, Result};
use crate::mesh::{FieldUnit, GridFunction, UniformGrid3};
use crate::solute::PhysicalConstants;

pub use mms::{mms_exact, mms_source, MmsProblem, SphereGeometry, MMS_AMPLITUDE};

/// 7-point variable-coefficient operator `−∇_h·ε∇_h` with homogeneous
/// Dirichlet closure.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    grid: UniformGrid3,
    /// Face coefficient between point `p` and `p + e_axis`, divided by `h²`.
    face: [Vec<f64>; 3],
    /// Sum of the six face coefficients around each interior point.
    diag: Vec<f64>,
}

impl StencilOperator {
    pub fn from_dielectric(dielectric: &DielectricModel) -> Self {
        let grid = *dielectric.grid();
        let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
        let face = dielectric.face.clone().map(|mut f| {
            f.par_iter_mut().for_each(|v| *v *= inv_h2);
            f
        });
        Self::from_faces(grid, face)
    }

    /// Operator from face coefficients already divided by `h²`.
    pub fn from_faces(grid: UniformGrid3, face: [Vec<f64>; 3]) -> Self {
        let p = grid.points_per_axis();
        let n = grid.n_interior();
        let (s1, s2) = (p, p * p);
        let mut diag = vec![0.0; grid.total_points()];
        diag.par_chunks_mut(s2).enumerate().for_each(|(k, plane)| {
            if k == 0 || k > n {
                return;
            }
            for j in 1..=n {
                for i in 1..=n {
                    let q = i + p * j + s2 * k;
                    plane[i + p * j] =
                        face[0][q] + face[0][q - 1] + face[1][q] + face[1][q - s1] + face[2][q] + face[2][q - s2];
                }
            }
        });
        Self { grid, face, diag }
    }

    pub fn grid(&self) -> &UniformGrid3 {
        &self.grid
    }

    pub fn face(&self, axis: usize) -> &[f64] {
        &self.face[axis]
    }

    /// Row sums of the face coefficients (the diagonal of `A`).
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = (A + diag(shift)) x` on interior points; boundary entries of `y` are zero.
    pub fn apply(&self, x: &[f64], shift: Option<&[f64]>, y: &mut [f64]) {
        let g = &self.grid;
        let p = g.points_per_axis();
        let n = g.n_interior();
        let (s1, s2) = (p, p * p);
        let [fx, fy, fz] = &self.face;
        y.par_chunks_mut(s2).enumerate().for_each(|(k, plane)| {
            plane.fill(0.0);
            if k == 0 || k > n {
                return;
            }
            for j in 1..=n {
                let row = p * j + s2 * k;
                for i in 1..=n {
                    let q = row + i;
                    let c = x[q];
                    let mut v = fx[q] * (c - x[q + 1])
                        + fx[q - 1] * (c - x[q - 1])
                        + fy[q] * (c - x[q + s1])
                        + fy[q - s1] * (c - x[q - s1])
                        + fz[q] * (c - x[q + s2])
                        + fz[q - s2] * (c - x[q - s2]);
                    if let Some(d) = shift {
                        v += d[q] * c;
                    }
                    plane[i + p * j] = v;
                }
            }
        });
    }

    /// `−∇_h·ε∇_h u` at every interior point of a full grid function, boundary
    /// values included. Returned in interior (unknown) order.
    pub fn apply_lh(&self, field: &GridFunction) -> Vec<f64> {
        let g = &self.grid;
        let p = g.points_per_axis();
        let (s1, s2) = (p, p * p);
        let x = field.values();
        let [fx, fy, fz] = &self.face;
        (0..g.interior_count())
            .into_par_iter()
            .map(|m| {
                let q = g.interior_to_grid(m);
                let c = x[q];
                fx[q] * (c - x[q + 1])
                    + fx[q - 1] * (c - x[q - 1])
                    + fy[q] * (c - x[q + s1])
                    + fy[q - s1] * (c - x[q - s1])
                    + fz[q] * (c - x[q + s2])
                    + fz[q - s2] * (c - x[q - s2])
            })
            .collect()
    }

    /// Dense row-major matrix of `A + diag(shift)` over interior unknowns. For tests on tiny grids.
    pub fn to_dense(&self, shift: Option<&[f64]>) -> Result<Vec<f64>> {
        let g = &self.grid;
        let m = g.interior_count();
        if m > 4096 {
            return Err(Error::invalid(format!("dense export of {m} unknowns is too large")));
        }
        let mut dense = vec![0.0; m * m];
        let mut e = vec![0.0; g.total_points()];
        let mut col = vec![0.0; g.total_points()];
        for j in 0..m {
            let q = g.interior_to_grid(j);
            e[q] = 1.0;
            self.apply(&e, shift, &mut col);
            e[q] = 0.0;
            for i in 0..m {
                dense[i * m + j] = col[g.interior_to_grid(i)];
            }
        }
        Ok(dense)
    }
}

/// Everything needed to evaluate `F`, its Jacobian and the discrete energy.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    grid: UniformGrid3,
    op: StencilOperator,
    rhs: Vec<f64>,
    chi: Vec<f64>,
    psi_f: Vec<f64>,
    boundary: Vec<f64>,
    coupling: f64,
}

impl AssembledSystem {
    /// Assembles `A` and `b`.
    ///
    /// `boundary` supplies the reaction-potential values on the boundary layer
    /// (interior entries are ignored); `extra_source` is added to `b` at
    /// interior points.
    pub fn new(
        dielectric: &DielectricModel,
        psi_f: &GridFunction,
        boundary: &GridFunction,
        constants: &PhysicalConstants,
        extra_source: Option<&[f64]>,
    ) -> Result<Self> {
        let grid = *dielectric.grid();
        if *psi_f.grid() != grid || *boundary.grid() != grid {
            return Err(Error::invalid("dielectric, psi_f and boundary fields must share one grid"));
        }
        if let Some(src) = extra_source {
            if src.len() != grid.total_points() {
                return Err(Error::invalid("extra source must be a full-grid array"));
            }
        }
        let op = StencilOperator::from_dielectric(dielectric);
        let mut bnd = boundary.values().to_vec();
        for (idx, v) in bnd.iter_mut().enumerate() {
            let (i, j, k) = grid.grid_coords(idx);
            if !grid.is_boundary(i, j, k) {
                *v = 0.0;
            }
        }
        let mut chi = dielectric.chi.values().to_vec();
        zero_boundary(&grid, &mut chi);
        let rhs = build_rhs(&grid, &op, dielectric, psi_f.values(), &bnd, extra_source);
        if let Some(bad) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical("assembly", format!("non-finite right-hand side at grid index {bad}")));
        }
        Ok(Self {
            grid,
            op,
            rhs,
            chi,
            psi_f: psi_f.values().to_vec(),
            boundary: bnd,
            coupling: constants.poisson_coupling(),
        })
    }

    pub fn grid(&self) -> &UniformGrid3 {
        &self.grid
    }

    pub fn operator(&self) -> &StencilOperator {
        &self.op
    }

    /// Fixed right-hand side `b` (full-grid layout, zero on the boundary).
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn psi_f(&self) -> &[f64] {
        &self.psi_f
    }

    /// `4πλ`, the factor in front of charge densities.
    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.grid.total_points()]
    }

    /// Reaction-potential field: interior unknowns plus the Dirichlet values.
    pub fn to_field(&self, psi: &[f64]) -> GridFunction {
        let mut v = self.boundary.clone();
        for_each_interior(&self.grid, |q| v[q] = psi[q]);
        GridFunction::from_values(self.grid, v, FieldUnit::Potential).expect("sizes agree")
    }

    /// Unknown vector taken from the interior of a full field.
    pub fn from_field(&self, field: &GridFunction) -> Vec<f64> {
        let mut v = field.values().to_vec();
        zero_boundary(&self.grid, &mut v);
        v
    }

    /// `F(ψ)`.
    pub fn residual(&self, closure: &dyn Closure, psi: &[f64]) -> Result<Vec<f64>> {
        let mut f = self.zeros();
        self.evaluate(closure, psi, &mut f, None)?;
        Ok(f)
    }

    /// `F(ψ)` and the Jacobian shift `−g'(ψ) ≥ 0`, so that `F' = A + diag(shift)`.
    pub fn residual_and_shift(&self, closure: &dyn Closure, psi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut f = self.zeros();
        let mut d = self.zeros();
        self.evaluate(closure, psi, &mut f, Some(&mut d))?;
        Ok((f, d))
    }

    /// `g'(ψ) = 4πλ χ dρ/du`, nonpositive at every point.
    pub fn jacobian_diag(&self, closure: &dyn Closure, psi: &[f64]) -> Result<Vec<f64>> {
        let (_, mut d) = self.residual_and_shift(closure, psi)?;
        d.iter_mut().for_each(|v| *v = -*v);
        Ok(d)
    }

    /// `g(ψ) = 4πλ χ ρ(ψ^f + ψ)` on interior points.
    pub fn nonlinear_term(&self, closure: &dyn Closure, psi: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.zeros();
        let pp = self.grid.points_per_axis().pow(2);
        let n = self.grid.n_interior();
        g.par_chunks_mut(pp).enumerate().try_for_each(|(k, plane)| -> Result<()> {
            if k == 0 || k > n {
                return Ok(());
            }
            for (off, out) in plane.iter_mut().enumerate() {
                let q = k * pp + off;
                let chi = self.chi[q];
                if chi > 0.0 {
                    *out = self.coupling * chi * closure.charge(self.psi_f[q] + psi[q])?.0;
                }
            }
            Ok(())
        })?;
        Ok(g)
    }

    fn evaluate(&self, closure: &dyn Closure, psi: &[f64], f: &mut [f64], shift: Option<&mut [f64]>) -> Result<()> {
        self.op.apply(psi, None, f);
        let pp = self.grid.points_per_axis().pow(2);
        let n = self.grid.n_interior();
        let p = self.grid.points_per_axis();
        let kernel = |k: usize, fplane: &mut [f64], mut dplane: Option<&mut [f64]>| -> Result<()> {
            if k == 0 || k > n {
                return Ok(());
            }
            for j in 1..=n {
                for i in 1..=n {
                    let off = i + p * j;
                    let q = k * pp + off;
                    let chi = self.chi[q];
                    let mut v = fplane[off] - self.rhs[q];
                    if chi > 0.0 {
                        let (rho, drho) = closure.charge(self.psi_f[q] + psi[q])?;
                        v -= self.coupling * chi * rho;
                        if let Some(d) = dplane.as_deref_mut() {
                            d[off] = -self.coupling * chi * drho;
                        }
                    }
                    fplane[off] = v;
                }
            }
            Ok(())
        };
        match shift {
            Some(d) => f
                .par_chunks_mut(pp)
                .zip(d.par_chunks_mut(pp))
                .enumerate()
                .try_for_each(|(k, (fp, dp))| kernel(k, fp, Some(dp))),
            None => f.par_chunks_mut(pp).enumerate().try_for_each(|(k, fp)| kernel(k, fp, None)),
        }
    }

    /// Discrete energy `E(ψ) = ½ψᵀAψ − Σ_m 4πλ χ_m ∫_{ψ^f_m}^{ψ^f_m+ψ_m} ρ − bᵀψ`,
    /// whose gradient is `F(ψ)`.
    pub fn energy(&self, closure: &dyn Closure, psi: &[f64]) -> Result<f64> {
        self.energy_difference(closure, psi, &self.zeros())
    }

    /// `E(a) − E(c)` evaluated without forming either energy, so small
    /// differences between nearby states are not lost to cancellation.
    pub fn energy_difference(&self, closure: &dyn Closure, a: &[f64], c: &[f64]) -> Result<f64> {
        let total = self.grid.total_points();
        let mut sum = vec![0.0; total];
        let mut diff = vec![0.0; total];
        sum.par_iter_mut().zip(diff.par_iter_mut()).enumerate().for_each(|(q, (s, d))| {
            *s = a[q] + c[q];
            *d = a[q] - c[q];
        });
        let mut a_sum = vec![0.0; total];
        self.op.apply(&sum, None, &mut a_sum);
        let pp = self.grid.points_per_axis().pow(2);
        let n = self.grid.n_interior();
        let partial: Vec<f64> = (0..self.grid.points_per_axis())
            .into_par_iter()
            .map(|k| -> Result<f64> {
                if k == 0 || k > n {
                    return Ok(0.0);
                }
                let mut acc = 0.0;
                for q in k * pp..(k + 1) * pp {
                    let d = diff[q];
                    if d == 0.0 {
                        continue;
                    }
                    acc += 0.5 * d * a_sum[q] - self.rhs[q] * d;
                    let chi = self.chi[q];
                    if chi > 0.0 {
                        let base = self.psi_f[q];
                        let integral = charge_integral(closure, base + c[q], d)?;
                        acc -= self.coupling * chi * integral;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(partial.iter().sum())
    }

    /// Dense `A + diag(shift)` over interior unknowns.
    pub fn dense_matrix(&self, shift: Option<&[f64]>) -> Result<Vec<f64>> {
        self.op.to_dense(shift)
    }
}

/// Below this interval width `∫ρ` uses Simpson's rule instead of a difference of antiderivatives.
const SIMPSON_WIDTH: f64 = 1e-4;

/// `∫_lo^{lo+d} ρ(u) du`. Short intervals avoid the cancellation in `Q(hi) − Q(lo)`;
/// the width is passed separately so it is not rounded by the offset `lo`.
fn charge_integral(closure: &dyn Closure, lo: f64, d: f64) -> Result<f64> {
    let hi = lo + d;
    if d.abs() < SIMPSON_WIDTH {
        let mid = closure.charge(lo + 0.5 * d)?.0;
        Ok(d * (closure.charge(lo)?.0 + 4.0 * mid + closure.charge(hi)?.0) / 6.0)
    } else {
        Ok(closure.antiderivative(hi)? - closure.antiderivative(lo)?)
    }
}

fn build_rhs(
    grid: &UniformGrid3,
    op: &StencilOperator,
    dielectric: &DielectricModel,
    psi_f: &[f64],
    boundary: &[f64],
    extra: Option<&[f64]>,
) -> Vec<f64> {
    let p = grid.points_per_axis();
    let n = grid.n_interior();
    let (s1, s2) = (p, p * p);
    let eps_m = dielectric.eps_m;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let raw = &dielectric.face;
    let mut rhs = vec![0.0; grid.total_points()];
    rhs.par_chunks_mut(s2).enumerate().for_each(|(k, plane)| {
        if k == 0 || k > n {
            return;
        }
        for j in 1..=n {
            for i in 1..=n {
                let q = i + p * j + s2 * k;
                let neighbours = [
                    (q + 1, op.face[0][q], raw[0][q]),
                    (q - 1, op.face[0][q - 1], raw[0][q - 1]),
                    (q + s1, op.face[1][q], raw[1][q]),
                    (q - s1, op.face[1][q - s1], raw[1][q - s1]),
                    (q + s2, op.face[2][q], raw[2][q]),
                    (q - s2, op.face[2][q - s2], raw[2][q - s2]),
                ];
                let mut dirichlet = 0.0;
                let mut flux = 0.0;
                for (nb, scaled, ha) in neighbours {
                    dirichlet += scaled * boundary[nb];
                    flux += (ha - eps_m) * (psi_f[nb] - psi_f[q]);
                }
                let mut v = dirichlet + flux * inv_h2;
                if let Some(e) = extra {
                    v += e[q];
                }
                plane[i + p * j] = v;
            }
        }
    });
    rhs
}

/// Calls `f(q)` for every interior full-grid index `q`, in order.
pub(crate) fn for_each_interior(grid: &UniformGrid3, mut f: impl FnMut(usize)) {
    let n = grid.n_interior();
    for k in 1..=n {
        for j in 1..=n {
            for i in 1..=n {
                f(grid.grid_index(i, j, k));
            }
        }
    }
}

pub(crate) fn zero_boundary(grid: &UniformGrid3, v: &mut [f64]) {
    let p = grid.points_per_axis();
    let last = p - 1;
    v.par_chunks_mut(p * p).enumerate().for_each(|(k, plane)| {
        if k == 0 || k == last {
            plane.fill(0.0);
            return;
        }
        for j in 0..p {
            if j == 0 || j == last {
                plane[p * j..p * (j + 1)].fill(0.0);
            } else {
                plane[p * j] = 0.0;
                plane[p * j + last] = 0.0;
            }
        }
    });
}

/// Largest absolute entry.
pub fn max_norm(v: &[f64]) -> f64 {
    v.par_iter().map(|x| x.abs()).reduce(|| 0.0, f64::max)
}
