//! Reference computations for the `stericpb` test suite.
//!
//! Nothing here calls into the solver crate. Each routine works on plain
//! numbers (species as `(valence, volume, bulk)` triples, dielectric values
//! on a padded grid) and uses the most direct method available: bisection,
//! dense Gaussian elimination, centered differences, closed forms. They are
//! slow on purpose and only meant for small problems.

use nalgebra::{DMatrix, SymmetricEigen};

/// How an oracle value was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Bisection,
    DenseDirect,
    FiniteDifference,
    ClosedForm,
}

/// Value(s) from an oracle together with the tolerance it actually reached.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub values: Vec<f64>,
    pub method: OracleMethod,
    pub achieved_tol: f64,
}

impl OracleResult {
    pub fn scalar(&self) -> f64 {
        self.values[0]
    }
}

/// One ionic species as a plain triple: valence, volume (Å³), bulk density (Å⁻³).
pub type SpeciesTriple = (f64, f64, f64);

/// The literal solvent-fraction residual
/// `γ − 1 + Σ v_j c_j (γ/γ∞)^{v_j/v0} exp(−z_j u)`.
pub fn gamma_residual(gamma: f64, u: f64, species: &[SpeciesTriple], v0: f64) -> f64 {
    let gamma_inf = bulk_gamma(species);
    let mut f = gamma - 1.0;
    for &(z, v, c) in species {
        f += v * c * (gamma / gamma_inf).powf(v / v0) * (-z * u).exp();
    }
    f
}

pub fn bulk_gamma(species: &[SpeciesTriple]) -> f64 {
    1.0 - species.iter().map(|&(_, v, c)| v * c).sum::<f64>()
}

/// Root of the solvent-fraction equation by plain bisection on `(ε, 1 − ε)`.
///
/// The residual is −1 at γ = 0 and positive at γ = 1, so the bracket is
/// always valid. Stops once the bracket is narrower than `1e-13`.
pub fn bisect_gamma(u: f64, species: &[SpeciesTriple], v0: f64) -> OracleResult {
    let f = |g: f64| gamma_residual(g, u, species, v0);
    let root = bisect(f, 0.0, 1.0, 1e-13);
    OracleResult {
        values: vec![root.0],
        method: OracleMethod::Bisection,
        achieved_tol: root.1,
    }
}

/// Closed-form solvent fraction for one species whose volume equals the solvent volume.
pub fn bikerman_gamma(valence: f64, volume_fraction_bulk: f64, u: f64) -> f64 {
    let gamma_inf = 1.0 - volume_fraction_bulk;
    gamma_inf / (gamma_inf + volume_fraction_bulk * (-valence * u).exp())
}

/// Bisection for an increasing function with `f(lo) < 0 < f(hi)`.
/// Returns the midpoint of the final bracket and the bracket width.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, width: f64) -> (f64, f64) {
    for _ in 0..400 {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), hi - lo)
}

/// Root of a scalar increasing nonlinear equation, used to check a one-unknown Newton solve.
pub fn scalar_newton_reference(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> OracleResult {
    assert!(f(lo) < 0.0 && f(hi) > 0.0, "bracket does not straddle a root");
    let (root, width) = bisect(f, lo, hi, 1e-13 * (1.0 + lo.abs().max(hi.abs())));
    OracleResult {
        values: vec![root],
        method: OracleMethod::Bisection,
        achieved_tol: width,
    }
}

/// Centered finite difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, step: f64) -> OracleResult {
    let d = (f(x + step) - f(x - step)) / (2.0 * step);
    OracleResult {
        values: vec![d],
        method: OracleMethod::FiniteDifference,
        achieved_tol: step * step,
    }
}

/// Smeared Heaviside function written out from its piecewise definition.
pub fn heaviside_reference(s: f64, tau: f64) -> f64 {
    if s > tau {
        1.0
    } else if s < -tau {
        0.0
    } else {
        0.5 + s / (2.0 * tau) + (std::f64::consts::PI * s / tau).sin() / (2.0 * std::f64::consts::PI)
    }
}

/// Born reaction-field energy (k_BT) of a point charge `q` (e) at the centre of a
/// sphere of radius `radius` (Å), in units where `bjerrum` is the vacuum coupling length.
pub fn born_energy(bjerrum: f64, q: f64, radius: f64, eps_in: f64, eps_out: f64) -> OracleResult {
    OracleResult {
        values: vec![0.5 * bjerrum * q * q * (1.0 / eps_out - 1.0 / eps_in) / radius],
        method: OracleMethod::ClosedForm,
        achieved_tol: 0.0,
    }
}

/// Born energy for the smeared permittivity `ε(r) = (1 − H_τ(r − R)) ε_in + H_τ(r − R) ε_out`.
///
/// A radial profile leaves `D = q/r²` unchanged, so the reaction potential at
/// the centre is `λ q ∫ (1/ε(r) − 1/ε_in) r⁻² dr`. The transition layer is
/// integrated by composite Simpson with `2 panels` subintervals; the tail
/// beyond `R + τ` is closed form. `achieved_tol` is the change from halving
/// the panel count.
pub fn smeared_born_energy(bjerrum: f64, q: f64, radius: f64, tau: f64, eps_in: f64, eps_out: f64, panels: usize) -> OracleResult {
    let integrand = |r: f64| {
        let h = heaviside_reference(r - radius, tau);
        (1.0 / ((1.0 - h) * eps_in + h * eps_out) - 1.0 / eps_in) / (r * r)
    };
    let simpson = |n: usize| {
        let (a, b) = (radius - tau, radius + tau);
        let step = (b - a) / (2 * n) as f64;
        let mut sum = integrand(a) + integrand(b);
        for i in 1..2 * n {
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(a + i as f64 * step);
        }
        sum * step / 3.0
    };
    let tail = (1.0 / eps_out - 1.0 / eps_in) / (radius + tau);
    let scale = 0.5 * bjerrum * q * q;
    let fine = scale * (simpson(panels) + tail);
    let coarse = scale * (simpson(panels / 2) + tail);
    OracleResult {
        values: vec![fine],
        method: OracleMethod::ClosedForm,
        achieved_tol: (fine - coarse).abs(),
    }
}

/// Dense finite-difference operator `−∇_h·ε∇_h` on `n³` interior unknowns.
///
/// `eps` holds cell values on the padded `(n+2)³` grid, x fastest. Face values are
/// harmonic means of the two adjacent cells. Returns the matrix and the vector of
/// boundary contributions produced by the padded values of `boundary`.
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
    pub boundary_rhs: Vec<f64>,
}

pub fn dense_operator(n: usize, h: f64, eps: &[f64], boundary: &[f64]) -> DenseOperator {
    let np = n + 2;
    assert_eq!(eps.len(), np * np * np);
    let gidx = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let iidx = |i: usize, j: usize, k: usize| (i - 1) + n * ((j - 1) + n * (k - 1));
    let nn = n * n * n;
    let mut a = DMatrix::<f64>::zeros(nn, nn);
    let mut bnd = vec![0.0; nn];
    let h2 = h * h;
    for k in 1..=n {
        for j in 1..=n {
            for i in 1..=n {
                let row = iidx(i, j, k);
                let p = gidx(i, j, k);
                let neighbours = [
                    (i - 1, j, k),
                    (i + 1, j, k),
                    (i, j - 1, k),
                    (i, j + 1, k),
                    (i, j, k - 1),
                    (i, j, k + 1),
                ];
                for &(a_i, a_j, a_k) in &neighbours {
                    let q = gidx(a_i, a_j, a_k);
                    let e1 = eps[p];
                    let e2 = eps[q];
                    let w = 2.0 * e1 * e2 / (e1 + e2) / h2;
                    a[(row, row)] += w;
                    let interior = (1..=n).contains(&a_i) && (1..=n).contains(&a_j) && (1..=n).contains(&a_k);
                    if interior {
                        a[(row, iidx(a_i, a_j, a_k))] -= w;
                    } else {
                        bnd[row] += w * boundary[q];
                    }
                }
            }
        }
    }
    DenseOperator {
        matrix: a,
        boundary_rhs: bnd,
    }
}

/// Dense version of the source `∇_h·(HA(ε) − ε_m)∇_h ψ^f` on interior points.
pub fn dense_singular_source(n: usize, h: f64, eps: &[f64], eps_m: f64, psi_f: &[f64]) -> Vec<f64> {
    let np = n + 2;
    let gidx = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut out = Vec::with_capacity(n * n * n);
    for k in 1..=n {
        for j in 1..=n {
            for i in 1..=n {
                let p = gidx(i, j, k);
                let mut s = 0.0;
                for q in [
                    gidx(i - 1, j, k),
                    gidx(i + 1, j, k),
                    gidx(i, j - 1, k),
                    gidx(i, j + 1, k),
                    gidx(i, j, k - 1),
                    gidx(i, j, k + 1),
                ] {
                    let ha = 2.0 * eps[p] * eps[q] / (eps[p] + eps[q]);
                    s += (ha - eps_m) * (psi_f[q] - psi_f[p]);
                }
                out.push(s / (h * h));
            }
        }
    }
    out
}

/// Gaussian elimination with partial pivoting. Panics on a singular matrix.
pub fn dense_solve_small(matrix: &DMatrix<f64>, rhs: &[f64]) -> OracleResult {
    let n = rhs.len();
    assert_eq!(matrix.nrows(), n);
    assert!(n <= 125 * 8, "dense oracle is for small systems");
    let mut a = matrix.clone();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert!(pmax > 0.0, "singular matrix in dense oracle");
        if piv != col {
            a.swap_rows(piv, col);
            b.swap(piv, col);
        }
        let d = a[(col, col)];
        for r in col + 1..n {
            let factor = a[(r, col)] / d;
            if factor != 0.0 {
                for c in col..n {
                    a[(r, c)] -= factor * a[(col, c)];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[(r, c)] * x[c];
        }
        x[r] = s / a[(r, r)];
    }
    let residual = (0..n)
        .map(|r| {
            let ax: f64 = (0..n).map(|c| matrix[(r, c)] * x[c]).sum();
            (ax - rhs[r]).abs()
        })
        .fold(0.0, f64::max);
    OracleResult {
        values: x,
        method: OracleMethod::DenseDirect,
        achieved_tol: residual,
    }
}

/// Eigenvalues of a symmetric dense matrix.
pub fn symmetric_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(matrix.clone()).eigenvalues.iter().copied().collect()
}

pub fn max_asymmetry(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows();
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in 0..r {
            worst = worst.max((matrix[(r, c)] - matrix[(c, r)]).abs());
        }
    }
    worst
}

/// Observed order between two refinement levels.
pub fn observed_order(h1: f64, e1: f64, h2: f64, e2: f64) -> f64 {
    (e1 / e2).ln() / (h1 / h2).ln()
}
