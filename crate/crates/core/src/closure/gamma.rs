//! Scalar solvent-fraction equation of the lattice-gas closure.
//!
//! With `s = ln γ` the equation `γ − 1 + Σ v_j c_j^∞ (γ/γ^∞)^{v_j/v_0} e^{−z_j u} = 0`
//! becomes `φ(s) = ln Σ_j exp(a_j(s)) − ln(1 − e^s) = 0`, where
//! `a_j = ln(v_j c_j^∞) + (v_j/v_0)(s − ln γ^∞) − z_j u`. `φ` is convex and
//! strictly increasing on `s < 0`, tends to `−∞` on the left and `+∞` at `0`,
//! so safeguarded Newton with a bisection fallback always converges. Working
//! in `s` keeps very small solvent fractions (`γ ~ e^{−800}` next to highly
//! charged surfaces) representable.

use super::{charge_derivative_from, BulkState, Closure, IonSpecies};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA_TOL: f64 = 1e-14;
pub const GAMMA_MAX_ITER: usize = 100;

/// The literal residual `γ − 1 + Σ v_j c_j^∞ (γ/γ^∞)^{v_j/v_0} exp(−z_j u)`.
pub fn f_gamma(gamma: f64, u: f64, bulk: &BulkState) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("solvent fraction must be positive, got {gamma}")));
    }
    let ln_ratio = (gamma / bulk.gamma_inf()).ln();
    let mut f = gamma - 1.0;
    for (l, s) in bulk.species().iter().enumerate() {
        f += s.volume * s.bulk * (bulk.ratio[l] * ln_ratio - bulk.z[l] * u).exp();
    }
    Ok(f)
}

/// `φ(s)`, `φ'(s)` and the magnitude of the terms that enter `φ` (for a roundoff floor).
#[inline]
fn log_residual(s: f64, u: f64, bulk: &BulkState) -> (f64, f64, f64) {
    let shift = s - bulk.ln_gamma_inf();
    let mut amax = f64::NEG_INFINITY;
    for l in 0..bulk.z.len() {
        amax = amax.max(bulk.ln_vc[l] + bulk.ratio[l] * shift - bulk.z[l] * u);
    }
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for l in 0..bulk.z.len() {
        let w = (bulk.ln_vc[l] + bulk.ratio[l] * shift - bulk.z[l] * u - amax).exp();
        sum += w;
        wsum += bulk.ratio[l] * w;
    }
    let one_minus_gamma = -s.exp_m1();
    let lse = amax + sum.ln();
    let ln_omg = one_minus_gamma.ln();
    let phi = lse - ln_omg;
    let dphi = wsum / sum + s.exp() / one_minus_gamma;
    (phi, dphi, amax.abs().max(ln_omg.abs()).max(1.0))
}

/// Solves for `ln γ` at potential `u`.
///
/// `init` is an initial guess for `ln γ` (defaults to `ln γ^∞`). Converges when
/// `|φ| ≤ tol`, or when the residual or the Newton update reaches roundoff.
pub fn solve_ln_gamma(u: f64, bulk: &BulkState, init: Option<f64>, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("solvent-fraction tolerance must be positive, got {tol}")));
    }
    if !u.is_finite() {
        return Err(Error::numerical("solve_gamma", format!("non-finite potential {u}")));
    }
    let mut s = match init {
        Some(g) if g < 0.0 && g.is_finite() => g,
        _ => bulk.ln_gamma_inf(),
    };
    let mut lo = f64::NEG_INFINITY;
    let mut hi = 0.0f64;
    let mut last = f64::NAN;
    for _ in 0..GAMMA_MAX_ITER {
        let (phi, dphi, scale) = log_residual(s, u, bulk);
        last = phi;
        if phi.abs() <= tol || phi.abs() <= 8.0 * f64::EPSILON * scale {
            // the Newton correction is already at hand and only sharpens the root
            let polished = s - phi / dphi;
            return Ok(if polished < 0.0 && polished.is_finite() { polished } else { s });
        }
        if phi < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mut next = s - phi / dphi;
        if !(next > lo && next < hi) {
            next = if lo.is_finite() {
                0.5 * (lo + hi)
            } else {
                // only reachable with a non-finite Newton step: march left until bracketed
                s - 1.0 - s.abs()
            };
        }
        if (next - s).abs() <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::numerical(
        "solve_gamma",
        format!("no convergence in {GAMMA_MAX_ITER} iterations at u = {u}; last log-residual {last:e}"),
    ))
}

/// Solvent volume fraction `γ ∈ (0, 1)` at potential `u`.
pub fn solve_gamma(u: f64, bulk: &BulkState, init_guess: Option<f64>, tol: f64) -> Result<f64> {
    if let Some(g) = init_guess {
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::invalid(format!("initial solvent fraction must lie in (0, 1), got {g}")));
        }
    }
    let s = solve_ln_gamma(u, bulk, init_guess.map(f64::ln), tol)?;
    if s == bulk.ln_gamma_inf() {
        return Ok(bulk.gamma_inf());
    }
    Ok(s.exp())
}

pub fn concentrations_from_gamma(gamma: f64, u: f64, bulk: &BulkState) -> Vec<f64> {
    let s = gamma.ln();
    (0..bulk.species().len()).map(|l| bulk.concentration(l, s, u)).collect()
}

/// `d ln γ / du = v_0 Σ z_l v_l c_l / (v_0 γ + Σ v_l² c_l)`.
pub fn ln_gamma_prime(gamma: f64, c: &[f64], bulk: &BulkState) -> f64 {
    let v0 = bulk.solvent_volume();
    let mut num = 0.0;
    let mut den = v0 * gamma;
    for (s, &cl) in bulk.species().iter().zip(c) {
        num += s.valence as f64 * s.volume * cl;
        den += s.volume * s.volume * cl;
    }
    v0 * num / den
}

/// `dγ/du = v_0 γ Σ z_l v_l c_l / (v_0 γ + Σ v_l² c_l)`.
pub fn gamma_prime(gamma: f64, c: &[f64], bulk: &BulkState) -> f64 {
    gamma * ln_gamma_prime(gamma, c, bulk)
}

/// `dc_l/du = (v_l γ' / (v_0 γ) − z_l) c_l`.
pub fn concentration_prime(gamma: f64, gamma_prime: f64, c: &[f64], bulk: &BulkState) -> Vec<f64> {
    let sp = gamma_prime / gamma;
    (0..c.len()).map(|l| (bulk.ratio[l] * sp - bulk.z[l]) * c[l]).collect()
}

/// `Σ z_l dc_l/du` evaluated in a form that cannot round to a positive value.
pub fn charge_derivative(gamma: f64, c: &[f64], bulk: &BulkState) -> f64 {
    charge_derivative_from(&bulk.z, bulk.species(), bulk.solvent_volume() * gamma, c)
}

/// Steric closure evaluated by solving the solvent-fraction equation at every call.
#[derive(Debug, Clone)]
pub struct StericDirect {
    bulk: BulkState,
    tol: f64,
}

impl StericDirect {
    pub fn new(bulk: BulkState, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("solvent-fraction tolerance must be positive, got {tol}")));
        }
        Ok(Self { bulk, tol })
    }

    pub fn bulk(&self) -> &BulkState {
        &self.bulk
    }

    /// `(ln γ, d ln γ/du)` at `u`.
    pub fn log_state(&self, u: f64) -> Result<(f64, f64)> {
        let s = solve_ln_gamma(u, &self.bulk, None, self.tol)?;
        Ok((s, self.ln_gamma_prime_at(s, u)))
    }

    fn ln_gamma_prime_at(&self, s: f64, u: f64) -> f64 {
        let b = &self.bulk;
        let v0 = b.solvent_volume();
        let mut num = 0.0;
        let mut den = v0 * s.exp();
        for (l, sp) in b.species().iter().enumerate() {
            let c = b.concentration(l, s, u);
            num += b.z[l] * sp.volume * c;
            den += sp.volume * sp.volume * c;
        }
        v0 * num / den
    }
}

impl Closure for StericDirect {
    fn species(&self) -> &[IonSpecies] {
        self.bulk.species()
    }

    fn charge(&self, u: f64) -> Result<(f64, f64)> {
        let s = solve_ln_gamma(u, &self.bulk, None, self.tol)?;
        Ok(self.bulk.charge_from_log(s, u))
    }

    fn antiderivative(&self, u: f64) -> Result<f64> {
        let s = solve_ln_gamma(u, &self.bulk, None, self.tol)?;
        Ok(self.bulk.antiderivative_from_log(s, u))
    }

    fn concentrations(&self, u: f64, c: &mut [f64], dc: &mut [f64]) -> Result<()> {
        let (s, sp) = self.log_state(u)?;
        for l in 0..self.bulk.z.len() {
            c[l] = self.bulk.concentration(l, s, u);
            dc[l] = (self.bulk.ratio[l] * sp - self.bulk.z[l]) * c[l];
        }
        Ok(())
    }

    fn is_steric(&self) -> bool {
        true
    }
}
