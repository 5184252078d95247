//! Local ionic closures: concentrations as functions of the local potential.
//!
//! Two closures are provided. The lattice-gas (steric) closure ties all
//! species to the solvent volume fraction `γ = 1 − Σ v_l c_l`, which solves a
//! scalar monotone equation at each potential value; it is available as a
//! direct solve ([`StericDirect`]) or through a precomputed table
//! ([`StericTable`]). The classical closure is the plain Boltzmann factor.
//!
//! Potentials are dimensionless (`u = βeψ`), concentrations in ions/Å³,
//! volumes in Å³.

mod gamma;
mod table;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use gamma::{
    charge_derivative, concentration_prime, concentrations_from_gamma, f_gamma, gamma_prime, ln_gamma_prime, solve_gamma, solve_ln_gamma,
    StericDirect, DEFAULT_GAMMA_TOL, GAMMA_MAX_ITER,
};
pub use table::{StericTable, TableSample, DEFAULT_TABLE_SPACING};

/// Largest number of ionic species a closure accepts.
pub const MAX_SPECIES: usize = 16;

/// Largest exponent magnitude passed to `exp` by the classical closure.
pub const CLASSICAL_EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpecies {
    pub valence: i32,
    /// Å³
    pub volume: f64,
    /// ions/Å³
    pub bulk: f64,
}

impl IonSpecies {
    pub fn new(valence: i32, volume: f64, bulk: f64) -> Result<Self> {
        if !(volume > 0.0 && volume.is_finite()) {
            return Err(Error::invalid(format!("ion volume must be positive, got {volume}")));
        }
        if !(bulk > 0.0 && bulk.is_finite()) {
            return Err(Error::invalid(format!("bulk concentration must be positive, got {bulk}")));
        }
        Ok(Self { valence, volume, bulk })
    }

    pub fn valence_to_volume(&self) -> f64 {
        self.valence as f64 / self.volume
    }
}

/// Species, solvent molecule volume and the derived bulk solvent fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkState {
    species: Vec<IonSpecies>,
    solvent_volume: f64,
    gamma_inf: f64,
    ln_gamma_inf: f64,
    // per-species constants used in the hot paths
    pub(crate) z: Vec<f64>,
    pub(crate) ratio: Vec<f64>,
    pub(crate) ln_bulk: Vec<f64>,
    pub(crate) ln_vc: Vec<f64>,
}

impl BulkState {
    pub fn new(species: Vec<IonSpecies>, solvent_volume: f64) -> Result<Self> {
        if !(solvent_volume > 0.0 && solvent_volume.is_finite()) {
            return Err(Error::invalid(format!("solvent volume must be positive, got {solvent_volume}")));
        }
        if species.is_empty() {
            return Err(Error::invalid("the steric closure needs at least one ionic species"));
        }
        if species.len() > MAX_SPECIES {
            return Err(Error::invalid(format!("at most {MAX_SPECIES} ionic species are supported")));
        }
        for s in &species {
            IonSpecies::new(s.valence, s.volume, s.bulk)?;
        }
        let packed: f64 = species.iter().map(|s| s.volume * s.bulk).sum();
        let gamma_inf = 1.0 - packed;
        if !(gamma_inf > 0.0 && gamma_inf < 1.0) {
            return Err(Error::invalid(format!(
                "bulk solvent fraction 1 - sum(v c) = {gamma_inf} is outside (0, 1)"
            )));
        }
        Ok(Self {
            z: species.iter().map(|s| s.valence as f64).collect(),
            ratio: species.iter().map(|s| s.volume / solvent_volume).collect(),
            ln_bulk: species.iter().map(|s| s.bulk.ln()).collect(),
            ln_vc: species.iter().map(|s| (s.volume * s.bulk).ln()).collect(),
            species,
            solvent_volume,
            gamma_inf,
            ln_gamma_inf: gamma_inf.ln(),
        })
    }

    pub fn species(&self) -> &[IonSpecies] {
        &self.species
    }

    pub fn solvent_volume(&self) -> f64 {
        self.solvent_volume
    }

    pub fn gamma_inf(&self) -> f64 {
        self.gamma_inf
    }

    pub fn ln_gamma_inf(&self) -> f64 {
        self.ln_gamma_inf
    }

    /// `ln c_l` at solvent fraction `e^s` and potential `u`; finite even where `c_l` underflows.
    #[inline]
    pub fn ln_concentration(&self, l: usize, s: f64, u: f64) -> f64 {
        self.ln_bulk[l] + self.ratio[l] * (s - self.ln_gamma_inf) - self.z[l] * u
    }

    /// `c_l = c_l^∞ (γ/γ^∞)^{v_l/v_0} e^{−z_l u}` written in terms of `s = ln γ`.
    #[inline]
    pub(crate) fn concentration(&self, l: usize, s: f64, u: f64) -> f64 {
        self.ln_concentration(l, s, u).exp()
    }

    /// Charge density `Σ z c` and its derivative given `s = ln γ`.
    ///
    /// The derivative `Σ z_l c_l'` equals
    /// `−(v_0 γ Σ z² c + ½ Σ_ij c_i c_j (z_i v_j − z_j v_i)²) / (v_0 γ + Σ v² c)`,
    /// a ratio of nonnegative sums, so it stays nonpositive in floating point even
    /// where the two terms of the direct expression nearly cancel.
    #[inline]
    pub(crate) fn charge_from_log(&self, s: f64, u: f64) -> (f64, f64) {
        let n = self.z.len();
        let mut c = [0.0; MAX_SPECIES];
        let mut rho = 0.0;
        for l in 0..n {
            c[l] = self.concentration(l, s, u);
            rho += self.z[l] * c[l];
        }
        (rho, charge_derivative_from(&self.z, &self.species, self.solvent_volume * s.exp(), &c[..n]))
    }

    /// Closed-form antiderivative of the steric charge density:
    /// `Q(u) = (ln γ − γ)/v_0 − Σ c_l`, with `dQ/du = Σ z_l c_l`.
    #[inline]
    pub(crate) fn antiderivative_from_log(&self, s: f64, u: f64) -> f64 {
        let mut total = 0.0;
        for l in 0..self.z.len() {
            total += self.concentration(l, s, u);
        }
        (s - s.exp()) / self.solvent_volume - total
    }
}

/// `dρ/du` of the steric closure from `v_0 γ` and the concentrations.
pub(crate) fn charge_derivative_from(z: &[f64], species: &[IonSpecies], v0_gamma: f64, c: &[f64]) -> f64 {
    let mut z2c = 0.0;
    let mut v2c = 0.0;
    let mut cross = 0.0;
    for i in 0..c.len() {
        z2c += z[i] * z[i] * c[i];
        v2c += species[i].volume * species[i].volume * c[i];
        for j in 0..i {
            let d = z[i] * species[j].volume - z[j] * species[i].volume;
            cross += c[i] * c[j] * d * d;
        }
    }
    -(v0_gamma * z2c + cross) / (v0_gamma + v2c)
}

/// Interface shared by the classical and steric closures.
///
/// `charge` returns the ionic charge density `ρ(u) = Σ z_l c_l(u)` (e/Å³) and
/// `dρ/du`, which is never positive. `antiderivative` is any fixed
/// antiderivative of `ρ`; only differences are meaningful.
pub trait Closure: Send + Sync {
    fn species(&self) -> &[IonSpecies];
    fn charge(&self, u: f64) -> Result<(f64, f64)>;
    fn antiderivative(&self, u: f64) -> Result<f64>;
    /// Writes `c_l(u)` and `dc_l/du` for every species.
    fn concentrations(&self, u: f64, c: &mut [f64], dc: &mut [f64]) -> Result<()>;
    /// True when concentrations are bounded by `1/v_l`.
    fn is_steric(&self) -> bool;
    /// Number of evaluations that fell outside the closure's valid range and were clamped.
    fn saturation_count(&self) -> u64 {
        0
    }
    fn reset_saturation(&self) {}
}

/// Plain Boltzmann closure `c_l = c_l^∞ e^{−z_l u}`.
#[derive(Debug)]
pub struct ClassicalClosure {
    species: Vec<IonSpecies>,
    saturated: AtomicU64,
}

impl ClassicalClosure {
    pub fn new(species: Vec<IonSpecies>) -> Result<Self> {
        for s in &species {
            IonSpecies::new(s.valence, s.volume, s.bulk)?;
        }
        Ok(Self {
            species,
            saturated: AtomicU64::new(0),
        })
    }

    #[inline]
    fn exponent(&self, z: f64, u: f64) -> f64 {
        let a = -z * u;
        if a.abs() > CLASSICAL_EXP_LIMIT {
            self.saturated.fetch_add(1, Ordering::Relaxed);
            a.clamp(-CLASSICAL_EXP_LIMIT, CLASSICAL_EXP_LIMIT)
        } else {
            a
        }
    }
}

/// Concentrations and derivatives of the classical closure, returned as `(c, dc/du)`.
pub fn classical_closure(u: f64, species: &[IonSpecies]) -> (Vec<f64>, Vec<f64>) {
    let closure = ClassicalClosure {
        species: species.to_vec(),
        saturated: AtomicU64::new(0),
    };
    let mut c = vec![0.0; species.len()];
    let mut dc = vec![0.0; species.len()];
    closure.concentrations(u, &mut c, &mut dc).expect("classical closure cannot fail");
    (c, dc)
}

impl Closure for ClassicalClosure {
    fn species(&self) -> &[IonSpecies] {
        &self.species
    }

    fn charge(&self, u: f64) -> Result<(f64, f64)> {
        let mut rho = 0.0;
        let mut drho = 0.0;
        for s in &self.species {
            let z = s.valence as f64;
            let c = s.bulk * self.exponent(z, u).exp();
            rho += z * c;
            drho -= z * z * c;
        }
        Ok((rho, drho))
    }

    fn antiderivative(&self, u: f64) -> Result<f64> {
        Ok(-self
            .species
            .iter()
            .map(|s| s.bulk * self.exponent(s.valence as f64, u).exp())
            .sum::<f64>())
    }

    fn concentrations(&self, u: f64, c: &mut [f64], dc: &mut [f64]) -> Result<()> {
        for (l, s) in self.species.iter().enumerate() {
            let z = s.valence as f64;
            c[l] = s.bulk * self.exponent(z, u).exp();
            dc[l] = -z * c[l];
        }
        Ok(())
    }

    fn is_steric(&self) -> bool {
        false
    }

    fn saturation_count(&self) -> u64 {
        self.saturated.load(Ordering::Relaxed)
    }

    fn reset_saturation(&self) {
        self.saturated.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solute::molar_to_number_density;

    #[test]
    fn species_validation() {
        assert!(IonSpecies::new(1, 0.0, 1e-3).is_err());
        assert!(IonSpecies::new(1, 10.0, 0.0).is_err());
        assert!(IonSpecies::new(-2, 10.0, 1e-3).is_ok());
    }

    #[test]
    fn bulk_rejects_overpacking() {
        let s = IonSpecies::new(1, 100.0, 0.006).unwrap();
        let err = BulkState::new(vec![s, s], 27.0).unwrap_err().to_string();
        assert!(err.contains("-0.19999") && err.contains("outside (0, 1)"), "{err}");
        let b = BulkState::new(vec![IonSpecies::new(1, 30.0, 0.1 / 30.0).unwrap()], 30.0).unwrap();
        assert!((b.gamma_inf() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn classical_values() {
        let c0 = molar_to_number_density(0.1);
        let s = vec![IonSpecies::new(1, 21.0, c0).unwrap(), IonSpecies::new(-1, 47.0, c0).unwrap()];
        let (c, dc) = classical_closure(0.0, &s);
        assert_eq!(c, vec![c0, c0]);
        assert_eq!(dc, vec![-c0, c0]);
        let (c, _) = classical_closure(-5.0, &s);
        let molar = crate::solute::number_density_to_molar(c[0]);
        assert!((molar - 0.1 * 5f64.exp()).abs() < 1e-12);
        assert!((molar - 14.84).abs() < 0.01);
        let mut last = f64::INFINITY;
        for i in -50..50 {
            let (c, _) = classical_closure(i as f64 * 0.3, &s);
            assert!(c[0] < last);
            last = c[0];
        }
    }

    #[test]
    fn classical_clamps_and_counts() {
        let s = vec![IonSpecies::new(2, 21.0, 1e-4).unwrap()];
        let cl = ClassicalClosure::new(s).unwrap();
        let (rho, drho) = cl.charge(-400.0).unwrap();
        assert!(rho.is_finite() && drho.is_finite());
        assert_eq!(cl.saturation_count(), 1);
        cl.charge(1.0).unwrap();
        assert_eq!(cl.saturation_count(), 1);
        cl.reset_saturation();
        assert_eq!(cl.saturation_count(), 0);
    }

    #[test]
    fn classical_antiderivative_matches_charge() {
        let s = vec![IonSpecies::new(1, 21.0, 6e-5).unwrap(), IonSpecies::new(-2, 47.0, 3e-5).unwrap()];
        let cl = ClassicalClosure::new(s).unwrap();
        for i in -20..20 {
            let u = i as f64 * 0.37;
            let fd = stericpb_oracles::central_difference(|x| cl.antiderivative(x).unwrap(), u, 1e-5).scalar();
            let (rho, drho) = cl.charge(u).unwrap();
            assert!((fd - rho).abs() <= 1e-7 * rho.abs().max(1e-6));
            let fd2 = stericpb_oracles::central_difference(|x| cl.charge(x).unwrap().0, u, 1e-5).scalar();
            assert!((fd2 - drho).abs() <= 1e-6 * drho.abs().max(1e-6));
        }
    }
}
