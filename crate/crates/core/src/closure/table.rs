//! Precomputed steric closure on a uniform potential mesh.
//!
//! The table stores `ln γ` and `d ln γ / du` at the nodes, built by a
//! continuation sweep so each solve starts from its neighbour's root. Lookups
//! use local cubic interpolation and rebuild the concentrations from the
//! interpolated values, so memory stays independent of the species count.
//! A cumulative Simpson integral of the charge density backs the discrete
//! energy.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use super::gamma::solve_ln_gamma;
use super::{BulkState, Closure, IonSpecies};
use crate::error::{Error, Result};

/// Default potential spacing of the table mesh.
pub const DEFAULT_TABLE_SPACING: f64 = 0.005;

const TABLE_MAGIC: &str = "stericpb-table 1";

/// Interpolated closure state at one potential value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableSample {
    pub ln_gamma: f64,
    pub ln_gamma_prime: f64,
    /// Potential actually used, after clamping to the table range.
    pub u: f64,
}

impl TableSample {
    pub fn gamma(&self) -> f64 {
        self.ln_gamma.exp()
    }

    pub fn gamma_prime(&self) -> f64 {
        self.ln_gamma.exp() * self.ln_gamma_prime
    }
}

#[derive(Debug)]
pub struct StericTable {
    bulk: BulkState,
    nodes: Vec<f64>,
    spacing: f64,
    ln_gamma: Vec<f64>,
    ln_gamma_prime: Vec<f64>,
    charge: Vec<f64>,
    cumulative: Vec<f64>,
    saturated: AtomicU64,
}

impl StericTable {
    /// Tabulates the closure on `N_ψ + 1` equally spaced nodes spanning `[ψ_L, ψ_R]`.
    pub fn build(bulk: BulkState, psi_l: f64, psi_r: f64, n_psi: usize, tol: f64) -> Result<Self> {
        if !(psi_l.is_finite() && psi_r.is_finite() && psi_l < psi_r) {
            return Err(Error::invalid(format!("table interval [{psi_l}, {psi_r}] is empty or not finite")));
        }
        if n_psi < 4 {
            return Err(Error::invalid(format!("table needs at least 4 intervals, got {n_psi}")));
        }
        let spacing = (psi_r - psi_l) / n_psi as f64;
        let nodes: Vec<f64> = (0..=n_psi).map(|i| if i == n_psi { psi_r } else { psi_l + i as f64 * spacing }).collect();
        let mut ln_gamma = Vec::with_capacity(nodes.len());
        let mut ln_gamma_prime = Vec::with_capacity(nodes.len());
        let mut charge = Vec::with_capacity(nodes.len());
        let mut mids = Vec::with_capacity(n_psi);
        let mut guess = None;
        for (i, &p) in nodes.iter().enumerate() {
            let s = solve_ln_gamma(p, &bulk, guess, tol)
                .map_err(|e| Error::numerical("build_table", format!("node {i} (u = {p}): {e}")))?;
            let sp = log_derivative(&bulk, s, p);
            ln_gamma.push(s);
            ln_gamma_prime.push(sp);
            charge.push(bulk.charge_from_log(s, p).0);
            if i > 0 {
                let m = 0.5 * (nodes[i - 1] + p);
                let sm = solve_ln_gamma(m, &bulk, Some(s), tol)
                    .map_err(|e| Error::numerical("build_table", format!("midpoint u = {m}: {e}")))?;
                mids.push(bulk.charge_from_log(sm, m).0);
            }
            guess = Some(s);
        }
        let mut cumulative = Vec::with_capacity(nodes.len());
        cumulative.push(0.0);
        for i in 0..n_psi {
            let h = nodes[i + 1] - nodes[i];
            let step = h / 6.0 * (charge[i] + 4.0 * mids[i] + charge[i + 1]);
            cumulative.push(cumulative[i] + step);
        }
        log::debug!("steric table: {} nodes on [{psi_l}, {psi_r}], spacing {spacing}", nodes.len());
        Ok(Self {
            bulk,
            nodes,
            spacing,
            ln_gamma,
            ln_gamma_prime,
            charge,
            cumulative,
            saturated: AtomicU64::new(0),
        })
    }

    /// Builds a table on `[ψ_L, ψ_R]` with node spacing at most `max_spacing`.
    pub fn build_with_spacing(bulk: BulkState, psi_l: f64, psi_r: f64, max_spacing: f64, tol: f64) -> Result<Self> {
        if !(max_spacing > 0.0) {
            return Err(Error::invalid(format!("table spacing must be positive, got {max_spacing}")));
        }
        let n = (((psi_r - psi_l) / max_spacing).ceil() as usize).max(4);
        Self::build(bulk, psi_l, psi_r, n, tol)
    }

    pub fn bulk(&self) -> &BulkState {
        &self.bulk
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn range(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    pub fn ln_gamma_values(&self) -> &[f64] {
        &self.ln_gamma
    }

    pub fn ln_gamma_prime_values(&self) -> &[f64] {
        &self.ln_gamma_prime
    }

    pub fn cumulative_integral(&self) -> &[f64] {
        &self.cumulative
    }

    /// Locates `u` in the mesh: interval index, local coordinate in `[0, 1)`,
    /// and whether `u` was clamped.
    #[inline]
    fn locate(&self, u: f64) -> (usize, f64, bool) {
        let n = self.nodes.len() - 1;
        let (lo, hi) = (self.nodes[0], self.nodes[n]);
        if !(u >= lo) {
            return (0, 0.0, true);
        }
        if u >= hi {
            return (n, 0.0, u > hi);
        }
        let mut i = (((u - lo) / self.spacing) as usize).min(n - 1);
        while i > 0 && self.nodes[i] > u {
            i -= 1;
        }
        while i + 1 < n && self.nodes[i + 1] <= u {
            i += 1;
        }
        (i, (u - self.nodes[i]) / self.spacing, false)
    }

    /// Four-point Lagrange interpolation of `values` around interval `i`.
    #[inline]
    fn cubic(&self, values: &[f64], i: usize, t: f64) -> f64 {
        if t == 0.0 {
            return values[i];
        }
        let n = values.len();
        let start = i.saturating_sub(1).min(n - 4);
        let x = t + (i - start) as f64; // position relative to node `start`
        let w0 = -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0;
        let w1 = x * (x - 2.0) * (x - 3.0) / 2.0;
        let w2 = -x * (x - 1.0) * (x - 3.0) / 2.0;
        let w3 = x * (x - 1.0) * (x - 2.0) / 6.0;
        w0 * values[start] + w1 * values[start + 1] + w2 * values[start + 2] + w3 * values[start + 3]
    }

    /// Interpolated `ln γ` and `d ln γ/du`. Out-of-range queries return the
    /// endpoint state and increment the saturation counter.
    pub fn eval(&self, u: f64) -> TableSample {
        let (i, t, clamped) = self.locate(u);
        if clamped {
            self.saturated.fetch_add(1, Ordering::Relaxed);
        }
        TableSample {
            ln_gamma: self.cubic(&self.ln_gamma, i, t),
            ln_gamma_prime: self.cubic(&self.ln_gamma_prime, i, t),
            u: if clamped || t == 0.0 { self.nodes[i] } else { u },
        }
    }

    /// Full interpolated state: `(γ, γ', c, dc/du, ∫ρ)`.
    pub fn eval_full(&self, u: f64) -> (f64, f64, Vec<f64>, Vec<f64>, f64) {
        let s = self.eval(u);
        let n = self.bulk.species().len();
        let mut c = vec![0.0; n];
        let mut dc = vec![0.0; n];
        self.fill_concentrations(&s, &mut c, &mut dc);
        let integral = self.integral(u);
        (s.gamma(), s.gamma_prime(), c, dc, integral)
    }

    fn fill_concentrations(&self, s: &TableSample, c: &mut [f64], dc: &mut [f64]) {
        for l in 0..self.bulk.z.len() {
            c[l] = self.bulk.concentration(l, s.ln_gamma, s.u);
            dc[l] = (self.bulk.ratio[l] * s.ln_gamma_prime - self.bulk.z[l]) * c[l];
        }
    }

    /// Cumulative integral of the charge density from `ψ_L` to `u`.
    ///
    /// Between nodes a cubic Hermite interpolant uses the node integrals and the
    /// node charge densities as slopes; outside the range it continues linearly.
    pub fn integral(&self, u: f64) -> f64 {
        let n = self.nodes.len() - 1;
        let (lo, hi) = self.range();
        if u <= lo {
            return self.charge[0] * (u - lo);
        }
        if u >= hi {
            return self.cumulative[n] + self.charge[n] * (u - hi);
        }
        let (i, t, _) = self.locate(u);
        if t == 0.0 {
            return self.cumulative[i];
        }
        let h = self.nodes[i + 1] - self.nodes[i];
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.cumulative[i] + h10 * h * self.charge[i] + h01 * self.cumulative[i + 1] + h11 * h * self.charge[i + 1]
    }

    /// Largest deviation between the analytic `dγ/du` and a five-point
    /// centered difference of the tabulated `γ`, over nodes with two
    /// neighbours on each side.
    pub fn validate_derivatives(&self) -> f64 {
        let g: Vec<f64> = self.ln_gamma.iter().map(|s| s.exp()).collect();
        let h = self.spacing;
        let mut worst = 0.0f64;
        for i in 2..g.len().saturating_sub(2) {
            let stencil = (-g[i + 2] + 8.0 * g[i + 1] - 8.0 * g[i - 1] + g[i - 2]) / (12.0 * h);
            let analytic = g[i] * self.ln_gamma_prime[i];
            worst = worst.max((stencil - analytic).abs());
        }
        worst
    }

    /// Text dump: a header with the bulk parameters and mesh, then one line
    /// per node with `u`, `ln γ`, `d ln γ/du`, `ρ` and the cumulative integral.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{TABLE_MAGIC}");
        let _ = writeln!(s, "solvent_volume {:?}", self.bulk.solvent_volume());
        for sp in self.bulk.species() {
            let _ = writeln!(s, "species {} {:?} {:?}", sp.valence, sp.volume, sp.bulk);
        }
        let (lo, hi) = self.range();
        let _ = writeln!(s, "mesh {:?} {:?} {}", lo, hi, self.nodes.len() - 1);
        for i in 0..self.nodes.len() {
            let _ = writeln!(
                s,
                "{:?} {:?} {:?} {:?} {:?}",
                self.nodes[i], self.ln_gamma[i], self.ln_gamma_prime[i], self.charge[i], self.cumulative[i]
            );
        }
        s
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// Loads a dumped table, rejecting it unless its bulk parameters equal `expected`.
    pub fn parse(text: &str, source_name: &str, expected: &BulkState) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == TABLE_MAGIC => {}
            _ => return Err(err(1, format!("missing '{TABLE_MAGIC}' header"))),
        }
        let num = |ln: usize, t: &str| -> Result<f64> { t.parse().map_err(|_| err(ln + 1, format!("bad number '{t}'"))) };
        let mut v0 = None;
        let mut species = Vec::new();
        let mut mesh = None;
        for (ln, line) in lines.by_ref() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[0] {
                "solvent_volume" if parts.len() == 2 => v0 = Some(num(ln, parts[1])?),
                "species" if parts.len() == 4 => {
                    let z: i32 = parts[1].parse().map_err(|_| err(ln + 1, format!("bad valence '{}'", parts[1])))?;
                    species.push(IonSpecies::new(z, num(ln, parts[2])?, num(ln, parts[3])?)?);
                }
                "mesh" if parts.len() == 4 => {
                    let n: usize = parts[3].parse().map_err(|_| err(ln + 1, format!("bad node count '{}'", parts[3])))?;
                    mesh = Some((num(ln, parts[1])?, num(ln, parts[2])?, n));
                    break;
                }
                _ => return Err(err(ln + 1, format!("unexpected header line '{line}'"))),
            }
        }
        let v0 = v0.ok_or_else(|| err(0, "missing solvent_volume".into()))?;
        let (lo, hi, n) = mesh.ok_or_else(|| err(0, "missing mesh line".into()))?;
        let bulk = BulkState::new(species, v0)?;
        if bulk != *expected {
            return Err(Error::Config(format!(
                "{source_name}: table was built for different bulk parameters than this run"
            )));
        }
        let mut cols: [Vec<f64>; 5] = Default::default();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(err(ln + 1, format!("expected 5 columns, found {}", parts.len())));
            }
            for (col, t) in cols.iter_mut().zip(parts) {
                col.push(num(ln, t)?);
            }
        }
        if cols[0].len() != n + 1 || n < 4 {
            return Err(err(0, format!("expected {} node rows, found {}", n + 1, cols[0].len())));
        }
        if cols[0][0] != lo || cols[0][n] != hi || cols[0].windows(2).any(|w| !(w[1] > w[0])) {
            return Err(err(0, "node column is inconsistent with the mesh line".into()));
        }
        if cols[1].iter().any(|s| !(*s < 0.0)) {
            return Err(err(0, "ln(gamma) must be negative at every node".into()));
        }
        let [nodes, ln_gamma, ln_gamma_prime, charge, cumulative] = cols;
        Ok(Self {
            bulk,
            spacing: (hi - lo) / n as f64,
            nodes,
            ln_gamma,
            ln_gamma_prime,
            charge,
            cumulative,
            saturated: AtomicU64::new(0),
        })
    }

    pub fn load(path: &Path, expected: &BulkState) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), expected)
    }
}

fn log_derivative(bulk: &BulkState, s: f64, u: f64) -> f64 {
    let v0 = bulk.solvent_volume();
    let mut num = 0.0;
    let mut den = v0 * s.exp();
    for (l, sp) in bulk.species().iter().enumerate() {
        let c = bulk.concentration(l, s, u);
        num += bulk.z[l] * sp.volume * c;
        den += sp.volume * sp.volume * c;
    }
    v0 * num / den
}

impl Closure for StericTable {
    fn species(&self) -> &[IonSpecies] {
        self.bulk.species()
    }

    fn charge(&self, u: f64) -> Result<(f64, f64)> {
        let s = self.eval(u);
        Ok(self.bulk.charge_from_log(s.ln_gamma, s.u))
    }

    fn antiderivative(&self, u: f64) -> Result<f64> {
        Ok(self.integral(u))
    }

    fn concentrations(&self, u: f64, c: &mut [f64], dc: &mut [f64]) -> Result<()> {
        let s = self.eval(u);
        self.fill_concentrations(&s, c, dc);
        Ok(())
    }

    fn is_steric(&self) -> bool {
        true
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
    use crate::closure::{solve_ln_gamma, StericDirect, DEFAULT_GAMMA_TOL};
    use crate::solute::molar_to_number_density;

    fn sphere_bulk() -> BulkState {
        let c = molar_to_number_density(0.1);
        BulkState::new(
            vec![IonSpecies::new(1, 2.76f64.powi(3), c).unwrap(), IonSpecies::new(-1, 3.62f64.powi(3), c).unwrap()],
            2.75f64.powi(3),
        )
        .unwrap()
    }

    #[test]
    fn nodes_are_exact() {
        let t = StericTable::build(sphere_bulk(), -20.0, 20.0, 400, DEFAULT_GAMMA_TOL).unwrap();
        for (i, &p) in t.nodes().iter().enumerate() {
            let s = t.eval(p);
            assert_eq!(s.ln_gamma, t.ln_gamma_values()[i]);
            assert_eq!(s.ln_gamma_prime, t.ln_gamma_prime_values()[i]);
            assert_eq!(t.integral(p), t.cumulative_integral()[i]);
        }
        assert_eq!(t.saturation_count(), 0);
    }

    #[test]
    fn midpoints_are_fourth_order() {
        let b = sphere_bulk();
        let mut errs = Vec::new();
        for &h in &[0.2, 0.1] {
            let n = (20.0 / h) as usize;
            let t = StericTable::build(b.clone(), -10.0, 10.0, n, DEFAULT_GAMMA_TOL).unwrap();
            let mut worst = 0.0f64;
            for w in t.nodes().windows(2) {
                let m = 0.5 * (w[0] + w[1]);
                let direct = solve_ln_gamma(m, &b, None, DEFAULT_GAMMA_TOL).unwrap().exp();
                worst = worst.max((t.eval(m).gamma() - direct).abs());
            }
            errs.push(worst);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.5, "errors {errs:?}, order {order}");
    }

    #[test]
    fn symmetric_electrolyte_gives_even_table() {
        let c = molar_to_number_density(0.5);
        let b = BulkState::new(vec![IonSpecies::new(1, 30.0, c).unwrap(), IonSpecies::new(-1, 30.0, c).unwrap()], 27.0).unwrap();
        let t = StericTable::build(b, -15.0, 15.0, 300, DEFAULT_GAMMA_TOL).unwrap();
        let g = t.ln_gamma_values();
        let n = g.len();
        for i in 0..n {
            assert!((g[i].exp() - g[n - 1 - i].exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn stencil_deviation_is_fourth_order() {
        let b = sphere_bulk();
        let coarse = StericTable::build(b.clone(), -8.0, 8.0, 160, DEFAULT_GAMMA_TOL).unwrap();
        let fine = StericTable::build(b, -8.0, 8.0, 320, DEFAULT_GAMMA_TOL).unwrap();
        let (dc, df) = (coarse.validate_derivatives(), fine.validate_derivatives());
        let order = (dc / df).log2();
        assert!(order > 3.5 && order < 4.5, "{dc:e} {df:e} order {order}");
    }

    #[test]
    fn clamps_outside_range() {
        let t = StericTable::build(sphere_bulk(), -5.0, 5.0, 100, DEFAULT_GAMMA_TOL).unwrap();
        let end = t.eval(5.0);
        let out = t.eval(6.0);
        assert_eq!(end.ln_gamma, out.ln_gamma);
        assert_eq!(t.saturation_count(), 1);
        t.eval(-7.0);
        assert_eq!(t.saturation_count(), 2);
        let (rho, _) = t.charge(6.0).unwrap();
        assert_eq!(rho, t.charge(5.0).unwrap().0);
    }

    #[test]
    fn matches_direct_closure() {
        let b = sphere_bulk();
        let t = StericTable::build_with_spacing(b.clone(), -50.0, 50.0, DEFAULT_TABLE_SPACING, DEFAULT_GAMMA_TOL).unwrap();
        let d = StericDirect::new(b, DEFAULT_GAMMA_TOL).unwrap();
        let mut c1 = [0.0; 2];
        let mut dc1 = [0.0; 2];
        let mut c2 = [0.0; 2];
        let mut dc2 = [0.0; 2];
        for i in 0..997 {
            let u = -49.0 + i as f64 * 0.0983;
            let (r1, d1) = t.charge(u).unwrap();
            let (r2, d2) = d.charge(u).unwrap();
            assert!((r1 - r2).abs() <= 1e-10 * r2.abs().max(1e-3), "u={u}");
            assert!((d1 - d2).abs() <= 1e-9 * d2.abs().max(1e-3), "u={u}");
            t.concentrations(u, &mut c1, &mut dc1).unwrap();
            d.concentrations(u, &mut c2, &mut dc2).unwrap();
            for l in 0..2 {
                assert!((c1[l] - c2[l]).abs() <= 1e-10 * c2[l].max(1e-8));
            }
            let i1 = t.integral(u) - t.integral(0.0);
            let i2 = d.antiderivative(u).unwrap() - d.antiderivative(0.0).unwrap();
            assert!((i1 - i2).abs() <= 1e-10 * i2.abs().max(1e-3), "u={u} {i1} {i2}");
        }
    }

    #[test]
    fn dump_and_load_round_trip() {
        let t = StericTable::build(sphere_bulk(), -5.0, 5.0, 50, DEFAULT_GAMMA_TOL).unwrap();
        let text = t.render();
        let back = StericTable::parse(&text, "mem", &sphere_bulk()).unwrap();
        assert_eq!(back.nodes(), t.nodes());
        assert_eq!(back.ln_gamma_values(), t.ln_gamma_values());
        assert_eq!(back.eval(1.234), t.eval(1.234));
        let other = BulkState::new(vec![IonSpecies::new(1, 30.0, 1e-3).unwrap()], 27.0).unwrap();
        assert!(matches!(StericTable::parse(&text, "mem", &other), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_mesh() {
        assert!(StericTable::build(sphere_bulk(), 1.0, 1.0, 10, 1e-14).is_err());
        assert!(StericTable::build(sphere_bulk(), 0.0, 1.0, 3, 1e-14).is_err());
    }
}
