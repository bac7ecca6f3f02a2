//! Kinetic coefficients `w_jk` and the SPME/APME generators.
//!
//! Both master equations share the form
//!
//! ```text
//! dp_j/dt = Σ_k C'_j w_jk p_k - Σ_k C'_k w_kj p_j
//! ```
//!
//! with `C' = +1` everywhere for SPME, and `C' = -1` on antimatter for APME.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::system::{indicators, partner, StateIndex, SystemSpec, STRUCTURE_TOL};
use crate::unitary::d_kernel;
use crate::RMatrix;

/// Default on-shell energy tolerance.
pub const DEFAULT_ETA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Spme,
    Apme,
}

impl Variant {
    /// `C'_j` for a signed state.
    pub fn sign(self, j: StateIndex) -> f64 {
        match self {
            Variant::Spme => 1.0,
            Variant::Apme => j.indicator(),
        }
    }

    /// `C'` in storage order.
    pub fn signs(self, n: usize) -> Vec<f64> {
        match self {
            Variant::Spme => vec![1.0; 2 * n],
            Variant::Apme => indicators(n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Spme => "spme",
            Variant::Apme => "apme",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Spme => "SPME",
            Variant::Apme => "APME",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spme" => Ok(Variant::Spme),
            "apme" => Ok(Variant::Apme),
            other => Err(format!("unknown variant `{other}` (expected spme|apme)")),
        }
    }
}

/// How the energy kernel in `w_jk` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateMode {
    /// Finite decoherence window: `w_jk = λ²|V_jk|² D(ε_j - ε_k, Δt)`.
    FiniteWindow { dt: f64 },
    /// δ-limit: `w_jk = 2π λ²|V_jk|² / eta_norm` for states in the same shell,
    /// where shells are the transitive closure of `|ε_j - ε_k| <= eta`.
    ///
    /// `eta_norm` stands in for the level density that normalises `2πδ` in a
    /// continuum; a small discrete system has none, so it is a free constant.
    OnShell { eta: f64, eta_norm: f64 },
}

impl RateMode {
    pub fn on_shell() -> Self {
        RateMode::OnShell { eta: DEFAULT_ETA, eta_norm: 1.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KineticsError {
    #[error("finite-window rates need dt > 0, got {0}")]
    Window(f64),
    #[error("on-shell rates need eta >= 0 and eta_norm > 0, got eta = {eta}, eta_norm = {eta_norm}")]
    OnShell { eta: f64, eta_norm: f64 },
    #[error("rate matrix must be square {dim}x{dim}, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticMatrix {
    w: RMatrix,
    mode: RateMode,
    lambda: f64,
    energies: Vec<f64>,
}

impl KineticMatrix {
    /// Wraps a hand-built rate matrix; off-diagonal entries are taken as
    /// given and the diagonal is refilled so columns sum to zero.
    ///
    /// Nothing here enforces symmetry; use [`detailed_balance_check`] on
    /// matrices from untrusted sources.
    pub fn from_rates(mut w: RMatrix, energies: Vec<f64>, mode: RateMode, lambda: f64) -> Result<Self, KineticsError> {
        let dim = energies.len();
        if w.nrows() != dim || w.ncols() != dim || dim % 2 != 0 {
            return Err(KineticsError::Shape { rows: w.nrows(), cols: w.ncols(), dim });
        }
        fill_diagonal(&mut w);
        Ok(KineticMatrix { w, mode, lambda, energies })
    }

    /// `w` with the column-sum-zero diagonal.
    pub fn matrix(&self) -> &RMatrix {
        &self.w
    }

    pub fn rate(&self, j: StateIndex, k: StateIndex) -> f64 {
        let n = self.n();
        self.w[(j.to_storage(n), k.to_storage(n))]
    }

    pub fn mode(&self) -> RateMode {
        self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn n(&self) -> usize {
        self.energies.len() / 2
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }
}

fn fill_diagonal(w: &mut RMatrix) {
    let dim = w.nrows();
    for k in 0..dim {
        let off: f64 = (0..dim).filter(|&j| j != k).map(|j| w[(j, k)]).sum();
        w[(k, k)] = -off;
    }
}

/// Union-find over states: `|ε_j - ε_k| <= eta` joins two states.
pub fn energy_shells(energies: &[f64], eta: f64) -> Vec<usize> {
    let dim = energies.len();
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for j in 0..dim {
        for k in j + 1..dim {
            if (energies[j] - energies[k]).abs() <= eta {
                let (a, b) = (find(&mut parent, j), find(&mut parent, k));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..dim).map(|i| find(&mut parent, i)).collect()
}

/// Kinetic coefficients of the system in the chosen mode.
pub fn kinetic_coefficients(sys: &SystemSpec, mode: RateMode) -> Result<KineticMatrix, KineticsError> {
    let dim = sys.dim();
    let e = sys.energies();
    let lambda2 = sys.lambda() * sys.lambda();
    let v = sys.v();
    let mut w = DMatrix::zeros(dim, dim);
    match mode {
        RateMode::FiniteWindow { dt } => {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(KineticsError::Window(dt));
            }
            let max_e = sys.max_abs_energy();
            if max_e > 0.0 && dt < 10.0 / max_e {
                log::warn!(
                    "decoherence window dt = {dt} is within 10x of the fast time scale 1/max|e| = {:.3e}; \
                     Zeno/anti-Zeno effects make finite-window rates unreliable",
                    1.0 / max_e
                );
            }
            for j in 0..dim {
                for k in j + 1..dim {
                    let r = lambda2 * v[(j, k)].norm_sqr() * d_kernel(e[j] - e[k], dt);
                    w[(j, k)] = r;
                    w[(k, j)] = r;
                }
            }
        }
        RateMode::OnShell { eta, eta_norm } => {
            if !(eta >= 0.0 && eta.is_finite() && eta_norm > 0.0 && eta_norm.is_finite()) {
                return Err(KineticsError::OnShell { eta, eta_norm });
            }
            let shells = energy_shells(e, eta);
            for j in 0..dim {
                for k in j + 1..dim {
                    if shells[j] == shells[k] {
                        let r = 2.0 * PI * lambda2 * v[(j, k)].norm_sqr() / eta_norm;
                        w[(j, k)] = r;
                        w[(k, j)] = r;
                    }
                }
            }
        }
    }
    fill_diagonal(&mut w);
    Ok(KineticMatrix { w, mode, lambda: sys.lambda(), energies: e.to_vec() })
}

/// Generator `A` of `dp/dt = A p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    a: RMatrix,
    variant: Variant,
    signs: Vec<f64>,
    energies: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn matrix(&self) -> &RMatrix {
        &self.a
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// `C'` in storage order.
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.dim() / 2
    }

    /// Recovers `w_jk = |A_jk|` off the diagonal.
    pub fn rates(&self) -> RMatrix {
        let mut w = self.a.map(f64::abs);
        fill_diagonal(&mut w);
        w
    }

    /// `max |A_jk|`.
    pub fn max_abs(&self) -> f64 {
        self.a.amax()
    }

    /// True when some matter state and some antimatter state are coupled.
    pub fn has_cross_coupling(&self) -> bool {
        let n = self.n();
        (0..n).any(|a| (n..2 * n).any(|m| self.a[(a, m)] != 0.0 || self.a[(m, a)] != 0.0))
    }

    /// Two-state generator with a single rate `w`, storage order `(-1, +1)`.
    pub fn two_state(w: f64, variant: Variant) -> Self {
        let rates = DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0]);
        let km = KineticMatrix::from_rates(rates, vec![0.0, 0.0], RateMode::on_shell(), 1.0)
            .expect("2x2 rates");
        generator(&km, variant)
    }
}

/// Assembles the SPME or APME generator from symmetric rates.
pub fn generator(w: &KineticMatrix, variant: Variant) -> GeneratorMatrix {
    let dim = w.dim();
    let signs = variant.signs(w.n());
    let mut a = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mut diag = 0.0;
        for j in 0..dim {
            if j != k {
                let entry = signs[j] * w.w[(j, k)];
                a[(j, k)] = entry;
                diag += entry;
            }
        }
        a[(k, k)] = -diag;
    }
    GeneratorMatrix { a, variant, signs, energies: w.energies.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailedBalanceReport {
    pub pass: bool,
    pub max_asymmetry: f64,
    pub worst_asymmetry: Option<(usize, usize)>,
    /// Most negative off-diagonal rate (0 when none is negative).
    pub min_rate: f64,
    pub worst_negative: Option<(usize, usize)>,
}

impl DetailedBalanceReport {
    /// Signed labels of the worst asymmetric pair, for `n` pairs.
    pub fn worst_label(&self, n: usize) -> Option<(StateIndex, StateIndex)> {
        self.worst_asymmetry
            .or(self.worst_negative)
            .map(|(j, k)| (StateIndex::from_storage(j, n), StateIndex::from_storage(k, n)))
    }
}

/// Checks `w_jk = w_kj` and `w_jk >= 0` off the diagonal (exact equality).
pub fn detailed_balance_check(w: &RMatrix) -> DetailedBalanceReport {
    let dim = w.nrows();
    let mut report = DetailedBalanceReport {
        pass: true,
        max_asymmetry: 0.0,
        worst_asymmetry: None,
        min_rate: 0.0,
        worst_negative: None,
    };
    for j in 0..dim {
        for k in 0..dim {
            if j == k {
                continue;
            }
            let asym = (w[(j, k)] - w[(k, j)]).abs();
            if asym > report.max_asymmetry {
                report.max_asymmetry = asym;
                report.worst_asymmetry = Some((j, k));
            }
            if w[(j, k)] < report.min_rate {
                report.min_rate = w[(j, k)];
                report.worst_negative = Some((j, k));
            }
        }
    }
    report.pass = report.max_asymmetry == 0.0 && report.min_rate >= 0.0;
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmeInvarianceReport {
    pub pass: bool,
    pub energy_violation: f64,
    /// `max |w_jk - w_{-j,-k}|` (equivalently `w_{-k,-j}` given symmetry).
    pub rate_violation: f64,
    pub rate_asymmetry: f64,
    pub worst: Option<(StateIndex, StateIndex)>,
}

/// The constraint chain shared by CP and CPT systems:
/// `ε_j = ε_{-j}` and `w_jk = w_kj = w_{-k,-j} = w_{-j,-k}`.
pub fn pme_invariance_check(sys: &SystemSpec, w: &KineticMatrix) -> PmeInvarianceReport {
    let dim = sys.dim();
    let n = sys.n();
    let e = sys.energies();
    let m = w.matrix();
    let energy_violation = (0..dim).map(|i| (e[i] - e[partner(i, dim)]).abs()).fold(0.0, f64::max);
    let mut rate_violation = 0.0;
    let mut rate_asymmetry = 0.0;
    let mut worst = None;
    for j in 0..dim {
        for k in 0..dim {
            let (pj, pk) = (partner(j, dim), partner(k, dim));
            let d = (m[(j, k)] - m[(pj, pk)]).abs().max((m[(j, k)] - m[(pk, pj)]).abs());
            if d > rate_violation {
                rate_violation = d;
                worst = Some((StateIndex::from_storage(j, n), StateIndex::from_storage(k, n)));
            }
            rate_asymmetry = f64::max(rate_asymmetry, (m[(j, k)] - m[(k, j)]).abs());
        }
    }
    let scale = m.amax().max(1.0);
    PmeInvarianceReport {
        pass: energy_violation <= STRUCTURE_TOL
            && rate_violation <= STRUCTURE_TOL * scale
            && rate_asymmetry <= STRUCTURE_TOL * scale,
        energy_violation,
        rate_violation,
        rate_asymmetry,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{build_system, random_system, RawSystem, SymmetryClass};
    use crate::unitary::{perturbative_propagator, q1_kernel};
    use num_complex::Complex64;

    fn two_state(v: Complex64, e: (f64, f64)) -> SystemSpec {
        let z = Complex64::new(0.0, 0.0);
        build_system(RawSystem {
            energies: vec![e.0, e.1],
            v: DMatrix::from_row_slice(2, 2, &[z, v, v.conj(), z]),
            lambda: 0.01,
            phases: None,
            symmetry: SymmetryClass::None,
        })
        .unwrap()
    }

    #[test]
    fn degenerate_pair_rate_is_linear_in_window() {
        let v = Complex64::new(0.3, 0.4);
        let sys = two_state(v, (20.0, 20.0));
        for &dt in &[0.25, 0.5, 1.0] {
            let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt }).unwrap();
            let expected = 1e-4 * 0.25 * dt;
            assert!((km.matrix()[(0, 1)] - expected).abs() < 1e-20);
            // w = λ²|U1_jk|²/Δt through the propagator's first-order term
            let u1 = perturbative_propagator(&sys, dt, 1).unwrap().u[(0, 1)];
            assert!((u1.norm_sqr() / dt - expected).abs() < 1e-18);
        }
    }

    #[test]
    fn window_zero_of_kernel_gives_zero_rate() {
        let dt = 0.5;
        let sys = two_state(Complex64::new(1.0, 0.0), (20.0, 20.0 + 2.0 * PI / dt));
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt }).unwrap();
        assert!(km.matrix()[(0, 1)].abs() < 1e-30);
        assert_eq!(q1_kernel(0.0, 0.0, dt).re, dt);
    }

    #[test]
    fn rate_mode_validation() {
        let sys = two_state(Complex64::new(1.0, 0.0), (1.0, 1.0));
        assert!(kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: 0.0 }).is_err());
        assert!(kinetic_coefficients(&sys, RateMode::OnShell { eta: -1.0, eta_norm: 1.0 }).is_err());
        assert!(kinetic_coefficients(&sys, RateMode::OnShell { eta: 0.0, eta_norm: 0.0 }).is_err());
    }

    #[test]
    fn on_shell_uses_transitive_shells() {
        assert_eq!(energy_shells(&[1.0, 1.5, 2.0, 5.0], 0.6), vec![0, 0, 0, 3]);
        let sys = random_system(3, SymmetryClass::None, 0.01, 2, 17).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::on_shell()).unwrap();
        let e = sys.energies();
        for j in 0..6 {
            for k in 0..6 {
                if j != k && e[j] != e[k] {
                    assert_eq!(km.matrix()[(j, k)], 0.0);
                }
                if j != k && e[j] == e[k] {
                    let expected = 2.0 * PI * 1e-4 * sys.v()[(j, k)].norm_sqr();
                    assert!((km.matrix()[(j, k)] - expected).abs() < 1e-18);
                }
            }
        }
    }

    #[test]
    fn cp_system_rates_mirror() {
        let sys = random_system(3, SymmetryClass::Cp, 0.01, 2, 5).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: 0.5 }).unwrap();
        let m = km.matrix();
        for j in 0..6 {
            for k in 0..6 {
                assert!((m[(j, k)] - m[(partner(j, 6), partner(k, 6))]).abs() <= 1e-12);
            }
        }
        assert!(pme_invariance_check(&sys, &km).pass);
    }

    #[test]
    fn two_state_generators_match_closed_forms() {
        let w = 0.7;
        // storage order (-1, +1); the reference matrices are written (matter, antimatter)
        let swap = |a: &RMatrix| DMatrix::from_row_slice(2, 2, &[a[(1, 1)], a[(1, 0)], a[(0, 1)], a[(0, 0)]]);
        let spme = GeneratorMatrix::two_state(w, Variant::Spme);
        assert_eq!(swap(spme.matrix()), DMatrix::from_row_slice(2, 2, &[-w, w, w, -w]));
        let apme = GeneratorMatrix::two_state(w, Variant::Apme);
        assert_eq!(swap(apme.matrix()), DMatrix::from_row_slice(2, 2, &[w, w, -w, -w]));
    }

    #[test]
    fn generator_structure() {
        let sys = random_system(4, SymmetryClass::None, 0.01, 2, 21).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: 0.5 }).unwrap();
        for variant in [Variant::Spme, Variant::Apme] {
            let g = generator(&km, variant);
            let a = g.matrix();
            for k in 0..8 {
                let s: f64 = a.column(k).iter().sum();
                assert!(s.abs() < 1e-18, "{variant} column {k}: {s}");
                for j in 0..8 {
                    if j != k {
                        assert_eq!(a[(j, k)].abs(), a[(k, j)].abs());
                        assert_eq!(a[(j, k)], g.signs()[j] * km.matrix()[(j, k)]);
                    }
                }
            }
            if variant == Variant::Spme {
                assert_eq!(a, &a.transpose());
            }
            assert_eq!(&g.rates(), km.matrix());
        }
    }

    #[test]
    fn detailed_balance_reports() {
        let sys = random_system(3, SymmetryClass::None, 0.01, 1, 2).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: 0.5 }).unwrap();
        let r = detailed_balance_check(km.matrix());
        assert!(r.pass);
        assert_eq!(r.max_asymmetry, 0.0);

        let mut bad = km.matrix().clone();
        bad[(0, 1)] += 1e-3;
        let r = detailed_balance_check(&bad);
        assert!(!r.pass);
        assert!(matches!(r.worst_asymmetry, Some((0, 1)) | Some((1, 0))));
        assert!((r.max_asymmetry - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn invariance_check_catches_energy_asymmetry() {
        let sys = two_state(Complex64::new(1.0, 0.0), (1.0, 1.5));
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: 0.5 }).unwrap();
        let r = pme_invariance_check(&sys, &km);
        assert!(!r.pass);
        assert_eq!(r.energy_violation, 0.5);
    }
}
