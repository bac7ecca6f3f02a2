//! System Hamiltonian `H = H0 + λV` over `2n` states.
//!
//! States are addressed by signed indices `j ∈ {-n..-1, +1..+n}`: positive
//! indices are matter, negative ones antimatter, and `j ↔ -j` are CP images
//! of each other. Internally everything is stored in a contiguous range
//! `0..2n`:
//!
//! ```text
//! signed:  -n  ...  -1  +1  ...  +n
//! storage:  0  ... n-1   n  ... 2n-1
//! ```
//!
//! so that negation is `idx ↦ 2n - 1 - idx`.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::CMatrix;

/// Entrywise tolerance for structural checks on `V`, phases and energies.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Signed logical state index; never zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateIndex(i32);

impl StateIndex {
    pub fn new(j: i32) -> Option<Self> {
        (j != 0).then_some(StateIndex(j))
    }

    pub fn get(self) -> i32 {
        self.0
    }

    pub fn is_matter(self) -> bool {
        self.0 > 0
    }

    /// The indicator `C_j`: `+1` for matter, `-1` for antimatter.
    pub fn indicator(self) -> f64 {
        if self.0 > 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// The CP partner `-j`.
    pub fn conjugate(self) -> Self {
        StateIndex(-self.0)
    }

    /// Storage position for a system with `n` pairs.
    pub fn to_storage(self, n: usize) -> usize {
        let n = n as i32;
        debug_assert!(self.0.abs() <= n);
        if self.0 < 0 {
            (self.0 + n) as usize
        } else {
            (self.0 + n - 1) as usize
        }
    }

    pub fn from_storage(idx: usize, n: usize) -> Self {
        assert!(idx < 2 * n, "storage index {idx} out of range for n = {n}");
        let (idx, n) = (idx as i32, n as i32);
        if idx < n {
            StateIndex(idx - n)
        } else {
            StateIndex(idx - n + 1)
        }
    }

    /// `+3` / `-2` style label used in CSV headers.
    pub fn label(self) -> String {
        format!("{:+}", self.0)
    }
}

impl fmt::Display for StateIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.0)
    }
}

/// Storage index of the CP partner.
#[inline]
pub fn partner(idx: usize, dim: usize) -> usize {
    dim - 1 - idx
}

/// Indicator `C_j` for every storage position: `-1` on the antimatter half.
pub fn indicators(n: usize) -> Vec<f64> {
    (0..2 * n).map(|i| if i < n { -1.0 } else { 1.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryClass {
    #[default]
    None,
    Cp,
    Cpt,
    Both,
}

impl SymmetryClass {
    pub fn includes(self, inv: Invariance) -> bool {
        matches!(
            (self, inv),
            (SymmetryClass::Both, _)
                | (SymmetryClass::Cp, Invariance::Cp)
                | (SymmetryClass::Cpt, Invariance::Cpt)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SymmetryClass::None => "none",
            SymmetryClass::Cp => "cp",
            SymmetryClass::Cpt => "cpt",
            SymmetryClass::Both => "both",
        }
    }
}

impl std::str::FromStr for SymmetryClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SymmetryClass::None),
            "cp" => Ok(SymmetryClass::Cp),
            "cpt" => Ok(SymmetryClass::Cpt),
            "both" | "cp+cpt" => Ok(SymmetryClass::Both),
            other => Err(format!("unknown symmetry class `{other}` (expected none|cp|cpt|both)")),
        }
    }
}

impl fmt::Display for SymmetryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single discrete symmetry to check against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariance {
    Cp,
    Cpt,
}

impl fmt::Display for Invariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invariance::Cp => "CP",
            Invariance::Cpt => "CPT",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SystemError {
    #[error("expected n >= 1 pairs, got {0} energies")]
    Empty(usize),
    #[error("energies must have even length 2n, got {0}")]
    OddDimension(usize),
    #[error("interaction matrix is {rows}x{cols}, expected {dim}x{dim}")]
    Shape { rows: usize, cols: usize, dim: usize },
    #[error("phases have length {got}, expected {dim}")]
    PhaseLength { got: usize, dim: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("coupling lambda must be positive and finite, got {0}")]
    Lambda(f64),
    #[error("V is not Hermitian: |V[{row},{col}] - conj(V[{col},{row}])| = {violation:e}")]
    NonHermitian { row: StateIndex, col: StateIndex, violation: f64 },
    #[error("V has nonzero diagonal at {index}: |V| = {magnitude:e}")]
    NonzeroDiagonal { index: StateIndex, magnitude: f64 },
    #[error("phase alpha[{index}] has modulus {modulus}, expected 1")]
    PhaseNotUnit { index: StateIndex, modulus: f64 },
    #[error("claimed {class} symmetry violated at {worst}: max violation {max_violation:e}")]
    SymmetryViolated { class: Invariance, worst: Violation, max_violation: f64 },
}

/// Unvalidated system description, as read from a file or assembled in code.
#[derive(Debug, Clone)]
pub struct RawSystem {
    /// Storage order: `-n..-1, +1..+n`.
    pub energies: Vec<f64>,
    pub v: CMatrix,
    pub lambda: f64,
    /// Defaults to all ones.
    pub phases: Option<Vec<Complex64>>,
    pub symmetry: SymmetryClass,
}

/// Validated, immutable system specification.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    n: usize,
    energies: Vec<f64>,
    v: CMatrix,
    lambda: f64,
    phases: Vec<Complex64>,
    symmetry: SymmetryClass,
}

/// Validates `raw` and returns a [`SystemSpec`].
pub fn build_system(raw: RawSystem) -> Result<SystemSpec, SystemError> {
    let dim = raw.energies.len();
    if dim == 0 {
        return Err(SystemError::Empty(0));
    }
    if dim % 2 != 0 {
        return Err(SystemError::OddDimension(dim));
    }
    let n = dim / 2;
    if raw.v.nrows() != dim || raw.v.ncols() != dim {
        return Err(SystemError::Shape { rows: raw.v.nrows(), cols: raw.v.ncols(), dim });
    }
    if raw.energies.iter().any(|e| !e.is_finite()) {
        return Err(SystemError::NonFinite("energies"));
    }
    if raw.v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SystemError::NonFinite("V"));
    }
    if !(raw.lambda > 0.0 && raw.lambda.is_finite()) {
        return Err(SystemError::Lambda(raw.lambda));
    }
    if raw.lambda > 0.1 {
        log::warn!("lambda = {} is not small; perturbative rates may be inaccurate", raw.lambda);
    }
    let phases = raw.phases.unwrap_or_else(|| vec![Complex64::new(1.0, 0.0); dim]);
    if phases.len() != dim {
        return Err(SystemError::PhaseLength { got: phases.len(), dim });
    }

    let label = |i: usize| StateIndex::from_storage(i, n);
    let mut worst = (0.0, 0, 0);
    for r in 0..dim {
        for c in r + 1..dim {
            let d = (raw.v[(r, c)] - raw.v[(c, r)].conj()).norm();
            if d > worst.0 {
                worst = (d, r, c);
            }
        }
    }
    if worst.0 > STRUCTURE_TOL {
        return Err(SystemError::NonHermitian { row: label(worst.1), col: label(worst.2), violation: worst.0 });
    }
    for i in 0..dim {
        let m = raw.v[(i, i)].norm();
        if m > STRUCTURE_TOL {
            return Err(SystemError::NonzeroDiagonal { index: label(i), magnitude: m });
        }
    }
    for (i, a) in phases.iter().enumerate() {
        if (a.norm() - 1.0).abs() > STRUCTURE_TOL {
            return Err(SystemError::PhaseNotUnit { index: label(i), modulus: a.norm() });
        }
    }

    let sys = SystemSpec { n, energies: raw.energies, v: raw.v, lambda: raw.lambda, phases, symmetry: raw.symmetry };
    for inv in [Invariance::Cp, Invariance::Cpt] {
        if sys.symmetry.includes(inv) {
            let report = check_invariance(&sys, inv);
            if !report.pass {
                return Err(SystemError::SymmetryViolated {
                    class: inv,
                    worst: report.worst.expect("failing report names an entry"),
                    max_violation: report.max_violation,
                });
            }
        }
    }
    Ok(sys)
}

impl SystemSpec {
    /// Number of matter/antimatter pairs.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of states, `2n`.
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Energies in storage order.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, j: StateIndex) -> f64 {
        self.energies[j.to_storage(self.n)]
    }

    /// Interaction shape `V` (without the factor λ), storage order.
    pub fn v(&self) -> &CMatrix {
        &self.v
    }

    pub fn coupling(&self, j: StateIndex, k: StateIndex) -> Complex64 {
        self.v[(j.to_storage(self.n), k.to_storage(self.n))]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn phases(&self) -> &[Complex64] {
        &self.phases
    }

    pub fn symmetry(&self) -> SymmetryClass {
        self.symmetry
    }

    pub fn states(&self) -> impl Iterator<Item = StateIndex> + '_ {
        (0..self.dim()).map(move |i| StateIndex::from_storage(i, self.n))
    }

    /// Full Hamiltonian `H0 + λV`.
    pub fn hamiltonian(&self) -> CMatrix {
        let mut h = self.v.scale(self.lambda);
        for (i, e) in self.energies.iter().enumerate() {
            h[(i, i)] += Complex64::new(*e, 0.0);
        }
        h
    }

    /// `max |ε_j|`, the inverse of the fast time scale.
    pub fn max_abs_energy(&self) -> f64 {
        self.energies.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
    }

    /// `max |V_jk|`.
    pub fn max_abs_coupling(&self) -> f64 {
        self.v.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    /// True when any matter state couples to any antimatter state.
    pub fn has_cross_coupling(&self) -> bool {
        let n = self.n;
        (0..n).any(|a| (n..2 * n).any(|m| self.v[(a, m)].norm() > 0.0))
    }

    /// Same system with a different coupling scale.
    pub fn with_lambda(&self, lambda: f64) -> Result<SystemSpec, SystemError> {
        build_system(RawSystem { lambda, ..self.to_raw() })
    }

    pub fn to_raw(&self) -> RawSystem {
        RawSystem {
            energies: self.energies.clone(),
            v: self.v.clone(),
            lambda: self.lambda,
            phases: Some(self.phases.clone()),
            symmetry: self.symmetry,
        }
    }
}

/// Location of the largest constraint violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    /// `ε_j ≠ ε_{-j}`
    Energy(StateIndex),
    /// Coupling constraint broken at `(j, k)`.
    Coupling(StateIndex, StateIndex),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Energy(j) => write!(f, "energy {j}"),
            Violation::Coupling(j, k) => write!(f, "V[{j},{k}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub class: Invariance,
    pub pass: bool,
    pub max_violation: f64,
    pub worst: Option<Violation>,
}

/// Image of `V` under the CP constraint: `α_j* α_k V_{-j,-k}`.
fn cp_image(v: &CMatrix, phases: &[Complex64]) -> CMatrix {
    let dim = v.nrows();
    DMatrix::from_fn(dim, dim, |r, c| phases[r].conj() * phases[c] * v[(partner(r, dim), partner(c, dim))])
}

/// Image of `V` under the CPT constraint: `α_k* α_j V_{-k,-j}`.
fn cpt_image(v: &CMatrix, phases: &[Complex64]) -> CMatrix {
    let dim = v.nrows();
    DMatrix::from_fn(dim, dim, |r, c| phases[c].conj() * phases[r] * v[(partner(c, dim), partner(r, dim))])
}

/// Entrywise check of the CP or CPT constraint plus `ε_j = ε_{-j}`.
pub fn check_invariance(sys: &SystemSpec, class: Invariance) -> InvarianceReport {
    let dim = sys.dim();
    let n = sys.n;
    let image = match class {
        Invariance::Cp => cp_image(&sys.v, &sys.phases),
        Invariance::Cpt => cpt_image(&sys.v, &sys.phases),
    };
    let mut max_violation = 0.0;
    let mut worst = None;
    for i in 0..dim {
        let d = (sys.energies[i] - sys.energies[partner(i, dim)]).abs();
        if d > max_violation {
            max_violation = d;
            worst = Some(Violation::Energy(StateIndex::from_storage(i, n)));
        }
    }
    for r in 0..dim {
        for c in 0..dim {
            let d = (sys.v[(r, c)] - image[(r, c)]).norm();
            if d > max_violation {
                max_violation = d;
                worst = Some(Violation::Coupling(StateIndex::from_storage(r, n), StateIndex::from_storage(c, n)));
            }
        }
    }
    InvarianceReport { class, pass: max_violation <= STRUCTURE_TOL, max_violation, worst }
}

/// Projects `V` onto the CP-invariant subspace, `(V + α_j* α_k V_{-j,-k}) / 2`.
///
/// Exact when `α_j α_{-j}` is the same for every `j` (in particular for unit
/// phases); otherwise the map is not an involution and the result is only
/// approximately invariant.
pub fn symmetrize_cp(v: &CMatrix, phases: &[Complex64]) -> CMatrix {
    (v + cp_image(v, phases)).scale(0.5)
}

/// Projects `V` onto the CPT-invariant subspace, `(V + α_k* α_j V_{-k,-j}) / 2`.
pub fn symmetrize_cpt(v: &CMatrix, phases: &[Complex64]) -> CMatrix {
    (v + cpt_image(v, phases)).scale(0.5)
}

/// CP image of the whole system: `ε'_j = ε_{-j}`, `V'_jk = α_j* α_k V_{-j,-k}`.
pub fn cp_transform(sys: &SystemSpec) -> SystemSpec {
    let dim = sys.dim();
    SystemSpec {
        n: sys.n,
        energies: (0..dim).map(|i| sys.energies[partner(i, dim)]).collect(),
        v: cp_image(&sys.v, &sys.phases),
        lambda: sys.lambda,
        phases: sys.phases.clone(),
        symmetry: sys.symmetry,
    }
}

/// Deterministic random test system.
///
/// Energies are drawn from `shell_count` distinct values spaced roughly 20
/// apart (so `τ_d = 0.5` sits well above the fast time scale); states are
/// dealt round-robin over the shells so that every shell with room for two
/// states is degenerate. Phases are all one.
pub fn random_system(
    n: usize,
    symmetry: SymmetryClass,
    lambda: f64,
    shell_count: usize,
    seed: u64,
) -> Result<SystemSpec, SystemError> {
    if n == 0 {
        return Err(SystemError::Empty(0));
    }
    let shell_count = shell_count.max(1);
    let dim = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let shell_energy: Vec<f64> =
        (0..shell_count).map(|m| 20.0 * (m as f64 + 1.0) + rng.random_range(-2.0..2.0)).collect();
    let mut energies = vec![0.0; dim];
    if symmetry == SymmetryClass::None {
        let mut shells: Vec<usize> = (0..dim).map(|i| i % shell_count).collect();
        shells.shuffle(&mut rng);
        for (i, s) in shells.into_iter().enumerate() {
            energies[i] = shell_energy[s];
        }
    } else {
        let mut shells: Vec<usize> = (0..n).map(|i| i % shell_count).collect();
        shells.shuffle(&mut rng);
        for (i, s) in shells.into_iter().enumerate() {
            energies[n + i] = shell_energy[s];
            energies[partner(n + i, dim)] = shell_energy[s];
        }
    }

    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    });
    let mut v = (&g + g.adjoint()).scale(0.5);
    for i in 0..dim {
        v[(i, i)] = Complex64::new(0.0, 0.0);
    }
    let phases = vec![Complex64::new(1.0, 0.0); dim];
    if matches!(symmetry, SymmetryClass::Cp | SymmetryClass::Both) {
        v = symmetrize_cp(&v, &phases);
    }
    if matches!(symmetry, SymmetryClass::Cpt | SymmetryClass::Both) {
        v = symmetrize_cpt(&v, &phases);
    }
    build_system(RawSystem { energies, v, lambda, phases: Some(phases), symmetry })
}
