//! Finite-interval propagators `U(Δt)` for `H = H0 + λV` (ħ = 1).
//!
//! Two routes are provided: the exact exponential through a Hermitian
//! eigendecomposition, and the truncated Dyson series built from the
//! kernels [`q1_kernel`] and [`q2_kernel`]. The perturbative operator keeps
//! exactly the terms the kinetic coefficients are derived from: first order
//! off the diagonal and second order on it.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::system::SystemSpec;
use crate::{CMatrix, RVector};

/// Below this `|Δε·Δt|` the kernels switch to their Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorMode {
    Exact,
    /// Dyson truncation of order 0, 1 or 2.
    Perturbative(u8),
}

#[derive(Debug, Error)]
pub enum UnitaryError {
    #[error("Hermitian eigendecomposition did not converge (dim {dim}, ‖H‖max = {h_norm:e})")]
    Eigen { dim: usize, h_norm: f64 },
    #[error("perturbative order must be 0, 1 or 2, got {0}")]
    Order(u8),
    #[error("non-finite interval {0}")]
    Interval(f64),
}

#[derive(Debug, Clone)]
pub struct EvolutionOperator {
    pub u: CMatrix,
    pub dt: f64,
    pub mode: PropagatorMode,
}

impl EvolutionOperator {
    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `|U_jk|²`, the transition probabilities out of each decohered state.
    pub fn transition_probabilities(&self) -> DMatrix<f64> {
        self.u.map(|z| z.norm_sqr())
    }
}

/// Eigen-decomposed Hamiltonian, reusable for many `Δt`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: RVector,
    eigenvectors: CMatrix,
}

impl Spectrum {
    pub fn new(sys: &SystemSpec) -> Result<Self, UnitaryError> {
        let h = sys.hamiltonian();
        let h_norm = h.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let dim = h.nrows();
        let eig = h.try_symmetric_eigen(f64::EPSILON, 10_000).ok_or(UnitaryError::Eigen { dim, h_norm })?;
        Ok(Spectrum { eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors })
    }

    pub fn eigenvalues(&self) -> &RVector {
        &self.eigenvalues
    }

    /// `exp(-i H Δt) = Q diag(exp(-i E Δt)) Q†`.
    pub fn propagator(&self, dt: f64) -> Result<EvolutionOperator, UnitaryError> {
        if !dt.is_finite() {
            return Err(UnitaryError::Interval(dt));
        }
        let mut scaled = self.eigenvectors.clone();
        for (mut col, e) in scaled.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= Complex64::from_polar(1.0, -e * dt);
        }
        let u = scaled * self.eigenvectors.adjoint();
        Ok(EvolutionOperator { u, dt, mode: PropagatorMode::Exact })
    }
}

/// Exact propagator over `Δt` (negative `Δt` evolves backward).
pub fn exact_propagator(sys: &SystemSpec, dt: f64) -> Result<EvolutionOperator, UnitaryError> {
    Spectrum::new(sys)?.propagator(dt)
}

/// `Q¹(Δt) = sin(Δε Δt / 2) / (Δε / 2)` with `Δε = ε_j - ε_k`; equals `Δt` on shell.
pub fn q1_kernel(e_j: f64, e_k: f64, dt: f64) -> Complex64 {
    let x = e_j - e_k;
    let y = x * dt;
    let re = if y.abs() < SERIES_THRESHOLD { dt * (1.0 - y * y / 24.0) } else { (0.5 * y).sin() / (0.5 * x) };
    Complex64::new(re, 0.0)
}

/// `Q²(Δt) = (1 + iΔεΔt - exp(iΔεΔt)) / Δε²`; equals `Δt²/2` on shell.
///
/// The real part is evaluated as `2 sin²(ΔεΔt/2)/Δε²` and the imaginary part
/// as `(y - sin y)/Δε²` (series for small `y`), both free of cancellation.
pub fn q2_kernel(e_j: f64, e_k: f64, dt: f64) -> Complex64 {
    let x = e_j - e_k;
    let y = x * dt;
    let dt2 = dt * dt;
    if y.abs() < SERIES_THRESHOLD {
        return Complex64::new(dt2 * (0.5 - y * y / 24.0), dt2 * y / 6.0);
    }
    let s = (0.5 * y).sin();
    let re = 2.0 * s * s / (x * x);
    let im = if y.abs() < 0.1 {
        let y2 = y * y;
        // (y - sin y)/y² = y/6 - y³/120 + y⁵/5040 - y⁷/362880
        dt2 * y * (1.0 / 6.0 - y2 / 120.0 + y2 * y2 / 5040.0 - y2 * y2 * y2 / 362_880.0)
    } else {
        (y - y.sin()) / (x * x)
    };
    Complex64::new(re, im)
}

/// `D(Δε, Δt) = |Q¹|²/Δt = 2 sin²(ΔεΔt/2) / (Δε² Δt / 2)`; tends to `2πδ(Δε)`.
pub fn d_kernel(de: f64, dt: f64) -> f64 {
    let y = de * dt;
    if y.abs() < SERIES_THRESHOLD {
        return dt * (1.0 - y * y / 12.0);
    }
    let s = (0.5 * y).sin();
    4.0 * s * s / (de * de * dt)
}

/// Dyson series truncated at `order`.
///
/// - order 0: `diag(exp(-iε_jΔt))`
/// - order 1: adds `-iλ V_jk Q¹_jk exp(-i(ε_j+ε_k)Δt/2)` off the diagonal
/// - order 2: multiplies the diagonal by `1 - λ² Σ_k V_jk V_kj Q²_jk`
pub fn perturbative_propagator(sys: &SystemSpec, dt: f64, order: u8) -> Result<EvolutionOperator, UnitaryError> {
    if order > 2 {
        return Err(UnitaryError::Order(order));
    }
    if !dt.is_finite() {
        return Err(UnitaryError::Interval(dt));
    }
    let e = sys.energies();
    let v = sys.v();
    let lambda = sys.lambda();
    let dim = sys.dim();
    let minus_i = Complex64::new(0.0, -1.0);
    let u = DMatrix::from_fn(dim, dim, |j, k| {
        if j == k {
            let phase = Complex64::from_polar(1.0, -e[j] * dt);
            if order < 2 {
                return phase;
            }
            let corr: Complex64 = (0..dim)
                .filter(|&l| l != j)
                .map(|l| v[(j, l)] * v[(l, j)] * q2_kernel(e[j], e[l], dt))
                .sum();
            phase * (Complex64::new(1.0, 0.0) - corr * lambda * lambda)
        } else if order == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            let phase = Complex64::from_polar(1.0, -0.5 * (e[j] + e[k]) * dt);
            minus_i * lambda * v[(j, k)] * q1_kernel(e[j], e[k], dt) * phase
        }
    });
    Ok(EvolutionOperator { u, dt, mode: PropagatorMode::Perturbative(order) })
}

/// Propagator in the requested mode.
pub fn propagator(sys: &SystemSpec, dt: f64, mode: PropagatorMode) -> Result<EvolutionOperator, UnitaryError> {
    match mode {
        PropagatorMode::Exact => exact_propagator(sys, dt),
        PropagatorMode::Perturbative(order) => perturbative_propagator(sys, dt, order),
    }
}

/// `‖U†U - I‖max`.
pub fn unitarity_defect(op: &EvolutionOperator) -> f64 {
    let dim = op.dim();
    let g = op.u.adjoint() * &op.u - CMatrix::identity(dim, dim);
    g.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}
