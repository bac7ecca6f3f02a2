//! Microscopic decoherence-cycle simulation.
//!
//! Time is cut into intervals of length `τ_d`. Inside an interval the state
//! is a mixture of `2n` branch wave functions, each evolving unitarily; the
//! branches are kept as an explicit list rather than as a sum with random
//! phases.
//!
//! - Symmetric cycle: every state decoheres at the start of each interval,
//!   so branch `k` starts as `√p_k e_k`.
//! - Antisymmetric cycle: matter decoheres at the start of the interval and
//!   antimatter recoheres at its end. Matter branches start on their own
//!   matter state plus an antimatter admixture that is annihilated by the end
//!   of the interval; antimatter branches start with no matter component and
//!   end on their own antimatter state. The boundary-value problem is solved
//!   exactly with the blocks of `U(τ_d)`, see [`branch_boundary_solve`].
//!
//! Probabilities read off at interval boundaries are compared against the
//! master equations with finite-window rates at `Δt = τ_d`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::kinetics::{generator, kinetic_coefficients, KineticsError, RateMode, Variant};
use crate::solver::{
    energy, entropy, integrate_with, BoundaryKind, IntegrateOptions, Sample, SolverError, TimeBoundaryEvent,
    Trajectory,
};
use crate::system::{StateIndex, SystemError, SystemSpec};
use crate::unitary::{propagator, EvolutionOperator, PropagatorMode, UnitaryError};
use crate::{CMatrix, CVector, RMatrix, RVector};

/// `U_aa` with a condition number above this is rejected.
pub const MAX_CONDITION: f64 = 1e10;
/// Antimatter weights in `[-WEIGHT_ROUNDOFF, 0)` are read as zero.
pub const WEIGHT_ROUNDOFF: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MicrosimError {
    #[error("invalid cycle configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Unitary(#[from] UnitaryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("antimatter block of U is singular or ill-conditioned (cond = {cond:e})")]
    IllConditioned { cond: f64 },
    #[error("negative antimatter weight {weight:e} for state {state}: end of time")]
    EndOfTime { state: StateIndex, weight: f64 },
    #[error("time grids differ at sample {index}: micro t = {t_micro}, master t = {t_master}")]
    GridMismatch { index: usize, t_micro: f64, t_master: f64 },
    #[error("probability vector has length {got}, system has {dim} states")]
    Dimension { got: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    pub tau_d: f64,
    pub n_cycles: usize,
    pub propagator: PropagatorMode,
}

impl CycleConfig {
    pub fn new(tau_d: f64, n_cycles: usize) -> Self {
        CycleConfig { tau_d, n_cycles, propagator: PropagatorMode::Exact }
    }

    pub fn with_propagator(mut self, mode: PropagatorMode) -> Self {
        self.propagator = mode;
        self
    }

    /// Hard-checks `τ_d > 0`; returns (and logs) warnings when `τ_d` leaves
    /// the window between the fast scale `1/max|ε|` and the interaction
    /// scale `1/(λ max|V|)`.
    pub fn validate(&self, sys: &SystemSpec) -> Result<Vec<String>, MicrosimError> {
        if !(self.tau_d > 0.0 && self.tau_d.is_finite()) {
            return Err(MicrosimError::Config(format!("tau_d must be positive, got {}", self.tau_d)));
        }
        if let PropagatorMode::Perturbative(o) = self.propagator {
            if o != 2 {
                return Err(MicrosimError::Config(format!("perturbative cycles need order 2, got {o}")));
            }
        }
        let mut warnings = Vec::new();
        let fast = self.tau_d * sys.max_abs_energy();
        if fast < 10.0 {
            warnings.push(format!("tau_d * max|e| = {fast:.3} < 10: decoherence approaches the fast time scale"));
        }
        let slow = self.tau_d * sys.lambda() * sys.max_abs_coupling();
        if slow > 0.1 {
            warnings.push(format!("tau_d * lambda * max|V| = {slow:.3} > 0.1: decoherence approaches the interaction time scale"));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }
}

/// Branch wave functions `ψ^(k) = √w_k φ^(k)` at one instant, indexed by
/// source state `k` in storage order. Weights and shapes are kept apart so
/// that probabilities never pass through a square root.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMixture {
    pub shapes: Vec<CVector>,
    pub weights: Vec<f64>,
    pub t: f64,
}

impl BranchMixture {
    pub fn dim(&self) -> usize {
        self.shapes.len()
    }

    /// `ψ^(k)`.
    pub fn branch(&self, k: usize) -> CVector {
        self.shapes[k].scale(self.weights[k].max(0.0).sqrt())
    }

    /// `p_j = Σ_k |⟨j|ψ^(k)⟩|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        let dim = self.dim();
        (0..dim)
            .map(|j| self.shapes.iter().zip(&self.weights).map(|(b, w)| w * b[j].norm_sqr()).sum())
            .collect()
    }

    /// `Σ_k ⟨ψ^(k)|ψ^(k)⟩`.
    pub fn total(&self) -> f64 {
        self.shapes.iter().zip(&self.weights).map(|(b, w)| w * b.norm_squared()).sum()
    }

    /// Implied density matrix `Σ_k |ψ^(k)⟩⟨ψ^(k)|`.
    pub fn density(&self) -> CMatrix {
        let dim = self.dim();
        let mut rho = CMatrix::zeros(dim, dim);
        for (b, w) in self.shapes.iter().zip(&self.weights) {
            rho += (b * b.adjoint()).scale(*w);
        }
        rho
    }

    /// Each branch evolved by `U`.
    pub fn evolve(&self, u: &EvolutionOperator) -> BranchMixture {
        BranchMixture {
            shapes: self.shapes.iter().map(|b| &u.u * b).collect(),
            weights: self.weights.clone(),
            t: self.t + u.dt,
        }
    }
}

fn basis_vector(dim: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[k] = Complex64::new(1.0, 0.0);
    v
}

/// Decoherence of a probability vector: branch `k` is `√p_k e_k`.
pub fn decohere(p: &[f64], t: f64) -> BranchMixture {
    let dim = p.len();
    BranchMixture { shapes: (0..dim).map(|k| basis_vector(dim, k)).collect(), weights: p.to_vec(), t }
}

/// Decoherence of a pure state.
pub fn decohere_pure(psi: &CVector, t: f64) -> BranchMixture {
    let p: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    decohere(&p, t)
}

/// Decoherence of a density matrix: keeps its diagonal, drops the rest.
pub fn decohere_density(rho: &CMatrix, t: f64) -> BranchMixture {
    let p: Vec<f64> = (0..rho.nrows()).map(|k| rho[(k, k)].re).collect();
    decohere(&p, t)
}

/// Per-interval diagnostics of a cycle run.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalDiagnostic {
    pub interval: usize,
    /// Largest boundary-condition or continuity residual.
    pub bc_residual: f64,
    /// Smallest branch weight (`x_k` for antimatter, `p_k` for symmetric runs).
    pub weight_min: f64,
    /// Condition number of `U_aa`; NaN for symmetric runs.
    pub cond_uaa: f64,
}

#[derive(Debug, Clone)]
pub struct MicroRun {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<IntervalDiagnostic>,
}

fn sample(t: f64, p: Vec<f64>, variant: Variant, energies: &[f64]) -> Sample {
    Sample { t, entropy: entropy(&p, variant), energy: energy(&p, energies), p }
}

fn check_p0(sys: &SystemSpec, p0: &[f64]) -> Result<(), MicrosimError> {
    if p0.len() != sys.dim() {
        return Err(MicrosimError::Dimension { got: p0.len(), dim: sys.dim() });
    }
    crate::solver::ProbabilityState::new(p0.to_vec(), 0.0)?;
    Ok(())
}

/// `U(τ_d)` for a cycle run. Probabilities read after decoherence do not
/// depend on row phases of `U`, so without coupling the rotating-frame
/// identity is used and nothing moves, not even by round-off.
fn cycle_propagator(sys: &SystemSpec, cfg: &CycleConfig) -> Result<EvolutionOperator, MicrosimError> {
    if sys.max_abs_coupling() == 0.0 {
        let dim = sys.dim();
        return Ok(EvolutionOperator { u: CMatrix::identity(dim, dim), dt: cfg.tau_d, mode: cfg.propagator });
    }
    Ok(propagator(sys, cfg.tau_d, cfg.propagator)?)
}

/// Symmetric decoherence cycles starting at `t = 0`.
pub fn symmetric_cycle(sys: &SystemSpec, p0: &[f64], cfg: &CycleConfig) -> Result<MicroRun, MicrosimError> {
    cfg.validate(sys)?;
    check_p0(sys, p0)?;
    let u = cycle_propagator(sys, cfg)?;
    let e = sys.energies();
    let mut p = p0.to_vec();
    let mut traj = Trajectory {
        variant: Variant::Spme,
        samples: vec![sample(0.0, p.clone(), Variant::Spme, e)],
        events: Vec::new(),
        max_sum_drift: (p.iter().sum::<f64>() - 1.0).abs(),
    };
    let mut diagnostics = Vec::with_capacity(cfg.n_cycles);
    for beta in 0..cfg.n_cycles {
        let start = decohere(&p, beta as f64 * cfg.tau_d);
        let continuity = start.probabilities().iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let end = start.evolve(&u);
        p = end.probabilities();
        let t = (beta + 1) as f64 * cfg.tau_d;
        traj.max_sum_drift = traj.max_sum_drift.max((p.iter().sum::<f64>() - 1.0).abs());
        diagnostics.push(IntervalDiagnostic {
            interval: beta,
            bc_residual: continuity,
            weight_min: p.iter().copied().fold(f64::INFINITY, f64::min),
            cond_uaa: f64::NAN,
        });
        traj.samples.push(sample(t, p.clone(), Variant::Spme, e));
    }
    Ok(MicroRun { trajectory: traj, diagnostics })
}

/// Exact solution of the antisymmetric boundary conditions on one interval.
#[derive(Debug, Clone)]
pub struct BoundarySolution {
    /// Branches at the start of the interval.
    pub start: BranchMixture,
    /// Antimatter weights `x_k = |ψ0^(k)|²`, which are also the antimatter
    /// probabilities at the end of the interval.
    pub weights: Vec<f64>,
    pub cond_uaa: f64,
}

impl BoundarySolution {
    /// Largest violation of the four boundary conditions and of probability
    /// continuity at the start of the interval, given the propagator used.
    pub fn residual(&self, u: &EvolutionOperator, p: &[f64]) -> f64 {
        let dim = self.start.dim();
        let n = dim / 2;
        let end = self.start.evolve(u);
        let mut r: f64 = 0.0;
        for k in 0..dim {
            let (s, e) = (&self.start.branch(k), &end.branch(k));
            if k >= n {
                // matter branch: diagonal on matter at start, no antimatter at end
                for j in n..dim {
                    let target = if j == k { p[k].max(0.0).sqrt() } else { 0.0 };
                    r = r.max((s[j] - Complex64::new(target, 0.0)).norm());
                }
                for j in 0..n {
                    r = r.max(e[j].norm());
                }
            } else {
                // antimatter branch: no matter at start, diagonal on antimatter at end
                for j in n..dim {
                    r = r.max(s[j].norm());
                }
                for j in 0..n {
                    let target = if j == k { self.weights[k].sqrt() } else { 0.0 };
                    r = r.max((e[j].norm() - target).abs());
                    if j != k {
                        r = r.max(e[j].norm());
                    }
                }
            }
        }
        let probs = self.start.probabilities();
        for j in 0..dim {
            r = r.max((probs[j] - p[j]).abs());
        }
        r
    }
}

/// Solves the antisymmetric boundary-value problem on one interval.
///
/// With `U` split into antimatter (`a`) and matter (`m`) blocks:
///
/// - matter branch `k`: `ψ = √p_k e_k + a`, `a = -U_aa⁻¹ U_am √p_k e_k`,
///   so that its antimatter part vanishes at the end of the interval;
/// - antimatter branch `k`: `ψ = √x_k U_aa⁻¹ e_k` (no matter part at the
///   start, `√x_k e_k` on antimatter at the end);
/// - the weights solve `Σ_k |(U_aa⁻¹)_jk|² x_k = p_j - Σ_matter |a_j|²`,
///   i.e. antimatter probability is continuous across the interval start.
///
/// A negative weight means the antisymmetric dynamics cannot be continued
/// and is reported as [`MicrosimError::EndOfTime`].
pub fn branch_boundary_solve(u: &EvolutionOperator, p: &[f64], t: f64) -> Result<BoundarySolution, MicrosimError> {
    let dim = u.dim();
    if p.len() != dim {
        return Err(MicrosimError::Dimension { got: p.len(), dim });
    }
    let n = dim / 2;
    let uaa = u.u.view((0, 0), (n, n)).into_owned();
    let uam = u.u.view((0, n), (n, n)).into_owned();

    let sv = uaa.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(MicrosimError::IllConditioned { cond });
    }
    let inv = uaa.try_inverse().ok_or(MicrosimError::IllConditioned { cond })?;

    let mut shapes = vec![CVector::zeros(dim); dim];
    let mut weights = p.to_vec();
    let mut admixture = vec![0.0; n];
    let coupling = -(&inv * &uam);
    for k in n..dim {
        let b = &mut shapes[k];
        b[k] = Complex64::new(1.0, 0.0);
        for j in 0..n {
            let a = coupling[(j, k - n)];
            b[j] = a;
            admixture[j] += p[k] * a.norm_sqr();
        }
    }

    let m = DMatrix::from_fn(n, n, |j, k| inv[(j, k)].norm_sqr());
    let rhs = DVector::from_fn(n, |j, _| p[j] - admixture[j]);
    let mut x = m.lu().solve(&rhs).ok_or(MicrosimError::IllConditioned { cond })?;
    let (worst, &xmin) = x
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("n >= 1");
    if xmin < -WEIGHT_ROUNDOFF {
        return Err(MicrosimError::EndOfTime { state: StateIndex::from_storage(worst, n), weight: xmin });
    }
    x.apply(|v| *v = v.max(0.0));

    for k in 0..n {
        let b = &mut shapes[k];
        for j in 0..n {
            b[j] = inv[(j, k)];
        }
        weights[k] = x[k];
    }
    Ok(BoundarySolution { start: BranchMixture { shapes, weights, t }, weights: x.as_slice().to_vec(), cond_uaa: cond })
}

/// Antisymmetric decoherence cycles starting at `t = 0`; stops with an
/// `EndOfTime` event when the weight solve turns negative.
pub fn antisymmetric_cycle(sys: &SystemSpec, p0: &[f64], cfg: &CycleConfig) -> Result<MicroRun, MicrosimError> {
    cfg.validate(sys)?;
    check_p0(sys, p0)?;
    let u = cycle_propagator(sys, cfg)?;
    let e = sys.energies();
    let n = sys.n();
    let mut p = p0.to_vec();
    let mut traj = Trajectory {
        variant: Variant::Apme,
        samples: vec![sample(0.0, p.clone(), Variant::Apme, e)],
        events: Vec::new(),
        max_sum_drift: (p.iter().sum::<f64>() - 1.0).abs(),
    };
    let mut diagnostics = Vec::with_capacity(cfg.n_cycles);
    for beta in 0..cfg.n_cycles {
        let t = beta as f64 * cfg.tau_d;
        let sol = match branch_boundary_solve(&u, &p, t) {
            Ok(sol) => sol,
            Err(MicrosimError::EndOfTime { state, weight }) => {
                // locate inside the interval by linear interpolation of p_state
                let pj = p[state.to_storage(n)];
                let frac = if pj - weight > 0.0 { pj / (pj - weight) } else { 0.0 };
                traj.events.push(TimeBoundaryEvent {
                    kind: BoundaryKind::EndOfTime,
                    t_event: t + frac * cfg.tau_d,
                    state,
                    p_state: 0.0,
                });
                break;
            }
            Err(other) => return Err(other),
        };
        let residual = sol.residual(&u, &p);
        let weight_min = sol.weights.iter().copied().fold(f64::INFINITY, f64::min);
        p = sol.start.evolve(&u).probabilities();
        traj.max_sum_drift = traj.max_sum_drift.max((p.iter().sum::<f64>() - 1.0).abs());
        diagnostics.push(IntervalDiagnostic { interval: beta, bc_residual: residual, weight_min, cond_uaa: sol.cond_uaa });
        traj.samples.push(sample(t + cfg.tau_d, p.clone(), Variant::Apme, e));
    }
    Ok(MicroRun { trajectory: traj, diagnostics })
}

/// Runs the cycle type matching `variant`.
pub fn cycle(sys: &SystemSpec, p0: &[f64], cfg: &CycleConfig, variant: Variant) -> Result<MicroRun, MicrosimError> {
    match variant {
        Variant::Spme => symmetric_cycle(sys, p0, cfg),
        Variant::Apme => antisymmetric_cycle(sys, p0, cfg),
    }
}

/// Master-equation counterpart of a cycle run: finite-window rates at
/// `Δt = τ_d`, RK4 with `steps_per_cycle` steps per interval, sampled at
/// interval boundaries.
pub fn master_counterpart(
    sys: &SystemSpec,
    p0: &[f64],
    cfg: &CycleConfig,
    variant: Variant,
    steps_per_cycle: usize,
) -> Result<Trajectory, MicrosimError> {
    let km = kinetic_coefficients(sys, RateMode::FiniteWindow { dt: cfg.tau_d })?;
    let gen = generator(&km, variant);
    let steps = steps_per_cycle.max(1);
    let opts = IntegrateOptions::new(cfg.tau_d / steps as f64).record_every(steps);
    Ok(integrate_with(&gen, p0, 0.0, cfg.n_cycles as f64 * cfg.tau_d, opts)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// `max |p_micro - p_master|` over common samples and states.
    pub max_abs_err: f64,
    pub err_at_end: f64,
    /// Largest range `max_t p_j - min_t p_j` of the master trajectory.
    pub variation: f64,
    /// `max_abs_err / variation`.
    pub relative_err: f64,
    pub compared: usize,
    /// Filled in by [`lambda_sweep`].
    pub lambda_scaling_slope: Option<f64>,
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Entrywise comparison on the common time grid.
///
/// Samples are paired in order; a master sample that is an off-grid event
/// endpoint (or a micro run ending early) closes the comparison, any other
/// time mismatch is an error.
pub fn compare_to_master(micro: &Trajectory, master: &Trajectory) -> Result<ComparisonReport, MicrosimError> {
    let mut max_abs_err: f64 = 0.0;
    let mut err_at_end = 0.0;
    let mut compared = 0;
    let pairs = micro.samples.len().min(master.samples.len());
    for i in 0..pairs {
        let (a, b) = (&micro.samples[i], &master.samples[i]);
        if !same_time(a.t, b.t) {
            let master_event_end = i + 1 == master.samples.len() && master.terminated();
            let micro_event_end = i + 1 == micro.samples.len() && micro.terminated();
            if master_event_end || micro_event_end {
                break;
            }
            return Err(MicrosimError::GridMismatch { index: i, t_micro: a.t, t_master: b.t });
        }
        if a.p.len() != b.p.len() {
            return Err(MicrosimError::Dimension { got: a.p.len(), dim: b.p.len() });
        }
        let err = a.p.iter().zip(&b.p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        max_abs_err = max_abs_err.max(err);
        err_at_end = err;
        compared = i + 1;
    }
    let dim = master.samples[0].p.len();
    let variation = (0..dim)
        .map(|j| {
            let vals = master.samples[..compared.max(1)].iter().map(|s| s.p[j]);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            hi - lo
        })
        .fold(0.0, f64::max);
    let relative_err = if variation > 0.0 { max_abs_err / variation } else if max_abs_err == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(ComparisonReport { max_abs_err, err_at_end, variation, relative_err, compared, lambda_scaling_slope: None })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn scaling_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), (x, y)| (n + (x - mx) * (y - my), d + (x - mx) * (x - mx)));
    num / den
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<(f64, ComparisonReport)>,
    /// Log-log slope of `max_abs_err` against λ.
    pub slope: f64,
    /// Log-log slope of `relative_err` against λ.
    pub relative_slope: f64,
}

/// Micro-vs-master comparison repeated over `lambdas` with everything else
/// fixed; the slopes measure how fast the discrepancy closes.
///
/// For two states the leading correction to the rates is fourth order in λ.
/// With three or more states, paths through an intermediate state add a
/// third-order term, so the relative discrepancy falls only like λ.
pub fn lambda_sweep(
    sys: &SystemSpec,
    p0: &[f64],
    cfg: &CycleConfig,
    variant: Variant,
    lambdas: &[f64],
    steps_per_cycle: usize,
) -> Result<SweepReport, MicrosimError> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let s = sys.with_lambda(lambda)?;
        let micro = cycle(&s, p0, cfg, variant)?;
        let master = master_counterpart(&s, p0, cfg, variant, steps_per_cycle)?;
        points.push((lambda, compare_to_master(&micro.trajectory, &master)?));
    }
    let abs: Vec<(f64, f64)> = points.iter().map(|(l, r)| (*l, r.max_abs_err)).collect();
    let rel: Vec<(f64, f64)> = points.iter().map(|(l, r)| (*l, r.relative_err)).collect();
    let slope = scaling_slope(&abs);
    for (_, r) in points.iter_mut() {
        r.lambda_scaling_slope = Some(slope);
    }
    Ok(SweepReport { points, slope, relative_slope: scaling_slope(&rel) })
}

/// `|U_jk|²` for real-valued bookkeeping in tests and reports.
pub fn transition_matrix(u: &EvolutionOperator) -> RMatrix {
    u.transition_probabilities()
}

/// Probability vector as an `RVector`.
pub fn as_vector(p: &[f64]) -> RVector {
    RVector::from_column_slice(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{two_state_solution, Omega};
    use crate::system::{build_system, random_system, RawSystem, SymmetryClass};
    use crate::unitary::{exact_propagator, perturbative_propagator, q1_kernel};

    fn two_state(lambda: f64) -> SystemSpec {
        let z = Complex64::new(0.0, 0.0);
        let v = Complex64::new(0.6, 0.8);
        build_system(RawSystem {
            energies: vec![40.0, 40.0],
            v: DMatrix::from_row_slice(2, 2, &[z, v, v.conj(), z]),
            lambda,
            phases: None,
            symmetry: SymmetryClass::None,
        })
        .unwrap()
    }

    #[test]
    fn decohere_examples() {
        let dim = 3;
        let e1 = basis_vector(dim, 1);
        let mix = decohere_pure(&e1, 0.0);
        assert_eq!((0..dim).filter(|&k| mix.branch(k).norm() > 0.0).count(), 1);
        assert_eq!(mix.branch(1), e1);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sup = CVector::from_vec(vec![Complex64::new(s, 0.0), Complex64::new(0.0, s), Complex64::new(0.0, 0.0)]);
        let mix = decohere_pure(&sup, 0.0);
        assert!((mix.branch(0).norm_squared() - 0.5).abs() < 1e-15);
        assert!((mix.branch(1).norm_squared() - 0.5).abs() < 1e-15);

        let rho = &sup * sup.adjoint();
        let out = decohere_density(&rho, 0.0).density();
        for j in 0..dim {
            assert!((out[(j, j)] - rho[(j, j)]).norm() < 1e-15);
            for k in 0..dim {
                if j != k {
                    assert_eq!(out[(j, k)], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn no_coupling_means_no_motion() {
        let raw = RawSystem {
            energies: vec![40.0, 40.0, 40.0, 40.0],
            v: DMatrix::zeros(4, 4),
            lambda: 0.01,
            phases: None,
            symmetry: SymmetryClass::None,
        };
        let sys = build_system(raw).unwrap();
        let p0 = [0.1, 0.2, 0.3, 0.4];
        let cfg = CycleConfig::new(0.5, 50);
        for variant in [Variant::Spme, Variant::Apme] {
            let run = cycle(&sys, &p0, &cfg, variant).unwrap();
            for s in &run.trajectory.samples {
                assert!(s.p.iter().zip(&p0).all(|(a, b)| (a - b).abs() < 1e-14), "{variant}: {:?}", s.p);
            }
        }
        let u = exact_propagator(&sys, 0.5).unwrap();
        let sol = branch_boundary_solve(&u, &p0, 0.0).unwrap();
        assert!((sol.weights[0] - 0.1).abs() < 1e-15 && (sol.weights[1] - 0.2).abs() < 1e-15);
        for k in 0..4 {
            let b = sol.start.branch(k);
            assert!((0..4).filter(|&j| j != k).all(|j| b[j].norm() < 1e-15));
        }
    }

    #[test]
    fn symmetric_single_interval_increment() {
        let lambda = 0.01;
        let sys = random_system(3, SymmetryClass::None, lambda, 2, 12).unwrap();
        let tau = 0.5;
        let u = exact_propagator(&sys, tau).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: tau }).unwrap();
        let p0 = [0.3, 0.1, 0.05, 0.25, 0.2, 0.1];
        let end = decohere(&p0, 0.0).evolve(&u);
        for k in 0..6 {
            for j in 0..6 {
                if j == k {
                    continue;
                }
                let pj = end.branch(k)[j].norm_sqr();
                let predicted = km.matrix()[(j, k)] * p0[k] * tau;
                assert!((pj - predicted).abs() <= 50.0 * lambda.powi(3) * p0[k] * tau, "{j},{k}: {pj} vs {predicted}");
            }
        }
        let run = symmetric_cycle(&sys, &p0, &CycleConfig::new(tau, 10)).unwrap();
        assert!(run.trajectory.max_sum_drift <= 1e-12);
        assert!(run.diagnostics.iter().all(|d| d.bc_residual <= 1e-10));
    }

    #[test]
    fn boundary_solve_residuals_and_conservation() {
        let sys = random_system(3, SymmetryClass::None, 0.01, 2, 31).unwrap();
        let p0 = [0.2, 0.1, 0.15, 0.2, 0.2, 0.15];
        for mode in [PropagatorMode::Exact, PropagatorMode::Perturbative(2)] {
            let u = propagator(&sys, 0.5, mode).unwrap();
            let sol = branch_boundary_solve(&u, &p0, 0.0).unwrap();
            assert!(sol.residual(&u, &p0) <= 1e-10, "{mode:?}: {}", sol.residual(&u, &p0));
            let end = sol.start.evolve(&u).probabilities();
            for j in 0..3 {
                assert!((end[j] - sol.weights[j]).abs() <= 1e-12);
            }
            if mode == PropagatorMode::Exact {
                assert!((end.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matter_branch_admixture_is_first_order() {
        let lambda = 1e-3;
        let sys = two_state(lambda);
        let tau = 0.5;
        let u = exact_propagator(&sys, tau).unwrap();
        let p0 = [0.5, 0.5];
        let sol = branch_boundary_solve(&u, &p0, 0.0).unwrap();
        let a = sol.start.branch(1)[0].norm();
        let expected = lambda * 1.0 * q1_kernel(40.0, 40.0, tau).re * 0.5f64.sqrt();
        assert!((a - expected).abs() <= 10.0 * lambda * lambda, "{a} vs {expected}");

        let up = perturbative_propagator(&sys, tau, 2).unwrap();
        let sol_p = branch_boundary_solve(&up, &p0, 0.0).unwrap();
        assert!((sol_p.start.branch(1)[0] - sol.start.branch(1)[0]).norm() <= 10.0 * lambda * lambda);
    }

    #[test]
    fn antisymmetric_increments_follow_apme() {
        let lambda = 0.01;
        let sys = random_system(3, SymmetryClass::None, lambda, 1, 40).unwrap();
        let tau = 0.5;
        let p0 = [0.2, 0.1, 0.15, 0.2, 0.2, 0.15];
        let run = antisymmetric_cycle(&sys, &p0, &CycleConfig::new(tau, 1)).unwrap();
        let p1 = &run.trajectory.samples[1].p;
        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: tau }).unwrap();
        let g = generator(&km, Variant::Apme);
        let rate = g.matrix() * as_vector(&p0);
        for j in 0..6 {
            let fd = (p1[j] - p0[j]) / tau;
            assert!((fd - rate[j]).abs() <= 10.0 * lambda.powi(3), "{j}: {fd} vs {}", rate[j]);
        }
    }

    #[test]
    fn two_state_apme_linear_growth() {
        let lambda = 0.01;
        let sys = two_state(lambda);
        let tau = 0.5;
        let w = lambda * lambda * tau;
        let run = antisymmetric_cycle(&sys, &[0.6, 0.4], &CycleConfig::new(tau, 2000)).unwrap();
        let last = run.trajectory.last();
        let expected = two_state_solution(0.4, &Omega::Constant(w), Variant::Apme, 0.0, last.t).unwrap();
        let growth = expected.matter - 0.4;
        assert!((last.p[1] - expected.matter).abs() <= 3.0 * lambda * growth);
    }

    #[test]
    fn antisymmetric_run_reaches_end_of_time() {
        let sys = two_state(0.02);
        let tau = 0.5;
        let w = 0.02f64.powi(2) * tau;
        let p_anti = 0.05;
        let run = antisymmetric_cycle(&sys, &[p_anti, 1.0 - p_anti], &CycleConfig::new(tau, 2000)).unwrap();
        let ev = run.trajectory.events.first().expect("end of time");
        assert_eq!(ev.kind, BoundaryKind::EndOfTime);
        assert!((ev.t_event - p_anti / w).abs() <= 3.0 * tau, "{} vs {}", ev.t_event, p_anti / w);
    }

    #[test]
    fn two_state_spme_tracks_closed_form() {
        let lambda = 0.01;
        let sys = two_state(lambda);
        let tau = 0.5;
        let w = lambda * lambda * tau;
        let run = symmetric_cycle(&sys, &[0.1, 0.9], &CycleConfig::new(tau, 2000)).unwrap();
        let mut worst: f64 = 0.0;
        for s in &run.trajectory.samples {
            let exact = two_state_solution(0.9, &Omega::Constant(w), Variant::Spme, 0.0, s.t).unwrap();
            worst = worst.max((s.p[1] - exact.matter).abs());
        }
        let variation = 0.9 - run.trajectory.last().p[1];
        assert!(worst <= 3.0 * lambda * variation, "{worst} vs {variation}");
    }

    #[test]
    fn sectors_without_cross_coupling() {
        // matter block couples +1,+2; antimatter block couples -1,-2; nothing across
        let z = Complex64::new(0.0, 0.0);
        let u = Complex64::new(0.3, 0.7);
        let v = Complex64::new(-0.9, 0.2);
        let mut m = DMatrix::from_element(4, 4, z);
        m[(0, 1)] = u;
        m[(1, 0)] = u.conj();
        m[(2, 3)] = v;
        m[(3, 2)] = v.conj();
        let lambda = 0.01;
        let sys = build_system(RawSystem { energies: vec![40.0; 4], v: m, lambda, phases: None, symmetry: SymmetryClass::None })
            .unwrap();
        let cfg = CycleConfig::new(0.5, 2000);
        let p0 = [0.3, 0.2, 0.35, 0.15];
        let anti = antisymmetric_cycle(&sys, &p0, &cfg).unwrap();
        let sym = symmetric_cycle(&sys, &p0, &cfg).unwrap();
        assert!(!anti.trajectory.terminated());
        for (a, s) in anti.trajectory.samples.iter().zip(&sym.trajectory.samples) {
            assert!((a.p[2] - s.p[2]).abs() <= 1e-12 && (a.p[3] - s.p[3]).abs() <= 1e-12);
        }

        let km = kinetic_coefficients(&sys, RateMode::FiniteWindow { dt: cfg.tau_d }).unwrap();
        let spme = generator(&km, Variant::Spme);
        let t_end = cfg.n_cycles as f64 * cfg.tau_d;
        let opts = IntegrateOptions::new(cfg.tau_d / 20.0).record_every(20);
        let fwd = integrate_with(&spme, &p0, 0.0, t_end, opts).unwrap();
        let bwd = integrate_with(&spme, &p0, 0.0, -t_end, opts).unwrap();
        assert!(!bwd.terminated());
        let (mut err_m, mut err_a): (f64, f64) = (0.0, 0.0);
        for (i, s) in anti.trajectory.samples.iter().enumerate() {
            err_m = err_m.max((s.p[2] - fwd.samples[i].p[2]).abs());
            err_a = err_a.max((s.p[0] - bwd.samples[i].p[0]).abs());
        }
        let var_m = (fwd.last().p[2] - p0[2]).abs();
        let var_a = (bwd.last().p[0] - p0[0]).abs();
        assert!(var_m > 1e-3 && var_a > 1e-3);
        assert!(err_m <= 3.0 * lambda * var_m, "{err_m} vs {var_m}");
        assert!(err_a <= 3.0 * lambda * var_a, "{err_a} vs {var_a}");
        // the antimatter pair moves apart: time-reversed relaxation
        assert!(anti.trajectory.last().p[0] > p0[0] && anti.trajectory.last().p[1] < p0[1]);
    }

    #[test]
    fn agreement_improves_with_smaller_lambda() {
        let sys = random_system(2, SymmetryClass::None, 0.01, 2, 17).unwrap();
        let cfg = CycleConfig::new(12.0 / sys.max_abs_energy(), 400);
        let p0 = [0.1, 0.2, 0.3, 0.4];
        for variant in [Variant::Spme, Variant::Apme] {
            let sweep = lambda_sweep(&sys, &p0, &cfg, variant, &[0.04, 0.02, 0.01, 0.005, 0.004], 20).unwrap();
            let errs: Vec<f64> = sweep.points.iter().map(|(_, r)| r.max_abs_err).collect();
            assert!(errs.windows(2).all(|w| w[1] < w[0]), "{variant}: {errs:?}");
            assert!(sweep.slope >= 1.0);
        }
    }

    #[test]
    fn off_shell_energy_drift_shrinks_with_lambda() {
        let drift = |lambda: f64| {
            let sys = random_system(2, SymmetryClass::None, lambda, 2, 5).unwrap();
            let run = symmetric_cycle(&sys, &[0.1, 0.2, 0.3, 0.4], &CycleConfig::new(0.5, 50)).unwrap();
            run.trajectory.energy_drift()
        };
        let (a, b) = (drift(0.02), drift(0.01));
        assert!(b < a && b > 0.0, "{a} {b}");
    }

    #[test]
    fn comparison_report_basics() {
        let sys = two_state(0.01);
        let cfg = CycleConfig::new(0.5, 20);
        let run = symmetric_cycle(&sys, &[0.3, 0.7], &cfg).unwrap();
        let r = compare_to_master(&run.trajectory, &run.trajectory).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
        assert_eq!(r.compared, 21);

        let mut shifted = run.trajectory.clone();
        shifted.samples[3].t += 0.1;
        assert!(matches!(compare_to_master(&run.trajectory, &shifted), Err(MicrosimError::GridMismatch { index: 3, .. })));
        assert!((scaling_slope(&[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let sys = two_state(0.01);
        assert!(CycleConfig::new(0.0, 1).validate(&sys).is_err());
        assert!(CycleConfig::new(0.5, 1).validate(&sys).unwrap().is_empty());
        assert_eq!(CycleConfig::new(0.1, 1).validate(&sys).unwrap().len(), 1);
        assert!(CycleConfig::new(0.5, 1).with_propagator(PropagatorMode::Perturbative(1)).validate(&sys).is_err());
    }
}
