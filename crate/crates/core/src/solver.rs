//! Time integration of the master equations.
//!
//! Integration is classical fixed-step RK4 on `dp/dt = A p`. Probabilities
//! are never renormalised or clamped: when a component would cross zero the
//! step is bisected, the trajectory is truncated at the crossing and a
//! [`TimeBoundaryEvent`] is recorded (end of time going forward, beginning
//! of time going backward).
//!
//! Note on entropy: the sum `S = -Σ C'_k p_k ln p_k` has time derivative
//! [`entropy_production`] `- Σ_k C'_k dp_k/dt`. The second term vanishes for
//! SPME but equals `-2 Σ w_ma (p_m + p_a)` over coupled matter/antimatter
//! pairs for APME, so APME entropy can fall while `p_m p_a > e⁻²` for such a
//! pair. [`entropy_rate`] returns the full derivative.

use std::fmt;

use nalgebra::DVector;
use thiserror::Error;

use crate::kinetics::{GeneratorMatrix, Variant};
use crate::system::StateIndex;
use crate::{RMatrix, RVector};

/// Probabilities below this are treated as exact zeros in `p ln p`.
pub const LOG_FLOOR: f64 = 1e-300;
/// A located boundary event leaves the vanishing probability in `[0, EVENT_TOL]`.
pub const EVENT_TOL: f64 = 1e-9;
/// Accepted deviation of an initial state from the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("step must be positive and finite, got {0}")]
    Step(f64),
    #[error("initial state has length {got}, generator has dimension {dim}")]
    Dimension { got: usize, dim: usize },
    #[error("initial state is outside the simplex (sum = {sum}, min = {min})")]
    NotInSimplex { sum: f64, min: f64 },
    #[error("failed to locate zero crossing of state {state} near t = {t}")]
    EventLocate { state: StateIndex, t: f64 },
    #[error("two-state solution is only defined for 2 states, got {0}")]
    NotTwoState(usize),
    #[error("{kind} reached at Omega = {limit}; requested Omega = {omega}")]
    OutsideDomain { kind: BoundaryKind, limit: f64, omega: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityState {
    pub p: Vec<f64>,
    pub t: f64,
}

impl ProbabilityState {
    pub fn new(p: Vec<f64>, t: f64) -> Result<Self, SolverError> {
        check_simplex(&p)?;
        Ok(ProbabilityState { p, t })
    }

    /// Uniform distribution over `dim` states.
    pub fn uniform(dim: usize, t: f64) -> Self {
        ProbabilityState { p: vec![1.0 / dim as f64; dim], t }
    }
}

fn check_simplex(p: &[f64]) -> Result<(), SolverError> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sum - 1.0).abs().le(&SIMPLEX_TOL) || min < -SIMPLEX_TOL || p.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NotInSimplex { sum, min });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    BeginningOfTime,
    EndOfTime,
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryKind::BeginningOfTime => "BeginningOfTime",
            BoundaryKind::EndOfTime => "EndOfTime",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeBoundaryEvent {
    pub kind: BoundaryKind,
    pub t_event: f64,
    pub state: StateIndex,
    /// Probability of `state` at `t_event`.
    pub p_state: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub p: Vec<f64>,
    pub entropy: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub variant: Variant,
    pub samples: Vec<Sample>,
    pub events: Vec<TimeBoundaryEvent>,
    /// Largest `|Σp - 1|` seen at any step (recorded or not).
    pub max_sum_drift: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn terminated(&self) -> bool {
        !self.events.is_empty()
    }

    /// Largest relative change of `E` against the first sample.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.first().energy;
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        self.samples.iter().map(|s| (s.energy - e0).abs() / scale).fold(0.0, f64::max)
    }

    /// Largest decrease of `S` between consecutive samples (0 if monotone).
    pub fn max_entropy_decrease(&self) -> f64 {
        self.samples.windows(2).map(|w| w[0].entropy - w[1].entropy).fold(0.0, f64::max)
    }
}

/// `S = -Σ C'_k p_k ln p_k` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64], variant: Variant) -> f64 {
    let n = p.len() / 2;
    p.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = variant.sign(StateIndex::from_storage(i, n));
            -c * plogp(x)
        })
        .sum()
}

fn plogp(x: f64) -> f64 {
    if x < LOG_FLOOR {
        0.0
    } else {
        x * x.ln()
    }
}

/// Matter and antimatter parts, each `-Σ p ln p >= 0`.
///
/// `entropy(p, Spme) = S_m + S_a` and `entropy(p, Apme) = S_m - S_a`.
pub fn entropy_split(p: &[f64]) -> (f64, f64) {
    let n = p.len() / 2;
    let s_a = -p[..n].iter().map(|&x| plogp(x)).sum::<f64>();
    let s_m = -p[n..].iter().map(|&x| plogp(x)).sum::<f64>();
    (s_m, s_a)
}

/// `E = Σ ε_j p_j`.
pub fn energy(p: &[f64], energies: &[f64]) -> f64 {
    p.iter().zip(energies).map(|(p, e)| p * e).sum()
}

/// Summands `½ w_jk (C'_j ln p_k - C'_k ln p_j)(C'_k p_k - C'_j p_j)` for
/// `j ≠ k`; each one is nonnegative for positive `p`.
pub fn entropy_production_terms(w: &RMatrix, p: &[f64], signs: &[f64]) -> RMatrix {
    let dim = p.len();
    RMatrix::from_fn(dim, dim, |j, k| {
        if j == k || w[(j, k)] == 0.0 {
            return 0.0;
        }
        let (cj, ck) = (signs[j], signs[k]);
        0.5 * w[(j, k)] * (cj * p[k].ln() - ck * p[j].ln()) * (ck * p[k] - cj * p[j])
    })
}

/// Sum of [`entropy_production_terms`].
pub fn entropy_production(w: &RMatrix, p: &[f64], signs: &[f64]) -> f64 {
    entropy_production_terms(w, p, signs).sum()
}

/// Exact `dS/dt = -Σ C'_k (ln p_k + 1) (A p)_k` along the flow.
pub fn entropy_rate(gen: &GeneratorMatrix, p: &[f64]) -> f64 {
    let dp = gen.matrix() * DVector::from_column_slice(p);
    gen.signs().iter().zip(p).zip(dp.iter()).map(|((c, &x), d)| -c * (x.ln() + 1.0) * d).sum()
}

/// Fixed-step settings for [`integrate_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub step: f64,
    /// Keep every `record_every`-th step (the endpoints are always kept).
    pub record_every: usize,
}

impl IntegrateOptions {
    pub fn new(step: f64) -> Self {
        IntegrateOptions { step, record_every: 1 }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }
}

/// `1e-3 / ‖A‖max`.
pub fn default_step(gen: &GeneratorMatrix) -> f64 {
    let m = gen.max_abs();
    if m > 0.0 {
        1e-3 / m
    } else {
        1e-3
    }
}

/// Integrates `dp/dt = A p` from `t0` to `t1` (`t1 < t0` runs backward).
pub fn integrate(gen: &GeneratorMatrix, p0: &[f64], t0: f64, t1: f64, step: f64) -> Result<Trajectory, SolverError> {
    integrate_with(gen, p0, t0, t1, IntegrateOptions::new(step))
}

pub fn integrate_with(
    gen: &GeneratorMatrix,
    p0: &[f64],
    t0: f64,
    t1: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, SolverError> {
    let a = gen.matrix();
    run(gen.variant(), gen.energies(), |_t, p: &RVector| a * p, p0, t0, t1, opts)
}

/// Integration with a time-dependent generator `A(t)`, evaluated at every
/// RK4 stage time.
pub fn integrate_time_dependent<F>(
    variant: Variant,
    energies: &[f64],
    generator_at: F,
    p0: &[f64],
    t0: f64,
    t1: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, SolverError>
where
    F: Fn(f64) -> RMatrix,
{
    run(variant, energies, |t, p: &RVector| generator_at(t) * p, p0, t0, t1, opts)
}

fn rk4_step<F>(rhs: &F, t: f64, p: &RVector, h: f64) -> RVector
where
    F: Fn(f64, &RVector) -> RVector,
{
    let k1 = rhs(t, p);
    let k2 = rhs(t + 0.5 * h, &(p + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(p + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(p + &k3 * h));
    p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn argmin(p: &RVector) -> (usize, f64) {
    p.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc })
}

fn run<F>(
    variant: Variant,
    energies: &[f64],
    rhs: F,
    p0: &[f64],
    t0: f64,
    t1: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, SolverError>
where
    F: Fn(f64, &RVector) -> RVector,
{
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(SolverError::Step(opts.step));
    }
    if p0.len() != energies.len() {
        return Err(SolverError::Dimension { got: p0.len(), dim: energies.len() });
    }
    check_simplex(p0)?;

    let n = energies.len() / 2;
    let sample = |t: f64, p: &RVector| {
        let p = p.as_slice().to_vec();
        Sample { t, entropy: entropy(&p, variant), energy: energy(&p, energies), p }
    };
    let mut p = RVector::from_column_slice(p0);
    let mut traj = Trajectory {
        variant,
        samples: vec![sample(t0, &p)],
        events: Vec::new(),
        max_sum_drift: (p.sum() - 1.0).abs(),
    };
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(traj);
    }
    let dir = span.signum();
    let nsteps = ((span.abs() / opts.step) - 1e-9).ceil().max(1.0) as usize;
    let kind = if dir > 0.0 { BoundaryKind::EndOfTime } else { BoundaryKind::BeginningOfTime };

    for i in 0..nsteps {
        let t = t0 + dir * opts.step * i as f64;
        let t_next = if i + 1 == nsteps { t1 } else { t0 + dir * opts.step * (i + 1) as f64 };
        let h = t_next - t;
        let next = rk4_step(&rhs, t, &p, h);

        if next.iter().any(|&x| x < 0.0) {
            // bisect the step fraction for the first crossing
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            let mut at_lo = p.clone();
            let mut located = false;
            for _ in 0..200 {
                let (_, m) = argmin(&at_lo);
                if m <= EVENT_TOL {
                    located = true;
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let trial = rk4_step(&rhs, t, &p, mid * h);
                if trial.iter().any(|&x| x < 0.0) {
                    hi = mid;
                } else {
                    lo = mid;
                    at_lo = trial;
                }
            }
            let (idx, m) = argmin(&at_lo);
            let t_event = t + lo * h;
            let state = StateIndex::from_storage(idx, n);
            if !located {
                return Err(SolverError::EventLocate { state, t: t_event });
            }
            traj.max_sum_drift = traj.max_sum_drift.max((at_lo.sum() - 1.0).abs());
            traj.samples.push(sample(t_event, &at_lo));
            traj.events.push(TimeBoundaryEvent { kind, t_event, state, p_state: m });
            return Ok(traj);
        }

        p = next;
        traj.max_sum_drift = traj.max_sum_drift.max((p.sum() - 1.0).abs());
        if (i + 1) % opts.record_every == 0 || i + 1 == nsteps {
            traj.samples.push(sample(t_next, &p));
        }
    }
    Ok(traj)
}

/// Accumulated rate `Ω(t, t0) = ∫ w dt'`.
pub enum Omega<'a> {
    Constant(f64),
    Callable(&'a dyn Fn(f64, f64) -> f64),
}

impl Omega<'_> {
    pub fn eval(&self, t0: f64, t: f64) -> f64 {
        match self {
            Omega::Constant(w) => w * (t - t0),
            Omega::Callable(f) => f(t, t0),
        }
    }
}

/// `∫_{t0}^{t} w(t') dt'` by composite Simpson.
pub fn omega_quadrature<F: Fn(f64) -> f64>(w: F, t0: f64, t: f64, panels: usize) -> f64 {
    let n = (panels.max(2) + 1) & !1;
    let h = (t - t0) / n as f64;
    let mut acc = w(t0) + w(t);
    for i in 1..n {
        acc += w(t0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateProbabilities {
    pub matter: f64,
    pub antimatter: f64,
}

impl TwoStateProbabilities {
    /// Storage order `(-1, +1)`.
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.antimatter, self.matter]
    }
}

/// Closed-form two-state solutions.
///
/// SPME: `p±1 = ½(1 ± (p⁺₀ - p⁻₀) e^{-2Ω})`. APME: `p⁺ = p⁺₀ + Ω`,
/// `p⁻ = p⁻₀ - Ω`, defined for `-p⁺₀ <= Ω <= p⁻₀`.
pub fn two_state_solution(
    p0_matter: f64,
    omega: &Omega<'_>,
    variant: Variant,
    t0: f64,
    t: f64,
) -> Result<TwoStateProbabilities, SolverError> {
    let p0_anti = 1.0 - p0_matter;
    let om = omega.eval(t0, t);
    match variant {
        Variant::Spme => {
            let d = (p0_matter - p0_anti) * (-2.0 * om).exp();
            Ok(TwoStateProbabilities { matter: 0.5 * (1.0 + d), antimatter: 0.5 * (1.0 - d) })
        }
        Variant::Apme => {
            if om > p0_anti {
                return Err(SolverError::OutsideDomain { kind: BoundaryKind::EndOfTime, limit: p0_anti, omega: om });
            }
            if om < -p0_matter {
                return Err(SolverError::OutsideDomain {
                    kind: BoundaryKind::BeginningOfTime,
                    limit: -p0_matter,
                    omega: om,
                });
            }
            Ok(TwoStateProbabilities { matter: p0_matter + om, antimatter: p0_anti - om })
        }
    }
}

/// `Ω < 0` at which backward two-state SPME drives the smaller probability
/// to zero: `e^{-2Ω} = 1/|p⁺₀ - p⁻₀|`. `None` when `p⁺₀ = p⁻₀`.
pub fn spme_beginning_of_time_omega(p0_matter: f64) -> Option<f64> {
    let d = (2.0 * p0_matter - 1.0).abs();
    (d > 0.0).then(|| 0.5 * d.ln())
}

/// Outcome of [`equilibrium`].
#[derive(Debug, Clone, PartialEq)]
pub enum EquilibriumOutcome {
    /// Stationary distribution: uniform over each connected class, carrying
    /// that class's initial mass.
    FixedPoint(ProbabilityState),
    /// No fixed point in the open simplex; the dynamics were run to their
    /// boundary.
    Terminal(TerminationReport),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminationReport {
    pub final_state: ProbabilityState,
    pub event: Option<TimeBoundaryEvent>,
    pub antimatter_total: f64,
}

/// Connected classes of the coupling graph `A_jk ≠ 0`, as a class id per state.
pub fn connected_classes(a: &RMatrix) -> Vec<usize> {
    let dim = a.nrows();
    let mut class = vec![usize::MAX; dim];
    for start in 0..dim {
        if class[start] != usize::MAX {
            continue;
        }
        class[start] = start;
        let mut stack = vec![start];
        while let Some(j) = stack.pop() {
            for k in 0..dim {
                if k != j && class[k] == usize::MAX && (a[(j, k)] != 0.0 || a[(k, j)] != 0.0) {
                    class[k] = start;
                    stack.push(k);
                }
            }
        }
    }
    class
}

pub fn class_uniform(classes: &[usize], p0: &[f64]) -> Vec<f64> {
    let dim = p0.len();
    let mut mass = vec![0.0; dim];
    let mut size = vec![0usize; dim];
    for (i, &c) in classes.iter().enumerate() {
        mass[c] += p0[i];
        size[c] += 1;
    }
    classes.iter().map(|&c| mass[c] / size[c] as f64).collect()
}

/// Long-time behaviour from `p0`.
///
/// SPME (and APME without matter/antimatter coupling, where class-uniform
/// states are still stationary) yields the class-uniform fixed point. APME
/// with coupling has no interior fixed point; it is integrated forward until
/// a boundary event or until `A p` vanishes.
pub fn equilibrium(gen: &GeneratorMatrix, p0: &[f64]) -> Result<EquilibriumOutcome, SolverError> {
    if p0.len() != gen.dim() {
        return Err(SolverError::Dimension { got: p0.len(), dim: gen.dim() });
    }
    check_simplex(p0)?;
    let classes = connected_classes(gen.matrix());
    if gen.variant() == Variant::Spme || !gen.has_cross_coupling() {
        return Ok(EquilibriumOutcome::FixedPoint(ProbabilityState {
            p: class_uniform(&classes, p0),
            t: f64::INFINITY,
        }));
    }

    let n = gen.n();
    let min_rate = gen
        .matrix()
        .iter()
        .map(|x| x.abs())
        .filter(|&x| x > 0.0)
        .fold(f64::INFINITY, f64::min);
    let chunk = 20.0 / min_rate;
    let step = default_step(gen);
    let mut p = p0.to_vec();
    let mut t = 0.0;
    for _ in 0..200 {
        let traj = integrate_with(gen, &p, t, t + chunk, IntegrateOptions::new(step).record_every(usize::MAX))?;
        let last = traj.last();
        p = last.p.clone();
        t = last.t;
        if let Some(ev) = traj.events.first() {
            return Ok(EquilibriumOutcome::Terminal(TerminationReport {
                antimatter_total: p[..n].iter().sum(),
                final_state: ProbabilityState { p, t },
                event: Some(ev.clone()),
            }));
        }
        let flow = gen.matrix() * RVector::from_column_slice(&p);
        if flow.amax() <= 1e-14 {
            break;
        }
    }
    Ok(EquilibriumOutcome::Terminal(TerminationReport {
        antimatter_total: p[..n].iter().sum(),
        final_state: ProbabilityState { p, t },
        event: None,
    }))
}

/// Integrates forward in chunks of length `chunk` until `done(p)` holds, an
/// event fires, or `max_chunks` chunks have run. Samples of all chunks are
/// concatenated into one trajectory.
pub fn relax<F>(
    gen: &GeneratorMatrix,
    p0: &[f64],
    opts: IntegrateOptions,
    chunk: f64,
    max_chunks: usize,
    done: F,
) -> Result<Trajectory, SolverError>
where
    F: Fn(&[f64]) -> bool,
{
    let mut traj = integrate_with(gen, p0, 0.0, chunk, opts)?;
    for i in 1..max_chunks {
        if traj.terminated() || done(&traj.last().p) {
            break;
        }
        let last = traj.last().clone();
        let next = integrate_with(gen, &last.p, last.t, (i + 1) as f64 * chunk, opts)?;
        traj.samples.extend(next.samples.into_iter().skip(1));
        traj.events.extend(next.events);
        traj.max_sum_drift = traj.max_sum_drift.max(next.max_sum_drift);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{generator, kinetic_coefficients, RateMode};
    use crate::system::{random_system, SymmetryClass};
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        let u = vec![0.25; 4];
        assert!((entropy(&u, Variant::Spme) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&u, Variant::Spme) - 1.386294).abs() < 1e-6);
        let point = vec![0.0, 0.0, 1.0, 0.0];
        assert_eq!(entropy(&point, Variant::Spme), 0.0);
        assert_eq!(entropy(&point, Variant::Apme), 0.0);
        assert_eq!(entropy(&[0.5, 0.5], Variant::Apme), 0.0);
    }

    #[test]
    fn entropy_split_examples() {
        let (s_m, s_a) = entropy_split(&[0.0, 0.0, 0.3, 0.7]);
        assert_eq!(s_a, 0.0);
        assert!(s_m > 0.0);
        let sym = [0.1, 0.4, 0.4, 0.1];
        let (s_m, s_a) = entropy_split(&sym);
        assert!((s_m - s_a).abs() < 1e-15);
        assert!(entropy(&sym, Variant::Apme).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        assert!((energy(&[0.25; 4], &[3.0; 4]) - 3.0).abs() < 1e-15);
        assert_eq!(energy(&[0.0, 1.0, 0.0], &[1.0, 2.0, 3.0]), 2.0);
    }

    proptest! {
        #[test]
        fn entropy_recombines(raw in prop::collection::vec(0.0f64..1.0, 2..12)) {
            let len = raw.len() - raw.len() % 2;
            let raw = &raw[..len];
            let total: f64 = raw.iter().sum::<f64>() + 1e-12;
            let p: Vec<f64> = raw.iter().map(|x| (x + 1e-12 / len as f64) / total).collect();
            let (s_m, s_a) = entropy_split(&p);
            prop_assert!((entropy(&p, Variant::Spme) - (s_m + s_a)).abs() < 1e-14);
            prop_assert!((entropy(&p, Variant::Apme) - (s_m - s_a)).abs() < 1e-14);
            let e: Vec<f64> = (0..len).map(|i| i as f64 * 0.7 - 1.0).collect();
            let direct: f64 = (0..len).map(|i| p[i] * e[i]).sum();
            prop_assert!((energy(&p, &e) - direct).abs() < 1e-14);
        }

        #[test]
        fn production_terms_nonnegative(raw in prop::collection::vec(1e-6f64..1.0, 4..10), apme in any::<bool>()) {
            let len = raw.len() - raw.len() % 2;
            let total: f64 = raw[..len].iter().sum();
            let p: Vec<f64> = raw[..len].iter().map(|x| x / total).collect();
            let w = RMatrix::from_fn(len, len, |j, k| if j == k { 0.0 } else { 1.0 + ((j * 7 + k * 7) % 5) as f64 });
            let signs = if apme { Variant::Apme.signs(len / 2) } else { Variant::Spme.signs(len / 2) };
            let terms = entropy_production_terms(&w, &p, &signs);
            prop_assert!(terms.iter().all(|&x| x >= -1e-14));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = GeneratorMatrix::two_state(1.0, Variant::Spme);
        assert_eq!(integrate(&g, &[0.5, 0.5], 0.0, 1.0, 0.0), Err(SolverError::Step(0.0)));
        assert!(matches!(integrate(&g, &[0.6, 0.5], 0.0, 1.0, 1e-3), Err(SolverError::NotInSimplex { .. })));
        assert!(matches!(integrate(&g, &[1.0], 0.0, 1.0, 1e-3), Err(SolverError::Dimension { .. })));
    }

    #[test]
    fn spme_two_state_tracks_closed_form() {
        let g = GeneratorMatrix::two_state(1.0, Variant::Spme);
        let traj = integrate(&g, &[0.0, 1.0], 0.0, 1.0, 1e-3).unwrap();
        let last = traj.last();
        assert!((last.t - 1.0).abs() < 1e-15);
        let expected = 0.5 * (1.0 + (-2.0f64).exp());
        assert!((expected - 0.567668).abs() < 1e-6);
        assert!((last.p[1] - expected).abs() < 1e-10);
        let closed = two_state_solution(1.0, &Omega::Constant(1.0), Variant::Spme, 0.0, 1.0).unwrap();
        assert!((closed.matter - expected).abs() < 1e-15);
    }

    #[test]
    fn rk4_error_is_fourth_order() {
        let g = GeneratorMatrix::two_state(1.0, Variant::Spme);
        let err = |h: f64| {
            let traj = integrate(&g, &[0.0, 1.0], 0.0, 2.0, h).unwrap();
            let exact = two_state_solution(1.0, &Omega::Constant(1.0), Variant::Spme, 0.0, 2.0).unwrap();
            (traj.last().p[1] - exact.matter).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn apme_two_state_hits_end_of_time() {
        let g = GeneratorMatrix::two_state(1.0, Variant::Apme);
        let traj = integrate(&g, &[0.7, 0.3], 0.0, 2.0, 1e-3).unwrap();
        let ev = &traj.events[0];
        assert_eq!(ev.kind, BoundaryKind::EndOfTime);
        assert_eq!(ev.state, StateIndex::new(-1).unwrap());
        assert!((ev.t_event - 0.7).abs() < 1e-8);
        assert!(ev.p_state >= 0.0 && ev.p_state <= EVENT_TOL);
        assert!(two_state_solution(0.3, &Omega::Constant(1.0), Variant::Apme, 0.0, 0.8).is_err());
    }

    #[test]
    fn spme_backward_hits_beginning_of_time() {
        let g = GeneratorMatrix::two_state(1.0, Variant::Spme);
        let traj = integrate(&g, &[0.1, 0.9], 0.0, -1.0, 1e-3).unwrap();
        let ev = &traj.events[0];
        assert_eq!(ev.kind, BoundaryKind::BeginningOfTime);
        let expected = -0.5 * (1.0f64 / 0.8).ln();
        assert!((spme_beginning_of_time_omega(0.9).unwrap() - expected).abs() < 1e-15);
        assert!((ev.t_event - expected).abs() < 1e-8, "{} vs {expected}", ev.t_event);
    }

    #[test]
    fn time_dependent_generator_matches_quadrature_omega() {
        let rate = |t: f64| 1.0 + 0.5 * t.sin();
        let traj = integrate_time_dependent(
            Variant::Spme,
            &[0.0, 0.0],
            |t| GeneratorMatrix::two_state(rate(t), Variant::Spme).matrix().clone(),
            &[0.2, 0.8],
            0.0,
            2.0,
            IntegrateOptions::new(1e-3),
        )
        .unwrap();
        let om = |t: f64, t0: f64| omega_quadrature(rate, t0, t, 2000);
        let closed = two_state_solution(0.8, &Omega::Callable(&om), Variant::Spme, 0.0, 2.0).unwrap();
        assert!((traj.last().p[1] - closed.matter).abs() < 1e-10);
    }

    #[test]
    fn equilibrium_outcomes() {
        let spme = GeneratorMatrix::two_state(1.0, Variant::Spme);
        match equilibrium(&spme, &[0.9, 0.1]).unwrap() {
            EquilibriumOutcome::FixedPoint(s) => assert_eq!(s.p, vec![0.5, 0.5]),
            other => panic!("{other:?}"),
        }
        let apme = GeneratorMatrix::two_state(1.0, Variant::Apme);
        match equilibrium(&apme, &[0.4, 0.6]).unwrap() {
            EquilibriumOutcome::Terminal(r) => {
                let ev = r.event.expect("event");
                assert_eq!(ev.kind, BoundaryKind::EndOfTime);
                assert!((r.final_state.p[1] - 1.0).abs() < 1e-8);
                assert!(r.antimatter_total <= EVENT_TOL);
                assert!((r.final_state.t - 0.4).abs() < 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_diagonal_spme_equilibrates_within_sector() {
        let sys = random_system(3, SymmetryClass::None, 0.05, 1, 77).unwrap();
        let mut raw = sys.to_raw();
        for a in 0..3 {
            for m in 3..6 {
                raw.v[(a, m)] = Default::default();
                raw.v[(m, a)] = Default::default();
            }
        }
        let sys = crate::system::build_system(raw).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::on_shell()).unwrap();
        let g = generator(&km, Variant::Spme);
        let p0 = [0.0, 0.0, 0.0, 0.5, 0.3, 0.2];
        let EquilibriumOutcome::FixedPoint(s) = equilibrium(&g, &p0).unwrap() else { panic!() };
        // kernel of the block generator: uniform over the matter block
        let third = 1.0 / 3.0;
        for (i, &x) in s.p.iter().enumerate() {
            let expected = if i < 3 { 0.0 } else { third };
            assert!((x - expected).abs() < 1e-15);
        }
        assert!((g.matrix() * RVector::from_column_slice(&s.p)).amax() < 1e-15);
    }

    #[test]
    fn finite_difference_entropy_rate() {
        let sys = random_system(2, SymmetryClass::None, 0.05, 1, 3).unwrap();
        let km = kinetic_coefficients(&sys, RateMode::on_shell()).unwrap();
        let p0 = [0.1, 0.2, 0.3, 0.4];
        for variant in [Variant::Spme, Variant::Apme] {
            let g = generator(&km, variant);
            let traj = integrate(&g, &p0, 0.0, 1.0, 1e-3).unwrap();
            let s = &traj.samples;
            let i = 500;
            let fd = (s[i + 1].entropy - s[i - 1].entropy) / (s[i + 1].t - s[i - 1].t);
            let exact = entropy_rate(&g, &s[i].p);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-12), "{variant}: {fd} vs {exact}");
            let closed = entropy_production(km.matrix(), &s[i].p, g.signs());
            if variant == Variant::Spme {
                assert!((fd - closed).abs() <= 1e-6 * closed.abs());
            } else {
                // the closed form omits -Σ C'_k dp_k/dt = -2 Σ_{m,a} w_ma (p_m + p_a)
                let p = &s[i].p;
                let cross: f64 = (0..2).flat_map(|a| (2..4).map(move |m| (a, m))).map(|(a, m)| km.matrix()[(a, m)] * (p[a] + p[m])).sum();
                assert!((fd - (closed - 2.0 * cross)).abs() <= 1e-6 * fd.abs().max(1e-12));
            }
        }
    }
}
