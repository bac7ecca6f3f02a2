//! The `pme` command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
//! 3 numerical failure. `PME_OUT_DIR` overrides the output directory of the
//! scenario file; `--out-dir` overrides both.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::{self, write_atomic, IoError};
use crate::kinetics::{
    detailed_balance_check, generator, kinetic_coefficients, pme_invariance_check, KineticMatrix, KineticsError,
    RateMode, Variant,
};
use crate::microsim::{self, MicrosimError};
use crate::scenario::{
    random_simplex_point, ConfigError, InitialState, PropagatorKind, RandomSystemConfig, RateModeKind,
    ScenarioConfig, VariantSelection,
};
use crate::solver::{
    default_step, entropy_production_terms, integrate_with, relax, two_state_solution, IntegrateOptions, Omega,
    SolverError,
};
use crate::system::{random_system, SymmetryClass, SystemError};
use crate::unitary::UnitaryError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<KineticsError> for CliError {
    fn from(e: KineticsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::EventLocate { .. } | SolverError::OutsideDomain { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MicrosimError> for CliError {
    fn from(e: MicrosimError) -> Self {
        match e {
            MicrosimError::Solver(s) => s.into(),
            MicrosimError::Config(_) | MicrosimError::System(_) | MicrosimError::Kinetics(_) | MicrosimError::Dimension { .. } => {
                CliError::Usage(e.to_string())
            }
            MicrosimError::Unitary(UnitaryError::Order(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pme", version, about = "Symmetric and antisymmetric Pauli master equations")]
pub struct Cli {
    /// Output directory (overrides the scenario file).
    #[arg(long, env = "PME_OUT_DIR", global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random system file.
    Generate(GenerateArgs),
    /// Kinetic coefficients, generators and their consistency checks.
    Rates(ScenarioArgs),
    /// Integrate the master equations.
    Evolve(EvolveArgs),
    /// Decoherence-cycle simulation compared against the master equations.
    Simulate(SimulateArgs),
    /// Property battery over seeded random systems.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "none")]
    pub symmetry: SymmetryClass,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub shells: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to `<out-dir>/system.json`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ScenarioArgs {
    /// Scenario TOML file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// System file (JSON).
    #[arg(long, conflicts_with = "n")]
    pub system: Option<PathBuf>,
    /// Use a random system with this many pairs.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub symmetry: Option<SymmetryClass>,
    #[arg(long)]
    pub shells: Option<usize>,
    /// Coupling strength (replaces the one in the system).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<VariantSelection>,
    /// `finite_window` or `on_shell`.
    #[arg(long)]
    pub mode: Option<RateModeKind>,
    /// Decoherence window for finite-window rates (implies that mode).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eta_norm: Option<f64>,
    /// Initial probabilities: `uniform`, `random` or a comma-separated list.
    #[arg(long)]
    pub p0: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Integrate towards the past (`t1 < t0`).
    #[arg(long)]
    pub backward: bool,
    /// Compare against the two-state closed form and print the deviation.
    #[arg(long)]
    pub twostate_analytic: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub tau_d: Option<f64>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub propagator: Option<PropagatorKind>,
    #[arg(long)]
    pub steps_per_cycle: Option<usize>,
    /// Comma-separated couplings for the scaling sweep.
    #[arg(long, value_delimiter = ',')]
    pub lambda_sweep: Option<Vec<f64>>,
    /// Also write per-interval diagnostics.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 100)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub max_n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Break rate symmetry in every fixture (the detailed-balance property must fail).
    #[arg(long)]
    pub inject_asymmetry: bool,
}

fn parse_p0(s: &str) -> Result<InitialState, CliError> {
    match s {
        "uniform" | "random" => Ok(InitialState::Named(s.into())),
        list => list
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(InitialState::Explicit)
            .map_err(|e| CliError::Usage(format!("--p0: {e}"))),
    }
}

/// Scenario file (if any) with flag overrides applied. The base directory for
/// relative paths inside the file is returned alongside.
fn merged_config(args: &ScenarioArgs) -> Result<(ScenarioConfig, Option<PathBuf>), CliError> {
    let (mut cfg, base) = match &args.config {
        Some(path) => (ScenarioConfig::load(path)?, path.parent().map(Path::to_path_buf)),
        None => (ScenarioConfig::default(), None),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(f) = &args.system {
        cfg.system.file = Some(f.clone());
        cfg.system.random = None;
    }
    if let Some(n) = args.n {
        cfg.system.file = None;
        let prev = cfg.system.random.take();
        cfg.system.random = Some(RandomSystemConfig {
            n,
            symmetry: prev.as_ref().map_or(SymmetryClass::None, |r| r.symmetry),
            lambda: prev.as_ref().map_or(0.01, |r| r.lambda),
            shells: prev.as_ref().map_or(1, |r| r.shells),
        });
    }
    if let Some(r) = cfg.system.random.as_mut() {
        if let Some(s) = args.symmetry {
            r.symmetry = s;
        }
        if let Some(k) = args.shells {
            r.shells = k;
        }
    } else if args.symmetry.is_some() || args.shells.is_some() {
        return Err(CliError::Usage("--symmetry/--shells only apply to random systems".into()));
    }
    if let Some(dt) = args.dt {
        cfg.rates.dt = Some(dt);
        if args.mode.is_none() {
            cfg.rates.mode = RateModeKind::FiniteWindow;
        }
    }
    if let Some(m) = args.mode {
        cfg.rates.mode = m;
    }
    if let Some(e) = args.eta {
        cfg.rates.eta = Some(e);
    }
    if let Some(e) = args.eta_norm {
        cfg.rates.eta_norm = Some(e);
    }
    if let Some(p) = &args.p0 {
        cfg.evolve.p0 = parse_p0(p)?;
    }
    Ok((cfg, base))
}

fn output_dir(cli_dir: &Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    cli_dir.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
}

fn resolve(
    cfg: &ScenarioConfig,
    base: Option<&Path>,
    lambda: Option<f64>,
) -> Result<crate::scenario::Scenario, CliError> {
    let mut s = cfg.resolve(base)?;
    if let Some(l) = lambda {
        s.system = s.system.with_lambda(l)?;
    }
    Ok(s)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pme: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a, out),
        Command::Rates(a) => cmd_rates(cli, a, out),
        Command::Evolve(a) => cmd_evolve(cli, a, out),
        Command::Simulate(a) => cmd_simulate(cli, a, out),
        Command::Check(a) => cmd_check(a, out),
    }
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Usage(format!("stdout: {e}")))
}

pub fn cmd_generate(cli: &Cli, a: &GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let sys = random_system(a.n, a.symmetry, a.lambda, a.shells, a.seed)?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join("system.json"));
    io::write_system(&path, &sys)?;
    say(out, format!("wrote {}", path.display()))
}

fn write_matrix(path: &Path, m: &crate::RMatrix) -> Result<(), CliError> {
    Ok(write_atomic(path, |w| io::write_matrix_csv(w, m))?)
}

pub fn cmd_rates(cli: &Cli, a: &ScenarioArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, base) = merged_config(a)?;
    let s = resolve(&cfg, base.as_deref(), a.lambda)?;
    let dir = output_dir(&cli.out_dir, &cfg);
    let km = kinetic_coefficients(&s.system, s.rate_mode)?;
    write_matrix(&dir.join("rates.csv"), km.matrix())?;
    for v in [Variant::Spme, Variant::Apme] {
        write_matrix(&dir.join(format!("generator_{}.csv", v.as_str())), generator(&km, v).matrix())?;
    }

    let mut failures = Vec::new();
    let db = detailed_balance_check(km.matrix());
    say(
        out,
        format!(
            "detailed_balance {} max_asymmetry={:e} min_rate={:e}",
            if db.pass { "pass" } else { "FAIL" },
            db.max_asymmetry,
            db.min_rate
        ),
    )?;
    if !db.pass {
        failures.push("detailed_balance");
    }
    if s.system.symmetry() == SymmetryClass::None {
        say(out, "pme_invariance skipped (no symmetry claimed)")?;
    } else {
        let inv = pme_invariance_check(&s.system, &km);
        say(
            out,
            format!(
                "pme_invariance {} symmetry={} energy_violation={:e} rate_violation={:e}",
                if inv.pass { "pass" } else { "FAIL" },
                s.system.symmetry(),
                inv.energy_violation,
                inv.rate_violation
            ),
        )?;
        if !inv.pass {
            failures.push("pme_invariance");
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failures.join(", ")))
    }
}

pub fn cmd_evolve(cli: &Cli, a: &EvolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (mut cfg, base) = merged_config(&a.scenario)?;
    if a.backward {
        cfg.evolve.backward = true;
    }
    if let Some(t) = a.t0 {
        cfg.evolve.t0 = Some(t);
    }
    if let Some(t) = a.t1 {
        cfg.evolve.t1 = Some(t);
    }
    if let Some(h) = a.step {
        cfg.evolve.step = Some(h);
    }
    if let Some(k) = a.record_every {
        cfg.evolve.record_every = Some(k);
    }
    let s = resolve(&cfg, base.as_deref(), a.scenario.lambda)?;
    if a.twostate_analytic && s.system.n() != 1 {
        return Err(CliError::Usage("--twostate-analytic needs a two-state system (n = 1)".into()));
    }
    let dir = output_dir(&cli.out_dir, &cfg);
    let km = kinetic_coefficients(&s.system, s.rate_mode)?;
    for &variant in &s.variants {
        let gen = generator(&km, variant);
        let step = s.step.unwrap_or_else(|| default_step(&gen));
        let opts = IntegrateOptions::new(step).record_every(s.record_every);
        let traj = integrate_with(&gen, &s.p0, s.t0, s.t1, opts)?;
        let path = dir.join(format!("trajectory_{}.csv", variant.as_str()));
        write_atomic(&path, |w| io::write_trajectory_csv(w, &traj))?;
        let last = traj.last();
        say(out, format!("{variant} wrote {} samples to {} (t_end = {:.6e})", traj.samples.len(), path.display(), last.t))?;
        for ev in &traj.events {
            say(out, format!("{variant} event {} at t = {:.12e}, state {}", ev.kind, ev.t_event, ev.state))?;
        }
        if a.twostate_analytic {
            let w = km.matrix()[(0, 1)];
            let mut worst: f64 = 0.0;
            for smp in &traj.samples {
                let exact = two_state_solution(s.p0[1], &Omega::Constant(w), variant, s.t0, smp.t)?;
                worst = worst.max((smp.p[1] - exact.matter).abs()).max((smp.p[0] - exact.antimatter).abs());
            }
            say(out, format!("{variant} twostate_analytic max_deviation={worst:e}"))?;
        }
    }
    Ok(())
}

pub fn cmd_simulate(cli: &Cli, a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (mut cfg, base) = merged_config(&a.scenario)?;
    cfg.microsim.enabled = true;
    if let Some(t) = a.tau_d {
        cfg.microsim.tau_d = Some(t);
    }
    if let Some(c) = a.cycles {
        cfg.microsim.cycles = Some(c);
    }
    if let Some(p) = a.propagator {
        cfg.microsim.propagator = p;
    }
    if let Some(k) = a.steps_per_cycle {
        cfg.microsim.steps_per_cycle = Some(k);
    }
    if let Some(ls) = &a.lambda_sweep {
        cfg.microsim.lambda_sweep = Some(ls.clone());
    }
    let s = resolve(&cfg, base.as_deref(), a.scenario.lambda)?;
    let plan = s.microsim.clone().expect("microsim enabled above");
    let dir = output_dir(&cli.out_dir, &cfg);
    for &variant in &s.variants {
        let run = microsim::cycle(&s.system, &s.p0, &plan.cycle, variant)?;
        let master = microsim::master_counterpart(&s.system, &s.p0, &plan.cycle, variant, plan.steps_per_cycle)?;
        let report = microsim::compare_to_master(&run.trajectory, &master)?;
        write_atomic(&dir.join(format!("micro_{}.csv", variant.as_str())), |w| io::write_trajectory_csv(w, &run.trajectory))?;
        write_atomic(&dir.join(format!("master_{}.csv", variant.as_str())), |w| io::write_trajectory_csv(w, &master))?;
        if a.diagnostics {
            write_atomic(&dir.join(format!("diagnostics_{}.csv", variant.as_str())), |w| {
                io::write_diagnostics_csv(w, &run.diagnostics)
            })?;
        }
        say(
            out,
            format!(
                "{variant} compared={} max_abs_err={:e} err_at_end={:e} variation={:e} relative={:e}",
                report.compared, report.max_abs_err, report.err_at_end, report.variation, report.relative_err
            ),
        )?;
        for ev in &run.trajectory.events {
            say(out, format!("{variant} micro event {} at t = {:.6e}, state {}", ev.kind, ev.t_event, ev.state))?;
        }
        if let Some(ls) = &plan.lambda_sweep {
            let sweep = microsim::lambda_sweep(&s.system, &s.p0, &plan.cycle, variant, ls, plan.steps_per_cycle)?;
            for (l, r) in &sweep.points {
                say(out, format!("{variant} lambda={l:e} max_abs_err={:e} relative={:e}", r.max_abs_err, r.relative_err))?;
            }
            say(
                out,
                format!("{variant} lambda_scaling_slope={:.4} relative_slope={:.4}", sweep.slope, sweep.relative_slope),
            )?;
        }
    }
    Ok(())
}

/// One property outcome for one fixture: `None` when it does not apply,
/// otherwise the margin (non-negative means pass).
type Margins = Vec<(&'static str, Option<f64>)>;

pub const PROPERTIES: [&str; 9] = [
    "probability_conservation",
    "energy_conservation",
    "h_theorem_spme",
    "h_theorem_apme",
    "production_terms_nonnegative",
    "detailed_balance",
    "pme_invariance",
    "spme_equilibrium",
    "apme_conversion",
];

/// Runs the property battery on the fixture for `seed`.
pub fn check_fixture(seed: u64, max_n: usize, lambda: f64, inject_asymmetry: bool) -> Result<Margins, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n.max(1));
    let symmetry = [SymmetryClass::None, SymmetryClass::Cp, SymmetryClass::Cpt, SymmetryClass::Both][(seed % 4) as usize];
    let sys = random_system(n, symmetry, lambda, 1, rng.random())?;
    let dim = sys.dim();
    let p0 = random_simplex_point(&mut rng, dim);

    let mut km = kinetic_coefficients(&sys, RateMode::on_shell())?;
    if inject_asymmetry {
        let mut w = km.matrix().clone();
        w[(0, dim - 1)] *= 1.01;
        km = KineticMatrix::from_rates(w, sys.energies().to_vec(), km.mode(), km.lambda())?;
    }
    let mut m: Margins = Vec::new();

    let db = detailed_balance_check(km.matrix());
    m.push(("detailed_balance", Some(if db.pass { 0.0 } else { -db.max_asymmetry.max(-db.min_rate) })));
    m.push((
        "pme_invariance",
        (symmetry != SymmetryClass::None).then(|| {
            let r = pme_invariance_check(&sys, &km);
            if r.pass {
                1e-12 - r.energy_violation.max(r.rate_violation)
            } else {
                -r.energy_violation.max(r.rate_violation).max(r.rate_asymmetry)
            }
        }),
    ));

    let mut worst_term = f64::INFINITY;
    for v in [Variant::Spme, Variant::Apme] {
        let signs = v.signs(n);
        for _ in 0..10 {
            let p = random_simplex_point(&mut rng, dim);
            let t = entropy_production_terms(km.matrix(), &p, &signs);
            worst_term = worst_term.min(t.min() + 1e-14);
        }
    }
    m.push(("production_terms_nonnegative", Some(worst_term)));

    let mut sum_drift: f64 = 0.0;
    let mut e_drift: f64 = 0.0;
    for v in [Variant::Spme, Variant::Apme] {
        let gen = generator(&km, v);
        let amax = gen.max_abs();
        if amax == 0.0 {
            continue;
        }
        let opts = IntegrateOptions::new(0.01 / amax).record_every(10);
        let chunk = 200.0 / amax;
        let classes = crate::solver::connected_classes(gen.matrix());
        let target = crate::solver::class_uniform(&classes, &p0);
        let traj = match v {
            Variant::Spme => relax(&gen, &p0, opts, chunk, 500, |p| {
                p.iter().zip(&target).all(|(a, b)| (a - b).abs() <= 1e-7)
            })?,
            Variant::Apme => relax(&gen, &p0, opts, chunk, 500, |p| p[..n].iter().sum::<f64>() < 1e-7)?,
        };
        sum_drift = sum_drift.max(traj.max_sum_drift);
        e_drift = e_drift.max(traj.energy_drift());
        let decrease = traj.max_entropy_decrease();
        match v {
            Variant::Spme => {
                m.push(("h_theorem_spme", Some(1e-10 - decrease)));
                let dev = traj.last().p.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                m.push(("spme_equilibrium", Some(1e-6 - dev)));
            }
            Variant::Apme => {
                m.push(("h_theorem_apme", Some(1e-10 - decrease)));
                let anti: f64 = traj.last().p[..n].iter().sum();
                let converted = if traj.terminated() { Some(1.0) } else { Some(1e-6 - anti) };
                m.push(("apme_conversion", gen.has_cross_coupling().then_some(()).and(converted)));
            }
        }
    }
    m.push(("probability_conservation", Some(1e-12 - sum_drift)));
    m.push(("energy_conservation", Some(1e-10 - e_drift)));
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertySummary {
    pub name: &'static str,
    pub passed: usize,
    pub applicable: usize,
    pub worst_margin: f64,
    pub worst_seed: Option<u64>,
}

impl PropertySummary {
    pub fn pass(&self) -> bool {
        self.passed == self.applicable
    }
}

pub fn check_suite(a: &CheckArgs) -> Result<Vec<PropertySummary>, CliError> {
    let mut results: Vec<(u64, Margins)> = (a.seed..a.seed + a.count)
        .into_par_iter()
        .map(|seed| check_fixture(seed, a.max_n, a.lambda, a.inject_asymmetry).map(|m| (seed, m)))
        .collect::<Result<_, _>>()?;
    results.sort_by_key(|(seed, _)| *seed);
    Ok(PROPERTIES
        .iter()
        .map(|&name| {
            let mut s = PropertySummary { name, passed: 0, applicable: 0, worst_margin: f64::INFINITY, worst_seed: None };
            for (seed, margins) in &results {
                for (_, margin) in margins.iter().filter(|(k, _)| *k == name) {
                    if let Some(x) = margin {
                        s.applicable += 1;
                        if *x >= 0.0 {
                            s.passed += 1;
                        }
                        if *x < s.worst_margin {
                            s.worst_margin = *x;
                            s.worst_seed = Some(*seed);
                        }
                    }
                }
            }
            s
        })
        .collect())
}

pub fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let summary = check_suite(a)?;
    for s in &summary {
        let seed = s.worst_seed.map_or("-".to_string(), |x| x.to_string());
        say(
            out,
            format!(
                "{} {} passed={}/{} worst_margin={:e} worst_seed={seed}",
                s.name,
                if s.pass() { "pass" } else { "FAIL" },
                s.passed,
                s.applicable,
                s.worst_margin
            ),
        )?;
    }
    let failed: Vec<&str> = summary.iter().filter(|s| !s.pass()).map(|s| s.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}
