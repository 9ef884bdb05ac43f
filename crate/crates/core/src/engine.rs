//! Synchronous round orchestration.
//!
//! Each round follows a bulk-synchronous schedule:
//!
//! 1. optional gain adaptation (from round 2 on, every `adapt_every` rounds);
//! 2. phase 1: every agent takes its primal step and broadcasts `x^{k+1}`;
//! 3. phase 2: every agent updates `z`, `μ`, `λ` and sends its estimates back.
//!
//! Agents only read messages delivered at the previous barrier, so the order
//! in which they execute within a phase never changes the result. Phases can
//! run on the rayon thread pool without affecting determinism.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, EstimateMessage, PrimalMessage};
use crate::error::{Error, Result};
use crate::gains::{GainRow, DEFAULT_GAMMA};
use crate::network::{build_comm_matrix, check_conformity, check_connected, Topology};
use crate::problem::{oracle_duals, oracle_solve, OracleDuals, OracleSolution, ProblemSpec};
use crate::trace::{Trace, TraceRecord};

/// How each agent solves its primal subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One gradient step per round.
    #[default]
    Iterative,
    /// Exact minimization (quadratic objectives only).
    Exact,
}

/// How each agent updates its estimates `z_ji`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZStep {
    /// Joint minimization over all of the agent's estimates.
    #[default]
    Block,
    /// Per-neighbor closed form with the other estimates held at the
    /// previous round. Unstable for strongly coupled rows.
    Jacobi,
}

/// Initial raw gains `β⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialGains {
    /// `β⁰ = 1`, i.e. `d_ij = 1 / |N_i|`.
    #[default]
    Uniform,
    /// `β⁰` drawn uniformly from `[low, high]` with the run seed.
    Random { low: f64, high: f64 },
}

/// Parameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub adaptive: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub w: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Record every `trace_every`-th round; 0 disables the trace.
    pub trace_every: usize,
    /// Adapt gains every `adapt_every` rounds.
    pub adapt_every: usize,
    pub z_step: ZStep,
    pub initial_gains: InitialGains,
    /// Initial states are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Track the global Lyapunov function against the oracle.
    pub lyapunov: bool,
    /// Include gain rows in trace records.
    pub record_gains: bool,
    /// Run agents of a phase on the rayon pool.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Iterative,
            adaptive: true,
            tol: 1e-4,
            max_iter: 30_000,
            alpha: 0.1,
            w: 1.0,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            trace_every: 1,
            adapt_every: 1,
            z_step: ZStep::Block,
            initial_gains: InitialGains::Uniform,
            init_scale: 5.0,
            lyapunov: true,
            record_gains: false,
            parallel: false,
        }
    }
}

fn invalid(field: &str, reason: String) -> Error {
    Error::InvalidConfig { field: field.into(), reason }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("tol", format!("must be positive, got {}", self.tol)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(invalid("w", format!("must be positive, got {}", self.w)));
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter", "must be at least 1".into()));
        }
        if self.adapt_every < 1 {
            return Err(invalid("adapt_every", "must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale", format!("must be nonnegative, got {}", self.init_scale)));
        }
        if let InitialGains::Random { low, high } = self.initial_gains {
            if !(low > 0.0 && high >= low && high.is_finite()) {
                return Err(invalid("initial_gains", format!("need 0 < low <= high, got [{low}, {high}]")));
            }
        }
        Ok(())
    }
}

/// Oracle primal/dual point used by the Lyapunov monitor.
#[derive(Debug, Clone)]
pub struct OraclePoint {
    pub solution: OracleSolution,
    pub duals: OracleDuals,
}

impl OraclePoint {
    /// Solves centrally; `None` when the dual system has no exact solution.
    pub fn compute(spec: &ProblemSpec) -> Result<Option<Self>> {
        let solution = oracle_solve(spec)?;
        Ok(oracle_duals(spec, &solution.x)?.map(|duals| OraclePoint { solution, duals }))
    }
}

/// `max_i Σ_{j ∈ N_i} ‖x_i - z_ij‖₁`, where `z_ij` is agent `j`'s estimate of `x_i`.
pub fn residual(agents: &[AgentState]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for a in agents {
        let mut sum = 0.0;
        for &j in a.neighbors() {
            sum += (a.x() - agents[j].estimate_of(a.id())?).lp_norm(1);
        }
        worst = worst.max(sum);
    }
    Ok(worst)
}

/// Global Lyapunov function
///
/// `V = Σ_i { Σ_{j ∈ N_i} [ d_ij ‖z_ij - z*‖² + ‖λ_ij - λ_ij*‖² / d_ij ] + ‖μ_i - μ_i*‖² / w_i }`
///
/// where `z_ij` and `λ_ij` live on agent `j` and `d_ij` on agent `i`.
pub fn global_lyapunov(agents: &[AgentState], oracle: &OraclePoint) -> Result<f64> {
    let mut v = 0.0;
    for a in agents {
        let i = a.id();
        let x_star = &oracle.solution.x[i];
        for &j in a.neighbors() {
            let d = a.gains().get(j);
            let z = agents[j].estimate_of(i)?;
            let lam = agents[j].lambda_for(i)?;
            v += d * (z - x_star).norm_squared() + (lam - oracle.duals.lambda(i, j)).norm_squared() / d;
        }
        v += (a.mu() - &oracle.duals.mu[i]).norm_squared() / a.w();
    }
    Ok(v)
}

/// Terminal state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterationLimit,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::IterationLimit => "iteration_limit",
            RunStatus::Diverged => "diverged",
        }
    }
}

/// Outcome of [`run_until_converged`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub status: RunStatus,
    pub iterations: usize,
    pub final_residual: f64,
    pub final_x: Vec<DVector<f64>>,
    pub trace: Trace,
}

/// A network of agents plus the message buffers between them.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: RunConfig,
    spec: ProblemSpec,
    agents: Vec<AgentState>,
    inbox: Vec<Vec<EstimateMessage>>,
    order: Vec<usize>,
    round: usize,
    oracle: Option<OraclePoint>,
    started: Instant,
}

impl Simulation {
    /// Validates the setup and initializes every agent.
    ///
    /// `x⁰` is drawn from the run seed, each estimate starts at the true
    /// neighbor state, and all multipliers start at zero.
    pub fn new(spec: &ProblemSpec, topology: &Topology, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = spec.dim();
        let x0: Vec<DVector<f64>> = (0..spec.agent_count())
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0) * config.init_scale))
            .collect();
        Self::with_initial_state(spec, topology, config, x0, &mut rng)
    }

    /// Like [`Simulation::new`] with explicit initial states.
    pub fn with_initial_x(spec: &ProblemSpec, topology: &Topology, config: &RunConfig, x0: Vec<DVector<f64>>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::with_initial_state(spec, topology, config, x0, &mut rng)
    }

    fn with_initial_state(
        spec: &ProblemSpec,
        topology: &Topology,
        config: &RunConfig,
        x0: Vec<DVector<f64>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let agents_n = spec.agent_count();
        if topology.agent_count() != agents_n {
            return Err(Error::DimensionMismatch { expected: agents_n, found: topology.agent_count() });
        }
        if x0.len() != agents_n {
            return Err(Error::DimensionMismatch { expected: agents_n, found: x0.len() });
        }
        let s = build_comm_matrix(topology);
        if !check_connected(&s) {
            return Err(Error::Disconnected);
        }
        if !check_conformity(&s, spec.constraints()) {
            return Err(Error::NonConforming);
        }
        if config.mode == Mode::Exact {
            if let Some(i) = spec.objectives().iter().position(|f| !f.is_quadratic()) {
                return Err(Error::ExactModeUnsupported(i));
            }
        }
        let mut agents = Vec::with_capacity(agents_n);
        for i in 0..agents_n {
            let neighbors = s.neighbors(i);
            let beta0: Vec<f64> = match config.initial_gains {
                InitialGains::Uniform => vec![1.0; neighbors.len()],
                InitialGains::Random { low, high } => neighbors.iter().map(|_| rng.gen_range(low..=high)).collect(),
            };
            let gains = GainRow::new(i, &neighbors, &beta0, config.gamma)?;
            let coupling = neighbors.iter().map(|&j| spec.constraints().block_or_zero(i, j)).collect();
            let z0 = neighbors.iter().map(|&j| x0[j].clone()).collect();
            agents.push(AgentState::new(
                i,
                spec.objectives()[i].clone(),
                neighbors,
                coupling,
                x0[i].clone(),
                z0,
                gains,
                config.w,
                config.alpha,
            )?);
        }
        let oracle = if config.lyapunov { OraclePoint::compute(spec)? } else { None };
        let mut sim = Self {
            config: config.clone(),
            spec: spec.clone(),
            inbox: Vec::new(),
            order: (0..agents_n).collect(),
            agents,
            round: 0,
            oracle,
            started: Instant::now(),
        };
        sim.rebuild_inbox();
        Ok(sim)
    }

    fn rebuild_inbox(&mut self) {
        let out: Vec<Vec<EstimateMessage>> = self.agents.iter().map(AgentState::bootstrap_messages).collect();
        self.inbox = route(out, self.agents.len(), |m| m.to);
    }

    /// Moves every agent to the oracle primal/dual point.
    pub fn warm_start_at(&mut self, oracle: &OraclePoint) -> Result<()> {
        let xs = &oracle.solution.x;
        let mut fresh = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            let i = a.id();
            let z0 = a.neighbors().iter().map(|&j| xs[j].clone()).collect();
            let coupling = a.neighbors().iter().map(|&j| self.spec.constraints().block_or_zero(i, j)).collect();
            let mut b = AgentState::new(
                i,
                a.objective().clone(),
                a.neighbors().to_vec(),
                coupling,
                xs[i].clone(),
                z0,
                a.gains().clone(),
                a.w(),
                a.alpha(),
            )?;
            // λ_ji* is the multiplier of x_j = z_ji
            let lambda = a.neighbors().iter().map(|&j| oracle.duals.lambda(j, i)).collect();
            b.set_duals(oracle.duals.mu[i].clone(), lambda)?;
            fresh.push(b);
        }
        self.agents = fresh;
        self.rebuild_inbox();
        Ok(())
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn oracle(&self) -> Option<&OraclePoint> {
        self.oracle.as_ref()
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Processing order of agents within a phase. Must be a permutation.
    pub fn set_execution_order(&mut self, order: Vec<usize>) -> Result<()> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.agents.len()).collect::<Vec<_>>() {
            return Err(invalid("order", "must be a permutation of the agent indices".into()));
        }
        self.order = order;
        Ok(())
    }

    /// Runs `f` on every agent in the configured order and returns the
    /// outputs indexed by agent id.
    fn for_each_agent<T: Send>(&mut self, f: impl Fn(&mut AgentState) -> Result<T> + Sync) -> Result<Vec<T>> {
        let mut slots: Vec<Option<Result<T>>> = (0..self.agents.len()).map(|_| None).collect();
        if self.config.parallel {
            let results: Vec<(usize, Result<T>)> = self.agents.par_iter_mut().map(|a| (a.id(), f(a))).collect();
            for (i, r) in results {
                slots[i] = Some(r);
            }
        } else {
            for &i in &self.order {
                slots[i] = Some(f(&mut self.agents[i]));
            }
        }
        slots.into_iter().map(|s| s.expect("every agent runs once")).collect()
    }

    /// Executes one synchronous round.
    pub fn run_round(&mut self) -> Result<()> {
        let k = self.round;
        let exact = self.config.mode == Mode::Exact;
        let block = self.config.z_step == ZStep::Block;

        if self.config.adaptive && k >= 2 && k.is_multiple_of(self.config.adapt_every) {
            let inbox = std::mem::take(&mut self.inbox);
            let res = self.for_each_agent(|a| a.adapt_gains(&inbox[a.id()]));
            self.inbox = inbox;
            res?;
        }

        let inbox = std::mem::take(&mut self.inbox);
        let primal = self.for_each_agent(|a| a.primal_phase(&inbox[a.id()], exact))?;
        let primal_inbox: Vec<Vec<PrimalMessage>> = route(primal, self.agents.len(), |m| m.to);

        // a vanishing penalty leaves the estimate step without a unique
        // minimizer; that is the same numerical breakdown as an overflow
        let estimates = match self.for_each_agent(|a| a.dual_phase(&primal_inbox[a.id()], block)) {
            Err(Error::SingularSubproblem(_)) => return Err(Error::Diverged(k + 1)),
            other => other?,
        };
        self.inbox = route(estimates, self.agents.len(), |m| m.to);
        self.round += 1;

        if self.agents.iter().all(AgentState::is_finite) {
            Ok(())
        } else {
            Err(Error::Diverged(self.round))
        }
    }

    pub fn residual(&self) -> Result<f64> {
        residual(&self.agents)
    }

    /// `V` against the oracle, if one is attached.
    pub fn lyapunov(&self) -> Result<Option<f64>> {
        self.oracle.as_ref().map(|o| global_lyapunov(&self.agents, o)).transpose()
    }

    /// `Σ_i f_i(x_i)` at the current iterate.
    pub fn objective_value(&self) -> Result<f64> {
        self.agents.iter().map(|a| a.objective().value(a.x())).sum()
    }

    /// Largest `‖Σ_j A_ij z_ji‖` over agents.
    pub fn max_coupling_residual(&self) -> f64 {
        self.agents.iter().map(|a| a.coupling_residual().norm()).fold(0.0, f64::max)
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(|a| a.x().clone()).collect()
    }

    /// Snapshot of the monitored quantities after the latest round.
    pub fn record(&self) -> Result<TraceRecord> {
        let energies = if self.round == 0 {
            Vec::new()
        } else {
            self.agents.iter().map(AgentState::local_energy).collect::<Result<Vec<_>>>()?
        };
        let gains = self
            .config
            .record_gains
            .then(|| self.agents.iter().map(|a| a.gains().dense(self.agents.len())).collect());
        Ok(TraceRecord {
            iter: self.round,
            residual: self.residual()?,
            lyapunov: self.lyapunov()?,
            objective: self.objective_value()?,
            energies,
            gains,
            wall_time: Some(self.started.elapsed().as_secs_f64()),
        })
    }

    /// Iterates until the residual drops to `tol` or `max_iter` rounds ran.
    pub fn run(&mut self) -> Result<RunResult> {
        let mut trace = Trace::new(self.agents.len());
        let every = self.config.trace_every;
        let mut status = RunStatus::IterationLimit;
        let mut last_res = f64::NAN;
        while self.round < self.config.max_iter {
            match self.run_round() {
                Ok(()) => {}
                Err(Error::Diverged(_)) => {
                    status = RunStatus::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            }
            last_res = self.residual()?;
            if !last_res.is_finite() {
                status = RunStatus::Diverged;
                break;
            }
            let done = last_res <= self.config.tol;
            if every > 0 && (self.round.is_multiple_of(every) || done || self.round == self.config.max_iter) {
                trace.push(self.record()?);
            }
            if done {
                status = RunStatus::Converged;
                break;
            }
        }
        Ok(RunResult {
            status,
            iterations: self.round,
            final_residual: last_res,
            final_x: self.states(),
            trace,
        })
    }
}

/// Groups messages by recipient. Senders are visited in ascending id order,
/// so each recipient's list comes out sorted by sender.
fn route<M>(outgoing: Vec<Vec<M>>, agents: usize, to: impl Fn(&M) -> usize) -> Vec<Vec<M>> {
    let mut inbox: Vec<Vec<M>> = (0..agents).map(|_| Vec::new()).collect();
    for batch in outgoing {
        for m in batch {
            let r = to(&m);
            inbox[r].push(m);
        }
    }
    inbox
}

/// Builds a simulation and runs it to completion.
pub fn run_until_converged(spec: &ProblemSpec, topology: &Topology, config: &RunConfig) -> Result<RunResult> {
    Simulation::new(spec, topology, config)?.run()
}

/// Iteration count and status of one arm of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub status: RunStatus,
    pub iterations: usize,
}

/// One seed of a fixed-versus-adaptive comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub agents: usize,
    pub topology: String,
    pub fixed: ArmOutcome,
    pub adaptive: ArmOutcome,
}

impl ComparisonRow {
    /// `adaptive_iters / fixed_iters`, with censored runs counted at their cap.
    pub fn ratio(&self) -> f64 {
        self.adaptive.iterations as f64 / self.fixed.iterations as f64
    }
}

/// Per-size aggregate of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub agents: usize,
    pub runs: usize,
    pub mean_fixed: f64,
    pub mean_adaptive: f64,
    pub median_fixed: f64,
    pub median_adaptive: f64,
    pub median_ratio: f64,
    pub censored_fixed: usize,
    pub censored_adaptive: usize,
}

/// Rows of a fixed-versus-adaptive sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

impl ComparisonTable {
    pub fn extend(&mut self, other: ComparisonTable) {
        self.rows.extend(other.rows);
    }

    /// One summary per distinct agent count, in ascending order.
    pub fn summary(&self) -> Vec<SizeSummary> {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.agents).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|agents| {
                let rows: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.agents == agents).collect();
                let count = rows.len() as f64;
                let mut fixed: Vec<f64> = rows.iter().map(|r| r.fixed.iterations as f64).collect();
                let mut adaptive: Vec<f64> = rows.iter().map(|r| r.adaptive.iterations as f64).collect();
                let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio()).collect();
                SizeSummary {
                    agents,
                    runs: rows.len(),
                    mean_fixed: fixed.iter().sum::<f64>() / count,
                    mean_adaptive: adaptive.iter().sum::<f64>() / count,
                    median_fixed: median(&mut fixed),
                    median_adaptive: median(&mut adaptive),
                    median_ratio: median(&mut ratios),
                    censored_fixed: rows.iter().filter(|r| r.fixed.status != RunStatus::Converged).count(),
                    censored_adaptive: rows.iter().filter(|r| r.adaptive.status != RunStatus::Converged).count(),
                }
            })
            .collect()
    }
}

fn arm(spec: &ProblemSpec, topology: &Topology, config: &RunConfig, adaptive: bool) -> Result<ArmOutcome> {
    let cfg = RunConfig { adaptive, trace_every: 0, lyapunov: false, ..config.clone() };
    let res = run_until_converged(spec, topology, &cfg)?;
    Ok(ArmOutcome { status: res.status, iterations: res.iterations })
}

/// Runs both arms from identical initial states for every seed.
///
/// The seed drives the initial states (and random initial gains, if
/// configured); gains of the fixed arm stay at their initial values.
pub fn compare_fixed_vs_adaptive(
    spec: &ProblemSpec,
    topology: &Topology,
    label: &str,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<ComparisonTable> {
    let rows = seeds
        .iter()
        .map(|&seed| {
            let cfg = RunConfig { seed, ..config.clone() };
            Ok(ComparisonRow {
                seed,
                agents: spec.agent_count(),
                topology: label.to_string(),
                fixed: arm(spec, topology, &cfg, false)?,
                adaptive: arm(spec, topology, &cfg, true)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable { rows })
}
