//! Problem definitions: local objectives, linear coupling constraints and a
//! centralized reference solver.
//!
//! Each agent `i` owns a convex objective `f_i(x_i)` over `R^n`. The agents are
//! coupled by block constraints `sum_{j in N_i} A_ij x_j = 0`, one per agent.
//! The oracle in this module sees the whole problem at once and is only used
//! to check what the distributed iteration produces.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::CommMatrix;

/// Eigenvalues above this floor count as nonnegative.
pub const PSD_TOLERANCE: f64 = -1e-10;

/// Stopping threshold on the gradient norm for the iterative oracle.
pub const ORACLE_GRAD_TOL: f64 = 1e-10;

/// Iteration cap for the iterative oracle.
pub const ORACLE_MAX_ITER: usize = 200_000;

/// A smooth convex local objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `½ (x - c)ᵀ Q (x - c)` with `Q` symmetric PSD.
    Quadratic { q: DMatrix<f64>, c: DVector<f64> },
    /// `log Σ_r exp((B x + b)_r)`.
    LogSumExp { b: DMatrix<f64>, offset: DVector<f64> },
}

impl Objective {
    /// Validates symmetry and positive semidefiniteness of `q`.
    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::DimensionMismatch { expected: q.nrows(), found: q.ncols() });
        }
        check_dim(q.nrows(), c.len())?;
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 * (1.0 + q.amax()) {
            return Err(Error::InvalidConfig {
                field: "objective.q".into(),
                reason: format!("matrix is not symmetric (max asymmetry {asym:e})"),
            });
        }
        let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < PSD_TOLERANCE {
            return Err(Error::NotPositiveSemidefinite(min_eig));
        }
        Ok(Objective::Quadratic { q, c })
    }

    pub fn log_sum_exp(b: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_dim(b.nrows(), offset.len())?;
        if b.nrows() == 0 {
            return Err(Error::InvalidConfig {
                field: "objective.b".into(),
                reason: "needs at least one row".into(),
            });
        }
        Ok(Objective::LogSumExp { b, offset })
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic { c, .. } => c.len(),
            Objective::LogSumExp { b, .. } => b.ncols(),
        }
    }

    /// Upper bound on the Lipschitz constant of the gradient.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Objective::Quadratic { q, .. } => q.clone().symmetric_eigen().eigenvalues.max().max(0.0),
            Objective::LogSumExp { b, .. } => b.clone().singular_values().max().powi(2),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, Objective::Quadratic { .. })
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Objective::Quadratic { q, c } => {
                let d = x - c;
                0.5 * d.dot(&(q * &d))
            }
            Objective::LogSumExp { b, offset } => {
                let t = b * x + offset;
                let m = t.max();
                m + t.map(|v| (v - m).exp()).sum().ln()
            }
        })
    }

    /// Analytic gradient: `Q (x - c)` or `Bᵀ softmax(B x + b)`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Objective::Quadratic { q, c } => q * (x - c),
            Objective::LogSumExp { b, offset } => b.transpose() * softmax(&(b * x + offset)),
        })
    }
}

fn softmax(t: &DVector<f64>) -> DVector<f64> {
    let m = t.max();
    let e = t.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Where a constraint set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStructure {
    LaplacianConsensus,
    Custom,
}

/// Coupling blocks `A_ij` (each `n × n`). Missing pairs are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    agents: usize,
    dim: usize,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
    structure: ConstraintStructure,
}

impl ConstraintSet {
    /// Arbitrary blocks; all-zero blocks are dropped.
    pub fn custom(
        agents: usize,
        dim: usize,
        blocks: impl IntoIterator<Item = ((usize, usize), DMatrix<f64>)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((i, j), m) in blocks {
            if i >= agents || j >= agents {
                return Err(Error::InvalidConfig {
                    field: "constraints.blocks".into(),
                    reason: format!("block ({i}, {j}) is outside 0..{agents}"),
                });
            }
            check_dim(dim, m.nrows())?;
            check_dim(dim, m.ncols())?;
            if m.iter().any(|v| *v != 0.0) {
                map.insert((i, j), m);
            }
        }
        Ok(Self { agents, dim, blocks: map, structure: ConstraintStructure::Custom })
    }

    pub fn agent_count(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn structure(&self) -> ConstraintStructure {
        self.structure
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.blocks.get(&(i, j))
    }

    /// `A_ij`, or an explicit zero block.
    pub fn block_or_zero(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.block(i, j).cloned().unwrap_or_else(|| DMatrix::zeros(self.dim, self.dim))
    }

    /// Ordered pairs `(i, j)` with a nonzero block.
    pub fn nonzero_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks.keys().copied()
    }

    /// `Σ_j A_ij x_j` for constraint row `i`.
    pub fn row_residual(&self, i: usize, xs: &[DVector<f64>]) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim);
        for (&(a, j), m) in self.blocks.range((i, 0)..(i + 1, 0)) {
            debug_assert_eq!(a, i);
            r += m * &xs[j];
        }
        r
    }

    /// The full `(N n) × (N n)` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim;
        let mut a = DMatrix::zeros(self.agents * n, self.agents * n);
        for (&(i, j), m) in &self.blocks {
            a.view_mut((i * n, j * n), (n, n)).copy_from(m);
        }
        a
    }
}

/// Laplacian coupling: `A_ii = deg(i) I`, `A_ij = -I` for each neighbor.
///
/// On a connected graph the constraints hold iff every `x_j` is equal.
pub fn build_laplacian_constraints(s: &CommMatrix, dim: usize) -> ConstraintSet {
    let agents = s.size();
    let mut blocks = BTreeMap::new();
    for i in 0..agents {
        let deg = s.degree(i);
        if deg == 0 {
            continue;
        }
        blocks.insert((i, i), DMatrix::identity(dim, dim) * deg as f64);
        for j in s.neighbors(i).into_iter().filter(|&j| j != i) {
            blocks.insert((i, j), -DMatrix::identity(dim, dim));
        }
    }
    ConstraintSet { agents, dim, blocks, structure: ConstraintStructure::LaplacianConsensus }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    objectives: Vec<Objective>,
    constraints: ConstraintSet,
}

impl ProblemSpec {
    pub fn new(objectives: Vec<Objective>, constraints: ConstraintSet) -> Result<Self> {
        check_dim(constraints.agent_count(), objectives.len())?;
        for f in &objectives {
            check_dim(constraints.dim(), f.dim())?;
        }
        Ok(Self { objectives, constraints })
    }

    pub fn agent_count(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.constraints.dim()
    }

    pub fn objectives(&self) -> &[Objective] {
        &self.objectives
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    /// `Σ_i f_i(x_i)`.
    pub fn total_value(&self, xs: &[DVector<f64>]) -> Result<f64> {
        self.objectives.iter().zip(xs).map(|(f, x)| f.value(x)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProblemDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ProblemDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// Which family of objectives [`sample_problem`] draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    #[serde(rename = "logsumexp")]
    LogSumExp,
}

/// Random strongly convex instance with Laplacian coupling over `s`.
///
/// Quadratics use `Q = GᵀG + 0.1 I` (entries of `G` uniform in `[-1, 1]`) and
/// `c` uniform in `[-5, 5]`. Log-sum-exp objectives stack `[G; -G]` so every
/// direction is eventually penalized and a minimizer exists.
pub fn sample_problem(s: &CommMatrix, dim: usize, kind: ObjectiveKind, seed: u64) -> Result<ProblemSpec> {
    if dim == 0 {
        return Err(Error::InvalidConfig { field: "problem.n".into(), reason: "must be at least 1".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = s.size();
    let mut objectives = Vec::with_capacity(agents);
    for _ in 0..agents {
        let f = match kind {
            ObjectiveKind::Quadratic => {
                let g = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..=1.0));
                let mut q = g.transpose() * &g + DMatrix::identity(dim, dim) * 0.1;
                // exact symmetry, independent of rounding in the product
                q = (&q + q.transpose()) * 0.5;
                let c = DVector::from_fn(dim, |_, _| rng.gen_range(-5.0..=5.0));
                Objective::quadratic(q, c)?
            }
            ObjectiveKind::LogSumExp => {
                let rows = dim + 1;
                let g = DMatrix::from_fn(rows, dim, |_, _| rng.gen_range(-1.0..=1.0));
                let mut b = DMatrix::zeros(2 * rows, dim);
                b.rows_mut(0, rows).copy_from(&g);
                b.rows_mut(rows, rows).copy_from(&(-&g));
                let offset = DVector::from_fn(2 * rows, |_, _| rng.gen_range(-1.0..=1.0));
                Objective::log_sum_exp(b, offset)?
            }
        };
        objectives.push(f);
    }
    ProblemSpec::new(objectives, build_laplacian_constraints(s, dim))
}

/// Centralized solution of the coupled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Optimal `x_i*` per agent.
    pub x: Vec<DVector<f64>>,
    /// `p* = Σ f_i(x_i*)`.
    pub value: f64,
}

/// Solves the problem centrally.
///
/// Laplacian coupling collapses to minimizing `Σ f_i(y)` over a shared `y`:
/// closed form when every objective is quadratic, otherwise fixed-step
/// gradient descent. Custom coupling requires quadratics and solves the
/// KKT system directly.
pub fn oracle_solve(spec: &ProblemSpec) -> Result<OracleSolution> {
    let x = match spec.constraints().structure() {
        ConstraintStructure::LaplacianConsensus => {
            let y = if spec.objectives().iter().all(Objective::is_quadratic) {
                consensus_quadratic(spec)?
            } else {
                consensus_descent(spec)?
            };
            vec![y; spec.agent_count()]
        }
        ConstraintStructure::Custom => kkt_solve(spec)?.0,
    };
    let value = spec.total_value(&x)?;
    Ok(OracleSolution { x, value })
}

fn consensus_quadratic(spec: &ProblemSpec) -> Result<DVector<f64>> {
    let n = spec.dim();
    let mut h = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for f in spec.objectives() {
        if let Objective::Quadratic { q, c } = f {
            h += q;
            rhs += q * c;
        }
    }
    h.cholesky().map(|ch| ch.solve(&rhs)).ok_or(Error::Degenerate)
}

fn consensus_descent(spec: &ProblemSpec) -> Result<DVector<f64>> {
    let n = spec.dim();
    // fixed step 1/L; line searches stall once decreases fall below rounding
    let lipschitz: f64 = spec.objectives().iter().map(Objective::lipschitz_bound).sum();
    let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
    let mut y = DVector::zeros(n);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..ORACLE_MAX_ITER {
        let mut g = DVector::zeros(n);
        for f in spec.objectives() {
            g += f.gradient(&y)?;
        }
        grad_norm = g.norm();
        if grad_norm <= ORACLE_GRAD_TOL {
            return Ok(y);
        }
        y -= g * step;
    }
    Err(Error::OracleNotConverged { iterations: ORACLE_MAX_ITER, grad_norm })
}

/// Solves `[Q Aᵀ; A 0] [x; ν] = [Q c; 0]` for quadratic objectives.
///
/// Returns the per-agent minimizer and the stacked multiplier `ν`. The
/// system may be singular (redundant coupling rows); it is solved in the
/// least-squares sense and then checked for consistency and for uniqueness
/// of the primal part.
pub fn kkt_solve(spec: &ProblemSpec) -> Result<(Vec<DVector<f64>>, DVector<f64>)> {
    let agents = spec.agent_count();
    let n = spec.dim();
    let m = agents * n;
    let mut kkt = DMatrix::zeros(2 * m, 2 * m);
    let mut rhs = DVector::zeros(2 * m);
    for (i, f) in spec.objectives().iter().enumerate() {
        let Objective::Quadratic { q, c } = f else {
            return Err(Error::ExactModeUnsupported(i));
        };
        kkt.view_mut((i * n, i * n), (n, n)).copy_from(q);
        rhs.rows_mut(i * n, n).copy_from(&(q * c));
    }
    let a = spec.constraints().dense();
    kkt.view_mut((m, 0), (m, m)).copy_from(&a);
    kkt.view_mut((0, m), (m, m)).copy_from(&a.transpose());

    let scale = kkt.amax().max(1.0);
    let svd = kkt.clone().svd(true, true);
    let cutoff = 1e-10 * scale;
    let sol = svd.solve(&rhs, cutoff).map_err(|e| Error::Internal(e.into()))?;
    let resid = (&kkt * &sol - &rhs).norm();
    if resid > 1e-8 * (1.0 + rhs.norm()) {
        return Err(Error::Infeasible(resid));
    }
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Internal("missing SVD factor".into()))?;
    for (k, sv) in svd.singular_values.iter().enumerate() {
        if *sv <= cutoff && v_t.row(k).columns(0, m).norm() > 1e-6 {
            return Err(Error::Degenerate);
        }
    }
    let xs = (0..agents).map(|i| sol.rows(i * n, n).into_owned()).collect();
    Ok((xs, sol.rows(m, m).into_owned()))
}

/// Optimal dual variables of the split problem.
///
/// `μ_i*` solves `∇f_i(x_i*) + Σ_{j ∈ N_i} A_jiᵀ μ_j* = 0`, and the consensus
/// multipliers follow as `λ_ij* = A_jiᵀ μ_j*`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDuals {
    pub mu: Vec<DVector<f64>>,
    dim: usize,
    blocks_t: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl OracleDuals {
    /// `λ_ij*`, the multiplier of `x_i = z_ij` (estimate of `x_i` held by `j`).
    pub fn lambda(&self, i: usize, j: usize) -> DVector<f64> {
        match self.blocks_t.get(&(j, i)) {
            Some(at) => at * &self.mu[j],
            None => DVector::zeros(self.dim),
        }
    }
}

/// Least-squares solve for the dual point. `None` when the stationarity
/// system has no solution within `1e-8`.
pub fn oracle_duals(spec: &ProblemSpec, x_star: &[DVector<f64>]) -> Result<Option<OracleDuals>> {
    let agents = spec.agent_count();
    let n = spec.dim();
    let m = agents * n;
    // block (i, j) of the system is A_jiᵀ, i.e. the transpose of the full A
    let mt = spec.constraints().dense().transpose();
    let mut rhs = DVector::zeros(m);
    for (i, f) in spec.objectives().iter().enumerate() {
        rhs.rows_mut(i * n, n).copy_from(&(-f.gradient(&x_star[i])?));
    }
    let cutoff = 1e-10 * mt.amax().max(1.0);
    let sol = mt.clone().svd(true, true).solve(&rhs, cutoff).map_err(|e| Error::Internal(e.into()))?;
    if (&mt * &sol - &rhs).norm() > 1e-8 * (1.0 + rhs.norm()) {
        return Ok(None);
    }
    let mu = (0..agents).map(|i| sol.rows(i * n, n).into_owned()).collect();
    let blocks_t = spec
        .constraints()
        .blocks
        .iter()
        .map(|(&k, a)| (k, a.transpose()))
        .collect();
    Ok(Some(OracleDuals { mu, dim: n, blocks_t }))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ObjectiveDoc {
    Quadratic { q: Vec<Vec<f64>>, c: Vec<f64> },
    #[serde(rename = "logsumexp")]
    LogSumExp { b: Vec<Vec<f64>>, offset: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    row: usize,
    col: usize,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ConstraintDoc {
    structure: ConstraintStructure,
    blocks: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
struct ProblemDoc {
    agents: usize,
    dim: usize,
    objectives: Vec<ObjectiveDoc>,
    constraints: ConstraintDoc,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], cols_hint: usize) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(cols_hint, Vec::len);
    for r in rows {
        check_dim(cols, r.len())?;
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl From<&ProblemSpec> for ProblemDoc {
    fn from(p: &ProblemSpec) -> Self {
        let objectives = p
            .objectives
            .iter()
            .map(|f| match f {
                Objective::Quadratic { q, c } => ObjectiveDoc::Quadratic { q: rows_of(q), c: c.iter().copied().collect() },
                Objective::LogSumExp { b, offset } => {
                    ObjectiveDoc::LogSumExp { b: rows_of(b), offset: offset.iter().copied().collect() }
                }
            })
            .collect();
        let blocks = p
            .constraints
            .blocks
            .iter()
            .map(|(&(row, col), m)| BlockDoc { row, col, matrix: rows_of(m) })
            .collect();
        ProblemDoc {
            agents: p.agent_count(),
            dim: p.dim(),
            objectives,
            constraints: ConstraintDoc { structure: p.constraints.structure, blocks },
        }
    }
}

impl TryFrom<ProblemDoc> for ProblemSpec {
    type Error = Error;

    fn try_from(doc: ProblemDoc) -> Result<Self> {
        let n = doc.dim;
        let objectives = doc
            .objectives
            .into_iter()
            .map(|o| match o {
                ObjectiveDoc::Quadratic { q, c } => Objective::quadratic(matrix_from_rows(&q, n)?, DVector::from_vec(c)),
                ObjectiveDoc::LogSumExp { b, offset } => {
                    Objective::log_sum_exp(matrix_from_rows(&b, n)?, DVector::from_vec(offset))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut blocks = Vec::with_capacity(doc.constraints.blocks.len());
        for b in doc.constraints.blocks {
            blocks.push(((b.row, b.col), matrix_from_rows(&b.matrix, n)?));
        }
        let mut constraints = ConstraintSet::custom(doc.agents, n, blocks)?;
        constraints.structure = doc.constraints.structure;
        ProblemSpec::new(objectives, constraints)
    }
}
