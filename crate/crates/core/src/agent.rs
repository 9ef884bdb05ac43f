//! One agent's primal/dual state and its local update rules.
//!
//! Ownership follows the information flow between neighbors. Agent `i` owns
//! `x_i`, the coupling multiplier `μ_i`, and for every `j ∈ N_i` (itself
//! included) its estimate `z_ji` of `x_j` together with the multiplier `λ_ji`
//! of `x_j = z_ji`. Everything else it needs arrives in messages:
//!
//! * [`PrimalMessage`] (phase 1): `x_j^{k+1}` and the penalty `d_ji` that
//!   `j` applies to `i`'s estimate of it.
//! * [`EstimateMessage`] (phase 2): `j`'s estimate `z_ij` of `x_i`, the
//!   multiplier `λ_ij`, and the increment `z̃_ij` used by gain adaptation.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gains::{compute_h, select_extremal_neighbors, AdaptationDecision, GainRow};
use crate::problem::Objective;

/// Phase-1 payload sent by `from` to `to` after its primal step.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalMessage {
    pub from: usize,
    pub to: usize,
    /// `x_from^{k+1}`.
    pub x: DVector<f64>,
    /// `d_{from,to}`: the sender's penalty on the recipient's copy of it.
    pub gain: f64,
}

/// Phase-2 payload sent by `from` to `to` after its dual step.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMessage {
    pub from: usize,
    pub to: usize,
    /// `z_{to,from}`: the sender's estimate of the recipient's state.
    pub z: DVector<f64>,
    /// `λ_{to,from}`.
    pub lambda: DVector<f64>,
    /// `z̃_{to,from}`, the last increment of `z`.
    pub z_residue: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    x: DVector<f64>,
    z: Vec<DVector<f64>>,
    lambda: Vec<DVector<f64>>,
    mu: DVector<f64>,
}

/// Tilde residues `x̃, z̃, λ̃, μ̃`: current minus previous iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Residues {
    pub x: DVector<f64>,
    pub z: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: DVector<f64>,
}

/// Full local state of agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    id: usize,
    objective: Objective,
    neighbors: Vec<usize>,
    coupling: Vec<DMatrix<f64>>,
    x: DVector<f64>,
    z: Vec<DVector<f64>>,
    lambda: Vec<DVector<f64>>,
    mu: DVector<f64>,
    w: f64,
    alpha: f64,
    gains: GainRow,
    prev: Option<Snapshot>,
}

impl AgentState {
    /// Creates an agent with zero duals.
    ///
    /// `neighbors` is `N_i` in ascending order and must contain `id`.
    /// `coupling[s]` is `A_{i, neighbors[s]}` and `z0[s]` the initial estimate
    /// of `x_{neighbors[s]}`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        objective: Objective,
        neighbors: Vec<usize>,
        coupling: Vec<DMatrix<f64>>,
        x0: DVector<f64>,
        z0: Vec<DVector<f64>>,
        gains: GainRow,
        w: f64,
        alpha: f64,
    ) -> Result<Self> {
        let n = objective.dim();
        check_dim(n, x0.len())?;
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood(id));
        }
        if !neighbors.windows(2).all(|p| p[0] < p[1]) || !neighbors.contains(&id) {
            return Err(Error::InvalidConfig {
                field: "neighbors".into(),
                reason: "must be strictly ascending and contain the agent itself".into(),
            });
        }
        check_dim(neighbors.len(), coupling.len())?;
        check_dim(neighbors.len(), z0.len())?;
        for a in &coupling {
            check_dim(n, a.nrows())?;
            check_dim(n, a.ncols())?;
        }
        for z in &z0 {
            check_dim(n, z.len())?;
        }
        if gains.neighbors() != neighbors.as_slice() {
            return Err(Error::InvalidConfig { field: "gains".into(), reason: "gain row must cover N_i".into() });
        }
        if !(w > 0.0) {
            return Err(Error::InvalidConfig { field: "w".into(), reason: format!("must be positive, got {w}") });
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig { field: "alpha".into(), reason: format!("must lie in (0, 1), got {alpha}") });
        }
        let k = neighbors.len();
        Ok(Self {
            id,
            objective,
            neighbors,
            coupling,
            x: x0,
            z: z0,
            lambda: vec![DVector::zeros(n); k],
            mu: DVector::zeros(n),
            w,
            alpha,
            gains,
            prev: None,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn gains(&self) -> &GainRow {
        &self.gains
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    fn slot(&self, j: usize) -> Result<usize> {
        self.neighbors
            .binary_search(&j)
            .map_err(|_| Error::NotANeighbor { agent: self.id, neighbor: j })
    }

    /// `z_ji`: this agent's estimate of `x_j`.
    pub fn estimate_of(&self, j: usize) -> Result<&DVector<f64>> {
        Ok(&self.z[self.slot(j)?])
    }

    /// `λ_ji`.
    pub fn lambda_for(&self, j: usize) -> Result<&DVector<f64>> {
        Ok(&self.lambda[self.slot(j)?])
    }

    /// Overwrites the dual state, e.g. to start from a known optimum.
    pub fn set_duals(&mut self, mu: DVector<f64>, lambda: Vec<DVector<f64>>) -> Result<()> {
        check_dim(self.dim(), mu.len())?;
        check_dim(self.neighbors.len(), lambda.len())?;
        for l in &lambda {
            check_dim(self.dim(), l.len())?;
        }
        self.mu = mu;
        self.lambda = lambda;
        Ok(())
    }

    /// `Σ_j A_ij z_ji` with the current estimates.
    pub fn coupling_residual(&self) -> DVector<f64> {
        self.coupling_of(&self.z)
    }

    fn coupling_of(&self, z: &[DVector<f64>]) -> DVector<f64> {
        let mut q = DVector::zeros(self.dim());
        for (a, zj) in self.coupling.iter().zip(z) {
            q += a * zj;
        }
        q
    }

    /// Checks that `received` holds exactly one message per neighbor, in order.
    fn check_estimates(&self, received: &[EstimateMessage]) -> Result<()> {
        for (s, &j) in self.neighbors.iter().enumerate() {
            match received.get(s) {
                Some(m) if m.from == j && m.to == self.id => {
                    check_dim(self.dim(), m.z.len())?;
                    check_dim(self.dim(), m.lambda.len())?;
                }
                _ => return Err(Error::MissingPayload { agent: self.id, neighbor: j }),
            }
        }
        Ok(())
    }

    fn check_primals(&self, received: &[PrimalMessage]) -> Result<()> {
        for (s, &j) in self.neighbors.iter().enumerate() {
            match received.get(s) {
                Some(m) if m.from == j && m.to == self.id => check_dim(self.dim(), m.x.len())?,
                _ => return Err(Error::MissingPayload { agent: self.id, neighbor: j }),
            }
        }
        Ok(())
    }

    /// Gradient step on the local augmented Lagrangian:
    ///
    /// `x_i ← x_i - α [∇f_i(x_i) + Σ_j (λ_ij + d_ij (x_i - z_ij))]`.
    pub fn x_update(&self, received: &[EstimateMessage]) -> Result<DVector<f64>> {
        self.check_estimates(received)?;
        let mut step = self.objective.gradient(&self.x)?;
        for (msg, &d) in received.iter().zip(self.gains.values()) {
            step += &msg.lambda + (&self.x - &msg.z) * d;
        }
        Ok(&self.x - step * self.alpha)
    }

    /// Exact minimizer of the local augmented Lagrangian in `x_i`.
    ///
    /// Solves `(Q + Σ_j d_ij I) x = Q c - Σ_j λ_ij + Σ_j d_ij z_ij`.
    pub fn exact_x_update(&self, received: &[EstimateMessage]) -> Result<DVector<f64>> {
        self.check_estimates(received)?;
        let Objective::Quadratic { q, c } = &self.objective else {
            return Err(Error::ExactModeUnsupported(self.id));
        };
        let n = self.dim();
        let dsum: f64 = self.gains.values().iter().sum();
        let lhs = q + DMatrix::identity(n, n) * dsum;
        let mut rhs = q * c;
        for (msg, &d) in received.iter().zip(self.gains.values()) {
            rhs += &msg.z * d - &msg.lambda;
        }
        lhs.cholesky()
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| Error::Internal(format!("x-subproblem of agent {} is not positive definite", self.id)))
    }

    /// Closed-form `z`-step for a single neighbor, holding the other
    /// estimates at their previous values:
    ///
    /// `z_ji ← x_j + (λ_ji - A_ijᵀ μ_i - w A_ijᵀ Σ_φ A_iφ z_φi) / d_ji`.
    pub fn z_update(&self, j: usize, x_j_new: &DVector<f64>, d_ji: f64) -> Result<DVector<f64>> {
        check_dim(self.dim(), x_j_new.len())?;
        if !(d_ji > 0.0) {
            return Err(Error::Internal(format!("penalty d_{j}{} = {d_ji} is not positive", self.id)));
        }
        let s = self.slot(j)?;
        let a_t = self.coupling[s].transpose();
        let q = self.coupling_residual();
        let bracket = &self.lambda[s] - &a_t * &self.mu - &a_t * q * self.w;
        Ok(x_j_new + bracket / d_ji)
    }

    /// Joint minimizer over all estimates `{z_ji : j ∈ N_i}`.
    ///
    /// Solves `(diag(d_ji) ⊗ I + w AᵀA) Z = [d_ji x_j + λ_ji - A_ijᵀ μ_i]_j`
    /// where `A = [A_ij]_j` is this agent's coupling row.
    pub fn z_block_update(&self, received: &[PrimalMessage]) -> Result<Vec<DVector<f64>>> {
        self.check_primals(received)?;
        let n = self.dim();
        let k = self.neighbors.len();
        let mut a_row = DMatrix::zeros(n, k * n);
        for (s, a) in self.coupling.iter().enumerate() {
            a_row.view_mut((0, s * n), (n, n)).copy_from(a);
        }
        let mut lhs = a_row.transpose() * &a_row * self.w;
        let mut rhs = DVector::zeros(k * n);
        for (s, msg) in received.iter().enumerate() {
            if !(msg.gain > 0.0) {
                return Err(Error::SingularSubproblem(self.id));
            }
            for r in 0..n {
                lhs[(s * n + r, s * n + r)] += msg.gain;
            }
            let block = &msg.x * msg.gain + &self.lambda[s] - self.coupling[s].transpose() * &self.mu;
            rhs.rows_mut(s * n, n).copy_from(&block);
        }
        let sol = match lhs.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => lhs
                .lu()
                .solve(&rhs)
                .ok_or(Error::SingularSubproblem(self.id))?,
        };
        Ok((0..k).map(|s| sol.rows(s * n, n).into_owned()).collect())
    }

    /// `μ_i + w Σ_j A_ij z_ji^{k+1}`.
    pub fn mu_update(&self, z_new: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_dim(self.neighbors.len(), z_new.len())?;
        for z in z_new {
            check_dim(self.dim(), z.len())?;
        }
        Ok(&self.mu + self.coupling_of(z_new) * self.w)
    }

    /// `λ_ji + d_ji (x_j^{k+1} - z_ji^{k+1})`.
    pub fn lambda_update(&self, j: usize, x_j_new: &DVector<f64>, z_ji_new: &DVector<f64>, d_ji: f64) -> Result<DVector<f64>> {
        check_dim(self.dim(), x_j_new.len())?;
        check_dim(self.dim(), z_ji_new.len())?;
        Ok(&self.lambda[self.slot(j)?] + (x_j_new - z_ji_new) * d_ji)
    }

    /// Increments since the previous round, if there was one.
    pub fn residues(&self) -> Result<Residues> {
        let prev = self.prev.as_ref().ok_or(Error::NoResidues(self.id))?;
        Ok(Residues {
            x: &self.x - &prev.x,
            z: self.z.iter().zip(&prev.z).map(|(a, b)| a - b).collect(),
            lambda: self.lambda.iter().zip(&prev.lambda).map(|(a, b)| a - b).collect(),
            mu: &self.mu - &prev.mu,
        })
    }

    /// `E_i = ‖x̃‖² + ‖μ̃‖² + Σ_j (‖z̃_ji‖² + ‖λ̃_ji‖²)`.
    pub fn local_energy(&self) -> Result<f64> {
        let r = self.residues()?;
        let mut e = r.x.norm_squared() + r.mu.norm_squared();
        for (z, l) in r.z.iter().zip(&r.lambda) {
            e += z.norm_squared() + l.norm_squared();
        }
        Ok(e)
    }

    /// One adaptation step of this agent's gain row.
    ///
    /// Uses the current gradient and the neighbors' estimates to pick
    /// `(l, m)`, then the residues `x̃_i`, `z̃_il`, `z̃_im` to compute `h`.
    pub fn adapt_gains(&mut self, received: &[EstimateMessage]) -> Result<AdaptationDecision> {
        self.check_estimates(received)?;
        let x_tilde = match &self.prev {
            Some(p) => &self.x - &p.x,
            None => return Err(Error::NoResidues(self.id)),
        };
        let grad = self.objective.gradient(&self.x)?;
        let pairs: Vec<(usize, &DVector<f64>)> = received.iter().map(|m| (m.from, &m.z)).collect();
        let (l, m) = select_extremal_neighbors(&grad, &self.x, &pairs)?;
        let z_l = &received[self.slot(l)?].z_residue;
        let z_m = &received[self.slot(m)?].z_residue;
        let h = compute_h(&x_tilde, z_l, z_m, self.alpha)?;
        self.gains.adapt(l, m, h)
    }

    /// Phase 1: primal step. Returns the messages for every neighbor.
    pub(crate) fn primal_phase(&mut self, received: &[EstimateMessage], exact: bool) -> Result<Vec<PrimalMessage>> {
        let x_new = if exact { self.exact_x_update(received)? } else { self.x_update(received)? };
        self.prev = Some(Snapshot { x: self.x.clone(), z: self.z.clone(), lambda: self.lambda.clone(), mu: self.mu.clone() });
        self.x = x_new;
        Ok(self
            .neighbors
            .iter()
            .zip(self.gains.values())
            .map(|(&j, &d)| PrimalMessage { from: self.id, to: j, x: self.x.clone(), gain: d })
            .collect())
    }

    /// Phase 2: `z`, `μ` and `λ` steps. Returns the messages for every neighbor.
    pub(crate) fn dual_phase(&mut self, received: &[PrimalMessage], block_z: bool) -> Result<Vec<EstimateMessage>> {
        self.check_primals(received)?;
        let z_new = if block_z {
            self.z_block_update(received)?
        } else {
            received.iter().map(|m| self.z_update(m.from, &m.x, m.gain)).collect::<Result<Vec<_>>>()?
        };
        let mu_new = self.mu_update(&z_new)?;
        let lambda_new = received
            .iter()
            .zip(&z_new)
            .map(|(m, z)| self.lambda_update(m.from, &m.x, z, m.gain))
            .collect::<Result<Vec<_>>>()?;
        self.z = z_new;
        self.mu = mu_new;
        self.lambda = lambda_new;
        let prev = self.prev.as_ref().ok_or(Error::NoResidues(self.id))?;
        Ok(self
            .neighbors
            .iter()
            .enumerate()
            .map(|(s, &j)| EstimateMessage {
                from: self.id,
                to: j,
                z: self.z[s].clone(),
                lambda: self.lambda[s].clone(),
                z_residue: &self.z[s] - &prev.z[s],
            })
            .collect())
    }

    /// Messages describing the current estimates with zero residues, used
    /// before the first round.
    pub(crate) fn bootstrap_messages(&self) -> Vec<EstimateMessage> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(s, &j)| EstimateMessage {
                from: self.id,
                to: j,
                z: self.z[s].clone(),
                lambda: self.lambda[s].clone(),
                z_residue: DVector::zeros(self.dim()),
            })
            .collect()
    }

    pub(crate) fn is_finite(&self) -> bool {
        let ok = |v: &DVector<f64>| v.iter().all(|c| c.is_finite());
        ok(&self.x) && ok(&self.mu) && self.z.iter().all(ok) && self.lambda.iter().all(ok) && self.gains.values().iter().all(|d| d.is_finite())
    }
}

/// The gain-dependent part of the first-order expansion of `E_i^{k+1}`:
///
/// `-2α x̃ᵀ Σ_j d_ij (x̃ - z̃_ij)`.
///
/// `z_tilde` pairs each neighbor with the increment of its estimate of `x_i`.
pub fn penalty_energy_term(x_tilde: &DVector<f64>, z_tilde: &[(usize, DVector<f64>)], alpha: f64, gains: &GainRow) -> f64 {
    let mut acc = DVector::zeros(x_tilde.len());
    for (j, zt) in z_tilde {
        acc += (x_tilde - zt) * gains.get(*j);
    }
    -2.0 * alpha * x_tilde.dot(&acc)
}

/// Change of the gain-dependent energy term caused by one adaptation:
/// the term under `adapted` gains minus the term under `frozen` gains.
/// Equals `-ε h` for the decision that turned `frozen` into `adapted`.
pub fn delta_energy(x_tilde: &DVector<f64>, z_tilde: &[(usize, DVector<f64>)], alpha: f64, frozen: &GainRow, adapted: &GainRow) -> f64 {
    penalty_energy_term(x_tilde, z_tilde, alpha, adapted) - penalty_energy_term(x_tilde, z_tilde, alpha, frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn identity_quad(n: usize) -> Objective {
        Objective::quadratic(DMatrix::identity(n, n), DVector::zeros(n)).unwrap()
    }

    /// Agent 0 with neighbors {0, 1}, zero coupling unless given.
    fn pair_agent(obj: Objective, x: DVector<f64>, coupling: Option<Vec<DMatrix<f64>>>, gains: GainRow) -> AgentState {
        let n = x.len();
        let coupling = coupling.unwrap_or_else(|| vec![DMatrix::zeros(n, n); 2]);
        AgentState::new(0, obj, vec![0, 1], coupling, x.clone(), vec![x.clone(), x], gains, 1.0, 0.1).unwrap()
    }

    fn est(from: usize, z: DVector<f64>, lambda: DVector<f64>) -> EstimateMessage {
        let n = z.len();
        EstimateMessage { from, to: 0, z, lambda, z_residue: DVector::zeros(n) }
    }

    #[test]
    fn x_update_fixed_point() {
        let x = v(&[1.0, -2.0]);
        let obj = Objective::quadratic(DMatrix::identity(2, 2), x.clone()).unwrap();
        let a = pair_agent(obj, x.clone(), None, GainRow::uniform(0, &[0, 1], 0.5).unwrap());
        let recv = [est(0, x.clone(), DVector::zeros(2)), est(1, x.clone(), DVector::zeros(2))];
        assert_eq!(a.x_update(&recv).unwrap(), x);
    }

    #[test]
    fn x_update_single_neighbor() {
        // only the self slot exists: N_0 = {0}, d = 1
        let x = v(&[0.5, 1.0]);
        let gvec = v(&[0.3, -0.1]);
        let offset = v(&[0.2, 0.7]);
        // f = ½‖x - c‖² has gradient x - c
        let obj = Objective::quadratic(DMatrix::identity(2, 2), &x - &gvec).unwrap();
        let gains = GainRow::uniform(0, &[0], 0.5).unwrap();
        let a = AgentState::new(0, obj, vec![0], vec![DMatrix::zeros(2, 2)], x.clone(), vec![x.clone()], gains, 1.0, 0.1).unwrap();
        let recv = [est(0, &x - &offset, DVector::zeros(2))];
        let got = a.x_update(&recv).unwrap();
        let want = &x - (&gvec + &offset) * 0.1;
        assert_relative_eq!((got - want).amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn x_update_missing_payload() {
        let a = pair_agent(identity_quad(1), v(&[0.0]), None, GainRow::uniform(0, &[0, 1], 0.5).unwrap());
        let recv = [est(0, v(&[0.0]), v(&[0.0]))];
        assert!(matches!(a.x_update(&recv), Err(Error::MissingPayload { agent: 0, neighbor: 1 })));
    }

    #[test]
    fn z_update_cases() {
        let gains = GainRow::uniform(0, &[0, 1], 0.5).unwrap();
        let a = pair_agent(identity_quad(1), v(&[0.0]), None, gains.clone());
        assert_eq!(a.z_update(1, &v(&[4.0]), 0.3).unwrap(), v(&[4.0]));

        let mut b = pair_agent(identity_quad(1), v(&[0.0]), None, gains);
        b.set_duals(v(&[0.0]), vec![v(&[0.0]), v(&[1.0])]).unwrap();
        assert_relative_eq!(b.z_update(1, &v(&[3.0]), 0.5).unwrap()[0], 5.0);
        assert!(b.z_update(1, &v(&[3.0]), 0.0).is_err());
        assert!(matches!(b.z_update(4, &v(&[3.0]), 0.5), Err(Error::NotANeighbor { .. })));
    }

    #[test]
    fn z_then_lambda_cancels_dual() {
        // with zero coupling the z-step absorbs λ/d, and the λ-step then zeroes it
        let gains = GainRow::uniform(0, &[0, 1], 0.5).unwrap();
        let mut a = pair_agent(identity_quad(2), v(&[0.0, 0.0]), None, gains);
        let lam0 = v(&[0.7, -1.3]);
        a.set_duals(DVector::zeros(2), vec![DVector::zeros(2), lam0.clone()]).unwrap();
        let xj = v(&[2.0, 1.0]);
        let d = 0.4;
        let z = a.z_update(1, &xj, d).unwrap();
        assert_relative_eq!(((&xj - &z) + &lam0 / d).amax(), 0.0, epsilon = 1e-14);
        let lam = a.lambda_update(1, &xj, &z, d).unwrap();
        assert!(lam.amax() <= 1e-14);
    }

    #[test]
    fn mu_and_lambda_arithmetic() {
        let gains = GainRow::uniform(0, &[0, 1], 0.5).unwrap();
        let coupling = vec![DMatrix::identity(2, 2), -DMatrix::identity(2, 2)];
        let a = pair_agent(identity_quad(2), v(&[0.0, 0.0]), Some(coupling), gains);
        let same = [v(&[1.0, 2.0]), v(&[1.0, 2.0])];
        assert_eq!(a.mu_update(&same).unwrap(), DVector::zeros(2));
        let r = a.mu_update(&[v(&[3.0, 2.0]), v(&[1.0, 1.0])]).unwrap();
        assert_eq!(r, v(&[2.0, 1.0]));

        let mut doubled = a.clone();
        doubled.w = 2.0;
        assert_eq!(doubled.mu_update(&[v(&[3.0, 2.0]), v(&[1.0, 1.0])]).unwrap(), v(&[4.0, 2.0]));

        assert_eq!(a.lambda_update(1, &v(&[1.0, 1.0]), &v(&[1.0, 1.0]), 0.25).unwrap(), DVector::zeros(2));
        assert_eq!(a.lambda_update(1, &v(&[5.0, 1.0]), &v(&[1.0, 1.0]), 0.25).unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn exact_x_cases() {
        // Q = 0: weighted average of the incoming estimates
        let obj = Objective::quadratic(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let gains = GainRow::new(0, &[0, 1], &[3.0, 1.0], 0.5).unwrap();
        let a = pair_agent(obj, v(&[0.0]), None, gains);
        let recv = [est(0, v(&[2.0]), v(&[0.0])), est(1, v(&[6.0]), v(&[0.0]))];
        assert_relative_eq!(a.exact_x_update(&recv).unwrap()[0], 0.75 * 2.0 + 0.25 * 6.0, epsilon = 1e-14);

        // Q = I, c = 0, all z = v: x = v / 2
        let b = pair_agent(identity_quad(2), v(&[0.0, 0.0]), None, GainRow::uniform(0, &[0, 1], 0.5).unwrap());
        let z = v(&[4.0, -2.0]);
        let recv = [est(0, z.clone(), DVector::zeros(2)), est(1, z.clone(), DVector::zeros(2))];
        assert_relative_eq!((b.exact_x_update(&recv).unwrap() - z / 2.0).amax(), 0.0, epsilon = 1e-14);

        let lse = Objective::log_sum_exp(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let c = pair_agent(lse, v(&[0.0]), None, GainRow::uniform(0, &[0, 1], 0.5).unwrap());
        assert!(matches!(c.exact_x_update(&[est(0, v(&[0.0]), v(&[0.0])), est(1, v(&[0.0]), v(&[0.0]))]), Err(Error::ExactModeUnsupported(0))));
    }

    #[test]
    fn block_z_matches_jacobi_without_coupling() {
        let gains = GainRow::uniform(0, &[0, 1], 0.5).unwrap();
        let mut a = pair_agent(identity_quad(2), v(&[0.0, 0.0]), None, gains);
        a.set_duals(DVector::zeros(2), vec![v(&[0.1, 0.2]), v(&[-0.4, 0.3])]).unwrap();
        let msgs = [
            PrimalMessage { from: 0, to: 0, x: v(&[1.0, 2.0]), gain: 0.3 },
            PrimalMessage { from: 1, to: 0, x: v(&[-1.0, 0.5]), gain: 0.6 },
        ];
        let block = a.z_block_update(&msgs).unwrap();
        for (m, z) in msgs.iter().zip(&block) {
            let single = a.z_update(m.from, &m.x, m.gain).unwrap();
            assert_relative_eq!((z - single).amax(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn block_z_is_stationary() {
        // the joint solution zeroes the gradient of the z-subproblem
        let gains = GainRow::uniform(0, &[0, 1], 0.5).unwrap();
        let coupling = vec![DMatrix::identity(2, 2), -DMatrix::identity(2, 2) * 0.5];
        let mut a = pair_agent(identity_quad(2), v(&[0.0, 0.0]), Some(coupling.clone()), gains);
        a.set_duals(v(&[0.2, -0.1]), vec![v(&[0.1, 0.2]), v(&[-0.4, 0.3])]).unwrap();
        let msgs = [
            PrimalMessage { from: 0, to: 0, x: v(&[1.0, 2.0]), gain: 0.3 },
            PrimalMessage { from: 1, to: 0, x: v(&[-1.0, 0.5]), gain: 0.6 },
        ];
        let z = a.z_block_update(&msgs).unwrap();
        let q = &coupling[0] * &z[0] + &coupling[1] * &z[1];
        for s in 0..2 {
            let g = -&a.lambda[s] - (&msgs[s].x - &z[s]) * msgs[s].gain
                + coupling[s].transpose() * &a.mu
                + coupling[s].transpose() * &q * a.w;
            assert!(g.amax() < 1e-12, "{g}");
        }
    }

    #[test]
    fn energy_requires_history() {
        let a = pair_agent(identity_quad(2), v(&[0.0, 0.0]), None, GainRow::uniform(0, &[0, 1], 0.5).unwrap());
        assert!(matches!(a.local_energy(), Err(Error::NoResidues(0))));
    }

    #[test]
    fn energy_of_single_residue() {
        let mut a = pair_agent(identity_quad(2), v(&[0.0, 0.0]), None, GainRow::uniform(0, &[0, 1], 0.5).unwrap());
        a.prev = Some(Snapshot { x: a.x.clone(), z: a.z.clone(), lambda: a.lambda.clone(), mu: a.mu.clone() });
        assert_eq!(a.local_energy().unwrap(), 0.0);
        a.x = v(&[3.0, 4.0]);
        assert_eq!(a.local_energy().unwrap(), 25.0);
    }

    #[test]
    fn delta_energy_zero_without_adaptation() {
        let g = GainRow::uniform(0, &[0, 1, 2], 0.5).unwrap();
        let zt = vec![(0, v(&[1.0])), (1, v(&[-2.0])), (2, v(&[0.5]))];
        assert_eq!(delta_energy(&v(&[0.3]), &zt, 0.1, &g, &g), 0.0);
    }
}
