//! Per-agent penalty rows of the row-stochastic gain matrix.
//!
//! Agent `i` owns row `i`: one penalty `d_ij` per neighbor `j ∈ N_i`
//! (itself included). Rows start from positive raw gains normalized to sum
//! to one. Adaptation then moves mass between exactly two entries per call,
//! which keeps the row sum fixed and every entry strictly positive.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Default adaptation ratio `γ`.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// One row of the gain matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    owner: usize,
    neighbors: Vec<usize>,
    d: Vec<f64>,
    gamma: f64,
}

/// Outcome of one adaptation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationDecision {
    /// Neighbor whose penalty grows when `epsilon > 0`.
    pub l: usize,
    /// Neighbor whose penalty shrinks when `epsilon > 0`.
    pub m: usize,
    pub h: f64,
    /// Signed amount added to `d_il` and removed from `d_im`.
    pub epsilon: f64,
}

impl GainRow {
    /// Normalizes positive raw gains `beta0` (aligned with `neighbors`).
    pub fn new(owner: usize, neighbors: &[usize], beta0: &[f64], gamma: f64) -> Result<Self> {
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood(owner));
        }
        check_dim(neighbors.len(), beta0.len())?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidConfig { field: "gamma".into(), reason: format!("must lie in (0, 1), got {gamma}") });
        }
        for (&j, &b) in neighbors.iter().zip(beta0) {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::NonPositiveGain { neighbor: j, value: b });
            }
        }
        let total: f64 = beta0.iter().sum();
        Ok(Self {
            owner,
            neighbors: neighbors.to_vec(),
            d: beta0.iter().map(|b| b / total).collect(),
            gamma,
        })
    }

    /// All raw gains equal, i.e. `d_ij = 1 / |N_i|`.
    pub fn uniform(owner: usize, neighbors: &[usize], gamma: f64) -> Result<Self> {
        Self::new(owner, neighbors, &vec![1.0; neighbors.len()], gamma)
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Penalties aligned with [`neighbors`](Self::neighbors).
    pub fn values(&self) -> &[f64] {
        &self.d
    }

    fn slot(&self, j: usize) -> Result<usize> {
        self.neighbors
            .iter()
            .position(|&n| n == j)
            .ok_or(Error::NotANeighbor { agent: self.owner, neighbor: j })
    }

    /// `d_ij`, zero for agents outside the neighborhood.
    pub fn get(&self, j: usize) -> f64 {
        self.slot(j).map_or(0.0, |s| self.d[s])
    }

    pub fn sum(&self) -> f64 {
        self.d.iter().sum()
    }

    /// Row of length `agents` with zeros off the neighborhood.
    pub fn dense(&self, agents: usize) -> Vec<f64> {
        let mut row = vec![0.0; agents];
        for (&j, &v) in self.neighbors.iter().zip(&self.d) {
            row[j] = v;
        }
        row
    }

    /// Moves penalty mass between `d_il` and `d_im` according to the sign of `h`.
    ///
    /// * `h > 0`: `ε = γ d_im`, so `d_il` grows and `d_im` shrinks by `ε`.
    /// * `h < 0`: `ε = -γ d_il`, so `d_il` shrinks and `d_im` grows.
    /// * `h == 0` or `l == m`: nothing changes.
    pub fn adapt(&mut self, l: usize, m: usize, h: f64) -> Result<AdaptationDecision> {
        let sl = self.slot(l)?;
        let sm = self.slot(m)?;
        let epsilon = if l == m || h == 0.0 || h.is_nan() {
            0.0
        } else if h > 0.0 {
            self.gamma * self.d[sm]
        } else {
            -self.gamma * self.d[sl]
        };
        if epsilon != 0.0 {
            self.d[sl] += epsilon;
            self.d[sm] -= epsilon;
        }
        Ok(AdaptationDecision { l, m, h, epsilon })
    }
}

/// Argmax and argmin of `scores`, ties going to the smallest agent index.
pub fn select_extremal(scores: &[(usize, f64)]) -> Result<(usize, usize)> {
    let (&first, rest) = scores.split_first().ok_or(Error::EmptyNeighborhood(usize::MAX))?;
    let (mut hi, mut lo) = (first, first);
    for &(j, v) in rest {
        if v > hi.1 || (v == hi.1 && j < hi.0) {
            hi = (j, v);
        }
        if v < lo.1 || (v == lo.1 && j < lo.0) {
            lo = (j, v);
        }
    }
    Ok((hi.0, lo.0))
}

/// Picks `(l, m)` maximizing / minimizing `∇f_i(x_i) · (x_i - z_ij)`.
///
/// `z_received` pairs each neighbor `j` with its current estimate `z_ij` of `x_i`.
pub fn select_extremal_neighbors(
    grad: &DVector<f64>,
    x_i: &DVector<f64>,
    z_received: &[(usize, &DVector<f64>)],
) -> Result<(usize, usize)> {
    let scores = z_received
        .iter()
        .map(|&(j, z)| {
            check_dim(x_i.len(), z.len())?;
            Ok((j, grad.dot(&(x_i - z))))
        })
        .collect::<Result<Vec<_>>>()?;
    select_extremal(&scores)
}

/// `h = 2α x̃ᵀ[(x̃ - z̃_l) - (x̃ - z̃_m)] = 2α x̃ᵀ(z̃_m - z̃_l)`.
pub fn compute_h(x_tilde: &DVector<f64>, z_tilde_l: &DVector<f64>, z_tilde_m: &DVector<f64>, alpha: f64) -> Result<f64> {
    check_dim(x_tilde.len(), z_tilde_l.len())?;
    check_dim(x_tilde.len(), z_tilde_m.len())?;
    Ok(2.0 * alpha * x_tilde.dot(&(z_tilde_m - z_tilde_l)))
}
