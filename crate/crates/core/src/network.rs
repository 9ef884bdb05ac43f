//! Agent communication graphs.
//!
//! A [`Topology`] is an undirected edge list. [`CommMatrix`] is the binary
//! sensing/communication matrix built from it, with ones on the diagonal
//! because every agent knows its own state. Neighborhoods returned by
//! [`CommMatrix::neighbors`] therefore include the agent itself, while
//! [`CommMatrix::degree`] counts only the *other* agents.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ConstraintSet;

/// Undirected graph over agents `0..agents`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDoc", into = "TopologyDoc")]
pub struct Topology {
    agents: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    agents: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<TopologyDoc> for Topology {
    type Error = Error;

    fn try_from(doc: TopologyDoc) -> Result<Self> {
        Topology::new(doc.agents, doc.edges.into_iter().map(|[i, j]| (i, j)))
    }
}

impl From<Topology> for TopologyDoc {
    fn from(t: Topology) -> Self {
        TopologyDoc {
            agents: t.agents,
            edges: t.edges.into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }
}

impl Topology {
    /// Builds a topology, normalizing each edge to `(min, max)` and
    /// dropping duplicates. Self-loops and out-of-range indices are rejected.
    pub fn new(agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if agents == 0 {
            return Err(Error::InvalidTopology("agent count must be positive".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop at agent {i}")));
            }
            if i >= agents || j >= agents {
                return Err(Error::InvalidTopology(format!(
                    "edge ({i}, {j}) references an agent outside 0..{agents}"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { agents, edges: set })
    }

    pub fn agent_count(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Number of neighbors of `i`, not counting `i` itself.
    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Binary, symmetric communication matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommMatrix {
    n: usize,
    entries: Vec<bool>,
}

impl CommMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j]
    }

    /// `N_i`: every `j` with `s_ij = 1`, in ascending order, including `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.get(i, j)).collect()
    }

    /// Neighbor count excluding the agent itself.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len() - 1
    }

    /// Dense 0/1 rows, mostly for display and tests.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| u8::from(self.get(i, j))).collect())
            .collect()
    }
}

/// `s_ij = 1` iff `(i, j)` is an edge or `i == j`.
pub fn build_comm_matrix(topology: &Topology) -> CommMatrix {
    let n = topology.agent_count();
    let mut entries = vec![false; n * n];
    for i in 0..n {
        entries[i * n + i] = true;
    }
    for (i, j) in topology.edges() {
        entries[i * n + j] = true;
        entries[j * n + i] = true;
    }
    CommMatrix { n, entries }
}

/// Breadth-first search from agent 0 over the off-diagonal entries.
pub fn check_connected(s: &CommMatrix) -> bool {
    let n = s.size();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if j != i && s.get(i, j) && !seen[j] {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    reached == n
}

/// Every nonzero coupling block `A_ij` (or `A_ji`) must sit on a link.
pub fn check_conformity(s: &CommMatrix, constraints: &ConstraintSet) -> bool {
    if constraints.agent_count() != s.size() {
        return false;
    }
    constraints
        .nonzero_pairs()
        .all(|(i, j)| s.get(i, j) && s.get(j, i))
}

/// Cycle `0 - 1 - ... - (N-1) - 0`.
pub fn gen_ring(agents: usize) -> Result<Topology> {
    if agents < 3 {
        return Err(Error::RingTooSmall(agents));
    }
    Topology::new(agents, (0..agents).map(|i| (i, (i + 1) % agents)))
}

/// Default number of random pair draws used by [`gen_augmented_ring`].
pub fn default_augment_attempts(agents: usize) -> usize {
    4 * agents * agents
}

/// A ring with extra random chords, keeping every degree at most `max_degree`.
pub fn gen_augmented_ring(agents: usize, max_degree: usize, seed: u64) -> Result<Topology> {
    gen_augmented_ring_with_attempts(agents, max_degree, seed, default_augment_attempts(agents))
}

/// Same as [`gen_augmented_ring`] with an explicit budget of candidate draws.
///
/// Each attempt draws an unordered pair uniformly; pairs that are already
/// linked are skipped, and a new chord is accepted only if both endpoints
/// still have spare degree.
pub fn gen_augmented_ring_with_attempts(
    agents: usize,
    max_degree: usize,
    seed: u64,
    attempts: usize,
) -> Result<Topology> {
    if max_degree < 2 {
        return Err(Error::MaxDegreeTooSmall(max_degree));
    }
    let ring = gen_ring(agents)?;
    let mut edges: BTreeSet<(usize, usize)> = ring.edges().collect();
    let mut degree = vec![2usize; agents];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..attempts {
        let i = rng.gen_range(0..agents);
        let j = rng.gen_range(0..agents);
        if i == j {
            continue;
        }
        let e = (i.min(j), i.max(j));
        if edges.contains(&e) || degree[i] >= max_degree || degree[j] >= max_degree {
            continue;
        }
        edges.insert(e);
        degree[i] += 1;
        degree[j] += 1;
    }
    Topology::new(agents, edges)
}
