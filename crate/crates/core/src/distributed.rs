//! Distributed solution of `Λ X + X Λᵀ + D = 0`.
//!
//! Agent `i` knows only its slice `Λ_i` (with `Σ Λ_i = Λ`). With the unknown
//! `w = [vec X; vec D_1; …; vec D_ν]` every agent holds the local equations
//!
//! ```text
//! (I ⊗ Λ_i + Λ_i ⊗ I) vec X + vec D_i = 0,      Σ_j vec D_j = vec D,
//! ```
//!
//! written `H_i w = z_i`. Their common solution is unique and contains the
//! centralized `X*`. Each agent keeps an estimate `ŵ_i` with `H_i ŵ_i = z_i`
//! and an orthonormal basis `K_i` of the directions it is still free to move
//! in. Pairwise exchanges with neighbours move `ŵ_i` into the neighbour's
//! affine solution set and shrink `K_i` to `Im K_i ∩ Im K_j`, so after
//! `diam(𝒢)` rounds every agent has pinned down the global solution.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lyapunov::solve_lyapunov;
use crate::scalar::Scalar;

/// Relative rank tolerance for pseudoinverses, kernels and basis intersections.
pub const RANK_TOL: f64 = 1e-10;

/// Undirected communication graph on agents `0..ν`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn from_edges(agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); agents];
        for &(a, b) in edges {
            if a >= agents || b >= agents {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) refers to a missing agent (ν = {agents})"
                )));
            }
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(CommGraph { adjacency })
    }

    pub fn path(agents: usize) -> Self {
        let edges: Vec<_> = (1..agents).map(|i| (i - 1, i)).collect();
        Self::from_edges(agents, &edges).expect("valid path")
    }

    pub fn complete(agents: usize) -> Self {
        let edges: Vec<_> = (0..agents)
            .flat_map(|i| ((i + 1)..agents).map(move |j| (i, j)))
            .collect();
        Self::from_edges(agents, &edges).expect("valid complete graph")
    }

    /// `rows × cols` lattice; agent `r·cols + c` sits at `(r, c)`.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::from_edges(rows * cols, &edges).expect("valid grid")
    }

    pub fn agent_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Neighbours in ascending order.
    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.adjacency[agent]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.agent_count()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap_or(0);
            for &w in &self.adjacency[v] {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Longest shortest path from `agent`, or `None` if some agent is unreachable.
    pub fn eccentricity(&self, agent: usize) -> Option<usize> {
        self.distances_from(agent)
            .into_iter()
            .try_fold(0, |acc, d| d.map(|d| acc.max(d)))
    }

    /// `None` for a disconnected graph.
    pub fn diameter(&self) -> Option<usize> {
        (0..self.agent_count())
            .map(|a| self.eccentricity(a))
            .try_fold(0, |acc, e| e.map(|e| acc.max(e)))
    }

    pub fn is_connected(&self) -> bool {
        self.agent_count() == 0 || self.distances_from(0).iter().all(Option::is_some)
    }

    /// Connected-component label of every agent.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.agent_count()];
        let mut next = 0;
        for s in 0..self.agent_count() {
            if label[s] != usize::MAX {
                continue;
            }
            for (v, d) in self.distances_from(s).iter().enumerate() {
                if d.is_some() {
                    label[v] = next;
                }
            }
            next += 1;
        }
        label
    }
}

/// Row partition: `Λ_i` keeps the rows of the states assigned to agent `i`.
pub fn partition_lambda<T: Scalar>(
    lambda: &DMatrix<T>,
    assignment: &[usize],
    agents: usize,
) -> Result<Vec<DMatrix<T>>> {
    let n = lambda.nrows();
    if assignment.len() != n {
        return Err(Error::Dimension(format!(
            "assignment covers {} states, Λ has {n}",
            assignment.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&a| a >= agents) {
        return Err(Error::Validation(format!("state assigned to agent {bad}, ν = {agents}")));
    }
    let mut parts = vec![DMatrix::<T>::zeros(n, lambda.ncols()); agents];
    for (row, &agent) in assignment.iter().enumerate() {
        parts[agent].row_mut(row).copy_from(&lambda.row(row));
    }
    Ok(parts)
}

/// `vec` in column-major order.
fn vectorize<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

fn unvectorize<T: Scalar>(v: &[T], n: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(n, n, v)
}

/// Pair of a local estimate and its free directions, as exchanged on edges.
#[derive(Debug, Clone)]
pub struct Message<T: Scalar> {
    pub from: usize,
    pub estimate: DVector<T>,
    pub kernel: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct AgentState<T: Scalar> {
    pub id: usize,
    pub lambda_i: DMatrix<T>,
    pub h: DMatrix<T>,
    pub z: DVector<T>,
    pub estimate: DVector<T>,
    /// Orthonormal columns; zero columns once the solution is pinned down.
    pub kernel: DMatrix<T>,
    n: usize,
}

impl<T: Scalar> AgentState<T> {
    /// Builds the local stacked system of agent `id`.
    pub fn new(id: usize, lambda_i: DMatrix<T>, d: &DMatrix<T>, agents: usize) -> Result<Self> {
        let n = lambda_i.nrows();
        if d.shape() != (n, n) || lambda_i.ncols() != n {
            return Err(Error::Dimension("Λ_i and D must be square of equal size".into()));
        }
        if id >= agents {
            return Err(Error::Validation(format!("agent {id} out of range (ν = {agents})")));
        }
        let nn = n * n;
        let unknowns = (agents + 1) * nn;
        let eye = DMatrix::<T>::identity(n, n);
        let lbar = eye.kronecker(&lambda_i) + lambda_i.kronecker(&eye);
        let mut h = DMatrix::<T>::zeros(2 * nn, unknowns);
        h.view_mut((0, 0), (nn, nn)).copy_from(&lbar);
        let ident = DMatrix::<T>::identity(nn, nn);
        h.view_mut((0, nn * (id + 1)), (nn, nn)).copy_from(&ident);
        for j in 0..agents {
            h.view_mut((nn, nn * (j + 1)), (nn, nn)).copy_from(&ident);
        }
        let mut z = DVector::<T>::zeros(2 * nn);
        z.rows_mut(nn, nn).copy_from(&vectorize(d));
        Ok(AgentState {
            id,
            lambda_i,
            h,
            z,
            estimate: DVector::zeros(unknowns),
            kernel: DMatrix::zeros(unknowns, 0),
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Current estimate of `X`.
    pub fn x_hat(&self) -> DMatrix<T> {
        unvectorize(&self.estimate.as_slice()[..self.n * self.n], self.n)
    }

    /// Current estimate of `D_j`.
    pub fn d_hat(&self, j: usize) -> DMatrix<T> {
        let nn = self.n * self.n;
        unvectorize(&self.estimate.as_slice()[nn * (j + 1)..nn * (j + 2)], self.n)
    }

    /// `‖H_i ŵ_i − z_i‖`.
    pub fn consistency_residual(&self) -> T {
        (&self.h * &self.estimate - &self.z).norm()
    }

    pub fn message(&self) -> Message<T> {
        Message {
            from: self.id,
            estimate: self.estimate.clone(),
            kernel: self.kernel.clone(),
        }
    }
}

/// Eigenpairs of a symmetric matrix, largest eigenvalue first.
fn sorted_eigen<T: Scalar>(m: DMatrix<T>) -> Result<(Vec<T>, DMatrix<T>)> {
    let n = m.nrows();
    let (mut values, vectors) = T::symmetric_eigen(&m).ok_or(Error::EigenFailure(n))?;
    values.reverse();
    let cols: Vec<usize> = (0..n).rev().collect();
    Ok((values, vectors.select_columns(&cols)))
}

/// `ŵ_i⁰ = H_i† z_i` and `K_i⁰ = Basis(ker H_i)`.
///
/// The pseudoinverse goes through the eigendecomposition of `H_i H_iᵀ`; the
/// cutoff on those eigenvalues is `RANK_TOL` relative to the largest.
pub fn local_init<T: Scalar>(mut agent: AgentState<T>) -> Result<AgentState<T>> {
    let unknowns = agent.h.ncols();
    let gram = &agent.h * agent.h.transpose();
    let (values, vectors) = sorted_eigen(gram)?;
    let lmax = values.first().copied().unwrap_or(T::zero());
    let cutoff = T::tol(RANK_TOL) * lmax;
    let rank = values.iter().filter(|&&l| l > cutoff).count();

    let mut w = DVector::<T>::zeros(unknowns);
    let mut row_space = Vec::with_capacity(rank);
    for k in 0..rank {
        let wk = vectors.column(k);
        let hv = agent.h.tr_mul(&wk);
        w += &hv * (wk.dot(&agent.z) / values[k]);
        row_space.push(hv / values[k].sqrt());
    }
    let residual = (&agent.h * &w - &agent.z).norm();
    if residual > T::tol(1e-8) * (T::one() + agent.z.norm()) {
        return Err(Error::InconsistentLocal {
            agent: agent.id,
            residual: residual.as_f64(),
        });
    }
    agent.kernel = orthogonal_complement(&row_space, unknowns, unknowns - rank)?;
    agent.estimate = w;
    Ok(agent)
}

/// Eigenvectors whose eigenvalue is at most `cutoff`, in order.
fn vectors_shared<T: Scalar>(vectors: &DMatrix<T>, values: &[T], cutoff: T) -> DMatrix<T> {
    let cols: Vec<_> = values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= cutoff)
        .map(|(k, _)| vectors.column(k).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Orthonormal basis of the complement of `span(basis)` (orthonormal input).
fn orthogonal_complement<T: Scalar>(basis: &[DVector<T>], dim: usize, expected: usize) -> Result<DMatrix<T>> {
    if expected == 0 {
        return Ok(DMatrix::zeros(dim, 0));
    }
    let mut proj = DMatrix::<T>::identity(dim, dim);
    for v in basis {
        proj -= v * v.transpose();
    }
    let (_, vectors) = sorted_eigen(proj)?;
    Ok(vectors.columns(0, expected).into_owned())
}

/// Pairwise update of `agent` with a neighbour's message.
///
/// The new estimate lies in `(ŵ_i + Im K_i) ∩ (ŵ_j + Im K_j)`. Among those
/// points it takes the one whose `X` block is closest to the current `X̂_i`,
/// breaking ties by the least step. That set's `X` blocks form an affine set
/// through `X*`, so `‖X̂_i − X*‖` never grows.
///
/// With `C = K_iᵀ K_j`, `I − C Cᵀ` has eigenvalues `sin² θ` over the
/// principal angles; the near-zero ones span `Im K_i ∩ Im K_j`.
pub fn pair_update<T: Scalar>(agent: &mut AgentState<T>, msg: &Message<T>) -> Result<()> {
    let ki = agent.kernel.ncols();
    if ki == 0 {
        return Ok(());
    }
    let diff = &msg.estimate - &agent.estimate;
    let cross = agent.kernel.tr_mul(&msg.kernel);
    let gram = DMatrix::<T>::identity(ki, ki) - &cross * cross.transpose();
    // Kᵢᵀ (I − Kⱼ Kⱼᵀ) diff
    let rhs = agent.kernel.tr_mul(&diff) - &cross * msg.kernel.tr_mul(&diff);

    let (values, vectors) = sorted_eigen(gram)?;
    let cutoff = T::tol(2.0 * RANK_TOL);
    let mut coef = DVector::<T>::zeros(ki);
    let mut shared = Vec::new();
    for (k, &l) in values.iter().enumerate() {
        let v = vectors.column(k);
        if l > cutoff {
            coef += v * (v.dot(&rhs) / l);
        } else {
            shared.push(&agent.kernel * v);
        }
    }
    if !shared.is_empty() {
        // Slide along the shared directions to bring the X block back as
        // close as possible to where it was.
        let nn = agent.n * agent.n;
        let shift = agent.kernel.rows(0, nn) * &coef;
        let along = DMatrix::from_columns(&shared);
        let along_x = along.rows(0, nn).into_owned();
        let (lv, lvec) = sorted_eigen(along_x.tr_mul(&along_x))?;
        let lcut = T::tol(RANK_TOL) * lv[0];
        let rhs_x = along_x.tr_mul(&shift);
        let mut c = DVector::<T>::zeros(shared.len());
        for (k, &l) in lv.iter().enumerate() {
            if l > lcut {
                let v = lvec.column(k);
                c -= v * (v.dot(&rhs_x) / l);
            }
        }
        coef += &vectors_shared(&vectors, &values, cutoff) * c;
    }
    let moved = &agent.estimate + &agent.kernel * coef;
    // The move must land in the neighbour's set; a miss means the two local
    // systems do not share a solution.
    let miss = {
        let off = &moved - &msg.estimate;
        let along = &msg.kernel * msg.kernel.tr_mul(&off);
        (off - along).norm()
    };
    let scale = T::one() + agent.estimate.norm() + msg.estimate.norm();
    if miss > T::tol(1e-8) * scale {
        return Err(Error::InconsistentLocal {
            agent: agent.id,
            residual: miss.as_f64(),
        });
    }
    agent.estimate = moved;
    agent.kernel = if shared.is_empty() {
        DMatrix::zeros(agent.estimate.len(), 0)
    } else {
        DMatrix::from_columns(&shared)
    };
    Ok(())
}

/// One synchronous round: every agent exchanges with each neighbour, in
/// ascending neighbour order, against a snapshot of last round's messages.
pub fn round<T: Scalar>(agents: &mut [AgentState<T>], graph: &CommGraph) -> Result<()> {
    let inbox: Vec<Message<T>> = agents.iter().map(AgentState::message).collect();
    agents
        .par_iter_mut()
        .map(|agent| {
            for &j in graph.neighbors(agent.id) {
                pair_update(agent, &inbox[j])?;
            }
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DistributedRun<T: Scalar> {
    /// Centralized reference solution.
    pub x_star: DMatrix<T>,
    /// Final `X̂_i` per agent.
    pub estimates: Vec<DMatrix<T>>,
    /// `D̂_i` taken from agent `i`'s own estimate.
    pub d_blocks: Vec<DMatrix<T>>,
    /// `‖X̂_i − X*‖_F` per round (row 0 is the initialization) and agent.
    pub error_trace: Vec<Vec<f64>>,
    /// `dim K_i` per round and agent.
    pub kernel_dims: Vec<Vec<usize>>,
    /// Largest `‖H_i ŵ_i − z_i‖` seen over all agents and rounds.
    pub max_consistency_residual: f64,
    /// First round in which each agent's kernel was empty.
    pub settled_round: Vec<Option<usize>>,
    /// Largest `‖X̂_i − X̂_iᵀ‖_F / ‖X*‖_F` at readout; `X` is not symmetrized
    /// in the unknowns, so this checks the solve.
    pub max_asymmetry: f64,
    pub rounds: usize,
}

impl<T: Scalar> DistributedRun<T> {
    /// `‖Σ_i D̂_i − D‖_F`.
    pub fn conservation_error(&self, d: &DMatrix<T>) -> f64 {
        let mut sum = -d.clone();
        for block in &self.d_blocks {
            sum += block;
        }
        sum.norm().as_f64()
    }
}

/// Runs the distributed solver until every agent has settled or `max_rounds`
/// is reached.
pub fn run_distributed<T: Scalar>(
    lambda: &DMatrix<T>,
    d: &DMatrix<T>,
    graph: &CommGraph,
    assignment: &[usize],
    max_rounds: usize,
) -> Result<DistributedRun<T>> {
    let nu = graph.agent_count();
    if nu == 0 {
        return Err(Error::Validation("communication graph has no agents".into()));
    }
    let x_star = solve_lyapunov(lambda, d)?.x;
    let parts = partition_lambda(lambda, assignment, nu)?;
    let mut agents = parts
        .into_iter()
        .enumerate()
        .map(|(i, li)| AgentState::new(i, li, d, nu).and_then(local_init))
        .collect::<Result<Vec<_>>>()?;

    let mut error_trace = Vec::with_capacity(max_rounds + 1);
    let mut kernel_dims = Vec::with_capacity(max_rounds + 1);
    let mut settled = vec![None; nu];
    let mut max_residual = 0.0f64;
    let mut observe = |agents: &[AgentState<T>], r: usize, settled: &mut Vec<Option<usize>>| {
        error_trace.push(agents.iter().map(|a| (a.x_hat() - &x_star).norm().as_f64()).collect());
        kernel_dims.push(agents.iter().map(|a| a.kernel.ncols()).collect());
        for a in agents {
            max_residual = max_residual.max(a.consistency_residual().as_f64());
            if a.kernel.ncols() == 0 && settled[a.id].is_none() {
                settled[a.id] = Some(r);
            }
        }
    };
    observe(&agents, 0, &mut settled);
    let mut rounds = 0;
    while rounds < max_rounds && settled.iter().any(Option::is_none) {
        round(&mut agents, graph)?;
        rounds += 1;
        observe(&agents, rounds, &mut settled);
    }

    let scale = x_star.norm().as_f64().max(f64::MIN_POSITIVE);
    let errors: Vec<f64> = agents
        .iter()
        .map(|a| (a.x_hat() - &x_star).norm().as_f64() / scale)
        .collect();
    let unsettled: Vec<usize> = (0..nu).filter(|&i| settled[i].is_none()).collect();
    let inaccurate = errors.iter().any(|&e| e > 1e-6);
    if !unsettled.is_empty() || inaccurate {
        let components = graph.components();
        let detail = (0..nu)
            .map(|i| {
                format!(
                    "agent {i} (component {}): dim K = {}, rel. error {:.3e}",
                    components[i],
                    agents[i].kernel.ncols(),
                    errors[i]
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::NotConverged { rounds, detail });
    }
    let estimates: Vec<DMatrix<T>> = agents.iter().map(AgentState::x_hat).collect();
    let max_asymmetry = estimates
        .iter()
        .map(|x| (x - x.transpose()).norm().as_f64() / scale)
        .fold(0.0, f64::max);
    Ok(DistributedRun {
        estimates,
        max_asymmetry,
        d_blocks: agents.iter().map(|a| a.d_hat(a.id)).collect(),
        x_star,
        error_trace,
        kernel_dims,
        max_consistency_residual: max_residual,
        settled_round: settled,
        rounds,
    })
}

/// Assigns `n` states to `agents` in contiguous, nearly equal blocks.
pub fn block_assignment(n: usize, agents: usize) -> Vec<usize> {
    (0..n).map(|k| (k * agents / n.max(1)).min(agents.saturating_sub(1))).collect()
}
