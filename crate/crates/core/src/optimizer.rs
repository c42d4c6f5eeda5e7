//! Green-split optimization.
//!
//! The congestion cost `J(d) = trace(C W(A_av(d), x0) Cᵀ)` is minimized over
//! the simplex `{d ≥ 0, Σd = T}` through the smoothed spectral abscissa:
//! `ε̄` is achievable when some `d` has `α̃(ε̄, A_av(d)) ≤ 0`, which is the
//! same as `J(d) ≤ 1/ε̄`. An inner projected-gradient loop drives `α̃` to
//! zero for a fixed `ε̄`; an outer line search raises `ε̄` while it stays
//! achievable.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::ModeSet;
use crate::error::{Error, Result};
use crate::lyapunov::congestion_cost;
use crate::scalar::Scalar;
use crate::ssa::{ssa_gradient, ShiftedCost, SsaOptions};

#[derive(Debug, Clone)]
pub struct OptOptions {
    /// Fraction of the Newton step `α̃/(∂α̃·v)` taken per inner iteration.
    pub mu: f64,
    /// Initial `ε̄` increment as a fraction of `ε̄₀`.
    pub xi: f64,
    /// The line search stops once the increment falls below `xi_min·ε̄₀`.
    pub xi_min: f64,
    /// Relative stationarity tolerance `‖𝒫∇‖∞ ≤ tol_kkt·‖∇‖∞`.
    pub tol_kkt: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Largest change of a single duration per step, as a fraction of `T`.
    pub max_step_fraction: f64,
    /// Number of starting points; the first is the mode set's own durations.
    pub starts: usize,
    pub seed: u64,
    pub ssa: SsaOptions,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            mu: 0.9,
            xi: 0.05,
            xi_min: 1e-4,
            tol_kkt: 1e-6,
            max_inner: 5000,
            max_outer: 10_000,
            max_step_fraction: 0.1,
            starts: 1,
            seed: 0,
            ssa: SsaOptions::default(),
        }
    }
}

impl OptOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("xi", self.xi),
            ("xi_min", self.xi_min),
            ("tol_kkt", self.tol_kkt),
            ("max_step_fraction", self.max_step_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mu > 1.0 {
            return Err(Error::Validation(format!("mu must be in (0, 1], got {}", self.mu)));
        }
        if self.starts == 0 {
            return Err(Error::Validation("starts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One inner iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    /// Global iteration counter across all inner loops.
    pub iter: usize,
    pub outer: usize,
    /// Target `ε̄` of the running inner loop.
    pub epsilon: f64,
    pub alpha_tilde: f64,
    /// `‖𝒫∇‖∞`.
    pub kkt_norm: f64,
    /// Best cost `1/ε̄` accepted so far.
    pub cost: f64,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub index: usize,
    pub d0: Vec<f64>,
    /// `None` when the start is unstable.
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptReport {
    pub d_star: Vec<f64>,
    pub eps_star: f64,
    /// `1/ε*`.
    pub cost: f64,
    /// `J` at the first start (the uniform or warm-start schedule).
    pub initial_cost: f64,
    pub best_start: usize,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub trajectory: Vec<TrajectoryPoint>,
    pub starts: Vec<StartSummary>,
}

/// Outcome of one inner loop.
#[derive(Debug, Clone)]
pub struct InnerResult<T: Scalar> {
    pub d: Vec<T>,
    pub alpha_tilde: T,
    /// `α̃ ≤ tol_α` was reached, so `ε̄` is achievable at `d`.
    pub achieved: bool,
    /// Either achieved or stationary; false on iteration limit or a stalled line search.
    pub converged: bool,
    pub iterations: usize,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Rosen projection of `grad` onto the feasible directions of the simplex at `d`.
///
/// Coordinates with `d_i ≤ active_tol` start out active (held at zero). The
/// returned `v` has zero sum and `v_i ≤ 0` on active coordinates, so a step
/// `d − s·v` keeps `d ≥ 0`. Active coordinates whose gradient lies below the
/// mean over free coordinates are released one at a time, most negative first
/// and lowest index on ties.
pub fn project_tangent<T: Scalar>(grad: &[T], d: &[T], active_tol: T) -> Vec<T> {
    let m = grad.len();
    let mut free: Vec<bool> = d.iter().map(|&x| x > active_tol).collect();
    if !free.iter().any(|&f| f) {
        free.iter_mut().for_each(|f| *f = true);
    }
    loop {
        let count = free.iter().filter(|&&f| f).count();
        let sum = (0..m).filter(|&i| free[i]).fold(T::zero(), |acc, i| acc + grad[i]);
        let mean = sum / T::lit(count as f64);
        let release = (0..m)
            .filter(|&i| !free[i] && grad[i] < mean)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if grad[b] <= grad[i] => Some(b),
                _ => Some(i),
            });
        match release {
            Some(i) => free[i] = true,
            None => {
                return (0..m)
                    .map(|i| if free[i] { grad[i] - mean } else { T::zero() })
                    .collect()
            }
        }
    }
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Clamps tiny entries to zero and rescales so that `Σd = T`.
fn renormalize<T: Scalar>(d: &mut [T], cycle: T) {
    let floor = T::lit(1e-12) * cycle;
    for x in d.iter_mut() {
        if *x < floor {
            *x = T::zero();
        }
    }
    let total = d.iter().fold(T::zero(), |a, &x| a + x);
    for x in d.iter_mut() {
        *x = *x * cycle / total;
    }
}

/// Congestion cost `J(d)` for a duration vector.
pub fn cost_at<T: Scalar>(ms: &ModeSet<T>, c: &DMatrix<T>, x0: &DVector<T>, d: &[T]) -> Result<T> {
    Ok(congestion_cost(&ms.average_matrix(d)?, c, x0))
}

struct Probe<T: Scalar> {
    alpha_tilde: T,
    tol_alpha: T,
    grad: Option<DVector<T>>,
}

fn probe<T: Scalar>(
    ms: &ModeSet<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    eps: T,
    d: &[T],
    opts: &SsaOptions,
    want_grad: bool,
) -> Result<Probe<T>> {
    let a = ms.linear_average(d)?;
    let cost = ShiftedCost::new(&a, c, x0)?;
    let tol_alpha = T::tol(1e-8) * (T::one() + cost.abscissa().abs());
    let sol = cost.solve(eps, opts)?;
    let grad = if want_grad && sol.alpha_tilde > tol_alpha {
        Some(ssa_gradient(&sol, ms)?)
    } else {
        None
    };
    Ok(Probe {
        alpha_tilde: sol.alpha_tilde,
        tol_alpha,
        grad,
    })
}

/// Drives `α̃(ε̄, A_av(d))` to zero from `start_d` by projected gradient steps
/// along `−𝒫∇` with `∇ = α̃·∂α̃/∂d`.
pub fn inner_descent<T: Scalar>(
    ms: &ModeSet<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    eps: T,
    start_d: &[T],
    opts: &OptOptions,
) -> Result<InnerResult<T>> {
    inner_loop(ms, c, x0, eps, start_d, opts, 0, 0, T::one() / eps)
}

#[allow(clippy::too_many_arguments)]
fn inner_loop<T: Scalar>(
    ms: &ModeSet<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    eps: T,
    start_d: &[T],
    opts: &OptOptions,
    outer: usize,
    iter_offset: usize,
    best_cost: T,
) -> Result<InnerResult<T>> {
    let cycle = ms.cycle_time;
    let active_tol = T::lit(1e-12) * cycle;
    let max_change = T::lit(opts.max_step_fraction) * cycle;
    let mu = T::lit(opts.mu);
    let mut d = start_d.to_vec();
    let mut trajectory = Vec::new();
    let mut current = probe(ms, c, x0, eps, &d, &opts.ssa, true)?;

    let finish = |d: Vec<T>, p: &Probe<T>, achieved, converged, iterations, trajectory| InnerResult {
        d,
        alpha_tilde: p.alpha_tilde,
        achieved,
        converged,
        iterations,
        trajectory,
    };

    for k in 0..opts.max_inner {
        let record = |v_norm: T, d: &[T]| TrajectoryPoint {
            iter: iter_offset + k,
            outer,
            epsilon: eps.as_f64(),
            alpha_tilde: current.alpha_tilde.as_f64(),
            kkt_norm: v_norm.as_f64(),
            cost: best_cost.as_f64(),
            d: d.iter().map(|x| x.as_f64()).collect(),
        };
        let Some(g) = current.grad.as_ref() else {
            trajectory.push(record(T::zero(), &d));
            return Ok(finish(d, &current, true, true, k, trajectory));
        };
        let alpha = current.alpha_tilde;
        let nabla: Vec<T> = g.iter().map(|&x| alpha * x).collect();
        let v = project_tangent(&nabla, &d, active_tol);
        let v_norm = inf_norm(&v);
        trajectory.push(record(v_norm, &d));
        if v_norm <= T::tol(opts.tol_kkt) * inf_norm(&nabla) {
            return Ok(finish(d, &current, false, true, k, trajectory));
        }

        // Newton length for the linearized α̃ along −v, then the caps.
        let slope = v.iter().zip(g.iter()).fold(T::zero(), |a, (&vi, &gi)| a + vi * gi);
        let mut step = if slope > T::zero() {
            mu * alpha / slope
        } else {
            max_change / v_norm
        };
        step = step.min(max_change / v_norm);
        for (&di, &vi) in d.iter().zip(&v) {
            if vi > T::zero() {
                step = step.min(di / vi);
            }
        }

        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<T> = d.iter().zip(&v).map(|(&di, &vi)| di - step * vi).collect();
            renormalize(&mut trial, cycle);
            if let Ok(p) = probe(ms, c, x0, eps, &trial, &opts.ssa, true) {
                if p.alpha_tilde.abs() < alpha.abs() {
                    accepted = Some((trial, p));
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        match accepted {
            Some((trial, p)) => {
                d = trial;
                current = p;
            }
            None => return Ok(finish(d, &current, false, false, k + 1, trajectory)),
        }
    }
    let achieved = current.alpha_tilde <= current.tol_alpha;
    Ok(finish(d, &current, achieved, achieved, opts.max_inner, trajectory))
}

struct StartOutcome<T: Scalar> {
    d: Vec<T>,
    eps: T,
    cost: T,
    inner_iterations: usize,
    outer_iterations: usize,
    trajectory: Vec<TrajectoryPoint>,
}

fn run_start<T: Scalar>(
    ms: &ModeSet<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    d0: &[T],
    opts: &OptOptions,
) -> Result<Option<StartOutcome<T>>> {
    let j0 = cost_at(ms, c, x0, d0)?;
    if !j0.is_finite() || j0 <= T::zero() {
        return Ok(None);
    }
    let eps0 = T::one() / j0;
    let mut best = StartOutcome {
        d: d0.to_vec(),
        eps: eps0,
        cost: j0,
        inner_iterations: 0,
        outer_iterations: 0,
        trajectory: Vec::new(),
    };
    let mut xi = T::lit(opts.xi) * eps0;
    let xi_min = T::lit(opts.xi_min) * eps0;
    while xi >= xi_min && best.outer_iterations < opts.max_outer {
        let target = best.eps + xi;
        let inner = inner_loop(
            ms,
            c,
            x0,
            target,
            &best.d,
            opts,
            best.outer_iterations,
            best.inner_iterations,
            best.cost,
        );
        best.outer_iterations += 1;
        let inner = match inner {
            Ok(r) => r,
            Err(_) => {
                xi *= T::lit(0.5);
                continue;
            }
        };
        best.inner_iterations += inner.iterations.max(1);
        best.trajectory.extend(inner.trajectory);
        let j = if inner.achieved {
            cost_at(ms, c, x0, &inner.d)?
        } else {
            T::infinity()
        };
        // Accept at the exact cost of the new point so that ε̄ = 1/J(d).
        if j.is_finite() && j < best.cost {
            best.d = inner.d;
            best.cost = j;
            best.eps = T::one() / j;
        } else {
            xi *= T::lit(0.5);
        }
    }
    Ok(Some(best))
}

/// Starting points: `first`, then seeded uniform draws from the simplex.
pub fn start_points(first: &[f64], cycle: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![first.to_vec()];
    for _ in 1..count {
        let w: Vec<f64> = (0..first.len()).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = w.iter().sum();
        out.push(w.iter().map(|x| cycle * x / total).collect());
    }
    out
}

/// Multi-start optimization from the mode set's own durations.
pub fn optimize<T: Scalar>(
    ms: &ModeSet<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    opts: &OptOptions,
) -> Result<OptReport> {
    let first: Vec<f64> = ms.durations.iter().map(|x| x.as_f64()).collect();
    optimize_from(ms, c, x0, &first, opts)
}

/// Multi-start optimization whose first start is `warm` (for instance the
/// previous optimum after `x0` changed).
pub fn optimize_from<T: Scalar>(
    ms: &ModeSet<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    warm: &[f64],
    opts: &OptOptions,
) -> Result<OptReport> {
    opts.validate()?;
    if warm.len() != ms.mode_count() {
        return Err(Error::Dimension(format!(
            "{} start durations for {} modes",
            warm.len(),
            ms.mode_count()
        )));
    }
    if x0.iter().all(|&v| v == T::zero()) {
        return Err(Error::DegenerateSystem("x0 is zero, the congestion cost vanishes".into()));
    }
    let cycle = ms.cycle_time.as_f64();
    let starts = start_points(warm, cycle, opts.starts, opts.seed);
    let outcomes: Vec<(Vec<T>, Result<Option<StartOutcome<T>>>)> = starts
        .par_iter()
        .map(|s| {
            let mut d: Vec<T> = s.iter().map(|&x| T::lit(x)).collect();
            renormalize(&mut d, ms.cycle_time);
            let out = run_start(ms, c, x0, &d, opts);
            (d, out)
        })
        .collect();

    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut best: Option<(usize, StartOutcome<T>)> = None;
    let mut initial_cost = None;
    for (index, (d0, out)) in outcomes.into_iter().enumerate() {
        let out = out?;
        let init = out
            .as_ref()
            .and_then(|_| cost_at(ms, c, x0, &d0).ok())
            .map(|j| j.as_f64());
        if index == 0 {
            initial_cost = init;
        }
        summaries.push(StartSummary {
            index,
            d0: d0.iter().map(|x| x.as_f64()).collect(),
            initial_cost: init,
            final_cost: out.as_ref().map(|o| o.cost.as_f64()),
        });
        if let Some(o) = out {
            let better = best.as_ref().is_none_or(|(_, b)| o.cost < b.cost);
            if better {
                best = Some((index, o));
            }
        }
    }
    let Some((best_start, b)) = best else {
        return Err(Error::NoStableStart(format!(
            "none of the {} starting schedules gives a Hurwitz averaged matrix; \
             check that every movement is green in some phase and every road reaches a destination",
            summaries.len()
        )));
    };
    Ok(OptReport {
        d_star: b.d.iter().map(|x| x.as_f64()).collect(),
        eps_star: b.eps.as_f64(),
        cost: (T::one() / b.eps).as_f64(),
        initial_cost: initial_cost.unwrap_or(f64::INFINITY),
        best_start,
        inner_iterations: b.inner_iterations,
        outer_iterations: b.outer_iterations,
        trajectory: b.trajectory,
        starts: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_modes, output_map};
    use crate::net_model::uniform_schedule;
    use crate::scenarios;
    use proptest::prelude::*;

    fn example() -> (ModeSet<f64>, DMatrix<f64>, DVector<f64>) {
        let spec = scenarios::four_intersections();
        let ms = assemble_modes(&spec, &uniform_schedule(&spec)).unwrap();
        let c = output_map(&spec);
        let x0 = DVector::from_element(ms.n(), 1.0);
        (ms, c, x0)
    }

    #[test]
    fn constant_gradient_projects_to_zero() {
        let v = project_tangent(&[3.0, 3.0, 3.0], &[20.0, 30.0, 50.0], 1e-10);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn interior_projection_removes_mean() {
        let v = project_tangent(&[1.0, 0.0], &[50.0, 50.0], 1e-10);
        assert_eq!(v, vec![0.5, -0.5]);
    }

    #[test]
    fn active_constraint_is_released_only_when_profitable() {
        // Increasing d_2 lowers the objective: released, and the step −s·v raises d_2.
        let v = project_tangent(&[0.0, -1.0], &[100.0, 0.0], 1e-10);
        assert_eq!(v, vec![0.5, -0.5]);
        assert!(v[1] <= 0.0);
        // Increasing d_2 would raise the objective: stays pinned.
        let v = project_tangent(&[0.0, 1.0], &[100.0, 0.0], 1e-10);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn release_ties_broken_by_index() {
        let v = project_tangent(&[1.0, -1.0, -1.0], &[100.0, 0.0, 0.0], 1e-10);
        let s: f64 = v.iter().sum();
        assert!(s.abs() < 1e-15);
        assert!(v[1] <= 0.0 && v[2] <= 0.0);
    }

    #[test]
    fn start_at_boundary_needs_no_iterations() {
        let (ms, c, x0) = example();
        let j = cost_at(&ms, &c, &x0, &ms.durations).unwrap();
        let r = inner_descent(&ms, &c, &x0, 1.0 / j, &ms.durations, &OptOptions::default()).unwrap();
        assert!(r.achieved);
        assert_eq!(r.iterations, 0);
        assert!(r.alpha_tilde.abs() < 1e-8);
    }

    #[test]
    fn inner_loop_reaches_slightly_harder_target() {
        let (ms, c, x0) = example();
        let j = cost_at(&ms, &c, &x0, &ms.durations).unwrap();
        let r = inner_descent(&ms, &c, &x0, 1.002 / j, &ms.durations, &OptOptions::default())
            .unwrap();
        assert!(r.achieved, "α̃ = {}", r.alpha_tilde);
        assert!(r.alpha_tilde.abs() < 1e-6 || r.alpha_tilde < 0.0);
        let total: f64 = r.d.iter().sum();
        assert!((total - 100.0).abs() < 1e-9 * 100.0);
    }

    #[test]
    fn single_mode_keeps_start() {
        let spec = scenarios::single_road_always_green();
        let ms = assemble_modes::<f64>(&spec, &uniform_schedule(&spec)).unwrap();
        let c = output_map(&spec);
        let x0 = DVector::from_element(ms.n(), 1.0);
        let r = optimize(&ms, &c, &x0, &OptOptions::default()).unwrap();
        assert_eq!(r.d_star, vec![100.0]);
        assert!((r.cost - r.initial_cost).abs() <= 1e-12 * r.cost);
    }

    #[test]
    fn identical_modes_give_flat_objective() {
        let spec = scenarios::single_road_always_green();
        let ms = assemble_modes::<f64>(&spec, &uniform_schedule(&spec)).unwrap();
        let c = output_map(&spec);
        let x0 = DVector::from_element(ms.n(), 1.0);
        let twin = ModeSet {
            modes: vec![ms.modes[0].clone(), ms.modes[0].clone()],
            durations: vec![50.0, 50.0],
            ..ms.clone()
        };
        let r = optimize(&twin, &c, &x0, &OptOptions::default()).unwrap();
        assert!((r.cost - r.initial_cost).abs() <= 1e-9 * r.cost);
        for p in &r.trajectory {
            assert!((p.cost - r.initial_cost).abs() <= 1e-9 * r.cost);
        }
    }

    #[test]
    fn unstable_starts_are_reported() {
        let spec = scenarios::single_road();
        let ms = assemble_modes::<f64>(&spec, &uniform_schedule(&spec)).unwrap();
        // A schedule that never shows the green phase leaves the approach undrained.
        let c = output_map(&spec);
        let x0 = DVector::from_element(ms.n(), 1.0);
        let red_only: Vec<f64> = ms
            .modes
            .iter()
            .map(|a| if a.iter().any(|&x| x > 0.0 && x < 0.05) { 0.0 } else { 1.0 })
            .collect();
        let err = optimize_from(&ms, &c, &x0, &red_only, &OptOptions::default());
        assert!(matches!(err, Err(Error::NoStableStart(_))), "{err:?}");
    }

    #[test]
    fn optimization_does_not_increase_cost() {
        let (ms, c, x0) = example();
        let r = optimize(&ms, &c, &x0, &OptOptions::default()).unwrap();
        eprintln!(
            "cost {} -> {} in {} inner / {} outer, d* = {:?}",
            r.initial_cost, r.cost, r.inner_iterations, r.outer_iterations, r.d_star
        );
        assert!(r.cost <= r.initial_cost + 1e-9);
        let j = cost_at(&ms, &c, &x0, &r.d_star).unwrap();
        assert!((j - r.cost).abs() <= 1e-4 * r.cost);
        for p in &r.trajectory {
            let total: f64 = p.d.iter().sum();
            assert!((total - 100.0).abs() <= 1e-9 * 100.0);
            assert!(p.d.iter().all(|&x| x >= 0.0));
        }
        let costs: Vec<f64> = r.trajectory.iter().map(|p| p.cost).collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #[test]
        fn projection_is_feasible_direction(
            g in proptest::collection::vec(-5.0f64..5.0, 2..7),
            mask in proptest::collection::vec(proptest::bool::ANY, 2..7),
        ) {
            let m = g.len().min(mask.len());
            let g = &g[..m];
            let mut d: Vec<f64> = mask[..m].iter().map(|&z| if z { 0.0 } else { 1.0 }).collect();
            if d.iter().all(|&x| x == 0.0) { d[0] = 1.0; }
            let s: f64 = d.iter().sum();
            d.iter_mut().for_each(|x| *x *= 100.0 / s);
            let v = project_tangent(g, &d, 1e-10);
            prop_assert!(v.iter().sum::<f64>().abs() < 1e-12);
            for i in 0..m {
                if d[i] == 0.0 { prop_assert!(v[i] <= 0.0); }
            }
            // −v is a descent direction whenever it is nonzero
            let dot: f64 = v.iter().zip(g).map(|(a, b)| a * b).sum();
            prop_assert!(dot >= -1e-12);
        }
    }
}
