//! Reference simulation of the switching and averaged systems.
//!
//! Both systems are piecewise affine, so every step is taken with the exact
//! matrix exponential of the augmented matrix `[[A, Bu], [0, 0]]`. The step
//! grid contains every switching instant and every inflow change, so `dt`
//! only controls where samples are reported.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AveragedSystem, ModeSet};
use crate::error::{Error, Result};
use crate::net_model::NetworkSpec;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub times: Vec<f64>,
    pub states: Vec<DVector<T>>,
    /// Queue lengths `C_av x` at each time.
    pub outputs: Vec<DVector<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `∫ ‖y‖² dt` by the trapezoid rule.
    pub fn output_energy(&self) -> f64 {
        let sq: Vec<f64> = self.outputs.iter().map(|y| y.norm_squared().as_f64()).collect();
        trapezoid(&self.times, &sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub horizon: f64,
    /// `(100/ℋ) ∫ ‖x − x_av‖ / ‖x_av‖ dt`.
    pub error_percent: f64,
    /// Samples dropped because `‖x_av‖ < 1e-6·‖x0‖`.
    pub excluded_samples: usize,
}

fn trapezoid(t: &[f64], v: &[f64]) -> f64 {
    t.windows(2)
        .zip(v.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

fn check_inputs<T: Scalar>(n: usize, x0: &DVector<T>, horizon: f64, dt: f64) -> Result<()> {
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    if horizon / dt > 1e7 {
        return Err(Error::Validation(format!(
            "horizon/dt = {} samples is too many",
            horizon / dt
        )));
    }
    Ok(())
}

/// Sample times `k·dt` up to the horizon (which is always included).
fn sample_times(horizon: f64, dt: f64) -> Vec<f64> {
    let steps = (horizon / dt).floor() as usize;
    let mut t: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    if horizon - t[t.len() - 1] > 1e-12 * horizon {
        t.push(horizon);
    }
    t
}

/// Merges sorted time lists, dropping points closer than `tol` to a kept
/// neighbour. Earlier lists win ties, so switching instants stay exact.
fn merge_grid(lists: &[Vec<f64>], tol: f64) -> Vec<f64> {
    let mut tagged: Vec<(f64, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(k, l)| l.iter().map(move |&t| (t, k)))
        .collect();
    tagged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<(f64, usize)> = Vec::with_capacity(tagged.len());
    for (t, k) in tagged {
        match out.last_mut() {
            Some(last) if (t - last.0).abs() <= tol => {
                if k < last.1 {
                    *last = (t, k);
                }
            }
            _ => out.push((t, k)),
        }
    }
    out.into_iter().map(|(t, _)| t).collect()
}

/// Start instants of the global inflow segments within one cycle.
fn inflow_breaks(spec: &NetworkSpec) -> Vec<f64> {
    let mut b: Vec<f64> = spec
        .roads
        .iter()
        .flat_map(|r| r.inflow.segments().iter().map(|&(s, _)| s))
        .filter(|&s| s > 0.0 && s < spec.cycle_time)
        .collect();
    b.push(0.0);
    b.sort_by(|a, c| a.partial_cmp(c).unwrap());
    b.dedup();
    b
}

/// Exact affine propagator `x ↦ e^{Ah} x + (∫₀ʰ e^{As} ds) b`.
fn affine_step<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>, h: T) -> (DMatrix<T>, DVector<T>) {
    let n = a.nrows();
    let mut m = DMatrix::<T>::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    m.view_mut((0, n), (n, 1)).copy_from(&(b * h));
    let e = m.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, 1)).column(0).into_owned(),
    )
}

type StepKey = (usize, usize, u64);

/// Switching system `ẋ = A_{σ(t)} x + B u(t)` with the mode set's schedule.
pub fn simulate_switching<T: Scalar>(
    ms: &ModeSet<T>,
    spec: &NetworkSpec,
    x0: &DVector<T>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory<T>> {
    check_inputs(ms.n(), x0, horizon, dt)?;
    let cycle = ms.schedule.cycle_time();
    if (cycle - spec.cycle_time).abs() > 1e-9 * cycle {
        return Err(Error::Validation("mode set and network disagree on the cycle time".into()));
    }
    let breaks = inflow_breaks(spec);
    let cycles = (horizon / cycle).ceil() as usize + 1;
    let mut switching = Vec::new();
    let mut inflow = Vec::new();
    for k in 0..cycles {
        let base = k as f64 * cycle;
        switching.push(base);
        for &(_, end) in &ms.windows {
            switching.push(base + end);
        }
        inflow.extend(breaks.iter().map(|&s| base + s));
    }
    let keep = |v: Vec<f64>| -> Vec<f64> { v.into_iter().filter(|&t| t <= horizon).collect() };
    let tol = 1e-12 * horizon.max(cycle);
    let times = merge_grid(
        &[keep(switching), keep(inflow), sample_times(horizon, dt)],
        tol,
    );

    let segment_inputs: Vec<DVector<T>> = breaks
        .iter()
        .map(|&s| {
            let u = DVector::from_iterator(
                spec.n_roads(),
                spec.roads.iter().map(|r| T::lit(r.inflow.rate_at(s, cycle))),
            );
            &ms.b * u
        })
        .collect();
    let segment_at = |t: f64| -> usize {
        let tau = t.rem_euclid(cycle);
        breaks.iter().rposition(|&s| s <= tau).unwrap_or(0)
    };

    let c = crate::dynamics::output_map::<T>(spec);
    let mut cache: HashMap<StepKey, (DMatrix<T>, DVector<T>)> = HashMap::new();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(times.len());
    let mut outputs = Vec::with_capacity(times.len());
    states.push(x.clone());
    outputs.push(&c * &x);
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mid = 0.5 * (t0 + t1);
        let mode = ms.schedule.mode_at(mid);
        let seg = segment_at(mid);
        let h = t1 - t0;
        let (phi, gamma) = cache
            .entry((mode, seg, h.to_bits()))
            .or_insert_with(|| affine_step(&ms.modes[mode], &segment_inputs[seg], T::lit(h)));
        x = &*phi * &x + &*gamma;
        states.push(x.clone());
        outputs.push(&c * &x);
    }
    Ok(Trajectory {
        times,
        states,
        outputs,
    })
}

/// Averaged system `ẋ = A_av x + B u_av` sampled every `dt`.
pub fn simulate_average<T: Scalar>(
    sys: &AveragedSystem<T>,
    x0: &DVector<T>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory<T>> {
    check_inputs(sys.a_av.nrows(), x0, horizon, dt)?;
    simulate_average_on(sys, x0, &sample_times(horizon, dt))
}

/// Averaged system propagated over an explicit increasing time grid.
pub fn simulate_average_on<T: Scalar>(
    sys: &AveragedSystem<T>,
    x0: &DVector<T>,
    times: &[f64],
) -> Result<Trajectory<T>> {
    if x0.len() != sys.a_av.nrows() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            sys.a_av.nrows()
        )));
    }
    let drive = &sys.b * &sys.u_av;
    let mut cache: HashMap<u64, (DMatrix<T>, DVector<T>)> = HashMap::new();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(times.len());
    let mut outputs = Vec::with_capacity(times.len());
    states.push(x.clone());
    outputs.push(&sys.c_av * &x);
    for w in times.windows(2) {
        let h = w[1] - w[0];
        let (phi, gamma) = cache
            .entry(h.to_bits())
            .or_insert_with(|| affine_step(&sys.a_av, &drive, T::lit(h)));
        x = &*phi * &x + &*gamma;
        states.push(x.clone());
        outputs.push(&sys.c_av * &x);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        outputs,
    })
}

/// Time-averaged relative deviation between the switching and the averaged
/// trajectories, in percent.
pub fn averaging_error<T: Scalar>(
    ms: &ModeSet<T>,
    spec: &NetworkSpec,
    sys: &AveragedSystem<T>,
    x0: &DVector<T>,
    horizon: f64,
    dt: f64,
) -> Result<ErrorReport> {
    let sw = simulate_switching(ms, spec, x0, horizon, dt)?;
    let av = simulate_average_on(sys, x0, &sw.times)?;
    let floor = 1e-6 * x0.norm().as_f64();
    let ratios: Vec<Option<f64>> = sw
        .states
        .iter()
        .zip(&av.states)
        .map(|(x, xa)| {
            let den = xa.norm().as_f64();
            (den >= floor && den > 0.0).then(|| (x - xa).norm().as_f64() / den)
        })
        .collect();
    let mut integral = 0.0;
    for (tw, rw) in sw.times.windows(2).zip(ratios.windows(2)) {
        if let (Some(a), Some(b)) = (rw[0], rw[1]) {
            integral += 0.5 * (tw[1] - tw[0]) * (a + b);
        }
    }
    Ok(ErrorReport {
        horizon,
        error_percent: 100.0 * integral / horizon,
        excluded_samples: ratios.iter().filter(|r| r.is_none()).count(),
    })
}
