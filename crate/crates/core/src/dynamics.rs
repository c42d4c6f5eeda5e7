//! Switched and averaged network dynamics.
//!
//! Every inter-switch window of a [`Schedule`] yields one constant matrix
//! `A_i` (a network mode). The averaged system uses the duration-weighted
//! mean `A_av = (1/T) Σ d_i A_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net_model::{NetworkSpec, Schedule};
use crate::scalar::Scalar;

/// Constant mode matrices of one signal cycle plus the input map.
#[derive(Debug, Clone)]
pub struct ModeSet<T: Scalar> {
    pub modes: Vec<DMatrix<T>>,
    pub durations: Vec<T>,
    pub cycle_time: T,
    /// `n × n_r` input map: exogenous inflow of road `i` enters its first cell.
    pub b: DMatrix<T>,
    /// `[τ_{i−1}, τ_i)` for every mode.
    pub windows: Vec<(f64, f64)>,
    pub schedule: Schedule,
}

/// Linear time-invariant approximation of the switching network.
#[derive(Debug, Clone)]
pub struct AveragedSystem<T: Scalar> {
    pub a_av: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c_av: DMatrix<T>,
    pub u_av: DVector<T>,
}

impl<T: Scalar> ModeSet<T> {
    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// `(1/Σd) Σ d_i A_i`; invariant under positive rescaling of `d`.
    pub fn average_matrix(&self, d: &[T]) -> Result<DMatrix<T>> {
        self.check_len(d)?;
        let total = d.iter().fold(T::zero(), |acc, &x| acc + x);
        if total <= T::zero() {
            return Err(Error::Validation("mode durations sum to zero".into()));
        }
        let mut out = self.weighted_sum(d);
        out /= total;
        Ok(out)
    }

    /// `(1/T) Σ d_i A_i` with the cycle time held fixed: the linear map whose
    /// partial derivatives are `A_i / T`.
    pub fn linear_average(&self, d: &[T]) -> Result<DMatrix<T>> {
        self.check_len(d)?;
        let mut out = self.weighted_sum(d);
        out /= self.cycle_time;
        Ok(out)
    }

    /// Same modes, new durations (rescaled to the cycle time).
    pub fn with_durations(&self, d: &[T]) -> Result<Self> {
        self.check_len(d)?;
        let d64: Vec<f64> = d.iter().map(|x| x.as_f64()).collect();
        let schedule = self.schedule.with_durations(&d64)?;
        let mut out = self.clone();
        out.durations = schedule.durations().iter().map(|&x| T::lit(x)).collect();
        out.windows = schedule.windows();
        out.schedule = schedule;
        Ok(out)
    }

    /// Union of the nonzero patterns of all modes.
    pub fn sparsity_union(&self) -> DMatrix<bool> {
        let n = self.n();
        let mut mask = DMatrix::from_element(n, n, false);
        for a in &self.modes {
            mask.zip_apply(a, |m, x| *m = *m || x != T::zero());
        }
        mask
    }

    fn weighted_sum(&self, d: &[T]) -> DMatrix<T> {
        let n = self.n();
        let mut out = DMatrix::<T>::zeros(n, n);
        for (a, &w) in self.modes.iter().zip(d) {
            if w != T::zero() {
                out += a * w;
            }
        }
        out
    }

    fn check_len(&self, d: &[T]) -> Result<()> {
        if d.len() != self.modes.len() {
            return Err(Error::Dimension(format!(
                "{} durations for {} modes",
                d.len(),
                self.modes.len()
            )));
        }
        Ok(())
    }
}

/// Road chains and exit rates: the part of every mode that ignores signals.
///
/// Inside road `i` cell `k` feeds cell `k+1` at rate `γ/h`; the downstream
/// cell only drains through movements and the exit rate `w̄`.
pub fn road_matrix<T: Scalar>(spec: &NetworkSpec) -> DMatrix<T> {
    let n = spec.n_states();
    let mut a = DMatrix::<T>::zeros(n, n);
    for (i, road) in spec.roads.iter().enumerate() {
        let rate = T::lit(road.free_flow_speed / spec.h);
        let first = spec.first_cell(i);
        let last = spec.last_cell(i);
        for k in first..last {
            a[(k, k)] -= rate;
            a[(k + 1, k)] += rate;
        }
        a[(last, last)] -= T::lit(road.exit_rate);
    }
    a
}

/// Network matrix when intersection `j` shows phase `active[j]`.
pub fn mode_matrix<T: Scalar>(spec: &NetworkSpec, active: &[usize]) -> Result<DMatrix<T>> {
    if active.len() != spec.intersections.len() {
        return Err(Error::Dimension(format!(
            "{} active phases for {} intersections",
            active.len(),
            spec.intersections.len()
        )));
    }
    let mut a = road_matrix::<T>(spec);
    let n = spec.n_states();
    for (inter, &p) in spec.intersections.iter().zip(active) {
        let phase = inter.phases.get(p).ok_or_else(|| {
            Error::Dimension(format!("intersection '{}' has no phase {p}", inter.id))
        })?;
        for &mv_idx in phase {
            let mv = &inter.movements[mv_idx];
            let src = spec.last_cell(mv.from);
            let dst = spec.first_cell(mv.to);
            if src >= n || dst >= n {
                return Err(Error::Dimension(format!("movement index out of range in '{}'", inter.id)));
            }
            let c = T::lit(mv.rate());
            a[(dst, src)] += c;
            a[(src, src)] -= c;
        }
    }
    Ok(a)
}

/// Input map `B`: column `i` puts road `i`'s exogenous inflow into its first
/// cell (nonzero only for source roads).
pub fn input_map<T: Scalar>(spec: &NetworkSpec) -> DMatrix<T> {
    let mut b = DMatrix::<T>::zeros(spec.n_states(), spec.n_roads());
    for (i, road) in spec.roads.iter().enumerate() {
        if road.is_source {
            b[(spec.first_cell(i), i)] = T::one();
        }
    }
    b
}

/// Queue-length output map `C_av`: row `i` selects the downstream cell of road `i`.
pub fn output_map<T: Scalar>(spec: &NetworkSpec) -> DMatrix<T> {
    let mut c = DMatrix::<T>::zeros(spec.n_roads(), spec.n_states());
    for i in 0..spec.n_roads() {
        c[(i, spec.last_cell(i))] = T::one();
    }
    c
}

/// Per-road period-average inflow `u_av`.
pub fn average_inflow<T: Scalar>(spec: &NetworkSpec) -> DVector<T> {
    DVector::from_iterator(
        spec.n_roads(),
        spec.roads.iter().map(|r| T::lit(r.inflow.average(spec.cycle_time))),
    )
}

/// Builds the mode matrices for every window of `sched`.
pub fn assemble_modes<T: Scalar>(spec: &NetworkSpec, sched: &Schedule) -> Result<ModeSet<T>> {
    if (sched.cycle_time() - spec.cycle_time).abs() > 1e-9 * spec.cycle_time {
        return Err(Error::Validation(format!(
            "schedule period {} differs from cycle time {}",
            sched.cycle_time(),
            spec.cycle_time
        )));
    }
    let modes = (0..sched.mode_count())
        .map(|k| mode_matrix(spec, sched.active_phases(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeSet {
        modes,
        durations: sched.durations().iter().map(|&x| T::lit(x)).collect(),
        cycle_time: T::lit(sched.cycle_time()),
        b: input_map(spec),
        windows: sched.windows(),
        schedule: sched.clone(),
    })
}

/// State-space average of a mode set.
pub fn average_system<T: Scalar>(ms: &ModeSet<T>, spec: &NetworkSpec) -> Result<AveragedSystem<T>> {
    Ok(AveragedSystem {
        a_av: ms.average_matrix(&ms.durations)?,
        b: ms.b.clone(),
        c_av: output_map(spec),
        u_av: average_inflow(spec),
    })
}

/// True when every nonzero of `a` is a road-chain entry, a diagonal entry, or
/// the `(first(to), last(from))` entry of a declared movement.
pub fn respects_adjacency<T: Scalar>(spec: &NetworkSpec, a: &DMatrix<T>) -> bool {
    let n = spec.n_states();
    let mut allowed = DMatrix::from_element(n, n, false);
    for k in 0..n {
        allowed[(k, k)] = true;
    }
    for i in 0..spec.n_roads() {
        for k in spec.first_cell(i)..spec.last_cell(i) {
            allowed[(k + 1, k)] = true;
        }
    }
    for inter in &spec.intersections {
        for mv in &inter.movements {
            allowed[(spec.first_cell(mv.to), spec.last_cell(mv.from))] = true;
        }
    }
    a.iter().zip(allowed.iter()).all(|(&x, &ok)| ok || x == T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::spectral_abscissa;
    use crate::net_model::uniform_schedule;
    use crate::scenarios;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn uniform_modes(spec: &NetworkSpec) -> ModeSet<f64> {
        assemble_modes(spec, &uniform_schedule(spec)).unwrap()
    }

    #[test]
    fn bare_road_chain() {
        let spec = scenarios::bare_road(3.0, 1.0, 0.0);
        let ms = uniform_modes(&spec);
        assert_eq!(ms.mode_count(), 1);
        assert_eq!(ms.modes[0], dmatrix![-1.0, 0.0, 0.0; 1.0, -1.0, 0.0; 0.0, 1.0, 0.0]);
    }

    #[test]
    fn chain_scales_with_speed_over_step() {
        // γ/h = 3: every chain entry is three times the unit-rate chain.
        let spec = scenarios::bare_road(3.0, 3.0, 0.0);
        let ms = uniform_modes(&spec);
        assert_eq!(ms.modes[0], dmatrix![-3.0, 0.0, 0.0; 3.0, -3.0, 0.0; 0.0, 3.0, 0.0]);
    }

    #[test]
    fn four_intersection_blocks_have_printed_structure() {
        let spec = scenarios::four_intersections();
        let ms = uniform_modes(&spec);
        assert_eq!(ms.n(), 36);
        assert_eq!(ms.mode_count(), 4);
        for (k, a) in ms.modes.iter().enumerate() {
            for i in 0..spec.n_roads() {
                let f = spec.first_cell(i);
                let block = a.view((f, f), (3, 3));
                assert_eq!(block[(0, 0)], -1.0);
                assert_eq!(block[(1, 0)], 1.0);
                assert_eq!(block[(1, 1)], -1.0);
                assert_eq!(block[(2, 1)], 1.0);
                for (r, c) in [(0, 1), (0, 2), (1, 2), (2, 0)] {
                    assert_eq!(block[(r, c)], 0.0);
                }
                // last cell: minus green outflow and exit rate
                let mut expected = -spec.roads[i].exit_rate;
                for (j, inter) in spec.intersections.iter().enumerate() {
                    for &mv in &inter.phases[ms.schedule.active_phases(k)[j]] {
                        if inter.movements[mv].from == i {
                            expected -= inter.movements[mv].rate();
                        }
                    }
                }
                assert!((block[(2, 2)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn green_movement_has_single_off_diagonal_entry() {
        let spec = scenarios::four_intersections();
        let ms = uniform_modes(&spec);
        for (k, a) in ms.modes.iter().enumerate() {
            for (j, inter) in spec.intersections.iter().enumerate() {
                let green = &inter.phases[ms.schedule.active_phases(k)[j]];
                for (idx, mv) in inter.movements.iter().enumerate() {
                    let (fi, fk) = (spec.first_cell(mv.to), spec.first_cell(mv.from));
                    let block = a.view((fi, fk), (3, 3));
                    if green.contains(&idx) {
                        assert_eq!(block[(0, 2)], 0.5);
                        assert_eq!(block.iter().filter(|&&x| x != 0.0).count(), 1);
                    } else {
                        assert!(block.iter().all(|&x| x == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn column_sums_nonpositive_and_negative_at_exits() {
        for spec in [scenarios::four_intersections(), scenarios::grid(2, 3)] {
            let ms = uniform_modes(&spec);
            for a in &ms.modes {
                for col in 0..ms.n() {
                    let s: f64 = a.column(col).sum();
                    assert!(s <= 1e-15, "column {col} sums to {s}");
                    let road = spec.road_of_state(col);
                    if spec.roads[road].is_destination && col == spec.last_cell(road) {
                        assert!(s < 0.0);
                    }
                }
                for r in 0..ms.n() {
                    for c in 0..ms.n() {
                        if r != c {
                            assert!(a[(r, c)] >= 0.0);
                        } else {
                            assert!(a[(r, c)] <= 0.0);
                        }
                    }
                }
                assert!(respects_adjacency(&spec, a));
            }
        }
    }

    #[test]
    fn output_map_selects_downstream_cells() {
        let spec = scenarios::four_intersections();
        let c = output_map::<f64>(&spec);
        assert_eq!(c.shape(), (12, 36));
        for i in 0..12 {
            for k in 0..36 {
                assert_eq!(c[(i, k)], if k == 3 * i + 2 { 1.0 } else { 0.0 });
            }
        }
        let single = output_map::<f64>(&scenarios::bare_road(3.0, 1.0, 0.0));
        assert_eq!(single, dmatrix![0.0, 0.0, 1.0]);
    }

    #[test]
    fn input_map_targets_source_first_cells() {
        let spec = scenarios::four_intersections();
        let b = input_map::<f64>(&spec);
        assert_eq!(b.shape(), (36, 12));
        assert_eq!(b.sum(), 4.0);
        for id in ["r1", "r3", "r10", "r12"] {
            let i = spec.road_index(id).unwrap();
            assert_eq!(b[(spec.first_cell(i), i)], 1.0);
        }
    }

    #[test]
    fn average_of_single_mode_is_that_mode() {
        let spec = scenarios::single_road_always_green();
        let ms = uniform_modes(&spec);
        let sys = average_system(&ms, &spec).unwrap();
        assert_eq!(sys.a_av, ms.modes[0]);
    }

    #[test]
    fn equal_durations_give_plain_mean() {
        let spec = scenarios::four_intersections();
        let ms = uniform_modes(&spec);
        let two = ModeSet {
            modes: ms.modes[..2].to_vec(),
            durations: vec![50.0, 50.0],
            ..ms.clone()
        };
        let a = two.average_matrix(&[50.0, 50.0]).unwrap();
        let expected = (&ms.modes[0] + &ms.modes[1]) * 0.5;
        assert!((a - expected).amax() < 1e-15);
    }

    #[test]
    fn average_is_scale_invariant_and_linear() {
        let spec = scenarios::four_intersections();
        let ms = uniform_modes(&spec);
        let d = [10.0, 20.0, 30.0, 40.0];
        let base = ms.average_matrix(&d).unwrap();
        for c in [0.5, 2.0] {
            let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
            assert!((ms.average_matrix(&scaled).unwrap() - &base).amax() <= 1e-14);
        }
        assert!((ms.linear_average(&d).unwrap() - &base).amax() < 1e-15);
        let e = [1.0, 0.0, 0.0, 0.0];
        let sum: Vec<f64> = d.iter().zip(&e).map(|(a, b)| a + b).collect();
        let lhs = ms.linear_average(&sum).unwrap();
        let rhs = ms.linear_average(&d).unwrap() + ms.linear_average(&e).unwrap();
        assert!((lhs - rhs).amax() < 1e-14);
    }

    #[test]
    fn averaging_preserves_sparsity() {
        let spec = scenarios::four_intersections();
        let ms = uniform_modes(&spec);
        let mask = ms.sparsity_union();
        let a = average_system(&ms, &spec).unwrap().a_av;
        for (x, &m) in a.iter().zip(mask.iter()) {
            assert_eq!(*x != 0.0, m);
        }
    }

    #[test]
    fn never_green_movement_has_zero_block() {
        let spec = scenarios::single_road();
        let ms = uniform_modes(&spec);
        assert_eq!(ms.mode_count(), 2);
        let (from, to) = (spec.road_index("approach").unwrap(), spec.road_index("exit").unwrap());
        let red = ms
            .modes
            .iter()
            .find(|a| a[(spec.first_cell(to), spec.last_cell(from))] == 0.0)
            .expect("a red mode");
        assert_eq!(red[(spec.last_cell(from), spec.last_cell(from))], 0.0);
    }

    #[test]
    fn average_inflow_matches_profile() {
        let spec = scenarios::four_intersections();
        let u = average_inflow::<f64>(&spec);
        assert!((u.sum() - 0.4).abs() < 1e-15);
    }

    fn simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, m).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.iter().map(|x| 100.0 * x / s).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn averaged_system_is_hurwitz(d in simplex(4)) {
            let spec = scenarios::four_intersections();
            let ms = uniform_modes(&spec);
            let a = ms.average_matrix(&d).unwrap();
            prop_assert!(spectral_abscissa(&a).unwrap() < 0.0);
        }
    }
}
