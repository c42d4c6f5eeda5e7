use super::NetworkSpec;
use crate::error::{Error, Result};

/// Periodic signal schedule and the global network modes it induces.
///
/// Each intersection cycles through its phases in order with the given
/// durations (green splits). The union of all switching instants splits the
/// cycle into `m` windows; inside window `i` every intersection shows a fixed
/// phase, so the network matrix is constant (network mode `i`, duration
/// `d_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    cycle_time: f64,
    splits: Vec<Vec<f64>>,
    boundaries: Vec<f64>,
    durations: Vec<f64>,
    active: Vec<Vec<usize>>,
}

/// Equal green time for every phase of every intersection.
pub fn uniform_schedule(spec: &NetworkSpec) -> Schedule {
    let t = spec.cycle_time;
    let splits = spec
        .intersections
        .iter()
        .map(|inter| {
            let p = inter.phases.len();
            vec![t / p as f64; p]
        })
        .collect();
    Schedule::from_splits(spec, splits).expect("uniform splits are always valid")
}

impl Schedule {
    /// Builds a schedule from per-intersection phase durations.
    ///
    /// Each intersection's durations must be nonnegative and sum to the cycle
    /// time; they are rescaled to absorb rounding.
    pub fn from_splits(spec: &NetworkSpec, splits: Vec<Vec<f64>>) -> Result<Self> {
        let t = spec.cycle_time;
        if splits.len() != spec.intersections.len() {
            return Err(Error::Validation(format!(
                "schedule has {} intersections, network has {}",
                splits.len(),
                spec.intersections.len()
            )));
        }
        let mut normalized = Vec::with_capacity(splits.len());
        for (j, (s, inter)) in splits.into_iter().zip(&spec.intersections).enumerate() {
            if s.len() != inter.phases.len() {
                return Err(Error::Validation(format!(
                    "intersection '{}': {} durations for {} phases",
                    inter.id,
                    s.len(),
                    inter.phases.len()
                )));
            }
            if s.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(Error::Validation(format!(
                    "intersection #{j}: phase durations must be >= 0"
                )));
            }
            let total: f64 = s.iter().sum();
            if (total - t).abs() > 1e-6 * t {
                return Err(Error::Validation(format!(
                    "intersection '{}': phase durations sum to {total}, cycle time is {t}",
                    inter.id
                )));
            }
            normalized.push(s.iter().map(|x| x * t / total).collect::<Vec<_>>());
        }

        // union of switching instants in (0, T]
        let tol = 1e-12 * t;
        let mut instants: Vec<f64> = vec![t];
        for s in &normalized {
            let mut acc = 0.0;
            for &x in &s[..s.len().saturating_sub(1)] {
                acc += x;
                if acc > tol && acc < t - tol {
                    instants.push(acc);
                }
            }
        }
        instants.sort_by(|a, b| a.partial_cmp(b).unwrap());
        instants.dedup_by(|a, b| (*a - *b).abs() <= tol);

        let mut durations = Vec::with_capacity(instants.len());
        let mut active = Vec::with_capacity(instants.len());
        let mut prev = 0.0;
        for &tau in &instants {
            let mid = 0.5 * (prev + tau);
            active.push(normalized.iter().map(|s| phase_at(s, mid)).collect());
            durations.push(tau - prev);
            prev = tau;
        }

        Ok(Schedule {
            cycle_time: t,
            splits: normalized,
            boundaries: instants,
            durations,
            active,
        })
    }

    /// Same mode structure with new mode durations (rescaled to sum to `T`).
    pub fn with_durations(&self, durations: &[f64]) -> Result<Self> {
        if durations.len() != self.durations.len() {
            return Err(Error::Dimension(format!(
                "{} durations for {} modes",
                durations.len(),
                self.durations.len()
            )));
        }
        if durations.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::Validation("mode durations must be >= 0".into()));
        }
        let total: f64 = durations.iter().sum();
        if total <= 0.0 {
            return Err(Error::Validation("mode durations sum to zero".into()));
        }
        let t = self.cycle_time;
        let durations: Vec<f64> = durations.iter().map(|x| x * t / total).collect();
        let mut boundaries = Vec::with_capacity(durations.len());
        let mut acc = 0.0;
        for d in &durations {
            acc += d;
            boundaries.push(acc);
        }
        if let Some(last) = boundaries.last_mut() {
            *last = t;
        }
        let mut splits: Vec<Vec<f64>> = self.splits.iter().map(|s| vec![0.0; s.len()]).collect();
        for (mode, d) in durations.iter().enumerate() {
            for (j, &p) in self.active[mode].iter().enumerate() {
                splits[j][p] += d;
            }
        }
        Ok(Schedule {
            cycle_time: t,
            splits,
            boundaries,
            durations,
            active: self.active.clone(),
        })
    }

    pub fn cycle_time(&self) -> f64 {
        self.cycle_time
    }

    /// Number of network modes `m`.
    pub fn mode_count(&self) -> usize {
        self.durations.len()
    }

    /// Mode durations `d_i = τ_i − τ_{i−1}`.
    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    /// Mode end instants `τ_1 < … < τ_m = T`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// `[τ_{i−1}, τ_i)` for every mode.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        let mut prev = 0.0;
        self.boundaries
            .iter()
            .map(|&b| {
                let w = (prev, b);
                prev = b;
                w
            })
            .collect()
    }

    /// Phase index shown by each intersection during `mode`.
    pub fn active_phases(&self, mode: usize) -> &[usize] {
        &self.active[mode]
    }

    /// Green time of every phase at every intersection.
    pub fn splits(&self) -> &[Vec<f64>] {
        &self.splits
    }

    /// Mode active at time `t` (periodic).
    pub fn mode_at(&self, t: f64) -> usize {
        let tau = t.rem_euclid(self.cycle_time);
        self.boundaries
            .iter()
            .position(|&b| tau < b)
            .unwrap_or(self.boundaries.len() - 1)
    }

    /// Green-split function `s(t)` of movement `movement` at intersection `inter`.
    pub fn is_green(&self, spec: &NetworkSpec, inter: usize, movement: usize, t: f64) -> bool {
        if self.active.is_empty() || spec.intersections.is_empty() {
            return false;
        }
        let phase = self.active[self.mode_at(t)][inter];
        spec.intersections[inter].phases[phase].contains(&movement)
    }
}

fn phase_at(splits: &[f64], t: f64) -> usize {
    let mut acc = 0.0;
    for (p, &x) in splits.iter().enumerate() {
        acc += x;
        if t < acc {
            return p;
        }
    }
    splits.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::{generate_grid, GridParams};
    use crate::scenarios;

    #[test]
    fn four_phases_get_equal_share() {
        let spec = generate_grid(1, 1, &GridParams::default()).unwrap();
        let s = uniform_schedule(&spec);
        assert_eq!(s.splits()[0], vec![25.0; 4]);
        assert_eq!(s.mode_count(), 4);
        assert_eq!(s.durations(), &[25.0; 4]);
        let total: f64 = s.durations().iter().sum();
        assert_eq!(total, spec.cycle_time);
    }

    #[test]
    fn single_phase_gets_whole_cycle() {
        let spec = scenarios::single_road_always_green();
        let s = uniform_schedule(&spec);
        assert_eq!(s.splits()[0], vec![100.0]);
        assert_eq!(s.durations(), &[100.0]);
    }

    #[test]
    fn network_without_intersections_has_one_mode() {
        let spec = scenarios::bare_road(3.0, 1.0, 0.0);
        let s = uniform_schedule(&spec);
        assert_eq!(s.mode_count(), 1);
        assert_eq!(s.durations(), &[spec.cycle_time]);
    }

    #[test]
    fn staggered_splits_merge_switching_instants() {
        let spec = scenarios::four_intersections();
        let mut splits = vec![vec![25.0; 4]; 4];
        splits[1] = vec![10.0, 40.0, 25.0, 25.0];
        let s = Schedule::from_splits(&spec, splits).unwrap();
        // instants {10, 25, 50, 75, 100}
        assert_eq!(s.boundaries(), &[10.0, 25.0, 50.0, 75.0, 100.0]);
        assert_eq!(s.active_phases(0), &[0, 0, 0, 0]);
        assert_eq!(s.active_phases(1), &[0, 1, 0, 0]);
        assert_eq!(s.active_phases(2), &[1, 1, 1, 1]);
        let total: f64 = s.durations().iter().sum();
        assert!((total - 100.0).abs() < 1e-12);
    }

    #[test]
    fn with_durations_updates_green_splits() {
        let spec = scenarios::four_intersections();
        let s = uniform_schedule(&spec);
        let s2 = s.with_durations(&[1.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(s2.durations(), &[25.0, 25.0, 50.0, 0.0]);
        assert_eq!(s2.splits()[0], vec![25.0, 25.0, 50.0, 0.0]);
        assert_eq!(s2.boundaries().last(), Some(&100.0));
    }

    #[test]
    fn bad_sum_rejected() {
        let spec = scenarios::four_intersections();
        assert!(Schedule::from_splits(&spec, vec![vec![10.0; 4]; 4]).is_err());
    }
}
