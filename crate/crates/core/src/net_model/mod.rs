//! Traffic network topology: roads, movements, intersections and phases.
//!
//! A [`NetworkSpec`] is built from a [`ScenarioDocument`] (or generated by
//! [`generate_grid`]) and is immutable afterwards. It is the single source of
//! truth for every symbol that enters the dynamics: cell counts, speeds,
//! transmission rates, exit rates and phase sets.

mod grid;
mod schedule;
pub mod scenario;

use std::collections::{HashMap, HashSet, VecDeque};

pub use grid::{generate_grid, GridParams, Heading};
pub use schedule::{uniform_schedule, Schedule};
pub use scenario::{
    InflowDocument, IntersectionDocument, MovementDocument, RoadDocument, ScenarioDocument,
};

use crate::error::{Error, Result};

/// Relative slack used when comparing configuration floats.
const CONFIG_EPS: f64 = 1e-9;

/// A one-way road discretized into `cell_count` cells of length `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: String,
    pub length: f64,
    pub free_flow_speed: f64,
    pub cell_count: usize,
    pub is_source: bool,
    pub is_destination: bool,
    /// Proportional exogenous outflow rate `w̄` of the downstream cell.
    pub exit_rate: f64,
    pub inflow: Inflow,
}

/// Periodic piecewise-constant exogenous inflow over one cycle `[0, T)`.
///
/// Segments are `(start, rate)` pairs with strictly increasing starts, the
/// first at zero. An empty profile means no inflow.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Inflow {
    segments: Vec<(f64, f64)>,
}

impl Inflow {
    pub fn none() -> Self {
        Inflow::default()
    }

    pub fn constant(rate: f64) -> Self {
        Inflow {
            segments: vec![(0.0, rate)],
        }
    }

    pub fn piecewise(segments: Vec<(f64, f64)>) -> Self {
        Inflow { segments }
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(|&(_, r)| r == 0.0)
    }

    /// Rate at time `t` (taken modulo the cycle time).
    pub fn rate_at(&self, t: f64, cycle_time: f64) -> f64 {
        let tau = t.rem_euclid(cycle_time);
        self.segments
            .iter()
            .rev()
            .find(|&&(start, _)| start <= tau)
            .map_or(0.0, |&(_, r)| r)
    }

    /// Period average `(1/T) ∫₀ᵀ u(τ) dτ`.
    pub fn average(&self, cycle_time: f64) -> f64 {
        let mut total = 0.0;
        for (k, &(start, rate)) in self.segments.iter().enumerate() {
            let end = self
                .segments
                .get(k + 1)
                .map_or(cycle_time, |&(next, _)| next.min(cycle_time));
            total += rate * (end - start).max(0.0);
        }
        total / cycle_time
    }
}

/// Flow from road `from` into road `to` through one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct Movement {
    pub from: usize,
    pub to: usize,
    /// Average routing ratio `φ`.
    pub routing_ratio: f64,
    /// Saturation (discharge) rate `ϕ`, 1/time.
    pub saturation_rate: f64,
}

impl Movement {
    /// Transmission rate `c = φ·ϕ`.
    pub fn rate(&self) -> f64 {
        self.routing_ratio * self.saturation_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub movements: Vec<Movement>,
    /// Ordered phases; each holds indices into `movements`.
    pub phases: Vec<Vec<usize>>,
}

/// Validated network description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    /// Discretization step `h`.
    pub h: f64,
    pub cycle_time: f64,
    pub conservation: bool,
    pub allow_phase_overlap: bool,
    pub roads: Vec<Road>,
    pub intersections: Vec<Intersection>,
    offsets: Vec<usize>,
}

impl NetworkSpec {
    /// Total state dimension `n = Σ σ_i`.
    pub fn n_states(&self) -> usize {
        self.roads.iter().map(|r| r.cell_count).sum()
    }

    pub fn n_roads(&self) -> usize {
        self.roads.len()
    }

    pub fn road_index(&self, id: &str) -> Option<usize> {
        self.roads.iter().position(|r| r.id == id)
    }

    /// State index of the upstream (first) cell of road `i`.
    pub fn first_cell(&self, road: usize) -> usize {
        self.offsets[road]
    }

    /// State index of the downstream (last) cell of road `i`.
    pub fn last_cell(&self, road: usize) -> usize {
        self.offsets[road] + self.roads[road].cell_count - 1
    }

    /// Road owning a given state index.
    pub fn road_of_state(&self, state: usize) -> usize {
        match self.offsets.binary_search(&state) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// `road[cell]` labels in state order, cells numbered from 1.
    pub fn state_labels(&self) -> Vec<String> {
        self.roads
            .iter()
            .flat_map(|r| (1..=r.cell_count).map(move |k| format!("{}[{}]", r.id, k)))
            .collect()
    }

    /// Index of the intersection downstream of each road, if any.
    pub fn downstream_intersection(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.roads.len()];
        for (j, inter) in self.intersections.iter().enumerate() {
            for mv in &inter.movements {
                out[mv.from] = Some(j);
            }
        }
        out
    }

    /// Index of the intersection upstream of each road, if any.
    pub fn upstream_intersection(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.roads.len()];
        for (j, inter) in self.intersections.iter().enumerate() {
            for mv in &inter.movements {
                out[mv.to] = Some(j);
            }
        }
        out
    }

    /// Returns a copy with a different cycle time.
    pub fn with_cycle_time(&self, cycle_time: f64) -> Result<Self> {
        let mut doc = self.to_document();
        doc.cycle_time = cycle_time;
        build_network(&doc)
    }

    /// Canonical document; `build_network(&spec.to_document())` reproduces `spec`.
    pub fn to_document(&self) -> ScenarioDocument {
        let roads = self
            .roads
            .iter()
            .map(|r| RoadDocument {
                id: r.id.clone(),
                length: r.length,
                speed: r.free_flow_speed,
                source: r.is_source,
                destination: r.is_destination,
                exit_rate: r.exit_rate,
                inflow: match r.inflow.segments() {
                    [] => None,
                    [(_, rate)] => Some(InflowDocument::Constant(*rate)),
                    segs => Some(InflowDocument::Profile(
                        segs.iter().map(|&(s, v)| [s, v]).collect(),
                    )),
                },
            })
            .collect();
        let intersections = self
            .intersections
            .iter()
            .map(|inter| {
                let movements: Vec<MovementDocument> = inter
                    .movements
                    .iter()
                    .map(|m| MovementDocument {
                        from: self.roads[m.from].id.clone(),
                        to: self.roads[m.to].id.clone(),
                        routing_ratio: m.routing_ratio,
                        saturation_rate: m.saturation_rate,
                    })
                    .collect();
                let phases = inter
                    .phases
                    .iter()
                    .map(|p| p.iter().map(|&k| movements[k].label()).collect())
                    .collect();
                IntersectionDocument {
                    id: inter.id.clone(),
                    phases,
                    movements,
                }
            })
            .collect();
        ScenarioDocument {
            schema_version: scenario::SCHEMA_VERSION,
            name: self.name.clone(),
            h: self.h,
            cycle_time: self.cycle_time,
            conservation: self.conservation,
            allow_phase_overlap: self.allow_phase_overlap,
            roads,
            intersections,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

/// Cell count `σ = ⌈ℓ/h⌉`, tolerant to representation error in `ℓ/h`.
pub fn cell_count(length: f64, h: f64) -> usize {
    let ratio = length / h;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= CONFIG_EPS * rounded.max(1.0) {
        rounded.max(1.0) as usize
    } else {
        ratio.ceil().max(1.0) as usize
    }
}

/// Parses TOML text and validates it into a [`NetworkSpec`].
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    build_network(&ScenarioDocument::from_toml_str(text)?)
}

/// Validates a scenario document.
///
/// Every error names the violated invariant.
pub fn build_network(doc: &ScenarioDocument) -> Result<NetworkSpec> {
    if doc.schema_version != scenario::SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema_version {}",
            doc.schema_version
        )));
    }
    if !(doc.h.is_finite() && doc.h > 0.0) {
        return Err(invalid(format!("discretization step h must be > 0, got {}", doc.h)));
    }
    let cycle = doc.cycle_time;
    if !(cycle.is_finite() && cycle > 0.0) {
        return Err(invalid(format!("cycle_time must be > 0, got {cycle}")));
    }
    if doc.roads.is_empty() {
        return Err(invalid("network has no roads"));
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut roads = Vec::with_capacity(doc.roads.len());
    for (i, rd) in doc.roads.iter().enumerate() {
        if rd.id.is_empty() {
            return Err(invalid(format!("road #{i} has an empty id")));
        }
        if index.insert(rd.id.as_str(), i).is_some() {
            return Err(invalid(format!("duplicate road id '{}'", rd.id)));
        }
        if !(rd.length.is_finite() && rd.length > 0.0) {
            return Err(invalid(format!("road '{}': length must be > 0", rd.id)));
        }
        if !(rd.speed.is_finite() && rd.speed > 0.0) {
            return Err(invalid(format!("road '{}': speed must be > 0", rd.id)));
        }
        if !(0.0..=1.0).contains(&rd.exit_rate) {
            return Err(invalid(format!(
                "road '{}': exit_rate must lie in [0, 1], got {}",
                rd.id, rd.exit_rate
            )));
        }
        if rd.exit_rate > 0.0 && !rd.destination {
            return Err(invalid(format!(
                "road '{}': exit_rate > 0 requires destination = true",
                rd.id
            )));
        }
        if rd.source && rd.destination {
            return Err(invalid(format!(
                "road '{}' cannot be both a source and a destination",
                rd.id
            )));
        }
        let inflow = match &rd.inflow {
            None => Inflow::none(),
            Some(InflowDocument::Constant(rate)) => Inflow::constant(*rate),
            Some(InflowDocument::Profile(points)) => {
                Inflow::piecewise(points.iter().map(|p| (p[0], p[1])).collect())
            }
        };
        validate_inflow(&rd.id, &inflow, cycle)?;
        if !inflow.is_zero() && !rd.source {
            return Err(invalid(format!(
                "road '{}': exogenous inflow requires source = true",
                rd.id
            )));
        }
        roads.push(Road {
            id: rd.id.clone(),
            length: rd.length,
            free_flow_speed: rd.speed,
            cell_count: cell_count(rd.length, doc.h),
            is_source: rd.source,
            is_destination: rd.destination,
            exit_rate: rd.exit_rate,
            inflow,
        });
    }

    let mut inter_ids = HashSet::new();
    let mut upstream_of: Vec<Option<usize>> = vec![None; roads.len()];
    let mut downstream_of: Vec<Option<usize>> = vec![None; roads.len()];
    let mut intersections = Vec::with_capacity(doc.intersections.len());
    for (j, idoc) in doc.intersections.iter().enumerate() {
        if !inter_ids.insert(idoc.id.as_str()) {
            return Err(invalid(format!("duplicate intersection id '{}'", idoc.id)));
        }
        let mut movements = Vec::with_capacity(idoc.movements.len());
        let mut labels: HashMap<String, usize> = HashMap::new();
        for mdoc in &idoc.movements {
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| {
                    invalid(format!(
                        "intersection '{}': unknown road '{}'",
                        idoc.id, id
                    ))
                })
            };
            let from = lookup(&mdoc.from)?;
            let to = lookup(&mdoc.to)?;
            if from == to {
                return Err(invalid(format!(
                    "intersection '{}': movement {} loops on itself",
                    idoc.id,
                    mdoc.label()
                )));
            }
            if !(0.0..=1.0).contains(&mdoc.routing_ratio) {
                return Err(invalid(format!(
                    "movement {}: routing_ratio must lie in [0, 1]",
                    mdoc.label()
                )));
            }
            if !(mdoc.saturation_rate.is_finite() && mdoc.saturation_rate >= 0.0) {
                return Err(invalid(format!(
                    "movement {}: saturation_rate must be >= 0",
                    mdoc.label()
                )));
            }
            if roads[from].is_destination {
                return Err(invalid(format!(
                    "movement {}: destination road '{}' cannot feed an intersection",
                    mdoc.label(),
                    roads[from].id
                )));
            }
            if roads[to].is_source {
                return Err(invalid(format!(
                    "movement {}: source road '{}' cannot be fed by an intersection",
                    mdoc.label(),
                    roads[to].id
                )));
            }
            for (slot, road, what) in [
                (&mut downstream_of[from], from, "downstream"),
                (&mut upstream_of[to], to, "upstream"),
            ] {
                match slot {
                    Some(other) if *other != j => {
                        return Err(invalid(format!(
                            "road '{}' has more than one {what} intersection",
                            roads[road].id
                        )))
                    }
                    _ => *slot = Some(j),
                }
            }
            if labels.insert(mdoc.label(), movements.len()).is_some() {
                return Err(invalid(format!(
                    "intersection '{}': duplicate movement {}",
                    idoc.id,
                    mdoc.label()
                )));
            }
            movements.push(Movement {
                from,
                to,
                routing_ratio: mdoc.routing_ratio,
                saturation_rate: mdoc.saturation_rate,
            });
        }

        if idoc.phases.is_empty() {
            return Err(invalid(format!("intersection '{}' has no phases", idoc.id)));
        }
        let mut coverage = vec![0usize; movements.len()];
        let mut phases = Vec::with_capacity(idoc.phases.len());
        for (p, phase) in idoc.phases.iter().enumerate() {
            let mut members = Vec::with_capacity(phase.len());
            for label in phase {
                let k = *labels.get(label.trim()).ok_or_else(|| {
                    invalid(format!(
                        "intersection '{}': phase {} references unknown movement '{}'",
                        idoc.id,
                        p + 1,
                        label
                    ))
                })?;
                if members.contains(&k) {
                    return Err(invalid(format!(
                        "intersection '{}': phase {} lists '{}' twice",
                        idoc.id,
                        p + 1,
                        label
                    )));
                }
                members.push(k);
                coverage[k] += 1;
            }
            phases.push(members);
        }
        for (k, &count) in coverage.iter().enumerate() {
            let label = idoc.movements[k].label();
            if count == 0 {
                return Err(invalid(format!(
                    "intersection '{}': movement {label} is not green in any phase",
                    idoc.id
                )));
            }
            if count > 1 && !doc.allow_phase_overlap {
                return Err(invalid(format!(
                    "intersection '{}': movement {label} appears in {count} phases \
                     (set allow_phase_overlap = true to permit this)",
                    idoc.id
                )));
            }
        }
        intersections.push(Intersection {
            id: idoc.id.clone(),
            movements,
            phases,
        });
    }

    if doc.conservation {
        let mut ratio_sum = vec![0.0; roads.len()];
        let mut has_out = vec![false; roads.len()];
        for inter in &intersections {
            for mv in &inter.movements {
                ratio_sum[mv.from] += mv.routing_ratio;
                has_out[mv.from] = true;
            }
        }
        for (i, road) in roads.iter().enumerate() {
            if has_out[i] && (ratio_sum[i] - 1.0).abs() > CONFIG_EPS {
                return Err(invalid(format!(
                    "road '{}': routing ratios of outgoing movements sum to {} (conservation requires 1)",
                    road.id, ratio_sum[i]
                )));
            }
        }
    }

    check_reachability(&roads, &intersections)?;

    let mut offsets = Vec::with_capacity(roads.len());
    let mut acc = 0;
    for r in &roads {
        offsets.push(acc);
        acc += r.cell_count;
    }

    Ok(NetworkSpec {
        name: doc.name.clone(),
        h: doc.h,
        cycle_time: cycle,
        conservation: doc.conservation,
        allow_phase_overlap: doc.allow_phase_overlap,
        roads,
        intersections,
        offsets,
    })
}

fn validate_inflow(id: &str, inflow: &Inflow, cycle: f64) -> Result<()> {
    let segs = inflow.segments();
    if let Some(&(first, _)) = segs.first() {
        if first != 0.0 {
            return Err(invalid(format!(
                "road '{id}': inflow profile must start at time 0"
            )));
        }
    }
    for w in segs.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(invalid(format!(
                "road '{id}': inflow profile start times must increase"
            )));
        }
    }
    for &(start, rate) in segs {
        if !(start.is_finite() && start < cycle) {
            return Err(invalid(format!(
                "road '{id}': inflow segment start {start} outside [0, cycle_time)"
            )));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(invalid(format!("road '{id}': inflow rates must be >= 0")));
        }
    }
    Ok(())
}

/// Every road must reach a destination road through movements.
fn check_reachability(roads: &[Road], intersections: &[Intersection]) -> Result<()> {
    if !roads.iter().any(|r| r.is_destination) {
        return Err(invalid("network has no destination road"));
    }
    // reverse adjacency: to -> [from]
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); roads.len()];
    for inter in intersections {
        for mv in &inter.movements {
            preds[mv.to].push(mv.from);
        }
    }
    let mut seen = vec![false; roads.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, r) in roads.iter().enumerate() {
        if r.is_destination {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &p in &preds[i] {
            if !seen[p] {
                seen[p] = true;
                queue.push_back(p);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(invalid(format!(
            "road '{}' has no path to any destination road",
            roads[i].id
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn road(id: &str, length: f64) -> RoadDocument {
        RoadDocument {
            id: id.into(),
            length,
            speed: 1.0,
            source: false,
            destination: false,
            exit_rate: 0.0,
            inflow: None,
        }
    }

    fn doc(roads: Vec<RoadDocument>, intersections: Vec<IntersectionDocument>) -> ScenarioDocument {
        ScenarioDocument {
            schema_version: 1,
            name: "t".into(),
            h: 1.0,
            cycle_time: 100.0,
            conservation: true,
            allow_phase_overlap: false,
            roads,
            intersections,
        }
    }

    fn mv(from: &str, to: &str, phi: f64) -> MovementDocument {
        MovementDocument {
            from: from.into(),
            to: to.into(),
            routing_ratio: phi,
            saturation_rate: 1.0,
        }
    }

    #[test]
    fn single_road_has_three_cells() {
        let mut r = road("r1", 3.0);
        r.destination = true;
        let spec = build_network(&doc(vec![r], vec![])).unwrap();
        assert_eq!(spec.roads[0].cell_count, 3);
        assert_eq!(spec.n_states(), 3);
        assert_eq!(spec.last_cell(0), 2);
    }

    #[test]
    fn cell_count_rounds_up() {
        assert_eq!(cell_count(3.0, 1.0), 3);
        assert_eq!(cell_count(3.2, 1.0), 4);
        assert_eq!(cell_count(0.3, 0.1), 3);
        assert_eq!(cell_count(0.05, 1.0), 1);
    }

    #[test]
    fn road_without_path_to_destination_is_rejected() {
        let mut d = road("d", 3.0);
        d.destination = true;
        let err = build_network(&doc(vec![road("orphan", 2.0), d], vec![])).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("orphan")), "{err}");
    }

    #[test]
    fn routing_ratios_must_sum_to_one() {
        let mut d = road("d", 1.0);
        d.destination = true;
        let mut e = road("e", 1.0);
        e.destination = true;
        let inter = IntersectionDocument {
            id: "I".into(),
            phases: vec![vec!["a->d".into()], vec!["a->e".into()]],
            movements: vec![mv("a", "d", 0.5), mv("a", "e", 0.4)],
        };
        let err = build_network(&doc(vec![road("a", 1.0), d, e], vec![inter])).unwrap_err();
        assert!(err.to_string().contains("sum to"), "{err}");
    }

    #[test]
    fn movement_missing_from_phases_is_rejected() {
        let mut d = road("d", 1.0);
        d.destination = true;
        let inter = IntersectionDocument {
            id: "I".into(),
            phases: vec![vec![]],
            movements: vec![mv("a", "d", 1.0)],
        };
        let err = build_network(&doc(vec![road("a", 1.0), d], vec![inter])).unwrap_err();
        assert!(err.to_string().contains("not green"), "{err}");
    }

    #[test]
    fn overlapping_phases_need_opt_in() {
        let mut d = road("d", 1.0);
        d.destination = true;
        let inter = IntersectionDocument {
            id: "I".into(),
            phases: vec![vec!["a->d".into()], vec!["a->d".into()]],
            movements: vec![mv("a", "d", 1.0)],
        };
        let mut sc = doc(vec![road("a", 1.0), d], vec![inter]);
        assert!(build_network(&sc).is_err());
        sc.allow_phase_overlap = true;
        assert!(build_network(&sc).is_ok());
    }

    #[test]
    fn exit_rate_requires_destination() {
        let mut a = road("a", 1.0);
        a.exit_rate = 0.3;
        let mut d = road("d", 1.0);
        d.destination = true;
        assert!(build_network(&doc(vec![a, d], vec![])).is_err());
    }

    #[test]
    fn two_downstream_intersections_rejected() {
        let mut d1 = road("d1", 1.0);
        d1.destination = true;
        let mut d2 = road("d2", 1.0);
        d2.destination = true;
        let i1 = IntersectionDocument {
            id: "I1".into(),
            phases: vec![vec!["a->d1".into()]],
            movements: vec![mv("a", "d1", 0.5)],
        };
        let i2 = IntersectionDocument {
            id: "I2".into(),
            phases: vec![vec!["a->d2".into()]],
            movements: vec![mv("a", "d2", 0.5)],
        };
        let err = build_network(&doc(vec![road("a", 1.0), d1, d2], vec![i1, i2])).unwrap_err();
        assert!(err.to_string().contains("more than one downstream"), "{err}");
    }

    #[test]
    fn inflow_average_over_cycle() {
        let u = Inflow::piecewise(vec![(0.0, 0.4), (25.0, 0.0)]);
        assert!((u.average(100.0) - 0.1).abs() < 1e-15);
        assert_eq!(u.rate_at(130.0, 100.0), 0.0);
        assert_eq!(u.rate_at(110.0, 100.0), 0.4);
        assert_eq!(Inflow::constant(2.0).average(7.0), 2.0);
    }

    #[test]
    fn road_of_state_inverts_offsets() {
        let spec = crate::scenarios::four_intersections();
        for i in 0..spec.n_roads() {
            assert_eq!(spec.road_of_state(spec.first_cell(i)), i);
            assert_eq!(spec.road_of_state(spec.last_cell(i)), i);
        }
    }
}
