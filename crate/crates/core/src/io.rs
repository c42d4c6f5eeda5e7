//! File formats: state files, artifact headers, JSON reports and CSV exports.
//!
//! Every artifact starts with a header naming the tool version, the seed and
//! a SHA-256 hash of the run configuration. No timestamps are written, so
//! identical runs produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributed::{block_assignment, CommGraph, DistributedRun};
use crate::dynamics::ModeSet;
use crate::error::{Error, Result};
use crate::net_model::NetworkSpec;
use crate::optimizer::OptReport;
use crate::scalar::Scalar;
use crate::sim::Trajectory;

pub const TOOL: &str = "greensplit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactHeader {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactHeader {
    /// `config` is any canonical rendering of the run configuration.
    pub fn new(seed: u64, config: &str) -> Self {
        ArtifactHeader {
            tool: TOOL.into(),
            version: VERSION.into(),
            seed,
            config_hash: sha256_hex(config.as_bytes()),
        }
    }

    /// `# key=value` comment line used at the top of CSV files.
    pub fn csv_comment(&self) -> String {
        format!(
            "# tool={} version={} seed={} config_hash={}\n",
            self.tool, self.version, self.seed, self.config_hash
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Canonical configuration text: sorted `key=value` lines followed by the
/// scenario's canonical TOML.
pub fn canonical_config(command: &str, options: &BTreeMap<String, String>, spec: &NetworkSpec) -> String {
    let mut out = format!("command={command}\n");
    for (k, v) in options {
        let _ = writeln!(out, "{k}={v}");
    }
    out.push_str("---\n");
    out.push_str(&spec.to_document().to_toml_string());
    out
}

/// Initial-state file: per-road arrays of cell densities, upstream cell first.
///
/// ```toml
/// [densities]
/// approach = [0.0, 0.0, 65.0]
/// ```
///
/// Roads left out start empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub densities: BTreeMap<String, Vec<f64>>,
}

impl StateFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("state file: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("state file serializes")
    }

    pub fn from_vector(spec: &NetworkSpec, x: &DVector<f64>) -> Result<Self> {
        if x.len() != spec.n_states() {
            return Err(Error::Dimension(format!(
                "state has length {}, network has {} cells",
                x.len(),
                spec.n_states()
            )));
        }
        let densities = (0..spec.n_roads())
            .map(|r| {
                let cells = x.as_slice()[spec.first_cell(r)..=spec.last_cell(r)].to_vec();
                (spec.roads[r].id.clone(), cells)
            })
            .collect();
        Ok(StateFile { densities })
    }

    pub fn to_vector(&self, spec: &NetworkSpec) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(spec.n_states());
        for (road, cells) in &self.densities {
            let r = spec
                .road_index(road)
                .ok_or_else(|| Error::Validation(format!("state file names unknown road {road:?}")))?;
            let sigma = spec.roads[r].cell_count;
            if cells.len() != sigma {
                return Err(Error::Validation(format!(
                    "road {road:?} has {sigma} cells, state file gives {}",
                    cells.len()
                )));
            }
            for (k, &v) in cells.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Validation(format!(
                        "density of {road}[{}] must be finite and nonnegative, got {v}",
                        k + 1
                    )));
                }
                x[spec.first_cell(r) + k] = v;
            }
        }
        Ok(x)
    }
}

/// `zeros`, `ones`, or a path to a state file.
pub fn resolve_state(spec: &NetworkSpec, arg: &str) -> Result<DVector<f64>> {
    match arg {
        "zeros" => Ok(DVector::zeros(spec.n_states())),
        "ones" => Ok(DVector::from_element(spec.n_states(), 1.0)),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            StateFile::parse(&text)?.to_vector(spec)
        }
    }
}

pub fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Serialize)]
struct Envelope<'a, B: Serialize> {
    header: &'a ArtifactHeader,
    body: &'a B,
}

/// Pretty JSON `{"header": …, "body": …}` with a trailing newline.
pub fn json_artifact<B: Serialize>(header: &ArtifactHeader, body: &B) -> String {
    let mut s = serde_json::to_string_pretty(&Envelope { header, body }).expect("artifact serializes");
    s.push('\n');
    s
}

/// Body of the `optimize` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeBody {
    pub scenario: String,
    pub cycle_time: f64,
    pub mode_count: usize,
    pub uniform_cost: f64,
    pub uniform_d: Vec<f64>,
    pub report: OptReport,
}

/// Extracts the `body` object of a JSON artifact as compact text.
pub fn artifact_body(json: &str) -> Result<String> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Parse(format!("artifact JSON: {e}")))?;
    let body = value
        .get("body")
        .ok_or_else(|| Error::Parse("artifact has no body".into()))?;
    Ok(body.to_string())
}

#[derive(Serialize)]
struct ModeEntry {
    index: usize,
    window: [f64; 2],
    duration: f64,
    active_phases: Vec<usize>,
    a: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ModesBody {
    layout: &'static str,
    n: usize,
    cycle_time: f64,
    state_labels: Vec<String>,
    modes: Vec<ModeEntry>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    a_av: Vec<Vec<f64>>,
}

pub fn rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

/// Mode matrices as JSON; every matrix is a list of rows.
pub fn modes_json(
    header: &ArtifactHeader,
    spec: &NetworkSpec,
    ms: &ModeSet<f64>,
    c: &DMatrix<f64>,
) -> Result<String> {
    let modes = ms
        .modes
        .iter()
        .enumerate()
        .map(|(i, a)| ModeEntry {
            index: i,
            window: [ms.windows[i].0, ms.windows[i].1],
            duration: ms.durations[i],
            active_phases: ms.schedule.active_phases(i).to_vec(),
            a: rows(a),
        })
        .collect();
    let body = ModesBody {
        layout: "row-major",
        n: ms.n(),
        cycle_time: ms.cycle_time,
        state_labels: spec.state_labels(),
        modes,
        b: rows(&ms.b),
        c: rows(c),
        a_av: rows(&ms.average_matrix(&ms.durations)?),
    };
    Ok(json_artifact(header, &body))
}

fn csv_text(header: &ArtifactHeader, columns: &[String], records: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(columns).expect("in-memory write");
    for rec in records {
        wtr.write_record(&rec).expect("in-memory write");
    }
    let body = String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8");
    header.csv_comment() + &body
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Optimization trajectory: `iter, alpha_tilde, kkt_norm, cost`.
pub fn trajectory_csv(header: &ArtifactHeader, report: &OptReport) -> String {
    csv_text(
        header,
        &cols(&["iter", "alpha_tilde", "kkt_norm", "cost"]),
        report
            .trajectory
            .iter()
            .map(|p| vec![p.iter.to_string(), num(p.alpha_tilde), num(p.kkt_norm), num(p.cost)]),
    )
}

/// Distributed error trace: `round, agent, frobenius_error`.
pub fn distributed_csv<T: Scalar>(header: &ArtifactHeader, run: &DistributedRun<T>) -> String {
    let records = run.error_trace.iter().enumerate().flat_map(|(r, errs)| {
        errs.iter()
            .enumerate()
            .map(move |(a, &e)| vec![r.to_string(), a.to_string(), num(e)])
    });
    csv_text(header, &cols(&["round", "agent", "frobenius_error"]), records)
}

/// Simulation samples: `t`, one column per cell, one `y:<road>` column per road.
pub fn simulation_csv<T: Scalar>(header: &ArtifactHeader, spec: &NetworkSpec, traj: &Trajectory<T>) -> String {
    let mut columns = vec!["t".to_string()];
    columns.extend(spec.state_labels());
    columns.extend(spec.roads.iter().map(|r| format!("y:{}", r.id)));
    let records = (0..traj.len()).map(|k| {
        let mut rec = vec![num(traj.times[k])];
        rec.extend(traj.states[k].iter().map(|v| num(v.as_f64())));
        rec.extend(traj.outputs[k].iter().map(|v| num(v.as_f64())));
        rec
    });
    csv_text(header, &columns, records)
}

/// One row of the averaging-error comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub cycle_time: f64,
    pub horizon: f64,
    pub error_percent: f64,
    pub excluded_samples: usize,
}

/// Averaging error per cycle time: `cycle_time, horizon, error_percent, excluded_samples`.
pub fn error_csv(header: &ArtifactHeader, rows: &[ErrorRow]) -> String {
    csv_text(
        header,
        &cols(&["cycle_time", "horizon", "error_percent", "excluded_samples"]),
        rows.iter().map(|r| {
            vec![
                num(r.cycle_time),
                num(r.horizon),
                num(r.error_percent),
                r.excluded_samples.to_string(),
            ]
        }),
    )
}

/// Plot data derived from an optimization report: `(file name, CSV text)`.
pub fn export_plotdata(header: &ArtifactHeader, report: &OptReport) -> Vec<(String, String)> {
    let durations = csv_text(
        header,
        &cols(&["mode", "d_initial", "d_star"]),
        report.d_star.iter().enumerate().map(|(i, &d)| {
            let d0 = report.starts.get(report.best_start).map_or(f64::NAN, |s| s.d0[i]);
            vec![i.to_string(), num(d0), num(d)]
        }),
    );
    vec![
        ("trajectory.csv".into(), trajectory_csv(header, report)),
        ("durations.csv".into(), durations),
    ]
}

/// How states are split among agents and who talks to whom.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLayout {
    pub assignment: Vec<usize>,
    pub graph: CommGraph,
}

/// Parses `single`, `intersections`, `roads`, `path:N`, `complete:N` or `grid:RxC`.
///
/// `intersections` gives each intersection the cells of the roads it drains
/// (destination roads go to the intersection feeding them); intersections
/// linked by a road talk to each other. `roads` makes one agent per road,
/// linking roads that meet at an intersection. The numeric layouts split the
/// cells into contiguous blocks.
pub fn agent_layout(spec: &NetworkSpec, layout: &str) -> Result<AgentLayout> {
    let n = spec.n_states();
    let bad = || Error::Validation(format!("unknown agent layout {layout:?}"));
    let count = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
    let blocks = |graph: CommGraph| AgentLayout {
        assignment: block_assignment(n, graph.agent_count()),
        graph,
    };
    match layout {
        "single" => Ok(blocks(CommGraph::complete(1))),
        "intersections" => {
            let nu = spec.intersections.len();
            if nu == 0 {
                return Err(Error::Validation("scenario has no intersections".into()));
            }
            let down = spec.downstream_intersection();
            let up = spec.upstream_intersection();
            let owner: Vec<usize> = (0..spec.n_roads()).map(|r| down[r].or(up[r]).unwrap_or(0)).collect();
            let assignment = (0..n).map(|s| owner[spec.road_of_state(s)]).collect();
            let edges: Vec<_> = (0..spec.n_roads())
                .filter_map(|r| Some((up[r]?, down[r]?)))
                .collect();
            Ok(AgentLayout {
                assignment,
                graph: CommGraph::from_edges(nu, &edges)?,
            })
        }
        "roads" => {
            let mut edges = Vec::new();
            for inter in &spec.intersections {
                let mut members: Vec<usize> = inter.movements.iter().flat_map(|m| [m.from, m.to]).collect();
                members.sort_unstable();
                members.dedup();
                for (k, &a) in members.iter().enumerate() {
                    edges.extend(members[k + 1..].iter().map(|&b| (a, b)));
                }
            }
            Ok(AgentLayout {
                assignment: (0..n).map(|s| spec.road_of_state(s)).collect(),
                graph: CommGraph::from_edges(spec.n_roads(), &edges)?,
            })
        }
        other => {
            let (kind, arg) = other.split_once(':').ok_or_else(bad)?;
            match kind {
                "path" => Ok(blocks(CommGraph::path(count(arg)?))),
                "complete" => Ok(blocks(CommGraph::complete(count(arg)?))),
                "grid" => {
                    let (r, c) = arg.split_once('x').ok_or_else(bad)?;
                    Ok(blocks(CommGraph::grid(count(r)?, count(c)?)))
                }
                _ => Err(bad()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::TrajectoryPoint;
    use crate::scenarios;

    fn header() -> ArtifactHeader {
        ArtifactHeader::new(7, "command=test\n")
    }

    fn empty_report() -> OptReport {
        OptReport {
            d_star: vec![50.0, 50.0],
            eps_star: 0.5,
            cost: 2.0,
            initial_cost: 2.0,
            best_start: 0,
            inner_iterations: 0,
            outer_iterations: 0,
            trajectory: Vec::new(),
            starts: Vec::new(),
        }
    }

    #[test]
    fn hash_is_stable_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let h = header();
        assert_eq!(h.config_hash.len(), 64);
        assert!(h.csv_comment().starts_with("# tool=greensplit version="));
    }

    #[test]
    fn state_file_round_trip() {
        let spec = scenarios::single_road();
        let mut x = DVector::zeros(spec.n_states());
        x[2] = 65.0;
        let file = StateFile::from_vector(&spec, &x).unwrap();
        let text = file.to_toml_string();
        assert!(text.contains("[densities]"));
        let back = StateFile::parse(&text).unwrap().to_vector(&spec).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn state_file_rejects_bad_input() {
        let spec = scenarios::single_road();
        let wrong_len = StateFile::parse("[densities]\napproach = [1.0]\n").unwrap();
        assert!(matches!(wrong_len.to_vector(&spec), Err(Error::Validation(_))));
        let negative = StateFile::parse("[densities]\nexit = [-1.0]\n").unwrap();
        assert!(matches!(negative.to_vector(&spec), Err(Error::Validation(_))));
        let unknown = StateFile::parse("[densities]\nnowhere = [1.0]\n").unwrap();
        assert!(matches!(unknown.to_vector(&spec), Err(Error::Validation(_))));
        assert!(matches!(StateFile::parse("densities = 3\n"), Err(Error::Parse(_))));
        assert!(matches!(StateFile::parse("[densities]\n[extra]\n"), Err(Error::Parse(_))));
        let partial = StateFile::parse("[densities]\nexit = [2.0]\n").unwrap();
        assert_eq!(partial.to_vector(&spec).unwrap().sum(), 2.0);
    }

    #[test]
    fn presets() {
        let spec = scenarios::four_intersections();
        assert_eq!(resolve_state(&spec, "ones").unwrap().sum(), 36.0);
        assert_eq!(resolve_state(&spec, "zeros").unwrap().sum(), 0.0);
        assert!(matches!(resolve_state(&spec, "/nonexistent/x0.toml"), Err(Error::Io { .. })));
    }

    #[test]
    fn empty_trajectory_gives_header_only_csv() {
        let text = trajectory_csv(&header(), &empty_report());
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], "iter,alpha_tilde,kkt_norm,cost");
    }

    #[test]
    fn trajectory_rows_follow_schema() {
        let mut report = empty_report();
        report.trajectory.push(TrajectoryPoint {
            iter: 3,
            outer: 1,
            epsilon: 0.5,
            alpha_tilde: -0.25,
            kkt_norm: 1e-3,
            cost: 2.0,
            d: vec![40.0, 60.0],
        });
        let text = trajectory_csv(&header(), &report);
        assert_eq!(text.lines().nth(2), Some("3,-2.5e-1,1e-3,2e0"));
        let files = export_plotdata(&header(), &report);
        assert_eq!(files.len(), 2);
        assert!(files[1].1.contains("mode,d_initial,d_star"));
    }

    #[test]
    fn json_artifact_has_header_and_body() {
        let text = json_artifact(&header(), &empty_report());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["header"]["seed"], 7);
        assert_eq!(v["body"]["cost"], 2.0);
        assert_eq!(artifact_body(&text).unwrap(), v["body"].to_string());
    }

    #[test]
    fn modes_json_is_row_major() {
        let spec = scenarios::single_road();
        let sched = crate::net_model::uniform_schedule(&spec);
        let ms: ModeSet<f64> = crate::dynamics::assemble_modes(&spec, &sched).unwrap();
        let c = crate::dynamics::output_map::<f64>(&spec);
        let text = modes_json(&header(), &spec, &ms, &c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let a0 = &v["body"]["modes"][0]["a"];
        assert_eq!(a0.as_array().unwrap().len(), ms.n());
        for i in 0..ms.n() {
            for j in 0..ms.n() {
                assert_eq!(a0[i][j].as_f64().unwrap(), ms.modes[0][(i, j)]);
            }
        }
        assert_eq!(v["body"]["c"].as_array().unwrap().len(), spec.n_roads());
    }

    #[test]
    fn layouts() {
        let spec = scenarios::four_intersections();
        let inter = agent_layout(&spec, "intersections").unwrap();
        assert_eq!(inter.graph.agent_count(), 4);
        assert!(inter.graph.is_connected());
        let roads = agent_layout(&spec, "roads").unwrap();
        assert_eq!(roads.graph.agent_count(), 12);
        assert!(roads.graph.is_connected());
        let grid = agent_layout(&spec, "grid:3x3").unwrap();
        assert_eq!(grid.graph.diameter(), Some(4));
        assert_eq!(grid.assignment.len(), 36);
        assert_eq!(*grid.assignment.last().unwrap(), 8);
        for bad in ["ring:3", "grid:3", "path:0", "nope"] {
            assert!(matches!(agent_layout(&spec, bad), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn canonical_config_is_order_independent() {
        let spec = scenarios::single_road();
        let mut a = BTreeMap::new();
        a.insert("mu".to_string(), "0.9".to_string());
        a.insert("seed".to_string(), "1".to_string());
        let mut b = BTreeMap::new();
        b.insert("seed".to_string(), "1".to_string());
        b.insert("mu".to_string(), "0.9".to_string());
        assert_eq!(canonical_config("optimize", &a, &spec), canonical_config("optimize", &b, &spec));
    }
}
