//! Bundled scenarios and scenario resolution.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net_model::{
    build_network, generate_grid, parse_network, GridParams, IntersectionDocument,
    MovementDocument, NetworkSpec, RoadDocument, ScenarioDocument,
};

const FOUR_INTERSECTIONS: &str = include_str!("../scenarios/four_intersections.toml");
const SINGLE_ROAD: &str = include_str!("../scenarios/single_road.toml");

/// Names accepted by [`resolve`] besides file paths.
pub const BUNDLED: &[&str] = &["four_intersections", "single_road", "grid_RxC"];

/// Twelve roads, four intersections, 36 states.
pub fn four_intersections() -> NetworkSpec {
    parse_network(FOUR_INTERSECTIONS).expect("bundled scenario is valid")
}

/// One signalized approach with a green and an all-red phase.
pub fn single_road() -> NetworkSpec {
    parse_network(SINGLE_ROAD).expect("bundled scenario is valid")
}

/// `rows x cols` grid with default parameters.
pub fn grid(rows: usize, cols: usize) -> NetworkSpec {
    generate_grid(rows, cols, &GridParams::default()).expect("grid parameters are valid")
}

/// Source text of a bundled TOML scenario.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    match name {
        "four_intersections" => Some(FOUR_INTERSECTIONS),
        "single_road" => Some(SINGLE_ROAD),
        _ => None,
    }
}

/// Loads a scenario from a file path, or by bundled name
/// (`four_intersections`, `single_road`, `grid_RxC`).
pub fn resolve(name_or_path: &str) -> Result<NetworkSpec> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(name_or_path, e))?;
        return parse_network(&text);
    }
    if let Some(text) = bundled_text(name_or_path) {
        return parse_network(text);
    }
    if let Some(dims) = name_or_path.strip_prefix("grid_") {
        let parsed = dims
            .split_once('x')
            .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)));
        if let Some((rows, cols)) = parsed {
            return generate_grid(rows, cols, &GridParams::default());
        }
    }
    Err(Error::Validation(format!(
        "'{name_or_path}' is neither a readable file nor a bundled scenario ({})",
        BUNDLED.join(", ")
    )))
}

/// A lone destination road without intersections (`h = 1`, `T = 100`).
pub fn bare_road(length: f64, speed: f64, exit_rate: f64) -> NetworkSpec {
    build_network(&ScenarioDocument {
        schema_version: 1,
        name: "bare_road".into(),
        h: 1.0,
        cycle_time: 100.0,
        conservation: true,
        allow_phase_overlap: false,
        roads: vec![RoadDocument {
            id: "r1".into(),
            length,
            speed,
            source: false,
            destination: true,
            exit_rate,
            inflow: None,
        }],
        intersections: vec![],
    })
    .expect("bare road is valid")
}

/// Road `r1` feeding destination `r2` through an intersection with a single
/// always-green phase.
pub fn single_road_always_green() -> NetworkSpec {
    let road = |id: &str, destination: bool| RoadDocument {
        id: id.into(),
        length: 3.0,
        speed: 1.0,
        source: !destination,
        destination,
        exit_rate: if destination { 0.5 } else { 0.0 },
        inflow: None,
    };
    build_network(&ScenarioDocument {
        schema_version: 1,
        name: "always_green".into(),
        h: 1.0,
        cycle_time: 100.0,
        conservation: true,
        allow_phase_overlap: false,
        roads: vec![road("r1", false), road("r2", true)],
        intersections: vec![IntersectionDocument {
            id: "I1".into(),
            phases: vec![vec!["r1->r2".into()]],
            movements: vec![MovementDocument {
                from: "r1".into(),
                to: "r2".into(),
                routing_ratio: 1.0,
                saturation_rate: 0.8,
            }],
        }],
    })
    .expect("always-green road is valid")
}
