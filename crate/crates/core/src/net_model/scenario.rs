//! Declarative scenario documents (TOML).
//!
//! The document is the human-editable form of a [`NetworkSpec`]. Unknown keys
//! are rejected so that typos surface as validation errors.
//!
//! ```toml
//! schema_version = 1
//! name = "demo"
//! h = 100.0
//! cycle_time = 100.0
//!
//! [[roads]]
//! id = "in"
//! length = 300.0
//! speed = 10.0
//! source = true
//! inflow = 0.2              # or [[0.0, 0.4], [50.0, 0.0]]
//!
//! [[roads]]
//! id = "out"
//! length = 300.0
//! speed = 10.0
//! destination = true
//! exit_rate = 0.5
//!
//! [[intersections]]
//! id = "I1"
//! phases = [["in->out"], []]
//!
//! [[intersections.movements]]
//! from = "in"
//! to = "out"
//! routing_ratio = 1.0
//! saturation_rate = 0.4
//! ```
//!
//! [`NetworkSpec`]: super::NetworkSpec

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_true() -> bool {
    true
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Discretization step (length units).
    pub h: f64,
    /// Signal cycle time (time units).
    pub cycle_time: f64,
    /// Require routing ratios leaving each road to sum to one.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub conservation: bool,
    /// Permit a movement to appear in more than one phase of an intersection.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_phase_overlap: bool,
    #[serde(default)]
    pub roads: Vec<RoadDocument>,
    #[serde(default)]
    pub intersections: Vec<IntersectionDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadDocument {
    pub id: String,
    pub length: f64,
    /// Free-flow speed (length / time).
    pub speed: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub source: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub destination: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub exit_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflow: Option<InflowDocument>,
}

/// Exogenous inflow: a constant rate or a periodic piecewise-constant profile
/// given as `[start_time, rate]` pairs starting at time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InflowDocument {
    Constant(f64),
    Profile(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionDocument {
    pub id: String,
    /// Ordered phases, each a list of `"from->to"` movement labels.
    pub phases: Vec<Vec<String>>,
    pub movements: Vec<MovementDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementDocument {
    pub from: String,
    pub to: String,
    pub routing_ratio: f64,
    pub saturation_rate: f64,
}

impl MovementDocument {
    pub fn label(&self) -> String {
        movement_label(&self.from, &self.to)
    }
}

pub fn movement_label(from: &str, to: &str) -> String {
    format!("{from}->{to}")
}

impl ScenarioDocument {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: ScenarioDocument =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim().to_owned()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario documents always serialize")
    }
}
