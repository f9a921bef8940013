//! Bundled reference configs, embedded so tests and the reproduce command
//! run without external files.

use crate::model::{self, ModelSpec};

/// Saturating-feedback model with mixed jump signs: two impulses per period
/// of length two, one halving jump with refill and one doubling jump.
pub const SATURATING_JSON: &str = include_str!("../presets/example56.json");

/// Pure decay with a unit withdrawal at every integer; admits no positive
/// globally bounded solution.
pub const LINEAR_DECAY_JSON: &str = include_str!("../presets/example1.json");

pub fn saturating_model() -> ModelSpec {
    model::load_model(SATURATING_JSON).expect("bundled config is valid")
}

pub fn linear_counterexample() -> ModelSpec {
    model::load_model(LINEAR_DECAY_JSON).expect("bundled config is valid")
}

/// Resolves a reproduce-case id to its bundled config.
pub fn by_id(id: &str) -> Option<&'static str> {
    match id {
        "example56" => Some(SATURATING_JSON),
        "example1" => Some(LINEAR_DECAY_JSON),
        _ => None,
    }
}
