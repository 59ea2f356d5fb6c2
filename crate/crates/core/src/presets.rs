//! Experiment presets shipped with the crate.

use crate::error::{domain, Result};
use crate::experiment::ExperimentDescriptor;
use crate::model::SystemConfig;

pub const NAMES: [&str; 6] = [
    "table1",
    "table2-geometric",
    "table2-uniform",
    "table2-poisson",
    "appendix-a",
    "single-user",
];

const TEXTS: [&str; 6] = [
    include_str!("../../../presets/table1.json"),
    include_str!("../../../presets/table2-geometric.json"),
    include_str!("../../../presets/table2-uniform.json"),
    include_str!("../../../presets/table2-poisson.json"),
    include_str!("../../../presets/appendix-a.json"),
    include_str!("../../../presets/single-user.json"),
];

/// Raw JSON of a built-in preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    NAMES.iter().position(|&n| n == name).map(|i| TEXTS[i])
}

pub fn preset(name: &str) -> Result<ExperimentDescriptor> {
    let text = preset_text(name).ok_or_else(|| {
        domain(format!(
            "unknown preset {name:?}; available: {}",
            NAMES.join(", ")
        ))
    })?;
    ExperimentDescriptor::from_json(text)
}

fn preset_config(name: &str) -> SystemConfig {
    preset(name)
        .ok()
        .and_then(|d| d.config)
        .unwrap_or_else(|| panic!("built-in preset {name} has a config"))
}

/// Eight users, four servers, `beta = 5`, `V = 70`.
pub fn table1() -> SystemConfig {
    preset_config("table1")
}

/// Nine users, four servers, `beta = 5`, with the given file-length law:
/// `"geometric"`, `"uniform"` or `"poisson"`.
pub fn table2(law: &str) -> Result<SystemConfig> {
    let name = format!("table2-{law}");
    preset(&name)?
        .config
        .ok_or_else(|| domain(format!("preset {name} has no config")))
}
