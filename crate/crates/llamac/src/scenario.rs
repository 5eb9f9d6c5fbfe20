//! Scenario files.
//!
//! Scenarios are plain TOML. The schema is documented in `docs/formats.md`;
//! the hash of the scenario (file bytes, or canonical JSON for configs built
//! from CLI flags) is recorded in every transcript header.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_grid::{CellPos, CornerPos, GridConfig, GridMode, GridPos, ObjectSpec, TargetSpec};
use crate::env_gs::GsConfig;
use crate::rng::fnv1a64;

/// A parsed scenario: exactly one environment configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioConfig {
    Gs(GsConfig),
    Grid(GridConfig),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    env: String,
    gs: Option<GsSection>,
    grid: Option<GridSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GsSection {
    agents: usize,
    mu: Option<f64>,
    sigma: Option<f64>,
    rounds: Option<u64>,
    action_min: Option<i64>,
    action_max: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridSection {
    rows: usize,
    cols: usize,
    max_steps: Option<u64>,
    #[serde(default)]
    objects: Vec<ObjectEntry>,
    #[serde(default)]
    targets: Vec<TargetEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectEntry {
    id: String,
    color: String,
    cell: Option<[usize; 2]>,
    corner: Option<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetEntry {
    id: String,
    color: String,
    cell: [usize; 2],
}

/// Parse scenario text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    match file.env.as_str() {
        "gs" => {
            let section = file
                .gs
                .ok_or_else(|| ScenarioError::Invalid("missing [gs] section".into()))?;
            let defaults = GsConfig::with_defaults(section.agents);
            let config = GsConfig {
                n_agents: section.agents,
                mu: section.mu.unwrap_or(defaults.mu),
                sigma: section.sigma.unwrap_or(defaults.sigma),
                action_min: section.action_min.unwrap_or(0),
                action_max: section.action_max.unwrap_or(9),
                max_rounds: section.rounds.unwrap_or(defaults.max_rounds),
            };
            config.validate().map_err(ScenarioError::Invalid)?;
            Ok(ScenarioConfig::Gs(config))
        }
        mode @ ("grid-easy" | "grid-hard") => {
            let section = file
                .grid
                .ok_or_else(|| ScenarioError::Invalid("missing [grid] section".into()))?;
            let mode = if mode == "grid-easy" {
                GridMode::Easy
            } else {
                GridMode::Hard
            };
            let objects = section
                .objects
                .into_iter()
                .map(|o| {
                    let pos = match (mode, o.cell, o.corner) {
                        (GridMode::Easy, Some([row, col]), None) => {
                            GridPos::Cell(CellPos { row, col })
                        }
                        (GridMode::Hard, None, Some([row, col])) => {
                            GridPos::Corner(CornerPos { row, col })
                        }
                        _ => {
                            return Err(ScenarioError::Invalid(format!(
                                "object {} must set `cell` in easy mode or `corner` in hard mode",
                                o.id
                            )))
                        }
                    };
                    Ok(ObjectSpec {
                        id: o.id,
                        color: o.color,
                        pos,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let targets = section
                .targets
                .into_iter()
                .map(|t| TargetSpec {
                    id: t.id,
                    color: t.color,
                    cell: CellPos {
                        row: t.cell[0],
                        col: t.cell[1],
                    },
                })
                .collect();
            let config = GridConfig {
                rows: section.rows,
                cols: section.cols,
                mode,
                objects,
                targets,
                max_steps: section
                    .max_steps
                    .unwrap_or_else(|| GridConfig::default_max_steps(section.rows, section.cols, mode)),
            };
            config.validate().map_err(ScenarioError::Invalid)?;
            Ok(ScenarioConfig::Grid(config))
        }
        other => Err(ScenarioError::Invalid(format!("unknown env `{other}`"))),
    }
}

/// Load a scenario from disk, returning the config and its hash.
pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, String), ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let config = parse_scenario(&text)?;
    Ok((config, hash_bytes(text.as_bytes())))
}

/// Hash used for scenario identity in transcripts.
pub fn hash_bytes(bytes: &[u8]) -> String {
    format!("fnv64:{:016x}", fnv1a64(bytes))
}

/// Hash of a config that was built in memory rather than read from a file.
pub fn hash_config<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serialization");
    hash_bytes(json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GS_SCENARIO: &str = r#"
env = "gs"

[gs]
agents = 3
mu = 7.5
sigma = 1.5
rounds = 20
"#;

    const GRID_SCENARIO: &str = r#"
env = "grid-easy"

[grid]
rows = 2
cols = 2

[[grid.objects]]
id = "object_blue_1"
color = "blue"
cell = [0, 0]

[[grid.targets]]
id = "target_blue_1"
color = "blue"
cell = [1, 1]
"#;

    #[test]
    fn parses_gs_scenario() {
        match parse_scenario(GS_SCENARIO).unwrap() {
            ScenarioConfig::Gs(c) => {
                assert_eq!(c.n_agents, 3);
                assert_eq!(c.mu, 7.5);
                assert_eq!(c.max_rounds, 20);
            }
            _ => panic!("expected gs"),
        }
    }

    #[test]
    fn parses_grid_scenario_exactly() {
        match parse_scenario(GRID_SCENARIO).unwrap() {
            ScenarioConfig::Grid(c) => {
                assert_eq!(c.mode, GridMode::Easy);
                assert_eq!(c.objects.len(), 1);
                assert_eq!(c.objects[0].pos, GridPos::Cell(CellPos { row: 0, col: 0 }));
                assert_eq!(c.targets[0].cell, CellPos { row: 1, col: 1 });
                assert_eq!(c.max_steps, 40);
            }
            _ => panic!("expected grid"),
        }
    }

    #[test]
    fn rejects_corner_in_easy_mode() {
        let bad = GRID_SCENARIO.replace("cell = [0, 0]", "corner = [0, 0]");
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn rejects_unknown_env() {
        assert!(parse_scenario("env = \"maze\"").is_err());
    }

    #[test]
    fn hashing_is_stable() {
        assert_eq!(
            hash_bytes(GS_SCENARIO.as_bytes()),
            hash_bytes(GS_SCENARIO.as_bytes())
        );
        assert_ne!(
            hash_bytes(GS_SCENARIO.as_bytes()),
            hash_bytes(GRID_SCENARIO.as_bytes())
        );
    }
}
