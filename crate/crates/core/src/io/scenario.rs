use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AircraftId, AircraftRecord, AircraftState, Disturbance, Limits, Point, Scenario, Trajectory};

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Distance unit and frame, for readers. Not interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    pub timestep_seconds: f64,
    #[serde(default)]
    pub limits: Limits,
    pub aircraft: Vec<AircraftEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftEntry {
    pub id: AircraftId,
    pub t: usize,
    #[serde(rename = "T")]
    pub t_end: usize,
    pub x0: [f64; 4],
    #[serde(rename = "xT")]
    pub x_t: [f64; 4],
    /// Standard positions for `k = t ..= T`.
    pub standard: Vec<Point>,
    #[serde(default, skip_serializing_if = "Wind::is_calm")]
    pub wind: Wind,
}

/// Either one wind vector for every step or one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Wind {
    Constant([f64; 2]),
    PerStep(Vec<[f64; 2]>),
}

impl Default for Wind {
    fn default() -> Self {
        Wind::Constant([0.0, 0.0])
    }
}

impl Wind {
    fn is_calm(&self) -> bool {
        *self == Wind::Constant([0.0, 0.0])
    }

    fn expand(&self, steps: usize) -> Vec<Disturbance> {
        match self {
            Wind::Constant(d) => vec![Disturbance::new(d[0], d[1]); steps],
            Wind::PerStep(ds) => ds.iter().map(|d| Disturbance::new(d[0], d[1])).collect(),
        }
    }

    fn compress(ds: &[Disturbance]) -> Wind {
        match ds.first() {
            None => Wind::default(),
            Some(first) if ds.iter().all(|d| d == first) => Wind::Constant([first.dx, first.dy]),
            Some(_) => Wind::PerStep(ds.iter().map(|d| [d.dx, d.dy]).collect()),
        }
    }
}

impl ScenarioFile {
    /// Converts to a validated [`Scenario`]; aircraft are ordered by id.
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut aircraft = Vec::with_capacity(self.aircraft.len());
        for (i, a) in self.aircraft.into_iter().enumerate() {
            let path = format!("aircraft[{i}]");
            if a.t_end <= a.t {
                return Err(Error::validation(format!("{path}.T"), "must be greater than t"));
            }
            let steps = a.t_end - a.t;
            if a.standard.len() != steps + 1 {
                return Err(Error::validation(
                    format!("{path}.standard"),
                    format!("expected {} points for t..=T, got {}", steps + 1, a.standard.len()),
                ));
            }
            if let Wind::PerStep(ds) = &a.wind {
                if ds.len() != steps {
                    return Err(Error::validation(
                        format!("{path}.wind"),
                        format!("expected {steps} per-step entries, got {}", ds.len()),
                    ));
                }
            }
            let initial = AircraftState::from_array(a.x0);
            aircraft.push(AircraftRecord {
                id: a.id,
                t_start: a.t,
                t_end: a.t_end,
                initial,
                terminal: AircraftState::from_array(a.x_t),
                standard: Trajectory::from_positions(a.id, a.t, &a.standard, initial.theta),
                disturbances: a.wind.expand(steps),
            });
        }
        aircraft.sort_by_key(|a| a.id);
        let scenario = Scenario {
            aircraft,
            limits: self.limits,
            timestep_seconds: self.timestep_seconds,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_scenario(scenario: &Scenario) -> ScenarioFile {
        ScenarioFile {
            description: None,
            units: None,
            timestep_seconds: scenario.timestep_seconds,
            limits: scenario.limits.clone(),
            aircraft: scenario
                .aircraft
                .iter()
                .map(|a| AircraftEntry {
                    id: a.id,
                    t: a.t_start,
                    t_end: a.t_end,
                    x0: a.initial.to_array(),
                    x_t: a.terminal.to_array(),
                    standard: a.standard.positions(),
                    wind: Wind::compress(&a.disturbances),
                })
                .collect(),
        }
    }
}

/// Parses a scenario document. Errors carry the JSON field path and, for
/// syntax errors, the line and column.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path.is_empty() || path == "." { "scenario".to_string() } else { path };
        Error::validation(path, format!("{inner}"))
    })?;
    file.into_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_scenario(&text)
}

pub fn scenario_to_json(file: &ScenarioFile) -> Result<String> {
    let mut s = serde_json::to_string_pretty(file)?;
    s.push('\n');
    Ok(s)
}

pub fn write_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scenario_to_json(&ScenarioFile::from_scenario(scenario))?)?;
    Ok(())
}
