use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sig9;
use crate::error::{Error, Result};
use crate::model::{AircraftId, AircraftState, ControlInput, Corridor, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorridorDoc {
    aircraft_id: AircraftId,
    t_start: usize,
    /// `[cx, cy, r]` per timestep.
    disks: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryDoc {
    aircraft_id: AircraftId,
    t_start: usize,
    /// `[x, y, v, theta]` per timestep.
    states: Vec<[f64; 4]>,
    /// `[u, psi]` per step; one fewer than `states`.
    controls: Vec<[f64; 2]>,
}

/// A selected trajectory together with the controls that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlownTrajectory {
    pub trajectory: Trajectory,
    pub controls: Vec<ControlInput>,
}

fn by_id<T>(items: &[T], id: impl Fn(&T) -> AircraftId) -> Vec<&T> {
    let mut v: Vec<&T> = items.iter().collect();
    v.sort_by_key(|t| id(t));
    v
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Rows `aircraft_id,k,cx,cy,r` ordered by aircraft then `k`.
pub fn corridors_csv(corridors: &[Corridor]) -> String {
    let mut out = String::from("aircraft_id,k,cx,cy,r\n");
    for c in by_id(corridors, |c| c.aircraft_id) {
        for (j, (p, r)) in c.centers.iter().zip(&c.radii).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.aircraft_id,
                c.t_start + j,
                sig9(p[0]),
                sig9(p[1]),
                sig9(*r)
            ));
        }
    }
    out
}

/// Lossless JSON: `[{aircraft_id, t_start, disks: [[cx, cy, r], ...]}, ...]`.
pub fn corridors_json(corridors: &[Corridor]) -> Result<String> {
    let docs: Vec<CorridorDoc> = by_id(corridors, |c| c.aircraft_id)
        .into_iter()
        .map(|c| CorridorDoc {
            aircraft_id: c.aircraft_id,
            t_start: c.t_start,
            disks: c.centers.iter().zip(&c.radii).map(|(p, r)| [p[0], p[1], *r]).collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&docs)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_corridors_json(text: &str) -> Result<Vec<Corridor>> {
    let docs: Vec<CorridorDoc> = serde_json::from_str(text)?;
    docs.into_iter()
        .map(|d| {
            let c = Corridor {
                aircraft_id: d.aircraft_id,
                t_start: d.t_start,
                centers: d.disks.iter().map(|d| [d[0], d[1]]).collect(),
                radii: d.disks.iter().map(|d| d[2]).collect(),
            };
            c.validate()?;
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct CorridorRow {
    aircraft_id: AircraftId,
    k: usize,
    cx: f64,
    cy: f64,
    r: f64,
}

pub fn read_corridors_csv(reader: impl std::io::Read) -> Result<Vec<Corridor>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows: Vec<CorridorRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|r| (r.aircraft_id, r.k));
    let mut out: Vec<Corridor> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(c) if c.aircraft_id == r.aircraft_id => {
                if r.k != c.t_end() + 1 {
                    return Err(Error::invalid(format!(
                        "corridor {}: timestep {} does not follow {}",
                        r.aircraft_id,
                        r.k,
                        c.t_end()
                    )));
                }
                c.centers.push([r.cx, r.cy]);
                c.radii.push(r.r);
            }
            _ => out.push(Corridor {
                aircraft_id: r.aircraft_id,
                t_start: r.k,
                centers: vec![[r.cx, r.cy]],
                radii: vec![r.r],
            }),
        }
    }
    out.iter().try_for_each(Corridor::validate)?;
    Ok(out)
}

/// Writes corridors as JSON when the path ends in `.json`, CSV otherwise.
pub fn export_corridors(corridors: &[Corridor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_json(path) {
        corridors_json(corridors)?
    } else {
        corridors_csv(corridors)
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn import_corridors(path: impl AsRef<Path>) -> Result<Vec<Corridor>> {
    let path = path.as_ref();
    if is_json(path) {
        parse_corridors_json(&std::fs::read_to_string(path)?)
    } else {
        read_corridors_csv(std::fs::File::open(path)?)
    }
}

/// Rows `aircraft_id,k,x,y,v,theta,u,psi`; the control columns hold the
/// input applied at `k` and are empty on the final state.
pub fn trajectories_csv(flown: &[FlownTrajectory]) -> String {
    let mut out = String::from("aircraft_id,k,x,y,v,theta,u,psi\n");
    for f in by_id(flown, |f| f.trajectory.aircraft_id) {
        let t = &f.trajectory;
        for (j, s) in t.states.iter().enumerate() {
            let (u, psi) = match f.controls.get(j) {
                Some(c) => (sig9(c.u), sig9(c.psi)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t.aircraft_id,
                t.t_start + j,
                sig9(s.x),
                sig9(s.y),
                sig9(s.v),
                sig9(s.theta),
                u,
                psi
            ));
        }
    }
    out
}

pub fn trajectories_json(flown: &[FlownTrajectory]) -> Result<String> {
    let docs: Vec<TrajectoryDoc> = by_id(flown, |f| f.trajectory.aircraft_id)
        .into_iter()
        .map(|f| TrajectoryDoc {
            aircraft_id: f.trajectory.aircraft_id,
            t_start: f.trajectory.t_start,
            states: f.trajectory.states.iter().map(|s| s.to_array()).collect(),
            controls: f.controls.iter().map(|c| [c.u, c.psi]).collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&docs)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_trajectories_json(text: &str) -> Result<Vec<FlownTrajectory>> {
    let docs: Vec<TrajectoryDoc> = serde_json::from_str(text)?;
    docs.into_iter()
        .map(|d| {
            if d.controls.len() + 1 != d.states.len() {
                return Err(Error::invalid(format!(
                    "trajectory {}: {} states but {} controls",
                    d.aircraft_id,
                    d.states.len(),
                    d.controls.len()
                )));
            }
            Ok(FlownTrajectory {
                trajectory: Trajectory {
                    aircraft_id: d.aircraft_id,
                    t_start: d.t_start,
                    states: d.states.into_iter().map(AircraftState::from_array).collect(),
                },
                controls: d.controls.into_iter().map(|c| ControlInput::new(c[0], c[1])).collect(),
            })
        })
        .collect()
}

/// Writes trajectories as JSON when the path ends in `.json`, CSV otherwise.
pub fn export_trajectories(flown: &[FlownTrajectory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_json(path) {
        trajectories_json(flown)?
    } else {
        trajectories_csv(flown)
    };
    std::fs::write(path, text)?;
    Ok(())
}
