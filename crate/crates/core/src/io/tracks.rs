use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{AircraftId, AircraftState, Trajectory};

#[derive(Debug, Deserialize)]
struct TrackRow {
    id: AircraftId,
    k: usize,
    x: f64,
    y: f64,
    #[serde(default)]
    v: Option<f64>,
    #[serde(default)]
    theta: Option<f64>,
}

/// Reads tracks from CSV with header `id,k,x,y` and optional `v,theta`.
///
/// Rows may come in any order. Each id must cover a contiguous range of `k`.
/// When speed or heading is missing it is rebuilt from the positions.
pub fn import_tracks(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_tracks(file)
}

pub fn read_tracks(reader: impl std::io::Read) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut groups: BTreeMap<AircraftId, Vec<TrackRow>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: TrackRow = row?;
        groups.entry(row.id).or_default().push(row);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (id, mut rows) in groups {
        rows.sort_by_key(|r| r.k);
        for w in rows.windows(2) {
            if w[1].k != w[0].k + 1 {
                return Err(Error::invalid(format!(
                    "track {id}: timesteps jump from {} to {}",
                    w[0].k, w[1].k
                )));
            }
        }
        if rows.iter().any(|r| !r.x.is_finite() || !r.y.is_finite()) {
            return Err(Error::invalid(format!("track {id}: non-finite position")));
        }
        let t_start = rows[0].k;
        let points: Vec<[f64; 2]> = rows.iter().map(|r| [r.x, r.y]).collect();
        let first_heading = match points.get(1) {
            Some(p) => (p[1] - points[0][1]).atan2(p[0] - points[0][0]),
            None => 0.0,
        };
        let rebuilt = Trajectory::from_positions(id, t_start, &points, rows[0].theta.unwrap_or(first_heading));
        let states = rows
            .iter()
            .zip(&rebuilt.states)
            .map(|(r, s)| AircraftState::new(r.x, r.y, r.v.unwrap_or(s.v), r.theta.unwrap_or(s.theta)))
            .collect();
        out.push(Trajectory {
            aircraft_id: id,
            t_start,
            states,
        });
    }
    Ok(out)
}

/// Writes tracks as `id,k,x,y,v,theta`, ordered by id then `k`.
pub fn write_tracks(tracks: &[Trajectory], writer: impl std::io::Write) -> Result<()> {
    let mut sorted: Vec<&Trajectory> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.aircraft_id);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "k", "x", "y", "v", "theta"])?;
    for t in sorted {
        for (j, s) in t.states.iter().enumerate() {
            w.write_record([
                t.aircraft_id.to_string(),
                (t.t_start + j).to_string(),
                super::sig9(s.x),
                super::sig9(s.y),
                super::sig9(s.v),
                super::sig9(s.theta),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
