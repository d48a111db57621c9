//! Regenerates `data/haneda3.json` and `data/haneda3_tracks.csv`.
//!
//! Initial and terminal states, time spans, step length and wind are the
//! published values for two departures and one arrival around an airport
//! at the origin. The recorded tracks are not redistributable, so standard
//! trajectories are synthetic routes through hand-placed waypoints that
//! follow the same departure and arrival flows.
//!
//! Run with `cargo run --example gen_haneda3` from `crates/core`.

use std::path::Path;

use skyset::io::{scenario_to_json, write_tracks, ScenarioFile};
use skyset::model::{AircraftState, Disturbance, Limits, Scenario};
use skyset::synth::routed_aircraft;

fn main() -> skyset::Result<()> {
    let wind = Disturbance::new(0.236, 0.236);
    let aircraft = vec![
        routed_aircraft(
            1,
            1,
            12,
            AircraftState::new(4.71, -8.42, 16.4, -1.58),
            AircraftState::new(-413.0, -97.5, 22.2, 2.63),
            &[[0.0, -60.0], [-150.0, -160.0], [-330.0, -145.0]],
            wind,
        )?,
        routed_aircraft(
            2,
            2,
            13,
            AircraftState::new(4.50, -9.01, 17.7, -1.56),
            AircraftState::new(-452.0, -123.0, 31.1, 2.84),
            &[[0.0, -50.0], [-150.0, -150.0], [-360.0, -150.0]],
            wind,
        )?,
        routed_aircraft(
            3,
            2,
            15,
            AircraftState::new(-406.0, -217.0, 31.8, 0.471),
            AircraftState::new(5.91, -1.96, 31.2, 0.833),
            &[[-250.0, -140.0], [-100.0, -110.0], [-40.0, -60.0]],
            wind,
        )?,
    ];
    let scenario = Scenario {
        aircraft,
        limits: Limits::default(),
        timestep_seconds: 360.0,
    };
    scenario.validate()?;

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir)?;
    let mut file = ScenarioFile::from_scenario(&scenario);
    file.description = Some(
        "Two departures and one arrival around an airport at the origin; \
         synthetic standard routes"
            .into(),
    );
    file.units = Some("NM, NM per step, rad; origin at the airport".into());
    std::fs::write(dir.join("haneda3.json"), scenario_to_json(&file)?)?;

    let tracks: Vec<_> = scenario.aircraft.iter().map(|a| a.standard.clone()).collect();
    let csv = std::fs::File::create(dir.join("haneda3_tracks.csv"))?;
    write_tracks(&tracks, csv)?;
    Ok(())
}
