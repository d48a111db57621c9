//! Scenario and track files, result exports and figures.

mod export;
mod scenario;
mod svg;
mod tracks;

pub use export::{
    corridors_csv, corridors_json, export_corridors, export_trajectories, import_corridors,
    parse_corridors_json, parse_trajectories_json, read_corridors_csv, trajectories_csv,
    trajectories_json, FlownTrajectory,
};
pub use scenario::{
    load_scenario, parse_scenario, scenario_to_json, write_scenario, AircraftEntry, ScenarioFile, Wind,
};
pub use svg::{render_svg, write_svg, SvgOptions};
pub use tracks::{import_tracks, read_tracks, write_tracks};

/// Shortest decimal form of `v` rounded to 9 significant digits.
pub(crate) fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}
