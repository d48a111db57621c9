use std::path::{Path, PathBuf};

use skyset::atc::AtcProblem;
use skyset::io;
use skyset::model::{AircraftState, Disturbance};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[test]
fn scenario_transcribes_the_three_aircraft() {
    let sc = io::load_scenario(data("haneda3.json")).unwrap();
    assert_eq!(sc.aircraft.len(), 3);
    let expect = [
        (1, 1, 12, [4.71, -8.42, 16.4, -1.58], [-413.0, -97.5, 22.2, 2.63]),
        (2, 2, 13, [4.50, -9.01, 17.7, -1.56], [-452.0, -123.0, 31.1, 2.84]),
        (3, 2, 15, [-406.0, -217.0, 31.8, 0.471], [5.91, -1.96, 31.2, 0.833]),
    ];
    for (a, (id, t, big_t, x0, xt)) in sc.aircraft.iter().zip(expect) {
        assert_eq!((a.id, a.t_start, a.t_end), (id, t, big_t));
        assert_eq!(a.initial, AircraftState::from_array(x0));
        assert_eq!(a.terminal, AircraftState::from_array(xt));
        assert_eq!(a.disturbances, vec![Disturbance::new(0.236, 0.236); big_t - t]);
        // The standard route runs from the initial to the terminal position.
        assert_eq!(a.standard.states[0].position(), a.initial.position());
        assert_eq!(a.standard.states.last().unwrap().position(), a.terminal.position());
    }
    assert_eq!(sc.limits.safety_margin, 3.0);
    assert_eq!(sc.limits.alpha, 0.01);
    assert_eq!(sc.timestep_seconds, 360.0);
}

#[test]
fn wind_is_a_third_of_a_unit_at_forty_five_degrees() {
    let d = Disturbance::new(0.236, 0.236);
    assert!((d.dx.hypot(d.dy) - 1.0 / 3.0).abs() < 1e-3);
    assert!((d.dy.atan2(d.dx) - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
}

#[test]
fn sample_tracks_have_expected_lengths_and_match_the_standards() {
    let tracks = io::import_tracks(data("haneda3_tracks.csv")).unwrap();
    let lens: Vec<usize> = tracks.iter().map(|t| t.states.len()).collect();
    assert_eq!(lens, vec![12, 12, 14]);
    let sc = io::load_scenario(data("haneda3.json")).unwrap();
    for (t, a) in tracks.iter().zip(&sc.aircraft) {
        assert_eq!(t.t_start, a.t_start);
        for (p, q) in t.states.iter().zip(&a.standard.states) {
            assert!((p.x - q.x).abs() < 1e-6 * q.x.abs().max(1.0));
            assert!((p.y - q.y).abs() < 1e-6 * q.y.abs().max(1.0));
        }
    }
}

#[test]
fn initial_guess_respects_the_turn_limit_and_disk_counts() {
    let sc = io::load_scenario(data("haneda3.json")).unwrap();
    let p = AtcProblem::new(&sc, None).unwrap();
    let plans = p.decode(&p.initial_guess());
    let max_psi = plans
        .iter()
        .flat_map(|pl| pl.controls.iter().map(|c| c.psi.abs()))
        .fold(0.0, f64::max);
    assert!(max_psi <= sc.limits.psi_max, "{max_psi}");
    let interior: usize = plans.iter().map(|pl| pl.corridor.interior().len()).sum();
    assert_eq!(interior, 10 + 10 + 12);
    let rows = io::corridors_csv(&plans.iter().map(|pl| pl.corridor.clone()).collect::<Vec<_>>()).lines().count() - 1;
    assert_eq!(rows, 12 + 12 + 14);
}

#[test]
fn bundled_scenario_survives_a_write_and_reload() {
    let sc = io::load_scenario(data("haneda3.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.json");
    io::write_scenario(&sc, &path).unwrap();
    assert_eq!(io::load_scenario(&path).unwrap(), sc);
}
