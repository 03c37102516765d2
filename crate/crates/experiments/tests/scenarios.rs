use std::path::Path;

use nsv_experiments::{run_ensemble, run_refinement, run_scenario, ExperimentError, RunFile, Thresholds};

fn small() -> RunFile {
    RunFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.toml")).unwrap()
}

#[test]
fn shipped_configs_parse_and_build() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let rf = RunFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        rf.model_config().unwrap();
        count += 1;
    }
    assert!(count >= 9);
}

#[test]
fn every_criterion_has_a_threshold() {
    let th = Thresholds::builtin();
    let rf = small();
    let b = run_scenario("decay", &rf, 3).unwrap();
    assert_eq!(b.criteria.len(), 3);
    for c in &b.criteria {
        assert_eq!(th.get(&c.name).unwrap(), c.threshold);
        assert_eq!(c.pass, c.threshold.admits(c.value));
    }
    assert_eq!(b.provenance.seed, 3);
    assert_eq!(b.provenance.config_hash, rf.config_hash());
}

#[test]
fn unknown_scenario() {
    assert!(matches!(
        run_scenario("spin-up", &small(), 1),
        Err(ExperimentError::UnknownScenario(_))
    ));
}

#[test]
fn study_sizes_are_checked() {
    let rf = small();
    assert!(matches!(run_refinement(&rf, 2, 1), Err(ExperimentError::Arguments(_))));
    assert!(matches!(run_ensemble(&rf, 1, 1), Err(ExperimentError::Arguments(_))));
}

#[test]
fn parameters_reject_unknown_keys() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.toml")).unwrap();
    let rf = RunFile::parse(&text.replace("level = 1.0", "level = 1.0\nwindows = 3")).unwrap();
    assert!(matches!(
        run_scenario("decay", &rf, 1),
        Err(ExperimentError::RunFile(_))
    ));
}
