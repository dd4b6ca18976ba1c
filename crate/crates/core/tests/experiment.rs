use std::path::Path;

use psi_core::experiment::{
    analyze_dir, plot_manifest, run_scenario, ArtifactKind, Manifest, ScenarioConfig, ScenarioKind, MANIFEST_FILE,
};
use psi_core::Error;

fn small(kind: ScenarioKind, seed: u64, dir: &Path) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(kind, seed);
    cfg.output_dir = dir.to_path_buf();
    cfg.scan.scan_count = 8;
    cfg.scan.samples_per_scan = 16_384;
    cfg.spans.span_counts = vec![1, 5];
    cfg.workers = Some(2);
    cfg
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_scenario(&small(ScenarioKind::DistanceSweep, 5, a.path())).unwrap();
    run_scenario(&small(ScenarioKind::DistanceSweep, 5, b.path())).unwrap();
    let mut compared = 0;
    for art in ra.manifest.artifacts.iter().filter(|x| x.path.ends_with(".csv")) {
        let x = std::fs::read(a.path().join(&art.path)).unwrap();
        let y = std::fs::read(b.path().join(&art.path)).unwrap();
        assert_eq!(x, y, "{}", art.path);
        compared += 1;
    }
    assert!(compared >= 6);

    let c = tempfile::tempdir().unwrap();
    run_scenario(&small(ScenarioKind::DistanceSweep, 6, c.path())).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("spectrum_n05.csv")).unwrap(),
        std::fs::read(c.path().join("spectrum_n05.csv")).unwrap()
    );
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut one = small(ScenarioKind::Btb, 2, a.path());
    one.workers = Some(1);
    let mut four = small(ScenarioKind::Btb, 2, b.path());
    four.workers = Some(4);
    run_scenario(&one).unwrap();
    run_scenario(&four).unwrap();
    for f in ["measured.csv", "btb.csv", "residual.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_lists_every_file_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&small(ScenarioKind::DistanceSweep, 1, dir.path())).unwrap();
    let m = Manifest::load(&report.manifest_path).unwrap();
    assert_eq!(m, report.manifest);
    assert_eq!(m.kind, ScenarioKind::DistanceSweep);
    assert_eq!(m.seed, 1);
    assert!(m.missing(dir.path()).is_empty());
    assert!(m.verify_hashes(dir.path()).unwrap().is_empty());
    let mut listed: Vec<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
    listed.push(MANIFEST_FILE.into());
    listed.sort();
    assert_eq!(listed, files(dir.path()));
    for a in m.of_kind(ArtifactKind::Spectrum) {
        assert_eq!(a.scan_count, Some(8));
        assert!(a.rbw.unwrap() > 0.0);
        assert!(a.distance_km.is_some());
    }
    assert_eq!(m.of_kind(ArtifactKind::Plot).count(), 2);
    assert_eq!(report.summary["spans"].as_array().unwrap().len(), 2);

    std::fs::write(dir.path().join("btb.csv"), "tampered\n").unwrap();
    assert_eq!(m.verify_hashes(dir.path()).unwrap(), vec!["btb.csv".to_string()]);
    std::fs::remove_file(dir.path().join("fwhm_vs_distance.csv")).unwrap();
    assert_eq!(m.missing(dir.path()).len(), 1);
    assert!(matches!(plot_manifest(&report.manifest_path), Err(Error::MissingArtifacts(_))));
}

#[test]
fn load_comparison_draws_one_figure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ScenarioKind::LoadComparison, 3, dir.path());
    cfg.wdm.load.channel_count = 4;
    let report = run_scenario(&cfg).unwrap();
    let plots: Vec<_> = report.manifest.of_kind(ArtifactKind::Plot).collect();
    assert_eq!(plots.len(), 1);
    assert_eq!(plots[0].path, "load_comparison.svg");
    assert_eq!(files(dir.path()).iter().filter(|f| f.ends_with(".svg")).count(), 1);
    assert_eq!(report.manifest.of_kind(ArtifactKind::Spectrum).count(), 3);
    assert!(dir.path().join("spikes.json").is_file());
    assert!(report.summary["correlated_over_decorrelated"].as_f64().is_some());
}

#[test]
fn replotting_updates_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&small(ScenarioKind::Btb, 4, dir.path())).unwrap();
    std::fs::remove_file(dir.path().join("spectra.svg")).unwrap();
    let made = plot_manifest(&report.manifest_path).unwrap();
    assert_eq!(made.len(), 1);
    assert!(dir.path().join("spectra.svg").is_file());
    let m = Manifest::load(&report.manifest_path).unwrap();
    assert!(m.verify_hashes(dir.path()).unwrap().is_empty());
}

#[test]
fn failed_run_removes_what_it_wrote() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), "x").unwrap();
    std::fs::create_dir(dir.path().join("summary.json")).unwrap();
    let err = run_scenario(&small(ScenarioKind::DistanceSweep, 1, dir.path())).unwrap_err();
    assert!(!err.is_validation(), "{err}");
    assert_eq!(files(dir.path()), vec!["keep.txt".to_string(), "summary.json".to_string()]);
}

#[test]
fn invalid_config_writes_nothing() {
    let parent = tempfile::tempdir().unwrap();
    let dir = parent.path().join("run");
    let mut cfg = small(ScenarioKind::Btb, 1, &dir);
    cfg.scan.scan_count = 0;
    assert!(run_scenario(&cfg).unwrap_err().is_validation());
    assert!(!dir.exists());
}

#[test]
fn config_errors_name_the_field() {
    let cases = [
        ("kind = \"btb\"\nseed = 1\n[scan]\nrbw = -1.0\n", "scan.rbw"),
        ("kind = \"btb\"\nseed = 1\n[noise]\nbase_sop = [0.0, 0.0, 0.0]\n", "noise.base_sop"),
        ("kind = \"btb\"\nseed = 1\n[spans]\nspan_counts = []\n", "spans.span_counts"),
        ("kind = \"btb\"\nseed = 1\n[oracle]\nepsilons = [2.5]\n", "oracle.epsilons"),
        ("kind = \"btb\"\nseed = 1\nworkers = 0\n", "workers"),
    ];
    for (text, field) in cases {
        let err = ScenarioConfig::from_toml(text).unwrap_err();
        assert!(err.is_validation(), "{text}");
        assert!(err.to_string().starts_with(field), "{err}");
    }
    assert!(ScenarioConfig::from_toml("kind = \"btb\"\nseed = 1\ncolour = 3\n").unwrap_err().is_validation());
    let err = ScenarioConfig::from_toml("kind = \"btb\"\nseed = 1\n[oracle]\nvalidity_rotations = 1\n").unwrap_err();
    assert!(err.to_string().starts_with("oracle.validity_rotations"));
    assert!(ScenarioConfig::from_toml("kind = \"sideways\"\nseed = 1\n").is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn relative_output_dir_follows_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "kind = \"btb\"\nseed = 1\noutput_dir = \"res\"\n").unwrap();
    assert_eq!(ScenarioConfig::load(&path).unwrap().output_dir, dir.path().join("res"));
}

#[test]
fn analysis_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&small(ScenarioKind::DistanceSweep, 8, dir.path())).unwrap();
    let rows = analyze_dir(dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    for (row, s) in rows.iter().zip(report.summary["spans"].as_array().unwrap()) {
        let fwhm = s["fwhm_hz"].as_f64().unwrap();
        assert!((row.fwhm_hz / fwhm - 1.0).abs() < 1e-6, "{} vs {fwhm}", row.fwhm_hz);
    }
    let m = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(m.find(ArtifactKind::Report, "analysis").is_some());
    assert!(m.verify_hashes(dir.path()).unwrap().is_empty());
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest {
        kind: ScenarioKind::Btb,
        seed: 0,
        carrier_hz: 27.1e6,
        plot_half_span_hz: 5e6,
        artifacts: vec![],
    };
    let path = m.save(dir.path()).unwrap();
    assert!(plot_manifest(&path).is_err());
    assert!(analyze_dir(dir.path()).is_err());
    assert!(plot_manifest(&dir.path().join("absent.json")).is_err());
}
