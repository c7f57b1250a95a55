use std::fs;
use std::path::{Path, PathBuf};

use dualrl_core::harness::config::{Component, SeedStreams};
use dualrl_core::harness::{apply_overrides, emit_plot_data, run, tidy_csv, EnvSpec, ExperimentConfig, ExperimentKind};
use dualrl_core::Error;
use rand::Rng;

fn config(kind: ExperimentKind, dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind);
    c.output_dir = dir.to_path_buf();
    c
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

fn small(kind: ExperimentKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind);
    c.seeds = vec![0, 1];
    c.duality.instances = 2;
    c.maximizer.n_samples = 2000;
    c.maximizer.sup_band = [1.5, 2.0];
    c.recoil.config.iterations = 300;
    c.reward.config.iterations = 300;
    c.reductions.suite.tuples = 5;
    c
}

#[test]
fn repeated_runs_write_identical_tables() {
    for kind in ExperimentKind::ALL {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut c = small(kind);
        c.output_dir = a.path().into();
        let m1 = run(&c).unwrap();
        c.output_dir = b.path().into();
        let m2 = run(&c).unwrap();
        assert!(m1.failure.is_none(), "{kind}: {:?}", m1.failure);
        assert_eq!(m1.checks, m2.checks, "{kind}");
        let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
        assert_eq!(fa.len(), fb.len());
        assert!(fa.len() >= 2, "{kind}: {fa:?}");
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{kind}: {}", x.display());
        }
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["pass"], serde_json::json!(m1.pass));
        assert_eq!(manifest["config"]["experiment"], serde_json::json!(kind.name()));
    }
}

#[test]
fn plot_rows_are_seeds_times_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(ExperimentKind::Maximizer);
    c.output_dir = dir.path().into();
    c.seeds = vec![0, 1, 2];
    let m = run(&c).unwrap();
    assert!(m.pass, "{:?}", m.failed_checks().collect::<Vec<_>>());
    let rows = tidy_csv(&dir.path().join("plot.csv")).unwrap();
    // three divergences over seven λ per seed, plus the two two-point rows
    assert_eq!(rows.len(), 3 * 3 * 7 + 2);
    assert!(rows.iter().all(|r| r.experiment == "maximizer"));
}

#[test]
fn plot_tidying_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        output_dir: dir.path().into(),
        ..small(ExperimentKind::Recoil)
    };
    run(&c).unwrap();
    let plot = dir.path().join("plot.csv");
    let again = dir.path().join("again.csv");
    let n = emit_plot_data(std::slice::from_ref(&plot), &again).unwrap();
    assert_eq!(n, tidy_csv(&plot).unwrap().len());
    assert_eq!(fs::read(&plot).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn empty_run_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plot.csv");
    assert_eq!(emit_plot_data(&[], &out).unwrap(), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "experiment,method,x,y,seed\n");
}

#[test]
fn unknown_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(matches!(tidy_csv(&p), Err(Error::Invalid(_))));
}

#[test]
fn parse_errors_point_at_the_field() {
    let err =
        ExperimentConfig::from_toml_str("experiment = \"ratio\"\n\n[ratio]\nbeta = 0.9\nbogus = 1\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bogus") && msg.contains("line 5"), "{msg}");
    let err = ExperimentConfig::from_toml_str("experiment = \"nope\"\n").unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
    let err = ExperimentConfig::from_toml_str("[env]\nkind = \"star\"\ngamma = \"x\"\n").unwrap_err();
    assert!(err.to_string().contains("gamma"), "{err}");
}

#[test]
fn validation_rejects_bad_configs() {
    let mut c = ExperimentConfig::new(ExperimentKind::Ratio);
    c.seeds.clear();
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c =
        ExperimentConfig::from_toml_str("experiment = \"maximizer\"\ndivergences = [\"squared_hellinger\"]\n").unwrap();
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = ExperimentConfig::from_toml_str("divergences = [\"pearson_chi2\"]\n").unwrap();
    assert!(c.validate().is_err());
    let text = "experiment = \"recoil\"\n[env]\nkind = \"file\"\npath = \"/nonexistent/mdp.json\"\n";
    let c = ExperimentConfig::from_toml_str(text).unwrap();
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn mdp_file_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = EnvSpec::Random {
        seed: 4,
        n_states: 4,
        n_actions: 2,
        gamma: 0.9,
        concentration: 1.0,
    }
    .build()
    .unwrap();
    let path = dir.path().join("mdp.json");
    fs::write(&path, serde_json::to_string(&mdp).unwrap()).unwrap();
    let back = EnvSpec::File { path }.build().unwrap();
    assert_eq!(back, mdp);
}

#[test]
fn driver_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(ExperimentKind::Fdvl, dir.path());
    c.fdvl.grid_n = 0;
    let m = run(&c).unwrap();
    assert!(!m.pass);
    assert!(m.failure.is_some());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn failing_check_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(ExperimentKind::Fdvl, dir.path());
    c.fdvl.adversarial_rewards = vec![0.0, 1.0];
    let m = run(&c).unwrap();
    assert!(m.failure.is_none());
    assert!(!m.pass);
    assert_eq!(m.failed_checks().count(), 1);
}

#[test]
fn overrides_and_mismatch() {
    let c = ExperimentConfig::new(ExperimentKind::Ratio);
    let c2 = apply_overrides(c.clone(), ExperimentKind::Ratio, Some("elsewhere".into()), Some(3)).unwrap();
    assert_eq!(c2.seeds, vec![0, 1, 2]);
    assert_eq!(c2.output_dir, PathBuf::from("elsewhere"));
    assert!(matches!(
        apply_overrides(c, ExperimentKind::Duality, None, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn seed_streams_are_independent_and_stable() {
    let s = SeedStreams::new(42);
    let draw = |seed, comp| -> Vec<u64> {
        let mut r = s.rng(seed, comp);
        (0..4).map(|_| r.random()).collect()
    };
    assert_eq!(draw(0, Component::Env), draw(0, Component::Env));
    assert_ne!(draw(0, Component::Env), draw(0, Component::Policy));
    assert_ne!(draw(0, Component::Env), draw(1, Component::Env));
    assert_ne!(draw(0, Component::Env), {
        let mut r = SeedStreams::new(43).rng(0, Component::Env);
        (0..4).map(|_| r.random()).collect::<Vec<u64>>()
    });
}
