use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chainfit::pdb;
use chainfit_core::toy::{helix_bundle_dimer, rotate_chains, ToyConfig};
use chainfit_core::Vec3;
use serde_json::Value;
use tempfile::TempDir;

fn chainfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainfit"))
        .args(args)
        .env_remove("CHAINFIT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = chainfit(args);
    assert!(
        out.status.success(),
        "chainfit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn toy_pdbs(dir: &Path) -> (PathBuf, PathBuf) {
    let a = helix_bundle_dimer(&ToyConfig::small()).unwrap();
    let b = rotate_chains(&a, &Vec3::y(), &[10.0, -10.0]).unwrap();
    let (pa, pb) = (dir.join("a.pdb"), dir.join("b.pdb"));
    pdb::save_structure(&pa, &a).unwrap();
    pdb::save_structure(&pb, &b).unwrap();
    (pa, pb)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: [&str; 6] = ["--image-size", "24", "--pixel-size", "1.5", "--counts", "6,2,4"];

fn simulate(pdb: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--pdb", s(pdb), "--out", s(out), "--snr", "0"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    let recipe = out.with_extension("recipe.json");
    fs::write(&recipe, r#"{ "num_modes": 4 }"#).unwrap();
    args.extend_from_slice(&["--recipe", s(&recipe)]);
    ok(&args);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = toy_pdbs(tmp.path());
    let d = tmp.path();

    ok(&["nma", "--pdb", s(&a), "--k", "4", "--out", s(&d.join("nma"))]);
    for f in ["bases.json", "basis_chain0.bin", "basis_chain1.bin", "manifest.json"] {
        assert!(d.join("nma").join(f).exists(), "{f}");
    }
    let bases = json(&d.join("nma/bases.json"));
    assert_eq!(bases["cumulative_fluctuation"].as_array().unwrap().len(), 2);

    simulate(&a, &d.join("sim"), &[]);
    for split in ["train", "val", "test"] {
        let meta = json(&d.join("sim").join(split).join("meta.json"));
        assert_eq!(meta["image_size"], 24);
    }
    let report = d.join("fit.json");
    ok(&[
        "fit", "--stack", s(&d.join("sim/test")), "--pdb", s(&a), "--mode", "cRT", "--k", "4", "--iterations", "30",
        "--out", s(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["entries"].as_array().unwrap().len(), 4);
    assert_eq!(r["failures"], 0);
    assert!(r["rmsd"]["mean"].as_f64().unwrap().is_finite());
    let manifest = json(&d.join("fit.json.manifest.json"));
    assert_eq!(manifest["subcommand"], "fit");
    let inputs = manifest["inputs"].as_object().unwrap();
    assert!(inputs.keys().any(|k| k.ends_with("a.pdb")));
    assert!(inputs.keys().any(|k| k.ends_with("images.f32")));
    assert!(inputs.values().all(|v| v.as_str().unwrap().len() == 64));

    let an = d.join("analysis");
    ok(&[
        "analyze", "--report", s(&report), "--pca", "rigid:1", "--pdb", s(&a), "--stack", s(&d.join("sim/test")),
        "--out", s(&an),
    ]);
    for f in [
        "rmsd.csv", "rmsd.svg", "pca_scores.csv", "pca_variance.csv", "pca_traversal.csv", "pca_traversal.pdb",
        "pca.svg", "error_map.csv", "error_histogram.csv", "error_histogram.svg", "analysis.json", "manifest.json",
    ] {
        assert!(an.join(f).exists(), "{f}");
    }
    let traversal = pdb::read_models(&an.join("pca_traversal.pdb")).unwrap();
    assert_eq!(traversal.len(), 3);

    let exported = d.join("fits.pdb");
    ok(&["export-pdb", "--report", s(&report), "--pdb", s(&a), "--limit", "2", "--out", s(&exported)]);
    assert_eq!(pdb::read_models(&exported).unwrap().len(), 2);
}

#[test]
fn morph_stack_records_parameters() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = toy_pdbs(tmp.path());
    let out = tmp.path().join("morph");
    ok(&[
        "morph", "--a", s(&a), "--b", s(&b), "--steps", "5", "--n", "12", "--image-size", "24", "--pixel-size", "1.5",
        "--snr", "-5", "--out", s(&out),
    ]);
    let truth = json(&out.join("truth.json"));
    let params: Vec<f64> = truth["morph_params"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(params.len(), 12);
    assert_eq!(params[0], 0.0);
    assert_eq!(params[4], 1.0);
    assert_eq!(params[5], 0.0);
}

#[test]
fn same_seed_same_bytes_regardless_of_threads() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = toy_pdbs(tmp.path());
    let one = tmp.path().join("one");
    let three = tmp.path().join("three");
    simulate(&a, &one, &["--seed", "9", "--threads", "1"]);
    simulate(&a, &three, &["--seed", "9", "--threads", "3"]);
    for f in ["images.f32", "clean.f32", "poses.json", "truth.json"] {
        assert_eq!(fs::read(one.join("train").join(f)).unwrap(), fs::read(three.join("train").join(f)).unwrap(), "{f}");
    }
    let other = tmp.path().join("other");
    simulate(&a, &other, &["--seed", "10"]);
    assert_ne!(fs::read(one.join("train/images.f32")).unwrap(), fs::read(other.join("train/images.f32")).unwrap());
}

#[test]
fn seed_flag_overrides_environment() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = toy_pdbs(tmp.path());
    let recipe = tmp.path().join("r.json");
    fs::write(&recipe, r#"{ "num_modes": 4, "seed": 1 }"#).unwrap();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let out = tmp.path().join(out);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_chainfit"));
        cmd.args(["simulate", "--pdb", s(&a), "--recipe", s(&recipe), "--out", s(&out)]).args(SMALL);
        cmd.env_remove("CHAINFIT_SEED");
        if let Some(e) = env {
            cmd.env("CHAINFIT_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.output().unwrap().status.success());
        json(&out.join("train/meta.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(run("r", None, None), 1);
    assert_eq!(run("e", Some("5"), None), 5);
    assert_eq!(run("f", Some("5"), Some("6")), 6);
}

#[test]
fn invalid_configuration_exits_1_without_output() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = toy_pdbs(tmp.path());
    let out = tmp.path().join("sim");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{ "gmm": [ { "weight": 0.3, "mean": 0.0, "std": 1.0 } ] }"#).unwrap();
    let o = chainfit(&["simulate", "--pdb", s(&a), "--recipe", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let o = chainfit(&["simulate", "--pdb", s(&a), "--image-size", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let report = tmp.path().join("fit.json");
    let o = chainfit(&["fit", "--stack", s(&out), "--pdb", s(&a), "--step-size", "-1", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!report.exists());

    let o = chainfit(&["fit", "--stack", s(&out), "--pdb", s(&a), "--mode", "cZ", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = toy_pdbs(tmp.path());
    let o = chainfit(&["nma", "--pdb", s(&tmp.path().join("missing.pdb")), "--out", s(&tmp.path().join("n"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.pdb"));

    let garbage = tmp.path().join("garbage.pdb");
    fs::write(&garbage, "ATOM      1  CA  ALA A   1      xx.xxx   0.000   0.000  1.00  0.00           C\n").unwrap();
    let o = chainfit(&["nma", "--pdb", s(&garbage), "--out", s(&tmp.path().join("n"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = chainfit(&["fit", "--stack", s(&tmp.path().join("nostack")), "--pdb", s(&a), "--out", s(&tmp.path().join("f.json"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = chainfit(&["nma", "--pdb", s(&a), "--k", "1000", "--out", s(&tmp.path().join("n"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(chainfit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(chainfit(&["fit"]).status.code(), Some(1));
    assert_eq!(chainfit(&["--help"]).status.code(), Some(0));
    assert_eq!(chainfit(&["--version"]).status.code(), Some(0));
}
