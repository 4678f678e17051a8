use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn slipflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slipflow")).args(args).output().expect("binary runs")
}

fn run_config(dir: &Path, sub: &str, cfg: &Value, out: &str, extra: &[&str]) -> Output {
    let path = dir.join(format!("{out}.json"));
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    let out = dir.join(out);
    let mut args = vec![sub, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    slipflow(&args)
}

fn summary(dir: &Path, out: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(out).join("summary.json")).unwrap()).unwrap()
}

fn criterion(s: &Value, name: &str) -> f64 {
    s["criteria"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()["value"].as_f64().unwrap()
}

fn halfspace_cfg() -> Value {
    json!({
        "subcommand": "halfspace-verify",
        "seed": 3,
        "sizes": [16, 32],
        "tolerances": {"rel_l2_error": 1e-6, "divergence": 1e-8, "normal_trace": 1e-8, "slip": 1e-7}
    })
}

fn rough_cfg(seed: u64) -> Value {
    json!({
        "subcommand": "rough-solve",
        "seed": seed,
        "roughness": 0.05,
        "alpha": [0.0, 1.0],
        "sizes": [32],
        "forcing": "random",
        "picard_tol": 1e-10,
        "max_sweeps": 80,
        "tolerances": {"max_contraction": 0.5, "max_residual": 1e-6}
    })
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn halfspace_fixture_passes_and_emits_error_table() {
    let dir = TempDir::new().unwrap();
    let o = run_config(dir.path(), "halfspace-verify", &halfspace_cfg(), "hs", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("hs/tables/errors.csv")).unwrap();
    assert!(table.starts_with("n,rel_l2_error,"));
    assert_eq!(table.lines().count(), 3);
    let s = summary(dir.path(), "hs");
    assert!(criterion(&s, "rel_l2_error") < 1e-6);
    assert!(dir.path().join("hs/fields/u.bin").is_file());
    assert_eq!(fs::read_to_string(dir.path().join("hs/sweeps.jsonl")).unwrap(), "");
}

#[test]
fn every_configured_tolerance_is_reported() {
    let dir = TempDir::new().unwrap();
    run_config(dir.path(), "halfspace-verify", &halfspace_cfg(), "hs", &[]);
    let s = summary(dir.path(), "hs");
    for name in ["rel_l2_error", "divergence", "normal_trace", "slip"] {
        let c = s["criteria"].as_array().unwrap().iter().find(|c| c["name"] == name);
        assert!(c.is_some_and(|c| c["pass"].is_boolean()), "{name} missing");
    }
}

#[test]
fn right_angle_wedge_has_zero_exponent() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "subcommand": "sharpness",
        "seed": 1,
        "thetas": [PI / 2.0],
        "ps": [2.0],
        "tolerances": {"exponent_abs": 0.02, "exponent_rel": 0.05}
    });
    let o = run_config(dir.path(), "sharpness", &cfg, "sh", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sh/tables/sharpness.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let exponent: f64 = row[2].parse().unwrap();
    assert!(exponent.abs() <= 0.02, "{exponent}");
}

#[test]
fn malformed_configs_exit_2_without_artifacts() {
    let dir = TempDir::new().unwrap();
    let mut cases: Vec<(&str, Value)> = Vec::new();
    let mut unknown = halfspace_cfg();
    unknown["tolerance"] = json!(1.0);
    cases.push(("unknown field", unknown));
    let mut no_seed = halfspace_cfg();
    no_seed.as_object_mut().unwrap().remove("seed");
    cases.push(("missing seed", no_seed));
    let mut no_tol = halfspace_cfg();
    no_tol["tolerances"].as_object_mut().unwrap().remove("slip");
    cases.push(("missing tolerance", no_tol));
    let mut bad_size = halfspace_cfg();
    bad_size["sizes"] = json!([24]);
    cases.push(("non power of two", bad_size));
    let mut missing_input = halfspace_cfg();
    missing_input["tolerances"].as_object_mut().unwrap().remove("rel_l2_error");
    missing_input["inputs"] = json!({"h": "does/not/exist"});
    cases.push(("missing input", missing_input));
    cases.push(("wrong subcommand", rough_cfg(1)));
    for (i, (what, cfg)) in cases.iter().enumerate() {
        let out = format!("bad{i}");
        let o = run_config(dir.path(), "halfspace-verify", cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{what}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty(), "{what}");
        assert!(!dir.path().join(&out).exists(), "{what} left artifacts");
    }
    fs::write(dir.path().join("junk.json"), "{ not json").unwrap();
    let out = dir.path().join("junk");
    let o = slipflow(&["norms", "--config", dir.path().join("junk.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn tolerance_failure_exits_1_and_names_the_criterion() {
    let dir = TempDir::new().unwrap();
    let mut cfg = halfspace_cfg();
    cfg["tolerances"]["rel_l2_error"] = json!(1e-30);
    let o = run_config(dir.path(), "halfspace-verify", &cfg, "hs", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rel_l2_error"));
    assert_eq!(summary(dir.path(), "hs")["passed"], json!(false));
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = run_config(dir.path(), "rough-solve", &rough_cfg(7), out, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert!(a.contains_key("sweeps.jsonl") && a.contains_key("tables/sweeps.csv"));
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    run_config(dir.path(), "rough-solve", &rough_cfg(7), "one", &["--threads", "1"]);
    run_config(dir.path(), "rough-solve", &rough_cfg(7), "four", &["--threads", "4"]);
    assert_eq!(tree(&dir.path().join("one")), tree(&dir.path().join("four")));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    run_config(dir.path(), "rough-solve", &rough_cfg(7), "cfg", &[]);
    run_config(dir.path(), "rough-solve", &rough_cfg(7), "flag", &["--seed", "8"]);
    run_config(dir.path(), "rough-solve", &rough_cfg(8), "other", &[]);
    assert_eq!(summary(dir.path(), "flag")["seed"], json!(8));
    let read = |d: &str| fs::read(dir.path().join(d).join("sweeps.jsonl")).unwrap();
    assert_ne!(read("cfg"), read("flag"));
    assert_eq!(read("flag"), read("other"));
}

#[test]
fn field_file_inputs_are_solved() {
    let dir = TempDir::new().unwrap();
    let (prob, _) = slipflow::fixtures::halfspace_manufactured(32).unwrap();
    let inputs = dir.path().join("inputs");
    fs::create_dir(&inputs).unwrap();
    prob.forcing.write(&inputs.join("f")).unwrap();
    prob.h.write(&inputs.join("h")).unwrap();
    prob.g_normal.write(&inputs.join("gn")).unwrap();
    prob.g_tangential.write(&inputs.join("gt")).unwrap();
    // Relative to the config file.
    let cfg = json!({
        "subcommand": "halfspace-verify",
        "seed": 0,
        "inputs": {"forcing": "inputs/f", "h": "inputs/h", "g_normal": "inputs/gn", "g_tangential": "inputs/gt"},
        "tolerances": {"divergence": 1e-8, "normal_trace": 1e-8, "slip": 1e-7}
    });
    let o = run_config(dir.path(), "halfspace-verify", &cfg, "files", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path(), "files");
    assert_eq!(s["criteria"].as_array().unwrap().len(), 3);
}

#[test]
fn schema_is_published() {
    let o = slipflow(&["schema"]);
    assert_eq!(o.status.code(), Some(0));
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = schema.to_string();
    for sub in ["halfspace-verify", "rough-solve", "nondiv-solve", "neumann-verify", "sharpness", "norms"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn example_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let cfg: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        // Sending the config to a different subcommand exercises validation without running it.
        let sub = cfg["subcommand"].as_str().unwrap();
        let other = if sub == "norms" { "sharpness" } else { "norms" };
        let o = slipflow(&[other, "--config", p.to_str().unwrap(), "--out", "/nonexistent/never-written"]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(&format!("config is for `{sub}`")), "{}: {err}", p.display());
        n += 1;
    }
    assert!(n >= 6);
}
