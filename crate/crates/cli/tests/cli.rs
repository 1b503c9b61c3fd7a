use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use nmr_grape_cli::commands::main_with;
use nmr_grape_cli::config::Config;
use nmr_grape_cli::CliError;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nmrgrape").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tce_system() -> Value {
    let text = fs::read_to_string(root().join("configs/tce_comp.json")).unwrap();
    serde_json::from_str::<Value>(&text).unwrap()["system"].clone()
}

const SMALL: &str = r#"{
    "system": {
        "spins": [
            {"name": "A", "channel": "X", "offset_hz": 300.0, "t2star_s": 0.2},
            {"name": "B", "channel": "X", "offset_hz": -300.0, "t2star_s": 0.2}
        ],
        "couplings": [{"a": "A", "b": "B", "j_hz": 60.0}],
        "channels": [{"name": "X", "max_rf_hz": 1000.0}]
    },
    "problem": {
        "initial": "Iz(A)",
        "target": {"expression": "Iz(B)"},
        "duration_s": 0.004,
        "steps": 40,
        "ensemble_scales": [0.97, 1.03]
    },
    "optimizer": {"nominal": {"max_iters": 40}, "robust": {"max_iters": 10}}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn evaluate_prints_unit_fidelity_for_oracle_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut system = tce_system();
    for ch in system["channels"].as_array_mut().unwrap() {
        ch["max_rf_hz"] = 5e6.into();
    }
    let config = serde_json::json!({
        "system": system,
        "problem": {
            "initial": "-0.5*Iz(C1)+0.5*Iz(C2)+0.5*Iz(H)-2*Iz(C1)*Iz(C2)*Iz(H)",
            "target": {"gate": "comp"},
            "duration_s": 1e-7,
            "steps": 1
        }
    });
    let config = write(dir.path(), "c.json", &config.to_string());
    let pulse = "#format_version 1\n#channels C,H\n#steps 1\n#dt_us 0.1\n#max_rf_hz 5000000,5000000\n5000000,0,5000000,0\n";
    let pulse = write(dir.path(), "fixture.pulse", pulse);
    let (code, out, err) = run(&["evaluate", p(&config), p(&pulse)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "1.000000\n");
}

#[test]
fn reference_spectrum_gives_unit_polarizations() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("ref");
    let config = root().join("configs/tce_comp.json");
    let (code, out, err) = run(&["spectrum", p(&config), "--readout", "C", "--out", p(&prefix)]);
    assert_eq!(code, 0, "{err}");
    let mut seen = 0;
    for line in out.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let pol: f64 = fields[3].parse().unwrap();
        assert!((pol - 1.0).abs() <= 0.02, "{line}");
        seen += 1;
    }
    assert_eq!(seen, 2);
    assert_eq!(files_in(dir.path()), ["ref_fid.csv", "ref_polarization.csv", "ref_spectrum.csv"]);
    let fid = fs::read_to_string(prefix.with_file_name("ref_fid.csv")).unwrap();
    assert!(fid.starts_with("t_s,real,imag\n"));
    assert_eq!(fid.lines().count(), 8193);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["evaluate", p(&missing), p(&missing)]).0, 3);

    let bad = write(dir.path(), "bad.json", &SMALL.replace("\"steps\": 40", "\"steps\": -4"));
    let (code, _, err) = run(&["evaluate", p(&bad), p(&missing)]);
    assert_eq!(code, 1);
    assert!(err.contains("problem.steps"), "{err}");

    let config = write(dir.path(), "c.json", SMALL);
    let pulse = write(dir.path(), "short.pulse", "#format_version 1\n#channels X\n#steps 2\n#dt_us 100\n#max_rf_hz 1000\n10,0\n");
    let (code, _, err) = run(&["evaluate", p(&config), p(&pulse)]);
    assert_eq!(code, 1);
    assert!(err.contains("line 7"), "{err}");

    assert_eq!(run(&["evaluate"]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);

    let out = dir.path().join("d.pulse");
    let report = dir.path().join("d.json");
    let (code, _, err) = run(&[
        "design", p(&config), "--seeds", "1", "--out", p(&out), "--report", p(&report), "--min-fidelity", "1.5",
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(out.exists() && report.exists());
}

#[test]
fn failed_commands_leave_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let before = files_in(dir.path());

    let prefix = dir.path().join("s");
    let (code, _, _) = run(&["spectrum", p(&config), "--readout", "Q", "--out", p(&prefix)]);
    assert_eq!(code, 1);

    let blocked = dir.path().join("no/such/dir/pulse.txt");
    let report = dir.path().join("report.json");
    let (code, _, _) = run(&["design", p(&config), "--seeds", "1", "--out", p(&blocked), "--report", p(&report)]);
    assert_eq!(code, 3);
    assert_eq!(files_in(dir.path()), before);
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let pulse = dir.path().join(format!("{tag}.pulse"));
        let report = dir.path().join(format!("{tag}.json"));
        let (code, out, _) = run(&["design", p(&config), "--seeds", "3,4", "--out", p(&pulse), "--report", p(&report), "--min-fidelity", "0"]);
        assert_eq!(code, 0);
        let prefix = dir.path().join(format!("{tag}_spec"));
        let (code, _, err) = run(&["spectrum", p(&config), p(&pulse), "--readout", "X", "--out", p(&prefix)]);
        assert_eq!(code, 0, "{err}");
        let spectrum = fs::read(prefix.with_file_name(format!("{tag}_spec_spectrum.csv"))).unwrap();
        outputs.push((out, fs::read(&pulse).unwrap(), fs::read(&report).unwrap(), spectrum));
    }
    assert!(outputs[0] == outputs[1]);

    let (code, out, _) = run(&["convert", p(&dir.path().join("a.pulse")), "--component", "y"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 41);
}

/// Paths of every leaf value, in the dotted form used by config errors.
fn leaves(value: &Value, path: String, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let next = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                leaves(v, next, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                leaves(v, format!("{path}[{i}]"), out);
            }
        }
        _ => out.push((path, value.clone())),
    }
}

fn set(root: &mut Value, path: &str, replacement: Value) {
    let mut node = root;
    for part in path.split('.') {
        let (key, indices) = part.split_once('[').map_or((part, ""), |(k, rest)| (k, rest));
        node = &mut node[key];
        for idx in indices.split('[').filter(|s| !s.is_empty()) {
            node = &mut node[idx.trim_end_matches(']').parse::<usize>().unwrap()];
        }
    }
    *node = replacement;
}

fn rejection(text: &str) -> String {
    match Config::from_json(text) {
        Err(CliError::Validation(m)) => m,
        other => panic!("accepted malformed config: {other:?}"),
    }
}

#[test]
fn malformed_fields_are_named_with_location() {
    let mut base: Value = serde_json::from_str(SMALL).unwrap();
    base["system"] = tce_system();
    base["problem"]["initial"] = "Iz(C1)".into();
    base["problem"]["target"] = serde_json::json!({"expression": "Iz(C2)"});
    base["problem"]["ensemble"] = serde_json::json!([
        {"rf_scale": [1.0, 1.0], "weight": 0.5, "carrier_offset_hz": [10.0, 0.0]},
        {"rf_scale": [0.9, 1.1], "weight": 0.5}
    ]);
    base["problem"].as_object_mut().unwrap().remove("ensemble_scales");
    base["acquisition"] = serde_json::json!({"dwell_s": 2e-4, "points": 1024});
    Config::from_json(&serde_json::to_string_pretty(&base).unwrap()).unwrap();

    let mut all = Vec::new();
    leaves(&base, String::new(), &mut all);
    assert!(all.len() > 40);
    for (path, value) in &all {
        let wrong: Value = match value {
            Value::String(_) => 7.into(),
            _ => "seven".into(),
        };
        let mut broken = base.clone();
        set(&mut broken, path, wrong);
        let m = rejection(&serde_json::to_string_pretty(&broken).unwrap());
        assert!(m.contains(&format!("`{path}`")) && m.contains("line"), "{path}: {m}");
    }

    for object in ["system", "problem", "optimizer.nominal", "acquisition"] {
        let mut broken = base.clone();
        let mut node = &mut broken;
        for part in object.split('.') {
            node = &mut node[part];
        }
        node.as_object_mut().unwrap().insert("bogus_key".into(), 1.into());
        let m = rejection(&serde_json::to_string_pretty(&broken).unwrap());
        assert!(m.contains(object) && m.contains("bogus_key") && m.contains("line"), "{object}: {m}");
    }
}
