use serde_json::Value;

use qosim::qosim_core::app::enumerate_configurations;
use qosim::qosim_core::reference::{generate_reference_scenario, surveillance135};
use qosim::{parse_scenario, scenario_to_json, FileError};

/// Every id declared anywhere in the document.
fn ids(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            if let Some(Value::String(id)) = m.get("id") {
                out.push(id.clone());
            }
            m.values().for_each(|x| ids(x, out));
        }
        Value::Array(a) => a.iter().for_each(|x| ids(x, out)),
        _ => {}
    }
}

/// Single-field corruptions: each object key renamed, each number replaced by
/// a string, and each reference to an id pointed at an unknown id.
fn corruptions(doc: &Value) -> Vec<(String, Value)> {
    let mut known = Vec::new();
    ids(doc, &mut known);
    let mut out = Vec::new();
    walk(
        doc,
        String::new(),
        &mut |path, node| {
            let mut variants = Vec::new();
            match node {
                Value::Number(_) => variants.push((format!("{path}: number to string"), Value::String("x".into()))),
                Value::String(s) if known.contains(s) && !path.ends_with("/id") => {
                    variants.push((format!("{path}: dangling reference"), Value::String(format!("{s}__missing"))))
                }
                Value::Object(m) => {
                    for k in m.keys() {
                        let mut renamed = m.clone();
                        let val = renamed.remove(k).unwrap();
                        renamed.insert(format!("{k}__typo"), val);
                        variants.push((format!("{path}/{k}: key renamed"), Value::Object(renamed)));
                    }
                }
                _ => {}
            }
            variants
        },
        doc,
        &mut out,
    );
    out
}

fn walk(
    node: &Value,
    path: String,
    f: &mut impl FnMut(&str, &Value) -> Vec<(String, Value)>,
    root: &Value,
    out: &mut Vec<(String, Value)>,
) {
    for (label, replacement) in f(&path, node) {
        let mut doc = root.clone();
        *doc.pointer_mut(&path).unwrap() = replacement;
        out.push((label, doc));
    }
    match node {
        Value::Object(m) => {
            for (k, v) in m {
                walk(v, format!("{path}/{}", k.replace('~', "~0").replace('/', "~1")), f, root, out);
            }
        }
        Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                walk(v, format!("{path}/{i}"), f, root, out);
            }
        }
        _ => {}
    }
}

fn reference_doc() -> Value {
    serde_json::from_str(&scenario_to_json(&surveillance135())).unwrap()
}

#[test]
fn every_single_field_corruption_is_rejected() {
    let all = corruptions(&reference_doc());
    assert!(all.len() > 300);
    for (label, doc) in &all {
        let err = parse_scenario(&doc.to_string()).err();
        assert!(err.is_some(), "accepted corruption {label}");
        if label.ends_with("dangling reference") {
            assert!(matches!(err, Some(FileError::Reference { .. })), "{label}: {err:?}");
        }
        if label.ends_with("number to string") {
            assert!(matches!(err, Some(FileError::Syntax { .. })), "{label}: {err:?}");
        }
    }
}

#[test]
fn reference_files_round_trip() {
    for name in ["surveillance135", "surveillance135-oscillating", "toy6", "scaling(3,3,2)"] {
        let sc = generate_reference_scenario(name).unwrap();
        let text = scenario_to_json(&sc);
        let parsed = parse_scenario(&text).unwrap();
        let again = parse_scenario(&scenario_to_json(&parsed)).unwrap();
        assert_eq!(parsed, again, "{name}");
        assert_eq!(scenario_to_json(&parsed), scenario_to_json(&again));
    }
}

#[test]
fn surveillance_file_has_135_configurations() {
    let sc = parse_scenario(&scenario_to_json(&surveillance135())).unwrap();
    let (app, _) = sc.compile().unwrap();
    assert_eq!(enumerate_configurations(&app).unwrap().count(), 135);
}

#[test]
fn unknown_station_in_default_is_a_reference_error() {
    let mut doc = reference_doc();
    doc["default_configuration"]["placement"]["processing"]["station"] = Value::String("S9".into());
    match parse_scenario(&doc.to_string()) {
        Err(FileError::Reference { kind, id, .. }) => {
            assert_eq!(kind, "station");
            assert_eq!(id, "S9");
        }
        other => panic!("expected a reference error, got {other:?}"),
    }
}

#[test]
fn syntax_errors_carry_a_location() {
    let text = scenario_to_json(&surveillance135());
    let broken = text.replacen("\"groups\": [", "\"groups\": [,", 1);
    let line = broken.lines().position(|l| l.contains("\"groups\": [,")).unwrap() + 1;
    match parse_scenario(&broken) {
        Err(FileError::Syntax { line: l, column, .. }) => {
            assert_eq!(l, line);
            assert!(column > 0);
        }
        other => panic!("expected a syntax error, got {other:?}"),
    }
}

#[test]
fn violated_invariants_are_constraint_errors() {
    let mut doc = reference_doc();
    doc["parameters"]["horizon_ms"] = Value::from(0);
    assert!(matches!(parse_scenario(&doc.to_string()), Err(FileError::Constraint(_))));

    let mut doc = reference_doc();
    doc["application"]["stations"][1]["capacity"] = Value::from(-5.0);
    assert!(matches!(parse_scenario(&doc.to_string()), Err(FileError::Constraint(_))));
}

#[test]
fn omitted_routes_are_filled() {
    let mut doc = reference_doc();
    doc["default_configuration"]["routes"] = Value::Object(Default::default());
    let sc = parse_scenario(&doc.to_string()).unwrap();
    let full = parse_scenario(&reference_doc().to_string()).unwrap();
    assert_eq!(sc.default_configuration, full.default_configuration);
}
