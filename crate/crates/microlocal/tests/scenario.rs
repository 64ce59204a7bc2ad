use microlocal::scenario::{build_bundle, Kind, ScenarioSpec};
use microlocal::Error;

fn spec(json: &str) -> ScenarioSpec {
    ScenarioSpec::from_json(json).unwrap()
}

fn validation_path(json: &str) -> String {
    match build_bundle(&spec(json)) {
        Err(Error::Validation { path, .. }) => path,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn invalid_fields_report_their_path() {
    assert_eq!(validation_path(r#"{"kind":"symbol-order","inputs":{"symbols":["nope"]}}"#), "inputs.symbols[0]");
    assert_eq!(validation_path(r#"{"kind":"wavefront","inputs":{"fixtures":["delta","bogus"]}}"#), "inputs.fixtures[1]");
    assert_eq!(validation_path(r#"{"kind":"wavefront","config":{"grid":100}}"#), "config.grid");
    assert_eq!(validation_path(r#"{"kind":"wavefront","config":{"cells":7}}"#), "config.cells");
    assert_eq!(validation_path(r#"{"kind":"classify","config":{"eps":"1:3"}}"#), "config.eps");
    assert_eq!(validation_path(r#"{"kind":"classify","config":{"eps":"x"}}"#), "config.eps");
    assert_eq!(validation_path(r#"{"kind":"propagate","config":{"times":[1.0,0.5]}}"#), "config.times");
    assert_eq!(validation_path(r#"{"kind":"flow","config":{"n":2,"x0":[1.0]}}"#), "config.x0");
    assert_eq!(validation_path(r#"{"kind":"compose","inputs":{"symbols":["xi"]}}"#), "inputs.symbols");
}

#[test]
fn unknown_fields_are_rejected() {
    assert!(ScenarioSpec::from_json(r#"{"kind":"flow","extra":1}"#).is_err());
    assert!(ScenarioSpec::from_json(r#"{"kind":"flow","config":{"gird":64}}"#).is_err());
    assert!(ScenarioSpec::from_json(r#"{"kind":"flow","config":{"wavefront":{"tau":1}}}"#).is_err());
    assert!(ScenarioSpec::from_json(r#"{"kind":"no-such-kind"}"#).is_err());
}

#[test]
fn scenario_round_trips_through_json() {
    let s = spec(r#"{"kind":"propagate","inputs":{"fixtures":["delta"]},"config":{"times":[0.25,1.0],"width":3.0},"seed":4}"#);
    let back = ScenarioSpec::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(s, back);
}

#[test]
fn bundles_are_deterministic_and_self_describing() {
    for s in [
        spec(r#"{"kind":"classify"}"#),
        spec(r#"{"kind":"symbol-order","inputs":{"symbols":["xi_sq","bracket","x_xi"]}}"#),
        spec(r#"{"kind":"compose","inputs":{"symbols":["xi","x"]}}"#),
        spec(r#"{"kind":"wavefront","inputs":{"fixtures":["delta","heaviside"]}}"#),
        spec(r#"{"kind":"flow","config":{"times":[0.5,1.0]}}"#),
    ] {
        let a = build_bundle(&s).unwrap();
        let b = build_bundle(&s).unwrap();
        assert_eq!(a.files, b.files, "{:?}", s.kind);
        assert!(a.pass, "{:?}: {}", s.kind, a.summary);
        let manifest: serde_json::Value = serde_json::from_slice(&a.files["manifest.json"]).unwrap();
        assert!(manifest["thresholds"]["wavefront"]["tau_dir"].is_number());
        assert!(manifest.get("out_dir").is_none());
    }
}

#[test]
fn out_dir_does_not_affect_the_bundle() {
    let mut s = ScenarioSpec::new(Kind::Adjoint);
    s.inputs.symbols = vec!["x_xi".into()];
    let a = build_bundle(&s).unwrap();
    s.out_dir = Some("elsewhere".into());
    assert_eq!(a.files, build_bundle(&s).unwrap().files);
}

#[test]
fn ginf_flags_fast_lorentzian() {
    let b = build_bundle(&spec(r#"{"kind":"ginf"}"#)).unwrap();
    assert!(b.pass);
    assert_eq!(b.summary["results"]["lorentzian_fast"]["verdict"], false);
    assert_eq!(b.summary["results"]["lorentzian_slow"]["verdict"], true);
}

#[test]
fn parametrix_of_elliptic_symbol_passes() {
    let b = build_bundle(&spec(r#"{"kind":"parametrix","inputs":{"symbols":["one_plus_xi_sq"]},"config":{"trunc":3}}"#)).unwrap();
    assert!(b.pass, "{}", b.summary);
    let b = build_bundle(&spec(r#"{"kind":"parametrix","inputs":{"symbols":["x"]}}"#));
    assert!(b.is_err());
}
