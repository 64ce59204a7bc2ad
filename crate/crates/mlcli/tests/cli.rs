use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_microlocal"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn exit_codes() {
    let dir = scratch("exit_codes");
    assert_eq!(code(bin().args(["classify", "--out"]).arg(dir.join("ok"))), 0);

    let catalog = dir.join("catalog.json");
    fs::write(&catalog, r#"[{"label":"mislabelled","order":0,"n":1,"expr":"(var xi 0)"}]"#).unwrap();
    let mut fail = bin();
    fail.args(["symbol-order", "--symbol", "mislabelled", "--catalog"]).arg(&catalog).arg("--out").arg(dir.join("fail"));
    assert_eq!(code(&mut fail), 1);

    assert_eq!(code(bin().args(["wavefront", "--grid", "100", "--out"]).arg(dir.join("bad"))), 2);
    assert_eq!(code(bin().args(["symbol-order", "--symbol", "nope", "--out"]).arg(dir.join("bad"))), 2);
    assert_eq!(code(bin().args(["no-such-command"])), 2);
}

#[test]
fn runs_are_byte_identical() {
    let dir = scratch("determinism");
    for run in ["a", "b"] {
        let status = bin().args(["propagate", "--fixture", "delta", "--times", "0.5,1.0", "--seed", "3", "--out"]).arg(dir.join(run)).status().unwrap();
        assert!(status.success());
    }
    assert_eq!(read_all(&dir.join("a")), read_all(&dir.join("b")));
}

#[test]
fn scenario_file_and_flags_agree() {
    let dir = scratch("scenario_file");
    let file = dir.join("s.json");
    fs::write(&file, r#"{"kind":"compose","inputs":{"symbols":["xi","x"]},"config":{"trunc":3}}"#).unwrap();
    assert_eq!(code(bin().arg("run").arg("--scenario").arg(&file).arg("--out").arg(dir.join("file"))), 0);
    assert_eq!(code(bin().args(["compose", "--symbol", "xi", "--symbol", "x", "--trunc", "3", "--out"]).arg(dir.join("flags"))), 0);
    assert_eq!(read_all(&dir.join("file")), read_all(&dir.join("flags")));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("file/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
}

#[test]
fn listings() {
    let out = bin().args(["list", "symbols"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("variable_speed"));
    let out = bin().args(["list", "fixtures"]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("transport_spacetime"));
}
