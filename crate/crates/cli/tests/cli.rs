use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairaudit::classfile::save_class;
use fairaudit::harness::generate::gen_shattered;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairaudit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn shattered4(dir: &Path) -> PathBuf {
    let path = dir.join("shattered4.json");
    save_class(&gen_shattered(4).unwrap().0, &path).unwrap();
    path
}

#[test]
fn cost_of_shattered_four() {
    let dir = tempfile::tempdir().unwrap();
    let class = shattered4(dir.path());
    let o = run(&["cost", "--class", class.to_str().unwrap(), "--eps", "0.25"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("Cost(H) = 2"), "{out}");
    assert!(out.contains("seed = "), "{out}");
}

#[test]
fn minimax_with_wide_tolerance_asks_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let class = shattered4(dir.path());
    let o = run(&["audit", "--method", "minimax", "--class", class.to_str().unwrap(), "--target", "3", "--eps", "0.5"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("queries = 0"), "{}", stdout(&o));
}

#[test]
fn gaussian_estimate_is_close() {
    let o = run(&["gaussian", "--dim", "2", "--eps", "0.05", "--model", "1,-1,0.3"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let abs_err: f64 = out.lines().find_map(|l| l.strip_prefix("abs_err = ")).unwrap().parse().unwrap();
    assert!(abs_err <= 0.05, "{out}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["cost", "--eps", "nope"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["cost", "--class", "/nonexistent/class.json", "--eps", "0.25"]).status.code(), Some(2));
}

#[test]
fn same_seed_same_output() {
    let dir = tempfile::tempdir().unwrap();
    let class = shattered4(dir.path());
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("run{k}.json"));
            let o = run(&[
                "audit", "--method", "oracle", "--class", class.to_str().unwrap(), "--target", "5", "--eps", "0.1",
                "--seed", "42", "--out", out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{o:?}");
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}
