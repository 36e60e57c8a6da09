use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionreadout"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("B,") || l.starts_with("D,"))
        .map(str::to_owned)
        .collect()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.txt", "b.txt"] {
        let o = run(dir.path(), &["simulate", "--n", "10", "--seed", "4", "--out", name]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = data_lines(&dir.path().join("a.txt"));
    assert_eq!(a.len(), 10);
    assert_eq!(a, data_lines(&dir.path().join("b.txt")));
    assert!(dir.path().join("a.txt.config").exists());
}

#[test]
fn toy_physics_has_silent_dark_shots() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--physics", "toy", "--n", "500", "--out", "toy.txt"]);
    assert!(o.status.success());
    let rows = data_lines(&dir.path().join("toy.txt"));
    let dark: Vec<_> = rows.iter().filter(|r| r.starts_with("D,")).collect();
    assert!(!dark.is_empty());
    for r in dark {
        assert!(r[2..].split(',').all(|c| c == "0"), "{r}");
    }
}

#[test]
fn toy_training_then_fixed_point_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["train", "--physics", "toy", "--seed", "2", "--out", "w.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("held_out_accuracy 1\n"), "{}", stdout(&o));

    let o = run(d, &["quantize", "--weights", "w.txt", "--out", "q.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(d, &["simulate", "--physics", "toy", "--n", "2000", "--seed", "9", "--out", "d.txt"]);
    assert!(o.status.success());
    let o = run(
        d,
        &["eval", "--model", "w.txt", "--data", "d.txt", "--fixed-point", "--assert"],
    );
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("agreement 100.0000%"), "{text}");
    assert!(text.contains("saturation_events 0"), "{text}");

    let o = run(d, &["eval", "--model", "q.txt", "--data", "d.txt"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("fixed_point_accuracy"));
}

#[test]
fn violated_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // A linear net whose accumulators overflow the fixed-point range.
    let weights = format!(
        "[network]\nformat = ionreadout-weights\nversion = 1\ninput_length = 10\nlayers = 1\n\
         input_shift = 0\ninput_scale = 1\n\n[layer.0]\nkind = dense\ninputs = 10\noutputs = 2\n\
         weight.shape = 2 10\nweight = {}\nbias.shape = 2\nbias = 0 0\n",
        vec!["3000"; 20].join(" ")
    );
    std::fs::write(d.join("big.txt"), weights).unwrap();
    let o = run(d, &["simulate", "--physics", "embedded", "--n", "200", "--out", "d.txt"]);
    assert!(o.status.success());
    let o = run(
        d,
        &["eval", "--model", "big.txt", "--data", "d.txt", "--fixed-point", "--assert"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn usage_and_input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(d, &["eval", "--model", "missing.txt", "--data", "missing.txt"]).status.code(),
        Some(2)
    );
    std::fs::write(d.join("c.cfg"), "nonsense_key = 3\n").unwrap();
    assert_eq!(
        run(d, &["simulate", "--n", "5", "--config", "c.cfg"]).status.code(),
        Some(2)
    );
}

#[test]
fn ttl_round_trip_asserts_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["ttl-roundtrip", "--n", "500", "--phases", "50", "--assert"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("roundtrip_exact 500 of 500"));
}
