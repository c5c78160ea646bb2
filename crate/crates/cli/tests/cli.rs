use std::path::Path;
use std::process::{Command, Output};

fn fbkws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbkws")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_corpus(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let out = stdout(&fbkws(&["synth", "--out", s(&data), "--speakers", "12", "--keywords", "yes,no", "--fillers-per-speaker", "0", "--noise-files", "1"]));
    assert!(out.contains("wrote 24 clips"), "{out}");
    data
}

#[test]
fn run_plot_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_corpus(dir.path());
    let mut reports = Vec::new();
    for name in ["FfBt_1", "FtBt_1"] {
        let out = dir.path().join(name);
        let text = stdout(&fbkws(&[
            "run", name, "--data", s(&data), "--subset", "yes/no", "--reps", "2", "--batch-size", "8", "--no-augment", "--out", s(&out), "-q",
        ]));
        assert!(text.lines().any(|l| l.starts_with(&format!("{name}: "))), "{text}");
        assert!(text.contains("seed 1:"));
        assert!(out.join("trials/seed_0/model.ckpt").is_file());
        reports.push(out.join("report.json"));
    }

    let plots = dir.path().join("plots");
    let text = stdout(&fbkws(&["plot", s(&reports[1]), "--out", s(&plots)]));
    assert!(text.contains("wrote"), "{text}");
    assert!(std::fs::read_dir(&plots).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));

    let text = stdout(&fbkws(&["compare", s(&reports[0]), s(&reports[1])]));
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn malformed_names_and_missing_data_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    for args in [
        vec!["run", "Fx_26", "--data", s(&missing)],
        vec!["run", "FfBt_26", "--data", s(&missing)],
        vec!["compare", s(&missing), s(&missing)],
    ] {
        let o = fbkws(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = fbkws(&["train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}
