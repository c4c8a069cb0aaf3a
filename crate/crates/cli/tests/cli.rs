use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ela(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ela")).args(args).output().expect("spawn ela")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_trace(path: &Path) {
    // Layer 3 repeats layer 2's attention, so it is the redundant one.
    let lines = [
        r#"{"epoch":1,"layer_index":1,"head_index":0,"weights":[1.0]}"#,
        r#"{"epoch":1,"layer_index":2,"head_index":0,"weights":[0.3,0.7]}"#,
        r#"{"epoch":1,"layer_index":3,"head_index":0,"weights":[0.3,0.7,0.0]}"#,
        r#"{"epoch":1,"layer_index":4,"head_index":0,"weights":[0.1,0.2,0.3,0.4]}"#,
        r#"{"epoch":1,"layer_index":5,"head_index":0,"weights":[0.6,0.1,0.1,0.1,0.1]}"#,
    ];
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn write_schedule(path: &Path) {
    fs::write(path, "[[stage]]\nstart = 1\nend = 1\n").unwrap();
}

#[test]
fn analyze_prunes_repeated_layer() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let schedule = dir.path().join("schedule.toml");
    let out = dir.path().join("out");
    write_trace(&trace);
    write_schedule(&schedule);
    let res = ela(&[
        "--mode", "analyze", "--trace", path_str(&trace), "--schedule", path_str(&schedule),
        "--alpha", "2", "--beta", "5", "--tau", "0.25", "--out", path_str(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("final mask 11011"), "{stdout}");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("stage_id,layer_pair,layer,raw,mapped,selected,mask_bit\n"));
    assert_eq!(report.lines().count(), 5);
    assert!(out.join("summary.json").exists());
}

#[test]
fn invalid_arguments_exit_with_validation_code() {
    assert_eq!(code(&ela(&["--mode", "nonsense"])), 1);
    assert_eq!(code(&ela(&["--tau", "1.5", "--mode", "train"])), 1);
    assert_eq!(code(&ela(&["--preset", "nowhere"])), 1);
    assert_eq!(code(&ela(&["--mode", "analyze"])), 1);
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(code(&ela(&["--help"])), 0);
    assert_eq!(code(&ela(&["--version"])), 0);
}

#[test]
fn missing_files_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let res = ela(&["--mode", "analyze", "--trace", path_str(&missing), "--out", path_str(dir.path())]);
    assert_eq!(code(&res), 3);
    let res = ela(&["--mode", "report", "--out", path_str(&dir.path().join("nothing"))]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("report.csv"));
}

#[test]
fn malformed_trace_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.jsonl");
    fs::write(&trace, "{\"epoch\":1,\"layer_index\":1,\"head_index\":0,\"weights\":[1.0]}\nnot json\n").unwrap();
    let res = ela(&["--mode", "analyze", "--trace", path_str(&trace), "--out", path_str(dir.path())]);
    assert_ne!(code(&res), 0);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bad.jsonl:2"));
}

#[test]
fn report_chart_has_one_bar_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fs::write(empty.join("report.csv"), "stage_id,layer_pair,layer,raw,mapped,selected,mask_bit\n").unwrap();
    assert_eq!(code(&ela(&["--mode", "report", "--out", path_str(&empty)])), 0);
    let svg = fs::read_to_string(empty.join("scores.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 0);

    let three = dir.path().join("three");
    fs::create_dir(&three).unwrap();
    fs::write(
        three.join("report.csv"),
        "stage_id,layer_pair,layer,raw,mapped,selected,mask_bit\n\
         1,1-2,2,0.4,1.0,0,1\n1,2-3,3,0.01,0.1,1,0\n1,3-4,4,0.2,0.6,1,1\n",
    )
    .unwrap();
    assert_eq!(code(&ela(&["--mode", "report", "--out", path_str(&three)])), 0);
    let svg = fs::read_to_string(three.join("scores.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 3);
}

#[test]
fn train_without_stages_keeps_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "mode = \"train\"\nstage = []\n[stack]\nlayers = 4\ndim = 8\nheads = 2\nclasses = 3\n[train]\nepochs = 3\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = ela(&["--config", path_str(&config), "--out", path_str(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"final_mask\": \"1111\""), "{summary}");
    assert!(summary.contains("\"attention_flop_reduction\": 0.0"), "{summary}");
}

#[test]
fn tied_training_prunes_and_saves_flops() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "mode = \"train\"\nalpha = 2.0\nbeta = 5.0\ntau = 0.25\n\
         [[stage]]\nstart = 3\nend = 4\n\
         [stack]\nlayers = 5\ndim = 8\nheads = 2\nclasses = 3\n\
         [train]\nepochs = 8\ntied_layers = [2, 3]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = ela(&["--config", path_str(&config), "--out", path_str(&out), "--plots"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    let mask_line = stdout.lines().find(|l| l.starts_with("final mask")).unwrap();
    assert!(mask_line.contains('0'), "{stdout}");
    assert!(!stdout.contains("(0.0% fewer)"), "{stdout}");
    assert!(out.join("flops.svg").exists());
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut contents = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = ela(&["--mode", "simulate", "--preset", "detection", "--epochs", "4", "--layers", "4", "--out", path_str(&out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        contents.push(
            ["trace.jsonl", "report.csv", "summary.json"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(contents[0], contents[1]);
}
