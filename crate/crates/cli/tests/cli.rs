use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pgdmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgdmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TOY: &str = r#"{"input_dim": 1, "layers": [
  {"type": "linear", "weights": [[0.0], [0.5], [-2.0]], "bias": [1.0, -0.7, 0.0]}
]}"#;

fn write_toy(dir: &Path) -> (String, String) {
    let model = dir.join("toy.json");
    fs::write(&model, TOY).unwrap();
    let examples = dir.join("ex.jsonl");
    let mut text = String::new();
    for i in 0..10 {
        let x = -0.9 + 0.2 * i as f64;
        text.push_str(&format!("{{\"example_id\": \"p{i}\", \"input\": [{x}], \"label\": 0}}\n"));
    }
    fs::write(&examples, text).unwrap();
    (
        model.to_str().unwrap().to_string(),
        examples.to_str().unwrap().to_string(),
    )
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&pgdmt(&["--help"])), 0);
    assert_eq!(code(&pgdmt(&["attack", "--help"])), 0);
    assert_eq!(code(&pgdmt(&["frobnicate"])), 1);
    assert_eq!(code(&pgdmt(&["experiment", "toy", "--trials", "many"])), 1);
}

#[test]
fn attack_run_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let (model, examples) = write_toy(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("r{threads}.jsonl"));
        let o = pgdmt(&[
            "attack", "run", "--model", &model, "--examples", &examples, "--epsilon", "0.5",
            "--attack", "mt", "--targets", "all", "--optimizer", "sign", "--schedule", "0.05",
            "--steps", "30", "--restarts", "1", "--seed", "11", "--threads", threads,
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("attack,examples,robust,accuracy_under_attack,clean_accuracy\nmt[all],10,"));
        outputs.push(fs::read_to_string(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let first: serde_json::Value = serde_json::from_str(outputs[0].lines().next().unwrap()).unwrap();
    for key in ["example_id", "attack", "seed", "success", "best_margin", "best_input", "grad_evals", "restarts_run"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert!(dir.path().join("r1.jsonl.meta.json").exists());
}

#[test]
fn config_file_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let (model, examples) = write_toy(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"optimizer": "adam", "schedule": {"initial": 0.1, "decay": [[0.5, 0.1]]},
            "strategy": "fixed_loss", "loss": "xent", "steps": 20, "restarts": 2,
            "master_seed": 3}"#,
    )
    .unwrap();
    let mut files = Vec::new();
    for (k, extra) in [["--config", cfg.to_str().unwrap()], ["--attack", "pgd-mt"]].iter().enumerate() {
        let out = dir.path().join(format!("a{k}.jsonl"));
        let mut args = vec!["attack", "run", "--model", &model, "--examples", &examples, "--epsilon", "1"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out.to_str().unwrap()]);
        let o = pgdmt(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        files.push(out.to_str().unwrap().to_string());
    }
    assert!(fs::read_to_string(&files[0]).unwrap().contains("\"attack\":\"pgd[xent]\""));
    let agg = dir.path().join("agg.jsonl");
    let o = pgdmt(&["attack", "aggregate", &files[0], &files[1], "--out", agg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&agg).unwrap().lines().count(), 10);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (model, examples) = write_toy(dir.path());
    let out = dir.path().join("r.jsonl");
    let out = out.to_str().unwrap();
    let missing = pgdmt(&["attack", "run", "--model", "/nonexistent/m.json", "--examples", &examples, "--epsilon", "0.1", "--out", out]);
    assert_eq!(code(&missing), 2);
    let bad_targets = pgdmt(&["attack", "run", "--model", &model, "--examples", &examples, "--epsilon", "0.1", "--attack", "pgd", "--targets", "2", "--out", out]);
    assert_eq!(code(&bad_targets), 1);
    let bad_loss = pgdmt(&["attack", "run", "--model", &model, "--examples", &examples, "--epsilon", "0.1", "--loss", "hinge", "--out", out]);
    assert_eq!(code(&bad_loss), 1);

    let huge = dir.path().join("huge.json");
    fs::write(
        &huge,
        r#"{"input_dim": 1, "layers": [{"type": "linear", "weights": [[1e308], [-1e308]], "bias": [0.0, 0.0]}]}"#,
    )
    .unwrap();
    let ex = dir.path().join("big.jsonl");
    fs::write(&ex, "{\"example_id\": \"b\", \"input\": [10.0], \"label\": 0}\n").unwrap();
    let o = pgdmt(&[
        "attack", "run", "--model", huge.to_str().unwrap(), "--examples", ex.to_str().unwrap(),
        "--epsilon", "1", "--out", out,
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn experiments_print_csv() {
    let o = pgdmt(&["experiment", "toy", "--rho", "0.5,0.25", "--trials", "500"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("rho,restarts,trials,pgd_successes,"));
    assert_eq!(text.lines().count(), 3);

    let o = pgdmt(&["experiment", "mc-linear", "--samples", "300", "--classes", "4", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("\nmt,all,"));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nc.csv");
    let o = pgdmt(&["experiment", "nonconvex", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(out).unwrap();
    assert!(text.contains("pgd_wins,") && text.contains(",pgd\n") && text.contains(",mt\n"));
}

#[test]
fn analyses_print_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = write_toy(dir.path());
    let o = pgdmt(&["analyze", "linearity", "--model", &model, "--input", "0", "--epsilon", "1", "--samples", "10"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("logit,index,value\n"));

    let o = pgdmt(&[
        "analyze", "basin", "--model", &model, "--input", "0", "--label", "0", "--epsilon", "1",
        "--optimizer", "sign", "--schedule", "0.0625", "--steps", "64", "--resolution", "51",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("index,coord0,coord1,success\n"));
    assert_eq!(text.lines().count(), 52);

    let o = pgdmt(&[
        "analyze", "landscape", "--model", &model, "--input", "-0.2", "--label", "0",
        "--epsilon", "0.5", "--resolution", "5", "--steps", "10",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("a,b,logit,value,inside\n"));
    assert_eq!(text.lines().count(), 1 + 25 * 3);
}
