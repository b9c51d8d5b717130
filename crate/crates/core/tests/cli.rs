use std::fs;
use std::path::Path;
use std::process::Command;

fn srpmoe(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_srpmoe"))
        .args(args)
        .env_remove("SRPMOE_SEED")
        .output()
        .expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small experts and router so whole-pipeline runs stay quick.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{
  "experts": [
    {"id": 0, "name": "tsf-b", "dim": 6, "cost_tflops": 0.59, "fidelity": 0.55},
    {"id": 1, "name": "vmae-b", "dim": 6, "cost_tflops": 2.7, "fidelity": 0.8},
    {"id": 2, "name": "vmae-l", "dim": 8, "cost_tflops": 8.9, "fidelity": 0.95}
  ],
  "synthetic": {"num_train": 80, "num_test": 40},
  "run": {"router": {"obs_dim": 8}, "dqn": {"warmup_transitions": 32, "batch_size": 16}, "pg": {"rollout_episodes": 8}}
}"#,
    )
    .unwrap();
    path
}

/// File contents keyed by name. The config echo records `out`, so that key
/// is dropped before comparing.
fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).unwrap();
            if name == "resolved_config.json" {
                let mut echo: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                echo.as_object_mut().unwrap().remove("out");
                bytes = echo.to_string().into_bytes();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = small_config(tmp.path());
    assert_eq!(srpmoe(&["synth", "--config", p(&cfg), "--seed", "7", "--out", p(&a)]).0, 0);
    assert_eq!(srpmoe(&["synth", "--config", p(&cfg), "--seed", "7", "--out", p(&b)]).0, 0);
    let files = dir_bytes(&a);
    assert!(files.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn train_on_default_bank_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let (code, text) = srpmoe(&["train", "--lambda", "0.2", "--agent", "dqn", "--episodes", "300", "--out", p(&run)]);
    assert_eq!(code, 0, "{text}");
    for f in ["router.ckpt", "train_log.csv", "resolved_config.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "episode,mean_reward,train_acc_window,mean_cost_tflops");

    let ev = tmp.path().join("eval");
    let (code, text) = srpmoe(&["eval", "--checkpoint", p(&run.join("router.ckpt")), "--out", p(&ev)]);
    assert_eq!(code, 0, "{text}");
    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let assignments = fs::read_to_string(ev.join("assignments.csv")).unwrap();
    assert_eq!(assignments.lines().next().unwrap(), "sample_id,x,y,label,pred,experts,cost");
    assert_eq!(assignments.lines().count(), 401);
}

#[test]
fn training_twice_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let (code, text) = srpmoe(&["train", "--config", p(&cfg), "--episodes", "400", "--seed", "4", "--out", p(out)]);
        assert_eq!(code, 0, "{text}");
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (code, _) = srpmoe(&["train", "--config", p(&cfg), "--episodes", "300", "--seed", "9", "--lambda", "0.3", "--out", p(&a)]);
    assert_eq!(code, 0);
    let echo = a.join("resolved_config.json");
    let (code, _) = srpmoe(&["train", "--config", p(&echo), "--out", p(&b)]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(a.join("router.ckpt")).unwrap(), fs::read(b.join("router.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("train_log.csv")).unwrap(), fs::read(b.join("train_log.csv")).unwrap());
}

#[test]
fn sweep_writes_eighteen_rows_and_plot_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let (code, text) = srpmoe(&[
        "sweep", "--config", p(&cfg), "--lambdas", "0,0.1,0.2,0.3,0.4,0.5", "--seeds", "1,2,3", "--episodes", "60", "--jobs", "2",
        "--out", p(&out),
    ]);
    assert_eq!(code, 0, "{text}");
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 19);
    assert_eq!(
        csv.lines().next().unwrap(),
        "lambda,seed,agent,mode,augment,overfit,train_acc,test_acc,avg_tflops,acc_per_tflop,episodes"
    );
    let svg = fs::read_to_string(out.join("frontier.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 18);

    let replot = tmp.path().join("again.svg");
    let (code, _) = srpmoe(&["plot", p(&out.join("metrics.csv")), "--out", p(&replot)]);
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(replot).unwrap(), svg);
}

#[test]
fn oracle_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("oracle.json");
    fs::write(&cfg, r#"{"oracle_bins": 8, "oracle_samples": 2000, "run": {"router": {"obs_dim": 8}}}"#).unwrap();
    let out = tmp.path().join("oracle");
    let (code, text) = srpmoe(&["oracle", "--config", p(&cfg), "--episodes", "500", "--lambda", "0.2", "--no-augment", "--out", p(&out)]);
    assert_eq!(code, 0, "{text}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("oracle_report.json")).unwrap()).unwrap();
    for key in ["optimal_value", "learned_value", "ratio", "K", "lambda"] {
        assert!(report.get(key).is_some(), "{key} missing");
    }
    assert_eq!(report["K"], 8);
    assert!(report["learned_value"].as_f64().unwrap() <= report["optimal_value"].as_f64().unwrap() + 1e-12);
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(srpmoe(&["bogus"]).0, 1);
    assert_eq!(srpmoe(&["train", "--mode", "sideways"]).0, 1);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "[1, 2").unwrap();
    assert_eq!(srpmoe(&["synth", "--config", p(&bad)]).0, 1);

    // A manifest pointing at a truncated embedding file is a runtime failure.
    let cfg = small_config(tmp.path());
    let bank = tmp.path().join("bank");
    assert_eq!(srpmoe(&["synth", "--config", p(&cfg), "--out", p(&bank)]).0, 0);
    let victim = fs::read_dir(&bank).unwrap().map(|e| e.unwrap().path()).find(|p| p.to_string_lossy().ends_with("vmae-b.f32")).unwrap();
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
    let (code, text) = srpmoe(&["train", "--bank", p(&bank.join("manifest.json")), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(code, 2);
    assert!(text.contains("bytes"), "{text}");
}

#[test]
fn inputs_are_not_modified() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let bank = tmp.path().join("bank");
    assert_eq!(srpmoe(&["synth", "--config", p(&cfg), "--out", p(&bank)]).0, 0);
    let before = dir_bytes(&bank);
    let run = tmp.path().join("run");
    let (code, text) = srpmoe(&["train", "--config", p(&cfg), "--bank", p(&bank.join("manifest.json")), "--episodes", "100", "--out", p(&run)]);
    assert_eq!(code, 0, "{text}");
    let (code, _) = srpmoe(&["eval", "--bank", p(&bank.join("manifest.json")), "--checkpoint", p(&run.join("router.ckpt")), "--out", p(&run)]);
    assert_eq!(code, 0);
    assert_eq!(dir_bytes(&bank), before);
}

#[test]
fn env_seed_is_used_when_no_seed_is_given() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = |dir: &Path, env_seed: &str, extra: &[&str]| {
        let mut args = vec!["synth", "--config", p(&cfg), "--out", p(dir)];
        args.extend_from_slice(extra);
        let status = Command::new(env!("CARGO_BIN_EXE_srpmoe")).args(&args).env("SRPMOE_SEED", env_seed).status().unwrap();
        assert!(status.success());
        fs::read(dir.join("labels.txt")).unwrap()
    };
    let via_env = run(&tmp.path().join("a"), "11", &[]);
    let via_flag = run(&tmp.path().join("b"), "99", &["--seed", "11"]);
    let other = run(&tmp.path().join("c"), "12", &[]);
    assert_eq!(via_env, via_flag);
    assert_ne!(via_env, other);
}
