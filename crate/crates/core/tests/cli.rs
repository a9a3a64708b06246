//! Exit codes, file outputs and reproducibility of the `psnet` binary on
//! tiny scenes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn psnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psnet"))
}

fn run(args: &[&str]) -> Output {
    psnet().args(args).output().expect("spawn psnet")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn write_scene_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scene.json");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY_SCENE: &str = r#"{"width":48,"height":48,"n_ifgs":5,"seed":5,"ps_fraction":0.1}"#;

#[test]
fn synth_outputs_and_seed_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scene_config(dir.path(), TINY_SCENE);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_exit(&run(&["--out", out_a.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]), 0);
    assert_exit(
        &psnet()
            .args(["--threads", "4", "--out", out_b.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()])
            .output()
            .unwrap(),
        0,
    );
    for name in ["scene.ifgstack", "truth.psmask", "truth.json"] {
        assert_eq!(read(&out_a.join(name)), read(&out_b.join(name)), "{name} differs");
    }
    assert!(out_a.join("manifest.json").exists());
    // --seed overrides the config seed
    let out_c = dir.path().join("c");
    assert_exit(
        &run(&["--seed", "99", "--out", out_c.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]),
        0,
    );
    assert_ne!(read(&out_a.join("scene.ifgstack")), read(&out_c.join("scene.ifgstack")));
}

#[test]
fn synth_rejects_malformed_json_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scene_config(dir.path(), "{\"width\": 48,\n  \"height\": oops}");
    let out = run(&["--out", dir.path().to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line"), "diagnostic missing line info: {stderr}");
}

#[test]
fn classical_runs_and_flags_empty_candidate_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scene_config(dir.path(), TINY_SCENE);
    let scene = dir.path().join("scene");
    assert_exit(&run(&["--out", scene.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]), 0);
    let out_dir = dir.path().join("classical");
    let out = run(&[
        "--out",
        out_dir.to_str().unwrap(),
        "classical",
        "--stack",
        scene.join("scene.ifgstack").to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = String::from_utf8(read(&out_dir.join("candidates.csv"))).unwrap();
    assert!(csv.starts_with("row,col,d_a,w,delta_h,gamma\n"));
    assert!(csv.lines().count() > 1);
    assert!(out_dir.join("mask.psmask").exists());

    // every pixel's amplitude flips between 1 and 3: D_A = 0.5 everywhere,
    // nothing passes the 0.4 gate
    let plane = 16 * 16;
    let amp: Vec<f64> = (0..2 * plane).map(|i| if i < plane { 1.0 } else { 3.0 }).collect();
    let stack = psnet::stack::InterferogramStack::new(
        16,
        16,
        2,
        vec![12.0, 24.0],
        psnet::stack::PadPolicy::Reflect,
        vec![0.0; 2 * plane],
        amp,
        vec![150.0; 2 * plane],
        vec![0.001; plane],
    )
    .unwrap();
    let flat = dir.path().join("flat.ifgstack");
    psnet::stack::format::write_stack(&stack, &flat).unwrap();
    let out_dir2 = dir.path().join("classical-empty");
    let out = run(&[
        "--out",
        out_dir2.to_str().unwrap(),
        "classical",
        "--stack",
        flat.to_str().unwrap(),
    ]);
    assert_exit(&out, 3);
    // the empty mask is still written
    let mask = psnet::stack::format::read_mask(&out_dir2.join("mask.psmask")).unwrap();
    assert_eq!(mask.count(), 0);
}

fn make_dataset(dir: &Path) -> PathBuf {
    let ds = dir.join("ds");
    std::fs::create_dir_all(&ds).unwrap();
    let cfg = write_scene_config(dir, r#"{"width":48,"height":48,"n_ifgs":4,"seed":6,"ps_fraction":0.1,"nonps_noise_std":2.5}"#);
    let scene = dir.join("scene-train");
    assert_exit(&run(&["--out", scene.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]), 0);
    std::fs::copy(scene.join("scene.ifgstack"), ds.join("a.ifgstack")).unwrap();
    std::fs::copy(scene.join("truth.psmask"), ds.join("a.psmask")).unwrap();
    ds
}

#[test]
fn train_predict_roundtrip_with_defaults_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path());
    let tcfg = dir.path().join("train.json");
    std::fs::write(
        &tcfg,
        r#"{"patch_size":16,"filter_plan":[2,2,2,2],"epochs":2,"patience":1,"batch_size":4,"lr":0.002}"#,
    )
    .unwrap();
    let out_t = dir.path().join("train");
    let out = run(&[
        "--seed",
        "3",
        "--out",
        out_t.to_str().unwrap(),
        "train",
        "--dataset",
        ds.to_str().unwrap(),
        "--kind",
        "clstm",
        "--config",
        tcfg.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let history = String::from_utf8(read(&out_t.join("history.csv"))).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,accuracy,precision,recall,f1\n"));
    // defaults recorded in the manifest: clstm keeps lr overridden here but
    // the manifest must carry the resolved config
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&out_t.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["train"]["lr"], serde_json::json!(0.002));
    assert_eq!(manifest["config"]["train"]["class_weights"], serde_json::json!([200.0, 1.0]));
    assert_eq!(manifest["command"], "train");
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);

    let out_p = dir.path().join("pred");
    let out = run(&[
        "--out",
        out_p.to_str().unwrap(),
        "predict",
        "--checkpoint",
        out_t.join("checkpoint.psnet").to_str().unwrap(),
        "--stack",
        ds.join("a.ifgstack").to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let pgm = read(&out_p.join("prob.pgm"));
    assert!(pgm.starts_with(b"P5\n48 48\n65535\n"));
    assert_eq!(pgm.len(), 15 + 48 * 48 * 2);
}

#[test]
fn train_defaults_per_kind_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path());
    let tcfg = dir.path().join("train.json");
    // no epochs/lr overrides: the per-kind defaults must land in the manifest
    std::fs::write(&tcfg, r#"{"patch_size":16,"filter_plan":[2,2,2,2],"batch_size":4}"#).unwrap();
    for (kind, epochs, lr) in [("cnn", 400, 0.01), ("clstm", 300, 0.001)] {
        let out_dir = dir.path().join(format!("train-{kind}"));
        // patience 20 < epochs holds for both; run only 1 epoch by patience
        // trick is not possible here, so keep the dataset tiny and epochs
        // capped via config for the cnn case would change defaults; instead
        // just verify the dry resolution through a failing-fast path:
        // 2 samples -> quick epochs with default settings would still be
        // slow, so this test only checks the manifest after a short run.
        let mut cfg: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(&tcfg).unwrap(),
        )
        .unwrap();
        cfg["epochs"] = serde_json::json!(2);
        cfg["patience"] = serde_json::json!(1);
        let tcfg_kind = dir.path().join(format!("train-{kind}.json"));
        std::fs::write(&tcfg_kind, cfg.to_string()).unwrap();
        let out = run(&[
            "--out",
            out_dir.to_str().unwrap(),
            "train",
            "--dataset",
            ds.to_str().unwrap(),
            "--kind",
            kind,
            "--config",
            tcfg_kind.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        let manifest: serde_json::Value =
            serde_json::from_slice(&read(&out_dir.join("manifest.json"))).unwrap();
        // overridden fields recorded as overridden, defaults retained
        assert_eq!(manifest["config"]["train"]["epochs"], serde_json::json!(2));
        assert_eq!(manifest["config"]["train"]["lr"], serde_json::json!(lr));
        let _ = epochs;
    }
}

#[test]
fn train_missing_dataset_exits_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "train",
        "--dataset",
        dir.path().join("nope").to_str().unwrap(),
        "--kind",
        "clstm",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn predict_zero_checkpoint_gives_uniform_half() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scene_config(dir.path(), TINY_SCENE);
    let scene = dir.path().join("scene");
    assert_exit(&run(&["--out", scene.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]), 0);

    let spec = psnet::networks::NetworkSpec {
        kind: psnet::networks::NetworkKind::ClstmIss,
        filter_plan: vec![2, 2, 2, 2],
        kernel: 3,
        dropout_rate: 0.25,
        input_patch: 16,
        n_timesteps: 5,
    };
    let net = psnet::networks::Network::zeros(spec).unwrap();
    let ckpt = dir.path().join("zero.psnet");
    psnet::networks::checkpoint::save(&net, 0, None, &ckpt).unwrap();

    let out_p = dir.path().join("pred");
    let out = run(&[
        "--out",
        out_p.to_str().unwrap(),
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--stack",
        scene.join("scene.ifgstack").to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let pgm = read(&out_p.join("prob.pgm"));
    let payload = &pgm[15..];
    let expect = ((0.5f64 * 65535.0).round() as u16).to_be_bytes();
    assert!(payload.chunks(2).all(|c| c == expect));
    // probability 1/2 meets the >= 0.5 rule: full mask
    let mask = psnet::stack::format::read_mask(&out_p.join("mask.psmask")).unwrap();
    assert_eq!(mask.count(), 48 * 48);
}

#[test]
fn eval_reports_overlap_metrics_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scene_config(dir.path(), TINY_SCENE);
    let scene = dir.path().join("scene");
    assert_exit(&run(&["--out", scene.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]), 0);
    let stack = scene.join("scene.ifgstack");
    let truth_mask = scene.join("truth.psmask");

    let out_dir = dir.path().join("eval");
    let out = run(&[
        "--out",
        out_dir.to_str().unwrap(),
        "eval",
        "--stack",
        stack.to_str().unwrap(),
        "--mask",
        truth_mask.to_str().unwrap(),
        "--mask",
        truth_mask.to_str().unwrap(),
        "--truth",
        truth_mask.to_str().unwrap(),
        "--truth-json",
        scene.join("truth.json").to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    // a mask against itself: 100% overlap
    let overlap = String::from_utf8(read(&out_dir.join("overlap.csv"))).unwrap();
    let row = overlap.lines().nth(1).unwrap();
    assert!(row.ends_with(",100"), "row: {row}");

    // truth vs itself: perfect metrics
    let metrics = String::from_utf8(read(&out_dir.join("metrics.csv"))).unwrap();
    assert!(metrics.lines().nth(1).unwrap().ends_with(",1,1,1,1"));

    // histogram rows = window area bins (+ header)
    let hist = String::from_utf8(read(&out_dir.join("stip_hist_0_truth.csv"))).unwrap();
    assert_eq!(hist.lines().count(), 1 + 5 * 25);

    assert!(out_dir.join("landcover.csv").exists());
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn classical_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scene_config(dir.path(), TINY_SCENE);
    let scene = dir.path().join("scene");
    assert_exit(&run(&["--out", scene.to_str().unwrap(), "synth", "--config", cfg.to_str().unwrap()]), 0);
    let stack = scene.join("scene.ifgstack");
    let out_1 = dir.path().join("t1");
    let out_4 = dir.path().join("t4");
    assert_exit(
        &run(&["--threads", "1", "--out", out_1.to_str().unwrap(), "classical", "--stack", stack.to_str().unwrap()]),
        0,
    );
    assert_exit(
        &run(&["--threads", "4", "--out", out_4.to_str().unwrap(), "classical", "--stack", stack.to_str().unwrap()]),
        0,
    );
    assert_eq!(read(&out_1.join("mask.psmask")), read(&out_4.join("mask.psmask")));
    assert_eq!(read(&out_1.join("candidates.csv")), read(&out_4.join("candidates.csv")));
}
