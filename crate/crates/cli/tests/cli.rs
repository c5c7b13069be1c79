use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hubtext"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Flags selecting the shipped toy fixtures with outputs in `out`.
fn toy_args(out: &Path) -> Vec<String> {
    let f = fixtures();
    let p = |name: &str| f.join(name).to_string_lossy().into_owned();
    vec![
        "--out".into(),
        out.to_string_lossy().into_owned(),
        "--vocab".into(),
        p("vocab.txt"),
        "--toy-dim".into(),
        "64".into(),
        "--toy-seed".into(),
        "7".into(),
        "--tuning".into(),
        p("tuning.tsv"),
        "--corpus".into(),
        p("corpus.txt"),
        "--pairs".into(),
        p("eval.jsonl"),
        "--images".into(),
        p("eval_images.tsv"),
        "--docs".into(),
        p("docs.tsv"),
        "--queries".into(),
        p("queries.tsv"),
        "--qrels".into(),
        p("qrels.tsv"),
        "--init".into(),
        out.join("init.json").to_string_lossy().into_owned(),
        "--search-result".into(),
        out.join("search.json").to_string_lossy().into_owned(),
    ]
}

fn run_toy(command: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command.to_string()];
    args.extend(toy_args(out));
    args.extend(extra.iter().map(|s| s.to_string()));
    let o = bin().args(&args).output().unwrap();
    assert!(
        o.status.success(),
        "{command} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

#[test]
fn missing_tuning_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = run(&[
        "search",
        "--tuning",
        missing.to_str().unwrap(),
        "--init-text",
        "a",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.tsv"));
}

#[test]
fn hub_embed_single_image_is_its_direction() {
    let dir = tempfile::tempdir().unwrap();
    let tuning = dir.path().join("one.tsv");
    std::fs::write(&tuning, "img\t3,4\n").unwrap();
    let o = run(&[
        "hub-embed",
        "--tuning",
        tuning.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let hub = json(&dir.path().join("hub.json"));
    let e: Vec<f64> = serde_json::from_value(hub["embedding"].clone()).unwrap();
    assert!((e[0] - 0.6).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15);
    assert!((hub["objective_value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(dir.path().join("hub-embed.config.toml").exists());
}

#[test]
fn full_toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run_toy("hub-embed", out, &[]);
    run_toy("init", out, &["--top-n", "3"]);
    let init = json(&out.join("init.json"));
    assert_eq!(init["provenance"], "corpus_fallback");
    assert_eq!(init["candidates"].as_array().unwrap().len(), 3);

    run_toy("search", out, &["--k", "1,5", "--workers", "2"]);
    let search = json(&out.join("search.json"));
    assert_eq!(search["runs"].as_array().unwrap().len(), 2);
    let best = search["best"]["score"].as_f64().unwrap();
    for r in search["runs"].as_array().unwrap() {
        assert!(r["best"]["score"].as_f64().unwrap() <= best);
        assert!(out.join(format!("trajectory_k{}.csv", r["k"])).exists());
    }
    let meta = json(&out.join("metadata_k5.json"));
    assert_eq!(meta["encoder"]["kind"], "toy_hash");
    assert_eq!(meta["workers"], 2);

    run_toy("eval-caption", out, &["--resamples", "200"]);
    let report = json(&out.join("caption_report.json"));
    let hub = report["corpus_scores"]["hub"].as_f64().unwrap();
    let human = report["corpus_scores"]["human"].as_f64().unwrap();
    assert!(hub > human, "hub {hub} vs human {human}");
    assert!(report["win_rates"]["hub"]["human"].as_f64().unwrap() > 0.5);

    run_toy("eval-retrieval", out, &["--counts", "0,1"]);
    let r = json(&out.join("retrieval_report.json"));
    let p0 = r["by_count"]["0"]["Precision@1"].as_f64().unwrap();
    let p1 = r["by_count"]["1"]["Precision@1"].as_f64().unwrap();
    assert!(p1 < p0);

    let o = run_toy("export-trajectory", out, &["--run-k", "5"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("iteration,best_score,substitutions\n0,"));
}

#[test]
fn search_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for out in [a.path(), b.path()] {
        run_toy("init", out, &[]);
        run_toy("search", out, &["--k", "3", "--seed", "4"]);
    }
    let read = |p: &Path| std::fs::read_to_string(p.join("search.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "output_dir = \"results\"\n[encoder]\nvocab = {:?}\ntoy_dim = 64\ntoy_seed = 7\n[search]\nk = [2]\ninit_text = \"w01 w02\"\n[paths]\ntuning = {:?}\n",
            f.join("vocab.txt"),
            f.join("tuning.tsv")
        ),
    )
    .unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "search", "--k", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("results");
    let search = json(&out.join("search.json"));
    assert_eq!(search["runs"][0]["k"], 1);
    let resolved = std::fs::read_to_string(out.join("search.config.toml")).unwrap();
    assert!(resolved.contains("k = [1]"));

    std::fs::write(&cfg, "[search]\nbeam = 3\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "search"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_token_in_init_text_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(toy_args(dir.path()))
        .args(["search", "--init-text", "w01 nonsense"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_bridge_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(toy_args(dir.path()))
        .args([
            "search",
            "--init-text",
            "w01",
            "--bridge",
            "/nonexistent/bridge-binary",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn search_through_toy_bridge_matches_local_encoder() {
    let f = fixtures();
    let bridge = format!(
        "{} serve-toy --vocab {} --toy-dim 64 --toy-seed 7",
        env!("CARGO_BIN_EXE_hubtext"),
        f.join("vocab.txt").display()
    );
    let local = tempfile::tempdir().unwrap();
    let remote = tempfile::tempdir().unwrap();
    let init = [
        "--init-text",
        "w20 w34 w12 w08 w07 w16 w18 w24",
        "--k",
        "2",
        "--workers",
        "1",
    ];
    run_toy("search", local.path(), &init);
    let mut args = init.to_vec();
    args.extend(["--bridge", &bridge]);
    run_toy("search", remote.path(), &args);
    let l = json(&local.path().join("search.json"));
    let r = json(&remote.path().join("search.json"));
    // The bridge sends f32 vectors, so scores agree only to single precision.
    let (ls, rs) = (
        l["best"]["score"].as_f64().unwrap(),
        r["best"]["score"].as_f64().unwrap(),
    );
    assert!((ls - rs).abs() < 1e-5, "{ls} vs {rs}");
    let meta = json(&remote.path().join("metadata_k2.json"));
    assert_eq!(meta["encoder"]["kind"], "remote");
    assert_eq!(meta["encoder"]["model"], "toy-hash");
}
