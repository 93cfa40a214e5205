use std::path::Path;
use std::process::{Command, Output};

fn exgen(work: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exgen"))
        .arg("--work")
        .arg(work)
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("EF_CONFIG")
        .env_remove("EF_SEED")
        .output()
        .expect("exgen runs")
}

fn ok(work: &Path, config: &Path, args: &[&str]) -> String {
    let out = exgen(work, config, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{
  "seed": 5,
  "corpus": {"kind": "toy", "dialogues": 30, "emotions": 4},
  "model": {"n_emb": 16, "n_layers": 1, "n_heads": 2, "ffn_width": 32, "q": 3},
  "retriever": {"schedule": {"epochs": 2, "batch_size": 16}, "max_samples": 32},
  "objective": {"epochs": 2, "batch_size": 16, "learning_rate": 0.001}
}"#;

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("run");
    let config = dir.path().join("exp.json");
    std::fs::write(&config, CONFIG).unwrap();

    assert!(ok(&work, &config, &["gen-toy-corpus"]).contains("30 dialogues"));
    assert!(work.join("corpus.jsonl").exists() && work.join("manifest.json").exists());
    ok(&work, &config, &["train-dpr"]);
    assert!(work.join("dpr.ckpt").exists() && work.join("vocab.json").exists());

    // later stages refuse to run before their inputs exist
    let early = exgen(&work, &config, &["train-gen"]);
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("label-synth"));

    assert!(ok(&work, &config, &["build-pools"]).contains("pools"));
    let ctx = dir.path().join("ctx.txt");
    std::fs::write(&ctx, "i feel sad . my dog got hurt .\n").unwrap();
    let hits = ok(&work, &config, &["retrieve", "--context-file", ctx.to_str().unwrap(), "--emotion", "afraid", "--q", "2"]);
    let lines: Vec<serde_json::Value> = hits.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty() && lines.len() <= 2);
    assert_eq!(lines[0]["rank"], 1);

    ok(&work, &config, &["label-synth"]);
    assert!(work.join("labels.jsonl.meta.json").exists());
    let trained = ok(&work, &config, &["train-gen"]);
    assert!(trained.contains("epoch   1") && trained.contains("kept epoch"));
    ok(&work, &config, &["generate", "--output", dir.path().join("g.jsonl").to_str().unwrap()]);
    let auto = ok(&work, &config, &["eval-auto", "--system", "tiny"]);
    assert!(auto.contains("BLEU") && auto.contains("PPL") && auto.contains("tiny"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(work.join("report_auto.json")).unwrap()).unwrap();
    assert!(report["ppl"].as_f64().unwrap() > 1.0);
    // greedy decoding from the same checkpoint gives the same file
    assert_eq!(
        std::fs::read_to_string(work.join("generations.jsonl")).unwrap(),
        std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap()
    );
    let synth = ok(&work, &config, &["eval-synth"]);
    assert!(synth.contains("EP F1") && synth.contains("Sent MAE"));
    assert_eq!(synth, ok(&work, &config, &["eval-synth"]));
}

#[test]
fn gold_generations_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("run");
    let config = dir.path().join("exp.json");
    std::fs::write(&config, CONFIG).unwrap();
    ok(&work, &config, &["gen-toy-corpus"]);
    ok(&work, &config, &["label-synth"]);
    // a generation file holding the test responses themselves
    let corpus = std::fs::read_to_string(work.join("corpus.jsonl")).unwrap();
    let labels = std::fs::read_to_string(work.join("labels.jsonl")).unwrap();
    let ids: std::collections::HashSet<String> =
        labels.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["pair_id"].as_str().unwrap().to_string()).collect();
    let mut gens = String::new();
    for line in corpus.lines() {
        let d: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = d["dialogue_id"].as_str().unwrap();
        for (i, u) in d["utterances"].as_array().unwrap().iter().enumerate() {
            let pid = format!("{id}:{}", i + 1);
            if ids.contains(&pid) {
                let tokens: Vec<&str> = u["text"].as_str().unwrap().split_whitespace().collect();
                gens.push_str(&serde_json::json!({"pair_id": pid, "tokens": tokens}).to_string());
                gens.push('\n');
            }
        }
    }
    let g = dir.path().join("gold.jsonl");
    std::fs::write(&g, gens).unwrap();
    let out = ok(&work, &config, &["eval-synth", "--generations", g.to_str().unwrap()]);
    let row = out.lines().nth(1).unwrap();
    assert!(row.contains("100.00") && row.ends_with("0.000"), "{out}");
}

#[test]
fn ratings_and_votes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(&config, "{}").unwrap();
    let work = dir.path().join("run");
    let ratings = dir.path().join("sys.csv");
    std::fs::write(&ratings, "sample_id,annotator_id,empathy,relevance,fluency,ep,int,exp\ns1,a,3,4,5,1,1,1\ns1,b,4,4,5,2,0,1\n").unwrap();
    let out = ok(&work, &config, &["ratings-aggregate", ratings.to_str().unwrap()]);
    assert!(out.contains("3.50") && out.contains("1 samples, 2 annotators"), "{out}");

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "sample_id,annotator_id,empathy,relevance,fluency,ep,int,exp\ns1,a,9,4,5,1,1,1\n").unwrap();
    assert!(!exgen(&work, &config, &["ratings-aggregate", bad.to_str().unwrap()]).status.success());

    let votes = dir.path().join("ab.csv");
    std::fs::write(&votes, "sample_id,v1,v2,v3,v4\ns1,A,A,B,\ns2,TIE,TIE,A,\ns3,A,B,TIE,B\n").unwrap();
    let out = ok(&work, &config, &["ab-aggregate", votes.to_str().unwrap()]);
    assert_eq!(out.lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>(), ["ab", "33.33", "33.33", "33.33"]);

    std::fs::write(&votes, "s7,A,B,TIE\n").unwrap();
    let out = exgen(&work, &config, &["ab-aggregate", votes.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("s7"));
}

#[test]
fn ablate_prints_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("run");
    let config = dir.path().join("exp.json");
    std::fs::write(&config, CONFIG).unwrap();
    let out = ok(&work, &config, &["ablate"]);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("full"));
    assert!(rows[1].starts_with("w/o Emp. Losses"));
    assert!(rows[2].starts_with("w/o Exemplars, w/o Emp. Losses"));
    assert!(work.join("ablation.json").exists());
}

#[test]
fn seed_override_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(&config, CONFIG).unwrap();
    let work = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_exgen"))
        .arg("--work")
        .arg(&work)
        .arg("gen-toy-corpus")
        .env("EF_CONFIG", &config)
        .env("EF_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(work.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], 42);
    assert_eq!(written["model"]["n_emb"], 16);
}
