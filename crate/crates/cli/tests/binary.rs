use std::path::Path;
use std::process::{Command, Output};

fn priorart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_priorart"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn subcommands_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (corpus, pairs) = (d.join("corpus.jsonl"), d.join("pairs.csv"));
    let synth = stdout_json(&priorart(&[
        "synth",
        "--output",
        p(&corpus),
        "--topics",
        "3",
        "--docs-per-topic",
        "15",
        "--duplicates",
        "2",
        "--topics-output",
        p(&d.join("topics.csv")),
    ]));
    assert_eq!(synth["documents"], 47);
    assert_eq!(
        stdout_json(&priorart(&["ingest", "--input", p(&corpus)]))["documents"],
        47
    );
    assert_eq!(
        stdout_json(&priorart(&["stats", "--corpus", p(&corpus)]))["documents"],
        47
    );
    let made = stdout_json(&priorart(&[
        "pairs",
        "--corpus",
        p(&corpus),
        "--output",
        p(&pairs),
        "--n-random",
        "20",
    ]));
    assert_eq!(made["counts"]["duplicate"], 2);

    let out = d.join("out");
    let report = stdout_json(&priorart(&[
        "pipeline",
        "--corpus",
        p(&corpus),
        "--pairs",
        p(&pairs),
        "--output-dir",
        p(&out),
    ]));
    assert!(report["auc"].as_f64().unwrap() > 0.5);

    let scored = d.join("scored.csv");
    stdout_json(&priorart(&[
        "score",
        "--features",
        p(&out.join("features.bin")),
        "--pairs",
        p(&pairs),
        "--output",
        p(&scored),
    ]));
    assert_eq!(
        std::fs::read(&scored).unwrap(),
        std::fs::read(out.join("scored.csv")).unwrap()
    );
    stdout_json(&priorart(&[
        "evaluate",
        "--scored",
        p(&scored),
        "--output-dir",
        p(&d.join("eval")),
    ]));
    assert_eq!(
        std::fs::read(d.join("eval/report.json")).unwrap(),
        std::fs::read(out.join("report.json")).unwrap()
    );

    let w2v = stdout_json(&priorart(&[
        "train-w2v",
        "--corpus",
        p(&corpus),
        "--output",
        p(&d.join("w2v.bin")),
        "--dim",
        "8",
        "--epochs",
        "1",
        "--min-count",
        "1",
    ]));
    assert_eq!(w2v["dim"], 8);
    let d2v = stdout_json(&priorart(&[
        "train-d2v",
        "--corpus",
        p(&corpus),
        "--output",
        p(&d.join("d2v.bin")),
        "--dim",
        "8",
        "--epochs",
        "1",
        "--min-count",
        "1",
        "--exclude-targets-of",
        p(&pairs),
    ]));
    assert!(d2v["documents"].as_u64().unwrap() < 47);

    let first = std::fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_owned();
    let query = d.join("query.json");
    let mut doc: serde_json::Value = serde_json::from_str(&first).unwrap();
    let original = doc["id"].as_str().unwrap().to_owned();
    doc["id"] = "QUERY".into();
    std::fs::write(&query, doc.to_string()).unwrap();
    let hits = stdout_json(&priorart(&[
        "search",
        "--corpus",
        p(&corpus),
        "--output-dir",
        p(&out),
        "--query",
        p(&query),
        "-k",
        "2",
    ]));
    assert_eq!(hits[0]["doc_id"], original.as_str());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.jsonl");
    let pairs = d.join("pairs.csv");
    assert!(priorart(&[
        "synth",
        "--output",
        p(&corpus),
        "--topics",
        "2",
        "--docs-per-topic",
        "10"
    ])
    .status
    .success());
    assert!(priorart(&[
        "pairs",
        "--corpus",
        p(&corpus),
        "--output",
        p(&pairs),
        "--n-random",
        "5"
    ])
    .status
    .success());

    let code = |out: Output| out.status.code().unwrap();
    assert_eq!(
        code(priorart(&[
            "stats",
            "--corpus",
            p(&d.join("missing.jsonl"))
        ])),
        3
    );
    let bad_config = d.join("bad.json");
    std::fs::write(&bad_config, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(code(priorart(&["pipeline", "--config", p(&bad_config)])), 2);
    let out = priorart(&[
        "pipeline",
        "--corpus",
        p(&corpus),
        "--pairs",
        p(&pairs),
        "--method",
        "lsa",
        "--reduce-l",
        "1000",
        "--output-dir",
        p(&d.join("lsa")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reduce stage"));
    let out = priorart(&[
        "search",
        "--output-dir",
        p(&d.join("nothing")),
        "--query",
        p(&corpus),
    ]);
    assert_eq!(code(out), 2);
    assert_eq!(code(priorart(&["pipeline", "--method", "bogus"])), 2);
}
