mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn foodsem(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foodsem"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FOODSEM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn summary(output: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&output.stdout);
    serde_json::from_str(stdout.lines().last().unwrap_or(""))
        .unwrap_or_else(|e| panic!("{e}: {stdout}"))
}

fn ok(output: Output) -> Value {
    assert!(
        output.status.success(),
        "exit {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    summary(&output)
}

fn listing_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for o in common::ONTOLOGIES {
        let tag = o.tag();
        std::fs::write(
            dir.path().join(format!("listing_0recipe1006_{tag}.xml")),
            common::listing_xml(o),
        )
        .unwrap();
    }
    dir
}

#[test]
fn listing_entity_is_149_short_of_the_threshold() {
    let corpus = listing_dir();
    let out = tempfile::tempdir().unwrap();
    let s = ok(foodsem(
        out.path(),
        &[
            "analyze",
            "--corpus-dir",
            corpus.path().to_str().unwrap(),
            "--ontology",
            "foodon",
            "--threshold",
            "150",
        ],
    ));
    assert_eq!(s["pairs"], 1);
    let table = std::fs::read_to_string(out.path().join("distribution_foodon.tsv")).unwrap();
    let row = table
        .lines()
        .find(|l| l.contains("03301889"))
        .unwrap_or_else(|| panic!("{table}"));
    assert_eq!(row, "foodon\tFOODON\t03301889\t1\t149");
}

#[test]
fn convert_writes_sequences_and_flat_text() {
    let corpus = listing_dir();
    let out = tempfile::tempdir().unwrap();
    let s = ok(foodsem(
        out.path(),
        &["convert", "--corpus-dir", corpus.path().to_str().unwrap()],
    ));
    assert_eq!(
        (s["sequences"].as_u64(), s["pairs"].as_u64()),
        (Some(1), Some(4))
    );
    let flat = std::fs::read_to_string(out.path().join("ir_dataset.txt")).unwrap();
    assert_eq!(flat.lines().count(), 1);
    assert_eq!(flat.matches("[INST]").count(), 4);
    let ir = std::fs::read_to_string(out.path().join("ir_dataset.jsonl")).unwrap();
    assert_eq!(ir.lines().count(), 4);
}

#[test]
fn pipeline_is_deterministic_and_accounts_for_every_pair() {
    let toy = common::toy_dir();
    let t = toy.to_str().unwrap();
    let lexicon = format!("{t}/lexicon.tsv");
    let run = |out: &Path| {
        ok(foodsem(
            out,
            &[
                "--seed",
                "9",
                "pipeline",
                "--corpus-dir",
                t,
                "--threshold",
                "12",
                "--lexicon",
                &lexicon,
            ],
        ))
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (sa, sb) = (run(a.path()), run(b.path()));
    assert_eq!(sa, sb);
    for name in [
        "ir_dataset.jsonl",
        "artificial.jsonl",
        "folds/plan.jsonl",
        "folds/fold_3/train.txt",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let artificial: u64 = sa["artificial_pairs"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    let sequences = sa["cafeteria_sequences"].as_u64().unwrap();
    let pairs = sa["cafeteria_pairs"].as_u64().unwrap();
    assert_eq!(sa["total_instances"].as_u64(), Some(sequences + artificial));
    assert_eq!(sa["total_pairs"].as_u64(), Some(pairs + artificial));
    // one repeated recipe in the toy corpus is dropped
    assert_eq!(sequences, 52);
    let tested: u64 = sa["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["test"].as_u64().unwrap())
        .sum();
    assert_eq!(tested, pairs + artificial);
}

#[test]
fn gold_scored_against_itself_is_perfect() {
    let toy = common::toy_dir();
    let out = tempfile::tempdir().unwrap();
    ok(foodsem(
        out.path(),
        &[
            "pipeline",
            "--corpus-dir",
            toy.to_str().unwrap(),
            "--threshold",
            "5",
        ],
    ));
    let test = out.path().join("folds/fold_1/test.jsonl");
    let t = test.to_str().unwrap();
    let s = ok(foodsem(
        out.path(),
        &["eval", "--gold", t, "--predictions", t, "--fold-index", "1"],
    ));
    let rows = s["rows"].as_array().unwrap();
    assert!(rows.len() >= 4);
    for row in rows {
        assert_eq!(row["f1"], 1.0, "{row}");
    }

    ok(foodsem(
        out.path(),
        &["simulate", "--test", t, "--p-empty", "1"],
    ));
    let sim = out.path().join("simulated.jsonl");
    let s = ok(foodsem(
        out.path(),
        &["eval", "--gold", t, "--predictions", sim.to_str().unwrap()],
    ));
    for row in s["rows"].as_array().unwrap() {
        assert_eq!(row["f1"], 0.0, "{row}");
        assert_eq!(row["non_meaningful"], row["instances"], "{row}");
    }
}

#[test]
fn prompts_and_run_against_a_stub_endpoint() {
    let toy = common::toy_dir();
    let out = tempfile::tempdir().unwrap();
    ok(foodsem(
        out.path(),
        &[
            "pipeline",
            "--corpus-dir",
            toy.to_str().unwrap(),
            "--threshold",
            "5",
        ],
    ));
    let fold = out.path().join("folds/fold_0");
    let (train, test) = (fold.join("train.jsonl"), fold.join("test.jsonl"));
    let s = ok(foodsem(
        out.path(),
        &[
            "prompts",
            "--train",
            train.to_str().unwrap(),
            "--test",
            test.to_str().unwrap(),
            "--n-shot",
            "1",
        ],
    ));
    let n = s["prompts"].as_u64().unwrap();
    assert!(n > 0);

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let payload =
                    r#"{"choices":[{"message":{"content":"Sure: salt - FOODON_03316427."}}]}"#;
                let reply = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    let prompts = out.path().join("prompts_1shot.jsonl");
    let s = ok(foodsem(
        out.path(),
        &[
            "run",
            "--prompts",
            prompts.to_str().unwrap(),
            "--endpoint-url",
            &url,
            "--max-in-flight",
            "3",
        ],
    ));
    assert_eq!(s["completions"].as_u64(), Some(n));
    assert_eq!(s["transport_failures"], 0);
    let transcript = std::fs::read_to_string(out.path().join("transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().count() as u64, n);
    assert!(transcript.contains("FOODON_03316427"));
}

#[test]
fn exit_codes_separate_configuration_from_validation() {
    let out = tempfile::tempdir().unwrap();
    // unknown subcommand and missing endpoint are configuration problems
    assert_eq!(foodsem(out.path(), &["frobnicate"]).status.code(), Some(2));
    let prompts = out.path().join("p.jsonl");
    std::fs::write(&prompts, "").unwrap();
    assert_eq!(
        foodsem(out.path(), &["run", "--prompts", prompts.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        foodsem(
            out.path(),
            &[
                "run",
                "--prompts",
                prompts.to_str().unwrap(),
                "--endpoint-url",
                "ftp://x"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        foodsem(out.path(), &["folds", "--ir", "/definitely/not/here.jsonl"])
            .status
            .code(),
        Some(2)
    );

    // malformed inputs are validation failures
    let corpus = tempfile::tempdir().unwrap();
    std::fs::write(
        corpus.path().join("broken_foodon.xml"),
        "<collection><document>",
    )
    .unwrap();
    let bad = foodsem(
        out.path(),
        &["convert", "--corpus-dir", corpus.path().to_str().unwrap()],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(summary(&bad)["error"]
        .as_str()
        .unwrap()
        .contains("broken_foodon.xml"));

    let ir = out.path().join("bad.jsonl");
    std::fs::write(&ir, "{\"not\": \"a pair\"}\n").unwrap();
    let bad = foodsem(out.path(), &["folds", "--ir", ir.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(summary(&bad)["error"].as_str().unwrap().contains("line 1"));
}
