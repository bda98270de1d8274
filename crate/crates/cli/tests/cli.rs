use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use regionret_core::format::{self, EmbeddingRecord, ResultRecord};
use regionret_core::{GridGeometry, PatchGrid};
use serde_json::Value;
use tempfile::TempDir;

fn regionret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regionret"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small planted corpus: 6 documents, 12 queries, ingested.
fn corpus(extra: &[&str]) -> TempDir {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["synth", "--out", p(dir.path()), "--docs", "6", "--queries", "12"];
    args.extend_from_slice(extra);
    let o = regionret(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = regionret(&["ingest", p(&dir.path().join("docs"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn search(dir: &Path, extra: &[&str]) -> Output {
    let docs = dir.join("docs");
    let queries = dir.join("queries");
    let mut args = vec!["search", "--manifest", p(&docs), "--queries", p(&queries)];
    args.extend_from_slice(extra);
    regionret(&args)
}

fn records(o: &Output) -> Vec<ResultRecord> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write_doc(dir: &Path, name: &str, id: &str) {
    let g = PatchGrid::new(id, GridGeometry::exact(2, 2, 10, 10), vec![vec![1.0, 0.0, 0.5]; 4]).unwrap();
    format::write_embedding_file(&EmbeddingRecord::Document(g), &dir.join(name)).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&regionret(&["--help"])), 0);
    assert_eq!(code(&regionret(&["--version"])), 0);
    assert_eq!(code(&regionret(&["search", "--help"])), 0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(code(&regionret(&["frobnicate"])), 1);
    assert_eq!(code(&regionret(&[])), 1);
}

#[test]
fn ingest_three_valid_docs() {
    let dir = TempDir::new().unwrap();
    for i in 0..3 {
        write_doc(dir.path(), &format!("d{i}.rrag"), &format!("d{i}"));
    }
    let o = regionret(&["ingest", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["docs"].as_array().unwrap().len(), 3);
    assert_eq!(m["dim"], 3);
}

#[test]
fn ingest_reports_corrupt_file() {
    let dir = TempDir::new().unwrap();
    write_doc(dir.path(), "good.rrag", "good");
    fs::write(dir.path().join("broken.rrag"), b"RRAG\x01\x00garbage").unwrap();
    let o = regionret(&["ingest", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("invalid\tbroken.rrag"), "{}", stdout(&o));
    assert!(stdout(&o).contains("ok\tgood.rrag"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn ingest_rejects_duplicate_ids_and_mixed_dimensions() {
    let dir = TempDir::new().unwrap();
    write_doc(dir.path(), "a.rrag", "same");
    write_doc(dir.path(), "b.rrag", "same");
    let o = regionret(&["ingest", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("duplicate doc id"));

    let dir = TempDir::new().unwrap();
    write_doc(dir.path(), "a.rrag", "a");
    let g = PatchGrid::new("b", GridGeometry::exact(1, 1, 10, 10), vec![vec![1.0]]).unwrap();
    format::write_embedding_file(&EmbeddingRecord::Document(g), &dir.path().join("b.rrag")).unwrap();
    assert_eq!(code(&regionret(&["ingest", p(dir.path())])), 1);
}

#[test]
fn ingest_empty_dir_fails() {
    let dir = TempDir::new().unwrap();
    let o = regionret(&["ingest", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty corpus"));
}

#[test]
fn ingest_missing_dir_is_io_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&regionret(&["ingest", p(&dir.path().join("nope"))])), 2);
}

#[test]
fn search_finds_planted_doc_first() {
    let dir = corpus(&[]);
    let o = search(dir.path(), &["--eta", "0.5", "--k", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = records(&o);
    assert_eq!(recs.len(), 12);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r.query_id, format!("q{i:04}"));
        assert_eq!(r.ranked.len(), 3);
        assert_eq!(r.ranked[0].doc_id, format!("doc{:04}", i % 6));
        assert_eq!(r.regions[0].regions.len(), 1);
    }
}

#[test]
fn search_high_eta_gives_empty_regions() {
    let dir = corpus(&[]);
    let o = search(dir.path(), &["--eta", "1.01"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for r in records(&o) {
        assert!(r.regions.iter().all(|d| d.regions.is_empty()));
        assert_eq!(r.token_report.bbox, 0);
    }
}

#[test]
fn search_rejects_bad_flags() {
    let dir = corpus(&[]);
    assert_eq!(code(&search(dir.path(), &["--eta", "0.5", "--k", "0"])), 1);
    assert_eq!(code(&search(dir.path(), &["--eta", "0.5", "--radius", "0"])), 1);
    assert_eq!(code(&search(dir.path(), &["--eta", "nan"])), 1);
    let o = search(dir.path(), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--eta"));
}

#[test]
fn search_missing_manifest_is_io_error() {
    let dir = TempDir::new().unwrap();
    let q = corpus(&[]);
    let o = regionret(&[
        "search",
        "--manifest",
        p(&dir.path().join("manifest.json")),
        "--queries",
        p(&q.path().join("queries")),
        "--eta",
        "0.5",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn search_dimension_mismatch_names_query() {
    let dir = corpus(&[]);
    let other = corpus(&["--dim", "30"]);
    let o = regionret(&[
        "search",
        "--manifest",
        p(&dir.path().join("docs")),
        "--queries",
        p(&other.path().join("queries/q0003.rrag")),
        "--eta",
        "0.5",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("q0003"), "{}", stderr(&o));
}

#[test]
fn search_output_independent_of_thread_count() {
    let dir = corpus(&[]);
    let one = search(dir.path(), &["--eta", "0.3", "--threads", "1"]);
    let four = search(dir.path(), &["--eta", "0.3", "--threads", "4"]);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn search_keeps_query_argument_order() {
    let dir = corpus(&[]);
    let q = |n: &str| dir.path().join("queries").join(n);
    let (b, a) = (q("q0005.rrag"), q("q0002.rrag"));
    let o = regionret(&[
        "search",
        "--manifest",
        p(&dir.path().join("docs")),
        "--queries",
        p(&b),
        p(&a),
        "--eta",
        "0.5",
    ]);
    let ids: Vec<String> = records(&o).into_iter().map(|r| r.query_id).collect();
    assert_eq!(ids, ["q0005", "q0002"]);
}

#[test]
fn region_cap_limits_total_regions() {
    let dir = corpus(&[]);
    let o = search(
        dir.path(),
        &["--eta", "-1", "--radius", "1", "--region-cap", "2", "--k", "5"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for r in records(&o) {
        let total: usize = r.regions.iter().map(|d| d.regions.len()).sum();
        assert_eq!(total, 2);
    }
}

#[test]
fn config_file_supplies_defaults() {
    let dir = corpus(&[]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "eta = 0.5\nk = 2\n").unwrap();
    let o = search(dir.path(), &["--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(records(&o).iter().all(|r| r.ranked.len() == 2));

    let o = search(dir.path(), &["--config", p(&cfg), "--k", "4"]);
    assert!(records(&o).iter().all(|r| r.ranked.len() == 4));

    fs::write(&cfg, "etta = 0.5\n").unwrap();
    assert_eq!(code(&search(dir.path(), &["--config", p(&cfg)])), 1);
}

fn eval_fixture(dir: &Path, results: &str, judgments: &str, extra: &[&str]) -> Output {
    let (r, j) = (dir.join("results.jsonl"), dir.join("judgments.jsonl"));
    fs::write(&r, results).unwrap();
    fs::write(&j, judgments).unwrap();
    let mut args = vec!["eval", "--results", p(&r), "--judgments", p(&j)];
    args.extend_from_slice(extra);
    regionret(&args)
}

fn result_line(q: &str, docs: &[&str]) -> String {
    let ranked: Vec<Value> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| serde_json::json!({"doc_id": d, "score": 1.0 - i as f64 * 0.1}))
        .collect();
    serde_json::json!({
        "query_id": q,
        "ranked": ranked,
        "regions": [],
        "token_report": {"image": 0, "bbox": 0, "per_doc": []},
    })
    .to_string()
        + "\n"
}

fn metric(v: &Value, k: u64, name: &str) -> f64 {
    v["metrics"].as_array().unwrap().iter().find(|m| m["k"] == k).unwrap()[name]
        .as_f64()
        .unwrap()
}

#[test]
fn eval_perfect_ranking_scores_one() {
    let dir = TempDir::new().unwrap();
    let results = result_line("a", &["A", "X"]) + &result_line("b", &["B", "X"]);
    let judg = "{\"query_id\":\"a\",\"relevant\":[\"A\"]}\n{\"query_id\":\"b\",\"relevant\":[\"B\"]}\n";
    let o = eval_fixture(dir.path(), &results, judg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["evaluated"], 2);
    for k in [1, 2, 5, 10] {
        assert_eq!(metric(&v, k, "recall"), 1.0);
        assert_eq!(metric(&v, k, "ndcg"), 1.0);
    }
}

#[test]
fn eval_relevant_at_rank_two() {
    let dir = TempDir::new().unwrap();
    let results = result_line("a", &["X", "A"]) + &result_line("b", &["Y", "B", "Z"]);
    let judg = "{\"query_id\":\"a\",\"relevant\":[\"A\"]}\n{\"query_id\":\"b\",\"relevant\":[\"B\"]}\n";
    let o = eval_fixture(dir.path(), &results, judg, &["--per-query"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(metric(&v, 1, "recall"), 0.0);
    assert_eq!(metric(&v, 2, "recall"), 1.0);
    assert!((metric(&v, 2, "ndcg") - 1.0 / 3f64.log2()).abs() < 1e-12);
    assert!((metric(&v, 2, "ndcg") - 0.63093).abs() < 1e-5);
    assert_eq!(v["per_query"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_excludes_queries_without_judgment() {
    let dir = TempDir::new().unwrap();
    let results = result_line("a", &["A"]) + &result_line("orphan", &["B"]);
    let o = eval_fixture(dir.path(), &results, "{\"query_id\":\"a\",\"relevant\":[\"A\"]}\n", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("orphan"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["evaluated"], 1);
    assert_eq!(v["missing_judgments"][0], "orphan");
}

#[test]
fn eval_empty_judgments_fails() {
    let dir = TempDir::new().unwrap();
    let o = eval_fixture(dir.path(), &result_line("a", &["A"]), "", &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_rejects_duplicate_ranked_ids() {
    let dir = TempDir::new().unwrap();
    let o = eval_fixture(
        dir.path(),
        &result_line("a", &["A", "A"]),
        "{\"query_id\":\"a\",\"relevant\":[\"A\"]}\n",
        &[],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn search_then_eval_on_planted_corpus() {
    let dir = corpus(&[]);
    let res = dir.path().join("res.jsonl");
    assert_eq!(code(&search(dir.path(), &["--eta", "0.5", "--output", p(&res)])), 0);
    let o = regionret(&[
        "eval",
        "--results",
        p(&res),
        "--judgments",
        p(&dir.path().join("judgments.jsonl")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["evaluated"], 12);
    assert_eq!(metric(&v, 1, "recall"), 1.0);
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "docs", "queries"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for e in entries.into_iter().filter(|e| e.is_file()) {
            out.push((
                format!("{sub}/{}", e.file_name().unwrap().to_string_lossy()),
                fs::read(&e).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&regionret(&["synth", "--out", p(d.path()), "--seed", "7"])), 0);
    }
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 3 + 50 + 100);
    assert_eq!(ta, tb);
}

#[test]
fn synth_infeasible_geometry_fails() {
    let dir = TempDir::new().unwrap();
    let o = regionret(&["synth", "--out", p(dir.path()), "--rows", "2", "--block-rows", "3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not fit"));
}

#[test]
fn loss_check_defaults_pass() {
    let o = regionret(&["loss-check"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], true);
    let single = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "global_loss_single_pair_zero")
        .unwrap();
    assert_eq!(single["worst_error"], 0.0);
}

#[test]
fn loss_check_catches_sign_flip() {
    let o = regionret(&["loss-check", "--instances", "5", "--inject-sign-flip"]);
    assert_eq!(code(&o), 1);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], false);
}

fn read_pgm(path: &Path) -> (usize, usize, Vec<u32>) {
    let text = fs::read_to_string(path).unwrap();
    let mut tok = text.split_whitespace();
    assert_eq!(tok.next(), Some("P2"));
    let w: usize = tok.next().unwrap().parse().unwrap();
    let h: usize = tok.next().unwrap().parse().unwrap();
    assert_eq!(tok.next(), Some("255"));
    (w, h, tok.map(|t| t.parse().unwrap()).collect())
}

fn render(dir: &Path, query: &str, doc: &str, out: &Path) -> Output {
    regionret(&[
        "render",
        "--manifest",
        p(&dir.join("docs")),
        "--query",
        p(&dir.join("queries").join(format!("{query}.rrag"))),
        "--doc",
        doc,
        "--eta",
        "0.5",
        "--out",
        p(out),
    ])
}

#[test]
fn render_planted_block_is_bright() {
    let dir = corpus(&["--noise", "0"]);
    let out = dir.path().join("r");
    let o = render(dir.path(), "q0000", "doc0000", &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let planted: Value = serde_json::from_str(
        fs::read_to_string(dir.path().join("planted.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    let bbox: Vec<usize> = planted["bbox"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap() as usize)
        .collect();
    let (w, h, px) = read_pgm(&dir.path().join("r.pgm"));
    assert_eq!((w, h), (8, 8));
    for (k, &v) in px.iter().enumerate() {
        let (row, col) = (k / w, k % w);
        let inside = col * 28 >= bbox[0] && col * 28 < bbox[2] && row * 28 >= bbox[1] && row * 28 < bbox[3];
        assert_eq!(v, if inside { 255 } else { 128 }, "cell {row},{col}");
    }
    let (_, _, masked) = read_pgm(&dir.path().join("r.masked.pgm"));
    assert_eq!(masked.iter().filter(|&&v| v == 255).count(), 4);
    assert!(masked.iter().all(|&v| v == 255 || v == 0));

    let regions = fs::read_to_string(dir.path().join("r.regions.txt")).unwrap();
    let line = regions.lines().find(|l| !l.starts_with('#')).unwrap();
    let coords: Vec<usize> = line.split(' ').take(4).map(|t| t.parse().unwrap()).collect();
    assert_eq!(coords, bbox);
}

#[test]
fn render_zero_saliency_is_mid_gray() {
    // doc0000 hosts q0000 and q0006 only, so q0001 scores 0 everywhere.
    let dir = corpus(&[]);
    let out = dir.path().join("z");
    assert_eq!(code(&render(dir.path(), "q0001", "doc0000", &out)), 0);
    let (_, _, px) = read_pgm(&dir.path().join("z.pgm"));
    assert!(px.iter().all(|&v| v == 128));
    let regions = fs::read_to_string(dir.path().join("z.regions.txt")).unwrap();
    assert!(regions.lines().all(|l| l.starts_with('#')));
}

#[test]
fn render_unknown_doc_fails() {
    let dir = corpus(&[]);
    let o = render(dir.path(), "q0000", "doc9999", &dir.path().join("x"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("doc9999"));
}
