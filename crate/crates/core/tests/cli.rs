mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{Reply, StubServer};
use ctmap::llm_bridge::parse_route_text;

fn ctmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctmap")).args(args).output().expect("spawn ctmap")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-env + coverage on a small city; returns (dir, scene, map).
fn setup() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    let map = dir.path().join("map.ctmp");
    let o = ctmap(&[
        "gen-env", "--seed", "42", "--width", "120", "--height", "90", "--blocks", "8", "--block-min", "6",
        "--block-max", "18", "--stations", "3", "--out", p(&scene),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ctmap(&["coverage", "--scene", p(&scene), "--out", p(&map), "--nlos-penalty", "25", "--exponent", "2.0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (dir, scene, map)
}

#[test]
fn scene_and_coverage() {
    let (dir, scene, map) = setup();
    let again = dir.path().join("again.json");
    ctmap(&[
        "gen-env", "--seed", "42", "--width", "120", "--height", "90", "--blocks", "8", "--block-min", "6",
        "--block-max", "18", "--stations", "3", "--out", p(&again),
    ]);
    assert_eq!(std::fs::read(&scene).unwrap(), std::fs::read(&again).unwrap());
    let m = ctmap::propagation::load_coverage(&map).unwrap();
    assert_eq!((m.cols, m.rows), (120, 90));
    let prov = std::fs::read_to_string(ctmap::propagation::provenance_path(&map)).unwrap();
    assert!(prov.contains("\"nlos_penalty_db\": 25.0"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"width_m\": \"wide\"}").unwrap();
    let o = ctmap(&["coverage", "--scene", p(&bad), "--out", p(&dir.path().join("x.ctmp"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
}

#[test]
fn route_command() {
    let (dir, _, map) = setup();
    let free = |col: usize, row: usize| {
        let m = ctmap::propagation::load_coverage(&map).unwrap();
        !m.is_blocked_cell(col, row)
    };
    let (s, d) = [(2, 2), (3, 3), (4, 2), (2, 4)]
        .into_iter()
        .find(|&(c, r)| free(c, r))
        .zip([(110, 80), (112, 84), (100, 85), (115, 70)].into_iter().find(|&(c, r)| free(c, r)))
        .unwrap();
    let from = format!("{},{}", s.0, s.1);
    let to = format!("{},{}", d.0, d.1);
    let svg = dir.path().join("route.svg");
    let o = ctmap(&["route", "--map", p(&map), "--from", &from, "--to", &to, "--planner", "oracle", "--svg", p(&svg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let oracle = parse_route_text(stdout(&o).trim()).unwrap();
    assert!(roxmltree::Document::parse(&std::fs::read_to_string(&svg).unwrap()).is_ok());
    let o = ctmap(&["route", "--map", p(&map), "--from", &from, "--to", &to, "--planner", "shortest"]);
    let short = parse_route_text(stdout(&o).trim()).unwrap();
    assert!(short.total_hops.unwrap() <= oracle.total_hops.unwrap());
    let o = ctmap(&["route", "--map", p(&map), "--from", &from, "--to", &from]);
    assert!(o.status.success());
    assert_eq!(parse_route_text(stdout(&o).trim()).unwrap().cells.len(), 1);
    let o = ctmap(&["route", "--map", p(&map), "--from", "500,500", "--to", &from]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_and_eval() {
    let (dir, _, map) = setup();
    let out = dir.path().join("ds");
    let args = ["dataset", "--map", p(&map), "--n", "50", "--seed", "7", "--split", "0.8", "--min-separation", "20", "--out-dir", p(&out)];
    assert!(ctmap(&args).status.success());
    let lines = |name: &str| std::fs::read_to_string(out.join(name)).unwrap().lines().count() - 1;
    assert_eq!((lines("dataset.jsonl"), lines("train.jsonl"), lines("test.jsonl")), (50, 40, 10));
    let first = std::fs::read(out.join("test.jsonl")).unwrap();
    assert!(ctmap(&args).status.success());
    assert_eq!(first, std::fs::read(out.join("test.jsonl")).unwrap());
    let zero = ctmap(&["dataset", "--map", p(&map), "--n", "0", "--out-dir", p(&out)]);
    assert_eq!(zero.status.code(), Some(2));

    let test = out.join("dataset.jsonl");
    let report = dir.path().join("report.json");
    let o = ctmap(&["eval", "--planner", "oracle", "--test", p(&test), "--map", p(&map), "--report", p(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert_eq!(table.lines().next().unwrap(), "Model,Coverage (%),Optimality (%),Success (%),Edit Dist.");
    assert!(table.lines().nth(1).unwrap().ends_with(",100.0,100.0,100.0,0.00"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["per_query"].as_array().unwrap().len(), 50);

    let o = ctmap(&["eval", "--planner", "mock:corrupt:1", "--test", p(&test), "--map", p(&map)]);
    assert!(stdout(&o).lines().nth(1).unwrap().contains(",0.0,"), "{}", stdout(&o));
    let o = ctmap(&["eval", "--planner", "wizard", "--test", p(&test), "--map", p(&map)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_against_remote_stub() {
    let (dir, _, map) = setup();
    let out = dir.path().join("ds");
    ctmap(&["dataset", "--map", p(&map), "--n", "5", "--seed", "1", "--min-separation", "20", "--out-dir", p(&out)]);
    let test = out.join("dataset.jsonl");

    // a model that never answers in the grammar: every query fails to parse
    let server = StubServer::start(vec![Reply::ok_content("I cannot do that.")]);
    let report = dir.path().join("r.json");
    let o = ctmap(&[
        "eval", "--planner", "remote", "--endpoint", &server.url, "--model", "m", "--test", p(&test), "--map",
        p(&map), "--report", p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(",0.0,0.0,0.0,1.00"), "{}", stdout(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["n_parsed"], 0);
    assert!(json["per_query"][0]["parse_error"].is_string());

    let denied = StubServer::start(vec![Reply::status(401)]);
    let o = ctmap(&[
        "eval", "--planner", "remote", "--endpoint", &denied.url, "--test", p(&test), "--map", p(&map),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(denied.hits(), 1);
}

#[test]
fn render_three_routes() {
    let (dir, _, map) = setup();
    let m = ctmap::propagation::load_coverage(&map).unwrap();
    let free: Vec<(usize, usize)> = (0..m.rows)
        .flat_map(|r| (0..m.cols).map(move |c| (c, r)))
        .filter(|&(c, r)| !m.is_blocked_cell(c, r))
        .collect();
    let mut specs = Vec::new();
    for (i, color) in ["red", "orange", "purple"].iter().enumerate() {
        let s = free[i * 37];
        let d = free[free.len() - 1 - i * 53];
        let o = ctmap(&["route", "--map", p(&map), "--from", &format!("{},{}", s.0, s.1), "--to", &format!("{},{}", d.0, d.1)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let f = dir.path().join(format!("r{i}.txt"));
        std::fs::write(&f, stdout(&o)).unwrap();
        specs.push(format!("{}:{color}", p(&f)));
    }
    let svg = dir.path().join("fig.svg");
    let mut args = vec!["render", "--map", p(&map), "--out", p(&svg)];
    for s in &specs {
        args.extend(["--route", s.as_str()]);
    }
    let o = ctmap(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let strokes: Vec<&str> = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .filter_map(|n| n.attribute("stroke"))
        .collect();
    assert_eq!(strokes, ["red", "orange", "purple"]);
    let cells: usize = doc
        .descendants()
        .filter_map(|n| n.attribute("data-cells"))
        .map(|v| v.parse::<usize>().unwrap())
        .sum();
    assert_eq!(cells, 120 * 90);

    let outside = dir.path().join("outside.txt");
    std::fs::write(&outside, "PATH: (500,1): -50 dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -50.00").unwrap();
    let spec = format!("{}:red", p(&outside));
    let o = ctmap(&["render", "--map", p(&map), "--out", p(&svg), "--route", &spec]);
    assert_eq!(o.status.code(), Some(2));
}
