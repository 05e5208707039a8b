use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn pocrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pocrm"))
        .args(args)
        .current_dir(root())
        .env("RUST_LOG", "warn")
        .env_remove("POCRM_STORE")
        .env_remove("POCRM_TOKEN")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = pocrm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_reproducible_and_writes_one_row_per_scenario_and_method() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "simulate",
            "--scenarios",
            "data/scenarios/01_diagonal_mtd.json",
            "data/scenarios/05_all_toxic.json",
            "--reps",
            "6",
            "--seed",
            "7",
            "--method",
            "both",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        out
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "0"));
    assert_eq!(digest(&a.join("oc.csv")), digest(&b.join("oc.csv")));
    assert_eq!(digest(&a.join("oc.csv")), digest(&c.join("oc.csv")));
    assert_eq!(digest(&a.join("oc.json")), digest(&b.join("oc.json")));

    let csv = std::fs::read_to_string(a.join("oc.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[0].starts_with("label,method,n_reps,seed"));
    assert!(lines[1].starts_with("01_diagonal_mtd,selection,6,7"));
    assert!(lines[2].starts_with("01_diagonal_mtd,averaging,6,7"));
    let json = read_json(&a.join("oc.json"));
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert_eq!(json["means"].as_array().unwrap().len(), 2);

    ok(&[
        "simulate",
        "--scenarios",
        "data/scenarios/01_diagonal_mtd.json",
        "--reps",
        "6",
        "--method",
        "averaging",
        "--out",
        tmp.path().join("d").to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(tmp.path().join("d/oc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn simulate_rejects_bad_input() {
    let out = pocrm(&["simulate", "--scenarios", "data/scenarios", "--reps", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--reps"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"rows": 4, "cols": 4}"#).unwrap();
    let out = pocrm(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--scenarios",
        "data/scenarios",
        "--reps",
        "2",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // 3x2 config against a 4x4 scenario
    let out = pocrm(&[
        "simulate",
        "--config",
        "data/configs/conduct_3x2.json",
        "--scenarios",
        "data/scenarios/01_diagonal_mtd.json",
        "--reps",
        "2",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn replay_matches_golden_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("replay");
    ok(&["replay", "--out", out.to_str().unwrap()]);
    for f in [
        "sequences.json",
        "selection.json",
        "averaging.json",
        "summary.json",
        "selection_coherency.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let golden = read_json(&root().join("data/golden/replay_seed1.json"));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["seed"], golden["seed"]);
    for s in summary["summaries"].as_array().unwrap() {
        let want = &golden["methods"][s["method"].as_str().unwrap()];
        for key in [
            "recommendation",
            "coherency_events",
            "estimation_events",
            "cohorts_with_estimation_events",
        ] {
            assert_eq!(s[key], want[key], "{} {key}", s["method"]);
        }
    }
    let count = |m: &str| golden["methods"][m]["coherency_events"].as_u64().unwrap();
    assert!(count("selection") >= count("averaging"));

    let record = read_json(&out.join("selection.json"));
    assert_eq!(record["cohorts"].as_array().unwrap().len(), 52);
    let csv_rows = std::fs::read_to_string(out.join("selection_coherency.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(csv_rows as u64, 1 + count("selection"));
}

#[test]
fn replay_seed_only_changes_tails() {
    let tmp = tempfile::tempdir().unwrap();
    let data = read_json(&root().join("data/case_study/synthetic_4x4.json"));
    let mut prefixes = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(seed);
        ok(&["replay", "--seed", seed, "--out", out.to_str().unwrap()]);
        prefixes.push(read_json(&out.join("sequences.json"))["sequences"].clone());
    }
    assert_ne!(prefixes[0], prefixes[1]);
    for d in data["doses"].as_array().unwrap() {
        let j = d["dose_index"].as_u64().unwrap() as usize - 1;
        let n = d["n"].as_u64().unwrap() as usize;
        for seqs in &prefixes {
            let ones = seqs[j].as_array().unwrap()[..n]
                .iter()
                .filter(|v| v.as_bool().unwrap())
                .count();
            assert_eq!(ones as u64, d["y"].as_u64().unwrap());
        }
    }

    // CSV input gives the same replay as JSON
    let csv_out = tmp.path().join("csv");
    ok(&[
        "replay",
        "--data",
        "data/case_study/synthetic_4x4.csv",
        "--out",
        csv_out.to_str().unwrap(),
    ]);
    assert_eq!(
        read_json(&csv_out.join("selection.json")),
        read_json(&tmp.path().join("1/selection.json"))
    );
}

#[test]
fn orderings_lists_and_validates() {
    let out = ok(&["orderings"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["orderings"]["orderings"].as_array().unwrap().len(),
        6
    );
    assert_eq!(report["distinct"], 5);
    assert_eq!(
        report["toxicity_sets"]["nu"][3],
        serde_json::json!([1, 2, 3])
    );

    let out = ok(&["orderings", "--rows", "2", "--cols", "2", "--dedup"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["orderings"]["orderings"].as_array().unwrap().len(),
        2
    );

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("orderings.json");
    std::fs::write(
        &bad,
        r#"{"rows": 2, "cols": 2, "orderings": [[1, 4, 2, 3], [1, 2, 3]]}"#,
    )
    .unwrap();
    let out = pocrm(&["orderings", "--file", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("invalid ordering"), "{stderr}");
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(store: &Path, token: Option<&str>) -> Self {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pocrm"));
        cmd.args(["serve", "--bind", "127.0.0.1:0"])
            .env("POCRM_STORE", store)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        match token {
            Some(t) => cmd.env("POCRM_TOKEN", t),
            None => cmd.env_remove("POCRM_TOKEN"),
        };
        let mut child = cmd.spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .expect("listening line")
            .to_string();
        Server { child, addr }
    }

    fn request(
        &self,
        method: &str,
        path: &str,
        body: Option<&str>,
        token: Option<&str>,
    ) -> (u16, String) {
        let mut stream = TcpStream::connect(&self.addr).unwrap();
        let body = body.unwrap_or("");
        let auth = token
            .map(|t| format!("Authorization: Bearer {t}\r\n"))
            .unwrap_or_default();
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\n{auth}Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            self.addr,
            body.len()
        )
        .unwrap();
        let mut raw = String::new();
        stream.read_to_string(&mut raw).unwrap();
        let status = raw[9..12].parse().unwrap();
        let body = raw
            .split_once("\r\n\r\n")
            .map(|(_, b)| b.to_string())
            .unwrap_or_default();
        (status, body)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn serve_persists_across_restarts() {
    let store = tempfile::tempdir().unwrap();
    let config = std::fs::read_to_string(root().join("data/configs/conduct_3x2.json")).unwrap();
    let token = Some("t0ken");

    let server = Server::start(store.path(), token);
    assert_eq!(
        server.request("POST", "/trials", Some(&config), None).0,
        401
    );
    let (status, body) = server.request("POST", "/trials", Some(&config), token);
    assert_eq!(status, 201, "{body}");
    let id = serde_json::from_str::<Value>(&body).unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string();
    let cohorts = format!("/trials/{id}/cohorts");
    for (dose, dlt) in [(1, false), (3, false), (4, true)] {
        let body = format!(r#"{{"dose": {dose}, "dlts": [{dlt}]}}"#);
        assert_eq!(server.request("POST", &cohorts, Some(&body), token).0, 200);
    }
    let next = r#"{"dose": 2, "dlts": [false]}"#;
    let preview = server.request("POST", &format!("{cohorts}?dryrun=1"), Some(next), token);
    let before = server.request("GET", &format!("/trials/{id}"), None, None);
    assert_eq!(before.0, 200);
    drop(server);

    let server = Server::start(store.path(), token);
    assert_eq!(
        server.request("GET", &format!("/trials/{id}"), None, None),
        before
    );
    let commit = server.request("POST", &cohorts, Some(next), token);
    assert_eq!(commit, preview);
    let view: Value = serde_json::from_str(
        &server
            .request("GET", &format!("/trials/{id}"), None, None)
            .1,
    )
    .unwrap();
    assert_eq!(view["cohorts_entered"], 4);
    assert_eq!(
        server
            .request("DELETE", &format!("/trials/{id}"), None, token)
            .0,
        204
    );
    drop(server);

    let server = Server::start(store.path(), None);
    assert_eq!(
        server
            .request("GET", &format!("/trials/{id}"), None, None)
            .0,
        404
    );
}
