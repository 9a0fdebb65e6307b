use std::net::TcpListener;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use tungstenite::Message;

fn groove(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groove"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("groove runs")
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn render_writes_ndjson_log() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("ev.txt");
    std::fs::write(&events, "0 0 0.9\n1.0 0 0.5\n{\"at_s\": 1.5, \"type\": \"crossfade\", \"alpha\": 2.0}\n").unwrap();
    let out_file = dir.path().join("log.ndjson");
    let out = groove(&[
        "render",
        "--events",
        events.to_str().unwrap(),
        "--bars",
        "3",
        "--alpha",
        "0.5",
        "--tau",
        "0.5",
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_file).unwrap();
    let recs: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = recs.iter().map(|r| r["type"].as_str().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "pattern").count(), 3);
    // the out-of-range crossfade is logged, not fatal
    let err = recs.iter().find(|r| r["type"] == "error").unwrap();
    assert_eq!(err["code"], "malformed_message");
    assert_eq!(*kinds.last().unwrap(), "metrics");
}

#[test]
fn render_defaults_to_stdout_and_is_stable() {
    let a = groove(&["render", "--bars", "2", "--seed", "9", "--mode", "harmony"]);
    let b = groove(&["render", "--bars", "2", "--seed", "9", "--mode", "harmony"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let recs = lines(&a);
    // no table was given, so every harmonic onset is skipped
    let m = recs.last().unwrap();
    assert_eq!(m["type"], "metrics");
    assert!(!recs.iter().any(|r| r["type"] == "note"));
}

#[test]
fn render_with_markov_table_emits_notes() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = groove_core::markov::MarkovTable::new();
    for p in [60, 62, 64, 65, 67, 65, 64, 62] {
        t.observe(p, 0.5).unwrap();
    }
    let table = dir.path().join("t.json");
    std::fs::write(&table, t.to_json()).unwrap();
    let out = groove(&[
        "render", "--bars", "2", "--mode", "harmony", "--alpha", "0.5", "--markov", table.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let notes: Vec<_> = lines(&out).into_iter().filter(|r| r["type"] == "note").collect();
    assert!(!notes.is_empty());
    assert!(notes.iter().all(|n| [60, 62, 64, 65, 67].contains(&n["pitch"].as_u64().unwrap())));
}

#[test]
fn simulate_cv_emits_every_sample() {
    let out = groove(&["simulate-cv", "--bars", "1", "--rate", "500"]);
    assert!(out.status.success());
    let recs = lines(&out);
    // 2 s bar, 4 channels, 500 Hz
    assert_eq!(recs.len(), 4000);
    assert!(recs.iter().all(|r| r["type"] == "cv"));
    let gates = recs.iter().filter(|r| r["gate"] == true).count();
    assert_eq!(gates % 5, 0);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = groove(&["render", "--mode", "warp"]);
    assert!(!out.status.success());
    let out = groove(&["render", "--events", "/nonexistent/file"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/file"));
    let out = groove(&["eval", "--model", "/nonexistent/w.bin"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes() {
    let out = groove(&["gradcheck"]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["max_relative_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.bin");
    let out = groove(&["train", "--out", w.to_str().unwrap(), "--epochs", "1", "--corpus-size", "40", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained: Value = serde_json::from_slice(&out.stdout).unwrap();
    let out = groove(&["eval", "--model", w.to_str().unwrap(), "--corpus-seed", "3", "--corpus-size", "40"]);
    assert!(out.status.success());
    let evald: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(trained, evald);
    let out = groove(&["render", "--model", w.to_str().unwrap(), "--bars", "1"]);
    assert!(out.status.success());
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

type Socket = tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>;

fn connect(port: u16) -> Socket {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        match tungstenite::connect(format!("ws://127.0.0.1:{port}")) {
            Ok((ws, _)) => return ws,
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => panic!("cannot connect: {e}"),
        }
    }
}

fn next_of(ws: &mut Socket, kind: &str) -> Value {
    loop {
        let Message::Text(t) = ws.read().unwrap() else { continue };
        let v: Value = serde_json::from_str(&t).unwrap();
        if v["type"] == kind {
            return v;
        }
    }
}

fn send(ws: &mut Socket, text: &str) -> Value {
    ws.send(Message::Text(text.into())).unwrap();
    loop {
        let v = next_of_any(ws);
        if v["type"] == "ack" || v["type"] == "error" {
            return v;
        }
    }
}

fn next_of_any(ws: &mut Socket) -> Value {
    loop {
        if let Message::Text(t) = ws.read().unwrap() {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[test]
fn serve_acknowledges_scripted_controls() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let child = Command::new(env!("CARGO_BIN_EXE_groove"))
        .args(["serve", "--port", &port.to_string()])
        .env("RUST_LOG", "error")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _server = Server(child);
    let mut ws = connect(port);

    let hello = next_of(&mut ws, "ack");
    assert_eq!(hello["bpm"], 120.0);

    let a = send(&mut ws, r#"{"type":"set_position","alpha":0.2,"tau":0.4}"#);
    assert_eq!((a["alpha"].as_f64(), a["tau"].as_f64()), (Some(0.2), Some(0.4)));
    let a = send(&mut ws, r#"{"type":"crossfade","alpha":0.65}"#);
    assert_eq!((a["alpha"].as_f64(), a["tau"].as_f64()), (Some(0.65), Some(0.4)));
    let mut last = Value::Null;
    for t in ["100.0", "100.5", "101.0", "101.5"] {
        last = send(&mut ws, &format!(r#"{{"type":"tap","time_s":{t}}}"#));
    }
    assert_eq!(last["bpm"].as_f64(), Some(120.0));
    let a = send(&mut ws, r#"{"type":"set_tempo","bpm":96}"#);
    assert_eq!(a["bpm"].as_f64(), Some(96.0));

    let e = send(&mut ws, r#"{"type":"set_density","group":0,"value":"lots"}"#);
    assert_eq!(e["type"], "error");
    assert!(e["detail"].as_str().unwrap().contains("value"));
    let e = send(&mut ws, "not json");
    assert_eq!(e["type"], "error");

    let a = send(&mut ws, r#"{"type":"onset_in","velocity":0.8}"#);
    assert_eq!(a["buffer_events"], 1);

    let p = next_of(&mut ws, "pattern");
    assert_eq!(p["hits"].as_array().unwrap().len(), 32);
    let t = next_of(&mut ws, "transport");
    assert_eq!(t["bpm"], 96.0);
    let m = next_of(&mut ws, "metrics");
    assert!(m["deadline_misses"].is_u64());
}
