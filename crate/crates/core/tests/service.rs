use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use splash::bc::{bc_fit, BcConfig, BcTarget, DemoDataset};
use splash::options::OptionId;
use splash::service::{replay_options, serve, ServeConfig};
use splash::sim::FieldConfig;
use splash::traj::{read_trajectories, Source};
use tungstenite::{connect, Message, WebSocket};

type Ws = WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>;

fn short_field() -> FieldConfig {
    FieldConfig {
        max_time_s: 20.0,
        ..FieldConfig::demo()
    }
}

fn start(dir: &std::path::Path, episodes: usize) -> (String, Arc<AtomicBool>, thread::JoinHandle<Vec<std::path::PathBuf>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("ws://{}", listener.local_addr().unwrap());
    let cfg = ServeConfig {
        field: short_field(),
        default_option: OptionId::NoOp,
        real_time_factor: 500.0,
        out_dir: dir.to_path_buf(),
        seed: 4,
        max_episodes: Some(episodes),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    let h = thread::spawn(move || serve(listener, &cfg, s).unwrap());
    (url, stop, h)
}

fn recv(ws: &mut Ws) -> Value {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(f) => panic!("closed: {f:?}"),
            _ => {}
        }
    }
}

fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string())).unwrap();
}

#[test]
fn session_plays_records_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let (url, _stop, h) = start(dir.path(), 1);
    let (mut ws, _) = connect(&url).unwrap();

    let first = recv(&mut ws);
    assert_eq!(first["type"], "state");
    assert_eq!(first["tick"], 0);
    // Nothing sent yet: every blue agent holds the default option.
    assert_eq!(first["options_active"], json!(["no_op", "no_op"]));
    assert_eq!(first["agents"].as_array().unwrap().len(), 4);
    assert_eq!(first["flags"].as_array().unwrap().len(), 2);
    assert_eq!(first["score"], json!({"blue": 0, "red": 0}));

    // Malformed and invalid messages get an error reply; the session lives on.
    ws.send(Message::Text("{not json".into())).unwrap();
    assert_eq!(recv(&mut ws)["type"], "error");
    send(&mut ws, json!({"type": "option", "agent_id": 3, "option": "attack"}));
    assert_eq!(recv(&mut ws)["type"], "error");
    send(&mut ws, json!({"type": "option", "agent_id": 0, "option": "fly"}));
    assert_eq!(recv(&mut ws)["type"], "error");

    send(&mut ws, json!({"type": "option", "agent_id": 0, "option": "attack"}));
    send(&mut ws, json!({"type": "control", "cmd": "start"}));
    let mut last_tick = -1i64;
    let mut switched = false;
    let mut seen_guard = false;
    let end = loop {
        let m = recv(&mut ws);
        match m["type"].as_str().unwrap() {
            "state" => {
                let t = m["tick"].as_i64().unwrap();
                assert!(t > last_tick, "ticks must strictly increase");
                last_tick = t;
                assert_eq!(m["options_active"][0], "attack");
                if t == 60 && !switched {
                    send(&mut ws, json!({"type": "option", "agent_id": 1, "option": "guard"}));
                    switched = true;
                }
                if m["options_active"][1] == "guard" {
                    seen_guard = true;
                } else {
                    assert!(!seen_guard, "options are sticky");
                }
            }
            "end" => break m,
            other => panic!("unexpected {other}"),
        }
    };
    assert!(seen_guard);
    let files = h.join().unwrap();
    assert_eq!(files.len(), 1);

    let trajs = read_trajectories(&files[0]).unwrap();
    let t = &trajs[0];
    assert_eq!(t.meta.source, Source::Human);
    assert_eq!(end["eta"].as_i64().unwrap(), t.meta.eta as i64);
    assert_eq!(end["psi"].as_i64().unwrap(), t.meta.psi as i64);
    assert_eq!(t.len(), 201);
    assert_eq!(t.option_at(0, 0), OptionId::Attack);
    assert_eq!(t.option_at(0, 1), OptionId::NoOp);
    assert_eq!(t.option_at(200, 1), OptionId::Guard);

    // Replays from seed and option stream to the recorded outcome.
    assert_eq!(replay_options(&short_field(), t).unwrap(), t.meta.eta);

    // Behaviour cloning accepts the recording unchanged.
    let data = DemoDataset::from_trajectories(&trajs).unwrap();
    let cfg = BcConfig {
        hidden: 8,
        epochs: 1,
        ..BcConfig::default()
    };
    let (_, log) = bc_fit(&data, BcTarget::Options, &cfg).unwrap();
    assert!(log[0].loss.is_finite());
}

#[test]
fn second_client_is_turned_away() {
    let dir = tempfile::tempdir().unwrap();
    let (url, stop, h) = start(dir.path(), 1);
    let (mut a, _) = connect(&url).unwrap();
    assert_eq!(recv(&mut a)["type"], "state");

    let (mut b, _) = connect(&url).unwrap();
    let reason = loop {
        match b.read() {
            Ok(Message::Close(Some(f))) => break f.reason.to_string(),
            Ok(Message::Close(None)) => panic!("close without reason"),
            Ok(_) => {}
            Err(e) => panic!("{e}"),
        }
    };
    assert_eq!(reason, "session busy");

    // The first session is unaffected.
    send(&mut a, json!({"type": "control", "cmd": "reset"}));
    let m = recv(&mut a);
    assert_eq!((m["type"].as_str(), m["tick"].as_i64()), (Some("state"), Some(0)));
    stop.store(true, Ordering::Relaxed);
    assert!(h.join().unwrap().is_empty());
}

#[test]
fn disconnect_pauses_and_a_new_client_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (url, stop, h) = start(dir.path(), 1);
    let (mut a, _) = connect(&url).unwrap();
    recv(&mut a);
    send(&mut a, json!({"type": "control", "cmd": "start"}));
    let mut tick = 0;
    while tick < 20 {
        let m = recv(&mut a);
        tick = m["tick"].as_i64().unwrap();
    }
    drop(a);
    thread::sleep(Duration::from_millis(100));

    let (mut b, _) = connect(&url).unwrap();
    let m = recv(&mut b);
    let paused_at = m["tick"].as_i64().unwrap();
    assert!(paused_at >= tick, "game continued from where it was");
    thread::sleep(Duration::from_millis(100));
    // Paused: nothing further arrives until start.
    send(&mut b, json!({"type": "control", "cmd": "start"}));
    let m = recv(&mut b);
    assert_eq!(m["tick"].as_i64().unwrap(), paused_at + 1);
    stop.store(true, Ordering::Relaxed);
    h.join().unwrap();
}
