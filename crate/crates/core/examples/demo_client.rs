//! Starts the demonstration service in-process and drives it with a
//! scripted client: pick options for both blue agents, start, and follow
//! the state stream to the end of the episode.

use std::net::TcpListener;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use splash::options::OptionId;
use splash::service::{serve, ServeConfig};
use splash::sim::FieldConfig;
use tungstenite::Message;

fn main() -> splash::Result<()> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("ws://{}", listener.local_addr()?);
    let out_dir = std::env::temp_dir().join(format!("splash-demos-{}", std::process::id()));
    let cfg = ServeConfig {
        field: FieldConfig {
            max_time_s: 60.0,
            ..FieldConfig::demo()
        },
        default_option: OptionId::NoOp,
        real_time_factor: 50.0,
        out_dir: out_dir.clone(),
        seed: 1,
        max_episodes: Some(1),
    };
    let server = std::thread::spawn(move || serve(listener, &cfg, Arc::new(AtomicBool::new(false))));

    let (mut ws, _) = tungstenite::connect(&url).expect("connect to demo service");
    let send = |ws: &mut tungstenite::WebSocket<_>, v: serde_json::Value| {
        ws.send(Message::Text(v.to_string())).expect("send");
    };
    send(&mut ws, serde_json::json!({"type": "option", "agent_id": 0, "option": "attack"}));
    send(&mut ws, serde_json::json!({"type": "option", "agent_id": 1, "option": "guard"}));
    send(&mut ws, serde_json::json!({"type": "control", "cmd": "start"}));
    let mut states = 0;
    loop {
        let Ok(Message::Text(text)) = ws.read() else { continue };
        let msg: serde_json::Value = serde_json::from_str(&text).expect("json");
        match msg["type"].as_str() {
            Some("state") => states += 1,
            Some("end") => {
                println!("episode over after {states} state messages: eta {}, psi {}", msg["eta"], msg["psi"]);
                break;
            }
            _ => println!("{msg}"),
        }
    }
    for f in server.join().expect("server thread")? {
        println!("recorded {}", f.display());
    }
    std::fs::remove_dir_all(out_dir)?;
    Ok(())
}
