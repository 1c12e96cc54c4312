//! Live demonstration service. One browser client at a time drives the blue
//! team by picking options; red follows the heuristic opponent. Every
//! finished episode is written as an options-level demonstration file.
//!
//! Server → client: `state`, `end`, `error`. Client → server: `option`,
//! `control`. All messages are JSON text frames over a WebSocket.

use std::borrow::Cow;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use crate::error::{Error, Result};
use crate::game::{finish, record_step, Decision};
use crate::options::{heuristic_opponent, run_primitive, OptionId};
use crate::seed::derive_seed;
use crate::sim::{reset, FieldConfig, GameState, LowAction, Team};
use crate::traj::{write_trajectories, Source, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: usize,
    pub team: Team,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub tagged: bool,
    pub has_flag: bool,
    pub cooldown: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagView {
    pub team: Team,
    pub x: f64,
    pub y: f64,
    /// Agent carrying this flag, if any.
    pub carrier: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub blue: u32,
    pub red: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlCmd {
    Start,
    Pause,
    Reset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State {
        tick: u64,
        agents: Vec<AgentView>,
        flags: Vec<FlagView>,
        score: Score,
        /// Option held by each blue agent, indexed by agent id.
        options_active: Vec<OptionId>,
    },
    End {
        eta: i32,
        psi: i8,
    },
    Error {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Option { agent_id: usize, option: OptionId },
    Control { cmd: ControlCmd },
}

impl ServerMessage {
    pub fn state(s: &GameState, options_active: &[OptionId]) -> Self {
        let agents = s
            .agents
            .iter()
            .enumerate()
            .map(|(id, a)| AgentView {
                id,
                team: a.team,
                x: a.position.x,
                y: a.position.y,
                heading: a.heading,
                tagged: a.is_tagged,
                has_flag: a.has_flag,
                cooldown: a.cooldown_remaining_s,
            })
            .collect();
        let flags = [Team::Blue, Team::Red]
            .into_iter()
            .map(|team| {
                let carrier = s.flag_taken_by[team.index()];
                let p = carrier.map_or(s.flag_home(team), |c| s.agents[c].position);
                FlagView {
                    team,
                    x: p.x,
                    y: p.y,
                    carrier,
                }
            })
            .collect();
        ServerMessage::State {
            tick: s.tick,
            agents,
            flags,
            score: Score {
                blue: s.blue_captures,
                red: s.red_captures,
            },
            options_active: options_active.to_vec(),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("message serialises")
    }
}

/// Parses and validates a client message against the current game.
pub fn parse_client_message(text: &str, team_size: usize) -> std::result::Result<ClientMessage, String> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if let ClientMessage::Option { agent_id, .. } = msg {
        if agent_id >= team_size {
            return Err(format!("agent {agent_id} is not a blue agent (ids 0..{team_size})"));
        }
    }
    Ok(msg)
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub field: FieldConfig,
    pub default_option: OptionId,
    /// Simulated seconds per wall-clock second.
    pub real_time_factor: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Stop after this many completed episodes.
    pub max_episodes: Option<usize>,
}

impl ServeConfig {
    pub fn tick_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / (self.field.tick_hz * self.real_time_factor))
    }
}

/// Re-simulates a recorded options-level demonstration from its seed and
/// option stream and returns the resulting score difference.
pub fn replay_options(cfg: &FieldConfig, traj: &Trajectory) -> Result<i32> {
    let mut s = reset(cfg, traj.meta.seed)?;
    let n = s.n_agents();
    let blue = cfg.team_size;
    for t in 0..traj.len().saturating_sub(1) {
        if s.is_terminal() {
            return Err(Error::Format(format!("recording continues past the terminal tick {}", s.tick)));
        }
        let actions: Vec<LowAction> = (0..n)
            .map(|i| {
                if i < blue {
                    run_primitive(traj.option_at(t, i), &s, i)
                } else {
                    heuristic_opponent(&s, i)
                }
            })
            .collect();
        s.step(&actions)?;
    }
    Ok(s.score_difference())
}

/// One game with its recording and per-agent sticky options.
struct Episode {
    state: GameState,
    traj: Trajectory,
    options: Vec<OptionId>,
    pending: Vec<(usize, OptionId)>,
    running: bool,
}

impl Episode {
    fn new(cfg: &ServeConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            state: reset(&cfg.field, seed)?,
            traj: Trajectory::empty(&cfg.field, true),
            options: vec![cfg.default_option; cfg.field.team_size],
            pending: Vec::new(),
            running: false,
        })
    }

    fn decisions(&self) -> Vec<Decision> {
        (0..self.state.n_agents())
            .map(|i| match self.state.agents[i].team {
                Team::Blue => Decision::from_option(self.options[i], &self.state, i),
                Team::Red => Decision {
                    action: heuristic_opponent(&self.state, i),
                    option: None,
                },
            })
            .collect()
    }

    /// Applies queued options, records the current state and advances one
    /// tick. Returns true once the terminal state has been recorded.
    fn tick(&mut self) -> Result<bool> {
        for (agent, option) in self.pending.drain(..) {
            self.options[agent] = option;
        }
        let d = self.decisions();
        record_step(&mut self.traj, &self.state, &d, true);
        if self.state.is_terminal() {
            return Ok(true);
        }
        let actions: Vec<LowAction> = d.iter().map(|d| d.action).collect();
        if let Some(c) = self.state.step(&actions)?.capture {
            self.traj.meta.captures.push(c);
        }
        Ok(false)
    }
}

type Client = WebSocket<TcpStream>;

fn send(client: &mut Option<Client>, msg: &ServerMessage) {
    if let Some(ws) = client {
        if ws.send(Message::Text(msg.to_text())).is_err() {
            *client = None;
        }
    }
}

fn reject_busy(stream: TcpStream) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let _ = ws.close(Some(CloseFrame {
            code: CloseCode::Again,
            reason: Cow::Borrowed("session busy"),
        }));
        // Drive the closing handshake until the peer answers or goes away.
        while ws.read().is_ok() {}
    }
}

fn accept_client(stream: TcpStream) -> Option<Client> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    let ws = tungstenite::accept(stream).ok()?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(1))).ok()?;
    ws.get_ref().set_nodelay(true).ok()?;
    Some(ws)
}

/// Serves demonstration sessions on `listener` until `stop` is raised or
/// `max_episodes` episodes have been written. Returns the written files.
pub fn serve(listener: TcpListener, cfg: &ServeConfig, stop: Arc<AtomicBool>) -> Result<Vec<PathBuf>> {
    cfg.field.validate()?;
    if !(cfg.real_time_factor > 0.0) {
        return Err(Error::Config("real_time_factor must be positive".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    listener.set_nonblocking(true)?;
    let period = cfg.tick_period();
    let mut written = Vec::new();
    let mut episode_no = 0u64;
    let mut ep = Episode::new(cfg, derive_seed(cfg.seed, &[episode_no]))?;
    let mut client: Option<Client> = None;
    let mut next_tick = Instant::now();

    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) if client.is_some() => reject_busy(stream),
            Ok((stream, _)) => {
                client = accept_client(stream);
                let m = ServerMessage::state(&ep.state, &ep.options);
                send(&mut client, &m);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {}
            Err(e) => return Err(e.into()),
        }

        // Drain everything that arrived since the last tick; options are
        // queued and only take effect at the next tick boundary.
        let mut replies = Vec::new();
        let mut reset_requested = false;
        if let Some(ws) = client.as_mut() {
            loop {
                match ws.read() {
                    Ok(Message::Text(text)) => match parse_client_message(&text, cfg.field.team_size) {
                        Ok(ClientMessage::Option { agent_id, option }) => ep.pending.push((agent_id, option)),
                        Ok(ClientMessage::Control { cmd: ControlCmd::Start }) => ep.running = true,
                        Ok(ClientMessage::Control { cmd: ControlCmd::Pause }) => ep.running = false,
                        Ok(ClientMessage::Control { cmd: ControlCmd::Reset }) => reset_requested = true,
                        Err(message) => replies.push(ServerMessage::Error { message }),
                    },
                    Ok(Message::Binary(_)) => replies.push(ServerMessage::Error {
                        message: "binary frames are not supported".into(),
                    }),
                    Ok(_) => {}
                    Err(tungstenite::Error::Io(e))
                        if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                    {
                        break
                    }
                    Err(_) => {
                        // Disconnect: keep the game, pause it.
                        client = None;
                        ep.running = false;
                        break;
                    }
                }
            }
        }
        for r in &replies {
            send(&mut client, r);
        }
        if reset_requested {
            episode_no += 1;
            ep = Episode::new(cfg, derive_seed(cfg.seed, &[episode_no]))?;
            let m = ServerMessage::state(&ep.state, &ep.options);
            send(&mut client, &m);
        }

        let now = Instant::now();
        if !(ep.running && client.is_some()) {
            ep.running &= client.is_some();
            next_tick = now + period;
            std::thread::sleep(Duration::from_millis(2).min(period));
            continue;
        }
        if now < next_tick {
            std::thread::sleep((next_tick - now).min(Duration::from_millis(2)));
            continue;
        }
        next_tick += period;

        if ep.tick()? {
            let seed = ep.state.seed;
            let mut traj = std::mem::replace(&mut ep.traj, Trajectory::empty(&cfg.field, true));
            finish(&mut traj, &ep.state, seed, Source::Human, None);
            traj.meta.id = episode_no;
            let path = cfg.out_dir.join(format!("human_demo_{episode_no:04}.jsonl"));
            write_trajectories(&path, std::slice::from_ref(&traj))?;
            written.push(path);
            send(
                &mut client,
                &ServerMessage::End {
                    eta: traj.meta.eta,
                    psi: traj.meta.psi,
                },
            );
            if let Some(ws) = client.as_mut() {
                let _ = ws.flush();
            }
            if cfg.max_episodes.is_some_and(|m| written.len() >= m) {
                break;
            }
            episode_no += 1;
            ep = Episode::new(cfg, derive_seed(cfg.seed, &[episode_no]))?;
            let m = ServerMessage::state(&ep.state, &ep.options);
            send(&mut client, &m);
        } else {
            let m = ServerMessage::state(&ep.state, &ep.options);
            send(&mut client, &m);
        }
    }
    if let Some(mut ws) = client {
        let _ = ws.close(None);
        let _ = ws.flush();
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse_and_validate() {
        let m = parse_client_message(r#"{"type":"option","agent_id":1,"option":"attack"}"#, 2).unwrap();
        assert_eq!(
            m,
            ClientMessage::Option {
                agent_id: 1,
                option: OptionId::Attack
            }
        );
        let m = parse_client_message(r#"{"type":"control","cmd":"pause"}"#, 2).unwrap();
        assert_eq!(m, ClientMessage::Control { cmd: ControlCmd::Pause });
        assert!(parse_client_message(r#"{"type":"option","agent_id":2,"option":"attack"}"#, 2).is_err());
        assert!(parse_client_message(r#"{"type":"option","agent_id":0,"option":"dance"}"#, 2).is_err());
        assert!(parse_client_message(r#"{"type":"control","cmd":"stop"}"#, 2).is_err());
        assert!(parse_client_message("not json", 2).is_err());
    }

    #[test]
    fn state_message_field_names() {
        let s = reset(&FieldConfig::demo(), 0).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&ServerMessage::state(&s, &[OptionId::NoOp, OptionId::Tag]).to_text()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["agents", "flags", "options_active", "score", "tick", "type"]);
        assert_eq!(v["type"], "state");
        let a: Vec<&str> = v["agents"][0].as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(a, ["cooldown", "has_flag", "heading", "id", "tagged", "team", "x", "y"]);
        assert_eq!(v["agents"][3]["team"], "red");
        assert_eq!(v["options_active"][1], "tag");
        let end = ServerMessage::End { eta: -1, psi: -1 }.to_text();
        assert_eq!(end, r#"{"type":"end","eta":-1,"psi":-1}"#);
    }
}
