//! Newline-delimited JSON protocol for out-of-process environments.
//!
//! Client to server:
//!
//! ```text
//! {"type":"reset","spec":{...TaskSpec...}}
//! {"type":"step","action":"take pan from countertop"}
//! ```
//!
//! Server to client, one line per request:
//!
//! ```text
//! {"type":"result","view":{...StepView...},"status_now":{...Outcome...}}
//! {"type":"error","message":"..."}
//! ```
//!
//! External environments need not support snapshots: the client emulates
//! them by replaying the action prefix from reset and checking each
//! observation against the recorded transcript.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Action, EnvError, EnvSnapshot, Environment, FeedbackCode, GridHouse, LayoutRegistry, Observation, Outcome,
    StepView, TaskSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Reset { spec: TaskSpec },
    Step { action: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Result { view: StepView, status_now: Outcome },
    Error { message: String },
}

/// Reads one JSON line. `Ok(None)` on clean EOF.
pub fn read_message<T: for<'de> Deserialize<'de>>(reader: &mut impl BufRead) -> Result<Option<T>, EnvError> {
    let mut line = String::new();
    let n = reader
        .read_line(&mut line)
        .map_err(|e| EnvError::Connection(e.to_string()))?;
    if n == 0 {
        return Ok(None);
    }
    serde_json::from_str(line.trim_end())
        .map(Some)
        .map_err(|e| EnvError::Malformed(format!("{e}: {}", line.trim_end())))
}

pub fn write_message<T: Serialize>(writer: &mut impl Write, msg: &T) -> Result<(), EnvError> {
    let mut line = serde_json::to_string(msg).expect("protocol message serializes");
    line.push('\n');
    writer
        .write_all(line.as_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| EnvError::Connection(e.to_string()))
}

/// Client session with an external environment over a TCP byte stream.
pub struct ExternalEnv {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    spec: Option<TaskSpec>,
    actions: Vec<Action>,
    transcript: Vec<String>,
    status: Option<Outcome>,
    terminal: bool,
    messages_sent: usize,
}

impl ExternalEnv {
    pub fn connect(endpoint: impl ToSocketAddrs) -> Result<Self, EnvError> {
        let stream = TcpStream::connect(endpoint).map_err(|e| EnvError::Connection(e.to_string()))?;
        let read_half = stream.try_clone().map_err(|e| EnvError::Connection(e.to_string()))?;
        Ok(Self {
            reader: BufReader::new(read_half),
            writer: BufWriter::new(stream),
            spec: None,
            actions: Vec::new(),
            transcript: Vec::new(),
            status: None,
            terminal: false,
            messages_sent: 0,
        })
    }

    /// Connects and resets in one call.
    pub fn session(endpoint: impl ToSocketAddrs, spec: &TaskSpec) -> Result<(Self, StepView), EnvError> {
        let mut env = Self::connect(endpoint)?;
        let (view, _) = env.reset(spec)?;
        Ok((env, view))
    }

    /// Request messages sent over the lifetime of the session.
    pub fn messages_sent(&self) -> usize {
        self.messages_sent
    }

    fn request(&mut self, msg: &ClientMessage) -> Result<(StepView, Outcome), EnvError> {
        write_message(&mut self.writer, msg)?;
        self.messages_sent += 1;
        match read_message::<ServerMessage>(&mut self.reader)? {
            Some(ServerMessage::Result { view, status_now }) => Ok((view, status_now)),
            Some(ServerMessage::Error { message }) => Err(EnvError::Protocol(message)),
            None => Err(EnvError::Connection("server closed the stream".into())),
        }
    }

    fn send_reset(&mut self, spec: &TaskSpec) -> Result<StepView, EnvError> {
        let (view, status) = self.request(&ClientMessage::Reset { spec: spec.clone() })?;
        self.spec = Some(spec.clone());
        self.actions.clear();
        self.transcript = vec![view.observation.text.clone()];
        self.status = Some(status);
        self.terminal = view.terminal;
        Ok(view)
    }

    fn send_step(&mut self, action: &Action) -> Result<StepView, EnvError> {
        let (view, status) = self.request(&ClientMessage::Step {
            action: action.render(),
        })?;
        self.actions.push(action.clone());
        self.transcript.push(view.observation.text.clone());
        self.status = Some(status);
        self.terminal = view.terminal;
        Ok(view)
    }
}

impl Environment for ExternalEnv {
    fn reset(&mut self, spec: &TaskSpec) -> Result<(StepView, EnvSnapshot), EnvError> {
        let view = self.send_reset(spec)?;
        Ok((view, self.snapshot()?))
    }

    fn step(&mut self, action: &Action) -> Result<StepView, EnvError> {
        if self.spec.is_none() {
            return Err(EnvError::Protocol("no active episode".into()));
        }
        if self.terminal {
            return Err(EnvError::Protocol("step after terminal".into()));
        }
        self.send_step(action)
    }

    fn snapshot(&self) -> Result<EnvSnapshot, EnvError> {
        let spec = self
            .spec
            .clone()
            .ok_or_else(|| EnvError::Protocol("no active episode".into()))?;
        Ok(EnvSnapshot::Replay {
            spec,
            actions: self.actions.clone(),
            transcript: self.transcript.clone(),
        })
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        let EnvSnapshot::Replay {
            spec,
            actions,
            transcript,
        } = snapshot
        else {
            return Err(EnvError::Config("external env needs a replay snapshot".into()));
        };
        let check = |step: usize, actual: &str| match transcript.get(step) {
            Some(expected) if expected == actual => Ok(()),
            expected => Err(EnvError::ReplayDivergence {
                step,
                expected: expected.cloned().unwrap_or_default(),
                actual: actual.to_owned(),
            }),
        };
        let view = self.send_reset(spec)?;
        check(0, &view.observation.text)?;
        for (i, a) in actions.iter().enumerate() {
            let view = self.send_step(a)?;
            check(i + 1, &view.observation.text)?;
        }
        Ok(())
    }

    fn status_now(&self) -> Result<Outcome, EnvError> {
        self.status
            .ok_or_else(|| EnvError::Protocol("no active episode".into()))
    }
}

/// Serves GridHouse episodes over the wire protocol.
#[derive(Clone)]
pub struct GridHouseServer {
    registry: Arc<LayoutRegistry>,
    step_cap: u32,
}

impl GridHouseServer {
    pub fn new(registry: Arc<LayoutRegistry>, step_cap: u32) -> Self {
        Self { registry, step_cap }
    }

    /// Handles one connection until the client closes it.
    pub fn serve_connection(&self, stream: TcpStream) -> Result<(), EnvError> {
        let mut reader = BufReader::new(stream.try_clone().map_err(|e| EnvError::Connection(e.to_string()))?);
        let mut writer = BufWriter::new(stream);
        let mut env = GridHouse::with_step_cap(self.registry.clone(), self.step_cap);
        loop {
            let msg = match read_message::<ClientMessage>(&mut reader) {
                Ok(Some(msg)) => msg,
                Ok(None) => return Ok(()),
                Err(EnvError::Malformed(m)) => {
                    write_message(&mut writer, &ServerMessage::Error { message: m })?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let reply = match msg {
                ClientMessage::Reset { spec } => env.reset(&spec).map(|(view, _)| view),
                ClientMessage::Step { action } => match action.parse::<Action>() {
                    Ok(a) => env.step(&a),
                    Err(_) => Ok(StepView {
                        observation: Observation::new("Nothing happens.", Vec::new(), FeedbackCode::InvalidAction),
                        candidates: env.candidates(),
                        terminal: false,
                        outcome: None,
                    }),
                },
            }
            .and_then(|view| Ok((view, env.status_now()?)));
            let out = match reply {
                Ok((view, status_now)) => ServerMessage::Result { view, status_now },
                Err(e) => ServerMessage::Error { message: e.to_string() },
            };
            write_message(&mut writer, &out)?;
        }
    }

    /// Accepts connections forever, one thread per connection.
    pub fn serve(&self, listener: TcpListener) -> Result<(), EnvError> {
        for stream in listener.incoming() {
            let stream = stream.map_err(|e| EnvError::Connection(e.to_string()))?;
            let server = self.clone();
            std::thread::spawn(move || {
                if let Err(e) = server.serve_connection(stream) {
                    tracing::warn!(error = %e, "environment connection ended");
                }
            });
        }
        Ok(())
    }

    /// Binds an ephemeral loopback port and serves in a background thread.
    pub fn spawn_loopback(&self) -> Result<std::net::SocketAddr, EnvError> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| EnvError::Connection(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| EnvError::Connection(e.to_string()))?;
        let server = self.clone();
        std::thread::spawn(move || server.serve(listener));
        Ok(addr)
    }
}
