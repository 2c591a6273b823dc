//! Key management and the line-oriented control protocol.
//!
//! Each request and each response is one JSON object on one line.
//!
//! | request                                                   | `data` on success            |
//! |-----------------------------------------------------------|------------------------------|
//! | `{"op":"ping"}`                                           | `"pong"`                     |
//! | `{"op":"set_key","key":"<32 hex>"}`                       | key id                       |
//! | `{"op":"get_key_id"}`                                     | key id                       |
//! | `{"op":"get_table_digest","round":<1..=10>}`              | 64 hex SHA-256               |
//! | `{"op":"get_stats"}`                                      | pipeline counters            |
//! | `{"op":"add_forwarding_entry","port":"0","action":"egress 1"}` | `null`                  |
//!
//! Responses are `{"status":"ok","data":...}` or
//! `{"status":"err","error":"<message>"}`. A malformed line gets an error
//! response and the connection stays open. Keys travel in the clear; the
//! channel has no authentication or encryption.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::aes_core::{self, Aes128Key, AesError};
use crate::pipeline::{Action, Pipeline, PortId};
use crate::ttables::{build_scrambled_tables, KeyId};

pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:9560";

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Key(#[from] AesError),
    #[error("control server i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("control server stopped")]
    Stopped,
}

/// Expands `key`, builds its tables, and swaps them into the pipeline.
/// The previous tables stay active until the new ones are complete.
pub fn install_key(pipeline: &mut Pipeline, key: &Aes128Key) -> KeyId {
    let tables = build_scrambled_tables(&aes_core::expand_key(key));
    let id = tables.key_id().clone();
    pipeline.install_tables(Arc::new(tables));
    id
}

/// Like [`install_key`] for untrusted bytes. A bad length leaves the
/// current key in place.
pub fn install_key_bytes(pipeline: &mut Pipeline, bytes: &[u8]) -> Result<KeyId, ControlError> {
    let key = Aes128Key::from_slice(bytes)?;
    Ok(install_key(pipeline, &key))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlRequest {
    Ping,
    SetKey { key: String },
    GetKeyId,
    GetTableDigest { round: usize },
    GetStats,
    AddForwardingEntry { port: String, action: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ControlResponse {
    Ok { data: Value },
    Err { error: String },
}

impl ControlResponse {
    fn ok(data: impl Into<Value>) -> Self {
        ControlResponse::Ok { data: data.into() }
    }

    fn err(e: impl ToString) -> Self {
        ControlResponse::Err {
            error: e.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ControlResponse::Ok { .. })
    }

    pub fn data(&self) -> Option<&Value> {
        match self {
            ControlResponse::Ok { data } => Some(data),
            ControlResponse::Err { .. } => None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

impl ControlRequest {
    pub fn parse_line(line: &str) -> Result<Self, String> {
        serde_json::from_str(line.trim()).map_err(|e| format!("malformed request: {e}"))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

/// Applies one request to the pipeline.
pub fn handle(pipeline: &mut Pipeline, req: ControlRequest) -> ControlResponse {
    match req {
        ControlRequest::Ping => ControlResponse::ok("pong"),
        ControlRequest::SetKey { key } => match Aes128Key::from_hex(&key) {
            Ok(k) => ControlResponse::ok(install_key(pipeline, &k).as_str()),
            Err(e) => ControlResponse::err(e),
        },
        ControlRequest::GetKeyId => match pipeline.tables() {
            Some(t) => ControlResponse::ok(t.key_id().as_str()),
            None => ControlResponse::err("no key installed"),
        },
        ControlRequest::GetTableDigest { round } => match pipeline.tables() {
            Some(t) => match t.round_digest(round) {
                Ok(d) => ControlResponse::ok(d),
                Err(e) => ControlResponse::err(e),
            },
            None => ControlResponse::err("no key installed"),
        },
        ControlRequest::GetStats => {
            let mut stats = serde_json::to_value(pipeline.stats()).expect("stats serialize");
            stats["key_id"] = pipeline
                .tables()
                .map_or(Value::Null, |t| t.key_id().as_str().into());
            ControlResponse::ok(stats)
        }
        ControlRequest::AddForwardingEntry { port, action } => {
            let parsed = port
                .parse::<PortId>()
                .and_then(|p| Ok((p, action.parse::<Action>()?)));
            match parsed.and_then(|(p, a)| pipeline.forwarding_mut().insert(p, a)) {
                Ok(()) => ControlResponse::ok(Value::Null),
                Err(e) => ControlResponse::err(e),
            }
        }
    }
}

/// Parses and applies one protocol line.
pub fn handle_line(pipeline: &mut Pipeline, line: &str) -> ControlResponse {
    match ControlRequest::parse_line(line) {
        Ok(req) => handle(pipeline, req),
        Err(e) => ControlResponse::err(e),
    }
}

enum Command {
    Line(String, mpsc::Sender<ControlResponse>),
    Stop,
}

/// A running control server. All requests from all connections go through
/// one queue to the thread that owns the pipeline.
pub struct ControlServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    commands: mpsc::Sender<Command>,
    acceptor: Option<JoinHandle<()>>,
    core: Option<JoinHandle<Pipeline>>,
}

impl ControlServer {
    pub fn bind(addr: impl ToSocketAddrs, pipeline: Pipeline) -> Result<Self, ControlError> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Command>();

        let core = thread::spawn(move || {
            let mut pipeline = pipeline;
            while let Ok(cmd) = rx.recv() {
                match cmd {
                    Command::Line(line, reply) => {
                        let _ = reply.send(handle_line(&mut pipeline, &line));
                    }
                    Command::Stop => break,
                }
            }
            pipeline
        });

        let acceptor = {
            let stop = stop.clone();
            let tx = tx.clone();
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let tx = tx.clone();
                    let stop = stop.clone();
                    thread::spawn(move || {
                        let _ = serve_connection(stream, tx, stop);
                    });
                }
            })
        };

        Ok(Self {
            addr,
            stop,
            commands: tx,
            acceptor: Some(acceptor),
            core: Some(core),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, drains queued requests, and returns the pipeline.
    pub fn shutdown(mut self) -> Result<Pipeline, ControlError> {
        self.stop_threads()
    }

    fn stop_threads(&mut self) -> Result<Pipeline, ControlError> {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let _ = self.commands.send(Command::Stop);
        self.core
            .take()
            .ok_or(ControlError::Stopped)?
            .join()
            .map_err(|_| ControlError::Stopped)
    }

    /// Blocks until the process is killed.
    pub fn wait(mut self) -> Result<Pipeline, ControlError> {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        self.stop_threads()
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        if self.core.is_some() {
            let _ = self.stop_threads();
        }
    }
}

fn serve_connection(
    stream: TcpStream,
    commands: mpsc::Sender<Command>,
    stop: Arc<AtomicBool>,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                if !line.trim().is_empty() {
                    let (tx, rx) = mpsc::channel();
                    if commands.send(Command::Line(line.clone(), tx)).is_err() {
                        return Ok(());
                    }
                    let resp = rx
                        .recv()
                        .unwrap_or_else(|_| ControlResponse::err("server stopping"));
                    writer.write_all(format!("{}\n", resp.to_line()).as_bytes())?;
                }
                line.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Binds `endpoint` and serves until the process exits.
pub fn serve(endpoint: impl ToSocketAddrs, pipeline: Pipeline) -> Result<Pipeline, ControlError> {
    ControlServer::bind(endpoint, pipeline)?.wait()
}

/// Minimal synchronous client, one request in flight at a time.
pub struct ControlClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl ControlClient {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends a raw line and reads one response line.
    pub fn send_line(&mut self, line: &str) -> std::io::Result<ControlResponse> {
        self.writer
            .write_all(format!("{}\n", line.trim_end()).as_bytes())?;
        let mut resp = String::new();
        if self.reader.read_line(&mut resp)? == 0 {
            return Err(std::io::Error::new(
                ErrorKind::UnexpectedEof,
                "connection closed",
            ));
        }
        serde_json::from_str(&resp).map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e))
    }

    pub fn request(&mut self, req: &ControlRequest) -> std::io::Result<ControlResponse> {
        self.send_line(&req.to_line())
    }
}
