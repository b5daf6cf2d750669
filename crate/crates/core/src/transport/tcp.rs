//! TCP binding: newline-delimited JSON frames carrying the same envelopes
//! as the in-process broker, so single-process and split deployments are
//! observationally equivalent.
//!
//! Requests are acked; a publisher that misses its ack within the timeout
//! resends once (at-least-once — the broker does not deduplicate, so
//! consumers key work by window).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::broker::Broker;
use super::{MessageKind, TelemetryMessage, TransportError};

const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_millis(1000);

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum ClientFrame {
    Register {
        id: u64,
        topic: String,
        kind: MessageKind,
    },
    Publish {
        id: u64,
        msg: TelemetryMessage,
    },
    Subscribe {
        id: u64,
        filter: String,
    },
    Fetch {
        id: u64,
        topic: String,
    },
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(tag = "op", rename_all = "snake_case")]
enum ServerFrame {
    Ack {
        id: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        subscribers: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        sub: Option<u64>,
    },
    Error {
        id: u64,
        error: String,
    },
    Result {
        id: u64,
        msg: TelemetryMessage,
    },
    Message {
        sub: u64,
        msg: TelemetryMessage,
    },
}

fn write_line<T: Serialize>(stream: &Mutex<TcpStream>, frame: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_string(frame).expect("frame serializes");
    line.push('\n');
    let mut guard = stream.lock().unwrap();
    guard.write_all(line.as_bytes())?;
    guard.flush()
}

/// Serves one broker over TCP. Accepting stops on shutdown; per-connection
/// threads exit when their peer disconnects.
pub struct TcpBrokerServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl TcpBrokerServer {
    pub fn spawn(bind: &str, broker: Broker) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_accept = stop.clone();
        let accept_thread = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_accept.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let broker = broker.clone();
                        std::thread::spawn(move || handle_connection(stream, broker));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(TcpBrokerServer {
            local_addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Poke the listener so accept() returns.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpBrokerServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn handle_connection(stream: TcpStream, broker: Broker) {
    let reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let writer = Arc::new(Mutex::new(stream));
    let conn_closed = Arc::new(AtomicBool::new(false));
    let mut next_sub_id: u64 = 0;

    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let frame: ClientFrame = match serde_json::from_str(&line) {
            Ok(f) => f,
            Err(e) => {
                let _ = write_line(
                    &writer,
                    &ServerFrame::Error {
                        id: 0,
                        error: format!("bad frame: {e}"),
                    },
                );
                continue;
            }
        };
        let reply = match frame {
            ClientFrame::Register { id, topic, kind } => match super::Topic::parse(&topic)
                .and_then(|t| broker.register(&t, kind))
            {
                Ok(()) => ServerFrame::Ack {
                    id,
                    subscribers: None,
                    sub: None,
                },
                Err(e) => ServerFrame::Error {
                    id,
                    error: e.to_string(),
                },
            },
            ClientFrame::Publish { id, msg } => match broker.publish(msg) {
                Ok(ack) => ServerFrame::Ack {
                    id,
                    subscribers: Some(ack.subscribers as u64),
                    sub: None,
                },
                Err(e) => ServerFrame::Error {
                    id,
                    error: e.to_string(),
                },
            },
            ClientFrame::Fetch { id, topic } => match super::Topic::parse(&topic)
                .and_then(|t| broker.fetch(&t))
            {
                Ok(msg) => ServerFrame::Result { id, msg },
                Err(e) => ServerFrame::Error {
                    id,
                    error: e.to_string(),
                },
            },
            ClientFrame::Subscribe { id, filter } => match broker.subscribe(&filter) {
                Ok(subscription) => {
                    next_sub_id += 1;
                    let sub_id = next_sub_id;
                    let writer = writer.clone();
                    let closed = conn_closed.clone();
                    std::thread::spawn(move || {
                        while !closed.load(Ordering::SeqCst) {
                            if let Some(msg) =
                                subscription.recv_timeout(Duration::from_millis(100))
                            {
                                if write_line(&writer, &ServerFrame::Message { sub: sub_id, msg })
                                    .is_err()
                                {
                                    break;
                                }
                            }
                        }
                    });
                    ServerFrame::Ack {
                        id,
                        subscribers: None,
                        sub: Some(sub_id),
                    }
                }
                Err(e) => ServerFrame::Error {
                    id,
                    error: e.to_string(),
                },
            },
        };
        if write_line(&writer, &reply).is_err() {
            break;
        }
    }
    conn_closed.store(true, Ordering::SeqCst);
}

/// Stream of messages for one TCP subscription.
pub struct TcpSubscription {
    rx: mpsc::Receiver<TelemetryMessage>,
}

impl TcpSubscription {
    pub fn recv_timeout(&self, timeout: Duration) -> Option<TelemetryMessage> {
        self.rx.recv_timeout(timeout).ok()
    }

    pub fn try_recv(&self) -> Option<TelemetryMessage> {
        self.rx.try_recv().ok()
    }
}

struct ClientShared {
    pending: Mutex<HashMap<u64, mpsc::Sender<ServerFrame>>>,
    subs: Mutex<HashMap<u64, mpsc::Sender<TelemetryMessage>>>,
}

/// Client for a [`TcpBrokerServer`].
pub struct TcpBrokerClient {
    writer: Arc<Mutex<TcpStream>>,
    shared: Arc<ClientShared>,
    next_id: AtomicU64,
    ack_timeout: Duration,
}

impl TcpBrokerClient {
    pub fn connect(addr: &str) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        let reader_stream = stream.try_clone()?;
        let shared = Arc::new(ClientShared {
            pending: Mutex::new(HashMap::new()),
            subs: Mutex::new(HashMap::new()),
        });
        let shared_reader = shared.clone();
        std::thread::spawn(move || {
            let reader = BufReader::new(reader_stream);
            for line in reader.lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(_) => break,
                };
                if line.trim().is_empty() {
                    continue;
                }
                let frame: ServerFrame = match serde_json::from_str(&line) {
                    Ok(f) => f,
                    Err(_) => continue,
                };
                match &frame {
                    ServerFrame::Message { sub, msg } => {
                        if let Some(tx) = shared_reader.subs.lock().unwrap().get(sub) {
                            let _ = tx.send(msg.clone());
                        }
                    }
                    ServerFrame::Ack { id, .. }
                    | ServerFrame::Error { id, .. }
                    | ServerFrame::Result { id, .. } => {
                        if let Some(tx) = shared_reader.pending.lock().unwrap().remove(id) {
                            let _ = tx.send(frame.clone());
                        }
                    }
                }
            }
        });
        Ok(TcpBrokerClient {
            writer: Arc::new(Mutex::new(stream)),
            shared,
            next_id: AtomicU64::new(1),
            ack_timeout: DEFAULT_ACK_TIMEOUT,
        })
    }

    pub fn set_ack_timeout(&mut self, timeout: Duration) {
        self.ack_timeout = timeout;
    }

    fn request(&self, id: u64, frame: &ClientFrame) -> Result<ServerFrame, TransportError> {
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().unwrap().insert(id, tx);
        write_line(&self.writer, frame)?;
        match rx.recv_timeout(self.ack_timeout) {
            Ok(reply) => Ok(reply),
            Err(_) => {
                self.shared.pending.lock().unwrap().remove(&id);
                Err(TransportError::AckTimeout)
            }
        }
    }

    fn expect_ack(reply: ServerFrame) -> Result<ServerFrame, TransportError> {
        match reply {
            ServerFrame::Error { error, .. } => Err(TransportError::Io(error)),
            other => Ok(other),
        }
    }

    pub fn register(&self, topic: &str, kind: MessageKind) -> Result<(), TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let reply = self.request(
            id,
            &ClientFrame::Register {
                id,
                topic: topic.to_string(),
                kind,
            },
        )?;
        Self::expect_ack(reply).map(|_| ())
    }

    /// Publishes with at-least-once semantics: when the ack does not
    /// arrive in time the frame is sent once more (the broker may then see
    /// a duplicate).
    pub fn publish(&self, msg: &TelemetryMessage) -> Result<(), TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let frame = ClientFrame::Publish {
            id,
            msg: msg.clone(),
        };
        match self.request(id, &frame) {
            Ok(reply) => Self::expect_ack(reply).map(|_| ()),
            Err(TransportError::AckTimeout) => {
                let retry_id = self.next_id.fetch_add(1, Ordering::SeqCst);
                let frame = ClientFrame::Publish {
                    id: retry_id,
                    msg: msg.clone(),
                };
                let reply = self.request(retry_id, &frame)?;
                Self::expect_ack(reply).map(|_| ())
            }
            Err(e) => Err(e),
        }
    }

    pub fn subscribe(&self, filter: &str) -> Result<TcpSubscription, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let reply = self.request(
            id,
            &ClientFrame::Subscribe {
                id,
                filter: filter.to_string(),
            },
        )?;
        match Self::expect_ack(reply)? {
            ServerFrame::Ack { sub: Some(sub), .. } => {
                let (tx, rx) = mpsc::channel();
                self.shared.subs.lock().unwrap().insert(sub, tx);
                Ok(TcpSubscription { rx })
            }
            _ => Err(TransportError::Codec("subscribe ack missing sub id".into())),
        }
    }

    pub fn fetch(&self, topic: &str) -> Result<TelemetryMessage, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let reply = self.request(
            id,
            &ClientFrame::Fetch {
                id,
                topic: topic.to_string(),
            },
        )?;
        match Self::expect_ack(reply)? {
            ServerFrame::Result { msg, .. } => Ok(msg),
            _ => Err(TransportError::Codec("fetch reply missing message".into())),
        }
    }
}
