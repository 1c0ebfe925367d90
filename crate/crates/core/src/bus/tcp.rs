//! TCP transport for bus messages.
//!
//! Each message travels as one length-prefixed frame (see [`crate::wire`])
//! whose body is the JSON envelope
//! `{"topic","source_id","seq","t_ns","payload_b64"}`. Sequence numbers are
//! kept from the sending side, so a retransmission arrives as a duplicate and
//! is removed by the recorder.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Bus, RawMessage, Topic};
use crate::wire::{self, FrameError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("bad envelope: {0}")]
    Envelope(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    topic: String,
    source_id: String,
    seq: u64,
    t_ns: i64,
    payload_b64: String,
}

pub fn encode_envelope(msg: &RawMessage) -> Vec<u8> {
    let env = Envelope {
        topic: msg.topic.to_string(),
        source_id: msg.source_id.clone(),
        seq: msg.seq,
        t_ns: msg.t_ns,
        payload_b64: B64.encode(&msg.payload),
    };
    serde_json::to_vec(&env).expect("envelope serialization is infallible")
}

pub fn decode_envelope(body: &[u8]) -> Result<RawMessage, TransportError> {
    let env: Envelope =
        serde_json::from_slice(body).map_err(|e| TransportError::Envelope(e.to_string()))?;
    let topic = Topic::new(env.topic).map_err(|e| TransportError::Envelope(e.to_string()))?;
    let payload =
        B64.decode(env.payload_b64).map_err(|e| TransportError::Envelope(e.to_string()))?;
    Ok(RawMessage { topic, source_id: env.source_id, seq: env.seq, t_ns: env.t_ns, payload })
}

/// Sends bus messages to a remote [`TcpIngress`].
pub struct TcpSender {
    stream: BufWriter<TcpStream>,
}

impl TcpSender {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpSender { stream: BufWriter::new(stream) })
    }

    pub fn send(&mut self, msg: &RawMessage) -> Result<(), TransportError> {
        wire::write_frame(&mut self.stream, &encode_envelope(msg))?;
        Ok(())
    }
}

/// Accepts TCP connections and delivers every received message onto a local bus.
pub struct TcpIngress {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl TcpIngress {
    pub fn bind(bus: Bus, addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let accept_thread = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let bus = bus.clone();
                        let stop = stop_flag.clone();
                        std::thread::spawn(move || pump_connection(stream, bus, stop));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(TcpIngress { addr, stop, accept_thread: Some(accept_thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

fn pump_connection(stream: TcpStream, bus: Bus, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err()
        || stream.set_read_timeout(Some(Duration::from_millis(100))).is_err()
    {
        return;
    }
    let mut reader = BufReader::new(stream);
    while !stop.load(Ordering::SeqCst) {
        match wire::read_frame(&mut reader) {
            Ok(body) => match decode_envelope(&body) {
                Ok(msg) => {
                    if bus.deliver(msg).is_err() {
                        return;
                    }
                }
                Err(_) => continue,
            },
            Err(e) if e.is_timeout() => continue,
            Err(_) => return,
        }
    }
}

impl Drop for TcpIngress {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
    }
}
