use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::evalkit::CheckpointEndpoint;
use crate::policy::{PolicyCheckpoint, SamplerConfig};
use crate::wire::{self, FrameError};

use super::message::{Hello, Message};
use super::BridgeError;

const POLL: Duration = Duration::from_millis(50);

/// A running server. Dropping it (or calling [`BridgeServer::shutdown`])
/// stops accepting and closes every open connection.
pub struct BridgeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Serve `ckpt` on `addr`. Each connection gets its own thread and is
/// handled one message at a time; sampling goes through
/// [`CheckpointEndpoint`], the same code as in-process evaluation.
pub fn serve_builtin(
    ckpt: PolicyCheckpoint,
    sampler: SamplerConfig,
    addr: impl ToSocketAddrs + std::fmt::Debug,
) -> Result<BridgeServer, BridgeError> {
    let bind_err = |source| BridgeError::Bind { addr: format!("{addr:?}"), source };
    let hello = Hello::from_checkpoint(&ckpt);
    let endpoint = CheckpointEndpoint::new(ckpt, sampler).map_err(|e| BridgeError::Protocol(e.to_string()))?;
    let listener = TcpListener::bind(&addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let local = listener.local_addr().map_err(bind_err)?;

    let stop = Arc::new(AtomicBool::new(false));
    let served = Arc::new((hello, endpoint));
    let stop_flag = stop.clone();
    let accept_thread = std::thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !stop_flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let served = served.clone();
                    let stop = stop_flag.clone();
                    workers.push(std::thread::spawn(move || {
                        let _ = handle_connection(stream, &served.0, &served.1, &stop);
                    }));
                    workers.retain(|w| !w.is_finished());
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(_) => break,
            }
        }
        for w in workers {
            let _ = w.join();
        }
    });
    Ok(BridgeServer { addr: local, stop, accept_thread: Some(accept_thread) })
}

fn reply(w: &mut BufWriter<TcpStream>, m: &Message) -> Result<(), FrameError> {
    wire::write_frame(w, &m.to_body())
}

fn handle_connection(
    stream: TcpStream,
    served: &Hello,
    endpoint: &CheckpointEndpoint,
    stop: &AtomicBool,
) -> Result<(), FrameError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut reader = BufReader::new(stream);
    let mut accepted = false;

    while !stop.load(Ordering::SeqCst) {
        let body = match wire::read_frame(&mut reader) {
            Ok(b) => b,
            Err(e) if e.is_timeout() => continue,
            Err(FrameError::TooLarge(n)) => {
                // the body was never read, so the stream cannot be resynchronized
                let reason = format!("frame of {n} bytes exceeds the 16 MiB limit");
                return reply(&mut writer, &Message::Error { reason });
            }
            Err(FrameError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        let msg = match Message::from_body(&body) {
            Ok(m) => m,
            Err(e) => {
                reply(&mut writer, &Message::Error { reason: e.to_string() })?;
                continue;
            }
        };
        let answer = match msg {
            Message::Hello(h) => match h.mismatch(served) {
                None => {
                    accepted = true;
                    Message::HelloAck { accept: true, reason: String::new() }
                }
                Some(reason) => Message::HelloAck { accept: false, reason },
            },
            Message::Infer { .. } if !accepted => Message::Error { reason: "infer before an accepted hello".into() },
            Message::Infer { obs, seed } => match endpoint.chunk(&obs, seed) {
                Ok(chunk) => Message::Action { chunk },
                Err(e) => Message::Error { reason: e.to_string() },
            },
            Message::Bye => return Ok(()),
            other => Message::Error { reason: format!("unexpected {} from a client", other.kind()) },
        };
        reply(&mut writer, &answer)?;
    }
    Ok(())
}
