use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::evalkit::{EndpointSpec, EvalError, PolicyEndpoint, Query};
use crate::wire;

use super::message::{Hello, Message};
use super::BridgeError;

pub const ADDR_ENV: &str = "COIN_BRIDGE_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// `$COIN_BRIDGE_ADDR`, or [`DEFAULT_ADDR`].
pub fn default_addr() -> String {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string())
}

/// A policy behind a bridge server. Each query is one `infer` round trip.
pub struct RemotePolicy {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    hello: Hello,
}

impl RemotePolicy {
    pub fn connect(addr: impl ToSocketAddrs, hello: Hello) -> Result<RemotePolicy, BridgeError> {
        Self::connect_with_timeout(addr, hello, DEFAULT_TIMEOUT)
    }

    /// Connect and handshake. `timeout` bounds the connect and every reply.
    pub fn connect_with_timeout(
        addr: impl ToSocketAddrs,
        hello: Hello,
        timeout: Duration,
    ) -> Result<RemotePolicy, BridgeError> {
        let mut last = None;
        let mut stream = None;
        for a in addr.to_socket_addrs().map_err(BridgeError::Connect)? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        let stream = stream.ok_or_else(|| {
            BridgeError::Connect(last.unwrap_or_else(|| std::io::Error::other("address resolved to nothing")))
        })?;
        stream.set_nodelay(true).map_err(BridgeError::Io)?;
        stream.set_read_timeout(Some(timeout)).map_err(BridgeError::Io)?;
        stream.set_write_timeout(Some(timeout)).map_err(BridgeError::Io)?;
        let mut client = RemotePolicy {
            writer: BufWriter::new(stream.try_clone().map_err(BridgeError::Io)?),
            reader: BufReader::new(stream),
            hello: hello.clone(),
        };
        match client.request(&Message::Hello(hello))? {
            Message::HelloAck { accept: true, .. } => Ok(client),
            Message::HelloAck { accept: false, reason } => Err(BridgeError::HandshakeRejected(reason)),
            other => Err(BridgeError::Protocol(format!("expected hello_ack, got {}", other.kind()))),
        }
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    /// Send one message and wait for the reply.
    pub fn request(&mut self, msg: &Message) -> Result<Message, BridgeError> {
        wire::write_frame(&mut self.writer, &msg.to_body())?;
        let body = wire::read_frame(&mut self.reader)?;
        Message::from_body(&body)
    }
}

impl Drop for RemotePolicy {
    fn drop(&mut self) {
        let _ = wire::write_frame(&mut self.writer, &Message::Bye.to_body());
    }
}

impl PolicyEndpoint for RemotePolicy {
    fn spec(&self) -> EndpointSpec {
        EndpointSpec { t_o: self.hello.t_o, t_a: self.hello.t_a, grid: self.hello.obs_fields.contains_key("grid") }
    }

    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        let msg = Message::Infer { obs: q.obs.to_vec(), seed: q.seed };
        match self.request(&msg) {
            Ok(Message::Action { chunk }) => Ok(chunk),
            Ok(Message::Error { reason }) => Err(EvalError::unavailable(format!("server error: {reason}"))),
            Ok(other) => Err(EvalError::unavailable(format!("expected action, got {}", other.kind()))),
            Err(e) => Err(EvalError::unavailable(e.to_string())),
        }
    }
}
