use std::fmt;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use super::{Backend, ModelError, ModelInfo, SegmentationModel};
use crate::protocol::{self, Frame, InfoMessage, ProtocolError};

/// Where a model server lives: `host:port` (optionally `tcp://`-prefixed) or
/// `stdio:<command line>` for a child process spoken to over its pipes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(ModelError::Invalid("empty stdio command".into()));
            }
            return Ok(Endpoint::Stdio(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if !addr.contains(':') {
            return Err(ModelError::Invalid(format!("endpoint {s:?} is not host:port")));
        }
        Ok(Endpoint::Tcp(addr.to_owned()))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "{addr}"),
            Endpoint::Stdio(argv) => write!(f, "stdio:{}", argv.join(" ")),
        }
    }
}

enum Connection {
    Tcp(TcpStream),
    Child { child: Child, stdin: ChildStdin, stdout: ChildStdout },
}

impl Read for Connection {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Connection::Tcp(s) => s.read(buf),
            Connection::Child { stdout, .. } => stdout.read(buf),
        }
    }
}

impl Write for Connection {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Connection::Tcp(s) => s.write(buf),
            Connection::Child { stdin, .. } => stdin.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Connection::Tcp(s) => s.flush(),
            Connection::Child { stdin, .. } => stdin.flush(),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Child { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn transport(e: impl fmt::Display) -> ModelError {
    ModelError::Transport(e.to_string())
}

/// A model behind the wire protocol. Requests over the single connection are
/// serialized; open one handle per worker for parallel use.
pub struct RemoteModel {
    endpoint: Endpoint,
    info: ModelInfo,
    conn: Mutex<Connection>,
}

impl fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteModel").field("endpoint", &self.endpoint).field("info", &self.info).finish()
    }
}

impl RemoteModel {
    /// Connects and performs the HELLO/INFO handshake.
    pub fn connect(endpoint: &Endpoint) -> Result<Self, ModelError> {
        let mut conn = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport)?;
                stream.set_nodelay(true).map_err(transport)?;
                stream.set_read_timeout(Some(Duration::from_secs(300))).map_err(transport)?;
                Connection::Tcp(stream)
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(transport)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Connection::Child { child, stdin, stdout }
            }
        };
        let reply = exchange(&mut conn, &Frame::new(protocol::HELLO, Vec::new()), protocol::INFO)?;
        let msg: InfoMessage = serde_json::from_slice(&reply)
            .map_err(|e| ModelError::Protocol(format!("INFO payload is not valid JSON: {e}")))?;
        if msg.num_classes < 2 || msg.dims().len() == 0 {
            return Err(ModelError::Protocol(format!("server reported an unusable model: {msg:?}")));
        }
        let info = ModelInfo {
            backend: Backend::Remote,
            dims: msg.dims(),
            num_classes: msg.num_classes,
            has_gradient: msg.has_gradient,
        };
        Ok(RemoteModel { endpoint: endpoint.clone(), info, conn: Mutex::new(conn) })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn request(&self, frame: &Frame, expect: u8) -> Result<Vec<u8>, ModelError> {
        let mut conn = self.conn.lock().map_err(|_| ModelError::Transport("connection poisoned".into()))?;
        exchange(&mut conn, frame, expect)
    }
}

fn exchange(conn: &mut Connection, frame: &Frame, expect: u8) -> Result<Vec<u8>, ModelError> {
    protocol::write_frame(conn, frame).map_err(transport)?;
    let reply = match protocol::read_frame(conn) {
        Ok(Some(reply)) => reply,
        Ok(None) => return Err(ModelError::Transport("server closed the connection".into())),
        Err(ProtocolError::Io(e)) => return Err(transport(e)),
        Err(ProtocolError::Truncated) => return Err(ModelError::Transport("truncated reply".into())),
        Err(e) => return Err(ModelError::Protocol(e.to_string())),
    };
    match reply.msg_type {
        t if t == expect => Ok(reply.payload),
        protocol::ERROR => Err(ModelError::Remote(String::from_utf8_lossy(&reply.payload).into_owned())),
        t => Err(ModelError::Protocol(format!("expected message type {expect}, got {t}"))),
    }
}

impl SegmentationModel for RemoteModel {
    fn info(&self) -> ModelInfo {
        self.info
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let payload = protocol::encode_f32(x.iter().copied());
        let reply = self.request(&Frame::new(protocol::FORWARD, payload), protocol::LOGITS)?;
        let logits = protocol::decode_f32(&reply).map_err(|e| ModelError::Protocol(e.to_string()))?;
        let expected = x.len() * self.info.num_classes;
        if logits.len() != expected {
            return Err(ModelError::Protocol(format!("LOGITS has {} values, expected {expected}", logits.len())));
        }
        Ok(logits)
    }

    fn proxy_gradient(&self, x: &[f64], class_id: usize, mask: &[u8]) -> Result<Vec<f64>, ModelError> {
        if !self.info.has_gradient {
            return Err(ModelError::NoGradient);
        }
        let payload = protocol::encode_gradient_request(class_id as u32, x, mask);
        let reply = self.request(&Frame::new(protocol::GRADIENT, payload), protocol::GRAD)?;
        let grad = protocol::decode_f32(&reply).map_err(|e| ModelError::Protocol(e.to_string()))?;
        if grad.len() != x.len() {
            return Err(ModelError::Protocol(format!("GRAD has {} values, expected {}", grad.len(), x.len())));
        }
        Ok(grad)
    }
}
