//! Length-prefixed framing for talking to model servers.
//!
//! Every message is `"A2XP"`, a `u8` message type, a little-endian `u64`
//! payload length and the payload itself.
//!
//! | type | name     | payload                                   |
//! |------|----------|-------------------------------------------|
//! | 1    | HELLO    | empty                                     |
//! | 2    | INFO     | JSON `{num_classes, dims, has_gradient}`  |
//! | 3    | FORWARD  | `p` × f32 input                           |
//! | 4    | LOGITS   | `p·l` × f32, voxel-major                  |
//! | 5    | GRADIENT | u32 class id, `p` × f32 input, `p` × u8 mask |
//! | 6    | GRAD     | `p` × f32                                 |
//! | 255  | ERROR    | UTF-8 message                             |

use std::io::{self, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SegmentationModel;
use crate::volume::Dims;

pub const MAGIC: &[u8; 4] = b"A2XP";
pub const HEADER_LEN: usize = 13;
/// Refuse to allocate for frames larger than this.
pub const MAX_PAYLOAD: u64 = 1 << 32;

pub const HELLO: u8 = 1;
pub const INFO: u8 = 2;
pub const FORWARD: u8 = 3;
pub const LOGITS: u8 = 4;
pub const GRADIENT: u8 = 5;
pub const GRAD: u8 = 6;
pub const ERROR: u8 = 255;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated frame")]
    Truncated,
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(u64),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }

    pub fn error(message: impl AsRef<str>) -> Self {
        Frame::new(ERROR, message.as_ref().as_bytes().to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. A clean end of stream before any header byte yields `None`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let msg_type = header[4];
    let len = u64::from_le_bytes(header[5..13].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
        _ => ProtocolError::Io(e),
    })?;
    Ok(Some(Frame { msg_type, payload }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoMessage {
    pub num_classes: usize,
    pub dims: [usize; 3],
    pub has_gradient: bool,
}

pub fn encode_f32(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>, ProtocolError> {
    if bytes.len() % 4 != 0 {
        return Err(ProtocolError::Malformed(format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

pub fn encode_gradient_request(class_id: u32, x: &[f64], mask: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + x.len() * 5);
    out.extend_from_slice(&class_id.to_le_bytes());
    out.extend(encode_f32(x.iter().copied()));
    out.extend_from_slice(mask);
    out
}

pub fn decode_gradient_request(payload: &[u8], p: usize) -> Result<(usize, Vec<f64>, Vec<u8>), ProtocolError> {
    let expected = 4 + 5 * p;
    if payload.len() != expected {
        return Err(ProtocolError::Malformed(format!(
            "GRADIENT payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let class_id = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
    let x = decode_f32(&payload[4..4 + 4 * p])?;
    let mask = payload[4 + 4 * p..].to_vec();
    if mask.iter().any(|&m| m > 1) {
        return Err(ProtocolError::Malformed("mask is not binary".into()));
    }
    Ok((class_id, x, mask))
}

/// Answers one request frame on behalf of `model`.
pub fn respond(model: &dyn SegmentationModel, request: &Frame) -> Frame {
    let info = model.info();
    let p = info.dims.len();
    match request.msg_type {
        HELLO => {
            let msg = InfoMessage { num_classes: info.num_classes, dims: info.dims.0, has_gradient: info.has_gradient };
            Frame::new(INFO, serde_json::to_vec(&msg).expect("info serializes"))
        }
        FORWARD => {
            let x = match decode_f32(&request.payload) {
                Ok(x) if x.len() == p => x,
                Ok(x) => return Frame::error(format!("FORWARD carries {} voxels, expected {p}", x.len())),
                Err(e) => return Frame::error(e.to_string()),
            };
            match model.logits(&x) {
                Ok(logits) => Frame::new(LOGITS, encode_f32(logits)),
                Err(e) => Frame::error(e.to_string()),
            }
        }
        GRADIENT => {
            if !info.has_gradient {
                return Frame::error("model has no gradient capability");
            }
            let (class_id, x, mask) = match decode_gradient_request(&request.payload, p) {
                Ok(parts) => parts,
                Err(e) => return Frame::error(e.to_string()),
            };
            if class_id >= info.num_classes {
                return Frame::error(format!("class {class_id} out of range"));
            }
            match model.proxy_gradient(&x, class_id, &mask) {
                Ok(grad) => Frame::new(GRAD, encode_f32(grad)),
                Err(e) => Frame::error(e.to_string()),
            }
        }
        other => Frame::error(format!("unknown message type {other}")),
    }
}

/// Serves requests on one connection until the peer closes it. Requests are
/// handled strictly in order, one reply per request.
pub fn serve<S: Read + Write>(model: &dyn SegmentationModel, stream: &mut S) -> Result<(), ProtocolError> {
    loop {
        match read_frame(stream) {
            Ok(Some(frame)) => write_frame(stream, &respond(model, &frame))?,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Malformed(msg)) => write_frame(stream, &Frame::error(msg))?,
            Err(e @ (ProtocolError::BadMagic(_) | ProtocolError::TooLarge(_))) => {
                // The stream position is unknown after a bad header; report and hang up.
                let _ = write_frame(stream, &Frame::error(e.to_string()));
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve_listener(model: Arc<dyn SegmentationModel>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let mut stream = stream?;
        let model = Arc::clone(&model);
        std::thread::spawn(move || {
            let _ = serve(model.as_ref(), &mut stream);
        });
    }
    Ok(())
}

impl InfoMessage {
    pub fn dims(&self) -> Dims {
        Dims(self.dims)
    }
}
