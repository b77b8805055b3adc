//! Denoiser wire protocol, version 1.
//!
//! Every message is a frame:
//!
//! ```text
//! "BDP1" | opcode: u8 | payload_len: u32 LE | payload
//! ```
//!
//! | opcode | name    | payload                                              |
//! |--------|---------|------------------------------------------------------|
//! | 0      | HELLO   | sample_rate u32, supported_length u32, sigma_data f32 |
//! | 1      | DENOISE | sigma f32, n u32, x: n × f32                          |
//! | 2      | VJP     | sigma f32, n u32, x: n × f32, v: n × f32              |
//! | 3      | RESULT  | n u32, values: n × f32                                |
//! | 4      | ERROR   | UTF-8 message                                        |
//!
//! All integers and floats are little-endian and every float must be finite.
//! The client opens with a HELLO (fields zeroed) and the server answers with
//! its own HELLO.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"BDP1";
pub const PROTOCOL_VERSION: u8 = 1;
/// Upper bound on a single payload, guarding against corrupt length fields.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
    #[error("protocol version mismatch: peer speaks {0:?}")]
    VersionMismatch(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("non-finite value in {0} payload")]
    NonFinite(&'static str),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("timed out waiting for the denoiser")]
    Timeout,
    #[error("unexpected {got} frame, expected {expected}")]
    Unexpected { expected: &'static str, got: &'static str },
    #[error("connection closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello {
        sample_rate: u32,
        supported_length: u32,
        sigma_data: f32,
    },
    Denoise {
        sigma: f32,
        x: Vec<f32>,
    },
    Vjp {
        sigma: f32,
        x: Vec<f32>,
        v: Vec<f32>,
    },
    Result {
        values: Vec<f32>,
    },
    Error {
        message: String,
    },
}

impl Frame {
    pub fn opcode(&self) -> u8 {
        match self {
            Frame::Hello { .. } => 0,
            Frame::Denoise { .. } => 1,
            Frame::Vjp { .. } => 2,
            Frame::Result { .. } => 3,
            Frame::Error { .. } => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "HELLO",
            Frame::Denoise { .. } => "DENOISE",
            Frame::Vjp { .. } => "VJP",
            Frame::Result { .. } => "RESULT",
            Frame::Error { .. } => "ERROR",
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Frame::Hello {
                sample_rate,
                supported_length,
                sigma_data,
            } => {
                p.extend_from_slice(&sample_rate.to_le_bytes());
                p.extend_from_slice(&supported_length.to_le_bytes());
                p.extend_from_slice(&sigma_data.to_le_bytes());
            }
            Frame::Denoise { sigma, x } => {
                p.extend_from_slice(&sigma.to_le_bytes());
                put_floats(&mut p, x);
            }
            Frame::Vjp { sigma, x, v } => {
                p.extend_from_slice(&sigma.to_le_bytes());
                p.extend_from_slice(&(x.len() as u32).to_le_bytes());
                x.iter().for_each(|f| p.extend_from_slice(&f.to_le_bytes()));
                v.iter().for_each(|f| p.extend_from_slice(&f.to_le_bytes()));
            }
            Frame::Result { values } => put_floats(&mut p, values),
            Frame::Error { message } => p.extend_from_slice(message.as_bytes()),
        }
        p
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(9 + payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.opcode());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(opcode: u8, payload: &[u8]) -> Result<Frame, ProtocolError> {
        let mut r = Cursor { buf: payload, pos: 0 };
        let frame = match opcode {
            0 => Frame::Hello {
                sample_rate: r.u32()?,
                supported_length: r.u32()?,
                sigma_data: r.f32()?,
            },
            1 => {
                let sigma = r.f32()?;
                let n = r.u32()? as usize;
                Frame::Denoise { sigma, x: r.floats(n)? }
            }
            2 => {
                let sigma = r.f32()?;
                let n = r.u32()? as usize;
                let x = r.floats(n)?;
                Frame::Vjp { sigma, x, v: r.floats(n)? }
            }
            3 => {
                let n = r.u32()? as usize;
                Frame::Result { values: r.floats(n)? }
            }
            4 => Frame::Error {
                message: String::from_utf8(payload.to_vec())
                    .map_err(|_| ProtocolError::Malformed("ERROR payload is not UTF-8".into()))?,
            },
            other => return Err(ProtocolError::Malformed(format!("unknown opcode {other}"))),
        };
        if opcode != 4 && r.pos != payload.len() {
            return Err(ProtocolError::Malformed(format!(
                "{} trailing bytes in {} payload",
                payload.len() - r.pos,
                frame.name()
            )));
        }
        frame.check_finite()?;
        Ok(frame)
    }

    fn check_finite(&self) -> Result<(), ProtocolError> {
        let ok = |v: &[f32]| v.iter().all(|f| f.is_finite());
        let finite = match self {
            Frame::Hello { sigma_data, .. } => sigma_data.is_finite(),
            Frame::Denoise { sigma, x } => sigma.is_finite() && ok(x),
            Frame::Vjp { sigma, x, v } => sigma.is_finite() && ok(x) && ok(v),
            Frame::Result { values } => ok(values),
            Frame::Error { .. } => true,
        };
        if finite {
            Ok(())
        } else {
            Err(ProtocolError::NonFinite(self.name()))
        }
    }
}

fn put_floats(p: &mut Vec<u8>, values: &[f32]) {
    p.extend_from_slice(&(values.len() as u32).to_le_bytes());
    values.iter().for_each(|f| p.extend_from_slice(&f.to_le_bytes()));
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ProtocolError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ProtocolError::Malformed("payload too short".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ProtocolError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>, ProtocolError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| ProtocolError::Malformed("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> Result<(), ProtocolError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the header yields
/// [`ProtocolError::Closed`].
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Frame, ProtocolError> {
    let (opcode, payload) = read_raw_frame(r)?;
    Frame::decode(opcode, &payload)
}

/// Reads the header and payload bytes without interpreting the payload, so a
/// server can reject a bad payload and keep the stream in sync.
pub fn read_raw_frame<R: Read + ?Sized>(r: &mut R) -> Result<(u8, Vec<u8>), ProtocolError> {
    let mut header = [0u8; 9];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(ProtocolError::Closed),
            Ok(0) => return Err(ProtocolError::Malformed("truncated header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Err(ProtocolError::Timeout)
            }
            Err(e) => return Err(e.into()),
        }
    }
    if header[..3] != MAGIC[..3] {
        return Err(ProtocolError::Malformed(format!("bad magic {:?}", &header[..4])));
    }
    if header[3] != MAGIC[3] {
        return Err(ProtocolError::VersionMismatch(
            String::from_utf8_lossy(&header[..4]).into_owned(),
        ));
    }
    let opcode = header[4];
    let len = u32::from_le_bytes(header[5..9].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Malformed(format!("payload of {len} bytes")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Malformed("truncated payload".into()),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProtocolError::Timeout,
        _ => ProtocolError::Io(e),
    })?;
    Ok((opcode, payload))
}

pub fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

pub fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}
