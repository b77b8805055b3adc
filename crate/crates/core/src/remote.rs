//! External denoiser sessions over the v1 wire protocol, plus a reference
//! server loop that exposes any in-process [`Denoiser`].

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::prior::{Denoiser, DenoiserInfo, PriorError};
use crate::protocol::{read_frame, read_raw_frame, to_f32, to_f64, write_frame, Frame, ProtocolError};

/// Where an external denoiser lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command speaking the protocol on stdin/stdout.
    Command(String),
    /// `host:port` of a TCP server.
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = std::convert::Infallible;

    /// `tcp://host:port` selects TCP; anything else is run as a command.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.strip_prefix("tcp://") {
            Some(addr) => Endpoint::Tcp(addr.to_string()),
            None => Endpoint::Command(s.to_string()),
        })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Command(c) => write!(f, "{c}"),
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
        }
    }
}

/// A synchronous session with one outstanding request at a time.
pub struct RemoteDenoiser {
    writer: Box<dyn Write + Send>,
    frames: Receiver<Result<Frame, ProtocolError>>,
    info: DenoiserInfo,
    timeout: Duration,
    child: Option<Child>,
}

impl fmt::Debug for RemoteDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteDenoiser")
            .field("info", &self.info)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl RemoteDenoiser {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ProtocolError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Self::handshake(Box::new(reader), Box::new(stream), timeout, None)
            }
            Endpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::handshake(Box::new(stdout), Box::new(stdin), timeout, Some(child))
            }
        }
    }

    /// Session over an arbitrary byte stream pair.
    pub fn from_streams(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        timeout: Duration,
    ) -> Result<Self, ProtocolError> {
        Self::handshake(reader, writer, timeout, None)
    }

    fn handshake(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        timeout: Duration,
        child: Option<Child>,
    ) -> Result<Self, ProtocolError> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let frame = read_frame(&mut reader);
                let stop = frame.is_err();
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Self {
            writer: Box::new(BufWriter::new(writer)),
            frames: rx,
            info: DenoiserInfo {
                sample_rate: 0,
                supported_length: 0,
                sigma_data: 0.0,
            },
            timeout,
            child,
        };
        let reply = session.request(&Frame::Hello {
            sample_rate: 0,
            supported_length: 0,
            sigma_data: 0.0,
        })?;
        match reply {
            Frame::Hello {
                sample_rate,
                supported_length,
                sigma_data,
            } => {
                session.info = DenoiserInfo {
                    sample_rate,
                    supported_length: supported_length as usize,
                    sigma_data: sigma_data as f64,
                };
                Ok(session)
            }
            other => Err(ProtocolError::Unexpected {
                expected: "HELLO",
                got: other.name(),
            }),
        }
    }

    fn request(&mut self, frame: &Frame) -> Result<Frame, ProtocolError> {
        write_frame(&mut self.writer, frame)?;
        match self.frames.recv_timeout(self.timeout) {
            Ok(Ok(Frame::Error { message })) => Err(ProtocolError::Remote(message)),
            Ok(result) => result,
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Closed),
        }
    }

    fn values(&mut self, frame: &Frame, n: usize) -> Result<Vec<f64>, PriorError> {
        match self.request(frame)? {
            Frame::Result { values } if values.len() == n => Ok(to_f64(&values)),
            Frame::Result { values } => Err(PriorError::LengthMismatch {
                expected: n,
                got: values.len(),
            }),
            other => Err(ProtocolError::Unexpected {
                expected: "RESULT",
                got: other.name(),
            }
            .into()),
        }
    }
}

impl Drop for RemoteDenoiser {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Denoiser for RemoteDenoiser {
    fn info(&self) -> DenoiserInfo {
        self.info
    }

    fn denoise(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        let frame = Frame::Denoise {
            sigma: sigma as f32,
            x: to_f32(x),
        };
        self.values(&frame, x.len())
    }

    fn vjp(&mut self, x: &[f64], sigma: f64, v: &[f64]) -> Result<Vec<f64>, PriorError> {
        let frame = Frame::Vjp {
            sigma: sigma as f32,
            x: to_f32(x),
            v: to_f32(v),
        };
        self.values(&frame, x.len())
    }
}

/// Answers protocol requests from `reader` with `denoiser` until the peer
/// closes the stream. Undecodable payloads get an ERROR reply and the loop
/// continues; a broken frame header ends the session.
pub fn serve<D: Denoiser, R: Read, W: Write>(denoiser: &mut D, reader: R, writer: W) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    loop {
        let (opcode, payload) = match read_raw_frame(&mut reader) {
            Ok(raw) => raw,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(e) => {
                let _ = write_frame(&mut writer, &Frame::Error { message: e.to_string() });
                return Err(e);
            }
        };
        let reply = match Frame::decode(opcode, &payload) {
            Ok(frame) => answer(denoiser, frame),
            Err(e) => Frame::Error { message: e.to_string() },
        };
        write_frame(&mut writer, &reply)?;
    }
}

fn answer<D: Denoiser>(denoiser: &mut D, frame: Frame) -> Frame {
    let info = denoiser.info();
    let result = match frame {
        Frame::Hello { .. } => {
            return Frame::Hello {
                sample_rate: info.sample_rate,
                supported_length: info.supported_length as u32,
                sigma_data: info.sigma_data as f32,
            }
        }
        Frame::Denoise { sigma, x } => denoiser.denoise(&to_f64(&x), sigma as f64),
        Frame::Vjp { sigma, x, v } => denoiser.vjp(&to_f64(&x), sigma as f64, &to_f64(&v)),
        other => {
            return Frame::Error {
                message: format!("unexpected {} request", other.name()),
            }
        }
    };
    match result {
        Ok(values) if values.iter().all(|v| v.is_finite()) => Frame::Result { values: to_f32(&values) },
        Ok(_) => Frame::Error {
            message: "denoiser produced non-finite output".into(),
        },
        Err(e) => Frame::Error { message: e.to_string() },
    }
}
