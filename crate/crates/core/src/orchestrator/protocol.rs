//! Length-prefixed binary frames between the controller and its workers.
//!
//! ```text
//! frame    : u32 len (LE, counts type byte + payload) | u8 type | payload
//! payload  : u8 version (= PROTOCOL_VERSION) | body
//!
//! type 1 task     : u64 task_id | u64 seed | [u8; 32] scenario_hash | u32 n | n × f64 sample
//! type 2 result   : u64 task_id | u8 status | ok: f64 min_ttc | u8 crashed | u64 crash_step
//!                   (u64::MAX = none) | u64 steps | f64 log_p0 | u64 seed
//!                                           | failed: u32 len | len bytes UTF-8 message
//! type 3 ping     : (empty body)
//! type 4 pong     : [u8; 32] scenario_hash
//! type 5 shutdown : (empty body)
//! type 6 mismatch : u64 task_id | [u8; 32] worker scenario_hash
//! ```
//!
//! All integers and reals are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::sim::RolloutResult;

pub const PROTOCOL_VERSION: u8 = 1;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

const TYPE_TASK: u8 = 1;
const TYPE_RESULT: u8 = 2;
const TYPE_PING: u8 = 3;
const TYPE_PONG: u8 = 4;
const TYPE_SHUTDOWN: u8 = 5;
const TYPE_MISMATCH: u8 = 6;

const STATUS_OK: u8 = 0;
const STATUS_FAILED: u8 = 1;
const NO_CRASH: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("connection i/o: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("unknown frame type {0}")]
    FrameType(u8),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("frame length {0} out of range")]
    Length(u32),
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

/// One unit of work: evaluate the objective at `sample` with `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: u64,
    pub seed: u64,
    pub scenario_hash: [u8; 32],
    pub sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task_id: u64,
    pub outcome: Result<RolloutResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Task(Task),
    Result(TaskResult),
    Ping,
    Pong { scenario_hash: [u8; 32] },
    Shutdown,
    Mismatch { task_id: u64, scenario_hash: [u8; 32] },
}

impl Frame {
    fn type_byte(&self) -> u8 {
        match self {
            Frame::Task(_) => TYPE_TASK,
            Frame::Result(_) => TYPE_RESULT,
            Frame::Ping => TYPE_PING,
            Frame::Pong { .. } => TYPE_PONG,
            Frame::Shutdown => TYPE_SHUTDOWN,
            Frame::Mismatch { .. } => TYPE_MISMATCH,
        }
    }

    /// Full wire encoding, length prefix included.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![self.type_byte(), PROTOCOL_VERSION];
        match self {
            Frame::Task(t) => {
                body.extend_from_slice(&t.task_id.to_le_bytes());
                body.extend_from_slice(&t.seed.to_le_bytes());
                body.extend_from_slice(&t.scenario_hash);
                body.extend_from_slice(&(t.sample.len() as u32).to_le_bytes());
                for x in &t.sample {
                    body.extend_from_slice(&x.to_le_bytes());
                }
            }
            Frame::Result(r) => {
                body.extend_from_slice(&r.task_id.to_le_bytes());
                match &r.outcome {
                    Ok(res) => {
                        body.push(STATUS_OK);
                        body.extend_from_slice(&res.min_ttc.to_le_bytes());
                        body.push(res.crashed as u8);
                        body.extend_from_slice(&res.crash_step.unwrap_or(NO_CRASH).to_le_bytes());
                        body.extend_from_slice(&res.steps.to_le_bytes());
                        body.extend_from_slice(&res.log_p0.to_le_bytes());
                        body.extend_from_slice(&res.seed.to_le_bytes());
                    }
                    Err(msg) => {
                        body.push(STATUS_FAILED);
                        body.extend_from_slice(&(msg.len() as u32).to_le_bytes());
                        body.extend_from_slice(msg.as_bytes());
                    }
                }
            }
            Frame::Ping | Frame::Shutdown => {}
            Frame::Pong { scenario_hash } => body.extend_from_slice(scenario_hash),
            Frame::Mismatch { task_id, scenario_hash } => {
                body.extend_from_slice(&task_id.to_le_bytes());
                body.extend_from_slice(scenario_hash);
            }
        }
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Decodes the bytes following the length prefix (type byte onwards).
    pub fn decode(body: &[u8]) -> Result<Frame, ProtocolError> {
        let mut c = Cursor { buf: body, pos: 0 };
        let ty = c.u8()?;
        if !(TYPE_TASK..=TYPE_MISMATCH).contains(&ty) {
            return Err(ProtocolError::FrameType(ty));
        }
        let version = c.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(version));
        }
        let frame = match ty {
            TYPE_TASK => {
                let task_id = c.u64()?;
                let seed = c.u64()?;
                let scenario_hash = c.hash()?;
                let n = c.u32()? as usize;
                if n > c.remaining() / 8 {
                    return Err(ProtocolError::Malformed("sample length exceeds frame"));
                }
                let sample = (0..n).map(|_| c.f64()).collect::<Result<_, _>>()?;
                Frame::Task(Task {
                    task_id,
                    seed,
                    scenario_hash,
                    sample,
                })
            }
            TYPE_RESULT => {
                let task_id = c.u64()?;
                let outcome = match c.u8()? {
                    STATUS_OK => {
                        let min_ttc = c.f64()?;
                        let crashed = match c.u8()? {
                            0 => false,
                            1 => true,
                            _ => return Err(ProtocolError::Malformed("crash flag not 0/1")),
                        };
                        let crash_step = match c.u64()? {
                            NO_CRASH => None,
                            s => Some(s),
                        };
                        Ok(RolloutResult {
                            min_ttc,
                            crashed,
                            crash_step,
                            steps: c.u64()?,
                            log_p0: c.f64()?,
                            seed: c.u64()?,
                        })
                    }
                    STATUS_FAILED => {
                        let n = c.u32()? as usize;
                        let bytes = c.take(n)?;
                        Err(String::from_utf8(bytes.to_vec())
                            .map_err(|_| ProtocolError::Malformed("failure message is not UTF-8"))?)
                    }
                    _ => return Err(ProtocolError::Malformed("unknown result status")),
                };
                Frame::Result(TaskResult { task_id, outcome })
            }
            TYPE_PING => Frame::Ping,
            TYPE_PONG => Frame::Pong {
                scenario_hash: c.hash()?,
            },
            TYPE_SHUTDOWN => Frame::Shutdown,
            _ => Frame::Mismatch {
                task_id: c.u64()?,
                scenario_hash: c.hash()?,
            },
        };
        if c.remaining() != 0 {
            return Err(ProtocolError::Malformed("trailing bytes"));
        }
        Ok(frame)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.remaining() < n {
            return Err(ProtocolError::Malformed("truncated payload"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<[u8; 32], ProtocolError> {
        Ok(self.take(32)?.try_into().unwrap())
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), ProtocolError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; a clean EOF before the length prefix is [`ProtocolError::Closed`].
pub fn read_frame(r: &mut impl Read) -> Result<Frame, ProtocolError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(ProtocolError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len < 2 || len > MAX_FRAME_LEN {
        return Err(ProtocolError::Length(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Frame::decode(&body)
}
