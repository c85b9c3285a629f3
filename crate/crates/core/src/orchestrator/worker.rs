use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{read_frame, write_frame, Frame, ProtocolError};
use super::{execute, OrchestratorError};
use crate::objective::Objective;

/// Answers frames on an established connection until shutdown or EOF.
///
/// `die_after = Some(k)` makes the worker drop the connection on receipt of
/// its k-th task without replying; it exists for fault-injection tests.
pub fn serve(mut stream: TcpStream, objective: &dyn Objective, die_after: Option<u64>) -> Result<(), ProtocolError> {
    stream.set_nodelay(true)?;
    let hash = objective.fingerprint();
    let mut received = 0u64;
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        match frame {
            Frame::Ping => write_frame(&mut stream, &Frame::Pong { scenario_hash: hash })?,
            Frame::Shutdown => return Ok(()),
            Frame::Task(task) => {
                received += 1;
                if die_after == Some(received) {
                    log::warn!("worker terminating on task {} (fault injection)", task.task_id);
                    return Ok(());
                }
                let reply = if task.scenario_hash != hash {
                    Frame::Mismatch {
                        task_id: task.task_id,
                        scenario_hash: hash,
                    }
                } else {
                    let result = execute(objective, &task);
                    if let Err(msg) = &result.outcome {
                        log::warn!("task {} failed: {msg}", task.task_id);
                    }
                    Frame::Result(result)
                };
                write_frame(&mut stream, &reply)?;
            }
            Frame::Result(_) | Frame::Pong { .. } | Frame::Mismatch { .. } => {
                return Err(ProtocolError::Malformed("controller-bound frame sent to worker"))
            }
        }
    }
}

/// Connects to a controller (retrying for a few seconds) and serves it.
pub fn worker_loop(endpoint: &str, objective: &dyn Objective, die_after: Option<u64>) -> Result<(), OrchestratorError> {
    let deadline = Instant::now() + Duration::from_secs(10);
    let stream = loop {
        match TcpStream::connect(endpoint) {
            Ok(s) => break s,
            Err(e) if Instant::now() < deadline => {
                log::debug!("connect to {endpoint} failed ({e}); retrying");
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    };
    serve(stream, objective, die_after)?;
    Ok(())
}
