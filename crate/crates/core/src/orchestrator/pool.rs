use std::collections::VecDeque;
use std::ffi::OsString;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::protocol::{read_frame, write_frame, Frame, ProtocolError, Task, TaskResult};
use super::{check_unique_sorted, hex, worker_loop, OrchestratorError, RolloutProvider};
use crate::objective::Objective;

/// Re-deliveries allowed for a task whose worker died mid-flight.
pub const MAX_RETRIES: u32 = 2;

/// How long the controller waits for all workers to connect.
pub const ACCEPT_TIMEOUT: Duration = Duration::from_secs(30);

struct Connection {
    stream: TcpStream,
    peer: SocketAddr,
}

struct Schedule {
    queue: VecDeque<usize>,
    attempts: Vec<u32>,
    outstanding: usize,
}

/// Controller side of a set of socket-connected workers.
///
/// Scheduling is pull-based: each connection has a dispatcher thread that
/// takes the next task from a shared queue as soon as its worker replies.
/// A task in flight on a worker that disconnects goes back to the front of
/// the queue, at most [`MAX_RETRIES`] times.
pub struct WorkerPool {
    conns: Vec<Connection>,
    hash: [u8; 32],
    threads: Vec<JoinHandle<()>>,
    children: Vec<Child>,
}

impl WorkerPool {
    /// Accepts `n` workers on `listener` and verifies each one's scenario hash.
    pub fn accept(listener: &TcpListener, n: usize, hash: [u8; 32], timeout: Duration) -> Result<Self, OrchestratorError> {
        let mut pool = WorkerPool {
            conns: Vec::with_capacity(n),
            hash,
            threads: Vec::new(),
            children: Vec::new(),
        };
        pool.accept_more(listener, n, timeout)?;
        Ok(pool)
    }

    fn accept_more(&mut self, listener: &TcpListener, n: usize, timeout: Duration) -> Result<(), OrchestratorError> {
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        let mut connected = 0;
        while connected < n {
            match listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    let mut conn = Connection { stream, peer };
                    self.handshake(&mut conn)?;
                    self.conns.push(conn);
                    connected += 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline || self.children_exited() {
                        listener.set_nonblocking(false)?;
                        return Err(OrchestratorError::HandshakeTimeout { connected, expected: n });
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
        listener.set_nonblocking(false)?;
        Ok(())
    }

    fn handshake(&self, conn: &mut Connection) -> Result<(), OrchestratorError> {
        write_frame(&mut conn.stream, &Frame::Ping)?;
        match read_frame(&mut conn.stream)? {
            Frame::Pong { scenario_hash } if scenario_hash == self.hash => Ok(()),
            Frame::Pong { scenario_hash } => Err(OrchestratorError::HashMismatch {
                worker: hex(&scenario_hash),
                controller: hex(&self.hash),
            }),
            _ => Err(ProtocolError::Malformed("expected pong").into()),
        }
    }

    fn children_exited(&mut self) -> bool {
        !self.children.is_empty() && self.children.iter_mut().all(|c| matches!(c.try_wait(), Ok(Some(_))))
    }

    /// `n` in-process worker threads connected over loopback sockets.
    pub fn spawn_threads(objective: Arc<dyn Objective>, n: usize) -> Result<Self, OrchestratorError> {
        Self::spawn_threads_with_faults(objective, &vec![None; n])
    }

    /// Like [`spawn_threads`](Self::spawn_threads), with one entry per
    /// worker giving the task number on which it drops its connection.
    pub fn spawn_threads_with_faults(objective: Arc<dyn Objective>, die_after: &[Option<u64>]) -> Result<Self, OrchestratorError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let endpoint = listener.local_addr()?.to_string();
        let mut pool = WorkerPool {
            conns: Vec::new(),
            hash: objective.fingerprint(),
            threads: Vec::new(),
            children: Vec::new(),
        };
        for (i, &die) in die_after.iter().enumerate() {
            let objective = Arc::clone(&objective);
            let endpoint = endpoint.clone();
            let handle = thread::Builder::new()
                .name(format!("worker-{i}"))
                .spawn(move || {
                    if let Err(e) = worker_loop(&endpoint, objective.as_ref(), die) {
                        log::warn!("worker thread {i} stopped: {e}");
                    }
                })?;
            pool.threads.push(handle);
        }
        pool.accept_more(&listener, die_after.len(), ACCEPT_TIMEOUT)?;
        Ok(pool)
    }

    /// Launches `n` worker processes as `program <args> --endpoint <addr>`.
    pub fn spawn_processes(
        program: &Path,
        args: &[OsString],
        n: usize,
        hash: [u8; 32],
        bind: &str,
    ) -> Result<Self, OrchestratorError> {
        let listener = TcpListener::bind(bind)?;
        let endpoint = listener.local_addr()?.to_string();
        let mut pool = WorkerPool {
            conns: Vec::new(),
            hash,
            threads: Vec::new(),
            children: Vec::new(),
        };
        for _ in 0..n {
            let child = Command::new(program)
                .args(args)
                .arg("--endpoint")
                .arg(&endpoint)
                .stdin(Stdio::null())
                .spawn()
                .map_err(OrchestratorError::Spawn)?;
            pool.children.push(child);
        }
        pool.accept_more(&listener, n, ACCEPT_TIMEOUT)?;
        Ok(pool)
    }

    pub fn live_workers(&self) -> usize {
        self.conns.len()
    }

    /// Sends shutdown to every worker and reaps threads and processes.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        for conn in &mut self.conns {
            let _ = write_frame(&mut conn.stream, &Frame::Shutdown);
        }
        self.conns.clear();
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        for mut child in self.children.drain(..) {
            loop {
                match child.try_wait() {
                    Ok(Some(_)) | Err(_) => break,
                    Ok(None) if Instant::now() >= deadline => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                    Ok(None) => thread::sleep(Duration::from_millis(5)),
                }
            }
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.close();
    }
}

/// Sends one task and waits for its answer; `Err` means the worker is gone.
fn exchange(conn: &mut Connection, task: &Task) -> Result<TaskResult, ProtocolError> {
    write_frame(&mut conn.stream, &Frame::Task(task.clone()))?;
    match read_frame(&mut conn.stream)? {
        Frame::Result(r) if r.task_id == task.task_id => Ok(r),
        Frame::Mismatch { task_id, scenario_hash } if task_id == task.task_id => Ok(TaskResult {
            task_id,
            outcome: Err(format!("worker refused task: scenario hash {}", hex(&scenario_hash))),
        }),
        _ => Err(ProtocolError::Malformed("unexpected reply to task")),
    }
}

impl RolloutProvider for WorkerPool {
    fn run_batch(&mut self, mut tasks: Vec<Task>) -> Result<Vec<TaskResult>, OrchestratorError> {
        check_unique_sorted(&mut tasks)?;
        if tasks.is_empty() {
            return Ok(Vec::new());
        }
        if self.conns.is_empty() {
            return Err(OrchestratorError::PoolUnavailable { pending: tasks.len() });
        }
        let n = tasks.len();
        let sched = Mutex::new(Schedule {
            queue: (0..n).collect(),
            attempts: vec![0; n],
            outstanding: n,
        });
        let wake = Condvar::new();
        let slots: Mutex<Vec<Option<TaskResult>>> = Mutex::new(vec![None; n]);
        let tasks = &tasks;

        let alive: Vec<bool> = thread::scope(|s| {
            let handles: Vec<_> = self
                .conns
                .iter_mut()
                .map(|conn| {
                    let (sched, wake, slots) = (&sched, &wake, &slots);
                    s.spawn(move || loop {
                        let idx = {
                            let mut st = sched.lock().unwrap();
                            loop {
                                if st.outstanding == 0 {
                                    return true;
                                }
                                if let Some(i) = st.queue.pop_front() {
                                    break i;
                                }
                                st = wake.wait(st).unwrap();
                            }
                        };
                        match exchange(conn, &tasks[idx]) {
                            Ok(result) => {
                                slots.lock().unwrap()[idx] = Some(result);
                                sched.lock().unwrap().outstanding -= 1;
                                wake.notify_all();
                            }
                            Err(e) => {
                                log::warn!("worker {} lost during task {}: {e}", conn.peer, tasks[idx].task_id);
                                let mut st = sched.lock().unwrap();
                                st.attempts[idx] += 1;
                                if st.attempts[idx] > MAX_RETRIES {
                                    slots.lock().unwrap()[idx] = Some(TaskResult {
                                        task_id: tasks[idx].task_id,
                                        outcome: Err(format!("task lost after {MAX_RETRIES} retries")),
                                    });
                                    st.outstanding -= 1;
                                } else {
                                    st.queue.push_front(idx);
                                }
                                drop(st);
                                wake.notify_all();
                                return false;
                            }
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or(false)).collect()
        });

        let mut keep = alive.into_iter();
        self.conns.retain(|_| keep.next().unwrap_or(false));
        let pending = sched.into_inner().unwrap().outstanding;
        if pending > 0 {
            return Err(OrchestratorError::PoolUnavailable { pending });
        }
        Ok(slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect())
    }
}
