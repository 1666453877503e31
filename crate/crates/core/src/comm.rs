//! Coordinator/worker message protocol.
//!
//! Wire format (all integers and floats little-endian):
//!
//! ```text
//! vector      := u32 tag, u32 count, payload
//!   tag 0     dense:  count = length, payload = count × f64
//!   tag 1     sparse: count = nnz,    payload = count × u32 index, then count × f64 value
//! broadcast   := u64 round, u64 stage, f64 kappa, u32 flags, u32 dim, vector
//!   flags     bit 0 = run a local step, bit 1 = evaluate loss/conjugate sums
//! result      := u32 worker, u32 n_ell, u64 round, f64 loss_sum, f64 conj_sum,
//!                f64 dual_increase, u32 flags, u32 dim, vector
//!   flags     bit 0 = sums were evaluated
//! ```
//!
//! A vector is sent sparse when fewer than a quarter of its entries are
//! nonzero. Entries are compared by bit pattern, so `-0.0` survives a round trip.
//!
//! The in-process transport runs each worker on its own scoped thread and
//! talks to it over a pair of channels. Every payload crosses as bytes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{Scope, ScopedJoinHandle};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

const TAG_DENSE: u32 = 0;
const TAG_SPARSE: u32 = 1;

pub fn encode_vector(v: &[f64], out: &mut Vec<u8>) {
    let nnz = v.iter().filter(|x| x.to_bits() != 0).count();
    if nnz * 4 < v.len() {
        out.extend_from_slice(&TAG_SPARSE.to_le_bytes());
        out.extend_from_slice(&(nnz as u32).to_le_bytes());
        for (j, x) in v.iter().enumerate() {
            if x.to_bits() != 0 {
                out.extend_from_slice(&(j as u32).to_le_bytes());
            }
        }
        for x in v.iter().filter(|x| x.to_bits() != 0) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    } else {
        out.extend_from_slice(&TAG_DENSE.to_le_bytes());
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn encode(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::new();
    encode_vector(v, &mut out);
    out
}

/// Decodes a vector of dimension `dim` that must fill `buf` exactly.
pub fn decode(buf: &[u8], dim: usize) -> Result<Vec<f64>> {
    let mut r = Reader::new(buf);
    let v = r.vector(dim)?;
    r.finish()?;
    Ok(v)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Codec(format!("truncated buffer: need {end} bytes, have {}", self.buf.len())))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn vector(&mut self, dim: usize) -> Result<Vec<f64>> {
        let tag = self.u32()?;
        let count = self.u32()? as usize;
        match tag {
            TAG_DENSE => {
                if count != dim {
                    return Err(Error::Codec(format!("dense length {count}, expected {dim}")));
                }
                (0..count).map(|_| self.f64()).collect()
            }
            TAG_SPARSE => {
                if count > dim {
                    return Err(Error::Codec(format!("{count} sparse entries for dimension {dim}")));
                }
                let idx: Vec<u32> = (0..count).map(|_| self.u32()).collect::<Result<_>>()?;
                let mut v = vec![0.0; dim];
                for j in idx {
                    let slot = v
                        .get_mut(j as usize)
                        .ok_or_else(|| Error::Codec(format!("sparse index {j} outside dimension {dim}")))?;
                    *slot = self.f64()?;
                }
                Ok(v)
            }
            other => Err(Error::Codec(format!("bad vector tag {other}"))),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Codec(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Coordinator → workers, once per round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundBroadcast {
    pub round: u64,
    /// Identifies the current stage objective (its center `y`).
    pub stage: u64,
    pub kappa: f64,
    pub step: bool,
    pub evaluate: bool,
    /// Change of the synchronized direction since the previous broadcast.
    pub delta_v_tilde: Vec<f64>,
}

impl RoundBroadcast {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.delta_v_tilde.len());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.stage.to_le_bytes());
        out.extend_from_slice(&self.kappa.to_le_bytes());
        let flags = u32::from(self.step) | (u32::from(self.evaluate) << 1);
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.delta_v_tilde.len() as u32).to_le_bytes());
        encode_vector(&self.delta_v_tilde, &mut out);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let round = r.u64()?;
        let stage = r.u64()?;
        let kappa = r.f64()?;
        let flags = r.u32()?;
        if flags & !0b11 != 0 {
            return Err(Error::Codec(format!("unknown broadcast flags {flags:#x}")));
        }
        let dim = r.u32()? as usize;
        let delta_v_tilde = r.vector(dim)?;
        r.finish()?;
        Ok(Self { round, stage, kappa, step: flags & 1 != 0, evaluate: flags & 2 != 0, delta_v_tilde })
    }
}

/// Worker → coordinator, once per round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundResult {
    pub worker_id: u32,
    pub n_ell: u32,
    pub round: u64,
    /// Loss sum at the synchronized point (valid when `evaluated`).
    pub loss_sum: f64,
    /// Conjugate sum at the synchronized point (valid when `evaluated`).
    pub conj_sum: f64,
    pub dual_increase: f64,
    pub evaluated: bool,
    pub delta_v: Vec<f64>,
}

impl RoundResult {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + 8 * self.delta_v.len());
        out.extend_from_slice(&self.worker_id.to_le_bytes());
        out.extend_from_slice(&self.n_ell.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.loss_sum.to_le_bytes());
        out.extend_from_slice(&self.conj_sum.to_le_bytes());
        out.extend_from_slice(&self.dual_increase.to_le_bytes());
        out.extend_from_slice(&u32::from(self.evaluated).to_le_bytes());
        out.extend_from_slice(&(self.delta_v.len() as u32).to_le_bytes());
        encode_vector(&self.delta_v, &mut out);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let worker_id = r.u32()?;
        let n_ell = r.u32()?;
        let round = r.u64()?;
        let loss_sum = r.f64()?;
        let conj_sum = r.f64()?;
        let dual_increase = r.f64()?;
        let flags = r.u32()?;
        if flags > 1 {
            return Err(Error::Codec(format!("unknown result flags {flags:#x}")));
        }
        let dim = r.u32()? as usize;
        let delta_v = r.vector(dim)?;
        r.finish()?;
        Ok(Self { worker_id, n_ell, round, loss_sum, conj_sum, dual_increase, evaluated: flags == 1, delta_v })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CommStats {
    /// Completed broadcast/gather exchanges.
    pub rounds: u64,
    pub messages_up: u64,
    pub messages_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Time from broadcast until the last result arrived.
    pub exchange_time: Duration,
    /// Time the coordinator spent between a gather and the next broadcast.
    pub global_time: Duration,
}

impl CommStats {
    pub fn merge(&mut self, other: &CommStats) {
        self.rounds += other.rounds;
        self.messages_up += other.messages_up;
        self.messages_down += other.messages_down;
        self.bytes_up += other.bytes_up;
        self.bytes_down += other.bytes_down;
        self.exchange_time += other.exchange_time;
        self.global_time += other.global_time;
    }
}

/// Behaviour run on a worker thread.
pub trait Worker: Send {
    type Snapshot: Send;

    fn id(&self) -> usize;
    fn on_round(&mut self, msg: RoundBroadcast) -> Result<RoundResult>;
    fn on_rollback(&mut self);
    fn snapshot(&self) -> Self::Snapshot;
}

enum Down {
    Round(Vec<u8>),
    Rollback,
    Snapshot,
    Finish,
}

enum Up<S> {
    Result(Vec<u8>),
    Failed(String),
    Snapshot(S),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    AwaitingGather,
}

pub struct Coordinator<'scope, S> {
    down: Vec<Sender<Down>>,
    up: Vec<Receiver<Up<S>>>,
    handles: Vec<ScopedJoinHandle<'scope, ()>>,
    phase: Phase,
    round: u64,
    timeout: Duration,
    stats: CommStats,
    sent_at: Option<Instant>,
    gathered_at: Option<Instant>,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

fn worker_loop<W: Worker>(mut worker: W, rx: Receiver<Down>, tx: Sender<Up<W::Snapshot>>) {
    while let Ok(msg) = rx.recv() {
        match msg {
            Down::Round(bytes) => {
                let outcome = catch_unwind(AssertUnwindSafe(|| {
                    RoundBroadcast::decode(&bytes).and_then(|b| worker.on_round(b))
                }));
                let (reply, fatal) = match outcome {
                    Ok(Ok(res)) => (Up::Result(res.encode()), false),
                    Ok(Err(e)) => (Up::Failed(e.to_string()), true),
                    Err(p) => (Up::Failed(format!("panicked: {}", panic_message(p.as_ref()))), true),
                };
                if tx.send(reply).is_err() || fatal {
                    return;
                }
            }
            Down::Rollback => worker.on_rollback(),
            Down::Snapshot => {
                if tx.send(Up::Snapshot(worker.snapshot())).is_err() {
                    return;
                }
            }
            Down::Finish => return,
        }
    }
}

impl<'scope, S: Send + 'scope> Coordinator<'scope, S> {
    /// Starts one thread per worker. Workers must be given in ascending id
    /// order starting from 0.
    pub fn spawn<'env, W>(scope: &'scope Scope<'scope, 'env>, workers: Vec<W>, timeout: Duration) -> Result<Self>
    where
        W: Worker<Snapshot = S> + 'scope,
    {
        let mut down = Vec::with_capacity(workers.len());
        let mut up = Vec::with_capacity(workers.len());
        let mut handles = Vec::with_capacity(workers.len());
        for (k, worker) in workers.into_iter().enumerate() {
            if worker.id() != k {
                return Err(Error::ContractViolation(format!("worker at slot {k} reports id {}", worker.id())));
            }
            let (dtx, drx) = mpsc::channel();
            let (utx, urx) = mpsc::channel();
            handles.push(scope.spawn(move || worker_loop(worker, drx, utx)));
            down.push(dtx);
            up.push(urx);
        }
        Ok(Self {
            down,
            up,
            handles,
            phase: Phase::Idle,
            round: 0,
            timeout,
            stats: CommStats::default(),
            sent_at: None,
            gathered_at: None,
        })
    }

    pub fn workers(&self) -> usize {
        self.down.len()
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    pub fn broadcast(&mut self, msg: &RoundBroadcast) -> Result<()> {
        if self.phase == Phase::AwaitingGather {
            return Err(Error::ContractViolation("broadcast issued before the previous round was gathered".into()));
        }
        if let Some(t) = self.gathered_at.take() {
            self.stats.global_time += t.elapsed();
        }
        let bytes = msg.encode();
        for (k, tx) in self.down.iter().enumerate() {
            tx.send(Down::Round(bytes.clone()))
                .map_err(|_| Error::WorkerFailed { worker: k, reason: "worker exited".into() })?;
            self.stats.messages_down += 1;
            self.stats.bytes_down += bytes.len() as u64;
        }
        self.round = msg.round;
        self.phase = Phase::AwaitingGather;
        self.sent_at = Some(Instant::now());
        Ok(())
    }

    /// Blocks until every worker answered; results come back in ascending id order.
    pub fn gather(&mut self) -> Result<Vec<RoundResult>> {
        if self.phase != Phase::AwaitingGather {
            return Err(Error::ContractViolation("gather without a preceding broadcast".into()));
        }
        self.phase = Phase::Idle;
        let mut out = Vec::with_capacity(self.up.len());
        for (k, rx) in self.up.iter().enumerate() {
            let bytes = match rx.recv_timeout(self.timeout) {
                Ok(Up::Result(b)) => b,
                Ok(Up::Failed(reason)) => return Err(Error::WorkerFailed { worker: k, reason }),
                Ok(Up::Snapshot(_)) => {
                    return Err(Error::ContractViolation(format!("worker {k} sent a snapshot during a round")))
                }
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout { worker: k, timeout: self.timeout }),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::WorkerFailed { worker: k, reason: "worker exited".into() })
                }
            };
            self.stats.messages_up += 1;
            self.stats.bytes_up += bytes.len() as u64;
            let res = RoundResult::decode(&bytes)?;
            if res.worker_id as usize != k || res.round != self.round {
                return Err(Error::ContractViolation(format!(
                    "slot {k} answered as worker {} for round {} (expected round {})",
                    res.worker_id, res.round, self.round
                )));
            }
            out.push(res);
        }
        self.stats.rounds += 1;
        if let Some(t) = self.sent_at.take() {
            self.stats.exchange_time += t.elapsed();
        }
        self.gathered_at = Some(Instant::now());
        Ok(out)
    }

    /// Asks every worker to undo its last local step.
    pub fn rollback(&mut self) -> Result<()> {
        self.control(Down::Rollback)
    }

    /// Collects a snapshot from every worker, in id order.
    pub fn snapshots(&mut self) -> Result<Vec<S>> {
        if self.phase == Phase::AwaitingGather {
            return Err(Error::ContractViolation("snapshot requested mid-round".into()));
        }
        self.control(Down::Snapshot)?;
        let mut out = Vec::with_capacity(self.up.len());
        for (k, rx) in self.up.iter().enumerate() {
            match rx.recv_timeout(self.timeout) {
                Ok(Up::Snapshot(s)) => out.push(s),
                Ok(Up::Failed(reason)) => return Err(Error::WorkerFailed { worker: k, reason }),
                Ok(Up::Result(_)) => {
                    return Err(Error::ContractViolation(format!("worker {k} sent a round result to a snapshot request")))
                }
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout { worker: k, timeout: self.timeout }),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::WorkerFailed { worker: k, reason: "worker exited".into() })
                }
            }
        }
        Ok(out)
    }

    fn control(&mut self, make: Down) -> Result<()> {
        if self.phase == Phase::AwaitingGather {
            return Err(Error::ContractViolation("control message sent mid-round".into()));
        }
        for (k, tx) in self.down.iter().enumerate() {
            let msg = match make {
                Down::Rollback => Down::Rollback,
                Down::Snapshot => Down::Snapshot,
                Down::Finish => Down::Finish,
                Down::Round(ref b) => Down::Round(b.clone()),
            };
            tx.send(msg)
                .map_err(|_| Error::WorkerFailed { worker: k, reason: "worker exited".into() })?;
        }
        Ok(())
    }

    /// Stops the workers and joins their threads.
    pub fn finish(mut self) -> CommStats {
        self.shutdown();
        self.stats
    }

    fn shutdown(&mut self) {
        for tx in &self.down {
            let _ = tx.send(Down::Finish);
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl<S> Drop for Coordinator<'_, S> {
    fn drop(&mut self) {
        for tx in &self.down {
            let _ = tx.send(Down::Finish);
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
