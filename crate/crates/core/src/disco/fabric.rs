//! Deterministic in-process collective fabric.
//!
//! Simulated ranks run as threads; collectives exchange framed messages
//! through a shared board keyed by a per-rank sequence counter, so results
//! are independent of thread scheduling: every collective is a barrier, and
//! gathered lists are always in canonical rank order.
//!
//! Wire protocol (for a future socket backend): each deposit is a frame
//! `(rank: u32, seq: u64, op: u8, n_payloads: u32, payloads...)` with every
//! payload encoded as `(kind: u8 [0 = dense (rows, cols), 1 = batch
//! (experts, rows, cols)], dims: u32 each, data: f64 little-endian)`. The
//! in-process backend passes the equivalent structs directly.
//!
//! All ranks must issue the same collectives in the same order; a rank that
//! calls a different collective kind at the same sequence point poisons the
//! round and every participant gets a sequence-mismatch error. A rank that
//! stops calling entirely trips the deadlock timeout on the others.

use crate::scion::Tensor;
use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::DiscoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    AllGather,
    AllToAll,
    /// Out-of-band instrumentation (replica digests); never counted.
    DebugWord,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::AllGather => "all_gather",
            OpKind::AllToAll => "all_to_all",
            OpKind::DebugWord => "debug_word",
        }
    }
}

#[derive(Debug, Clone)]
enum Payload {
    Tensors(Vec<Tensor>),
    Word(u64),
    Words(Vec<u64>),
}

#[derive(Debug)]
struct Round {
    op: OpKind,
    deposits: Vec<Option<Payload>>,
    /// Per-rank results, filled once all deposits arrive.
    results: Vec<Option<Payload>>,
    ready: bool,
    taken: usize,
    poisoned: Option<String>,
}

impl Round {
    fn new(op: OpKind, world: usize) -> Round {
        Round {
            op,
            deposits: vec![None; world],
            results: vec![None; world],
            ready: false,
            taken: 0,
            poisoned: None,
        }
    }
}

#[derive(Debug)]
struct Board {
    rounds: Mutex<HashMap<u64, Round>>,
    cv: Condvar,
    world: usize,
    timeout: Duration,
}

/// Shared state for one simulated world; hands out one [`Communicator`]
/// per rank.
#[derive(Debug, Clone)]
pub struct Fabric {
    board: Arc<Board>,
}

/// Counts of counted collectives issued through one communicator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectiveCounts {
    pub all_gather: u64,
    pub all_to_all: u64,
}

impl Fabric {
    pub fn new(world: usize) -> Fabric {
        Fabric::with_timeout(world, Duration::from_secs(10))
    }

    pub fn with_timeout(world: usize, timeout: Duration) -> Fabric {
        assert!(world >= 1, "world size must be >= 1");
        Fabric {
            board: Arc::new(Board {
                rounds: Mutex::new(HashMap::new()),
                cv: Condvar::new(),
                world,
                timeout,
            }),
        }
    }

    pub fn world_size(&self) -> usize {
        self.board.world
    }

    pub fn communicator(&self, rank: usize) -> Communicator {
        assert!(rank < self.board.world);
        Communicator {
            board: self.board.clone(),
            rank,
            next_seq: std::cell::Cell::new(0),
            counts: std::cell::Cell::new(CollectiveCounts::default()),
        }
    }

    /// Spawns one thread per rank, runs `f` on each, and returns results in
    /// rank order. The first rank error wins.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>, DiscoError>
    where
        T: Send,
        F: Fn(Communicator) -> Result<T, DiscoError> + Sync,
    {
        let world = self.board.world;
        let mut slots: Vec<Option<Result<T, DiscoError>>> = Vec::new();
        slots.resize_with(world, || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for rank in 0..world {
                let comm = self.communicator(rank);
                let f = &f;
                handles.push(scope.spawn(move || f(comm)));
            }
            for (rank, h) in handles.into_iter().enumerate() {
                slots[rank] = Some(h.join().unwrap_or_else(|_| {
                    Err(DiscoError::Thread(format!("rank {rank} panicked")))
                }));
            }
        });
        slots.into_iter().map(|s| s.unwrap()).collect()
    }
}

/// One rank's handle to the fabric.
#[derive(Debug)]
pub struct Communicator {
    board: Arc<Board>,
    rank: usize,
    next_seq: std::cell::Cell<u64>,
    counts: std::cell::Cell<CollectiveCounts>,
}

impl Communicator {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world_size(&self) -> usize {
        self.board.world
    }

    pub fn counts(&self) -> CollectiveCounts {
        self.counts.get()
    }

    /// Gathers one tensor from each rank; the returned list is identical on
    /// every rank and ordered by rank.
    pub fn all_gather(&self, tensor: Tensor) -> Result<Vec<Tensor>, DiscoError> {
        let mut c = self.counts.get();
        c.all_gather += 1;
        self.counts.set(c);
        match self.exchange(OpKind::AllGather, Payload::Tensors(vec![tensor]))? {
            Payload::Tensors(ts) => Ok(ts),
            _ => unreachable!("all_gather returns tensors"),
        }
    }

    /// List-based all-to-all: entry `j` of the result on rank `r` is entry
    /// `r` of rank `j`'s send list.
    pub fn all_to_all(&self, send: Vec<Tensor>) -> Result<Vec<Tensor>, DiscoError> {
        if send.len() != self.board.world {
            return Err(DiscoError::LengthMismatch {
                expected: self.board.world,
                got: send.len(),
            });
        }
        let mut c = self.counts.get();
        c.all_to_all += 1;
        self.counts.set(c);
        match self.exchange(OpKind::AllToAll, Payload::Tensors(send))? {
            Payload::Tensors(ts) => Ok(ts),
            _ => unreachable!("all_to_all returns tensors"),
        }
    }

    /// Uncounted out-of-band word exchange; exists so the simulation can
    /// verify replica consistency without perturbing the collective counts
    /// a real backend would issue.
    pub fn debug_gather_word(&self, word: u64) -> Result<Vec<u64>, DiscoError> {
        match self.exchange(OpKind::DebugWord, Payload::Word(word))? {
            Payload::Words(ws) => Ok(ws),
            _ => unreachable!("debug gather returns words"),
        }
    }

    fn exchange(&self, op: OpKind, payload: Payload) -> Result<Payload, DiscoError> {
        let seq = self.next_seq.get();
        self.next_seq.set(seq + 1);
        let world = self.board.world;

        let mut rounds = self.board.rounds.lock().expect("fabric lock");
        let round = rounds.entry(seq).or_insert_with(|| Round::new(op, world));
        if round.op != op {
            let msg = format!(
                "seq {seq}: rank {} called {} while round is {}",
                self.rank,
                op.name(),
                round.op.name()
            );
            round.poisoned = Some(msg.clone());
            self.board.cv.notify_all();
            return Err(DiscoError::SequenceMismatch(msg));
        }
        round.deposits[self.rank] = Some(payload);
        if round.deposits.iter().all(Option::is_some) {
            Self::publish(round);
            round.ready = true;
            self.board.cv.notify_all();
        }

        // Wait for the round to be ready (or poisoned / timed out).
        loop {
            {
                let round = rounds.get_mut(&seq).expect("round exists");
                if let Some(msg) = &round.poisoned {
                    return Err(DiscoError::SequenceMismatch(msg.clone()));
                }
                if round.ready {
                    let result = round.results[self.rank].take().expect("one take per rank");
                    round.taken += 1;
                    if round.taken == world {
                        rounds.remove(&seq);
                    }
                    return Ok(result);
                }
            }
            let (guard, wait) = self
                .board
                .cv
                .wait_timeout(rounds, self.board.timeout)
                .expect("fabric wait");
            rounds = guard;
            if wait.timed_out() {
                if let Some(round) = rounds.get_mut(&seq) {
                    round.poisoned = Some(format!(
                        "seq {seq}: deadlock, not all ranks arrived within {:?}",
                        self.board.timeout
                    ));
                }
                self.board.cv.notify_all();
                return Err(DiscoError::DeadlockTimeout {
                    seq,
                    rank: self.rank,
                });
            }
        }
    }

    fn publish(round: &mut Round) {
        match round.op {
            OpKind::AllGather => {
                let gathered: Vec<Tensor> = round
                    .deposits
                    .iter()
                    .map(|d| match d.as_ref().unwrap() {
                        Payload::Tensors(ts) => ts[0].clone(),
                        _ => unreachable!(),
                    })
                    .collect();
                for slot in round.results.iter_mut() {
                    *slot = Some(Payload::Tensors(gathered.clone()));
                }
            }
            OpKind::AllToAll => {
                for (r, slot) in round.results.iter_mut().enumerate() {
                    let recv: Vec<Tensor> = round
                        .deposits
                        .iter()
                        .map(|d| match d.as_ref().unwrap() {
                            Payload::Tensors(ts) => ts[r].clone(),
                            _ => unreachable!(),
                        })
                        .collect();
                    *slot = Some(Payload::Tensors(recv));
                }
            }
            OpKind::DebugWord => {
                let words: Vec<u64> = round
                    .deposits
                    .iter()
                    .map(|d| match d.as_ref().unwrap() {
                        Payload::Word(w) => *w,
                        _ => unreachable!(),
                    })
                    .collect();
                for slot in round.results.iter_mut() {
                    *slot = Some(Payload::Words(words.clone()));
                }
            }
        }
    }
}
