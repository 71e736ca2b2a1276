//! Benchmark drivers: schedule creation overhead, scheduled versus direct
//! broadcast, and communication/computation overlap.
//!
//! Every driver runs inside a [`World`], discards [`WARMUP`] iterations and
//! times with [`Instant`].

use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::buffer::Buffer;
use crate::collectives::{bcast_schedule_init, direct_bcast, Topology};
use crate::comm::Comm;
use crate::datatype::Datatype;
use crate::error::{Error, Result, WorldError};
use crate::eventlog::Event;
use crate::schedule::Schedule;
use crate::world::{World, WorldConfig};

pub const WARMUP: usize = 5;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub experiment: String,
    pub ranks: u32,
    pub iters: usize,
    pub bytes: usize,
    pub mode: String,
    pub metric: String,
    pub value: f64,
    pub units: String,
}

pub const CSV_HEADER: [&str; 8] = ["experiment", "ranks", "iters", "bytes", "mode", "metric", "value", "units"];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Runtime(#[from] Error),
    #[error("invalid benchmark parameters: {0}")]
    Params(String),
}

fn mean_stddev(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    }
}

fn logged(events: Vec<Event>) -> Vec<Vec<Event>> {
    if events.is_empty() {
        Vec::new()
    } else {
        vec![events]
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateOverhead {
    pub ops: usize,
    pub reps: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub max_ms: f64,
    /// Event log of the benchmark world; empty unless logging is enabled.
    pub logs: Vec<Vec<Event>>,
}

impl CreateOverhead {
    pub fn records(&self) -> Vec<BenchRecord> {
        let row = |metric: &str, value| BenchRecord {
            experiment: "create_overhead".into(),
            ranks: 1,
            iters: self.reps,
            bytes: 0,
            mode: format!("ops={}", self.ops),
            metric: metric.into(),
            value,
            units: "ms".into(),
        };
        vec![row("mean", self.mean_ms), row("stddev", self.stddev_ms)]
    }
}

/// Builds one schedule of `ops` self-addressed sends and receives, four
/// per round, and commits it. Returns the uncommitted schedule's error if
/// commit fails.
fn build_schedule(comm: &Comm, ops: usize, buf: &Buffer) -> Result<Schedule> {
    let mut schedule = Schedule::new(comm, true);
    for i in 0..ops {
        let request = if i % 2 == 0 {
            comm.send_init(buf, 1, Datatype::Int32, comm.rank(), i as i32)?
        } else {
            comm.recv_init(buf, 1, Datatype::Int32, comm.rank(), i as i32 - 1)?
        };
        schedule.add_operation(&request, true)?;
        if i % 4 == 3 {
            schedule.create_round()?;
        }
    }
    schedule.commit()?;
    Ok(schedule)
}

/// Mean wall time of request init, schedule creation, adds, rounds and
/// commit. Nothing is started, so no communication is timed. `ops = 0`
/// reports the commit error instead of a time.
pub fn bench_create_overhead(config: &WorldConfig, ops: usize, reps: usize) -> Result<CreateOverhead, BenchError> {
    if reps == 0 {
        return Err(BenchError::Params("reps must be positive".into()));
    }
    let config = WorldConfig { size: 1, ..config.clone() };
    let out = World::spawn(config, |comm| -> Result<Vec<f64>> {
        let buf = Buffer::zeroed(4);
        let mut samples = Vec::with_capacity(reps);
        for i in 0..WARMUP + reps {
            let t0 = Instant::now();
            let mut schedule = build_schedule(comm, ops, &buf)?;
            let elapsed = t0.elapsed();
            schedule.free()?;
            if i >= WARMUP {
                samples.push(ms(elapsed));
            }
        }
        Ok(samples)
    });
    let (samples, logs) = match out {
        Ok(mut out) => (out.results.remove(0), logged(out.events())),
        Err(WorldError::RankFailed { message, .. }) if ops == 0 => {
            debug_assert!(message.contains("no operations"));
            return Err(BenchError::Runtime(Error::EmptySchedule));
        }
        Err(e) => return Err(e.into()),
    };
    let (mean_ms, stddev_ms) = mean_stddev(&samples);
    Ok(CreateOverhead {
        ops,
        reps,
        mean_ms,
        stddev_ms,
        max_ms: samples.iter().copied().fold(0.0, f64::max),
        logs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcastRatio {
    pub ranks: u32,
    pub iters: usize,
    pub bytes: usize,
    pub topology: Topology,
    /// Total time of `iters` restarts of one scheduled broadcast (median
    /// trial).
    pub scheduled_ms: f64,
    /// Total time of `iters` blocking broadcasts (median trial).
    pub direct_ms: f64,
    /// Median across trials of scheduled / direct × 100.
    pub ratio_percent: f64,
    pub trials: usize,
    /// One event log per benchmark world; empty unless logging is enabled.
    pub logs: Vec<Vec<Event>>,
}

impl BcastRatio {
    pub fn records(&self) -> Vec<BenchRecord> {
        let row = |mode: &str, metric: &str, value, units: &str| BenchRecord {
            experiment: "bcast".into(),
            ranks: self.ranks,
            iters: self.iters,
            bytes: self.bytes,
            mode: format!("{}:{mode}", self.topology.as_str()),
            metric: metric.into(),
            value,
            units: units.into(),
        };
        vec![
            row("scheduled", "total_time", self.scheduled_ms, "ms"),
            row("direct", "total_time", self.direct_ms, "ms"),
            row("scheduled/direct", "ratio", self.ratio_percent, "percent"),
        ]
    }
}

/// Trials per spawned world. Thread placement on a busy host tends to stick
/// for the lifetime of a world, so trials are spread over several worlds.
const TRIALS_PER_WORLD: usize = 5;

/// Scheduled and direct milliseconds of one trial.
type ArmTimes = (f64, f64);

/// Start and end instants of one rank's part of a phase.
type Span = (Instant, Instant);

fn spanned_phase(comm: &Comm, body: impl FnOnce() -> Result<()>) -> Result<Span> {
    comm.barrier()?;
    let t0 = Instant::now();
    body()?;
    let t1 = Instant::now();
    comm.barrier()?;
    Ok((t0, t1))
}

/// Broadcast time of a phase: from the root's first start to the last
/// rank's return. Ranks share one process, so their clocks agree, and time
/// a non-root rank spends leaving the barrier is not charged to the phase.
fn bcast_phase_ms(spans: &[Span]) -> f64 {
    let end = spans.iter().map(|s| s.1).max().expect("at least one rank");
    ms(end.saturating_duration_since(spans[0].0))
}

/// Runs trials `first..first + count` in one world and returns, per trial,
/// the broadcast time of each arm.
fn bcast_trials(
    config: &WorldConfig,
    first: usize,
    count: usize,
    iters: usize,
    bytes: usize,
) -> Result<(Vec<ArmTimes>, Vec<Event>), BenchError> {
    let out = World::spawn(config.clone(), |comm| -> Result<Vec<(Span, Span)>> {
        let buf = Buffer::zeroed(bytes);
        if comm.rank() == 0 {
            buf.fill(0xA5);
        }
        let mut timings = Vec::with_capacity(count);
        for trial in first..first + count {
            let composite = bcast_schedule_init(comm, &buf, bytes, Datatype::Byte, 0, Topology::Binomial)?;
            let scheduled = |n: usize| -> Result<()> {
                for _ in 0..n {
                    composite.start()?;
                    composite.wait()?;
                }
                Ok(())
            };
            let direct = |n: usize| -> Result<()> {
                for _ in 0..n {
                    direct_bcast(comm, &buf, bytes, Datatype::Byte, 0)?;
                }
                Ok(())
            };
            scheduled(WARMUP)?;
            direct(WARMUP)?;
            let pair = if trial % 2 == 0 {
                let s = spanned_phase(comm, || scheduled(iters))?;
                (s, spanned_phase(comm, || direct(iters))?)
            } else {
                let d = spanned_phase(comm, || direct(iters))?;
                (spanned_phase(comm, || scheduled(iters))?, d)
            };
            composite.free()?;
            timings.push(pair);
        }
        Ok(timings)
    })?;
    let times = (0..count)
        .map(|t| {
            let arm = |pick: fn(&(Span, Span)) -> Span| {
                bcast_phase_ms(&out.results.iter().map(|rank| pick(&rank[t])).collect::<Vec<_>>())
            };
            (arm(|p| p.0), arm(|p| p.1))
        })
        .collect();
    Ok((times, out.events()))
}

/// Compares `iters` restarts of a scheduled binomial broadcast with `iters`
/// blocking binomial broadcasts of the same payload. Each trial builds the
/// schedule once, outside the timed region. The arms alternate their order
/// between trials, and the reported ratio is the median over trials.
pub fn bench_bcast_ratio(
    config: &WorldConfig,
    ranks: u32,
    iters: usize,
    bytes: usize,
    trials: usize,
) -> Result<BcastRatio, BenchError> {
    if iters == 0 || trials == 0 || ranks == 0 {
        return Err(BenchError::Params("ranks, iters and trials must be positive".into()));
    }
    let config = WorldConfig {
        size: ranks,
        ..config.clone()
    };
    let mut per_trial: Vec<(f64, f64)> = Vec::with_capacity(trials);
    let mut logs = Vec::new();
    let mut first = 0;
    while first < trials {
        let batch = TRIALS_PER_WORLD.min(trials - first);
        let (times, events) = bcast_trials(&config, first, batch, iters, bytes)?;
        per_trial.extend(times);
        logs.extend(logged(events));
        first += batch;
    }
    let ratio_percent = median(per_trial.iter().map(|(s, d)| s / d * 100.0).collect());
    Ok(BcastRatio {
        ranks,
        iters,
        bytes,
        topology: Topology::Binomial,
        scheduled_ms: median(per_trial.iter().map(|p| p.0).collect()),
        direct_ms: median(per_trial.iter().map(|p| p.1).collect()),
        ratio_percent,
        trials,
        logs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub ranks: u32,
    pub compute_blocks: usize,
    pub block_ms: f64,
    pub comm_sequences: usize,
    pub bytes: usize,
    /// Mean across ranks of compute time / (start-to-wait-return) × 100.
    pub free_percent: f64,
    pub min_free_percent: f64,
    /// Mean time of the schedule alone, with no compute.
    pub comm_only_ms: f64,
    /// `test` calls made by application threads between start and wait.
    pub test_calls: u64,
    /// Event log of the benchmark world; empty unless logging is enabled.
    pub logs: Vec<Vec<Event>>,
}

impl Overlap {
    pub fn records(&self) -> Vec<BenchRecord> {
        let row = |metric: &str, value, units: &str| BenchRecord {
            experiment: "overlap".into(),
            ranks: self.ranks,
            iters: self.compute_blocks,
            bytes: self.bytes,
            mode: format!("seqs={},block_ms={}", self.comm_sequences, self.block_ms),
            metric: metric.into(),
            value,
            units: units.into(),
        };
        vec![
            row("free_time", self.free_percent, "percent"),
            row("comm_only", self.comm_only_ms, "ms"),
            row("test_calls", self.test_calls as f64, "count"),
        ]
    }
}

/// Burns CPU on the calling thread for `duration` of wall time.
pub fn compute_block(duration: Duration) {
    let deadline = Instant::now() + duration;
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    while Instant::now() < deadline {
        for _ in 0..256 {
            x = black_box(x.rotate_left(5) ^ x.wrapping_mul(0x2545_F491_4F6C_DD1D));
        }
    }
    black_box(x);
}

/// Ring exchange of `seqs` rounds: in every round each rank sends `bytes`
/// to its right neighbour and receives from its left one.
fn ring_schedule(comm: &Comm, seqs: usize, bytes: usize) -> Result<(Schedule, Vec<Buffer>)> {
    let (p, r) = (comm.size(), comm.rank());
    let (right, left) = ((r + 1) % p, (r + p - 1) % p);
    let mut schedule = Schedule::new(comm, true);
    let mut buffers = Vec::new();
    for seq in 0..seqs {
        let out = Buffer::zeroed(bytes);
        let inb = Buffer::zeroed(bytes);
        out.fill(r as u8);
        schedule.add_operation(&comm.send_init(&out, bytes, Datatype::Byte, right, seq as i32)?, true)?;
        schedule.add_operation(&comm.recv_init(&inb, bytes, Datatype::Byte, left, seq as i32)?, true)?;
        schedule.create_round()?;
        buffers.extend([out, inb]);
    }
    Ok((schedule, buffers))
}

/// Starts a ring schedule, runs the compute blocks on the application
/// thread, then waits. Free time is the compute share of the interval from
/// start to wait return.
pub fn bench_overlap(
    config: &WorldConfig,
    ranks: u32,
    compute_blocks: usize,
    block_ms: f64,
    comm_sequences: usize,
    bytes: usize,
) -> Result<Overlap, BenchError> {
    if ranks < 2 || comm_sequences == 0 {
        return Err(BenchError::Params("overlap needs at least 2 ranks and 1 sequence".into()));
    }
    let config = WorldConfig {
        size: ranks,
        ..config.clone()
    };
    let block = Duration::from_secs_f64(block_ms / 1e3);
    let out = World::spawn(config, |comm| -> Result<(f64, f64, u64)> {
        let (mut schedule, _buffers) = ring_schedule(comm, comm_sequences, bytes)?;
        let composite = schedule.commit()?;
        let mut comm_only = Vec::new();
        for i in 0..WARMUP * 2 {
            comm.barrier()?;
            let t0 = Instant::now();
            composite.start()?;
            composite.wait()?;
            if i >= WARMUP {
                comm_only.push(ms(t0.elapsed()));
            }
        }
        comm.barrier()?;
        let tests_before = comm.test_calls();
        let t0 = Instant::now();
        composite.start()?;
        let mut compute = Duration::ZERO;
        for _ in 0..compute_blocks {
            let c0 = Instant::now();
            compute_block(block);
            compute += c0.elapsed();
        }
        composite.wait()?;
        let elapsed = t0.elapsed();
        let tests = comm.test_calls() - tests_before;
        schedule.free()?;
        let free = if compute_blocks == 0 {
            0.0
        } else {
            compute.as_secs_f64() / elapsed.as_secs_f64() * 100.0
        };
        Ok((free, mean_stddev(&comm_only).0, tests))
    })?;
    let frees: Vec<f64> = out.results.iter().map(|r| r.0).collect();
    Ok(Overlap {
        ranks,
        compute_blocks,
        block_ms,
        comm_sequences,
        bytes,
        free_percent: mean_stddev(&frees).0,
        min_free_percent: frees.iter().copied().fold(f64::INFINITY, f64::min),
        comm_only_ms: out.results.iter().map(|r| r.1).fold(0.0, f64::max),
        test_calls: out.results.iter().map(|r| r.2).sum(),
        logs: logged(out.events()),
    })
}
