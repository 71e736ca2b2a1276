use std::hint::black_box;
use std::time::{Duration, Instant};

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sched_core::{
    bcast_schedule_init, direct_bcast, Buffer, Comm, Datatype, Error, Result, Schedule, Topology, World, WorldConfig,
};

/// Self-addressed sends and receives, two per round.
fn self_exchange(comm: &Comm, ops: usize, buf: &Buffer) -> Result<Schedule> {
    let mut s = Schedule::new(comm, true);
    for i in 0..ops / 2 {
        s.add_operation(&comm.send_init(buf, 1, Datatype::Int32, 0, i as i32)?, true)?;
        s.add_operation(&comm.recv_init(buf, 1, Datatype::Int32, 0, i as i32)?, true)?;
        s.create_round()?;
    }
    s.commit()?;
    Ok(s)
}

/// Runs `body` on every rank of a fresh world and returns the slowest
/// rank's time.
fn timed_world(config: WorldConfig, body: impl Fn(&Comm) -> Result<Duration> + Send + Sync) -> Duration {
    World::spawn(config, body)
        .expect("benchmark world")
        .results
        .into_iter()
        .max()
        .unwrap_or_default()
}

fn creation(c: &mut Criterion) {
    let mut group = c.benchmark_group("create_commit");
    for ops in [2usize, 8, 32, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(ops), &ops, |b, &ops| {
            b.iter_custom(|iters| {
                timed_world(WorldConfig::inproc(1), |comm| {
                    let buf = Buffer::zeroed(4);
                    let mut total = Duration::ZERO;
                    for _ in 0..iters {
                        let t0 = Instant::now();
                        let mut s = black_box(self_exchange(comm, ops, &buf)?);
                        total += t0.elapsed();
                        s.free()?;
                    }
                    Ok(total)
                })
            });
        });
    }
    group.finish();
}

fn restart(c: &mut Criterion) {
    let mut group = c.benchmark_group("restart");
    for ops in [2usize, 8, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(ops), &ops, |b, &ops| {
            b.iter_custom(|iters| {
                timed_world(WorldConfig::inproc(1), |comm| {
                    let buf = Buffer::zeroed(4);
                    let mut s = self_exchange(comm, ops, &buf)?;
                    let composite = s.composite().ok_or(Error::InvalidState)?;
                    let t0 = Instant::now();
                    for _ in 0..iters {
                        composite.start()?;
                        composite.wait()?;
                    }
                    let elapsed = t0.elapsed();
                    s.free()?;
                    Ok(elapsed)
                })
            });
        });
    }
    group.finish();
}

fn bcast(c: &mut Criterion) {
    const BYTES: usize = 1024;
    let mut group = c.benchmark_group("bcast_1KiB");
    for ranks in [2u32, 4, 8] {
        group.bench_with_input(BenchmarkId::new("scheduled", ranks), &ranks, |b, &ranks| {
            b.iter_custom(|iters| {
                timed_world(WorldConfig::inproc(ranks), |comm| {
                    let buf = Buffer::zeroed(BYTES);
                    let composite = bcast_schedule_init(comm, &buf, BYTES, Datatype::Byte, 0, Topology::Binomial)?;
                    comm.barrier()?;
                    let t0 = Instant::now();
                    for _ in 0..iters {
                        composite.start()?;
                        composite.wait()?;
                    }
                    let elapsed = t0.elapsed();
                    composite.free()?;
                    Ok(elapsed)
                })
            });
        });
        group.bench_with_input(BenchmarkId::new("direct", ranks), &ranks, |b, &ranks| {
            b.iter_custom(|iters| {
                timed_world(WorldConfig::inproc(ranks), |comm| {
                    let buf = Buffer::zeroed(BYTES);
                    comm.barrier()?;
                    let t0 = Instant::now();
                    for _ in 0..iters {
                        direct_bcast(comm, &buf, BYTES, Datatype::Byte, 0)?;
                    }
                    Ok(t0.elapsed())
                })
            });
        });
    }
    group.finish();
}

criterion_group!(benches, creation, restart, bcast);
criterion_main!(benches);
