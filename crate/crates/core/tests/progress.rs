use std::collections::HashSet;
use std::thread;
use std::time::{Duration, Instant};

use sched_core::{Buffer, Comm, Datatype, Error, RequestState, World, WorldConfig};

fn pair<T: Send>(threads: usize, f: impl Fn(&Comm) -> Result<T, Error> + Send + Sync) -> Vec<T> {
    World::spawn(WorldConfig::inproc(2).with_progress_threads(threads), f)
        .unwrap()
        .results
}

#[test]
fn receive_completes_while_application_sleeps() {
    pair(1, |comm| {
        let buf = Buffer::zeroed(4);
        if comm.rank() == 0 {
            let recv = comm.recv_init(&buf, 1, Datatype::Int32, 1, 0)?;
            recv.start()?;
            comm.barrier()?;
            thread::sleep(Duration::from_millis(100));
            // No call touched the request since start.
            assert_eq!(recv.completion_count(), 1);
            assert_eq!(buf.to_vec::<i32>(), vec![42]);
            recv.wait()?;
            recv.free()?;
        } else {
            buf.write(&[42i32]);
            comm.barrier()?;
            comm.send(&buf, 1, Datatype::Int32, 0, 0)?;
        }
        Ok(())
    });
}

#[test]
fn unexpected_message_matches_late_receive() {
    pair(1, |comm| {
        let buf = Buffer::zeroed(4);
        if comm.rank() == 1 {
            buf.write(&[7i32]);
            comm.send(&buf, 1, Datatype::Int32, 0, 5)?;
            comm.barrier()?;
        } else {
            comm.barrier()?;
            thread::sleep(Duration::from_millis(20));
            assert_eq!(comm.engine().queue_depths().1, 1);
            let status = comm.recv(&buf, 1, Datatype::Int32, 1, 5)?;
            assert_eq!((status.source, status.tag, status.bytes), (Some(1), Some(5), 4));
            assert_eq!(buf.to_vec::<i32>(), vec![7]);
        }
        Ok(())
    });
}

#[test]
fn many_app_threads_many_progress_threads_complete_exactly_once() {
    let out = World::spawn(WorldConfig::inproc(1).with_progress_threads(4), |comm| -> Result<u64, Error> {
        let before = comm.engine().completed();
        thread::scope(|s| {
            let handles: Vec<_> = (0..4)
                .map(|t| {
                    let comm = comm.clone();
                    s.spawn(move || -> Result<(), Error> {
                        let mut reqs = Vec::new();
                        for i in 0..125 {
                            let buf = Buffer::from_slice(&[t * 1000 + i]);
                            let tag = t * 1000 + i;
                            let recv = comm.recv_init(Buffer::zeroed(4), 1, Datatype::Int32, 0, tag)?;
                            let send = comm.send_init(&buf, 1, Datatype::Int32, 0, tag)?;
                            recv.start()?;
                            send.start()?;
                            reqs.push(recv);
                            reqs.push(send);
                        }
                        for r in &reqs {
                            r.wait()?;
                        }
                        for r in &reqs {
                            assert_eq!(r.completion_count(), 1);
                            r.free()?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().try_for_each(|h| h.join().unwrap())
        })?;
        Ok(comm.engine().completed() - before)
    })
    .unwrap();
    assert_eq!(out.results, vec![1000]);
}

#[test]
fn no_lost_wakeups_over_ten_thousand_waits() {
    for threads in [1, 2] {
        pair(threads, |comm| {
            let buf = Buffer::zeroed(4);
            let peer = 1 - comm.rank();
            let send = comm.send_init(&buf, 1, Datatype::Int32, peer, 0)?;
            let recv = comm.recv_init(&buf, 1, Datatype::Int32, peer, 0)?;
            for i in 0..10_000 {
                if (i + comm.rank()) % 2 == 0 {
                    send.start()?;
                    send.wait()?;
                } else {
                    recv.start()?;
                    recv.wait()?;
                }
            }
            assert_eq!(send.completion_count() + recv.completion_count(), 10_000);
            Ok(())
        });
    }
}

#[test]
fn waiter_blocks_without_spinning() {
    pair(1, |comm| {
        let buf = Buffer::zeroed(4);
        if comm.rank() == 0 {
            let recv = comm.recv_init(&buf, 1, Datatype::Int32, 1, 0)?;
            recv.start()?;
            let t0 = Instant::now();
            recv.wait()?;
            assert!(t0.elapsed() >= Duration::from_millis(50));
            recv.free()?;
        } else {
            thread::sleep(Duration::from_millis(60));
            comm.send(&buf, 1, Datatype::Int32, 0, 0)?;
        }
        Ok(())
    });
}

/// Every lifecycle call from every reachable state.
#[test]
fn request_state_machine_enumeration() {
    pair(1, |comm| {
        let buf = Buffer::zeroed(4);
        if comm.rank() == 1 {
            comm.barrier()?;
            comm.send(&buf, 1, Datatype::Int32, 0, 1)?;
            comm.send(&buf, 1, Datatype::Int32, 0, 1)?;
            return Ok(());
        }
        let r = comm.recv_init(&buf, 1, Datatype::Int32, 1, 1)?;
        // Inactive
        assert_eq!(r.state()?, RequestState::Inactive);
        assert!(matches!(r.wait(), Err(Error::InvalidState)));
        assert!(r.test()?);
        // Active
        r.start()?;
        assert_eq!(r.state()?, RequestState::Active);
        assert!(!r.test()?);
        assert!(matches!(r.start(), Err(Error::AlreadyActive)));
        assert!(matches!(r.free(), Err(Error::StillActive)));
        comm.barrier()?;
        // Complete
        r.wait()?;
        assert_eq!(r.state()?, RequestState::Complete);
        assert!(r.test()?);
        r.wait()?;
        // Restart from Complete
        r.start()?;
        r.wait()?;
        assert_eq!(r.completion_count(), 2);
        // Freed
        r.free()?;
        assert!(matches!(r.state(), Err(Error::InvalidHandle)));
        assert!(matches!(r.start(), Err(Error::InvalidHandle)));
        assert!(matches!(r.wait(), Err(Error::InvalidHandle)));
        assert!(matches!(r.test(), Err(Error::InvalidHandle)));
        assert!(matches!(r.free(), Err(Error::InvalidHandle)));
        Ok(())
    });
}

#[test]
fn argument_errors() {
    pair(1, |comm| {
        let buf = Buffer::zeroed(6);
        assert!(matches!(comm.send_init(&buf, 1, Datatype::Int32, 2, 0), Err(Error::InvalidRank { rank: 2, size: 2 })));
        assert!(matches!(comm.recv_init(&buf, 2, Datatype::Int32, 0, 0), Err(Error::InvalidCount { count: 2, .. })));
        assert!(matches!(comm.with_context(3), Err(Error::ReservedContext(3))));
        assert_eq!(comm.with_context(16)?.context(), 16);
        Ok(())
    });
}

#[test]
fn oversized_message_is_a_truncation_error() {
    pair(1, |comm| {
        let big = Buffer::zeroed(8);
        let small = Buffer::zeroed(4);
        if comm.rank() == 0 {
            comm.send(&big, 2, Datatype::Int32, 1, 0)?;
        } else {
            let err = comm.recv(&small, 1, Datatype::Int32, 0, 0).unwrap_err();
            assert!(matches!(err, Error::Truncated { received: 8, capacity: 4 }));
        }
        Ok(())
    });
}

#[test]
fn contexts_isolate_matching() {
    pair(1, |comm| {
        let a = comm.with_context(20)?;
        let b = comm.with_context(21)?;
        let buf = Buffer::zeroed(4);
        if comm.rank() == 0 {
            buf.write(&[1i32]);
            a.send(&buf, 1, Datatype::Int32, 1, 0)?;
            buf.write(&[2i32]);
            b.send(&buf, 1, Datatype::Int32, 1, 0)?;
        } else {
            b.recv(&buf, 1, Datatype::Int32, 0, 0)?;
            assert_eq!(buf.to_vec::<i32>(), vec![2]);
            a.recv(&buf, 1, Datatype::Int32, 0, 0)?;
            assert_eq!(buf.to_vec::<i32>(), vec![1]);
        }
        Ok(())
    });
}

#[test]
fn rank_panic_is_reported_with_its_rank() {
    let err = World::spawn(WorldConfig::inproc(4), |comm| -> Result<(), Error> {
        if comm.rank() == 2 {
            panic!("boom");
        }
        // Blocks until the abort flag releases it.
        comm.recv(Buffer::zeroed(4), 1, Datatype::Int32, 2, 0)?;
        Ok(())
    })
    .unwrap_err();
    assert_eq!(err.rank(), Some(2));
    assert!(err.to_string().contains("boom"), "{err}");
}

#[test]
fn rank_error_is_reported() {
    let err = World::spawn(WorldConfig::inproc(3), |comm| -> Result<(), String> {
        if comm.rank() == 1 {
            return Err("bad input".into());
        }
        Ok(())
    })
    .unwrap_err();
    assert!(matches!(err, sched_core::WorldError::RankFailed { rank: 1, .. }));
}

#[test]
fn posted_receives_match_in_start_order() {
    for threads in [1, 2, 4] {
        pair(threads, |comm| {
            if comm.rank() == 0 {
                let bufs: Vec<Buffer> = (0..50).map(|_| Buffer::zeroed(4)).collect();
                let reqs = bufs
                    .iter()
                    .map(|b| comm.recv_init(b, 1, Datatype::Int32, 1, 3))
                    .collect::<Result<Vec<_>, _>>()?;
                for r in &reqs {
                    r.start()?;
                }
                comm.barrier()?;
                let mut seen = HashSet::new();
                for (i, (r, b)) in reqs.iter().zip(&bufs).enumerate() {
                    r.wait()?;
                    assert_eq!(b.to_vec::<i32>(), vec![i as i32]);
                    assert!(seen.insert(i));
                }
            } else {
                comm.barrier()?;
                for i in 0..50i32 {
                    comm.send(Buffer::from_slice(&[i]), 1, Datatype::Int32, 0, 3)?;
                }
            }
            Ok(())
        });
    }
}
