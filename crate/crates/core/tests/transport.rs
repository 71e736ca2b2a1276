use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sched_core::transport::{inproc, tcp, Envelope, Frame, Transport};
use sched_core::Datatype;

fn envelope(src: u32, dst: u32, tag: i32, len: usize) -> Envelope {
    Envelope {
        context: 16,
        src,
        dst,
        tag,
        dtype: Datatype::Byte,
        payload_len: len as u64,
    }
}

/// Drains `n` frames through `poll_incoming`, blocking on the channel's
/// readiness between polls.
fn recv_n(t: &dyn Transport, n: usize) -> Vec<Frame> {
    let mut frames = Vec::with_capacity(n);
    while frames.len() < n {
        match t.poll_incoming() {
            Some(f) => frames.push(f),
            None => {
                let mut sel = crossbeam_channel::Select::new();
                sel.recv(t.incoming());
                sel.ready_timeout(Duration::from_secs(10)).expect("frame arrives");
            }
        }
    }
    frames
}

fn endpoints(kind: &str, size: u32) -> Vec<Arc<dyn Transport>> {
    match kind {
        "inproc" => inproc::fabric(size).into_iter().map(|t| Arc::new(t) as Arc<dyn Transport>).collect(),
        _ => tcp::loopback(size).unwrap().into_iter().map(|t| Arc::new(t) as Arc<dyn Transport>).collect(),
    }
}

fn shutdown(eps: &[Arc<dyn Transport>]) {
    eps.iter().for_each(|t| t.close());
    eps.iter().for_each(|t| t.join());
}

fn fifo_over_10k(kind: &str) {
    let eps = endpoints(kind, 2);
    let sender = Arc::clone(&eps[0]);
    let producer = std::thread::spawn(move || {
        for seq in 0u32..10_000 {
            sender.send_bytes(envelope(0, 1, 1, 4), seq.to_le_bytes().to_vec()).unwrap();
        }
    });
    let frames = recv_n(eps[1].as_ref(), 10_000);
    producer.join().unwrap();
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(u32::from_le_bytes(f.payload[..4].try_into().unwrap()), i as u32);
    }
    shutdown(&eps);
}

#[test]
fn inproc_stream_is_fifo() {
    fifo_over_10k("inproc");
}

#[test]
fn tcp_stream_is_fifo() {
    fifo_over_10k("tcp");
}

/// Per-stream delivery order and delivered multiset for a random script.
type Observed = BTreeMap<(u32, u32, i32), Vec<Vec<u8>>>;

fn run_script(kind: &str, seed: u64) -> (Observed, Vec<(u64, u64)>) {
    let size = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script: Vec<(u32, u32, i32, Vec<u8>)> = (0..2000)
        .map(|i| {
            let src = rng.gen_range(0..size);
            let dst = rng.gen_range(0..size);
            let len = rng.gen_range(0..64);
            let mut payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            payload.extend_from_slice(&(i as u32).to_le_bytes());
            (src, dst, rng.gen_range(0..3), payload)
        })
        .collect();
    let eps = endpoints(kind, size);
    let mut expected = vec![0usize; size as usize];
    std::thread::scope(|s| {
        for src in 0..size {
            let (eps, script) = (&eps, &script);
            s.spawn(move || {
                for (_, dst, tag, payload) in script.iter().filter(|m| m.0 == src) {
                    eps[src as usize]
                        .send_bytes(envelope(src, *dst, *tag, payload.len()), payload.clone())
                        .unwrap();
                }
            });
        }
    });
    for m in &script {
        expected[m.1 as usize] += 1;
    }
    let mut observed = Observed::new();
    for (rank, ep) in eps.iter().enumerate() {
        for f in recv_n(ep.as_ref(), expected[rank]) {
            assert_eq!(f.envelope.dst, rank as u32);
            observed
                .entry((f.envelope.src, f.envelope.dst, f.envelope.tag))
                .or_default()
                .push(f.payload);
        }
        assert!(ep.poll_incoming().is_none());
    }
    shutdown(&eps);
    let stats = eps.iter().map(|t| (t.stats().frames_sent, t.stats().frames_received)).collect();
    (observed, stats)
}

#[test]
fn every_frame_delivered_exactly_once() {
    for kind in ["inproc", "tcp"] {
        let (observed, stats) = run_script(kind, 7);
        let delivered: usize = observed.values().map(Vec::len).sum();
        assert_eq!(delivered, 2000);
        let sent: u64 = stats.iter().map(|s| s.0).sum();
        let received: u64 = stats.iter().map(|s| s.1).sum();
        assert_eq!((sent, received), (2000, 2000), "{kind}");
    }
}

#[test]
fn tcp_and_inproc_are_observationally_equivalent() {
    for seed in [1, 2, 3] {
        let (a, _) = run_script("inproc", seed);
        let (b, _) = run_script("tcp", seed);
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn frames_from_many_sources_all_arrive() {
    let eps = endpoints("inproc", 4);
    for src in [2, 3] {
        for i in 0..5u8 {
            eps[src].send_bytes(envelope(src as u32, 0, 0, 1), vec![i]).unwrap();
        }
    }
    let frames = recv_n(eps[0].as_ref(), 10);
    let mut per_src: HashMap<u32, Vec<u8>> = HashMap::new();
    for f in frames {
        per_src.entry(f.envelope.src).or_default().push(f.payload[0]);
    }
    assert_eq!(per_src[&2], vec![0, 1, 2, 3, 4]);
    assert_eq!(per_src[&3], vec![0, 1, 2, 3, 4]);
    shutdown(&eps);
}

#[test]
fn self_send_is_allowed() {
    for kind in ["inproc", "tcp"] {
        let eps = endpoints(kind, 2);
        eps[1].send_bytes(envelope(1, 1, 5, 3), vec![1, 2, 3]).unwrap();
        let f = recv_n(eps[1].as_ref(), 1).remove(0);
        assert_eq!(f.payload, vec![1, 2, 3]);
        shutdown(&eps);
    }
}
