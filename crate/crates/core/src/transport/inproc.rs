//! Channel transport for ranks that live as threads in one process.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::error::{Error, Result};
use crate::transport::{check_outgoing, Envelope, Frame, Transport, TransportStats};

struct Fabric {
    inboxes: Vec<Sender<Frame>>,
    closed: Vec<AtomicBool>,
}

pub struct InProcEndpoint {
    rank: u32,
    fabric: Arc<Fabric>,
    incoming: Receiver<Frame>,
    sent: AtomicU64,
    received: AtomicU64,
}

/// Builds `size` connected endpoints, one per rank.
pub fn fabric(size: u32) -> Vec<InProcEndpoint> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..size).map(|_| unbounded()).unzip();
    let fabric = Arc::new(Fabric {
        inboxes: senders,
        closed: (0..size).map(|_| AtomicBool::new(false)).collect(),
    });
    receivers
        .into_iter()
        .enumerate()
        .map(|(rank, incoming)| InProcEndpoint {
            rank: rank as u32,
            fabric: Arc::clone(&fabric),
            incoming,
            sent: AtomicU64::new(0),
            received: AtomicU64::new(0),
        })
        .collect()
}

impl Transport for InProcEndpoint {
    fn rank(&self) -> u32 {
        self.rank
    }

    fn size(&self) -> u32 {
        self.fabric.inboxes.len() as u32
    }

    fn send_bytes(&self, envelope: Envelope, payload: Vec<u8>) -> Result<()> {
        check_outgoing(self.rank, self.size(), &envelope, &payload)?;
        let dst = envelope.dst as usize;
        if self.fabric.closed[dst].load(Ordering::Acquire) {
            return Err(Error::TransportClosed(envelope.dst));
        }
        self.fabric.inboxes[dst]
            .send(Frame { envelope, payload })
            .map_err(|_| Error::TransportClosed(envelope.dst))?;
        self.sent.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn poll_incoming(&self) -> Option<Frame> {
        let frame = self.incoming.try_recv().ok()?;
        self.received.fetch_add(1, Ordering::Relaxed);
        Some(frame)
    }

    fn incoming(&self) -> &Receiver<Frame> {
        &self.incoming
    }

    fn close(&self) {
        self.fabric.closed[self.rank as usize].store(true, Ordering::Release);
    }

    fn join(&self) {}

    fn stats(&self) -> TransportStats {
        TransportStats {
            frames_sent: self.sent.load(Ordering::Relaxed),
            frames_received: self.received.load(Ordering::Relaxed),
        }
    }
}
