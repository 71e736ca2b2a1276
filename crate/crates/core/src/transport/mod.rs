//! Byte transport between ranks.
//!
//! Two backends share one contract: [`inproc`] moves frames over channels
//! between threads of one process, [`tcp`] moves them over one socket per
//! rank pair. Both deliver every `(src, dst, context, tag)` stream in send
//! order and never match; matching belongs to the progress engine.

pub mod frame;
pub mod inproc;
pub mod tcp;

use crossbeam_channel::Receiver;
use serde::{Deserialize, Serialize};

use crate::datatype::Datatype;
use crate::error::{Error, Result};

/// Wire and matching metadata of one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Envelope {
    pub context: u32,
    pub src: u32,
    pub dst: u32,
    pub tag: i32,
    pub dtype: Datatype,
    pub payload_len: u64,
}

impl Envelope {
    /// Checks rank bounds and that the payload holds whole elements.
    pub fn validate(&self, world_size: u32) -> Result<()> {
        for rank in [self.src, self.dst] {
            if rank >= world_size {
                return Err(Error::InvalidRank { rank, size: world_size });
            }
        }
        let width = self.dtype.elem_size() as u64;
        if !self.payload_len.is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                expected: (self.payload_len / width * width) as usize,
                actual: self.payload_len as usize,
            });
        }
        Ok(())
    }
}

/// A delivered message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub envelope: Envelope,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub frames_sent: u64,
    pub frames_received: u64,
}

/// One rank's endpoint.
pub trait Transport: Send + Sync + 'static {
    fn rank(&self) -> u32;

    fn size(&self) -> u32;

    /// Queues `payload` for delivery to `envelope.dst`.
    fn send_bytes(&self, envelope: Envelope, payload: Vec<u8>) -> Result<()>;

    /// Next undelivered frame for this rank, if any. Never blocks.
    fn poll_incoming(&self) -> Option<Frame>;

    /// The channel behind [`Transport::poll_incoming`], for callers that
    /// need to block until traffic arrives.
    fn incoming(&self) -> &Receiver<Frame>;

    /// Stops outbound traffic. Peers observe the end of this rank's streams.
    fn close(&self);

    /// Blocks until every inbound stream has ended and been drained into the
    /// incoming channel. Call after every rank has closed.
    fn join(&self);

    fn stats(&self) -> TransportStats;
}

/// Shared pre-transmission checks.
pub(crate) fn check_outgoing(
    rank: u32,
    size: u32,
    envelope: &Envelope,
    payload: &[u8],
) -> Result<()> {
    if envelope.src != rank {
        return Err(Error::Protocol(format!(
            "envelope src {} sent from rank {rank}",
            envelope.src
        )));
    }
    envelope.validate(size)?;
    if payload.len() as u64 != envelope.payload_len {
        return Err(Error::LengthMismatch {
            expected: envelope.payload_len as usize,
            actual: payload.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(dtype: Datatype, len: u64) -> Envelope {
        Envelope {
            context: 0,
            src: 0,
            dst: 1,
            tag: 7,
            dtype,
            payload_len: len,
        }
    }

    #[test]
    fn payload_must_hold_whole_elements() {
        assert!(env(Datatype::Int32, 4).validate(2).is_ok());
        assert!(matches!(
            env(Datatype::Int32, 6).validate(2),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(env(Datatype::Byte, 6).validate(2).is_ok());
    }

    #[test]
    fn ranks_must_be_in_world() {
        assert!(matches!(
            env(Datatype::Byte, 0).validate(1),
            Err(Error::InvalidRank { rank: 1, size: 1 })
        ));
        let mut self_send = env(Datatype::Byte, 0);
        self_send.dst = 0;
        assert!(self_send.validate(1).is_ok());
    }
}
