//! Per-rank communicator handle and persistent point-to-point init.

use std::sync::atomic::{AtomicBool, AtomicI32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::buffer::{Buffer, Region};
use crate::datatype::Datatype;
use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::progress::{Engine, MatchKey};
use crate::request::{Operation, Request, Status};
use crate::transport::Envelope;

/// First context id available to applications. Ids below it are reserved
/// for runtime-internal traffic.
pub const USER_CONTEXT_BASE: u32 = 16;
/// Traffic of schedules built by the collective factories.
pub const COLLECTIVE_CONTEXT: u32 = 1;
/// Traffic of the blocking collective baselines.
pub const DIRECT_CONTEXT: u32 = 2;
/// Barrier traffic.
pub const BARRIER_CONTEXT: u32 = 3;

/// State shared by every handle that belongs to one rank.
pub(crate) struct RankContext {
    pub rank: u32,
    pub size: u32,
    pub engine: Engine,
    pub log: Option<Arc<EventLog>>,
    abort: Arc<AtomicBool>,
    ids: AtomicU64,
    collective_seq: AtomicI32,
    test_calls: AtomicU64,
    /// Unfreed composites, kept alive so their epilogues can run at
    /// finalize even if the application dropped every handle.
    composites: Mutex<Vec<Request>>,
}

impl RankContext {
    pub fn new(engine: Engine, log: Option<Arc<EventLog>>, abort: Arc<AtomicBool>) -> Arc<Self> {
        let transport = engine.transport();
        Arc::new(RankContext {
            rank: transport.rank(),
            size: transport.size(),
            engine,
            log,
            abort,
            ids: AtomicU64::new(0),
            collective_seq: AtomicI32::new(0),
            test_calls: AtomicU64::new(0),
            composites: Mutex::new(Vec::new()),
        })
    }

    pub fn next_id(&self) -> u64 {
        self.ids.fetch_add(1, Ordering::Relaxed)
    }

    pub fn aborted(&self) -> bool {
        self.abort.load(Ordering::Acquire)
    }

    pub fn count_test(&self) {
        self.test_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn register_composite(&self, request: &Request) {
        let mut list = self.composites.lock().unwrap_or_else(|e| e.into_inner());
        list.retain(|r| !r.is_freed());
        list.push(request.clone());
    }

    /// Drops the rank's hold on its composites.
    pub fn take_composites(&self) -> Vec<Request> {
        std::mem::take(&mut *self.composites.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// Runs the pending epilogue of every composite still alive on this
    /// rank, in creation order. Called once the rank's entry returns.
    pub fn finalize(&self) -> Result<()> {
        let live = self.take_composites();
        for request in live {
            if request.is_freed() {
                continue;
            }
            if matches!(request.state(), Ok(crate::request::RequestState::Active)) {
                let _ = request.wait();
            }
            if let Some(core) = request.composite_core() {
                core.run_epilogue()?;
            }
        }
        Ok(())
    }
}

/// A rank's view of the world, scoped to one matching context.
#[derive(Clone)]
pub struct Comm {
    pub(crate) ctx: Arc<RankContext>,
    context: u32,
}

impl Comm {
    pub(crate) fn new(ctx: Arc<RankContext>) -> Self {
        Comm {
            ctx,
            context: USER_CONTEXT_BASE,
        }
    }

    pub fn rank(&self) -> u32 {
        self.ctx.rank
    }

    pub fn size(&self) -> u32 {
        self.ctx.size
    }

    pub fn context(&self) -> u32 {
        self.context
    }

    /// Same rank, different matching context. Context ids below
    /// [`USER_CONTEXT_BASE`] are reserved.
    pub fn with_context(&self, context: u32) -> Result<Comm> {
        if context < USER_CONTEXT_BASE {
            return Err(Error::ReservedContext(context));
        }
        Ok(self.reserved(context))
    }

    pub(crate) fn reserved(&self, context: u32) -> Comm {
        Comm {
            ctx: Arc::clone(&self.ctx),
            context,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.ctx.engine
    }

    pub fn event_log(&self) -> Option<&Arc<EventLog>> {
        self.ctx.log.as_ref()
    }

    /// Number of `test` calls made on this rank's requests so far.
    pub fn test_calls(&self) -> u64 {
        self.ctx.test_calls.load(Ordering::Relaxed)
    }

    /// Tag for the next collective factory call. Identical on every rank as
    /// long as all ranks create collectives in the same order.
    pub(crate) fn next_collective_tag(&self) -> i32 {
        self.ctx.collective_seq.fetch_add(1, Ordering::Relaxed)
    }

    fn check_rank(&self, rank: u32) -> Result<()> {
        if rank >= self.size() {
            return Err(Error::InvalidRank { rank, size: self.size() });
        }
        Ok(())
    }

    fn sized_region(region: Region, count: usize, dtype: Datatype) -> Result<Region> {
        let bytes = dtype.bytes_for(count);
        if bytes > region.len() {
            return Err(Error::InvalidCount {
                count,
                capacity: region.len(),
            });
        }
        Ok(region.buffer().region(region.offset(), bytes))
    }

    /// Persistent send of `count` elements from the start of `buf`.
    pub fn send_init(
        &self,
        buf: impl Into<Region>,
        count: usize,
        dtype: Datatype,
        dest: u32,
        tag: i32,
    ) -> Result<Request> {
        self.check_rank(dest)?;
        let region = Self::sized_region(buf.into(), count, dtype)?;
        let envelope = Envelope {
            context: self.context,
            src: self.rank(),
            dst: dest,
            tag,
            dtype,
            payload_len: region.len() as u64,
        };
        Ok(Request::new(Arc::clone(&self.ctx), Operation::Send { envelope, region }))
    }

    /// Persistent receive of up to `count` elements into `buf`.
    pub fn recv_init(
        &self,
        buf: impl Into<Region>,
        count: usize,
        dtype: Datatype,
        source: u32,
        tag: i32,
    ) -> Result<Request> {
        self.check_rank(source)?;
        let region = Self::sized_region(buf.into(), count, dtype)?;
        let key = MatchKey {
            context: self.context,
            src: source,
            tag,
        };
        Ok(Request::new(Arc::clone(&self.ctx), Operation::Recv { key, region }))
    }

    /// Blocking send built on a one-shot persistent request.
    pub fn send(&self, buf: impl Into<Region>, count: usize, dtype: Datatype, dest: u32, tag: i32) -> Result<()> {
        let request = self.send_init(buf, count, dtype, dest, tag)?;
        request.start()?;
        let outcome = request.wait();
        request.free()?;
        outcome.map(drop)
    }

    /// Blocking receive built on a one-shot persistent request.
    pub fn recv(&self, buf: impl Into<Region>, count: usize, dtype: Datatype, source: u32, tag: i32) -> Result<Status> {
        let request = self.recv_init(buf, count, dtype, source, tag)?;
        request.start()?;
        let outcome = request.wait();
        request.free()?;
        outcome
    }

    /// Blocks until every rank has entered the barrier.
    pub fn barrier(&self) -> Result<()> {
        let comm = self.reserved(BARRIER_CONTEXT);
        let token = Buffer::zeroed(0);
        if self.rank() == 0 {
            for peer in 1..self.size() {
                comm.recv(&token, 0, Datatype::Byte, peer, 0)?;
            }
            for peer in 1..self.size() {
                comm.send(&token, 0, Datatype::Byte, peer, 1)?;
            }
        } else {
            comm.send(&token, 0, Datatype::Byte, 0, 0)?;
            comm.recv(&token, 0, Datatype::Byte, 0, 1)?;
        }
        Ok(())
    }
}
