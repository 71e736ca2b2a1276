//! Persistent requests.
//!
//! A [`Request`] is a cloneable handle to one reusable operation. Its state
//! moves `Inactive -> Active` on start, `Active -> Complete` when the
//! engine (or the owning schedule) finishes it, and `Complete -> Active`
//! again on the next start. Freeing invalidates every clone of the handle.
//!
//! Requests added to a schedule become sub-requests: the schedule starts
//! them round by round, and their completion advances the round instead of
//! being the end of the story. The application may still `wait`/`test` a
//! sub-request but may not `start` or `free` it.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::Duration;

use crate::buffer::Region;
use crate::comm::RankContext;
use crate::datatype::Datatype;
use crate::error::{Error, Result};
use crate::eventlog::EventKind;
use crate::progress::{Finish, MatchKey, MatchQueues};
use crate::reduce::{apply_reduce_op, ReduceOp};
use crate::schedule::ScheduleCore;
use crate::transport::{Envelope, Frame, Transport};

/// How often a blocked waiter re-checks the world abort flag.
const ABORT_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestState {
    Inactive,
    Active,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestKind {
    Send,
    Recv,
    LocalOp,
    Composite,
}

/// Completion status. Receives report the matched source, tag and size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Status {
    pub source: Option<u32>,
    pub tag: Option<i32>,
    pub bytes: usize,
}

pub(crate) struct LocalOp {
    pub op: ReduceOp,
    pub invec: Region,
    pub inoutvec: Region,
    pub len: usize,
    pub dtype: Datatype,
}

pub(crate) enum Operation {
    Send { envelope: Envelope, region: Region },
    Recv { key: MatchKey, region: Region },
    Local(LocalOp),
    Composite(Arc<ScheduleCore>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Inactive,
    Active,
    Complete,
    Freed,
}

/// Link from a sub-request back to its place in a schedule.
#[derive(Clone)]
pub(crate) struct Membership {
    pub schedule: u64,
    pub round: usize,
    pub op: usize,
    pub auto_free: bool,
    /// Dangling until the schedule is committed.
    pub core: Weak<ScheduleCore>,
}

struct Slot {
    phase: Phase,
    completions: u64,
    outcome: Option<Result<Status>>,
    membership: Option<Membership>,
}

pub(crate) struct RequestInner {
    id: u64,
    operation: Operation,
    ctx: Arc<RankContext>,
    slot: Mutex<Slot>,
    done: Condvar,
}

#[derive(Clone)]
pub struct Request {
    pub(crate) inner: Arc<RequestInner>,
}

impl fmt::Debug for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Request")
            .field("id", &self.inner.id)
            .field("kind", &self.kind())
            .finish()
    }
}

impl PartialEq for Request {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Eq for Request {}

impl Request {
    pub(crate) fn new(ctx: Arc<RankContext>, operation: Operation) -> Self {
        Request {
            inner: Arc::new(RequestInner {
                id: ctx.next_id(),
                operation,
                ctx,
                slot: Mutex::new(Slot {
                    phase: Phase::Inactive,
                    completions: 0,
                    outcome: None,
                    membership: None,
                }),
                done: Condvar::new(),
            }),
        }
    }

    pub(crate) fn from_inner(inner: Arc<RequestInner>) -> Self {
        Request { inner }
    }

    pub(crate) fn downgrade(&self) -> Weak<RequestInner> {
        Arc::downgrade(&self.inner)
    }

    fn slot(&self) -> MutexGuard<'_, Slot> {
        self.inner.slot.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn kind(&self) -> RequestKind {
        match self.inner.operation {
            Operation::Send { .. } => RequestKind::Send,
            Operation::Recv { .. } => RequestKind::Recv,
            Operation::Local(_) => RequestKind::LocalOp,
            Operation::Composite(_) => RequestKind::Composite,
        }
    }

    pub fn state(&self) -> Result<RequestState> {
        match self.slot().phase {
            Phase::Inactive => Ok(RequestState::Inactive),
            Phase::Active => Ok(RequestState::Active),
            Phase::Complete => Ok(RequestState::Complete),
            Phase::Freed => Err(Error::InvalidHandle),
        }
    }

    pub fn is_freed(&self) -> bool {
        self.slot().phase == Phase::Freed
    }

    /// Id of the schedule that currently owns this request.
    pub fn owner(&self) -> Option<u64> {
        self.slot().membership.as_ref().map(|m| m.schedule)
    }

    /// `(round, op)` position inside the owning schedule.
    pub fn position(&self) -> Option<(usize, usize)> {
        self.slot().membership.as_ref().map(|m| (m.round, m.op))
    }

    /// How many times this request has transitioned Active -> Complete.
    pub fn completion_count(&self) -> u64 {
        self.slot().completions
    }

    /// Operations per round, for a composite request.
    pub fn round_sizes(&self) -> Option<Vec<usize>> {
        self.composite_core().map(|c| c.round_sizes())
    }

    pub(crate) fn composite_core(&self) -> Option<&Arc<ScheduleCore>> {
        match &self.inner.operation {
            Operation::Composite(core) => Some(core),
            _ => None,
        }
    }

    fn log(&self, kind: EventKind, membership: Option<&Membership>) {
        if let Some(log) = &self.inner.ctx.log {
            match membership {
                Some(m) => log.record(kind, Some(m.schedule), Some(m.round), Some(m.op)),
                None => log.record(kind, None, None, None),
            }
        }
    }

    /// Starts the operation. A completed request restarts.
    pub fn start(&self) -> Result<()> {
        {
            let mut slot = self.slot();
            match slot.phase {
                Phase::Freed => return Err(Error::InvalidHandle),
                _ if slot.membership.is_some() => {
                    return Err(Error::OwnedBySchedule(slot.membership.as_ref().unwrap().schedule))
                }
                Phase::Active => return Err(Error::AlreadyActive),
                Phase::Inactive | Phase::Complete => {}
            }
            if let Some(core) = self.composite_core() {
                if core.epilogue_ran() {
                    return Err(Error::InvalidState);
                }
            }
            slot.phase = Phase::Active;
            slot.outcome = None;
            self.log(EventKind::Start, None);
        }
        self.launch_active()
    }

    /// Runs an already-activated request: composites begin their first
    /// round, everything else goes to the engine.
    fn launch_active(&self) -> Result<()> {
        match &self.inner.operation {
            Operation::Composite(core) => {
                core.begin();
                Ok(())
            }
            _ => self.inner.ctx.engine.submit(self.clone()).inspect_err(|e| {
                self.finish(Err(e.clone()));
            }),
        }
    }

    /// Sub-request path: arm for an upcoming execution.
    pub(crate) fn arm(&self) {
        let mut slot = self.slot();
        debug_assert!(
            matches!(slot.phase, Phase::Inactive | Phase::Complete),
            "arming a request in phase {:?}",
            slot.phase
        );
        slot.phase = Phase::Active;
        slot.outcome = None;
    }

    /// Sub-request path: launch as part of a round.
    pub(crate) fn launch(&self) {
        {
            let slot = self.slot();
            self.log(EventKind::Start, slot.membership.as_ref());
        }
        let _ = self.launch_active();
    }

    /// Blocks until the request completes and returns its outcome.
    pub fn wait(&self) -> Result<Status> {
        let mut slot = self.slot();
        let target = match slot.phase {
            Phase::Freed => return Err(Error::InvalidHandle),
            Phase::Inactive => return Err(Error::InvalidState),
            Phase::Complete => return slot.outcome.clone().expect("complete request has an outcome"),
            Phase::Active => slot.completions + 1,
        };
        while slot.completions < target {
            if slot.phase == Phase::Freed {
                return Err(Error::InvalidHandle);
            }
            if self.inner.ctx.aborted() {
                return Err(Error::Aborted);
            }
            slot = self
                .inner
                .done
                .wait_timeout(slot, ABORT_POLL)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        slot.outcome.clone().expect("complete request has an outcome")
    }

    /// Non-blocking completion check. Inactive requests test as complete.
    pub fn test(&self) -> Result<bool> {
        self.inner.ctx.count_test();
        let slot = self.slot();
        self.log(EventKind::Test, slot.membership.as_ref());
        match slot.phase {
            Phase::Freed => Err(Error::InvalidHandle),
            Phase::Active => Ok(false),
            Phase::Inactive | Phase::Complete => Ok(true),
        }
    }

    /// Releases the request. Freeing a composite first runs its epilogue
    /// rounds and frees the sub-requests marked for auto-freeing.
    pub fn free(&self) -> Result<()> {
        {
            let slot = self.slot();
            match slot.phase {
                Phase::Freed => return Err(Error::InvalidHandle),
                _ if slot.membership.is_some() => {
                    return Err(Error::OwnedBySchedule(slot.membership.as_ref().unwrap().schedule))
                }
                Phase::Active => return Err(Error::StillActive),
                Phase::Inactive | Phase::Complete => {}
            }
        }
        self.release_resources()?;
        let mut slot = self.slot();
        slot.phase = Phase::Freed;
        drop(slot);
        self.inner.done.notify_all();
        Ok(())
    }

    fn release_resources(&self) -> Result<()> {
        if let Some(core) = self.composite_core() {
            core.run_epilogue()?;
            core.free_auto_members();
        }
        Ok(())
    }

    /// Schedule-internal free that ignores ownership.
    pub(crate) fn force_free(&self) {
        if self.is_freed() {
            return;
        }
        let _ = self.release_resources();
        let mut slot = self.slot();
        slot.phase = Phase::Freed;
        slot.membership = None;
        drop(slot);
        self.inner.done.notify_all();
    }

    pub(crate) fn claim(&self, membership: Membership) -> Result<()> {
        let mut slot = self.slot();
        match slot.phase {
            Phase::Freed => return Err(Error::InvalidHandle),
            Phase::Active => return Err(Error::RequestActive),
            Phase::Inactive | Phase::Complete => {}
        }
        if let Some(m) = &slot.membership {
            return Err(Error::RequestOwned(m.schedule));
        }
        slot.membership = Some(membership);
        Ok(())
    }

    pub(crate) fn set_core(&self, core: Weak<ScheduleCore>) {
        if let Some(m) = self.slot().membership.as_mut() {
            m.core = core;
        }
    }

    /// Drops schedule ownership, leaving a valid inactive handle.
    pub(crate) fn disown(&self) {
        let mut slot = self.slot();
        slot.membership = None;
        if slot.phase == Phase::Complete {
            slot.phase = Phase::Inactive;
        }
    }

    pub(crate) fn auto_free(&self) -> bool {
        self.slot().membership.as_ref().is_some_and(|m| m.auto_free)
    }

    /// Active -> Complete. Wakes waiters, then tells the owning round.
    pub(crate) fn finish(&self, outcome: Result<Status>) {
        let link = {
            let mut slot = self.slot();
            if slot.phase != Phase::Active {
                debug_assert!(false, "completing request {} in phase {:?}", self.inner.id, slot.phase);
                return;
            }
            slot.phase = Phase::Complete;
            slot.completions += 1;
            slot.outcome = Some(outcome.clone());
            self.log(EventKind::Complete, slot.membership.as_ref());
            self.inner.done.notify_all();
            slot.membership.as_ref().map(|m| (m.core.clone(), m.round))
        };
        if let Some((core, round)) = link {
            if let Some(core) = core.upgrade() {
                core.release(round, outcome.err());
            }
        }
    }

    /// Engine hook, called under the matching lock in start order.
    pub(crate) fn dispatch(
        self,
        transport: &Arc<dyn Transport>,
        queues: &mut MatchQueues<Request>,
    ) -> Option<Finish> {
        match &self.inner.operation {
            Operation::Send { envelope, region } => {
                let payload = region.read_prefix(envelope.payload_len as usize);
                let outcome = transport.send_bytes(*envelope, payload).map(|()| Status {
                    source: None,
                    tag: Some(envelope.tag),
                    bytes: envelope.payload_len as usize,
                });
                Some(Finish::Done(self, outcome))
            }
            Operation::Recv { key, .. } => {
                let key = *key;
                queues.post(key, self).map(|(r, f)| Finish::Deliver(r, f))
            }
            Operation::Local(_) => Some(Finish::Local(self)),
            Operation::Composite(_) => Some(Finish::Done(self, Err(Error::InvalidState))),
        }
    }

    /// Engine hook: copy a matched frame into the receive buffer.
    pub(crate) fn deliver(self, frame: Frame) {
        let Operation::Recv { region, .. } = &self.inner.operation else {
            unreachable!("only receives are matched");
        };
        let outcome = if frame.payload.len() > region.len() {
            Err(Error::Truncated {
                received: frame.payload.len(),
                capacity: region.len(),
            })
        } else {
            region.write_prefix(&frame.payload);
            Ok(Status {
                source: Some(frame.envelope.src),
                tag: Some(frame.envelope.tag),
                bytes: frame.payload.len(),
            })
        };
        self.finish(outcome);
    }

    /// Engine hook: run a local reduce op on the progress thread.
    pub(crate) fn run_local(self) {
        let Operation::Local(local) = &self.inner.operation else {
            unreachable!("only local ops run locally");
        };
        let outcome = run_local_op(local).map(|()| Status {
            bytes: local.dtype.bytes_for(local.len),
            ..Status::default()
        });
        self.finish(outcome);
    }
}

fn run_local_op(local: &LocalOp) -> Result<()> {
    let bytes = local.dtype.bytes_for(local.len);
    // Copy the input out first so no two buffer locks are ever held at once.
    let invec = local.invec.read_prefix(bytes);
    let (buffer, offset) = (local.inoutvec.buffer(), local.inoutvec.offset());
    let mut guard = buffer.lock();
    apply_reduce_op(&local.op, &invec, &mut guard[offset..offset + bytes], local.len, local.dtype)
}
