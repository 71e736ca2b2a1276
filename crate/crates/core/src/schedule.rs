//! User-level schedules.
//!
//! A [`Schedule`] is built from rounds of persistent sub-requests and then
//! committed into a composite persistent [`Request`]. Starting the
//! composite launches one round; when the last sub-request of a round
//! finishes, the engine thread that finished it launches the next round.
//! The composite completes when the round before the completion point
//! finishes.
//!
//! Rounds before the reset point run only on the first start. Rounds from
//! the completion point on form the epilogue, which runs once, when the
//! composite is freed or the world shuts down.

use std::ops::Range;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, OnceLock, Weak};
use std::time::Duration;

use crate::buffer::Region;
use crate::comm::{Comm, RankContext};
use crate::datatype::Datatype;
use crate::error::{Error, Result};
use crate::eventlog::EventKind;
use crate::reduce::ReduceOp;
use crate::request::{LocalOp, Membership, Operation, Request, RequestInner, Status};

/// Round ranges a committed schedule executes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionSpan {
    /// Rounds run by the first start.
    pub first_run: Range<usize>,
    /// Rounds run by every later start.
    pub steady_run: Range<usize>,
    /// Rounds run once, at free or shutdown.
    pub epilogue: Range<usize>,
}

enum BuildState {
    Building,
    Committed(Request),
    Freed,
}

/// Schedule under construction, or the handle of a committed one.
pub struct Schedule {
    ctx: Arc<RankContext>,
    id: u64,
    auto_free: bool,
    rounds: Vec<Vec<Request>>,
    reset_index: usize,
    completion_index: Option<usize>,
    state: BuildState,
}

impl Schedule {
    /// An empty schedule with one open round. With `auto_free`, freeing the
    /// schedule frees every sub-request, marked or not.
    pub fn new(comm: &Comm, auto_free: bool) -> Self {
        Schedule {
            ctx: Arc::clone(&comm.ctx),
            id: comm.ctx.next_id(),
            auto_free,
            rounds: vec![Vec::new()],
            reset_index: 0,
            completion_index: None,
            state: BuildState::Building,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Rounds so far, including the open (possibly empty) current round.
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn ops_in_round(&self, round: usize) -> usize {
        self.rounds.get(round).map_or(0, Vec::len)
    }

    pub fn reset_index(&self) -> usize {
        self.reset_index
    }

    /// Explicit completion point, if one was marked.
    pub fn completion_index(&self) -> Option<usize> {
        self.completion_index
    }

    pub fn is_committed(&self) -> bool {
        matches!(self.state, BuildState::Committed(_))
    }

    /// The composite request, once committed.
    pub fn composite(&self) -> Option<&Request> {
        match &self.state {
            BuildState::Committed(r) => Some(r),
            _ => None,
        }
    }

    fn ensure_building(&self) -> Result<()> {
        match self.state {
            BuildState::Building => Ok(()),
            BuildState::Committed(_) => Err(Error::AlreadyCommitted),
            BuildState::Freed => Err(Error::ScheduleFreed),
        }
    }

    fn current(&self) -> usize {
        self.rounds.len() - 1
    }

    fn push(&mut self, request: &Request, auto_free: bool) -> Result<()> {
        let round = self.current();
        request.claim(Membership {
            schedule: self.id,
            round,
            op: self.rounds[round].len(),
            auto_free,
            core: Weak::new(),
        })?;
        self.rounds[round].push(request.clone());
        Ok(())
    }

    /// Adds an inactive, unowned persistent request to the current round.
    pub fn add_operation(&mut self, request: &Request, auto_free: bool) -> Result<()> {
        self.ensure_building()?;
        self.push(request, auto_free)
    }

    /// Adds a local `inoutvec = invec op inoutvec` step to the current round.
    /// The progress engine runs it.
    pub fn add_mpi_operation(
        &mut self,
        op: ReduceOp,
        invec: impl Into<Region>,
        inoutvec: impl Into<Region>,
        len: usize,
        dtype: Datatype,
    ) -> Result<()> {
        self.ensure_building()?;
        let (invec, inoutvec) = (invec.into(), inoutvec.into());
        let bytes = dtype.bytes_for(len);
        for region in [&invec, &inoutvec] {
            if region.len() < bytes {
                return Err(Error::LengthMismatch {
                    expected: bytes,
                    actual: region.len(),
                });
            }
        }
        let invec = invec.buffer().region(invec.offset(), bytes);
        let inoutvec = inoutvec.buffer().region(inoutvec.offset(), bytes);
        if bytes > 0 && invec.overlaps(&inoutvec) {
            return Err(Error::OverlappingBuffers);
        }
        let request = Request::new(
            Arc::clone(&self.ctx),
            Operation::Local(LocalOp {
                op,
                invec,
                inoutvec,
                len,
                dtype,
            }),
        );
        self.push(&request, true)
    }

    /// Ends the current round. No-op if it is still empty.
    pub fn create_round(&mut self) -> Result<()> {
        self.ensure_building()?;
        self.close_round();
        Ok(())
    }

    fn close_round(&mut self) {
        if !self.rounds[self.current()].is_empty() {
            self.rounds.push(Vec::new());
        }
    }

    /// Makes every round added so far run only on the first start. A
    /// non-empty current round is closed first, so its operations belong to
    /// the run-once part.
    pub fn mark_reset_point(&mut self) -> Result<()> {
        self.ensure_building()?;
        self.close_round();
        let index = self.current();
        if self.completion_index.is_some_and(|c| index > c) {
            return Err(Error::InvalidMark);
        }
        self.reset_index = index;
        Ok(())
    }

    /// Ends the repeated part of the schedule. Rounds added afterwards run
    /// once, at free time. A non-empty current round is closed first.
    pub fn mark_completion_point(&mut self) -> Result<()> {
        self.ensure_building()?;
        self.close_round();
        let index = self.current();
        if index < self.reset_index {
            return Err(Error::InvalidMark);
        }
        self.completion_index = Some(index);
        Ok(())
    }

    /// Freezes the schedule and returns its composite request. A trailing
    /// empty round is dropped.
    pub fn commit(&mut self) -> Result<Request> {
        self.ensure_building()?;
        if self.rounds.last().is_some_and(Vec::is_empty) && self.rounds.len() > 1 {
            self.rounds.pop();
        }
        if self.rounds.iter().all(Vec::is_empty) {
            return Err(Error::EmptySchedule);
        }
        let len = self.rounds.len();
        let completion_index = self.completion_index.unwrap_or(len).min(len);
        let reset_index = self.reset_index.min(completion_index);
        let rounds = self
            .rounds
            .iter()
            .enumerate()
            .map(|(i, members)| Round {
                members: members.clone(),
                counter: Mutex::new(0),
                next: (i + 1 < len).then_some(i + 1),
            })
            .collect();
        let core = Arc::new(ScheduleCore {
            id: self.id,
            rounds,
            reset_index,
            completion_index,
            run: Mutex::new(RunState {
                started_once: false,
                mode: Mode::Idle,
                epilogue: EpilogueState::Pending,
                first_error: None,
            }),
            epilogue_done: Condvar::new(),
            composite: OnceLock::new(),
            ctx: Arc::clone(&self.ctx),
        });
        for member in core.rounds.iter().flat_map(|r| &r.members) {
            member.set_core(Arc::downgrade(&core));
        }
        let composite = Request::new(Arc::clone(&self.ctx), Operation::Composite(Arc::clone(&core)));
        let _ = core.composite.set(composite.downgrade());
        self.ctx.register_composite(&composite);
        self.state = BuildState::Committed(composite.clone());
        Ok(composite)
    }

    /// Frees the schedule. A committed composite that is still live is freed
    /// first (running its epilogue). Sub-requests are then freed if the
    /// schedule auto-frees, otherwise handed back as valid inactive handles.
    pub fn free(&mut self) -> Result<()> {
        match &self.state {
            BuildState::Freed => return Err(Error::DoubleFree),
            BuildState::Building => {}
            BuildState::Committed(composite) => {
                if !composite.is_freed() {
                    composite.free()?;
                }
            }
        }
        for member in self.rounds.iter().flatten() {
            if member.is_freed() {
                continue;
            }
            if self.auto_free || member.kind() == crate::request::RequestKind::LocalOp {
                member.force_free();
            } else {
                member.disown();
            }
        }
        self.state = BuildState::Freed;
        Ok(())
    }

    /// Spans of a committed schedule.
    pub fn spans(&self) -> Option<ExecutionSpan> {
        self.composite()?.composite_core().map(|c| c.spans())
    }

    /// `next` link of every committed round.
    pub fn round_links(&self) -> Option<Vec<Option<usize>>> {
        self.composite()?
            .composite_core()
            .map(|c| c.rounds.iter().map(|r| r.next).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Idle,
    Body,
    Epilogue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EpilogueState {
    Pending,
    Running,
    Done,
}

struct RunState {
    started_once: bool,
    mode: Mode,
    epilogue: EpilogueState,
    first_error: Option<Error>,
}

struct Round {
    members: Vec<Request>,
    /// Members finished in the current launch. The only lock sub-request
    /// completions contend on.
    counter: Mutex<usize>,
    next: Option<usize>,
}

/// Immutable committed schedule plus its execution state.
pub(crate) struct ScheduleCore {
    id: u64,
    rounds: Vec<Round>,
    reset_index: usize,
    completion_index: usize,
    run: Mutex<RunState>,
    epilogue_done: Condvar,
    composite: OnceLock<Weak<RequestInner>>,
    ctx: Arc<RankContext>,
}

impl ScheduleCore {
    fn run_state(&self) -> MutexGuard<'_, RunState> {
        self.run.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn log(&self, kind: EventKind, round: Option<usize>) {
        if let Some(log) = &self.ctx.log {
            log.record(kind, Some(self.id), round, None);
        }
    }

    pub fn spans(&self) -> ExecutionSpan {
        ExecutionSpan {
            first_run: 0..self.completion_index,
            steady_run: self.reset_index..self.completion_index,
            epilogue: self.completion_index..self.rounds.len(),
        }
    }

    pub fn round_sizes(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.members.len()).collect()
    }

    pub fn epilogue_ran(&self) -> bool {
        self.run_state().epilogue != EpilogueState::Pending
    }

    /// Starts one execution. The composite request is already Active.
    pub fn begin(&self) {
        let first = {
            let mut run = self.run_state();
            debug_assert_eq!(run.mode, Mode::Idle);
            let first = if run.started_once { self.reset_index } else { 0 };
            run.started_once = true;
            run.mode = Mode::Body;
            run.first_error = None;
            first
        };
        if first >= self.completion_index {
            self.finish_body();
            return;
        }
        self.arm(first..self.completion_index);
        self.launch(first);
    }

    fn arm(&self, rounds: Range<usize>) {
        for round in &self.rounds[rounds] {
            for member in &round.members {
                member.arm();
            }
        }
    }

    /// Starts every member of `round`, in insertion order.
    fn launch(&self, round: usize) {
        *self.rounds[round].counter.lock().unwrap_or_else(|e| e.into_inner()) = 0;
        self.log(EventKind::RoundLaunch, Some(round));
        for member in &self.rounds[round].members {
            member.launch();
        }
    }

    /// Completion hook of a sub-request in `round`.
    pub fn release(&self, round: usize, error: Option<Error>) {
        let r = &self.rounds[round];
        let last = {
            let mut counter = r.counter.lock().unwrap_or_else(|e| e.into_inner());
            *counter += 1;
            assert!(*counter <= r.members.len(), "round {round} over-released");
            *counter == r.members.len()
        };
        let mode = {
            let mut run = self.run_state();
            if let Some(e) = error {
                run.first_error.get_or_insert(e);
            }
            run.mode
        };
        if !last {
            return;
        }
        match (mode, r.next) {
            (Mode::Body, Some(next)) if next < self.completion_index => self.launch(next),
            (Mode::Body, _) => self.finish_body(),
            (Mode::Epilogue, Some(next)) => self.launch(next),
            (Mode::Epilogue, None) => {
                let mut run = self.run_state();
                run.mode = Mode::Idle;
                run.epilogue = EpilogueState::Done;
                self.epilogue_done.notify_all();
            }
            (Mode::Idle, _) => unreachable!("release while idle"),
        }
    }

    fn finish_body(&self) {
        let outcome = {
            let mut run = self.run_state();
            run.mode = Mode::Idle;
            match run.first_error.take() {
                Some(e) => Err(e),
                None => Ok(Status::default()),
            }
        };
        self.log(EventKind::CompositeComplete, None);
        if let Some(composite) = self.composite.get().and_then(Weak::upgrade) {
            Request::from_inner(composite).finish(outcome);
        }
    }

    /// Runs the epilogue rounds once and blocks until they finish. Skipped
    /// when the composite never ran.
    pub fn run_epilogue(&self) -> Result<()> {
        {
            let mut run = self.run_state();
            match run.epilogue {
                EpilogueState::Done => return Ok(()),
                EpilogueState::Running => {}
                EpilogueState::Pending => {
                    if !run.started_once || self.completion_index == self.rounds.len() {
                        run.epilogue = EpilogueState::Done;
                        return Ok(());
                    }
                    debug_assert_eq!(run.mode, Mode::Idle);
                    run.mode = Mode::Epilogue;
                    run.epilogue = EpilogueState::Running;
                    drop(run);
                    self.log(EventKind::EpilogueStart, None);
                    self.arm(self.completion_index..self.rounds.len());
                    self.launch(self.completion_index);
                }
            }
        }
        let mut run = self.run_state();
        while run.epilogue != EpilogueState::Done {
            if self.ctx.aborted() {
                return Err(Error::Aborted);
            }
            run = self
                .epilogue_done
                .wait_timeout(run, Duration::from_millis(100))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        Ok(())
    }

    pub fn free_auto_members(&self) {
        for member in self.rounds.iter().flat_map(|r| &r.members) {
            if member.auto_free() {
                member.force_free();
            }
        }
    }
}
