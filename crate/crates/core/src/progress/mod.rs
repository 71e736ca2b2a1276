//! Strong progress engine.
//!
//! Each rank owns an [`Engine`] with one or more dedicated threads. Started
//! requests are handed to the engine through a work channel; the threads
//! transmit sends, match receives against arrivals, run local reduce ops
//! and fire completions, all without any call from the application thread.
//! Threads block on the work and transport channels when idle.
//!
//! Work items and arrivals are drained under one lock so that the order in
//! which requests were started is the order in which they hit the wire and
//! the posted queue, regardless of how many threads are running.
//! Completions and local ops run after the lock is released.

pub mod matching;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use crossbeam_channel::{unbounded, Receiver, Select, Sender};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::request::Request;
use crate::transport::{Frame, Transport};

pub use matching::{MatchKey, MatchQueues};

/// Items drained per queue per lock acquisition.
const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub progress_threads: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { progress_threads: 1 }
    }
}

/// Work that leaves the matching lock and finishes outside it.
pub(crate) enum Finish {
    Done(Request, Result<crate::request::Status>),
    Deliver(Request, Frame),
    Local(Request),
}

pub(crate) struct EngineShared {
    transport: Arc<dyn Transport>,
    work_tx: RwLock<Option<Sender<Request>>>,
    work_rx: Receiver<Request>,
    queues: Mutex<MatchQueues<Request>>,
    shutdown: AtomicBool,
    completed: AtomicU64,
}

pub struct Engine {
    shared: Arc<EngineShared>,
    config: EngineConfig,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Engine {
    pub fn start(transport: Arc<dyn Transport>, config: EngineConfig) -> Result<Self> {
        assert!(config.progress_threads >= 1, "at least one progress thread");
        let (tx, rx) = unbounded();
        let shared = Arc::new(EngineShared {
            transport,
            work_tx: RwLock::new(Some(tx)),
            work_rx: rx,
            queues: Mutex::new(MatchQueues::new()),
            shutdown: AtomicBool::new(false),
            completed: AtomicU64::new(0),
        });
        let rank = shared.transport.rank();
        let threads = (0..config.progress_threads)
            .map(|i| {
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("progress-{rank}.{i}"))
                    .spawn(move || shared.run())
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Engine {
            shared,
            config,
            threads: Mutex::new(threads),
        })
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.shared.transport
    }

    /// Hands an active request to the engine.
    pub(crate) fn submit(&self, request: Request) -> Result<()> {
        let tx = self.shared.work_tx.read().unwrap_or_else(|e| e.into_inner());
        match tx.as_ref() {
            Some(tx) => tx.send(request).map_err(|_| Error::EngineShutDown),
            None => Err(Error::EngineShutDown),
        }
    }

    /// Number of requests the engine has completed so far.
    pub fn completed(&self) -> u64 {
        self.shared.completed.load(Ordering::Relaxed)
    }

    /// Matching queue depths `(posted, unexpected)`.
    pub fn queue_depths(&self) -> (usize, usize) {
        let q = self.shared.queues.lock().unwrap_or_else(|e| e.into_inner());
        (q.posted_len(), q.unexpected_len())
    }

    /// Stops accepting work and joins the progress threads. Pending posted
    /// receives are dropped.
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::Release);
        self.shared.work_tx.write().unwrap_or_else(|e| e.into_inner()).take();
        let threads = std::mem::take(&mut *self.threads.lock().unwrap_or_else(|e| e.into_inner()));
        let me = thread::current().id();
        for t in threads {
            // The last handle can be dropped from a completion running on a
            // progress thread; that thread exits on its own.
            if t.thread().id() != me {
                let _ = t.join();
            }
        }
        while self.shared.work_rx.try_recv().is_ok() {}
        self.shared.queues.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl EngineShared {
    fn run(&self) {
        loop {
            if self.pump() {
                continue;
            }
            if self.shutdown.load(Ordering::Acquire) {
                break;
            }
            let mut sel = Select::new();
            sel.recv(&self.work_rx);
            sel.recv(self.transport.incoming());
            sel.ready();
        }
    }

    /// One drain pass. Returns whether anything was processed.
    fn pump(&self) -> bool {
        let mut finished = Vec::new();
        let mut processed = 0;
        {
            let mut queues = self.queues.lock().unwrap_or_else(|e| e.into_inner());
            for _ in 0..BATCH {
                let Ok(request) = self.work_rx.try_recv() else { break };
                processed += 1;
                if let Some(f) = request.dispatch(&self.transport, &mut queues) {
                    finished.push(f);
                }
            }
            for _ in 0..BATCH {
                let Some(frame) = self.transport.poll_incoming() else { break };
                processed += 1;
                if let Some((request, frame)) = queues.arrive(frame) {
                    finished.push(Finish::Deliver(request, frame));
                }
            }
        }
        for f in finished {
            match f {
                Finish::Done(request, outcome) => request.finish(outcome),
                Finish::Deliver(request, frame) => request.deliver(frame),
                Finish::Local(request) => request.run_local(),
            }
            self.completed.fetch_add(1, Ordering::Relaxed);
        }
        processed > 0
    }
}
