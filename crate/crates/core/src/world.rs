//! World launcher: ranks as threads over the in-process or TCP transport,
//! or a single rank of a multi-process TCP world.

use std::fmt::Display;
use std::net::{SocketAddr, TcpListener};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::comm::{Comm, RankContext};
use crate::error::{panic_message, WorldError};
use crate::eventlog::{Event, EventLog};
use crate::progress::{Engine, EngineConfig};
use crate::transport::{inproc, tcp, Transport, TransportStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport {other:?} (expected inproc or tcp)")),
        }
    }
}

impl TransportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransportKind::Inproc => "inproc",
            TransportKind::Tcp => "tcp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldConfig {
    pub size: u32,
    pub transport: TransportKind,
    pub progress_threads: usize,
    /// Per-rank listen addresses for TCP. Ephemeral loopback ports when
    /// absent.
    pub addresses: Option<Vec<SocketAddr>>,
    pub event_log: bool,
}

impl WorldConfig {
    pub fn inproc(size: u32) -> Self {
        WorldConfig {
            size,
            transport: TransportKind::Inproc,
            progress_threads: 1,
            addresses: None,
            event_log: false,
        }
    }

    pub fn tcp(size: u32) -> Self {
        WorldConfig {
            transport: TransportKind::Tcp,
            ..Self::inproc(size)
        }
    }

    pub fn with_transport(mut self, transport: TransportKind) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_progress_threads(mut self, threads: usize) -> Self {
        self.progress_threads = threads;
        self
    }

    pub fn with_event_log(mut self, enabled: bool) -> Self {
        self.event_log = enabled;
        self
    }

    pub fn with_addresses(mut self, addresses: Vec<SocketAddr>) -> Self {
        self.addresses = Some(addresses);
        self
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.size == 0 {
            return Err(WorldError::Config("world size must be at least 1".into()));
        }
        if self.progress_threads == 0 {
            return Err(WorldError::Config("at least one progress thread is required".into()));
        }
        if let Some(addresses) = &self.addresses {
            if self.transport != TransportKind::Tcp {
                return Err(WorldError::Config("addresses are only used by the tcp transport".into()));
            }
            if addresses.len() != self.size as usize {
                return Err(WorldError::Config(format!(
                    "{} addresses given for {} ranks",
                    addresses.len(),
                    self.size
                )));
            }
        }
        Ok(())
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            progress_threads: self.progress_threads,
        }
    }
}

/// Everything a finished world hands back.
#[derive(Debug)]
pub struct WorldOutput<T> {
    /// Entry return values, by rank.
    pub results: Vec<T>,
    /// Event logs by rank, empty when logging is off.
    pub logs: Vec<Vec<Event>>,
    pub stats: Vec<TransportStats>,
}

impl<T> WorldOutput<T> {
    pub fn events(&self) -> Vec<Event> {
        self.logs.iter().flatten().copied().collect()
    }
}

fn build_transports(config: &WorldConfig) -> Result<Vec<Arc<dyn Transport>>, WorldError> {
    Ok(match config.transport {
        TransportKind::Inproc => inproc::fabric(config.size)
            .into_iter()
            .map(|t| Arc::new(t) as Arc<dyn Transport>)
            .collect(),
        TransportKind::Tcp => {
            let endpoints = match &config.addresses {
                None => tcp::loopback(config.size),
                Some(addresses) => {
                    let listeners = addresses
                        .iter()
                        .map(|a| TcpListener::bind(a).map_err(|e| WorldError::BindFailure(format!("{a}: {e}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    tcp::mesh(listeners, addresses)
                }
            }
            .map_err(|e| WorldError::BindFailure(e.to_string()))?;
            endpoints
                .into_iter()
                .map(|t| Arc::new(t) as Arc<dyn Transport>)
                .collect()
        }
    })
}

struct Failure {
    rank: u32,
    error: WorldError,
}

/// Marker for the world-wide failure state: the first failing rank wins.
struct Abort {
    flag: Arc<AtomicBool>,
    first: Mutex<Option<Failure>>,
}

impl Abort {
    fn fail(&self, rank: u32, error: WorldError) {
        let mut first = self.first.lock().unwrap_or_else(|e| e.into_inner());
        if first.is_none() {
            *first = Some(Failure { rank, error });
        }
        self.flag.store(true, Ordering::Release);
    }
}

fn run_entry<T, E, F>(comm: &Comm, ctx: &RankContext, f: &F) -> Result<T, WorldError>
where
    E: Display,
    F: Fn(&Comm) -> Result<T, E>,
{
    let rank = comm.rank();
    let outcome = catch_unwind(AssertUnwindSafe(|| f(comm)));
    let value = match outcome {
        Ok(Ok(value)) => value,
        Ok(Err(e)) => {
            return Err(WorldError::RankFailed {
                rank,
                message: e.to_string(),
            })
        }
        Err(payload) => {
            return Err(WorldError::PanicInRank {
                rank,
                message: panic_message(payload.as_ref()),
            })
        }
    };
    ctx.finalize().map_err(|e| WorldError::RankFailed {
        rank,
        message: format!("finalize: {e}"),
    })?;
    Ok(value)
}

pub struct World;

impl World {
    /// Runs `entry` once per rank, each on its own thread with its own
    /// progress engine, and returns when every rank has finished and the
    /// world has shut down. Pending epilogues run before shutdown.
    pub fn spawn<T, E, F>(config: WorldConfig, entry: F) -> Result<WorldOutput<T>, WorldError>
    where
        T: Send,
        E: Display,
        F: Fn(&Comm) -> Result<T, E> + Send + Sync,
    {
        config.validate()?;
        let transports = build_transports(&config)?;
        let abort = Abort {
            flag: Arc::new(AtomicBool::new(false)),
            first: Mutex::new(None),
        };
        let mut contexts = Vec::with_capacity(transports.len());
        for transport in &transports {
            let engine = Engine::start(Arc::clone(transport), config.engine_config())
                .map_err(|e| WorldError::Config(format!("engine start: {e}")))?;
            let log = config.event_log.then(|| Arc::new(EventLog::new(transport.rank())));
            contexts.push(RankContext::new(engine, log, Arc::clone(&abort.flag)));
        }

        let results: Vec<Option<T>> = thread::scope(|scope| {
            let handles: Vec<_> = contexts
                .iter()
                .map(|ctx| {
                    let (entry, abort) = (&entry, &abort);
                    thread::Builder::new()
                        .name(format!("rank-{}", ctx.rank))
                        .spawn_scoped(scope, move || {
                            let comm = Comm::new(Arc::clone(ctx));
                            match run_entry(&comm, ctx, entry) {
                                Ok(value) => Some(value),
                                Err(error) => {
                                    abort.fail(ctx.rank, error);
                                    None
                                }
                            }
                        })
                        .expect("spawn rank thread")
                })
                .collect();
            handles.into_iter().map(|h| h.join().ok().flatten()).collect()
        });

        let logs = contexts
            .iter()
            .map(|ctx| ctx.log.as_ref().map(|l| l.snapshot()).unwrap_or_default())
            .collect();
        shutdown(&contexts, &transports);
        let stats = transports.iter().map(|t| t.stats()).collect();

        if let Some(failure) = abort.first.into_inner().unwrap_or_else(|e| e.into_inner()) {
            debug_assert_eq!(failure.error.rank(), Some(failure.rank));
            return Err(failure.error);
        }
        Ok(WorldOutput {
            results: results.into_iter().map(|r| r.expect("every rank succeeded")).collect(),
            logs,
            stats,
        })
    }

    /// Runs rank `rank` of a TCP world whose ranks live in separate
    /// processes. Every process must call this with the same address list.
    pub fn spawn_rank<T, E, F>(config: WorldConfig, rank: u32, entry: F) -> Result<(T, Vec<Event>), WorldError>
    where
        E: Display,
        F: Fn(&Comm) -> Result<T, E>,
    {
        config.validate()?;
        let Some(addresses) = config.addresses.as_ref().filter(|_| config.transport == TransportKind::Tcp) else {
            return Err(WorldError::Config("a multi-process world needs tcp addresses".into()));
        };
        if rank >= config.size {
            return Err(WorldError::Config(format!("rank {rank} outside a world of {}", config.size)));
        }
        let endpoint = tcp::TcpEndpoint::connect(rank, addresses).map_err(|e| WorldError::BindFailure(e.to_string()))?;
        let transport: Arc<dyn Transport> = Arc::new(endpoint);
        let engine = Engine::start(Arc::clone(&transport), config.engine_config())
            .map_err(|e| WorldError::Config(format!("engine start: {e}")))?;
        let log = config.event_log.then(|| Arc::new(EventLog::new(rank)));
        let ctx = RankContext::new(engine, log, Arc::new(AtomicBool::new(false)));
        let comm = Comm::new(Arc::clone(&ctx));
        let outcome = run_entry(&comm, &ctx, &entry).and_then(|value| {
            // Peers may still be receiving from this rank's engine.
            comm.barrier().map_err(|e| WorldError::RankFailed {
                rank,
                message: format!("closing barrier: {e}"),
            })?;
            Ok(value)
        });
        let events = ctx.log.as_ref().map(|l| l.snapshot()).unwrap_or_default();
        drop(comm);
        shutdown(std::slice::from_ref(&ctx), std::slice::from_ref(&transport));
        outcome.map(|value| (value, events))
    }
}

fn shutdown(contexts: &[Arc<RankContext>], transports: &[Arc<dyn Transport>]) {
    for ctx in contexts {
        ctx.take_composites();
        ctx.engine.shutdown();
    }
    for transport in transports {
        transport.close();
    }
    for transport in transports {
        transport.join();
    }
}
