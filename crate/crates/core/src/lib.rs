//! Message-passing runtime with persistent requests, user-level schedules
//! and a strong progress engine.
//!
//! A [`World`] launches one thread per rank (in-process or over loopback
//! TCP). Each rank gets a [`Comm`] from which persistent sends, receives
//! and [`Schedule`]s are built. Schedules group persistent requests into
//! rounds and commit into a single composite [`Request`] that progresses
//! on the engine's threads without any help from the application.

pub mod bench;
pub mod buffer;
pub mod collectives;
pub mod comm;
pub mod datatype;
pub mod error;
pub mod eventlog;
pub mod progress;
pub mod reduce;
pub mod request;
pub mod schedule;
pub mod transport;
pub mod world;

pub use buffer::{Buffer, Region};
pub use collectives::{
    bcast_schedule_init, direct_bcast, plan_binomial_bcast, plan_linear_bcast, reduce_schedule_init, BcastPlan, Direction, Edge,
    Topology,
};
pub use comm::{Comm, USER_CONTEXT_BASE};
pub use datatype::{Datatype, Element};
pub use error::{Error, Result, WorldError};
pub use eventlog::{Event, EventKind, EventLog};
pub use progress::{Engine, EngineConfig};
pub use reduce::{apply_reduce_op, ReduceOp};
pub use request::{Request, RequestKind, RequestState, Status};
pub use schedule::{ExecutionSpan, Schedule};
pub use world::{TransportKind, World, WorldConfig, WorldOutput};
pub use bench::BenchRecord;
