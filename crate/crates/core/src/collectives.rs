//! Collectives built only from the public point-to-point and schedule API,
//! plus blocking baselines that bypass schedules.
//!
//! Factory traffic runs on a reserved context, tagged with a per-rank
//! sequence number. All ranks must therefore call the factories in the same
//! order, exactly like a blocking collective.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::buffer::{Buffer, Region};
use crate::comm::{Comm, COLLECTIVE_CONTEXT, DIRECT_CONTEXT};
use crate::datatype::Datatype;
use crate::error::{Error, Result};
use crate::reduce::ReduceOp;
use crate::request::Request;
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Linear,
    Binomial,
}

impl Topology {
    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Linear => "linear",
            Topology::Binomial => "binomial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Send,
    Recv,
}

/// One message of a plan, seen from one rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub peer: u32,
    pub direction: Direction,
    pub round: usize,
}

/// Who sends to whom, and in which round, for one broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BcastPlan {
    pub root: u32,
    pub size: u32,
    pub topology: Topology,
    /// Edges of each rank, grouped by rank and ordered by round.
    pub edges: Vec<Vec<Edge>>,
}

impl BcastPlan {
    pub fn rounds(&self) -> usize {
        self.edges.iter().flatten().map(|e| e.round + 1).max().unwrap_or(0)
    }

    pub fn edges_of(&self, rank: u32) -> &[Edge] {
        &self.edges[rank as usize]
    }

    /// `(from, to)` pairs of one round, in rank order.
    pub fn round_messages(&self, round: usize) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (rank, edges) in self.edges.iter().enumerate() {
            for e in edges {
                if e.round == round && e.direction == Direction::Send {
                    out.push((rank as u32, e.peer));
                }
            }
        }
        out
    }

    /// Checks the structural rules every plan must satisfy and returns the
    /// first broken one.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = self.size as usize;
        if self.edges.len() != p || self.root >= self.size {
            return Err("plan shape does not match its size".into());
        }
        if self.topology == Topology::Binomial {
            let want = ceil_log2(self.size);
            if self.rounds() != want {
                return Err(format!("{} rounds, expected {want}", self.rounds()));
            }
        }
        if self.topology == Topology::Linear && self.rounds() > 1 {
            return Err("linear plan uses more than one round".into());
        }
        let mut pairs = HashSet::new();
        let mut has_data_from = vec![usize::MAX; p];
        has_data_from[self.root as usize] = 0;
        for (rank, edges) in self.edges.iter().enumerate() {
            let recvs: Vec<&Edge> = edges.iter().filter(|e| e.direction == Direction::Recv).collect();
            let expected = usize::from(rank as u32 != self.root);
            if recvs.len() != expected {
                return Err(format!("rank {rank} receives {} times", recvs.len()));
            }
            if let Some(recv) = recvs.first() {
                if edges.iter().any(|e| e.direction == Direction::Send && e.round <= recv.round) {
                    return Err(format!("rank {rank} sends before it receives"));
                }
                has_data_from[rank] = recv.round + 1;
            }
            for e in edges.iter().filter(|e| e.direction == Direction::Send) {
                if !pairs.insert((rank as u32, e.peer)) {
                    return Err(format!("rank {rank} sends to {} twice", e.peer));
                }
                let mirrored = self.edges[e.peer as usize]
                    .iter()
                    .any(|m| m.peer == rank as u32 && m.direction == Direction::Recv && m.round == e.round);
                if !mirrored {
                    return Err(format!("send {rank}->{} in round {} has no matching receive", e.peer, e.round));
                }
            }
        }
        for (rank, edges) in self.edges.iter().enumerate() {
            for e in edges.iter().filter(|e| e.direction == Direction::Send) {
                if has_data_from[rank] > e.round {
                    return Err(format!("rank {rank} forwards in round {} before holding data", e.round));
                }
            }
        }
        Ok(())
    }
}

fn ceil_log2(p: u32) -> usize {
    (u32::BITS - p.saturating_sub(1).leading_zeros()) as usize
}

fn push_message(edges: &mut [Vec<Edge>], from: u32, to: u32, round: usize) {
    edges[from as usize].push(Edge {
        peer: to,
        direction: Direction::Send,
        round,
    });
    edges[to as usize].push(Edge {
        peer: from,
        direction: Direction::Recv,
        round,
    });
}

fn check_plan_args(size: u32, root: u32) -> Result<()> {
    if root >= size {
        return Err(Error::InvalidRank { rank: root, size });
    }
    Ok(())
}

/// Binomial tree over ranks relative to `root`. In round `i` every rank
/// holding data at relative position `v` (a multiple of twice the stride)
/// forwards to `v + stride`, where the stride halves every round.
pub fn plan_binomial_bcast(size: u32, root: u32) -> Result<BcastPlan> {
    check_plan_args(size, root)?;
    let rounds = ceil_log2(size);
    let mut edges = vec![Vec::new(); size as usize];
    let absolute = |v: u32| (v + root) % size;
    for round in 0..rounds {
        let stride = 1u32 << (rounds - 1 - round);
        for v in (0..size).step_by(2 * stride as usize) {
            if v + stride < size {
                push_message(&mut edges, absolute(v), absolute(v + stride), round);
            }
        }
    }
    Ok(BcastPlan {
        root,
        size,
        topology: Topology::Binomial,
        edges,
    })
}

/// Root sends to every other rank in a single round.
pub fn plan_linear_bcast(size: u32, root: u32) -> Result<BcastPlan> {
    check_plan_args(size, root)?;
    let mut edges = vec![Vec::new(); size as usize];
    for peer in (0..size).filter(|&r| r != root) {
        push_message(&mut edges, root, peer, 0);
    }
    Ok(BcastPlan {
        root,
        size,
        topology: Topology::Linear,
        edges,
    })
}

pub fn plan_bcast(size: u32, root: u32, topology: Topology) -> Result<BcastPlan> {
    match topology {
        Topology::Linear => plan_linear_bcast(size, root),
        Topology::Binomial => plan_binomial_bcast(size, root),
    }
}

fn region_for(buffer: &Region, count: usize, dtype: Datatype) -> Result<Region> {
    let bytes = dtype.bytes_for(count);
    if bytes > buffer.len() {
        return Err(Error::InvalidCount {
            count,
            capacity: buffer.len(),
        });
    }
    Ok(buffer.buffer().region(buffer.offset(), bytes))
}

/// Appends this rank's part of a broadcast to `schedule`: one round with
/// the receive (non-roots), then one round with every forward.
pub fn append_bcast(
    schedule: &mut Schedule,
    comm: &Comm,
    buffer: impl Into<Region>,
    count: usize,
    dtype: Datatype,
    root: u32,
    topology: Topology,
) -> Result<()> {
    let plan = plan_bcast(comm.size(), root, topology)?;
    let region = region_for(&buffer.into(), count, dtype)?;
    let net = comm.reserved(COLLECTIVE_CONTEXT);
    let tag = comm.next_collective_tag();
    let edges = plan.edges_of(comm.rank());
    for e in edges.iter().filter(|e| e.direction == Direction::Recv) {
        let recv = net.recv_init(region.clone(), count, dtype, e.peer, tag)?;
        schedule.add_operation(&recv, true)?;
    }
    schedule.create_round()?;
    for e in edges.iter().filter(|e| e.direction == Direction::Send) {
        let send = net.send_init(region.clone(), count, dtype, e.peer, tag)?;
        schedule.add_operation(&send, true)?;
    }
    schedule.create_round()?;
    Ok(())
}

/// Keeps a composite with nothing to communicate (a single rank) valid:
/// a zero-length local step.
fn add_noop(schedule: &mut Schedule) -> Result<()> {
    let empty = Buffer::zeroed(0);
    schedule.add_mpi_operation(ReduceOp::Sum, &empty, Buffer::zeroed(0), 0, Datatype::Byte)
}

/// Restartable broadcast of `count` elements of `buffer` from `root`.
pub fn bcast_schedule_init(
    comm: &Comm,
    buffer: impl Into<Region>,
    count: usize,
    dtype: Datatype,
    root: u32,
    topology: Topology,
) -> Result<Request> {
    let mut schedule = Schedule::new(comm, true);
    append_bcast(&mut schedule, comm, buffer, count, dtype, root, topology)?;
    if comm.size() == 1 {
        add_noop(&mut schedule)?;
    }
    schedule.commit()
}

/// Children of relative rank `v` in ascending stride order, and its parent.
fn reduce_tree(v: u32, size: u32) -> (Vec<u32>, Option<u32>) {
    let mut children = Vec::new();
    let mut mask = 1u32;
    while mask < size {
        if v & mask != 0 {
            return (children, Some(v - mask));
        }
        if v + mask < size {
            children.push(v + mask);
        }
        mask <<= 1;
    }
    (children, None)
}

/// Appends a binomial reduction into `recvbuf` on `root`. `recvbuf` is
/// only written on the root; other ranks accumulate into scratch space.
#[allow(clippy::too_many_arguments)]
pub fn append_reduce(
    schedule: &mut Schedule,
    comm: &Comm,
    sendbuf: impl Into<Region>,
    recvbuf: impl Into<Region>,
    count: usize,
    dtype: Datatype,
    op: ReduceOp,
    root: u32,
) -> Result<()> {
    let size = comm.size();
    check_plan_args(size, root)?;
    let bytes = dtype.bytes_for(count);
    let send = region_for(&sendbuf.into(), count, dtype)?;
    let net = comm.reserved(COLLECTIVE_CONTEXT);
    let tag = comm.next_collective_tag();
    let v = (comm.rank() + size - root) % size;
    let (children, parent) = reduce_tree(v, size);
    let absolute = |rel: u32| (rel + root) % size;

    let acc = match parent {
        None => region_for(&recvbuf.into(), count, dtype)?,
        Some(_) => Buffer::zeroed(bytes).whole(),
    };
    let copy = ReduceOp::user(|invec, inoutvec, _, _| inoutvec.copy_from_slice(invec));
    schedule.add_mpi_operation(copy, send, acc.clone(), count, dtype)?;
    let mut temps = Vec::with_capacity(children.len());
    for &child in &children {
        let temp = Buffer::zeroed(bytes);
        let recv = net.recv_init(&temp, count, dtype, absolute(child), tag)?;
        schedule.add_operation(&recv, true)?;
        temps.push(temp);
    }
    schedule.create_round()?;
    for temp in &temps {
        schedule.add_mpi_operation(op.clone(), temp, acc.clone(), count, dtype)?;
        schedule.create_round()?;
    }
    if let Some(parent) = parent {
        let up = net.send_init(acc, count, dtype, absolute(parent), tag)?;
        schedule.add_operation(&up, true)?;
        schedule.create_round()?;
    }
    Ok(())
}

/// Restartable reduction of `count` elements onto `root`.
#[allow(clippy::too_many_arguments)]
pub fn reduce_schedule_init(
    comm: &Comm,
    sendbuf: impl Into<Region>,
    recvbuf: impl Into<Region>,
    count: usize,
    dtype: Datatype,
    op: ReduceOp,
    root: u32,
) -> Result<Request> {
    let mut schedule = Schedule::new(comm, true);
    append_reduce(&mut schedule, comm, sendbuf, recvbuf, count, dtype, op, root)?;
    schedule.commit()
}

/// Blocking binomial broadcast that uses plain sends and receives.
pub fn direct_bcast(comm: &Comm, buffer: impl Into<Region>, count: usize, dtype: Datatype, root: u32) -> Result<()> {
    let plan = plan_binomial_bcast(comm.size(), root)?;
    let region = region_for(&buffer.into(), count, dtype)?;
    let net = comm.reserved(DIRECT_CONTEXT);
    for e in plan.edges_of(comm.rank()) {
        match e.direction {
            Direction::Recv => {
                net.recv(region.clone(), count, dtype, e.peer, 0)?;
            }
            Direction::Send => net.send(region.clone(), count, dtype, e.peer, 0)?,
        }
    }
    Ok(())
}
