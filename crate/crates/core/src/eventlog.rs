//! Per-rank debug event log and the checks that run over it.
//!
//! Text form is one record per line, `rank,seq,event,round,op`. The `round`
//! column is `S/R` for round-scoped events (schedule id and round index),
//! `S` for schedule-scoped events and empty for requests outside any
//! schedule. `op` is the operation's index within its round.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Complete,
    RoundLaunch,
    CompositeComplete,
    EpilogueStart,
    Test,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Complete => "complete",
            EventKind::RoundLaunch => "round_launch",
            EventKind::CompositeComplete => "composite_complete",
            EventKind::EpilogueStart => "epilogue_start",
            EventKind::Test => "test",
        }
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "start" => EventKind::Start,
            "complete" => EventKind::Complete,
            "round_launch" => EventKind::RoundLaunch,
            "composite_complete" => EventKind::CompositeComplete,
            "epilogue_start" => EventKind::EpilogueStart,
            "test" => EventKind::Test,
            other => return Err(format!("unknown event {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub rank: u32,
    pub seq: u64,
    pub kind: EventKind,
    pub schedule: Option<u64>,
    pub round: Option<usize>,
    pub op: Option<usize>,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},", self.rank, self.seq, self.kind.as_str())?;
        match (self.schedule, self.round) {
            (Some(s), Some(r)) => write!(f, "{s}/{r}")?,
            (Some(s), None) => write!(f, "{s}")?,
            _ => {}
        }
        f.write_str(",")?;
        if let Some(op) = self.op {
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let [rank, seq, kind, round, op] = fields[..] else {
            return Err(format!("expected 5 fields in {line:?}"));
        };
        let num = |s: &str| s.parse::<u64>().map_err(|e| format!("{s:?}: {e}"));
        let (schedule, round) = match round.split_once('/') {
            Some((s, r)) => (Some(num(s)?), Some(num(r)? as usize)),
            None if round.is_empty() => (None, None),
            None => (Some(num(round)?), None),
        };
        Ok(Event {
            rank: num(rank)? as u32,
            seq: num(seq)?,
            kind: kind.parse()?,
            schedule,
            round,
            op: if op.is_empty() { None } else { Some(num(op)? as usize) },
        })
    }
}

/// Append-only event record for one rank. Sequence numbers are assigned
/// under the lock, so they respect causality between threads.
#[derive(Debug)]
pub struct EventLog {
    rank: u32,
    events: Mutex<Vec<Event>>,
}

impl EventLog {
    pub fn new(rank: u32) -> Self {
        EventLog {
            rank,
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn record(&self, kind: EventKind, schedule: Option<u64>, round: Option<usize>, op: Option<usize>) {
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        let seq = events.len() as u64;
        events.push(Event {
            rank: self.rank,
            seq,
            kind,
            schedule,
            round,
            op,
        });
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// Parses lines written by [`write_events`]. Blank lines and lines starting
/// with `#` are skipped.
pub fn parse_events(text: &str) -> Result<Vec<Event>, String> {
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub event: Event,
    pub reason: String,
}

/// Replays each rank's log and reports every place where a round was
/// launched while operations of an earlier round were still outstanding,
/// where an operation started outside its round's launch, or where an
/// operation completed without having started.
pub fn verify_round_order(events: &[Event]) -> Vec<Violation> {
    #[derive(Default)]
    struct Track {
        current: Option<usize>,
        outstanding: HashSet<(usize, usize)>,
    }
    let mut tracks: HashMap<(u32, u64), Track> = HashMap::new();
    let mut violations = Vec::new();
    let mut flag = |event: &Event, reason: String| violations.push(Violation { event: *event, reason });

    let mut ordered: Vec<&Event> = events.iter().collect();
    ordered.sort_by_key(|e| (e.rank, e.seq));
    for e in ordered {
        let Some(schedule) = e.schedule else { continue };
        let track = tracks.entry((e.rank, schedule)).or_default();
        match (e.kind, e.round, e.op) {
            (EventKind::RoundLaunch, Some(round), _) => {
                if !track.outstanding.is_empty() {
                    flag(e, format!("round {round} launched with {} ops outstanding", track.outstanding.len()));
                }
                track.current = Some(round);
            }
            (EventKind::Start, Some(round), Some(op)) => {
                if track.current != Some(round) {
                    flag(e, format!("op {op} of round {round} started while round {:?} is current", track.current));
                }
                if !track.outstanding.insert((round, op)) {
                    flag(e, format!("op {op} of round {round} started twice"));
                }
            }
            (EventKind::Complete, Some(round), Some(op)) => {
                if !track.outstanding.remove(&(round, op)) {
                    flag(e, format!("op {op} of round {round} completed without a start"));
                }
            }
            (EventKind::CompositeComplete, None, _) => {
                if !track.outstanding.is_empty() {
                    flag(e, "composite completed with ops outstanding".into());
                }
                track.current = None;
            }
            _ => {}
        }
    }
    violations
}

/// `(rank, schedule, round) -> number of launches`.
pub fn round_launch_counts(events: &[Event]) -> HashMap<(u32, u64, usize), usize> {
    let mut counts = HashMap::new();
    for e in events {
        if let (EventKind::RoundLaunch, Some(s), Some(r)) = (e.kind, e.schedule, e.round) {
            *counts.entry((e.rank, s, r)).or_insert(0) += 1;
        }
    }
    counts
}
