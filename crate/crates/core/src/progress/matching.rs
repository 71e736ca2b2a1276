//! Exact-match posted/unexpected queues.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};

use crate::transport::Frame;

/// Matching key. No wildcards: equality is field-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchKey {
    pub context: u32,
    pub src: u32,
    pub tag: i32,
}

impl MatchKey {
    pub fn of(frame: &Frame) -> Self {
        MatchKey {
            context: frame.envelope.context,
            src: frame.envelope.src,
            tag: frame.envelope.tag,
        }
    }
}

/// Posted receives and unexpected frames, FIFO within each key.
///
/// A key never has entries in both queues at once: a post first consumes
/// an unexpected frame, an arrival first consumes a posted receive.
#[derive(Debug)]
pub struct MatchQueues<R> {
    posted: HashMap<MatchKey, VecDeque<R>>,
    unexpected: HashMap<MatchKey, VecDeque<Frame>>,
}

impl<R> Default for MatchQueues<R> {
    fn default() -> Self {
        MatchQueues {
            posted: HashMap::new(),
            unexpected: HashMap::new(),
        }
    }
}

impl<R> MatchQueues<R> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Posts a receive. Returns it paired with the oldest unexpected frame
    /// for `key`, or queues it and returns `None`.
    pub fn post(&mut self, key: MatchKey, recv: R) -> Option<(R, Frame)> {
        if let Some(frame) = pop_front(&mut self.unexpected, key) {
            return Some((recv, frame));
        }
        self.posted.entry(key).or_default().push_back(recv);
        None
    }

    /// Delivers an arrival. Returns it paired with the oldest posted
    /// receive for its key, or queues it as unexpected.
    pub fn arrive(&mut self, frame: Frame) -> Option<(R, Frame)> {
        let key = MatchKey::of(&frame);
        if let Some(recv) = pop_front(&mut self.posted, key) {
            return Some((recv, frame));
        }
        self.unexpected.entry(key).or_default().push_back(frame);
        None
    }

    pub fn posted_len(&self) -> usize {
        self.posted.values().map(VecDeque::len).sum()
    }

    pub fn unexpected_len(&self) -> usize {
        self.unexpected.values().map(VecDeque::len).sum()
    }

    pub fn clear(&mut self) {
        self.posted.clear();
        self.unexpected.clear();
    }
}

fn pop_front<T>(map: &mut HashMap<MatchKey, VecDeque<T>>, key: MatchKey) -> Option<T> {
    match map.entry(key) {
        Entry::Occupied(mut e) => {
            let item = e.get_mut().pop_front();
            if e.get().is_empty() {
                e.remove();
            }
            item
        }
        Entry::Vacant(_) => None,
    }
}
