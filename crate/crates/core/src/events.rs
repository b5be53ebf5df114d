//! Structured trace of a simulation, one JSON object per line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::credit::ContributionReport;
use crate::domain::{ResourceVector, TaskId, UavId};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RoundStart {
        round: u64,
    },
    Proposal {
        round: u64,
        task: TaskId,
        leader: UavId,
        required: ResourceVector,
    },
    Bids {
        round: u64,
        task: TaskId,
        leader: UavId,
        bidders: Vec<UavId>,
    },
    Merge {
        round: u64,
        negotiation_round: usize,
        leader: UavId,
        uav: UavId,
        value_before: f64,
        value_after: f64,
    },
    Split {
        round: u64,
        negotiation_round: usize,
        leader: UavId,
        removed: Vec<UavId>,
        value_before: f64,
        value_after: f64,
    },
    Offer {
        round: u64,
        negotiation_round: usize,
        task: TaskId,
        leader: UavId,
        members: Vec<UavId>,
        value: f64,
    },
    Response {
        round: u64,
        negotiation_round: usize,
        follower: UavId,
        leader: UavId,
        accept: bool,
    },
    Unserved {
        round: u64,
        negotiation_round: usize,
        task: TaskId,
        leader: UavId,
    },
    Formed {
        round: u64,
        task: TaskId,
        leader: UavId,
        members: Vec<UavId>,
        aggregate: ResourceVector,
        required: ResourceVector,
        value: f64,
        snr: f64,
        t_up: f64,
        iterations: usize,
    },
    NegotiationDone {
        round: u64,
        negotiation_rounds: usize,
        refusals: usize,
    },
    Execution {
        round: u64,
        task: TaskId,
        reports: Vec<ContributionReport>,
    },
    SettlementFailed {
        round: u64,
        task: TaskId,
        reason: String,
    },
    Credits {
        round: u64,
        credits: Vec<CreditEntry>,
    },
    Baseline {
        round: u64,
        task: TaskId,
        leader: UavId,
        members: Vec<UavId>,
        aggregate: ResourceVector,
        required: ResourceVector,
        covered: bool,
    },
}

/// Credit of one UAV. Kept as a list entry because map keys do not survive
/// the tagged-enum round trip as integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditEntry {
    pub uav: UavId,
    pub credit: f64,
}

impl CreditEntry {
    pub fn from_map(credits: &BTreeMap<UavId, f64>) -> Vec<Self> {
        credits
            .iter()
            .map(|(&uav, &credit)| Self { uav, credit })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Self { events })
    }
}

impl Extend<Event> for EventLog {
    fn extend<T: IntoIterator<Item = Event>>(&mut self, iter: T) {
        self.events.extend(iter);
    }
}
