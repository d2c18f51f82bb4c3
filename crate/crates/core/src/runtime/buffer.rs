use std::collections::BTreeMap;
use std::fmt;

use crate::{Error, Result};

/// One classified frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    /// Stream time in seconds.
    pub timestamp: f64,
    pub class_id: usize,
    /// In `(0, 1]`.
    pub confidence: f32,
}

impl FrameRecord {
    pub fn new(timestamp: f64, class_id: usize, confidence: f32) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::contract("frame timestamp must be finite"));
        }
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::contract(format!("confidence {confidence} outside (0, 1]")));
        }
        Ok(FrameRecord {
            timestamp,
            class_id,
            confidence,
        })
    }
}

/// Fixed-capacity ring of the most recent records; a push into a full
/// buffer overwrites the oldest slot.
#[derive(Clone, Debug)]
pub struct FrameBuffer {
    slots: Vec<FrameRecord>,
    capacity: usize,
    /// Slot the next push writes once the buffer is full.
    cursor: usize,
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("frame buffer capacity must be >= 1"));
        }
        Ok(FrameBuffer {
            slots: Vec::with_capacity(capacity),
            capacity,
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn newest(&self) -> Option<&FrameRecord> {
        if self.slots.len() < self.capacity {
            self.slots.last()
        } else {
            self.slots.get((self.cursor + self.capacity - 1) % self.capacity)
        }
    }

    /// Stores `record`, returning the evicted record if the buffer was full.
    pub fn push(&mut self, record: FrameRecord) -> Result<Option<FrameRecord>> {
        if let Some(last) = self.newest() {
            if record.timestamp < last.timestamp {
                return Err(Error::contract(format!(
                    "timestamp {} precedes last pushed {}",
                    record.timestamp, last.timestamp
                )));
            }
        }
        if self.slots.len() < self.capacity {
            self.slots.push(record);
            return Ok(None);
        }
        let old = std::mem::replace(&mut self.slots[self.cursor], record);
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(Some(old))
    }

    /// Records oldest first.
    pub fn records(&self) -> Vec<FrameRecord> {
        let (newer, older) = self.slots.split_at(self.cursor);
        older.iter().chain(newer).copied().collect()
    }

    /// Majority vote over records with `confidence >= threshold`.
    ///
    /// Ties go to the tied class whose latest qualifying record is most recent.
    pub fn poll(&self, threshold: f32, poll_time: f64) -> WindowDecision {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        let mut last_seen: BTreeMap<usize, usize> = BTreeMap::new();
        for (t, r) in self.records().iter().enumerate() {
            if r.confidence >= threshold {
                *votes.entry(r.class_id).or_default() += 1;
                last_seen.insert(r.class_id, t);
            }
        }
        let verdict = votes
            .iter()
            .max_by_key(|(c, n)| (**n, last_seen[c]))
            .map_or(Verdict::NoConfidentDecision, |(c, _)| Verdict::Class(*c));
        WindowDecision {
            verdict,
            poll_time,
            votes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Class(usize),
    /// No record in the window reached the threshold confidence.
    NoConfidentDecision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowDecision {
    pub verdict: Verdict,
    pub poll_time: f64,
    /// Tallies among above-threshold records, by class.
    pub votes: BTreeMap<usize, usize>,
}

/// Emitted once per low-confidence span that lasts the stipulated time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErroneousEvent {
    pub time: f64,
}

/// Tracks how long polls have gone without a confident decision.
#[derive(Clone, Debug)]
pub struct ErroneousDetector {
    stipulated_time: f64,
    last_poll: f64,
    span: f64,
    fired: bool,
}

impl ErroneousDetector {
    /// Stream time is taken to start at zero.
    pub fn new(stipulated_time: f64) -> Self {
        ErroneousDetector {
            stipulated_time,
            last_poll: 0.0,
            span: 0.0,
            fired: false,
        }
    }

    /// Each unconfident poll extends the span by the time since the previous
    /// poll; a confident one resets it.
    pub fn update(&mut self, decision: &WindowDecision) -> Option<ErroneousEvent> {
        let elapsed = (decision.poll_time - self.last_poll).max(0.0);
        self.last_poll = decision.poll_time;
        match decision.verdict {
            Verdict::Class(_) => {
                self.span = 0.0;
                self.fired = false;
                None
            }
            Verdict::NoConfidentDecision => {
                self.span += elapsed;
                // Spans are sums of poll intervals; allow for their rounding.
                if !self.fired && self.span >= self.stipulated_time - 1e-9 {
                    self.fired = true;
                    Some(ErroneousEvent {
                        time: decision.poll_time,
                    })
                } else {
                    None
                }
            }
        }
    }
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Poll(WindowDecision),
    Erroneous(ErroneousEvent),
    /// Frames discarded because inference lagged (live mode only).
    Dropped(usize),
}

impl fmt::Display for Event {
    /// `POLL<TAB>t<TAB>CLASS|NONE<TAB>class or -<TAB>votes`,
    /// `ERRONEOUS<TAB>t` or `DROPPED<TAB>count`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Poll(d) => {
                let (verdict, class) = match d.verdict {
                    Verdict::Class(c) => ("CLASS", c.to_string()),
                    Verdict::NoConfidentDecision => ("NONE", "-".to_string()),
                };
                let votes = if d.votes.is_empty() {
                    "-".to_string()
                } else {
                    d.votes
                        .iter()
                        .map(|(c, n)| format!("{c}={n}"))
                        .collect::<Vec<_>>()
                        .join(",")
                };
                write!(f, "POLL\t{:.3}\t{verdict}\t{class}\t{votes}", d.poll_time)
            }
            Event::Erroneous(e) => write!(f, "ERRONEOUS\t{:.3}", e.time),
            Event::Dropped(n) => write!(f, "DROPPED\t{n}"),
        }
    }
}

/// The log as text, one LF-terminated line per event.
pub fn format_event_log(events: &[Event]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}
