//! What gets said and when: live-description filtering, priority
//! scheduling, change buffering and replacement/relocation inference.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::embeddings::{similarity, Embedding, TextEmbedder};
use crate::frame_io::{ChangeStatus, PredictionRow};
use crate::geometry::{iou_3d, SpatialPhrase};
use crate::otm::{ChangeSnapshot, ObjectMemory};
use crate::pipeline::ChangeEvent;
use crate::Result;

/// Lower value is more urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Qa,
    Change,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationItem {
    pub kind: ItemKind,
    pub text: String,
    pub created_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialPhrase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionRow>,
}

impl NarrationItem {
    pub fn new(kind: ItemKind, text: impl Into<String>, created_at: f64) -> Self {
        NarrationItem {
            kind,
            text: text.into(),
            created_at,
            spatial: None,
            prediction: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiveDecision {
    /// Frame too similar to the last described one; no text was generated.
    SuppressedVisual,
    /// Generated text repeats something recently said.
    SuppressedText,
    /// Text generation produced nothing.
    Skipped,
    Deliver,
}

/// Two-stage redundancy check for live descriptions.
pub struct LiveFilter {
    tau_visual: f64,
    tau_text: f64,
    history: usize,
    last_frame: Option<Embedding>,
    texts: VecDeque<Embedding>,
}

impl LiveFilter {
    pub fn new(tau_visual: f64, tau_text: f64, history: usize) -> Self {
        LiveFilter {
            tau_visual,
            tau_text,
            history: history.max(1),
            last_frame: None,
            texts: VecDeque::new(),
        }
    }

    pub fn visually_redundant(&self, frame: &Embedding) -> bool {
        self.last_frame
            .as_ref()
            .is_some_and(|last| similarity(frame, last) > self.tau_visual)
    }

    pub fn textually_redundant(&self, text: &Embedding) -> bool {
        self.texts.iter().any(|t| similarity(text, t) > self.tau_text)
    }

    /// Runs both stages; `generate` is only called when the frame is novel.
    pub fn filter_live(
        &mut self,
        frame: &Embedding,
        generate: impl FnOnce() -> Option<String>,
        text_embedder: &dyn TextEmbedder,
    ) -> Result<(LiveDecision, Option<String>)> {
        if self.visually_redundant(frame) {
            return Ok((LiveDecision::SuppressedVisual, None));
        }
        let Some(text) = generate() else {
            return Ok((LiveDecision::Skipped, None));
        };
        let text_embedding = text_embedder.embed_text(&text)?;
        if self.textually_redundant(&text_embedding) {
            return Ok((LiveDecision::SuppressedText, Some(text)));
        }
        self.last_frame = Some(frame.clone());
        self.texts.push_back(text_embedding);
        while self.texts.len() > self.history {
            self.texts.pop_front();
        }
        Ok((LiveDecision::Deliver, Some(text)))
    }

    pub fn reset(&mut self) {
        self.last_frame = None;
        self.texts.clear();
    }
}

/// Priority queue over narration items: Q&A, then changes oldest first,
/// then fresh live descriptions.
pub struct Scheduler {
    staleness: f64,
    live_capacity: usize,
    qa: VecDeque<NarrationItem>,
    changes: Vec<NarrationItem>,
    live: VecDeque<NarrationItem>,
    discarded: usize,
}

impl Scheduler {
    pub fn new(staleness: f64, live_capacity: usize) -> Self {
        Scheduler {
            staleness,
            live_capacity: live_capacity.max(1),
            qa: VecDeque::new(),
            changes: Vec::new(),
            live: VecDeque::new(),
            discarded: 0,
        }
    }

    pub fn push(&mut self, item: NarrationItem) {
        match item.kind {
            ItemKind::Qa => self.qa.push_back(item),
            ItemKind::Change => {
                let at = self.changes.partition_point(|c| c.created_at <= item.created_at);
                self.changes.insert(at, item);
            }
            ItemKind::Live => {
                let at = self.live.partition_point(|c| c.created_at <= item.created_at);
                self.live.insert(at, item);
                while self.live.len() > self.live_capacity {
                    self.live.pop_front();
                    self.discarded += 1;
                }
            }
        }
    }

    pub fn next(&mut self, now: f64) -> Option<NarrationItem> {
        if let Some(q) = self.qa.pop_front() {
            return Some(q);
        }
        if !self.changes.is_empty() {
            return Some(self.changes.remove(0));
        }
        while let Some(l) = self.live.pop_front() {
            if now - l.created_at <= self.staleness {
                return Some(l);
            }
            self.discarded += 1;
        }
        None
    }

    pub fn pending(&self) -> usize {
        self.qa.len() + self.changes.len() + self.live.len()
    }

    /// Live items dropped for staleness or overflow so far.
    pub fn discarded(&self) -> usize {
        self.discarded
    }
}

/// Holds change events until enough accumulate to reason about pairs.
pub struct ChangeBuffer {
    capacity: usize,
    max_age: f64,
    events: Vec<ChangeEvent>,
}

impl ChangeBuffer {
    pub fn new(capacity: usize, max_age: f64) -> Self {
        ChangeBuffer {
            capacity: capacity.max(1),
            max_age,
            events: Vec::new(),
        }
    }

    /// Adds one frame's events, returning batches ready for narration.
    /// Events of a single frame are never split across batches.
    pub fn push(&mut self, batch: Vec<ChangeEvent>) -> Vec<Vec<ChangeEvent>> {
        let mut out = Vec::new();
        if !self.events.is_empty() && self.events.len() + batch.len() > self.capacity {
            out.push(std::mem::take(&mut self.events));
        }
        self.events.extend(batch);
        if self.events.len() >= self.capacity {
            out.push(std::mem::take(&mut self.events));
        }
        out
    }

    /// Flushes when the oldest buffered event has waited `max_age`.
    pub fn poll(&mut self, now: f64) -> Option<Vec<ChangeEvent>> {
        let oldest = self.events.iter().map(|e| e.timestamp).fold(f64::INFINITY, f64::min);
        (now - oldest >= self.max_age).then(|| std::mem::take(&mut self.events))
    }

    pub fn flush(&mut self) -> Option<Vec<ChangeEvent>> {
        (!self.events.is_empty()).then(|| std::mem::take(&mut self.events))
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// One narration built from one or two change events.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub status: ChangeStatus,
    /// Indices into the aggregated slice; pairs are (removed, appeared).
    pub members: Vec<usize>,
}

/// Partitions `events` into replacement pairs, relocation pairs and singles.
///
/// A removed and an appeared event pair up as a replacement when their boxes
/// overlap with IoU above `gamma`, or as a relocation when their boxes do not
/// but their embeddings are more similar than `y`. Pairs are chosen greedily
/// by IoU, then similarity, with earlier events winning ties.
pub fn aggregate(events: &[ChangeEvent], gamma: f64, y: f64, window: f64) -> Vec<Grouping> {
    let removed: Vec<usize> = (0..events.len()).filter(|&i| events[i].status == ChangeStatus::Removed).collect();
    let appeared: Vec<usize> = (0..events.len()).filter(|&i| events[i].status == ChangeStatus::Appeared).collect();
    let mut used = vec![false; events.len()];
    let mut groups = Vec::new();

    let earliest = |r: usize, a: usize| events[r].timestamp.min(events[a].timestamp);
    let pairs = |score: &dyn Fn(usize, usize) -> Option<f64>| {
        let mut v: Vec<(f64, f64, usize, usize)> = Vec::new();
        for &r in &removed {
            for &a in &appeared {
                if (events[r].timestamp - events[a].timestamp).abs() > window {
                    continue;
                }
                if let Some(s) = score(r, a) {
                    v.push((s, earliest(r, a), r, a));
                }
            }
        }
        v.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(x.1.total_cmp(&y.1))
                .then(x.2.cmp(&y.2))
                .then(x.3.cmp(&y.3))
        });
        v
    };

    let overlap = |r: usize, a: usize| {
        let iou = iou_3d(&events[r].bbox, &events[a].bbox);
        (iou > gamma).then_some(iou)
    };
    for (_, _, r, a) in pairs(&overlap) {
        if !used[r] && !used[a] {
            used[r] = true;
            used[a] = true;
            groups.push(Grouping {
                status: ChangeStatus::Replaced,
                members: vec![r, a],
            });
        }
    }
    let alike = |r: usize, a: usize| {
        if iou_3d(&events[r].bbox, &events[a].bbox) > gamma {
            return None;
        }
        let s = similarity(&events[r].embedding, &events[a].embedding);
        (s > y).then_some(s)
    };
    for (_, _, r, a) in pairs(&alike) {
        if !used[r] && !used[a] {
            used[r] = true;
            used[a] = true;
            groups.push(Grouping {
                status: ChangeStatus::Relocated,
                members: vec![r, a],
            });
        }
    }
    for (i, _) in events.iter().enumerate() {
        if !used[i] {
            groups.push(Grouping {
                status: events[i].status,
                members: vec![i],
            });
        }
    }
    groups.sort_by(|a, b| {
        let t = |g: &Grouping| g.members.iter().map(|&i| events[i].timestamp).fold(f64::INFINITY, f64::min);
        t(a).total_cmp(&t(b)).then(a.members[0].cmp(&b.members[0]))
    });
    groups
}

/// "3 days", "1 hour", "45 seconds".
pub fn elapsed_phrase(seconds: f64) -> String {
    let s = seconds.max(0.0);
    let (n, unit) = if s >= 86_400.0 {
        ((s / 86_400.0).floor(), "day")
    } else if s >= 3_600.0 {
        ((s / 3_600.0).floor(), "hour")
    } else if s >= 60.0 {
        ((s / 60.0).floor(), "minute")
    } else {
        (s.round().max(1.0), "second")
    };
    let n = n as u64;
    if n == 1 {
        format!("1 {unit}")
    } else {
        format!("{n} {unit}s")
    }
}

fn phrase(e: &ChangeEvent) -> SpatialPhrase {
    SpatialPhrase {
        clock: e.clock,
        distance_feet: e.distance_feet,
    }
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Words after "from" in a "changed from X to Y" description, if present.
fn before_state(description: &str) -> Option<&str> {
    let lower = description.to_lowercase();
    let from = lower.find("from ")? + 5;
    let to = lower[from..].find(" to ")? + from;
    Some(description[from..to].trim())
}

pub fn event_text(e: &ChangeEvent) -> String {
    let label = capitalized(&e.label);
    let at = phrase(e).text();
    let ago = elapsed_phrase(e.timestamp - e.reference_time);
    match e.status {
        ChangeStatus::Appeared => format!("{label} appeared at your {at}; it was not here {ago} ago"),
        ChangeStatus::Removed => format!("{label} is gone from your {at}; it was here {ago} ago"),
        ChangeStatus::ContentChanged => match before_state(&e.description) {
            Some(prior) => format!("{label} at your {at} has changed: {}; it was {prior} {ago} ago", e.description),
            None => format!("{label} at your {at} has changed: {}; it looked different {ago} ago", e.description),
        },
        ChangeStatus::Replaced | ChangeStatus::Relocated => format!("{label} {} at your {at}", e.status.as_str()),
    }
}

fn pair_text(status: ChangeStatus, removed: &ChangeEvent, appeared: &ChangeEvent) -> String {
    let ago = elapsed_phrase(appeared.timestamp - removed.reference_time);
    match status {
        ChangeStatus::Replaced => format!(
            "{} at your {} was replaced by a {}; it was a {} {ago} ago",
            capitalized(&removed.label),
            phrase(appeared).text(),
            appeared.label,
            removed.label
        ),
        _ => format!(
            "{} moved from your {} to your {}; it was at the old spot {ago} ago",
            capitalized(&removed.label),
            phrase(removed).text(),
            phrase(appeared).text()
        ),
    }
}

fn prediction(e: &ChangeEvent, status: ChangeStatus, label: &str, prior: Option<[f64; 3]>, text: &str) -> PredictionRow {
    PredictionRow {
        visit_index: e.visit_index,
        frame_index: e.frame_index,
        timestamp: e.timestamp,
        object_label: label.to_owned(),
        change_type: status,
        world_center: e.center(),
        prior_center: prior,
        clock: e.clock,
        distance_feet: e.distance_feet,
        observer_pose: e.observer_pose,
        description: text.to_owned(),
    }
}

/// Turns a flushed batch into change narrations, appending a replaced or
/// relocated snapshot to `otm` for every merged pair.
pub fn narrate_batch(events: &[ChangeEvent], otm: &mut ObjectMemory, gamma: f64, y: f64, window: f64, now: f64) -> Vec<NarrationItem> {
    let mut items = Vec::new();
    for g in aggregate(events, gamma, y, window) {
        let item = match g.members[..] {
            [r, a] => {
                let (removed, appeared) = (&events[r], &events[a]);
                let text = pair_text(g.status, removed, appeared);
                let (label, owner) = match g.status {
                    ChangeStatus::Replaced => (appeared.label.as_str(), appeared.object_id),
                    _ => (removed.label.as_str(), removed.object_id),
                };
                if let Some(obj) = otm.get(owner) {
                    let after = obj.latest().timestamp;
                    let snapshot = ChangeSnapshot {
                        status: g.status,
                        description: text.clone(),
                        embedding: appeared.embedding.clone(),
                        bbox: appeared.bbox,
                        timestamp: now.max(appeared.timestamp).max(after + 1e-3),
                        visit_id: appeared.visit_id.clone(),
                        source_frame: appeared.current_frame.clone(),
                        reference_frame: removed.reference_frame.clone(),
                    };
                    if let Err(e) = otm.record(label, snapshot, Some(owner)) {
                        log::warn!("could not record merged {}: {e}", g.status.as_str());
                    }
                }
                NarrationItem {
                    kind: ItemKind::Change,
                    created_at: appeared.timestamp.max(removed.timestamp),
                    spatial: Some(phrase(appeared)),
                    prediction: Some(prediction(appeared, g.status, label, Some(removed.center()), &text)),
                    text,
                }
            }
            [i] => {
                let e = &events[i];
                let text = event_text(e);
                NarrationItem {
                    kind: ItemKind::Change,
                    created_at: e.timestamp,
                    spatial: Some(phrase(e)),
                    prediction: Some(prediction(e, e.status, &e.label, None, &text)),
                    text,
                }
            }
            _ => unreachable!("groups have one or two members"),
        };
        items.push(item);
    }
    items
}

/// Seconds needed to speak `text` at a conversational pace.
pub fn speech_seconds(text: &str) -> f64 {
    text.split_whitespace().count() as f64 / 2.5
}
