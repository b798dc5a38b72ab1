//! Structured questions over scene and object memory.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::esm::{EpisodicMemory, RecordId};
use crate::frame_io::ChangeStatus;
use crate::geometry::{spatial_phrase, Pose, SpatialPhrase};
use crate::narration::{elapsed_phrase, ItemKind, NarrationItem};
use crate::otm::{ObjectId, ObjectMemory};

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Scene,
    Changes { since: Option<f64>, limit: usize },
    Where(String),
    Quit,
}

pub const DEFAULT_CHANGE_LIMIT: usize = 5;

pub const GRAMMAR: &str = "scene | changes [--since <seconds|Nm|Nh|Nd>] [--limit <k>] | where <label> | quit";

/// "90", "15m", "2h", "3d" in seconds.
pub fn parse_duration(text: &str) -> Result<f64> {
    let bad = || Error::usage(format!("bad duration {text:?}"));
    let (digits, scale) = match text.chars().last() {
        Some('s') => (&text[..text.len() - 1], 1.0),
        Some('m') => (&text[..text.len() - 1], 60.0),
        Some('h') => (&text[..text.len() - 1], 3_600.0),
        Some('d') => (&text[..text.len() - 1], 86_400.0),
        _ => (text, 1.0),
    };
    let v: f64 = digits.parse().map_err(|_| bad())?;
    if !v.is_finite() || v < 0.0 {
        return Err(bad());
    }
    Ok(v * scale)
}

pub fn parse_query(line: &str) -> Result<Query> {
    let usage = || Error::usage(format!("expected {GRAMMAR}"));
    let mut words = line.split_whitespace();
    let query = match words.next() {
        Some("scene") => Query::Scene,
        Some("quit") | Some("exit") => Query::Quit,
        Some("where") => {
            let label = words.by_ref().collect::<Vec<_>>().join(" ");
            if label.is_empty() {
                return Err(usage());
            }
            return Ok(Query::Where(label));
        }
        Some("changes") => {
            let (mut since, mut limit) = (None, DEFAULT_CHANGE_LIMIT);
            while let Some(flag) = words.next() {
                let value = words.next().ok_or_else(usage)?;
                match flag {
                    "--since" => since = Some(parse_duration(value)?),
                    "--limit" => {
                        limit = value.parse().ok().filter(|&k: &usize| k > 0).ok_or_else(usage)?;
                    }
                    _ => return Err(usage()),
                }
            }
            Query::Changes { since, limit }
        }
        _ => return Err(usage()),
    };
    if words.next().is_some() {
        return Err(usage());
    }
    Ok(query)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameSummary {
    pub record_id: RecordId,
    pub visit_id: String,
    pub frame_index: u32,
    pub timestamp: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeSummary {
    pub object_id: ObjectId,
    pub label: String,
    pub status: ChangeStatus,
    pub description: String,
    pub timestamp: f64,
    pub spatial: SpatialPhrase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Located {
    pub object_id: ObjectId,
    pub label: String,
    pub status: ChangeStatus,
    pub spatial: SpatialPhrase,
}

/// Read-only tool set over one location's memories.
pub struct Tools<'a> {
    pub esm: &'a EpisodicMemory,
    pub otm: &'a ObjectMemory,
    pub pose: Option<Pose>,
}

impl Tools<'_> {
    fn observer(&self) -> Result<&Pose> {
        self.pose
            .as_ref()
            .ok_or_else(|| Error::usage("no current observer pose"))
    }

    pub fn esm_retrieval(&self, n: usize) -> Vec<FrameSummary> {
        self.esm
            .recent_frames(n)
            .into_iter()
            .map(|r| FrameSummary {
                record_id: r.record_id,
                visit_id: r.visit_id.clone(),
                frame_index: r.frame.frame_index,
                timestamp: r.ingest_time,
                position: (*r.frame.pose.translation()).into(),
            })
            .collect()
    }

    /// `since` is an absolute lower bound on snapshot time.
    pub fn otm_retrieval(&self, limit: usize, since: Option<f64>) -> Result<Vec<ChangeSummary>> {
        let pose = self.observer()?;
        Ok(self
            .otm
            .recent_changes(limit, since)
            .into_iter()
            .map(|v| ChangeSummary {
                object_id: v.object_id,
                label: v.label.to_owned(),
                status: v.snapshot.status,
                description: v.snapshot.description.clone(),
                timestamp: v.snapshot.timestamp,
                spatial: spatial_phrase(&v.snapshot.bbox.center_vec(), pose),
            })
            .collect())
    }

    pub fn spatial(&self, label: &str) -> Result<Vec<Located>> {
        let pose = self.observer()?;
        let needle = label.to_lowercase();
        Ok(self
            .otm
            .objects()
            .iter()
            .filter(|o| o.label.to_lowercase().contains(&needle))
            .map(|o| {
                let s = o.latest();
                Located {
                    object_id: o.object_id,
                    label: o.label.clone(),
                    status: s.status,
                    spatial: spatial_phrase(&s.bbox.center_vec(), pose),
                }
            })
            .collect())
    }
}

/// Answers `query` as a Q&A narration item created at `now`.
pub fn answer(query: &Query, tools: &Tools, qa_n: usize, now: f64) -> Result<NarrationItem> {
    let text = match query {
        Query::Quit => return Err(Error::usage("quit is handled by the caller")),
        Query::Scene => match tools.esm_retrieval(qa_n).first() {
            None => "No frames yet".to_owned(),
            Some(f) => format!(
                "Latest frame {} of {} seen {} ago",
                f.frame_index,
                f.visit_id,
                elapsed_phrase(now - f.timestamp)
            ),
        },
        Query::Changes { since, limit } => {
            let rows = tools.otm_retrieval(*limit, since.map(|s| now - s))?;
            if rows.is_empty() {
                "No changes recorded".to_owned()
            } else {
                rows.iter()
                    .map(|c| {
                        format!(
                            "{} {} at your {}, {} ago",
                            c.label,
                            c.status.as_str(),
                            c.spatial.text(),
                            elapsed_phrase(now - c.timestamp)
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(". ")
            }
        }
        Query::Where(label) => {
            let found = tools.spatial(label)?;
            if found.is_empty() {
                let frames = tools.esm_retrieval(qa_n);
                format!(
                    "No tracked object matches \"{label}\"; {} recent frames are available for context",
                    frames.len()
                )
            } else {
                found
                    .iter()
                    .map(|l| format!("The {} ({}) is at your {}", l.label, l.status.as_str(), l.spatial.text()))
                    .collect::<Vec<_>>()
                    .join(". ")
            }
        }
    };
    Ok(NarrationItem::new(ItemKind::Qa, text, now))
}
