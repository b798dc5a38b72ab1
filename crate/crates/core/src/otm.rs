//! Object-centric temporal memory: an append-only log of per-object change
//! snapshots, associated across detections by 3D IoU and visual similarity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{similarity, Embedding};
use crate::error::{Error, Result};
use crate::frame_io::ChangeStatus;
use crate::geometry::{iou_3d, Bbox3D};

pub type ObjectId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub visit_id: String,
    pub frame_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSnapshot {
    pub status: ChangeStatus,
    pub description: String,
    pub embedding: Embedding,
    pub bbox: Bbox3D,
    /// Absolute seconds.
    pub timestamp: f64,
    pub visit_id: String,
    pub source_frame: FrameRef,
    pub reference_frame: FrameRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub object_id: ObjectId,
    pub label: String,
    pub snapshots: Vec<ChangeSnapshot>,
}

impl TrackedObject {
    pub fn latest(&self) -> &ChangeSnapshot {
        self.snapshots.last().expect("tracked objects hold at least one snapshot")
    }
}

/// A snapshot together with the object that owns it.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotView<'a> {
    pub object_id: ObjectId,
    pub label: &'a str,
    pub snapshot: &'a ChangeSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub object_count: usize,
    pub snapshot_count: usize,
    pub serialized_bytes: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ObjectMemory {
    objects: Vec<TrackedObject>,
}

impl ObjectMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn objects(&self) -> &[TrackedObject] {
        &self.objects
    }

    pub fn get(&self, id: ObjectId) -> Option<&TrackedObject> {
        self.objects.get(id as usize)
    }

    /// Best matching object: highest similarity among objects whose latest
    /// box overlaps `bbox` with IoU above `gamma`, provided the similarity
    /// exceeds `y`. Ties go to the lowest id.
    pub fn associate(&self, bbox: &Bbox3D, embedding: &Embedding, gamma: f64, y: f64) -> Option<ObjectId> {
        self.associate_where(bbox, embedding, gamma, y, |_| true)
    }

    /// [`associate`](Self::associate) restricted to objects accepted by `allow`.
    pub fn associate_where(
        &self,
        bbox: &Bbox3D,
        embedding: &Embedding,
        gamma: f64,
        y: f64,
        allow: impl Fn(&TrackedObject) -> bool,
    ) -> Option<ObjectId> {
        let mut best: Option<(ObjectId, f64)> = None;
        for obj in self.objects.iter().filter(|o| allow(o)) {
            let latest = obj.latest();
            if iou_3d(bbox, &latest.bbox) <= gamma {
                continue;
            }
            let sim = similarity(embedding, &latest.embedding);
            if sim <= y {
                continue;
            }
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((obj.object_id, sim));
            }
        }
        best.map(|(id, _)| id)
    }

    /// Appends `snapshot` to `association`, or starts a new object labelled `label`.
    pub fn record(&mut self, label: &str, snapshot: ChangeSnapshot, association: Option<ObjectId>) -> Result<ObjectId> {
        match association {
            Some(id) => {
                let obj = self
                    .objects
                    .get_mut(id as usize)
                    .ok_or_else(|| Error::usage(format!("unknown object {id}")))?;
                let last = obj.latest().timestamp;
                if snapshot.timestamp <= last {
                    return Err(Error::usage(format!(
                        "snapshot at {} is not after object {id}'s latest at {last}",
                        snapshot.timestamp
                    )));
                }
                obj.snapshots.push(snapshot);
                Ok(id)
            }
            None => {
                let id = self.objects.len() as ObjectId;
                self.objects.push(TrackedObject {
                    object_id: id,
                    label: label.to_owned(),
                    snapshots: vec![snapshot],
                });
                Ok(id)
            }
        }
    }

    pub fn snapshot_count(&self) -> usize {
        self.objects.iter().map(|o| o.snapshots.len()).sum()
    }

    /// Snapshots newest first, optionally only those at or after `since`.
    pub fn recent_changes(&self, limit: usize, since: Option<f64>) -> Vec<SnapshotView<'_>> {
        let mut all: Vec<(usize, SnapshotView<'_>)> = self
            .objects
            .iter()
            .flat_map(|o| {
                o.snapshots.iter().enumerate().map(move |(i, s)| {
                    (
                        i,
                        SnapshotView {
                            object_id: o.object_id,
                            label: &o.label,
                            snapshot: s,
                        },
                    )
                })
            })
            .filter(|(_, v)| since.is_none_or(|t| v.snapshot.timestamp >= t))
            .collect();
        all.sort_by(|(ia, a), (ib, b)| {
            b.snapshot
                .timestamp
                .total_cmp(&a.snapshot.timestamp)
                .then(a.object_id.cmp(&b.object_id))
                .then(ib.cmp(ia))
        });
        all.into_iter().take(limit).map(|(_, v)| v).collect()
    }

    /// Returns (snapshots.jsonl, embeddings.bin) contents.
    pub fn serialize(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let dim = self
            .objects
            .iter()
            .flat_map(|o| &o.snapshots)
            .map(|s| s.embedding.dimension())
            .next()
            .unwrap_or(0);
        let mut jsonl = Vec::new();
        let mut bin = Vec::new();
        bin.extend_from_slice(&(dim as u32).to_le_bytes());
        for o in &self.objects {
            for s in &o.snapshots {
                if s.embedding.dimension() != dim {
                    return Err(Error::usage("snapshots carry embeddings of different dimensions"));
                }
                let row = SnapshotRow {
                    object_id: o.object_id,
                    label: o.label.clone(),
                    status: s.status,
                    description: s.description.clone(),
                    bbox: s.bbox,
                    timestamp: s.timestamp,
                    visit_id: s.visit_id.clone(),
                    source_frame: s.source_frame.clone(),
                    reference_frame: s.reference_frame.clone(),
                };
                serde_json::to_writer(&mut jsonl, &row)?;
                jsonl.push(b'\n');
                for v in s.embedding.as_slice() {
                    bin.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok((jsonl, bin))
    }

    pub fn footprint(&self) -> Footprint {
        let (a, b) = self.serialize().unwrap_or_default();
        Footprint {
            object_count: self.objects.len(),
            snapshot_count: self.snapshot_count(),
            serialized_bytes: a.len() + b.len(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (jsonl, bin) = self.serialize()?;
        let p = dir.join("snapshots.jsonl");
        fs::write(&p, jsonl).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("embeddings.bin");
        fs::write(&p, bin).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rows: Vec<SnapshotRow> = crate::frame_io::read_jsonl(&dir.join("snapshots.jsonl"))?;
        let p = dir.join("embeddings.bin");
        let bin = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if bin.len() < 4 {
            return Err(Error::format("embeddings.bin", "missing dimension header"));
        }
        let dim = u32::from_le_bytes([bin[0], bin[1], bin[2], bin[3]]) as usize;
        if bin.len() != 4 + rows.len() * dim * 4 {
            return Err(Error::format(
                "embeddings.bin",
                format!("expected {} vectors of dimension {dim}", rows.len()),
            ));
        }
        let mut memory = ObjectMemory::new();
        for (i, row) in rows.into_iter().enumerate() {
            let start = 4 + i * dim * 4;
            let vector = bin[start..start + dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let snapshot = ChangeSnapshot {
                status: row.status,
                description: row.description,
                embedding: Embedding::from_stored(vector),
                bbox: row.bbox,
                timestamp: row.timestamp,
                visit_id: row.visit_id,
                source_frame: row.source_frame,
                reference_frame: row.reference_frame,
            };
            let id = row.object_id as usize;
            match id.cmp(&memory.objects.len()) {
                std::cmp::Ordering::Less => memory.objects[id].snapshots.push(snapshot),
                std::cmp::Ordering::Equal => memory.objects.push(TrackedObject {
                    object_id: row.object_id,
                    label: row.label,
                    snapshots: vec![snapshot],
                }),
                std::cmp::Ordering::Greater => {
                    return Err(Error::format("snapshots.jsonl", format!("object id {id} out of sequence")))
                }
            }
        }
        Ok(memory)
    }

    pub fn rename_visit(&mut self, old: &str, new: &str) {
        for s in self.objects.iter_mut().flat_map(|o| o.snapshots.iter_mut()) {
            if s.visit_id == old {
                s.visit_id = new.to_owned();
            }
            for f in [&mut s.source_frame, &mut s.reference_frame] {
                if f.visit_id == old {
                    f.visit_id = new.to_owned();
                }
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRow {
    object_id: ObjectId,
    label: String,
    status: ChangeStatus,
    description: String,
    #[serde(rename = "box")]
    bbox: Bbox3D,
    timestamp: f64,
    visit_id: String,
    source_frame: FrameRef,
    reference_frame: FrameRef,
}
