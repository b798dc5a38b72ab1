//! Episodic scene memory: recent frames of one location, indexed by camera
//! pose and bounded by a context window. Records that fall out of the window
//! are compressed into archive blocks and dropped from the index.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embeddings::{Embedding, Region, VisualEmbedder};
use crate::error::{Error, Result};
use crate::frame_io::{self, VisitManifest};
use crate::geometry::{DepthFrame, Pose};

pub type RecordId = u64;

/// Frames wider or taller than this are stride-subsampled on ingest.
pub const MAX_INGEST_WIDTH: u32 = 256;
pub const MAX_INGEST_HEIGHT: u32 = 192;

#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub record_id: RecordId,
    pub visit_id: String,
    pub visit_index: u32,
    pub frame: Arc<DepthFrame>,
    pub embedding: Embedding,
    pub announced: bool,
    /// Absolute seconds (visit start plus frame timestamp).
    pub ingest_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ContextWindow {
    LastKVisits { k: usize },
    Duration { span: f64 },
}

impl Default for ContextWindow {
    fn default() -> Self {
        ContextWindow::LastKVisits { k: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitInfo {
    pub visit_id: String,
    pub visit_index: u32,
    pub start_time: f64,
    pub closed: bool,
    pub frames_ingested: usize,
}

#[derive(Debug)]
struct OpenVisit {
    visit_id: String,
    buckets: BTreeSet<i64>,
}

pub struct EpisodicMemory {
    location_id: String,
    window: ContextWindow,
    fps: f64,
    cell: f64,
    records: BTreeMap<RecordId, SceneRecord>,
    grid: HashMap<[i64; 3], Vec<RecordId>>,
    visits: Vec<VisitInfo>,
    open: Option<OpenVisit>,
    next_id: RecordId,
    archive_dir: Option<PathBuf>,
    archive_blocks: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloseSummary {
    pub evicted: usize,
    pub archive: Option<PathBuf>,
}

impl EpisodicMemory {
    pub fn new(location_id: impl Into<String>, window: ContextWindow, fps: f64, grid_cell: f64) -> Self {
        EpisodicMemory {
            location_id: location_id.into(),
            window,
            fps: if fps > 0.0 { fps } else { 1.0 },
            cell: if grid_cell > 0.0 { grid_cell } else { 1.5 },
            records: BTreeMap::new(),
            grid: HashMap::new(),
            visits: Vec::new(),
            open: None,
            next_id: 0,
            archive_dir: None,
            archive_blocks: 0,
        }
    }

    /// Expired records are written as compressed blocks under `dir`.
    pub fn with_archive(mut self, dir: impl Into<PathBuf>) -> Self {
        self.archive_dir = Some(dir.into());
        self
    }

    pub fn set_archive_dir(&mut self, dir: Option<PathBuf>) {
        self.archive_dir = dir;
    }

    pub fn location_id(&self) -> &str {
        &self.location_id
    }

    pub fn window(&self) -> ContextWindow {
        self.window
    }

    pub fn visits(&self) -> &[VisitInfo] {
        &self.visits
    }

    pub fn open_visit_id(&self) -> Option<&str> {
        self.open.as_ref().map(|o| o.visit_id.as_str())
    }

    pub fn open_visit(&mut self, visit_id: &str, visit_index: u32, start_time: f64) -> Result<()> {
        if let Some(o) = &self.open {
            return Err(Error::usage(format!("visit {} is still open", o.visit_id)));
        }
        if self.visits.iter().any(|v| v.visit_id == visit_id) {
            return Err(Error::usage(format!("visit {visit_id} already exists")));
        }
        self.visits.push(VisitInfo {
            visit_id: visit_id.to_owned(),
            visit_index,
            start_time,
            closed: false,
            frames_ingested: 0,
        });
        self.open = Some(OpenVisit {
            visit_id: visit_id.to_owned(),
            buckets: BTreeSet::new(),
        });
        Ok(())
    }

    fn cell_of(&self, pose: &Pose) -> [i64; 3] {
        let t = pose.translation();
        [t.x, t.y, t.z].map(|v| (v / self.cell).floor() as i64)
    }

    /// Adds a frame of the open visit. Returns `None` when the frame was
    /// dropped by the frame-rate limit (first frame per bucket wins).
    pub fn ingest(
        &mut self,
        location_id: &str,
        frame: &DepthFrame,
        embedder: &dyn VisualEmbedder,
    ) -> Result<Option<RecordId>> {
        if location_id != self.location_id {
            return Err(Error::usage(format!(
                "frame for location {location_id} offered to store {}",
                self.location_id
            )));
        }
        let Some(open) = self.open.as_mut() else {
            return Err(Error::usage("no open visit to ingest into"));
        };
        frame.validate()?;
        let bucket = (frame.timestamp * self.fps).floor() as i64;
        if !open.buckets.insert(bucket) {
            return Ok(None);
        }
        let visit_id = open.visit_id.clone();
        let frame = frame.downsampled_to_fit(MAX_INGEST_WIDTH, MAX_INGEST_HEIGHT);
        let intensity = frame.intensity_view();
        let embedding = embedder.embed_visual(&Region {
            width: frame.width(),
            height: frame.height(),
            intensity: &intensity,
            mask: None,
        })?;
        let info = self
            .visits
            .iter_mut()
            .find(|v| v.visit_id == visit_id)
            .expect("open visit is registered");
        info.frames_ingested += 1;
        let record = SceneRecord {
            record_id: self.next_id,
            visit_id,
            visit_index: info.visit_index,
            ingest_time: info.start_time + frame.timestamp,
            frame: Arc::new(frame),
            embedding,
            announced: false,
        };
        self.next_id += 1;
        let id = record.record_id;
        self.insert(record);
        Ok(Some(id))
    }

    fn insert(&mut self, record: SceneRecord) {
        let cell = self.cell_of(&record.frame.pose);
        self.grid.entry(cell).or_default().push(record.record_id);
        self.records.insert(record.record_id, record);
    }

    fn remove(&mut self, id: RecordId) -> Option<SceneRecord> {
        let record = self.records.remove(&id)?;
        let cell = self.cell_of(&record.frame.pose);
        if let Some(ids) = self.grid.get_mut(&cell) {
            ids.retain(|&r| r != id);
            if ids.is_empty() {
                self.grid.remove(&cell);
            }
        }
        Some(record)
    }

    pub fn get(&self, id: RecordId) -> Option<&SceneRecord> {
        self.records.get(&id)
    }

    /// Records in the window excluding the open visit.
    pub fn queryable(&self) -> impl Iterator<Item = &SceneRecord> {
        let open = self.open_visit_id().map(str::to_owned);
        self.records
            .values()
            .filter(move |r| open.as_deref() != Some(r.visit_id.as_str()))
    }

    pub fn queryable_len(&self) -> usize {
        self.queryable().count()
    }

    /// Records currently held in the index, open visit included.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Prior-visit records within `d_thres` meters and `theta_thres` degrees of `pose`.
    pub fn query_by_pose(&self, pose: &Pose, d_thres: f64, theta_thres: f64) -> Vec<&SceneRecord> {
        let open = self.open_visit_id();
        let reach = (d_thres / self.cell).ceil().max(0.0) as i64;
        let [cx, cy, cz] = self.cell_of(pose);
        let mut ids = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(cell) = self.grid.get(&[cx + dx, cy + dy, cz + dz]) {
                        ids.extend_from_slice(cell);
                    }
                }
            }
        }
        ids.sort_unstable();
        ids.into_iter()
            .filter_map(|id| self.records.get(&id))
            .filter(|r| Some(r.visit_id.as_str()) != open)
            .filter(|r| {
                r.frame.pose.translation_distance(pose) <= d_thres
                    && r.frame.pose.rotation_angle_deg(pose) <= theta_thres
            })
            .collect()
    }

    pub fn set_announced(&mut self, ids: &[RecordId]) {
        for id in ids {
            if let Some(r) = self.records.get_mut(id) {
                r.announced = true;
            }
        }
    }

    /// Up to `n` records, newest first.
    pub fn recent_frames(&self, n: usize) -> Vec<&SceneRecord> {
        let mut all: Vec<&SceneRecord> = self.records.values().collect();
        all.sort_by(|a, b| {
            b.ingest_time
                .total_cmp(&a.ingest_time)
                .then(b.record_id.cmp(&a.record_id))
        });
        all.truncate(n);
        all
    }

    /// Closes the open visit and evicts records outside the context window.
    pub fn close_visit(&mut self, visit_id: &str) -> Result<CloseSummary> {
        match &self.open {
            Some(o) if o.visit_id == visit_id => {}
            _ => return Err(Error::usage(format!("visit {visit_id} is not open"))),
        }
        self.open = None;
        if let Some(v) = self.visits.iter_mut().find(|v| v.visit_id == visit_id) {
            v.closed = true;
        }
        let expired = self.expired_records();
        if expired.is_empty() {
            return Ok(CloseSummary::default());
        }
        let records: Vec<SceneRecord> = expired.into_iter().filter_map(|id| self.remove(id)).collect();
        let archive = match &self.archive_dir {
            Some(dir) => Some(self.write_archive(dir.clone(), &records)?),
            None => None,
        };
        Ok(CloseSummary {
            evicted: records.len(),
            archive,
        })
    }

    fn expired_records(&self) -> Vec<RecordId> {
        match self.window {
            ContextWindow::LastKVisits { k } => {
                let with_records: Vec<&str> = self
                    .visits
                    .iter()
                    .filter(|v| v.closed && self.records.values().any(|r| r.visit_id == v.visit_id))
                    .map(|v| v.visit_id.as_str())
                    .collect();
                let keep: BTreeSet<&str> = with_records.iter().rev().take(k.max(1)).copied().collect();
                self.records
                    .values()
                    .filter(|r| !keep.contains(r.visit_id.as_str()))
                    .map(|r| r.record_id)
                    .collect()
            }
            ContextWindow::Duration { span } => {
                let latest = self
                    .records
                    .values()
                    .map(|r| r.ingest_time)
                    .fold(f64::NEG_INFINITY, f64::max);
                self.records
                    .values()
                    .filter(|r| r.ingest_time < latest - span)
                    .map(|r| r.record_id)
                    .collect()
            }
        }
    }

    fn write_archive(&mut self, dir: PathBuf, records: &[SceneRecord]) -> Result<PathBuf> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut raw = Vec::new();
        let mut index = Vec::new();
        for r in records {
            let bytes = frame_io::encode_frame(&r.frame);
            index.push(ArchiveEntry {
                record_id: r.record_id,
                visit_id: r.visit_id.clone(),
                frame_index: r.frame.frame_index,
                ingest_time: r.ingest_time,
                announced: r.announced,
                offset: raw.len(),
                length: bytes.len(),
            });
            raw.extend_from_slice(&bytes);
        }
        let block = self.archive_blocks;
        self.archive_blocks += 1;
        let path = dir.join(format!("block_{block:06}.zst"));
        let compressed = zstd::encode_all(raw.as_slice(), 3).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, compressed).map_err(|e| Error::io(&path, e))?;
        let idx_path = dir.join(format!("block_{block:06}.json"));
        fs::write(&idx_path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&idx_path, e))?;
        Ok(path)
    }

    pub fn delete_visit(&mut self, visit_id: &str) -> Result<usize> {
        if self.open_visit_id() == Some(visit_id) {
            return Err(Error::usage(format!("visit {visit_id} is open")));
        }
        let pos = self
            .visits
            .iter()
            .position(|v| v.visit_id == visit_id)
            .ok_or_else(|| Error::usage(format!("unknown visit {visit_id}")))?;
        self.visits.remove(pos);
        let ids: Vec<RecordId> = self
            .records
            .values()
            .filter(|r| r.visit_id == visit_id)
            .map(|r| r.record_id)
            .collect();
        for id in &ids {
            self.remove(*id);
        }
        Ok(ids.len())
    }

    pub fn rename_visit(&mut self, old: &str, new: &str) -> Result<()> {
        if self.visits.iter().any(|v| v.visit_id == new) {
            return Err(Error::usage(format!("visit {new} already exists")));
        }
        let info = self
            .visits
            .iter_mut()
            .find(|v| v.visit_id == old)
            .ok_or_else(|| Error::usage(format!("unknown visit {old}")))?;
        info.visit_id = new.to_owned();
        if let Some(o) = self.open.as_mut().filter(|o| o.visit_id == old) {
            o.visit_id = new.to_owned();
        }
        for r in self.records.values_mut().filter(|r| r.visit_id == old) {
            r.visit_id = new.to_owned();
        }
        Ok(())
    }

    /// Writes the live index and frames under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        let live = dir.join("live");
        if live.exists() {
            fs::remove_dir_all(&live).map_err(|e| Error::io(&live, e))?;
        }
        fs::create_dir_all(&live).map_err(|e| Error::io(&live, e))?;
        let mut entries = Vec::new();
        for info in &self.visits {
            let recs: Vec<&SceneRecord> = self.records.values().filter(|r| r.visit_id == info.visit_id).collect();
            let Some(first) = recs.first() else { continue };
            let k = first.frame.intrinsics;
            let manifest = VisitManifest {
                location_id: self.location_id.clone(),
                visit_id: info.visit_id.clone(),
                visit_index: info.visit_index,
                width: k.width,
                height: k.height,
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
                fps: self.fps,
                start_time: info.start_time,
            };
            let frames: Vec<DepthFrame> = recs.iter().map(|r| (*r.frame).clone()).collect();
            frame_io::write_visit(&manifest, &frames, &live.join(&info.visit_id))?;
            for r in recs {
                entries.push(IndexEntry {
                    record_id: r.record_id,
                    visit_id: r.visit_id.clone(),
                    frame_index: r.frame.frame_index,
                    ingest_time: r.ingest_time,
                    announced: r.announced,
                    embedding: r.embedding.as_slice().to_vec(),
                });
            }
        }
        let index = StoreIndex {
            location_id: self.location_id.clone(),
            window: self.window,
            fps: self.fps,
            cell: self.cell,
            next_id: self.next_id,
            archive_blocks: self.archive_blocks,
            visits: self.visits.clone(),
            open_visit: self.open_visit_id().map(str::to_owned),
            records: entries,
        };
        let path = dir.join("index.json");
        fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: StoreIndex =
            serde_json::from_slice(&raw).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let mut esm = EpisodicMemory::new(index.location_id, index.window, index.fps, index.cell);
        esm.next_id = index.next_id;
        esm.archive_blocks = index.archive_blocks;
        esm.visits = index.visits;
        esm.archive_dir = Some(dir.join("archive"));
        let mut manifests: HashMap<String, VisitManifest> = HashMap::new();
        for entry in index.records {
            let vdir = dir.join("live").join(&entry.visit_id);
            if !manifests.contains_key(&entry.visit_id) {
                manifests.insert(entry.visit_id.clone(), frame_io::read_manifest(&vdir)?);
            }
            let manifest = &manifests[&entry.visit_id];
            let k = manifest
                .intrinsics()
                .map_err(|e| Error::format("manifest.json", e.to_string()))?;
            let frame = frame_io::read_frame(&vdir, &k, entry.frame_index)?;
            esm.insert(SceneRecord {
                record_id: entry.record_id,
                visit_id: entry.visit_id,
                visit_index: manifest.visit_index,
                frame: Arc::new(frame),
                embedding: Embedding::from_stored(entry.embedding),
                announced: entry.announced,
                ingest_time: entry.ingest_time,
            });
        }
        if let Some(open) = index.open_visit {
            let buckets = esm
                .records
                .values()
                .filter(|r| r.visit_id == open)
                .map(|r| (r.frame.timestamp * esm.fps).floor() as i64)
                .collect();
            esm.open = Some(OpenVisit { visit_id: open, buckets });
        }
        Ok(esm)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveEntry {
    record_id: RecordId,
    visit_id: String,
    frame_index: u32,
    ingest_time: f64,
    announced: bool,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    record_id: RecordId,
    visit_id: String,
    frame_index: u32,
    ingest_time: f64,
    announced: bool,
    embedding: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreIndex {
    location_id: String,
    window: ContextWindow,
    fps: f64,
    cell: f64,
    next_id: RecordId,
    archive_blocks: usize,
    visits: Vec<VisitInfo>,
    open_visit: Option<String>,
    records: Vec<IndexEntry>,
}
