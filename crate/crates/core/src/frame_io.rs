//! On-disk visit logs.
//!
//! A visit directory holds `manifest.json` and one `frame_%06d.bin` record per
//! frame. Records are little-endian:
//!
//! | field          | type            |
//! |----------------|-----------------|
//! | magic          | `b"SSFR"`       |
//! | version        | u32 (= 1)       |
//! | width, height  | u32, u32        |
//! | timestamp      | f64             |
//! | pose           | 16 x f64, row-major camera-to-world |
//! | has_confidence | u8              |
//! | depth          | width*height x f32, row-major meters |
//! | confidence     | width*height x u8, only if has_confidence = 1 |
//!
//! An optional grayscale appearance channel lives beside each record as a
//! binary PGM (`frame_%06d.pgm`).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthFrame, Intrinsics, Pose};

pub const FRAME_MAGIC: &[u8; 4] = b"SSFR";
pub const FRAME_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 16 * 8 + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitManifest {
    pub location_id: String,
    pub visit_id: String,
    pub visit_index: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub start_time: f64,
}

fn default_fps() -> f64 {
    1.0
}

impl VisitManifest {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeStatus {
    Appeared,
    Removed,
    ContentChanged,
    Replaced,
    Relocated,
}

impl ChangeStatus {
    pub const ALL: [ChangeStatus; 5] = [
        ChangeStatus::Appeared,
        ChangeStatus::Removed,
        ChangeStatus::ContentChanged,
        ChangeStatus::Replaced,
        ChangeStatus::Relocated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChangeStatus::Appeared => "appeared",
            ChangeStatus::Removed => "removed",
            ChangeStatus::ContentChanged => "content_changed",
            ChangeStatus::Replaced => "replaced",
            ChangeStatus::Relocated => "relocated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthChange {
    pub visit_index: u32,
    pub object_label: String,
    pub change_type: ChangeStatus,
    pub world_center: [f64; 3],
    pub first_visible_frame: u32,
    pub detail: String,
    /// Where a relocated object used to be.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_center: Option<[f64; 3]>,
}

/// One change prediction as emitted by the narration layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub visit_index: u32,
    pub frame_index: u32,
    pub timestamp: f64,
    pub object_label: String,
    pub change_type: ChangeStatus,
    pub world_center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_center: Option<[f64; 3]>,
    pub clock: u8,
    pub distance_feet: f64,
    pub observer_pose: Pose,
    pub description: String,
}

pub fn frame_file_name(index: u32) -> String {
    format!("frame_{index:06}.bin")
}

fn sidecar_name(index: u32) -> String {
    format!("frame_{index:06}.pgm")
}

pub fn encode_frame(frame: &DepthFrame) -> Vec<u8> {
    let n = frame.depth.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + n * 5);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&frame.intrinsics.width.to_le_bytes());
    buf.extend_from_slice(&frame.intrinsics.height.to_le_bytes());
    buf.extend_from_slice(&frame.timestamp.to_le_bytes());
    for v in frame.pose.to_row_major() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(frame.confidence.is_some() as u8);
    for d in &frame.depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    if let Some(c) = &frame.confidence {
        buf.extend_from_slice(c);
    }
    buf
}

/// Header fields of a frame record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordHeader {
    pub width: u32,
    pub height: u32,
    pub timestamp: f64,
    pub has_confidence: bool,
}

impl RecordHeader {
    /// Total record length implied by the header.
    pub fn record_len(&self) -> usize {
        let n = self.width as usize * self.height as usize;
        HEADER_LEN + n * 4 + if self.has_confidence { n } else { 0 }
    }
}

fn read_array<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    let mut a = [0u8; N];
    a.copy_from_slice(&bytes[at..at + N]);
    a
}

pub fn decode_header(bytes: &[u8], file: &str) -> Result<RecordHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(file, "truncated record header"));
    }
    if &bytes[0..4] != FRAME_MAGIC {
        return Err(Error::format(file, "bad magic"));
    }
    let version = u32::from_le_bytes(read_array(bytes, 4));
    if version != FRAME_VERSION {
        return Err(Error::format(file, format!("unsupported version {version}")));
    }
    let has_confidence = match bytes[HEADER_LEN - 1] {
        0 => false,
        1 => true,
        other => return Err(Error::format(file, format!("bad has_confidence flag {other}"))),
    };
    Ok(RecordHeader {
        width: u32::from_le_bytes(read_array(bytes, 8)),
        height: u32::from_le_bytes(read_array(bytes, 12)),
        timestamp: f64::from_le_bytes(read_array(bytes, 16)),
        has_confidence,
    })
}

/// Decodes one record; `intrinsics` supply the camera model the record omits.
pub fn decode_frame(bytes: &[u8], intrinsics: &Intrinsics, frame_index: u32, file: &str) -> Result<DepthFrame> {
    let header = decode_header(bytes, file)?;
    if header.width != intrinsics.width || header.height != intrinsics.height {
        return Err(Error::format(
            file,
            format!(
                "record is {}x{}, manifest says {}x{}",
                header.width, header.height, intrinsics.width, intrinsics.height
            ),
        ));
    }
    if bytes.len() != header.record_len() {
        return Err(Error::format(
            file,
            format!("record length {} does not match header ({})", bytes.len(), header.record_len()),
        ));
    }
    let mut pose = [0.0; 16];
    for (i, v) in pose.iter_mut().enumerate() {
        *v = f64::from_le_bytes(read_array(bytes, 24 + i * 8));
    }
    let pose = Pose::from_row_major(&pose).map_err(|e| Error::format(file, e.to_string()))?;
    let n = intrinsics.pixel_count();
    let depth = bytes[HEADER_LEN..HEADER_LEN + n * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let confidence = header
        .has_confidence
        .then(|| bytes[HEADER_LEN + n * 4..].to_vec());
    Ok(DepthFrame {
        depth,
        confidence,
        intensity: None,
        timestamp: header.timestamp,
        pose,
        intrinsics: *intrinsics,
        frame_index,
    })
}

fn encode_pgm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn decode_pgm(bytes: &[u8], width: u32, height: u32, file: &str) -> Result<Vec<u8>> {
    let header = format!("P5\n{width} {height}\n255\n");
    let n = width as usize * height as usize;
    if !bytes.starts_with(header.as_bytes()) || bytes.len() != header.len() + n {
        return Err(Error::format(file, "malformed intensity sidecar"));
    }
    Ok(bytes[header.len()..].to_vec())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_manifest(manifest: &VisitManifest, dir: &Path) -> Result<()> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(manifest)?;
    write_file(&path, &json)
}

pub fn write_visit(manifest: &VisitManifest, frames: &[DepthFrame], destination: &Path) -> Result<()> {
    let k = manifest.intrinsics().map_err(|e| Error::format("manifest.json", e.to_string()))?;
    for (i, f) in frames.iter().enumerate() {
        if f.intrinsics.width != k.width || f.intrinsics.height != k.height || f.depth.len() != k.pixel_count() {
            return Err(Error::format(
                frame_file_name(f.frame_index),
                format!("frame {i} dimensions do not match manifest {}x{}", k.width, k.height),
            ));
        }
        if i > 0 && f.timestamp < frames[i - 1].timestamp {
            return Err(Error::format(frame_file_name(f.frame_index), "frames are not sorted by timestamp"));
        }
    }
    fs::create_dir_all(destination).map_err(|e| Error::io(destination, e))?;
    write_manifest(manifest, destination)?;
    for f in frames {
        write_file(&destination.join(frame_file_name(f.frame_index)), &encode_frame(f))?;
        if let Some(i) = &f.intensity {
            write_file(&destination.join(sidecar_name(f.frame_index)), &encode_pgm(k.width, k.height, i))?;
        }
    }
    Ok(())
}

/// Lazily decodes the frames of one visit in index order.
pub struct FrameReader {
    dir: PathBuf,
    intrinsics: Intrinsics,
    indices: std::vec::IntoIter<u32>,
}

impl FrameReader {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.len() == 0
    }
}

impl Iterator for FrameReader {
    type Item = Result<DepthFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let index = self.indices.next()?;
        Some(read_frame(&self.dir, &self.intrinsics, index))
    }
}

pub fn read_frame(dir: &Path, intrinsics: &Intrinsics, index: u32) -> Result<DepthFrame> {
    let name = frame_file_name(index);
    let path = dir.join(&name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let label = format!("{name} (frame {index})");
    let mut frame = decode_frame(&bytes, intrinsics, index, &label)?;
    let side = dir.join(sidecar_name(index));
    if side.exists() {
        let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
        frame.intensity = Some(decode_pgm(&raw, intrinsics.width, intrinsics.height, &sidecar_name(index))?);
    }
    Ok(frame)
}

pub fn read_manifest(dir: &Path) -> Result<VisitManifest> {
    let path = dir.join("manifest.json");
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

pub fn read_visit(source: &Path) -> Result<(VisitManifest, FrameReader)> {
    let manifest = read_manifest(source)?;
    let intrinsics = manifest
        .intrinsics()
        .map_err(|e| Error::format("manifest.json", e.to_string()))?;
    let mut indices = Vec::new();
    for entry in fs::read_dir(source).map_err(|e| Error::io(source, e))? {
        let entry = entry.map_err(|e| Error::io(source, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".bin")) {
            if let Ok(i) = num.parse::<u32>() {
                indices.push(i);
            }
        }
    }
    indices.sort_unstable();
    Ok((
        manifest,
        FrameReader {
            dir: source.to_path_buf(),
            intrinsics,
            indices: indices.into_iter(),
        },
    ))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn append_jsonl<T: Serialize>(writer: &mut impl Write, row: &T) -> Result<()> {
    serde_json::to_writer(&mut *writer, row)?;
    writer.write_all(b"\n").map_err(|e| Error::io("<jsonl stream>", e))
}

/// Reads JSON Lines, naming the 1-based line number of any malformed row.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}
