//! Per-frame change detection: reference lookup, detector call, box
//! filtering, 3D lifting and object-memory update.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::detector::{ChangeDetector, ChangeKind, Confidence, DetectedChange, FrameView};
use crate::embeddings::{Embedding, Region, VisualEmbedder};
use crate::esm::EpisodicMemory;
use crate::frame_io::ChangeStatus;
use crate::geometry::{spatial_phrase, Bbox2D, Bbox3D, DepthFrame, Pose, VisibilityMap};
use crate::otm::{ChangeSnapshot, FrameRef, ObjectId, ObjectMemory};
use crate::retrieval::{mark_announced, select_reference};

pub const MIN_LIFT_POINTS: usize = 10;
pub const LIFT_PERCENTILES: (f64, f64) = (0.05, 0.95);
pub const LIFT_MIN_EXTENT: f64 = 0.02;

/// Chooses which pixels inside a detector box belong to the object.
pub trait Segmenter: Send + Sync {
    /// Pixel `(col, row)` list inside `bbox`.
    fn segment(&self, frame: &DepthFrame, bbox: &Bbox2D) -> Vec<(usize, usize)>;
}

/// Every valid-depth pixel of the box.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoxSegmenter;

impl Segmenter for BoxSegmenter {
    fn segment(&self, frame: &DepthFrame, bbox: &Bbox2D) -> Vec<(usize, usize)> {
        let (rows, cols) = bbox.pixel_ranges(frame.width(), frame.height());
        rows.flat_map(|r| cols.clone().map(move |c| (c, r)))
            .filter(|&(c, r)| frame.valid_depth(c, r).is_some())
            .collect()
    }
}

/// Valid pixels whose depth lies within `band` meters of the box median,
/// which drops background showing through around the object.
#[derive(Debug, Clone, Copy)]
pub struct DepthLayerSegmenter {
    pub band: f64,
}

impl Default for DepthLayerSegmenter {
    fn default() -> Self {
        DepthLayerSegmenter { band: 0.5 }
    }
}

impl Segmenter for DepthLayerSegmenter {
    fn segment(&self, frame: &DepthFrame, bbox: &Bbox2D) -> Vec<(usize, usize)> {
        let pixels = BoxSegmenter.segment(frame, bbox);
        if pixels.is_empty() {
            return pixels;
        }
        let mut depths: Vec<f64> = pixels.iter().filter_map(|&(c, r)| frame.valid_depth(c, r)).collect();
        depths.sort_by(f64::total_cmp);
        let median = depths[depths.len() / 2];
        pixels
            .into_iter()
            .filter(|&(c, r)| frame.valid_depth(c, r).is_some_and(|d| (d - median).abs() <= self.band))
            .collect()
    }
}

/// Fraction of the box's pixels set in `mask` (a `width` x `height` grid).
pub fn box_coverage(bbox: &Bbox2D, mask: &[bool], width: usize, height: usize) -> f64 {
    if width == 0 || height == 0 {
        return 0.0;
    }
    let (rows, cols) = bbox.pixel_ranges(width, height);
    let total = rows.len() * cols.len();
    let hit = rows
        .flat_map(|r| cols.clone().map(move |c| r * width + c))
        .filter(|&i| mask[i])
        .count();
    hit as f64 / total as f64
}

/// Coverage of a current-frame box by the visibility mask.
pub fn mask_coverage(bbox: &Bbox2D, visibility: &VisibilityMap) -> f64 {
    box_coverage(bbox, &visibility.mask, visibility.width, visibility.height)
}

/// Coverage of a reference-frame box by the reverse visibility mask.
pub fn reverse_mask_coverage(bbox: &Bbox2D, visibility: &VisibilityMap) -> f64 {
    box_coverage(bbox, &visibility.reverse_mask, visibility.reverse_width, visibility.reverse_height)
}

pub fn lift_to_3d(bbox: &Bbox2D, frame: &DepthFrame, segmenter: &dyn Segmenter) -> Option<Bbox3D> {
    let points: Vec<Vector3<f64>> = segmenter
        .segment(frame, bbox)
        .into_iter()
        .filter_map(|(c, r)| {
            let d = frame.valid_depth(c, r)?;
            Some(frame.pose.camera_to_world(&(frame.intrinsics.ray(c as f64, r as f64) * d)))
        })
        .collect();
    if points.len() < MIN_LIFT_POINTS {
        return None;
    }
    Bbox3D::from_points_percentile(&points, LIFT_PERCENTILES.0, LIFT_PERCENTILES.1, LIFT_MIN_EXTENT)
}

fn embed_box(frame: &DepthFrame, bbox: &Bbox2D, segmenter: &dyn Segmenter, embedder: &dyn VisualEmbedder) -> crate::Result<Embedding> {
    let (rows, cols) = bbox.pixel_ranges(frame.width(), frame.height());
    let (w, h) = (cols.len(), rows.len());
    let full = frame.intensity_view();
    let mut intensity = Vec::with_capacity(w * h);
    for r in rows.clone() {
        intensity.extend_from_slice(&full[r * frame.width() + cols.start..r * frame.width() + cols.end]);
    }
    let mut mask = vec![false; w * h];
    for (c, r) in segmenter.segment(frame, bbox) {
        mask[(r - rows.start) * w + (c - cols.start)] = true;
    }
    let any = mask.iter().any(|&m| m);
    embedder.embed_visual(&Region {
        width: w,
        height: h,
        intensity: &intensity,
        mask: any.then_some(mask.as_slice()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub visit_id: String,
    pub visit_index: u32,
    pub frame_index: u32,
    /// Seconds on the shared clock (visit start plus frame time).
    pub timestamp: f64,
    pub object_id: ObjectId,
    pub label: String,
    pub status: ChangeStatus,
    pub description: String,
    pub context: String,
    pub confidence: Confidence,
    pub bbox: Bbox3D,
    pub clock: u8,
    pub distance_feet: f64,
    pub observer_pose: Pose,
    pub reference_frame: FrameRef,
    /// Shared-clock time of the reference frame.
    pub reference_time: f64,
    pub current_frame: FrameRef,
    #[serde(skip)]
    pub embedding: Embedding,
}

impl ChangeEvent {
    pub fn center(&self) -> [f64; 3] {
        self.bbox.center()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameTimings {
    pub reference_matching: Duration,
    pub detector_inference: Duration,
    pub post_processing: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct FrameOutcome {
    pub events: Vec<ChangeEvent>,
    pub timings: FrameTimings,
    pub reference: Option<FrameRef>,
    /// Detections dropped by the confidence, size, coverage or lifting filters.
    pub rejected: usize,
    pub error: Option<String>,
}

pub struct ChangePipeline {
    pub config: Config,
    segmenter: Box<dyn Segmenter>,
    embedder: Arc<dyn VisualEmbedder>,
}

impl ChangePipeline {
    pub fn new(config: Config, embedder: Arc<dyn VisualEmbedder>) -> Self {
        ChangePipeline {
            config,
            segmenter: Box::new(DepthLayerSegmenter::default()),
            embedder,
        }
    }

    pub fn with_segmenter(mut self, segmenter: Box<dyn Segmenter>) -> Self {
        self.segmenter = segmenter;
        self
    }

    /// Detector output that passes the confidence, size and coverage checks.
    pub fn filter_detections(&self, detections: Vec<DetectedChange>, visibility: &VisibilityMap) -> (Vec<DetectedChange>, usize) {
        let before = detections.len();
        let kept: Vec<DetectedChange> = detections
            .into_iter()
            .filter(|d| d.confidence.value() >= self.config.confidence_min)
            .filter(|d| d.primary_box().area() as f64 >= self.config.area_min)
            .filter(|d| {
                let coverage = match d.change_type {
                    ChangeKind::Disappear => reverse_mask_coverage(&d.primary_box(), visibility),
                    _ => mask_coverage(&d.primary_box(), visibility),
                };
                coverage >= self.config.x_mask
            })
            .collect();
        let rejected = before - kept.len();
        (kept, rejected)
    }

    /// Runs change detection for `current`, which must already be ingested
    /// into `esm` as part of its open visit.
    pub fn process_frame(
        &self,
        current: &FrameView,
        esm: &mut EpisodicMemory,
        otm: &mut ObjectMemory,
        detector: &mut dyn ChangeDetector,
    ) -> FrameOutcome {
        let mut outcome = FrameOutcome::default();
        let started = Instant::now();
        let reference = select_reference(current.frame, esm, &self.config);
        outcome.timings.reference_matching = started.elapsed();
        let Some(reference) = reference else {
            return outcome;
        };
        let record = esm.get(reference.record_id).expect("selected reference is stored");
        let ref_frame = Arc::clone(&record.frame);
        let ref_visit = record.visit_id.clone();
        let reference_time = record.ingest_time;
        let ref_view = FrameView {
            frame: &ref_frame,
            visit_id: &ref_visit,
            visit_index: record.visit_index,
        };
        let reference_ref = FrameRef {
            visit_id: ref_visit.clone(),
            frame_index: ref_frame.frame_index,
        };
        outcome.reference = Some(reference_ref.clone());

        let started = Instant::now();
        let detections = detector.detect(&ref_view, current);
        outcome.timings.detector_inference = started.elapsed();
        let detections = match detections {
            Ok(d) => d,
            Err(e) => {
                log::warn!(
                    "detector failed on {} frame {}: {e}",
                    current.visit_id, current.frame.frame_index
                );
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };

        let started = Instant::now();
        let (mut kept, rejected) = self.filter_detections(detections, &reference.visibility);
        outcome.rejected = rejected;
        // Removals first so a replacement's newcomer cannot claim the old object.
        kept.sort_by_key(|d| match d.change_type {
            ChangeKind::Disappear => 0,
            ChangeKind::Change => 1,
            ChangeKind::Appear => 2,
        });
        let start_time = esm
            .visits()
            .iter()
            .find(|v| v.visit_id == current.visit_id)
            .map_or(0.0, |v| v.start_time);
        let timestamp = start_time + current.frame.timestamp;
        let current_ref = FrameRef {
            visit_id: current.visit_id.to_owned(),
            frame_index: current.frame.frame_index,
        };
        for det in kept {
            let source: &DepthFrame = match det.change_type {
                ChangeKind::Disappear => &ref_frame,
                _ => current.frame,
            };
            let bbox2d = det.primary_box();
            let Some(bbox) = lift_to_3d(&bbox2d, source, self.segmenter.as_ref()) else {
                outcome.rejected += 1;
                continue;
            };
            let embedding = match embed_box(source, &bbox2d, self.segmenter.as_ref(), self.embedder.as_ref()) {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("embedding failed for {}: {e}", det.object_name);
                    outcome.rejected += 1;
                    continue;
                }
            };
            let status = det.change_type.status();
            let association = otm.associate_where(&bbox, &embedding, self.config.gamma, self.config.y_sim, |o| {
                o.latest().timestamp < timestamp
            });
            if let Some(id) = association {
                let latest = otm.get(id).expect("associated object exists").latest();
                if latest.status == status && latest.visit_id == current.visit_id {
                    continue;
                }
            }
            let snapshot = ChangeSnapshot {
                status,
                description: det.change_description.clone(),
                embedding: embedding.clone(),
                bbox,
                timestamp,
                visit_id: current.visit_id.to_owned(),
                source_frame: if det.change_type == ChangeKind::Disappear {
                    reference_ref.clone()
                } else {
                    current_ref.clone()
                },
                reference_frame: reference_ref.clone(),
            };
            let object_id = match otm.record(&det.object_name, snapshot, association) {
                Ok(id) => id,
                Err(e) => {
                    log::warn!("could not record {}: {e}", det.object_name);
                    continue;
                }
            };
            let phrase = spatial_phrase(&bbox.center_vec(), &current.frame.pose);
            outcome.events.push(ChangeEvent {
                visit_id: current.visit_id.to_owned(),
                visit_index: current.visit_index,
                frame_index: current.frame.frame_index,
                timestamp,
                object_id,
                label: det.object_name,
                status,
                description: det.change_description,
                context: det.context_description,
                confidence: det.confidence,
                bbox,
                clock: phrase.clock,
                distance_feet: (phrase.distance_feet * 10.0).round() / 10.0,
                observer_pose: current.frame.pose,
                reference_frame: reference_ref.clone(),
                reference_time,
                current_frame: current_ref.clone(),
                embedding,
            });
        }
        mark_announced(esm, &reference.cluster);
        outcome.timings.post_processing = started.elapsed();
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wall(depth: f32) -> DepthFrame {
        wall_sized(depth, 40, 30)
    }

    fn wall_sized(depth: f32, w: u32, h: u32) -> DepthFrame {
        let k = Intrinsics::new(w as f64, w as f64, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap();
        DepthFrame {
            depth: vec![depth; k.pixel_count()],
            confidence: None,
            intensity: None,
            timestamp: 0.0,
            pose: Pose::identity(),
            intrinsics: k,
            frame_index: 0,
        }
    }

    fn brute_coverage(bbox: &Bbox2D, mask: &[bool], w: usize, h: usize) -> f64 {
        // Pixel centre (c, r) belongs to the box when its normalized
        // footprint [c, c+1) * 1000 / w intersects the box interior.
        let mut total = 0;
        let mut hit = 0;
        for r in 0..h {
            for c in 0..w {
                let inside_r = (r * 1000) < bbox.ymax as usize * h && ((r + 1) * 1000) > bbox.ymin as usize * h;
                let inside_c = (c * 1000) < bbox.xmax as usize * w && ((c + 1) * 1000) > bbox.xmin as usize * w;
                if inside_r && inside_c {
                    total += 1;
                    hit += mask[r * w + c] as usize;
                }
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn coverage_extremes() {
        let b = Bbox2D::new(100, 100, 500, 500).unwrap();
        assert_eq!(box_coverage(&b, &vec![true; 40 * 30], 40, 30), 1.0);
        assert_eq!(box_coverage(&b, &vec![false; 40 * 30], 40, 30), 0.0);
    }

    #[test]
    fn coverage_matches_pixel_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let (w, h) = (rng.gen_range(4..50), rng.gen_range(4..50));
            let mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.5)).collect();
            let y0 = rng.gen_range(0..999);
            let x0 = rng.gen_range(0..999);
            let b = Bbox2D::new(y0, x0, rng.gen_range(y0 + 1..=1000), rng.gen_range(x0 + 1..=1000)).unwrap();
            let got = box_coverage(&b, &mask, w, h);
            assert!((got - brute_coverage(&b, &mask, w, h)).abs() < 1e-12, "{b:?} {w}x{h}");
        }
    }

    #[test]
    fn flat_wall_lifts_to_thin_box() {
        let frame = wall(2.0);
        let b = Bbox2D::new(200, 200, 800, 800).unwrap();
        let bbox = lift_to_3d(&b, &frame, &DepthLayerSegmenter::default()).unwrap();
        assert!(bbox.size()[2] <= 0.05);
        assert!((bbox.center()[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_depth_does_not_lift() {
        let mut frame = wall(2.0);
        frame.depth.iter_mut().for_each(|d| *d = 0.0);
        let b = Bbox2D::new(200, 200, 800, 800).unwrap();
        assert!(lift_to_3d(&b, &frame, &BoxSegmenter).is_none());
    }

    #[test]
    fn percentile_clipping_ignores_outliers() {
        let clean = wall_sized(2.0, 160, 120);
        let mut noisy = clean.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = noisy.depth.len();
        for _ in 0..n / 100 {
            let i = rng.gen_range(0..n);
            noisy.depth[i] = 2.4;
        }
        let b = Bbox2D::new(0, 0, 1000, 1000).unwrap();
        let a = lift_to_3d(&b, &clean, &BoxSegmenter).unwrap();
        let o = lift_to_3d(&b, &noisy, &BoxSegmenter).unwrap();
        for axis in 0..3 {
            assert!((a.min[axis] - o.min[axis]).abs() <= 0.05, "{a:?} {o:?}");
            assert!((a.max[axis] - o.max[axis]).abs() <= 0.05);
        }
    }
}
