//! Pinhole camera model, rigid poses, depth back-projection, bidirectional
//! visibility overlap, axis-aligned 3D boxes and clock-face phrasing.
//!
//! Conventions: a camera looks along +Z with x to the right and y down.
//! Pixel `(col, row)` has continuous image coordinate `(col, row)` at its
//! centre, so the image domain is `[-0.5, width - 0.5) x [-0.5, height - 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth confidence below this value marks a pixel invalid.
pub const CONFIDENCE_MIN: f64 = 0.5;

/// Upper bound on points back-projected per overlap evaluation.
pub const OVERLAP_POINT_BUDGET: usize = 4096;

pub const METERS_TO_FEET: f64 = 3.28084;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame ray (z = 1) through continuous pixel coordinate (u, v).
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Intrinsics after keeping every `stride`-th pixel in both axes.
    pub fn subsampled(&self, stride: u32) -> Intrinsics {
        let s = stride as f64;
        Intrinsics {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: self.cx / s,
            cy: self.cy / s,
            width: self.width.div_ceil(stride),
            height: self.height.div_ceil(stride),
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Level camera at `position` rotated by `yaw_deg` about the world y axis
    /// (positive yaw turns the view toward +x).
    pub fn from_yaw(position: Vector3<f64>, yaw_deg: f64) -> Self {
        Self::from_yaw_pitch(position, yaw_deg, 0.0)
    }

    /// Camera with heading `yaw_deg` and `pitch_deg` (positive looks down, toward +y).
    pub fn from_yaw_pitch(position: Vector3<f64>, yaw_deg: f64, pitch_deg: f64) -> Self {
        let (sy, cy) = yaw_deg.to_radians().sin_cos();
        let (sp, cp) = pitch_deg.to_radians().sin_cos();
        let yaw = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        // Rotation about camera x: forward tilts toward +y (down).
        let pitch = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, sp, 0.0, -sp, cp);
        Pose {
            rotation: yaw * pitch,
            translation: position,
        }
    }

    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::usage(format!("pose needs 16 values, got {}", m.len())));
        }
        let full = Matrix4::from_row_slice(m);
        let bottom = [full[(3, 0)], full[(3, 1)], full[(3, 2)], full[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::usage("pose last row must be [0,0,0,1]"));
        }
        let rotation = full.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = full.fixed_view::<3, 1>(0, 3).into_owned();
        Pose::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let should_be_identity = self.rotation * self.rotation.transpose();
        let orthonormal = (should_be_identity - Matrix3::identity()).abs().max() <= 1e-9;
        let det = self.rotation.determinant();
        if orthonormal && (det - 1.0).abs() <= 1e-9 && self.translation.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::usage("pose rotation is not a proper orthonormal matrix"))
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Geodesic angle in degrees between two camera orientations.
    pub fn rotation_angle_deg(&self, other: &Pose) -> f64 {
        let rel = self.rotation * other.rotation.transpose();
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl TryFrom<Vec<f64>> for Pose {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Pose::from_row_major(&v)
    }
}

impl From<Pose> for Vec<f64> {
    fn from(p: Pose) -> Vec<f64> {
        p.to_row_major().to_vec()
    }
}

/// One timestamped depth observation.
///
/// `confidence` holds raw bytes (0-255 maps to [0, 1]); `intensity` is an
/// optional grayscale appearance channel used for visual embeddings and
/// detector views.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub depth: Vec<f32>,
    pub confidence: Option<Vec<u8>>,
    pub intensity: Option<Vec<u8>>,
    pub timestamp: f64,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub frame_index: u32,
}

impl DepthFrame {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.intrinsics.pixel_count();
        if self.depth.len() != n {
            return Err(Error::usage(format!(
                "depth grid has {} values, intrinsics expect {n}",
                self.depth.len()
            )));
        }
        for (name, grid) in [("confidence", &self.confidence), ("intensity", &self.intensity)] {
            if let Some(g) = grid {
                if g.len() != n {
                    return Err(Error::usage(format!("{name} grid has {} values, expected {n}", g.len())));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    /// Depth in meters when the pixel is usable, after confidence refinement.
    pub fn valid_depth(&self, col: usize, row: usize) -> Option<f64> {
        let idx = row * self.width() + col;
        let d = self.depth[idx];
        if !(d.is_finite() && d > 0.0) {
            return None;
        }
        if let Some(conf) = &self.confidence {
            if (conf[idx] as f64 / 255.0) < CONFIDENCE_MIN {
                return None;
            }
        }
        Some(d as f64)
    }

    pub fn valid_pixel_count(&self) -> usize {
        (0..self.height())
            .flat_map(|r| (0..self.width()).map(move |c| (c, r)))
            .filter(|&(c, r)| self.valid_depth(c, r).is_some())
            .count()
    }

    /// Grayscale view: the appearance channel if present, otherwise depth
    /// rendered as inverse brightness over 0-10 m (invalid pixels black).
    pub fn intensity_view(&self) -> Vec<u8> {
        if let Some(i) = &self.intensity {
            return i.clone();
        }
        let mut out = vec![0u8; self.depth.len()];
        for r in 0..self.height() {
            for c in 0..self.width() {
                if let Some(d) = self.valid_depth(c, r) {
                    let t = (1.0 - d / 10.0).clamp(0.0, 1.0);
                    out[r * self.width() + c] = (t * 254.0).round() as u8 + 1;
                }
            }
        }
        out
    }

    /// Stride-subsample the frame so it fits within `max_w` x `max_h`.
    pub fn downsampled_to_fit(&self, max_w: u32, max_h: u32) -> DepthFrame {
        let k = &self.intrinsics;
        let mut stride = 1u32;
        while k.width.div_ceil(stride) > max_w || k.height.div_ceil(stride) > max_h {
            stride += 1;
        }
        if stride == 1 {
            return self.clone();
        }
        let nk = k.subsampled(stride);
        let pick = |src: &[u8]| -> Vec<u8> {
            let mut v = Vec::with_capacity(nk.pixel_count());
            for r in (0..k.height as usize).step_by(stride as usize) {
                for c in (0..k.width as usize).step_by(stride as usize) {
                    v.push(src[r * k.width as usize + c]);
                }
            }
            v
        };
        let mut depth = Vec::with_capacity(nk.pixel_count());
        for r in (0..k.height as usize).step_by(stride as usize) {
            for c in (0..k.width as usize).step_by(stride as usize) {
                depth.push(self.depth[r * k.width as usize + c]);
            }
        }
        DepthFrame {
            depth,
            confidence: self.confidence.as_deref().map(pick),
            intensity: self.intensity.as_deref().map(pick),
            timestamp: self.timestamp,
            pose: self.pose,
            intrinsics: nk,
            frame_index: self.frame_index,
        }
    }
}

/// World-frame point with the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcedPoint {
    pub world: Vector3<f64>,
    pub col: usize,
    pub row: usize,
}

pub fn back_project(frame: &DepthFrame) -> Vec<SourcedPoint> {
    back_project_strided(frame, 1)
}

pub fn back_project_strided(frame: &DepthFrame, stride: usize) -> Vec<SourcedPoint> {
    let stride = stride.max(1);
    let k = &frame.intrinsics;
    let mut out = Vec::new();
    for row in (0..frame.height()).step_by(stride) {
        for col in (0..frame.width()).step_by(stride) {
            if let Some(d) = frame.valid_depth(col, row) {
                let cam = k.ray(col as f64, row as f64) * d;
                out.push(SourcedPoint {
                    world: frame.pose.camera_to_world(&cam),
                    col,
                    row,
                });
            }
        }
    }
    out
}

/// Projects a world point; `None` when it is behind the camera or outside the image.
pub fn project(point: &Vector3<f64>, pose: &Pose, intrinsics: &Intrinsics) -> Option<(f64, f64)> {
    let cam = pose.world_to_camera(point);
    if cam.z <= 0.0 {
        return None;
    }
    let u = intrinsics.fx * cam.x / cam.z + intrinsics.cx;
    let v = intrinsics.fy * cam.y / cam.z + intrinsics.cy;
    let in_u = u >= -0.5 && u < intrinsics.width as f64 - 0.5;
    let in_v = v >= -0.5 && v < intrinsics.height as f64 - 0.5;
    (in_u && in_v).then_some((u, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap {
    pub width: usize,
    pub height: usize,
    /// Current-frame pixels hit by reference points.
    pub mask: Vec<bool>,
    pub reverse_width: usize,
    pub reverse_height: usize,
    /// Reference-frame pixels hit by current points.
    pub reverse_mask: Vec<bool>,
    pub o_ref_to_cur: f64,
    pub o_cur_to_ref: f64,
    pub s_overlap: f64,
}

impl VisibilityMap {
    pub fn empty(current: &Intrinsics, reference: &Intrinsics) -> Self {
        VisibilityMap {
            width: current.width as usize,
            height: current.height as usize,
            mask: vec![false; current.pixel_count()],
            reverse_width: reference.width as usize,
            reverse_height: reference.height as usize,
            reverse_mask: vec![false; reference.pixel_count()],
            o_ref_to_cur: 0.0,
            o_cur_to_ref: 0.0,
            s_overlap: 0.0,
        }
    }

    pub fn mask_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn harmonic_overlap(o_rc: f64, o_cr: f64) -> f64 {
    if o_rc + o_cr <= 0.0 {
        0.0
    } else {
        2.0 * o_rc * o_cr / (o_rc + o_cr)
    }
}

fn overlap_stride(k: &Intrinsics) -> usize {
    let ratio = k.pixel_count() as f64 / OVERLAP_POINT_BUDGET as f64;
    ratio.sqrt().ceil().max(1.0) as usize
}

/// Fraction of `from` points landing in `to`'s image, plus the splatted hit mask.
fn directional_coverage(from: &DepthFrame, to: &DepthFrame) -> (f64, Vec<bool>) {
    let w = to.width();
    let h = to.height();
    let mut mask = vec![false; w * h];
    let points = back_project_strided(from, overlap_stride(&from.intrinsics));
    if points.is_empty() {
        return (0.0, mask);
    }
    let mut hits = 0usize;
    for p in &points {
        if let Some((u, v)) = project(&p.world, &to.pose, &to.intrinsics) {
            hits += 1;
            let c = (u.round().max(0.0) as usize).min(w - 1);
            let r = (v.round().max(0.0) as usize).min(h - 1);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    mask[rr * w + cc] = true;
                }
            }
        }
    }
    (hits as f64 / points.len() as f64, mask)
}

/// Bidirectional visibility between a reference and the current frame.
pub fn overlap_score(reference: &DepthFrame, current: &DepthFrame) -> VisibilityMap {
    let (o_rc, mask) = directional_coverage(reference, current);
    let (o_cr, reverse_mask) = directional_coverage(current, reference);
    VisibilityMap {
        width: current.width(),
        height: current.height(),
        mask,
        reverse_width: reference.width(),
        reverse_height: reference.height(),
        reverse_mask,
        o_ref_to_cur: o_rc,
        o_cur_to_ref: o_cr,
        s_overlap: harmonic_overlap(o_rc, o_cr),
    }
}

/// Detector box in normalized `[ymin, xmin, ymax, xmax]` integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct Bbox2D {
    pub ymin: u16,
    pub xmin: u16,
    pub ymax: u16,
    pub xmax: u16,
}

impl Bbox2D {
    pub const SCALE: i64 = 1000;

    pub fn new(ymin: i64, xmin: i64, ymax: i64, xmax: i64) -> Result<Self> {
        let in_range = |v: i64| (0..=Self::SCALE).contains(&v);
        if ![ymin, xmin, ymax, xmax].into_iter().all(in_range) {
            return Err(Error::usage(format!(
                "bbox [{ymin}, {xmin}, {ymax}, {xmax}] has coordinates outside [0, 1000]"
            )));
        }
        if ymin >= ymax || xmin >= xmax {
            return Err(Error::usage(format!(
                "bbox [{ymin}, {xmin}, {ymax}, {xmax}] requires ymin < ymax and xmin < xmax"
            )));
        }
        Ok(Bbox2D {
            ymin: ymin as u16,
            xmin: xmin as u16,
            ymax: ymax as u16,
            xmax: xmax as u16,
        })
    }

    /// Tight normalized box around inclusive pixel bounds.
    pub fn from_pixel_bounds(row_min: usize, col_min: usize, row_max: usize, col_max: usize, width: usize, height: usize) -> Self {
        let s = Self::SCALE as usize;
        let ymin = row_min * s / height;
        let xmin = col_min * s / width;
        let ymax = ((row_max + 1) * s).div_ceil(height).min(s);
        let xmax = ((col_max + 1) * s).div_ceil(width).min(s);
        Bbox2D {
            ymin: ymin as u16,
            xmin: xmin as u16,
            ymax: ymax.max(ymin + 1) as u16,
            xmax: xmax.max(xmin + 1) as u16,
        }
    }

    pub fn area(&self) -> u32 {
        (self.ymax - self.ymin) as u32 * (self.xmax - self.xmin) as u32
    }

    /// Half-open pixel ranges `(rows, cols)` covered by the box at the given resolution.
    pub fn pixel_ranges(&self, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let s = Self::SCALE as usize;
        let r0 = (self.ymin as usize * height / s).min(height.saturating_sub(1));
        let c0 = (self.xmin as usize * width / s).min(width.saturating_sub(1));
        let r1 = (self.ymax as usize * height).div_ceil(s).clamp(r0 + 1, height);
        let c1 = (self.xmax as usize * width).div_ceil(s).clamp(c0 + 1, width);
        (r0..r1, c0..c1)
    }
}

impl TryFrom<[i64; 4]> for Bbox2D {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        Bbox2D::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Bbox2D> for [i64; 4] {
    fn from(b: Bbox2D) -> [i64; 4] {
        [b.ymin as i64, b.xmin as i64, b.ymax as i64, b.xmax as i64]
    }
}

/// World-frame axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox3D {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bbox3D {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).all(|i| min[i] < max[i] && min[i].is_finite() && max[i].is_finite()) {
            Ok(Bbox3D { min, max })
        } else {
            Err(Error::usage(format!("degenerate 3D box {min:?} .. {max:?}")))
        }
    }

    pub fn from_center_size(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        let min = [0, 1, 2].map(|i| center[i] - size[i] / 2.0);
        let max = [0, 1, 2].map(|i| center[i] + size[i] / 2.0);
        Bbox3D::new(min, max)
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| (self.min[i] + self.max[i]) / 2.0)
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        let c = self.center();
        Vector3::new(c[0], c[1], c[2])
    }

    pub fn size(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.max[i] - self.min[i])
    }

    pub fn volume(&self) -> f64 {
        self.size().iter().product()
    }

    pub fn intersection_volume(&self, other: &Bbox3D) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = Vector3::new(
                if i & 1 == 0 { self.min[0] } else { self.max[0] },
                if i & 2 == 0 { self.min[1] } else { self.max[1] },
                if i & 4 == 0 { self.min[2] } else { self.max[2] },
            );
        }
        out
    }

    /// Axis-aligned box over the `lo`-`hi` percentile of points per axis,
    /// padded to at least `min_extent` on every axis.
    pub fn from_points_percentile(points: &[Vector3<f64>], lo: f64, hi: f64, min_extent: f64) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for axis in 0..3 {
            let mut vals: Vec<f64> = points.iter().map(|p| p[axis]).collect();
            vals.sort_by(f64::total_cmp);
            let pick = |q: f64| {
                let idx = (q * (vals.len() - 1) as f64).round() as usize;
                vals[idx.min(vals.len() - 1)]
            };
            let (a, b) = (pick(lo), pick(hi));
            let pad = ((min_extent - (b - a)) / 2.0).max(0.0);
            min[axis] = a - pad;
            max[axis] = b + pad;
        }
        Bbox3D::new(min, max).ok()
    }
}

/// Intersection over union of two axis-aligned boxes.
pub fn iou_3d(a: &Bbox3D, b: &Bbox3D) -> f64 {
    let inter = a.intersection_volume(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Observer-relative direction on a clock face plus range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialPhrase {
    pub clock: u8,
    pub distance_feet: f64,
}

impl SpatialPhrase {
    pub fn text(&self) -> String {
        let feet = self.distance_feet.round() as i64;
        let unit = if feet == 1 { "foot" } else { "feet" };
        format!("{} o'clock, {} {} away", self.clock, feet, unit)
    }
}

pub fn clock_from_bearing_deg(bearing: f64) -> u8 {
    let hour = (bearing / 30.0).round() as i64;
    match hour.rem_euclid(12) {
        0 => 12,
        h => h as u8,
    }
}

pub fn spatial_phrase(point: &Vector3<f64>, observer: &Pose) -> SpatialPhrase {
    let cam = observer.world_to_camera(point);
    let bearing = if cam.x == 0.0 && cam.z == 0.0 {
        0.0
    } else {
        cam.x.atan2(cam.z).to_degrees()
    };
    SpatialPhrase {
        clock: clock_from_bearing_deg(bearing),
        distance_feet: cam.norm() * METERS_TO_FEET,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intrinsics() -> Intrinsics {
        Intrinsics::new(20.0, 20.0, 4.0, 4.0, 8, 8).unwrap()
    }

    fn flat_frame(depth: f32, pose: Pose) -> DepthFrame {
        let k = intrinsics();
        DepthFrame {
            depth: vec![depth; k.pixel_count()],
            confidence: None,
            intensity: None,
            timestamp: 0.0,
            pose,
            intrinsics: k,
            frame_index: 0,
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = nalgebra::Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
        let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        Pose::new(*rot.matrix(), t).unwrap()
    }

    #[test]
    fn principal_ray_back_projects_onto_axis() {
        let mut f = flat_frame(0.0, Pose::identity());
        f.depth[4 * 8 + 4] = 2.0;
        let pts = back_project(&f);
        assert_eq!(pts.len(), 1);
        assert!((pts[0].world - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_and_low_confidence_pixels_are_skipped() {
        let mut f = flat_frame(f32::NAN, Pose::identity());
        assert!(back_project(&f).is_empty());
        f.depth = vec![1.0; 64];
        let mut conf = vec![255u8; 64];
        conf[0] = 127; // 0.498
        conf[1] = 128; // 0.502
        f.confidence = Some(conf);
        let pts = back_project(&f);
        assert_eq!(pts.len(), 63);
        assert!(!pts.iter().any(|p| p.col == 0 && p.row == 0));
    }

    #[test]
    fn back_projection_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let mut f = flat_frame(1.0, pose);
            for d in f.depth.iter_mut() {
                *d = rng.gen_range(0.2..8.0);
            }
            let m = pose.to_row_major();
            for p in back_project(&f) {
                // Scalar oracle: explicit pinhole algebra and row-major matrix product.
                let d = f.depth[p.row * 8 + p.col] as f64;
                let xc = (p.col as f64 - 4.0) / 20.0 * d;
                let yc = (p.row as f64 - 4.0) / 20.0 * d;
                let zc = d;
                for i in 0..3 {
                    let expect = m[4 * i] * xc + m[4 * i + 1] * yc + m[4 * i + 2] * zc + m[4 * i + 3];
                    assert!((p.world[i] - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        let k = intrinsics();
        assert!(project(&Vector3::new(0.0, 0.0, -1.0), &Pose::identity(), &k).is_none());
        assert_eq!(project(&Vector3::new(0.0, 0.0, 3.0), &Pose::identity(), &k), Some((4.0, 4.0)));
    }

    #[test]
    fn project_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Intrinsics::new(50.0, 45.0, 31.5, 23.5, 64, 48).unwrap();
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let p = Vector3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
            // Oracle: full 4x4 inverse and a 3x3 K product.
            let m = Matrix4::from_row_slice(&pose.to_row_major());
            let inv = m.try_inverse().unwrap();
            let cam = inv * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let kmat = Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
            let h = kmat * Vector3::new(cam.x, cam.y, cam.z);
            let expect = if cam.z > 0.0 {
                let (u, v) = (h.x / h.z, h.y / h.z);
                ((-0.5..63.5).contains(&u) && (-0.5..47.5).contains(&v)).then_some((u, v))
            } else {
                None
            };
            match (project(&p, &pose, &k), expect) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
                }
                (a, b) => panic!("classification mismatch {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn overlap_identity_and_disjoint() {
        let f = flat_frame(2.0, Pose::identity());
        let v = overlap_score(&f, &f);
        assert_eq!(v.s_overlap, 1.0);
        let back = Pose::from_yaw(Vector3::zeros(), 180.0);
        let g = flat_frame(2.0, back);
        assert_eq!(overlap_score(&f, &g).s_overlap, 0.0);
    }

    #[test]
    fn overlap_of_empty_frame_is_zero() {
        let f = flat_frame(2.0, Pose::identity());
        let e = flat_frame(0.0, Pose::identity());
        let v = overlap_score(&e, &f);
        assert_eq!(v.s_overlap, 0.0);
        assert_eq!(v.mask_pixels(), 0);
    }

    #[test]
    fn harmonic_mean_closed_form() {
        assert!((harmonic_overlap(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(harmonic_overlap(0.0, 0.0), 0.0);
        assert_eq!(harmonic_overlap(0.0, 0.7), 0.0);
    }

    #[test]
    fn bbox2d_validation() {
        assert!(Bbox2D::new(10, 10, 5, 20).is_err());
        assert!(Bbox2D::new(10, 10, 20, 10).is_err());
        assert!(Bbox2D::new(0, 0, 1001, 10).is_err());
        assert!(Bbox2D::new(-1, 0, 10, 10).is_err());
        let b = Bbox2D::new(0, 0, 1000, 1000).unwrap();
        assert_eq!(b.pixel_ranges(128, 96), (0..96, 0..128));
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, "[0,0,1000,1000]");
        assert!(serde_json::from_str::<Bbox2D>("[5,0,5,10]").is_err());
    }

    #[test]
    fn iou_closed_forms() {
        let a = Bbox3D::new([0.0; 3], [1.0; 3]).unwrap();
        let b = Bbox3D::new([0.5, 0.0, 0.0], [1.5, 1.0, 1.0]).unwrap();
        let far = Bbox3D::new([5.0; 3], [6.0; 3]).unwrap();
        assert_eq!(iou_3d(&a, &a), 1.0);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou_3d(&a, &far), 0.0);
        assert!(Bbox3D::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn clock_phrases() {
        let eye = Pose::identity();
        assert_eq!(spatial_phrase(&Vector3::new(0.0, 0.0, 3.0), &eye).clock, 12);
        assert_eq!(spatial_phrase(&Vector3::new(3.0, 0.0, 0.0), &eye).clock, 3);
        assert_eq!(spatial_phrase(&Vector3::new(-3.0, 0.0, 0.0), &eye).clock, 9);
        assert_eq!(spatial_phrase(&Vector3::new(0.0, 0.0, -3.0), &eye).clock, 6);
        let a = (-30.0f64).to_radians();
        let p = Vector3::new(a.sin(), 0.0, a.cos()) * 1.524;
        let s = spatial_phrase(&p, &eye);
        assert_eq!(s.clock, 11);
        assert!((s.distance_feet - 5.0).abs() < 1e-3);
        assert_eq!(s.text(), "11 o'clock, 5 feet away");
        let origin = spatial_phrase(&Vector3::zeros(), &eye);
        assert_eq!((origin.clock, origin.distance_feet), (12, 0.0));
    }

    #[test]
    fn pose_row_major_round_trip() {
        let p = Pose::from_yaw_pitch(Vector3::new(1.0, -1.4, 2.0), 33.0, 10.0);
        let back = Pose::from_row_major(&p.to_row_major()).unwrap();
        assert_eq!(p, back);
        let mut bad = p.to_row_major();
        bad[0] = 2.0;
        assert!(Pose::from_row_major(&bad).is_err());
        bad = p.to_row_major();
        bad[15] = 2.0;
        assert!(Pose::from_row_major(&bad).is_err());
    }

    #[test]
    fn downsampling_keeps_geometry() {
        let k = Intrinsics::new(300.0, 300.0, 255.0, 191.0, 512, 384).unwrap();
        let f = DepthFrame {
            depth: vec![2.0; k.pixel_count()],
            confidence: None,
            intensity: None,
            timestamp: 0.0,
            pose: Pose::identity(),
            intrinsics: k,
            frame_index: 0,
        };
        let small = f.downsampled_to_fit(256, 192);
        assert_eq!((small.width(), small.height()), (256, 192));
        // Pixel (10, 20) of the small frame is pixel (20, 40) of the original.
        let a = small.intrinsics.ray(10.0, 20.0);
        let b = k.ray(20.0, 40.0);
        assert!((a - b).norm() < 1e-12);
    }
}
