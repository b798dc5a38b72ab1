//! Analytic ray casting against axis-aligned boxes and the static backdrop.

use nalgebra::Vector3;

use crate::geometry::{Bbox3D, DepthFrame, Intrinsics, Pose};

use super::{Appearance, Backdrop, ObjectInstance};

/// Depths beyond this are reported as invalid (sky, far horizon).
pub const MAX_RANGE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Camera-frame depth (distance along the optical axis).
    pub depth: f64,
    pub axis: usize,
    pub point: Vector3<f64>,
}

/// Entry hit of a ray `origin + t * dir` with a box, `t > 0`.
pub fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &Bbox3D) -> Option<Hit> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for i in 0..3 {
        if dir[i].abs() < 1e-12 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let t1 = (b.min[i] - origin[i]) / dir[i];
        let t2 = (b.max[i] - origin[i]) / dir[i];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            axis = i;
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_near <= 1e-9 {
        return None;
    }
    Some(Hit {
        depth: t_near,
        axis,
        point: origin + dir * t_near,
    })
}

fn ray_backdrop(origin: &Vector3<f64>, dir: &Vector3<f64>, backdrop: &Backdrop) -> Option<Hit> {
    match backdrop {
        Backdrop::Room { bounds } => {
            // Exit point of the room box seen from inside.
            let mut best: Option<(f64, usize)> = None;
            for i in 0..3 {
                if dir[i].abs() < 1e-12 {
                    continue;
                }
                let wall = if dir[i] > 0.0 { bounds.max[i] } else { bounds.min[i] };
                let t = (wall - origin[i]) / dir[i];
                if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
            best.map(|(t, axis)| Hit {
                depth: t,
                axis,
                point: origin + dir * t,
            })
        }
        Backdrop::Ground => {
            if dir.y <= 1e-9 {
                return None;
            }
            let t = -origin.y / dir.y;
            (t > 0.0).then(|| Hit {
                depth: t,
                axis: 1,
                point: origin + dir * t,
            })
        }
    }
}

/// Smooth periodic pattern for a surface with the given appearance id.
fn pattern(id: u32, u: f64, v: f64) -> f64 {
    let h = id.wrapping_mul(2654435761);
    let angle = (id % 8) as f64 * std::f64::consts::PI / 8.0;
    let freq = 2.5 + ((h >> 8) % 5) as f64;
    let phase = ((h >> 16) % 628) as f64 / 100.0;
    let s = (std::f64::consts::TAU * freq * (u * angle.cos() + v * angle.sin()) + phase).sin();
    let base = 70.0 + ((h >> 4) % 90) as f64;
    (base + 60.0 * s).clamp(1.0, 255.0)
}

fn face_coords(point: &Vector3<f64>, axis: usize, origin: &[f64; 3]) -> (f64, f64) {
    let p = [point.x - origin[0], point.y - origin[1], point.z - origin[2]];
    match axis {
        0 => (p[2], p[1]),
        1 => (p[0], p[2]),
        _ => (p[0], p[1]),
    }
}

fn object_shade(obj: &ObjectInstance, hit: &Hit) -> u8 {
    let id = match obj.appearance {
        Appearance { top, .. } if hit.axis == 1 => top,
        Appearance { sides, .. } => sides,
    };
    let (u, v) = face_coords(&hit.point, hit.axis, &obj.bbox.min);
    pattern(id, u, v).round() as u8
}

fn backdrop_shade(hit: &Hit) -> u8 {
    let (u, v) = face_coords(&hit.point, hit.axis, &[0.0; 3]);
    let s = (u * 1.7).sin() * (v * 1.3).cos();
    (100.0 + 25.0 * s + 10.0 * hit.axis as f64).round() as u8
}

/// World ray for pixel `(col, row)`; the parameter along it is camera depth.
pub fn pixel_ray(pose: &Pose, k: &Intrinsics, col: usize, row: usize) -> (Vector3<f64>, Vector3<f64>) {
    let dir = pose.rotation() * k.ray(col as f64, row as f64);
    (*pose.translation(), dir)
}

/// Index of the nearest object along the ray, with its hit.
pub fn nearest_object<'a>(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    objects: impl Iterator<Item = (usize, &'a ObjectInstance)>,
) -> Option<(usize, Hit)> {
    let mut best: Option<(usize, Hit)> = None;
    for (i, obj) in objects {
        if let Some(hit) = ray_box(origin, dir, &obj.bbox) {
            if best.is_none_or(|(_, b)| hit.depth < b.depth) {
                best = Some((i, hit));
            }
        }
    }
    best
}

/// Depth and appearance render of a scene state.
pub fn render(
    backdrop: &Backdrop,
    objects: &[ObjectInstance],
    pose: &Pose,
    k: &Intrinsics,
    timestamp: f64,
    frame_index: u32,
) -> DepthFrame {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut depth = vec![0.0f32; w * h];
    let mut intensity = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let (o, d) = pixel_ray(pose, k, col, row);
            let obj = nearest_object(&o, &d, objects.iter().enumerate());
            let back = ray_backdrop(&o, &d, backdrop);
            let (hit, shade) = match (obj, back) {
                (Some((i, oh)), Some(bh)) if oh.depth <= bh.depth => (oh, object_shade(&objects[i], &oh)),
                (Some((i, oh)), None) => (oh, object_shade(&objects[i], &oh)),
                (_, Some(bh)) => (bh, backdrop_shade(&bh)),
                (None, None) => continue,
            };
            if hit.depth > MAX_RANGE {
                continue;
            }
            depth[row * w + col] = hit.depth as f32;
            intensity[row * w + col] = shade.max(1);
        }
    }
    DepthFrame {
        depth,
        confidence: None,
        intensity: Some(intensity),
        timestamp,
        pose: *pose,
        intrinsics: *k,
        frame_index,
    }
}

/// Whether all corners of `b` project inside the image in front of the camera.
pub fn fully_in_view(b: &Bbox3D, pose: &Pose, k: &Intrinsics) -> bool {
    b.corners()
        .iter()
        .all(|c| crate::geometry::project(c, pose, k).is_some())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint2D {
    /// Pixels where the object is the first surface hit.
    pub visible: usize,
    /// Pixels the object would cover with nothing in front of it.
    pub solo: usize,
    /// Inclusive pixel bounds of the visible part: (row_min, col_min, row_max, col_max).
    pub bounds: Option<(usize, usize, usize, usize)>,
}

impl Footprint2D {
    pub fn unoccluded_fraction(&self) -> f64 {
        if self.solo == 0 {
            0.0
        } else {
            self.visible as f64 / self.solo as f64
        }
    }
}

/// Image footprint of `target` with `occluders` in front of it.
pub fn footprint(target: &Bbox3D, occluders: &[&ObjectInstance], pose: &Pose, k: &Intrinsics) -> Footprint2D {
    let (w, h) = (k.width as usize, k.height as usize);
    // Restrict the scan to the projected corner hull when the box is in front.
    let mut range = (0, 0, h, w);
    let projected: Vec<(f64, f64)> = target
        .corners()
        .iter()
        .filter_map(|c| {
            let cam = pose.world_to_camera(c);
            (cam.z > 1e-6).then(|| (k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy))
        })
        .collect();
    if projected.len() == 8 {
        let umin = projected.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let umax = projected.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let vmin = projected.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let vmax = projected.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let clamp_c = |x: f64| (x.max(0.0) as usize).min(w);
        let clamp_r = |x: f64| (x.max(0.0) as usize).min(h);
        range = (
            clamp_r(vmin.floor() - 1.0),
            clamp_c(umin.floor() - 1.0),
            clamp_r(vmax.ceil() + 2.0),
            clamp_c(umax.ceil() + 2.0),
        );
    }
    let mut out = Footprint2D {
        visible: 0,
        solo: 0,
        bounds: None,
    };
    for row in range.0..range.2 {
        for col in range.1..range.3 {
            let (o, d) = pixel_ray(pose, k, col, row);
            let Some(hit) = ray_box(&o, &d, target) else {
                continue;
            };
            out.solo += 1;
            let blocked = occluders
                .iter()
                .any(|obj| ray_box(&o, &d, &obj.bbox).is_some_and(|oh| oh.depth < hit.depth));
            if blocked {
                continue;
            }
            out.visible += 1;
            out.bounds = Some(match out.bounds {
                None => (row, col, row, col),
                Some((r0, c0, r1, c1)) => (r0.min(row), c0.min(col), r1.max(row), c1.max(col)),
            });
        }
    }
    out
}
