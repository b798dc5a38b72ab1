//! Detector that reads the scene script instead of pixels.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::detector::{ChangeDetector, ChangeKind, Confidence, DetectedChange, FrameView, MAX_CHANGES};
use crate::error::{Error, Result};
use crate::geometry::{Bbox2D, Bbox3D, DepthFrame};

use super::raycast::{footprint, fully_in_view};
use super::{ObjectInstance, SceneScript, MIN_UNOCCLUDED, MIN_VISIBLE_PIXELS};

/// Reports exactly the scripted differences between the two frames' visits
/// that are observable in both views, most visible first.
pub struct OracleDetector {
    script: Arc<SceneScript>,
    states: Vec<BTreeMap<String, ObjectInstance>>,
    /// Extra offset subtracted from frame visit indices (bench replays).
    visit_period: Option<u32>,
}

struct Candidate {
    change: DetectedChange,
    salience: usize,
    key: String,
}

impl OracleDetector {
    pub fn new(script: Arc<SceneScript>) -> Result<Self> {
        let states = script
            .visits
            .iter()
            .map(|v| script.state(v.visit_index))
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleDetector {
            script,
            states,
            visit_period: None,
        })
    }

    /// Treat visit index `i` as script visit `i % period`.
    pub fn with_visit_period(mut self, period: u32) -> Self {
        self.visit_period = Some(period);
        self
    }

    pub fn script(&self) -> &SceneScript {
        &self.script
    }

    fn state(&self, visit_index: u32) -> Result<&BTreeMap<String, ObjectInstance>> {
        let i = self.visit_period.map_or(visit_index, |p| visit_index % p);
        let pos = self
            .script
            .visits
            .iter()
            .position(|v| v.visit_index == i)
            .ok_or_else(|| {
                Error::usage(format!(
                    "frame from visit {visit_index} has no script provenance in {}",
                    self.script.location_id
                ))
            })?;
        Ok(&self.states[pos])
    }

    /// Tight box of `target` in `frame` when it is observable, with its pixel count.
    fn observe(&self, target: &Bbox3D, occluders: &[&ObjectInstance], frame: &DepthFrame) -> Option<(Bbox2D, usize)> {
        let k = &frame.intrinsics;
        if !fully_in_view(target, &frame.pose, k) {
            return None;
        }
        let fp = footprint(target, occluders, &frame.pose, k);
        if fp.visible < MIN_VISIBLE_PIXELS || fp.unoccluded_fraction() < MIN_UNOCCLUDED {
            return None;
        }
        let (r0, c0, r1, c1) = fp.bounds?;
        Some((
            Bbox2D::from_pixel_bounds(r0, c0, r1, c1, k.width as usize, k.height as usize),
            fp.visible,
        ))
    }
}

fn others<'a>(state: &'a BTreeMap<String, ObjectInstance>, key: &str) -> Vec<&'a ObjectInstance> {
    state.values().filter(|o| o.key != key).collect()
}

impl ChangeDetector for OracleDetector {
    fn detect(&mut self, reference: &FrameView, current: &FrameView) -> Result<Vec<DetectedChange>> {
        let before = self.state(reference.visit_index)?;
        let after = self.state(current.visit_index)?;
        let unchanged: Vec<&ObjectInstance> = before
            .values()
            .filter(|o| after.get(&o.key) == Some(*o))
            .collect();
        let mut keys: Vec<&String> = before.keys().chain(after.keys()).collect();
        keys.sort();
        keys.dedup();

        let mut found: Vec<Candidate> = Vec::new();
        let gone = |o: &ObjectInstance| -> Option<Candidate> {
            let (bbox, px) = self.observe(&o.bbox, &others(before, &o.key), reference.frame)?;
            self.observe(&o.bbox, &unchanged, current.frame)?;
            Some(Candidate {
                change: DetectedChange {
                    object_name: o.label.clone(),
                    change_type: ChangeKind::Disappear,
                    change_description: format!("the {} is gone", o.label),
                    context_description: String::new(),
                    confidence: Confidence::Med,
                    bbox_t0: Some(bbox),
                    bbox_t1: None,
                },
                salience: px,
                key: o.key.clone(),
            })
        };
        let came = |o: &ObjectInstance| -> Option<Candidate> {
            let (bbox, px) = self.observe(&o.bbox, &others(after, &o.key), current.frame)?;
            self.observe(&o.bbox, &unchanged, reference.frame)?;
            Some(Candidate {
                change: DetectedChange {
                    object_name: o.label.clone(),
                    change_type: ChangeKind::Appear,
                    change_description: format!("a {} appeared", o.label),
                    context_description: String::new(),
                    confidence: Confidence::Med,
                    bbox_t0: None,
                    bbox_t1: Some(bbox),
                },
                salience: px,
                key: o.key.clone(),
            })
        };

        for key in keys {
            match (before.get(key), after.get(key)) {
                (Some(o), None) => found.extend(gone(o)),
                (None, Some(o)) => found.extend(came(o)),
                (Some(a), Some(b)) if a.bbox != b.bbox => {
                    found.extend(gone(a));
                    found.extend(came(b));
                }
                (Some(a), Some(b)) if a.appearance != b.appearance || a.detail != b.detail => {
                    let t0 = self.observe(&a.bbox, &others(before, key), reference.frame);
                    let t1 = self.observe(&b.bbox, &others(after, key), current.frame);
                    if let (Some((b0, _)), Some((b1, px))) = (t0, t1) {
                        found.push(Candidate {
                            change: DetectedChange {
                                object_name: b.label.clone(),
                                change_type: ChangeKind::Change,
                                change_description: format!("changed from {} to {}", a.detail, b.detail),
                                context_description: String::new(),
                                confidence: Confidence::Med,
                                bbox_t0: Some(b0),
                                bbox_t1: Some(b1),
                            },
                            salience: px,
                            key: key.clone(),
                        });
                    }
                }
                _ => {}
            }
        }
        found.sort_by(|a, b| b.salience.cmp(&a.salience).then(a.key.cmp(&b.key)));
        found.truncate(MAX_CHANGES);
        Ok(found.into_iter().map(|c| c.change).collect())
    }
}
