//! Candidate live scene descriptions.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::detector::{encode_png_base64, FrameView};
use crate::error::{Error, Result};
use crate::geometry::{spatial_phrase, DepthFrame, METERS_TO_FEET};
use crate::synth::raycast::footprint;
use crate::synth::{ObjectInstance, SceneScript, MIN_VISIBLE_PIXELS};

pub trait Describer: Send {
    /// `None` skips this frame.
    fn describe(&mut self, view: &FrameView) -> Result<Option<String>>;
}

/// Sentence from depth statistics alone.
pub fn depth_summary(frame: &DepthFrame) -> String {
    let mut depths: Vec<f64> = (0..frame.height())
        .flat_map(|r| (0..frame.width()).map(move |c| (c, r)))
        .filter_map(|(c, r)| frame.valid_depth(c, r))
        .collect();
    if depths.is_empty() {
        return "Open space with nothing in range".to_owned();
    }
    depths.sort_by(f64::total_cmp);
    let nearest = depths[depths.len() / 20] * METERS_TO_FEET;
    let typical = depths[depths.len() / 2] * METERS_TO_FEET;
    format!(
        "Open space ahead, nearest surface about {:.0} feet away and most surfaces around {:.0} feet",
        nearest, typical
    )
}

/// Names what the scene script says is in view.
pub struct ScriptDescriber {
    script: Arc<SceneScript>,
    states: BTreeMap<u32, Vec<ObjectInstance>>,
    closeup_fraction: f64,
    visit_period: Option<u32>,
}

impl ScriptDescriber {
    pub fn new(script: Arc<SceneScript>, closeup_fraction: f64) -> Result<Self> {
        let states = script
            .visits
            .iter()
            .map(|v| Ok((v.visit_index, script.state_list(v.visit_index)?)))
            .collect::<Result<_>>()?;
        Ok(ScriptDescriber {
            script,
            states,
            closeup_fraction,
            visit_period: None,
        })
    }

    pub fn with_visit_period(mut self, period: u32) -> Self {
        self.visit_period = Some(period);
        self
    }

    pub fn text(&self, view: &FrameView) -> Option<String> {
        let index = self.visit_period.map_or(view.visit_index, |p| view.visit_index % p);
        let objects = self.states.get(&index)?;
        let frame = view.frame;
        let k = &frame.intrinsics;
        let mut seen: Vec<(usize, &ObjectInstance)> = objects
            .iter()
            .filter_map(|o| {
                let occluders: Vec<&ObjectInstance> = objects.iter().filter(|x| x.key != o.key).collect();
                let fp = footprint(&o.bbox, &occluders, &frame.pose, k);
                (fp.visible >= MIN_VISIBLE_PIXELS).then_some((fp.visible, o))
            })
            .collect();
        if seen.is_empty() {
            return Some(depth_summary(frame));
        }
        seen.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.key.cmp(&b.1.key)));
        let valid = frame.valid_pixel_count().max(1);
        let (px, top) = seen[0];
        if px as f64 / valid as f64 > self.closeup_fraction {
            let detail = if top.detail.is_empty() { "plain" } else { top.detail.as_str() };
            return Some(format!("You are right in front of a {}; it looks {detail}", top.label));
        }
        let parts: Vec<String> = seen
            .iter()
            .take(2)
            .map(|(_, o)| {
                let p = spatial_phrase(&o.bbox.center_vec(), &frame.pose);
                format!("a {} at your {} o'clock", o.label, p.clock)
            })
            .collect();
        Some(format!("I see {}", parts.join(" and ")))
    }

    pub fn location_id(&self) -> &str {
        &self.script.location_id
    }
}

impl Describer for ScriptDescriber {
    fn describe(&mut self, view: &FrameView) -> Result<Option<String>> {
        Ok(Some(self.text(view).unwrap_or_else(|| depth_summary(view.frame))))
    }
}

/// Fallback when no script is available.
pub struct DepthDescriber;

impl Describer for DepthDescriber {
    fn describe(&mut self, view: &FrameView) -> Result<Option<String>> {
        Ok(Some(depth_summary(view.frame)))
    }
}

#[derive(Serialize)]
struct DescribeRequest {
    kind: &'static str,
    current_image: String,
}

#[derive(Deserialize)]
struct DescribeResponse {
    description: String,
}

/// External describer service.
pub struct HttpDescriber {
    url: String,
}

impl HttpDescriber {
    pub fn new(url: impl Into<String>) -> Self {
        HttpDescriber { url: url.into() }
    }
}

impl Describer for HttpDescriber {
    fn describe(&mut self, view: &FrameView) -> Result<Option<String>> {
        let request = DescribeRequest {
            kind: "describe",
            current_image: encode_png_base64(view.frame)?,
        };
        let mut response = ureq::post(&self.url)
            .send_json(&request)
            .map_err(|e| Error::Provider(format!("{}: {e}", self.url)))?;
        let body: DescribeResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Provider(format!("{}: {e}", self.url)))?;
        let text = body.description.trim().to_owned();
        Ok((!text.is_empty()).then_some(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bbox3D, Intrinsics, Pose};
    use crate::synth::raycast::render;
    use crate::synth::{Appearance, Backdrop, TimedPose, VisitPlan};
    use nalgebra::Vector3;

    fn script(objects: Vec<ObjectInstance>) -> Arc<SceneScript> {
        let k = Intrinsics::new(96.0, 96.0, 63.5, 47.5, 128, 96).unwrap();
        Arc::new(SceneScript {
            seed: 0,
            location_id: "test".into(),
            backdrop: Backdrop::Ground,
            intrinsics: k,
            objects,
            visits: vec![VisitPlan {
                visit_index: 0,
                start_time: 0.0,
                changes: vec![],
                trajectory: vec![TimedPose {
                    t: 0.0,
                    pose: Pose::from_yaw(Vector3::new(0.0, -1.5, 0.0), 0.0),
                }],
            }],
            depth_noise: 0.0,
        })
    }

    fn cone(center: [f64; 3], size: f64) -> ObjectInstance {
        ObjectInstance {
            key: "cone".into(),
            label: "cone".into(),
            bbox: Bbox3D::from_center_size(center, [size, size, size]).unwrap(),
            appearance: Appearance { sides: 3, top: 4 },
            detail: "orange".into(),
        }
    }

    fn describe(s: &Arc<SceneScript>) -> String {
        let pose = s.visits[0].trajectory[0].pose;
        let frame = render(&s.backdrop, &s.objects, &pose, &s.intrinsics, 0.0, 0);
        let view = FrameView {
            frame: &frame,
            visit_id: "visit_00",
            visit_index: 0,
        };
        ScriptDescriber::new(s.clone(), 0.4).unwrap().describe(&view).unwrap().unwrap()
    }

    #[test]
    fn cone_ahead() {
        let s = script(vec![cone([0.0, -0.3, 5.0], 0.6)]);
        assert_eq!(describe(&s), "I see a cone at your 12 o'clock");
        assert_eq!(describe(&s), describe(&s));
    }

    #[test]
    fn empty_scene_mentions_open_space() {
        let s = script(vec![]);
        assert!(describe(&s).contains("Open space"));
    }

    #[test]
    fn closeup_switches_template() {
        let s = script(vec![cone([0.0, -1.5, 1.2], 1.6)]);
        assert!(describe(&s).starts_with("You are right in front of a cone"));
    }
}
