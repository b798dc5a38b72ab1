//! Change detector contract: the JSON response schema, its validation, and
//! the HTTP adapter for an external vision-language model.

use std::io::Cursor;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::ChangeStatus;
use crate::geometry::{Bbox2D, DepthFrame};

pub const MAX_CHANGES: usize = 3;
pub const RESPONSE_SCHEMA: &str = "prompt1-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Appear,
    Disappear,
    Change,
}

impl ChangeKind {
    pub fn status(self) -> ChangeStatus {
        match self {
            ChangeKind::Appear => ChangeStatus::Appeared,
            ChangeKind::Disappear => ChangeStatus::Removed,
            ChangeKind::Change => ChangeStatus::ContentChanged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    Med,
    High,
}

impl Confidence {
    pub fn value(self) -> f64 {
        match self {
            Confidence::Low => 0.3,
            Confidence::Med => 0.6,
            Confidence::High => 0.9,
        }
    }
}

/// `[]` on the wire means "no box".
mod optional_box {
    use super::Bbox2D;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<Bbox2D>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(b) => b.serialize(s),
            None => Vec::<i64>::new().serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Bbox2D>, D::Error> {
        let raw = Vec::<i64>::deserialize(d)?;
        match raw.as_slice() {
            [] => Ok(None),
            &[a, b, c, e] => Bbox2D::new(a, b, c, e).map(Some).map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!(
                "bbox must have 4 coordinates, got {}",
                other.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectedChange {
    pub object_name: String,
    pub change_type: ChangeKind,
    pub change_description: String,
    #[serde(default)]
    pub context_description: String,
    pub confidence: Confidence,
    #[serde(with = "optional_box", default)]
    pub bbox_t0: Option<Bbox2D>,
    #[serde(with = "optional_box", default)]
    pub bbox_t1: Option<Bbox2D>,
}

impl DetectedChange {
    /// Box in the frame where the object is judged: current for appear and
    /// change, reference for disappear.
    pub fn primary_box(&self) -> Bbox2D {
        match self.change_type {
            ChangeKind::Disappear => self.bbox_t0.expect("validated disappear has bbox_t0"),
            _ => self.bbox_t1.expect("validated change has bbox_t1"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Detector(format!("{}: {m}", self.object_name)));
        if self.object_name.trim().is_empty() {
            return Err(Error::Detector("change with empty object_name".into()));
        }
        match (self.change_type, self.bbox_t0.is_some(), self.bbox_t1.is_some()) {
            (ChangeKind::Appear, false, true) | (ChangeKind::Disappear, true, false) | (ChangeKind::Change, true, true) => {}
            (ChangeKind::Appear, ..) => return bad("appear needs bbox_t1 only"),
            (ChangeKind::Disappear, ..) => return bad("disappear needs bbox_t0 only"),
            (ChangeKind::Change, ..) => return bad("change needs both boxes"),
        }
        if self.change_type == ChangeKind::Change && !names_before_and_after(&self.change_description) {
            return bad("change_description must state both before and after");
        }
        Ok(())
    }
}

fn names_before_and_after(text: &str) -> bool {
    let t = text.to_lowercase();
    (t.contains("from ") && t.contains(" to ")) || (t.contains("before") && t.contains("after")) || t.contains("->") || t.contains('→')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorResponse {
    pub changes: Vec<DetectedChange>,
}

/// Parses and validates a detector reply. A fenced code block around the
/// JSON is tolerated; anything else that is not the schema is an error.
pub fn parse_response(text: &str) -> Result<Vec<DetectedChange>> {
    let trimmed = strip_fence(text.trim());
    let response: DetectorResponse =
        serde_json::from_str(trimmed).map_err(|e| Error::Detector(format!("malformed detector response: {e}")))?;
    if response.changes.len() > MAX_CHANGES {
        return Err(Error::Detector(format!(
            "detector returned {} changes, at most {MAX_CHANGES} allowed",
            response.changes.len()
        )));
    }
    for c in &response.changes {
        c.validate()?;
    }
    Ok(response.changes)
}

fn strip_fence(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// A frame handed to a detector, with the visit it came from.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub frame: &'a DepthFrame,
    pub visit_id: &'a str,
    pub visit_index: u32,
}

pub trait ChangeDetector: Send {
    fn detect(&mut self, reference: &FrameView, current: &FrameView) -> Result<Vec<DetectedChange>>;
}

/// Never reports anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullDetector;

impl ChangeDetector for NullDetector {
    fn detect(&mut self, _: &FrameView, _: &FrameView) -> Result<Vec<DetectedChange>> {
        Ok(Vec::new())
    }
}

pub fn encode_png_base64(frame: &DepthFrame) -> Result<String> {
    let pixels = frame.intensity_view();
    let mut buf = Vec::new();
    {
        let mut encoder = png::Encoder::new(Cursor::new(&mut buf), frame.width() as u32, frame.height() as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Detector(format!("png encode: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Detector(format!("png encode: {e}")))?;
    }
    Ok(base64::engine::general_purpose::STANDARD.encode(buf))
}

#[derive(Debug, Serialize)]
struct DetectorRequest {
    reference_image: String,
    current_image: String,
    schema: &'static str,
}

pub struct HttpDetector {
    url: String,
}

impl HttpDetector {
    pub fn new(url: impl Into<String>) -> Self {
        HttpDetector { url: url.into() }
    }
}

impl ChangeDetector for HttpDetector {
    fn detect(&mut self, reference: &FrameView, current: &FrameView) -> Result<Vec<DetectedChange>> {
        let request = DetectorRequest {
            reference_image: encode_png_base64(reference.frame)?,
            current_image: encode_png_base64(current.frame)?,
            schema: RESPONSE_SCHEMA,
        };
        let mut response = ureq::post(&self.url)
            .send_json(&request)
            .map_err(|e| Error::Detector(format!("{}: {e}", self.url)))?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Detector(format!("{}: {e}", self.url)))?;
        parse_response(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_valid_payload() {
        let text = r#"{"changes": [
            {"object_name": "mug", "change_type": "appear", "change_description": "a mug appeared",
             "context_description": "", "confidence": "med", "bbox_t0": [], "bbox_t1": [100, 200, 300, 400]},
            {"object_name": "sign", "change_type": "change", "change_description": "from open to closed",
             "context_description": "on the door", "confidence": "high",
             "bbox_t0": [0, 0, 10, 10], "bbox_t1": [0, 0, 20, 20]}
        ]}"#;
        let changes = parse_response(text).unwrap();
        assert_eq!(changes.len(), 2);
        assert_eq!(changes[0].primary_box(), Bbox2D::new(100, 200, 300, 400).unwrap());
        assert_eq!(changes[1].change_type.status(), ChangeStatus::ContentChanged);
        assert!(parse_response("{\"changes\": []}").unwrap().is_empty());
        assert!(parse_response("```json\n{\"changes\": []}\n```").unwrap().is_empty());
    }

    #[test]
    fn round_trips_through_json() {
        let c = DetectedChange {
            object_name: "box".into(),
            change_type: ChangeKind::Disappear,
            change_description: "box removed".into(),
            context_description: String::new(),
            confidence: Confidence::Low,
            bbox_t0: Some(Bbox2D::new(1, 2, 3, 4).unwrap()),
            bbox_t1: None,
        };
        let text = serde_json::to_string(&DetectorResponse { changes: vec![c.clone()] }).unwrap();
        assert!(text.contains("\"bbox_t1\":[]"));
        assert_eq!(parse_response(&text).unwrap(), vec![c]);
    }

    #[test]
    fn png_payload_decodes() {
        let k = crate::geometry::Intrinsics::new(4.0, 4.0, 2.0, 1.5, 4, 3).unwrap();
        let frame = DepthFrame {
            depth: vec![1.0; 12],
            confidence: None,
            intensity: Some((0..12).map(|v| v * 20).collect()),
            timestamp: 0.0,
            pose: crate::geometry::Pose::identity(),
            intrinsics: k,
            frame_index: 0,
        };
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(encode_png_base64(&frame).unwrap())
            .unwrap();
        let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().unwrap();
        let mut out = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut out).unwrap();
        assert_eq!((info.width, info.height), (4, 3));
        assert_eq!(&out[..12], frame.intensity.as_deref().unwrap());
    }
}
