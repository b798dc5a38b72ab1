//! Engine thresholds. Every field can be overridden from a `key = value`
//! file; unspecified keys keep their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterOrder {
    NewestFirst,
    Chronological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Pose filter translation threshold, meters.
    pub d_thres: f64,
    /// Pose filter rotation threshold, degrees.
    pub theta_thres: f64,
    /// Temporal clustering radius, seconds.
    pub epsilon: f64,
    pub n_c: usize,
    /// Minimum visibility-mask coverage of a detector box.
    pub x_mask: f64,
    /// OTM association IoU threshold.
    pub gamma: f64,
    /// OTM association similarity threshold.
    pub y_sim: f64,
    pub tau_visual: f64,
    pub tau_text: f64,
    pub buffer_n: usize,
    pub staleness_s: f64,
    pub fps: f64,
    pub overlap_min: f64,
    pub qa_n: usize,
    pub cluster_order: ClusterOrder,
    /// Minimum detector confidence (low = 0.3, med = 0.6, high = 0.9).
    pub confidence_min: f64,
    /// Minimum detector box area in normalized units squared.
    pub area_min: f64,
    /// Maximum seconds two buffered events may be apart and still pair.
    pub pairing_window_s: f64,
    /// Close-up live descriptions trigger above this fraction of valid pixels.
    pub closeup_fraction: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d_thres: 1.5,
            theta_thres: 40.0,
            epsilon: 10.0,
            n_c: 2,
            x_mask: 0.45,
            gamma: 0.08,
            y_sim: 0.7,
            tau_visual: 0.85,
            tau_text: 0.80,
            buffer_n: 3,
            staleness_s: 6.0,
            fps: 1.0,
            overlap_min: 0.3,
            qa_n: 3,
            cluster_order: ClusterOrder::NewestFirst,
            confidence_min: 0.6,
            area_min: 400.0,
            pairing_window_s: 60.0,
            closeup_fraction: 0.4,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_defaults() {
        let c = Config::parse("d_thres = 2.0\nn_c = 3\ncluster_order = \"chronological\"\n").unwrap();
        assert_eq!(c.d_thres, 2.0);
        assert_eq!(c.n_c, 3);
        assert_eq!(c.cluster_order, ClusterOrder::Chronological);
        assert_eq!(c.gamma, 0.08);
        assert_eq!(c.tau_text, 0.80);
        assert!(Config::parse("nonsense = 1").is_err());
    }
}
