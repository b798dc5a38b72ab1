#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use revisit_core::config::Config;
use revisit_core::detector::Confidence;
use revisit_core::embeddings::Embedding;
use revisit_core::frame_io::ChangeStatus;
use revisit_core::geometry::{Bbox3D, Pose};
use revisit_core::otm::FrameRef;
use revisit_core::pipeline::ChangeEvent;
use revisit_core::session::{replay, DetectorChoice, Engine, MemorySink, ReplayOptions, ReplaySummary};
use revisit_core::synth::oracle::OracleDetector;
use revisit_core::synth::scenes::standard_benchmark;
use revisit_core::synth::SceneScript;

pub const SEED: u64 = 7;

pub fn emb(v: &[f64]) -> Embedding {
    Embedding::normalized(v.to_vec())
}

pub fn event(label: &str, status: ChangeStatus, center: [f64; 3], embedding: Embedding, t: f64) -> ChangeEvent {
    let frame = FrameRef {
        visit_id: "visit_01".into(),
        frame_index: 0,
    };
    ChangeEvent {
        visit_id: "visit_01".into(),
        visit_index: 1,
        frame_index: t as u32,
        timestamp: t,
        object_id: 0,
        label: label.into(),
        status,
        description: String::new(),
        context: String::new(),
        confidence: Confidence::High,
        bbox: Bbox3D::from_center_size(center, [0.5, 0.5, 0.5]).unwrap(),
        clock: 12,
        distance_feet: 5.0,
        observer_pose: Pose::identity(),
        reference_frame: frame.clone(),
        reference_time: t - 86_400.0,
        current_frame: frame,
        embedding,
    }
}

/// Writes the three-location benchmark under `root`.
pub fn generate(root: &Path) -> Vec<PathBuf> {
    standard_benchmark(SEED)
        .into_iter()
        .map(|s| {
            let dir = root.join(&s.location_id);
            s.write_location(&dir).unwrap();
            dir
        })
        .collect()
}

pub fn replay_oracle(location: &Path, store: &Path) -> ReplaySummary {
    let options = ReplayOptions {
        detector: DetectorChoice::Oracle,
        live: false,
        echo: false,
    };
    replay(location, store, Config::default(), &options).unwrap()
}

/// Runs every visit of `script` in memory and returns what was emitted.
pub fn run_script(script: SceneScript, config: &Config) -> MemorySink {
    let script = Arc::new(script);
    let mut detector = OracleDetector::new(Arc::clone(&script)).unwrap();
    let mut engine = Engine::new(config.clone(), &script.location_id);
    let mut sink = MemorySink::default();
    for plan in &script.visits {
        let manifest = script.manifest(plan.visit_index).unwrap();
        let frames = script.render_frames(plan.visit_index).unwrap();
        engine.begin_visit(&manifest).unwrap();
        for f in &frames {
            engine
                .step(f, (&manifest.visit_id, manifest.visit_index), &mut detector, None, &mut sink)
                .unwrap();
        }
        engine.end_visit(&manifest.visit_id, &mut sink).unwrap();
    }
    sink
}
