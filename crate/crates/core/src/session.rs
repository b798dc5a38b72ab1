//! A running engine for one location: memories, change pipeline, narration
//! queue and the logs they produce.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::detector::{ChangeDetector, FrameView, HttpDetector};
use crate::embeddings::{DefaultTextEmbedder, DefaultVisualEmbedder, TextEmbedder, VisualEmbedder};
use crate::error::{Error, Result};
use crate::esm::{ContextWindow, EpisodicMemory};
use crate::frame_io::{append_jsonl, read_manifest, read_visit, PredictionRow, VisitManifest};
use crate::geometry::{DepthFrame, Pose};
use crate::live::{DepthDescriber, Describer, ScriptDescriber};
use crate::narration::{narrate_batch, speech_seconds, ChangeBuffer, ItemKind, LiveDecision, LiveFilter, NarrationItem, Scheduler};
use crate::otm::ObjectMemory;
use crate::pipeline::{ChangeEvent, ChangePipeline, FrameTimings};
use crate::synth::oracle::OracleDetector;
use crate::synth::{SceneScript, SCRIPT_FILE};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const NARRATIONS_FILE: &str = "narrations.jsonl";
pub const PREDICTIONS_FILE: &str = "pred.jsonl";
pub const ESM_DIR: &str = "esm";
pub const OTM_DIR: &str = "otm";
pub const CONFIG_FILE: &str = "config.json";

/// A narration as it was spoken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivered {
    pub kind: ItemKind,
    pub text: String,
    pub created_at: f64,
    pub delivered_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_feet: Option<f64>,
}

/// Receives everything an engine emits.
pub trait Sink {
    fn event(&mut self, event: &ChangeEvent) -> Result<()>;
    fn narration(&mut self, delivered: &Delivered) -> Result<()>;
    fn prediction(&mut self, row: &PredictionRow) -> Result<()>;
}

#[derive(Debug, Default)]
pub struct NullSink;

impl Sink for NullSink {
    fn event(&mut self, _: &ChangeEvent) -> Result<()> {
        Ok(())
    }
    fn narration(&mut self, _: &Delivered) -> Result<()> {
        Ok(())
    }
    fn prediction(&mut self, _: &PredictionRow) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<ChangeEvent>,
    pub narrations: Vec<Delivered>,
    pub predictions: Vec<PredictionRow>,
}

impl Sink for MemorySink {
    fn event(&mut self, event: &ChangeEvent) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
    fn narration(&mut self, delivered: &Delivered) -> Result<()> {
        self.narrations.push(delivered.clone());
        Ok(())
    }
    fn prediction(&mut self, row: &PredictionRow) -> Result<()> {
        self.predictions.push(row.clone());
        Ok(())
    }
}

struct Log {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Log {
    fn open(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Log {
            path,
            out: BufWriter::new(file),
        })
    }
}

/// Appends to the three JSONL logs of a store directory.
pub struct JsonlSink {
    events: Log,
    narrations: Log,
    predictions: Log,
    echo: bool,
}

impl JsonlSink {
    pub fn open(dir: &Path, echo: bool) -> Result<Self> {
        Ok(JsonlSink {
            events: Log::open(dir.join(EVENTS_FILE))?,
            narrations: Log::open(dir.join(NARRATIONS_FILE))?,
            predictions: Log::open(dir.join(PREDICTIONS_FILE))?,
            echo,
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        for log in [&mut self.events, &mut self.narrations, &mut self.predictions] {
            log.out.flush().map_err(|e| Error::io(&log.path, e))?;
        }
        Ok(())
    }
}

impl Sink for JsonlSink {
    fn event(&mut self, event: &ChangeEvent) -> Result<()> {
        append_jsonl(&mut self.events.out, event)
    }
    fn narration(&mut self, delivered: &Delivered) -> Result<()> {
        if self.echo {
            println!("[{:?}] {}", delivered.kind, delivered.text);
        }
        append_jsonl(&mut self.narrations.out, delivered)
    }
    fn prediction(&mut self, row: &PredictionRow) -> Result<()> {
        append_jsonl(&mut self.predictions.out, row)
    }
}

/// Per-frame stage timings, including ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub frame_queuing: Duration,
    pub pipeline: FrameTimings,
}

impl StepTimings {
    pub fn components(&self) -> [f64; 4] {
        [
            self.frame_queuing.as_secs_f64(),
            self.pipeline.reference_matching.as_secs_f64(),
            self.pipeline.detector_inference.as_secs_f64(),
            self.pipeline.post_processing.as_secs_f64(),
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// False when the frame fell into an already-filled rate bucket.
    pub ingested: bool,
    pub events: usize,
    pub timings: StepTimings,
    pub live: Option<LiveDecision>,
}

pub struct Engine {
    config: Config,
    pub esm: EpisodicMemory,
    pub otm: ObjectMemory,
    pipeline: ChangePipeline,
    visual: Arc<dyn VisualEmbedder>,
    text: Arc<dyn TextEmbedder>,
    buffer: ChangeBuffer,
    scheduler: Scheduler,
    live_filter: LiveFilter,
    busy_until: f64,
    clock: f64,
    start_time: f64,
    pose: Option<Pose>,
}

impl Engine {
    pub fn new(config: Config, location_id: &str) -> Self {
        let esm = EpisodicMemory::new(location_id, ContextWindow::default(), config.fps, config.d_thres);
        Self::with_memories(config, esm, ObjectMemory::new())
    }

    pub fn with_memories(config: Config, esm: EpisodicMemory, otm: ObjectMemory) -> Self {
        let visual: Arc<dyn VisualEmbedder> = Arc::new(DefaultVisualEmbedder);
        Engine {
            pipeline: ChangePipeline::new(config.clone(), Arc::clone(&visual)),
            visual,
            text: Arc::new(DefaultTextEmbedder),
            buffer: ChangeBuffer::new(config.buffer_n, config.pairing_window_s),
            scheduler: Scheduler::new(config.staleness_s, config.buffer_n),
            live_filter: LiveFilter::new(config.tau_visual, config.tau_text, config.buffer_n),
            busy_until: f64::NEG_INFINITY,
            clock: 0.0,
            start_time: 0.0,
            pose: None,
            esm,
            otm,
            config,
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Latest observer pose, if any frame has been seen.
    pub fn pose(&self) -> Option<Pose> {
        self.pose
    }

    /// Shared-clock time of the latest frame.
    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn begin_visit(&mut self, manifest: &VisitManifest) -> Result<()> {
        self.esm
            .open_visit(&manifest.visit_id, manifest.visit_index, manifest.start_time)?;
        self.start_time = manifest.start_time;
        self.live_filter.reset();
        Ok(())
    }

    /// Queues a Q&A answer for delivery at the next tick.
    pub fn enqueue(&mut self, item: NarrationItem) {
        self.scheduler.push(item);
    }

    pub fn step(
        &mut self,
        frame: &DepthFrame,
        view: (&str, u32),
        detector: &mut dyn ChangeDetector,
        describer: Option<&mut dyn Describer>,
        sink: &mut dyn Sink,
    ) -> Result<StepReport> {
        let mut report = StepReport::default();
        let now = self.start_time + frame.timestamp;
        self.clock = now;
        self.pose = Some(frame.pose);
        let location = self.esm.location_id().to_owned();
        let started = Instant::now();
        let record = self.esm.ingest(&location, frame, self.visual.as_ref())?;
        report.timings.frame_queuing = started.elapsed();
        let Some(record) = record else {
            return Ok(report);
        };
        report.ingested = true;
        let current = FrameView {
            frame,
            visit_id: view.0,
            visit_index: view.1,
        };

        if let Some(describer) = describer {
            let embedding = self.esm.get(record).expect("just ingested").embedding.clone();
            let generate = || match describer.describe(&current) {
                Ok(text) => text,
                Err(e) => {
                    log::warn!("describer failed on frame {}: {e}", frame.frame_index);
                    None
                }
            };
            let (decision, text) = self.live_filter.filter_live(&embedding, generate, self.text.as_ref())?;
            if let (LiveDecision::Deliver, Some(text)) = (decision, text) {
                self.scheduler.push(NarrationItem::new(ItemKind::Live, text, now));
            }
            report.live = Some(decision);
        }

        let outcome = self.pipeline.process_frame(&current, &mut self.esm, &mut self.otm, detector);
        report.timings.pipeline = outcome.timings;
        report.events = outcome.events.len();
        for e in &outcome.events {
            sink.event(e)?;
        }
        let mut ready = self.buffer.push(outcome.events);
        ready.extend(self.buffer.poll(now));
        for batch in ready {
            self.narrate(&batch, now, sink)?;
        }
        self.deliver(now, sink)?;
        Ok(report)
    }

    fn narrate(&mut self, batch: &[ChangeEvent], now: f64, sink: &mut dyn Sink) -> Result<()> {
        let c = &self.config;
        for item in narrate_batch(batch, &mut self.otm, c.gamma, c.y_sim, c.pairing_window_s, now) {
            if let Some(row) = &item.prediction {
                sink.prediction(row)?;
            }
            self.scheduler.push(item);
        }
        Ok(())
    }

    fn speak(&mut self, item: NarrationItem, at: f64, sink: &mut dyn Sink) -> Result<()> {
        self.busy_until = at + speech_seconds(&item.text);
        sink.narration(&Delivered {
            kind: item.kind,
            created_at: item.created_at,
            delivered_at: at,
            clock: item.spatial.map(|s| s.clock),
            distance_feet: item.spatial.map(|s| s.distance_feet),
            text: item.text,
        })
    }

    /// Speaks at most one item when the voice is free at `now`.
    pub fn deliver(&mut self, now: f64, sink: &mut dyn Sink) -> Result<()> {
        if self.busy_until > now {
            return Ok(());
        }
        if let Some(item) = self.scheduler.next(now) {
            self.speak(item, now, sink)?;
        }
        Ok(())
    }

    /// Flushes buffered changes, speaks everything still queued and closes
    /// the visit in scene memory.
    pub fn end_visit(&mut self, visit_id: &str, sink: &mut dyn Sink) -> Result<()> {
        let now = self.clock;
        if let Some(batch) = self.buffer.flush() {
            self.narrate(&batch, now, sink)?;
        }
        loop {
            let at = self.busy_until.max(now);
            let Some(item) = self.scheduler.next(at) else { break };
            self.speak(item, at, sink)?;
        }
        self.esm.close_visit(visit_id)?;
        Ok(())
    }

    pub fn save(&self, store: &Path) -> Result<()> {
        self.esm.persist(&store.join(ESM_DIR))?;
        self.otm.save(&store.join(OTM_DIR))?;
        let path = store.join(CONFIG_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&self.config)?).map_err(|e| Error::io(&path, e))
    }

    /// Reopens a saved store; `config` replaces the stored one when given.
    pub fn open(store: &Path, config: Option<Config>) -> Result<Self> {
        let config = match config {
            Some(c) => c,
            None => {
                let path = store.join(CONFIG_FILE);
                let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_slice(&raw).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?
            }
        };
        let esm = EpisodicMemory::load(&store.join(ESM_DIR))?;
        let otm = ObjectMemory::load(&store.join(OTM_DIR))?;
        Ok(Self::with_memories(config, esm, otm))
    }
}

pub fn is_store(dir: &Path) -> bool {
    dir.join(ESM_DIR).join("index.json").is_file()
}

/// Visit directories of a location, ordered by visit index.
pub fn visit_dirs(location: &Path) -> Result<Vec<(VisitManifest, PathBuf)>> {
    let entries = fs::read_dir(location).map_err(|e| Error::io(location, e))?;
    let mut visits = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(location, e))?.path();
        if path.join("manifest.json").is_file() {
            visits.push((read_manifest(&path)?, path));
        }
    }
    visits.sort_by(|a, b| a.0.visit_index.cmp(&b.0.visit_index).then(a.1.cmp(&b.1)));
    if visits.is_empty() {
        return Err(Error::usage(format!("{} holds no visit logs", location.display())));
    }
    Ok(visits)
}

pub fn load_script(location: &Path) -> Result<Option<SceneScript>> {
    if location.join(SCRIPT_FILE).is_file() {
        SceneScript::load(location).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorChoice {
    Oracle,
    External(String),
}

impl std::str::FromStr for DetectorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(DetectorChoice::Oracle),
            _ => match s.strip_prefix("extern:") {
                Some(url) if !url.is_empty() => Ok(DetectorChoice::External(url.to_owned())),
                _ => Err(Error::usage(format!("unknown detector {s:?}; use oracle or extern:URL"))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub detector: DetectorChoice,
    pub live: bool,
    /// Print narrations as they are delivered.
    pub echo: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub location_id: String,
    pub visits: usize,
    pub frames: usize,
    pub events: usize,
    pub narrations: usize,
    pub predictions: usize,
}

struct Counting<'a> {
    inner: &'a mut dyn Sink,
    summary: &'a mut ReplaySummary,
}

impl Sink for Counting<'_> {
    fn event(&mut self, event: &ChangeEvent) -> Result<()> {
        self.summary.events += 1;
        self.inner.event(event)
    }
    fn narration(&mut self, delivered: &Delivered) -> Result<()> {
        self.summary.narrations += 1;
        self.inner.narration(delivered)
    }
    fn prediction(&mut self, row: &PredictionRow) -> Result<()> {
        self.summary.predictions += 1;
        self.inner.prediction(row)
    }
}

/// Replays every visit of `location` into `store`, appending to its logs.
pub fn replay(location: &Path, store: &Path, config: Config, options: &ReplayOptions) -> Result<ReplaySummary> {
    let visits = visit_dirs(location)?;
    let script = load_script(location)?.map(Arc::new);
    let location_id = visits[0].0.location_id.clone();
    let mut detector: Box<dyn ChangeDetector> = match &options.detector {
        DetectorChoice::Oracle => {
            let script = script.clone().ok_or_else(|| {
                Error::usage(format!("{} has no {SCRIPT_FILE}; the oracle detector needs one", location.display()))
            })?;
            Box::new(OracleDetector::new(script)?)
        }
        DetectorChoice::External(url) => Box::new(HttpDetector::new(url.clone())),
    };
    let mut describer: Option<Box<dyn Describer>> = match (options.live, &script) {
        (false, _) => None,
        (true, Some(s)) => Some(Box::new(ScriptDescriber::new(Arc::clone(s), config.closeup_fraction)?)),
        (true, None) => Some(Box::new(DepthDescriber)),
    };

    fs::create_dir_all(store).map_err(|e| Error::io(store, e))?;
    let mut engine = if is_store(store) {
        let engine = Engine::open(store, Some(config))?;
        if engine.esm.location_id() != location_id {
            return Err(Error::usage(format!(
                "store holds location {}, not {location_id}",
                engine.esm.location_id()
            )));
        }
        engine
    } else {
        let mut e = Engine::new(config, &location_id);
        e.esm.set_archive_dir(Some(store.join(ESM_DIR).join("archive")));
        e
    };

    let mut summary = ReplaySummary {
        location_id,
        ..Default::default()
    };
    let mut logs = JsonlSink::open(store, options.echo)?;
    for (manifest, dir) in &visits {
        if engine.esm.visits().iter().any(|v| v.visit_id == manifest.visit_id) {
            return Err(Error::usage(format!("visit {} is already in the store", manifest.visit_id)));
        }
        let (_, frames) = read_visit(dir)?;
        let mut sink = Counting {
            inner: &mut logs,
            summary: &mut summary,
        };
        engine.begin_visit(manifest)?;
        for frame in frames {
            let frame = frame?;
            engine.step(
                &frame,
                (&manifest.visit_id, manifest.visit_index),
                detector.as_mut(),
                describer.as_mut().map(|d| &mut **d as &mut dyn Describer),
                &mut sink,
            )?;
            sink.summary.frames += 1;
        }
        engine.end_visit(&manifest.visit_id, &mut sink)?;
        summary.visits += 1;
    }
    logs.flush()?;
    engine.save(store)?;
    Ok(summary)
}
