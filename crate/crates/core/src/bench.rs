//! Extended-use benchmark: replay a location's visits many times and track
//! latency and memory growth.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frame_io::{read_visit, VisitManifest};
use crate::geometry::DepthFrame;
use crate::session::{load_script, visit_dirs, Engine, NullSink};
use crate::synth::oracle::OracleDetector;

pub const LATENCY_FILE: &str = "latency.csv";
pub const FOOTPRINT_FILE: &str = "footprint.csv";
pub const SUMMARY_FILE: &str = "bench.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub location_id: String,
    /// 1-based replay visit number.
    pub visit: usize,
    pub frame_index: u32,
    pub frame_queuing: f64,
    pub reference_matching: f64,
    pub detector_inference: f64,
    pub post_processing: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootprintRow {
    pub location_id: String,
    pub visit: usize,
    pub object_count: usize,
    pub snapshot_count: usize,
    pub serialized_bytes: usize,
    pub esm_queryable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub location_id: String,
    pub visits: usize,
    pub frames: usize,
    pub early_reference_median: f64,
    pub late_reference_median: f64,
    pub reference_ratio: f64,
    pub footprint_r2: f64,
    pub footprint_slope: f64,
    pub max_esm_queryable: usize,
    pub max_visit_frames: usize,
    pub median_total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchRun {
    pub latency: Vec<LatencyRow>,
    pub footprint: Vec<FootprintRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Least-squares line through `(x, y)`: (slope, intercept, R²).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (0.0, 0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy * sxy / (sxx * syy))
}

fn reference_median(rows: &[LatencyRow], visits: std::ops::RangeInclusive<usize>) -> f64 {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| visits.contains(&r.visit))
        .map(|r| r.reference_matching)
        .collect();
    median(&mut v)
}

impl BenchRun {
    pub fn summarize(&self, location_id: &str, visits_per_round: usize, max_visit_frames: usize) -> BenchSummary {
        let last = self.footprint.len();
        let early = reference_median(&self.latency, 1..=visits_per_round);
        let late = reference_median(&self.latency, last.saturating_sub(visits_per_round - 1).max(1)..=last);
        let points: Vec<(f64, f64)> = self
            .footprint
            .iter()
            .map(|f| (f.snapshot_count as f64, f.serialized_bytes as f64))
            .collect();
        let (slope, _, r2) = linear_fit(&points);
        let mut totals: Vec<f64> = self.latency.iter().map(|r| r.total).collect();
        BenchSummary {
            location_id: location_id.to_owned(),
            visits: last,
            frames: self.latency.len(),
            early_reference_median: early,
            late_reference_median: late,
            reference_ratio: if early > 0.0 { late / early } else { f64::INFINITY },
            footprint_r2: r2,
            footprint_slope: slope,
            max_esm_queryable: self.footprint.iter().map(|f| f.esm_queryable).max().unwrap_or(0),
            max_visit_frames,
            median_total: median(&mut totals),
        }
    }
}

/// Replays pre-loaded visits `repeat` times through one engine with the
/// oracle detector.
pub fn run_extended(
    location_id: &str,
    visits: &[(VisitManifest, Vec<DepthFrame>)],
    detector: &mut OracleDetector,
    config: &Config,
    repeat: usize,
) -> Result<BenchRun> {
    let mut engine = Engine::new(config.clone(), location_id);
    let mut run = BenchRun::default();
    let n = visits.len();
    let mut sink = NullSink;
    for round in 0..repeat {
        for (i, (manifest, frames)) in visits.iter().enumerate() {
            let index = round * n + i;
            let replay = VisitManifest {
                visit_id: format!("r{round:02}_{}", manifest.visit_id),
                visit_index: index as u32,
                start_time: index as f64 * 86_400.0,
                ..manifest.clone()
            };
            engine.begin_visit(&replay)?;
            for frame in frames {
                let step = engine.step(frame, (&replay.visit_id, replay.visit_index), detector, None, &mut sink)?;
                if !step.ingested {
                    continue;
                }
                let c = step.timings.components();
                run.latency.push(LatencyRow {
                    location_id: location_id.to_owned(),
                    visit: index + 1,
                    frame_index: frame.frame_index,
                    frame_queuing: c[0],
                    reference_matching: c[1],
                    detector_inference: c[2],
                    post_processing: c[3],
                    total: c.iter().sum(),
                });
            }
            engine.end_visit(&replay.visit_id, &mut sink)?;
            let fp = engine.otm.footprint();
            run.footprint.push(FootprintRow {
                location_id: location_id.to_owned(),
                visit: index + 1,
                object_count: fp.object_count,
                snapshot_count: fp.snapshot_count,
                serialized_bytes: fp.serialized_bytes,
                esm_queryable: engine.esm.queryable_len(),
            });
        }
    }
    Ok(run)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a generated location, runs the benchmark and writes its CSVs and
/// summary under `out`.
pub fn bench_location(location: &Path, out: &Path, config: &Config, repeat: usize) -> Result<BenchSummary> {
    let script = load_script(location)?
        .ok_or_else(|| Error::usage(format!("{} has no scene script; bench needs the oracle detector", location.display())))?;
    let mut visits = Vec::new();
    for (manifest, dir) in visit_dirs(location)? {
        let (_, frames) = read_visit(&dir)?;
        visits.push((manifest, frames.collect::<Result<Vec<_>>>()?));
    }
    let location_id = script.location_id.clone();
    let period = visits.len() as u32;
    let mut detector = OracleDetector::new(Arc::new(script))?.with_visit_period(period);
    let run = run_extended(&location_id, &visits, &mut detector, config, repeat)?;
    let max_frames = visits.iter().map(|v| v.1.len()).max().unwrap_or(0);
    let summary = run.summarize(&location_id, visits.len(), max_frames);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv(&out.join(LATENCY_FILE), &run.latency)?;
    write_csv(&out.join(FOOTPRINT_FILE), &run.footprint)?;
    let path = out.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
