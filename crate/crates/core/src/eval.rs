//! Scoring predictions against ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frame_io::{read_jsonl, ChangeStatus, GroundTruthChange, PredictionRow};
use crate::geometry::spatial_phrase;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Maximum world-centre distance, meters.
    pub center: f64,
    /// Minimum token Jaccard overlap between labels.
    pub label_overlap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            center: 0.5,
            label_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub repetitive: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Hours on the clock face.
    pub clock_error_mean: f64,
    pub clock_error_sd: f64,
    pub distance_error_mean: f64,
    pub distance_error_sd: f64,
    /// Ground truth matched through a removed and appeared prediction pair.
    pub pair_matches: usize,
    pub per_category: BTreeMap<String, CategoryCounts>,
}

fn tokens(label: &str) -> Vec<String> {
    let mut t: Vec<String> = label
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    t.sort();
    t.dedup();
    t
}

pub fn labels_match(a: &str, b: &str, min_overlap: f64) -> bool {
    let (ta, tb) = (tokens(a), tokens(b));
    if ta.is_empty() || tb.is_empty() {
        return false;
    }
    let shared = ta.iter().filter(|w| tb.contains(w)).count();
    let union = ta.len() + tb.len() - shared;
    shared as f64 / union as f64 >= min_overlap
}

fn near(a: &[f64; 3], b: &[f64; 3], tol: f64) -> bool {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    d2.sqrt() <= tol
}

/// Whether one prediction alone accounts for `gt`.
pub fn single_compatible(p: &PredictionRow, gt: &GroundTruthChange, tol: &Tolerances) -> bool {
    if p.visit_index != gt.visit_index || !near(&p.world_center, &gt.world_center, tol.center) {
        return false;
    }
    let type_ok = p.change_type == gt.change_type
        || (gt.change_type == ChangeStatus::Replaced && p.change_type == ChangeStatus::ContentChanged);
    type_ok && labels_match(&p.object_label, &gt.object_label, tol.label_overlap)
}

/// Appeared half of a replacement or relocation.
fn arrival_half(p: &PredictionRow, gt: &GroundTruthChange, tol: &Tolerances) -> bool {
    matches!(gt.change_type, ChangeStatus::Replaced | ChangeStatus::Relocated)
        && p.change_type == ChangeStatus::Appeared
        && p.visit_index == gt.visit_index
        && near(&p.world_center, &gt.world_center, tol.center)
        && labels_match(&p.object_label, &gt.object_label, tol.label_overlap)
}

/// Removed half, matched on position only since the label may differ.
fn departure_half(p: &PredictionRow, gt: &GroundTruthChange, tol: &Tolerances) -> bool {
    matches!(gt.change_type, ChangeStatus::Replaced | ChangeStatus::Relocated)
        && p.change_type == ChangeStatus::Removed
        && p.visit_index == gt.visit_index
        && gt.prior_center.is_some_and(|c| near(&p.world_center, &c, tol.center))
}

/// Maximum bipartite matching by augmenting paths. `edges[g]` lists the
/// predictions compatible with ground truth row `g`; returns `pred -> gt`.
pub fn max_matching(edges: &[Vec<usize>], n_pred: usize) -> Vec<Option<usize>> {
    fn augment(g: usize, edges: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &p in &edges[g] {
            if seen[p] {
                continue;
            }
            seen[p] = true;
            if owner[p].is_none_or(|other| augment(other, edges, seen, owner)) {
                owner[p] = Some(g);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_pred];
    for g in 0..edges.len() {
        let mut seen = vec![false; n_pred];
        augment(g, edges, &mut seen, &mut owner);
    }
    owner
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn clock_error(a: u8, b: u8) -> f64 {
    let d = (a as i32 - b as i32).unsigned_abs() % 12;
    d.min(12 - d) as f64
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-to-one matching of predictions to ground truth. Predictions are
/// considered in (timestamp, input order) order, so the result does not
/// depend on how the input was shuffled beyond ties.
pub fn match_predictions(predictions: &[PredictionRow], ground_truth: &[GroundTruthChange], tol: &Tolerances) -> EvalReport {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&predictions[a], &predictions[b]);
        pa.timestamp
            .total_cmp(&pb.timestamp)
            .then(pa.visit_index.cmp(&pb.visit_index))
            .then(pa.object_label.cmp(&pb.object_label))
            .then(pa.change_type.as_str().cmp(pb.change_type.as_str()))
            .then(pa.world_center.iter().zip(&pb.world_center).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))))
    });
    let preds: Vec<&PredictionRow> = order.iter().map(|&i| &predictions[i]).collect();

    let edges: Vec<Vec<usize>> = ground_truth
        .iter()
        .map(|g| (0..preds.len()).filter(|&p| single_compatible(preds[p], g, tol)).collect())
        .collect();
    let owner = max_matching(&edges, preds.len());
    let mut used: Vec<bool> = owner.iter().map(Option::is_some).collect();
    // gt -> (prediction carrying the spatial phrase, matched via pair)
    let mut matched: Vec<Option<(usize, bool)>> = vec![None; ground_truth.len()];
    for (p, g) in owner.iter().enumerate() {
        if let Some(g) = g {
            matched[*g] = Some((p, false));
        }
    }
    for (g, gt) in ground_truth.iter().enumerate() {
        if matched[g].is_some() {
            continue;
        }
        let arrival = (0..preds.len()).find(|&p| !used[p] && arrival_half(preds[p], gt, tol));
        let departure = (0..preds.len()).find(|&p| !used[p] && departure_half(preds[p], gt, tol));
        if let (Some(a), Some(d)) = (arrival, departure) {
            used[a] = true;
            used[d] = true;
            matched[g] = Some((a, true));
        }
    }

    let mut report = EvalReport::default();
    for gt in ground_truth {
        report.per_category.entry(gt.change_type.as_str().to_owned()).or_default();
    }
    let (mut clock_errors, mut distance_errors) = (Vec::new(), Vec::new());
    for (g, gt) in ground_truth.iter().enumerate() {
        let cat = report.per_category.get_mut(gt.change_type.as_str()).expect("seeded");
        match matched[g] {
            Some((p, pair)) => {
                report.tp += 1;
                cat.tp += 1;
                report.pair_matches += pair as usize;
                let pred = preds[p];
                let truth = spatial_phrase(&gt.world_center.into(), &pred.observer_pose);
                clock_errors.push(clock_error(pred.clock, truth.clock));
                distance_errors.push((pred.distance_feet - truth.distance_feet).abs());
            }
            None => {
                report.fn_ += 1;
                cat.fn_ += 1;
            }
        }
    }
    for (p, pred) in preds.iter().enumerate() {
        if used[p] {
            continue;
        }
        let compatible = ground_truth.iter().any(|g| {
            single_compatible(pred, g, tol) || arrival_half(pred, g, tol) || departure_half(pred, g, tol)
        });
        if compatible {
            report.repetitive += 1;
        } else {
            report.fp += 1;
            report.per_category.entry(pred.change_type.as_str().to_owned()).or_default().fp += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    report.precision = ratio(report.tp, report.tp + report.fp);
    report.recall = ratio(report.tp, report.tp + report.fn_);
    report.f1 = f1(report.precision, report.recall);
    (report.clock_error_mean, report.clock_error_sd) = mean_sd(&clock_errors);
    (report.distance_error_mean, report.distance_error_sd) = mean_sd(&distance_errors);
    report
}

pub fn evaluate_files(pred: &Path, gt: &Path, tol: &Tolerances) -> Result<EvalReport> {
    let predictions: Vec<PredictionRow> = read_jsonl(pred)?;
    let truth: Vec<GroundTruthChange> = read_jsonl(gt)?;
    Ok(match_predictions(&predictions, &truth, tol))
}

/// Prediction rows that restate ground truth exactly, for self-checks.
pub fn predictions_from_truth(gt: &[GroundTruthChange]) -> Vec<PredictionRow> {
    gt.iter()
        .map(|g| {
            let pose = crate::geometry::Pose::identity();
            let phrase = spatial_phrase(&g.world_center.into(), &pose);
            PredictionRow {
                visit_index: g.visit_index,
                frame_index: g.first_visible_frame,
                timestamp: g.visit_index as f64,
                object_label: g.object_label.clone(),
                change_type: g.change_type,
                world_center: g.world_center,
                prior_center: g.prior_center,
                clock: phrase.clock,
                distance_feet: phrase.distance_feet,
                observer_pose: pose,
                description: g.detail.clone(),
            }
        })
        .collect()
}
