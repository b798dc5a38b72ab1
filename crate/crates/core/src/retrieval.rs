//! Reference-frame selection: pose filter, bidirectional overlap, temporal
//! clustering, and skipping of clusters whose changes were already announced.

use crate::config::{ClusterOrder, Config};
use crate::esm::{EpisodicMemory, RecordId};
use crate::geometry::{overlap_score, DepthFrame, VisibilityMap};

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCluster {
    /// Member ids ordered by (time, id).
    pub members: Vec<RecordId>,
    pub span: (f64, f64),
    pub announced: bool,
}

/// One-dimensional DBSCAN over timestamps.
///
/// A point is core when at least `min_size` points (itself included) lie
/// within `epsilon`. Clusters are maximal chains of cores; a non-core point
/// within `epsilon` of a core joins the cluster of its nearest core (the
/// earlier cluster on ties). Everything else is noise.
pub fn dbscan_temporal(points: &[(RecordId, f64)], epsilon: f64, min_size: usize) -> Vec<TemporalCluster> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1).then(points[a].0.cmp(&points[b].0)));
    let t = |k: usize| points[order[k]].1;
    let n = order.len();

    let mut core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    #[allow(clippy::needless_range_loop)] // two-pointer sweep
    for k in 0..n {
        while t(k) - t(lo) > epsilon {
            lo += 1;
        }
        while hi + 1 < n && t(hi + 1) - t(k) <= epsilon {
            hi += 1;
        }
        core[k] = hi + 1 - lo >= min_size.max(1);
    }

    // Cluster id per sorted position, assigned along runs of cores.
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters = 0usize;
    let mut last_core: Option<usize> = None;
    for k in 0..n {
        if !core[k] {
            continue;
        }
        let joins = last_core.is_some_and(|p| t(k) - t(p) <= epsilon);
        if !joins {
            clusters += 1;
        }
        label[k] = Some(clusters - 1);
        last_core = Some(k);
    }

    for k in 0..n {
        if core[k] {
            continue;
        }
        let left = (0..k).rev().find(|&j| core[j]);
        let right = (k + 1..n).find(|&j| core[j]);
        let dl = left.map(|j| t(k) - t(j)).filter(|d| *d <= epsilon);
        let dr = right.map(|j| t(j) - t(k)).filter(|d| *d <= epsilon);
        label[k] = match (dl, dr) {
            (Some(a), Some(b)) if b < a => label[right.unwrap()],
            (Some(_), _) => label[left.unwrap()],
            (None, Some(_)) => label[right.unwrap()],
            (None, None) => None,
        };
    }

    let mut out: Vec<TemporalCluster> = (0..clusters)
        .map(|_| TemporalCluster {
            members: Vec::new(),
            span: (f64::INFINITY, f64::NEG_INFINITY),
            announced: false,
        })
        .collect();
    for k in 0..n {
        if let Some(c) = label[k] {
            let (id, time) = points[order[k]];
            let cl = &mut out[c];
            cl.members.push(id);
            cl.span = (cl.span.0.min(time), cl.span.1.max(time));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub record_id: RecordId,
    pub visibility: VisibilityMap,
    pub cluster: TemporalCluster,
    /// Candidates surviving the pose and overlap filters.
    pub candidates: usize,
}

pub fn select_reference(current: &DepthFrame, esm: &EpisodicMemory, config: &Config) -> Option<Reference> {
    let scored: Vec<(RecordId, f64, VisibilityMap)> = esm
        .query_by_pose(&current.pose, config.d_thres, config.theta_thres)
        .into_iter()
        .map(|r| (r.record_id, r.ingest_time, overlap_score(&r.frame, current)))
        .filter(|(_, _, v)| v.s_overlap >= config.overlap_min)
        .collect();
    if scored.is_empty() {
        return None;
    }
    let times: Vec<(RecordId, f64)> = scored.iter().map(|(id, t, _)| (*id, *t)).collect();
    let mut clusters = dbscan_temporal(&times, config.epsilon, config.n_c);
    for c in clusters.iter_mut() {
        c.announced = c
            .members
            .iter()
            .all(|id| esm.get(*id).is_some_and(|r| r.announced));
    }
    if config.cluster_order == ClusterOrder::NewestFirst {
        clusters.reverse();
    }
    let cluster = clusters.into_iter().find(|c| !c.announced)?;
    let (record_id, _, visibility) = scored
        .iter()
        .filter(|(id, _, _)| cluster.members.contains(id))
        .fold(None::<&(RecordId, f64, VisibilityMap)>, |best, cand| match best {
            Some(b) if b.2.s_overlap >= cand.2.s_overlap => Some(b),
            _ => Some(cand),
        })?
        .clone();
    Some(Reference {
        record_id,
        visibility,
        cluster,
        candidates: scored.len(),
    })
}

pub fn mark_announced(esm: &mut EpisodicMemory, cluster: &TemporalCluster) {
    esm.set_announced(&cluster.members);
}
