//! Pose and detection metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::mmg::Cluster;
use crate::synth::Detection;
use crate::PipelineError;

/// MPJPE thresholds (mm) at which AP and AR are reported.
pub const THRESHOLDS_MM: [f64; 6] = [25.0, 50.0, 75.0, 100.0, 125.0, 150.0];

/// Default PCP3D tolerance as a fraction of the bone length.
pub const PCP_ALPHA: f64 = 0.5;

/// Mean per-joint Euclidean distance, no alignment.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, PipelineError> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(PipelineError::Contract(format!(
            "{} predicted joints for {} ground-truth joints",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / gt.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPose {
    pub joints: Vec<Vector3<f64>>,
    pub score: f64,
}

/// Predictions and ground truth of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame<P, G> {
    pub predictions: Vec<(P, f64)>,
    pub ground_truth: Vec<G>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub threshold_mm: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub ap: f64,
    pub ar: f64,
    /// Mean distance over true positives; `None` without any.
    pub matched_error: Option<f64>,
    pub true_positives: usize,
    pub curve: PrCurve,
}

/// Ranked one-to-one matching over many frames.
///
/// Within each frame, predictions in decreasing score order (input order on
/// ties) take their nearest unmatched ground truth; the pair is a true
/// positive iff `dist <= threshold`, and only true positives consume a ground
/// truth. All predictions are then ranked together and AP is the area under
/// the all-point interpolated precision-recall curve.
pub fn rank_and_match<P, G, D>(
    frames: &[Frame<P, G>],
    threshold: f64,
    dist: D,
) -> Result<DetectionScore, PipelineError>
where
    D: Fn(&P, &G) -> Result<f64, PipelineError>,
{
    let total_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    // (score, frame, rank within frame, distance if TP)
    let mut ranked: Vec<(f64, usize, usize, Option<f64>)> = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        let mut order: Vec<usize> = (0..frame.predictions.len()).collect();
        order.sort_by(|&a, &b| frame.predictions[b].1.total_cmp(&frame.predictions[a].1).then(a.cmp(&b)));
        let mut taken = vec![false; frame.ground_truth.len()];
        for (rank, &pi) in order.iter().enumerate() {
            let (pred, score) = &frame.predictions[pi];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in frame.ground_truth.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let d = dist(pred, g)?;
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((gi, d));
                }
            }
            let hit = match best {
                Some((gi, d)) if d <= threshold => {
                    taken[gi] = true;
                    Some(d)
                }
                _ => None,
            };
            ranked.push((*score, fi, rank, hit));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let (mut tp, mut err) = (0usize, 0.0);
    for (i, r) in ranked.iter().enumerate() {
        if let Some(d) = r.3 {
            tp += 1;
            err += d;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 });
    }
    Ok(DetectionScore {
        ap: average_precision(&precision, &recall),
        ar: recall.last().copied().unwrap_or(0.0),
        matched_error: (tp > 0).then(|| err / tp as f64),
        true_positives: tp,
        curve: PrCurve {
            threshold_mm: threshold,
            precision,
            recall,
        },
    })
}

/// All-point interpolation: sum of recall steps times the best precision at
/// or beyond each step.
pub fn average_precision(precision: &[f64], recall: &[f64]) -> f64 {
    let n = precision.len().min(recall.len());
    let mut envelope = precision[..n].to_vec();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..n {
        ap += (recall[i] - prev) * envelope[i];
        prev = recall[i];
    }
    ap
}

/// AP, AR and mean MPJPE of the true positives for one frame.
pub fn match_and_score(
    predictions: &[ScoredPose],
    ground_truth: &[Vec<Vector3<f64>>],
    threshold: f64,
) -> Result<DetectionScore, PipelineError> {
    let frame = Frame {
        predictions: predictions.iter().map(|p| (p.joints.clone(), p.score)).collect(),
        ground_truth: ground_truth.to_vec(),
    };
    score_poses(std::slice::from_ref(&frame), threshold)
}

pub fn score_poses(
    frames: &[Frame<Vec<Vector3<f64>>, Vec<Vector3<f64>>>],
    threshold: f64,
) -> Result<DetectionScore, PipelineError> {
    rank_and_match(frames, threshold, |p, g| mpjpe(p, g))
}

pub fn score_centers(
    frames: &[Frame<Vector3<f64>, Vector3<f64>>],
    threshold: f64,
) -> Result<DetectionScore, PipelineError> {
    rank_and_match(frames, threshold, |p, g| Ok((p - g).norm()))
}

/// Fraction of bones whose two endpoints both lie within `alpha` times the
/// true bone length of their true positions.
pub fn pcp3d(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    bones: &[(usize, usize)],
    alpha: f64,
) -> Result<f64, PipelineError> {
    if pred.len() != gt.len() || bones.iter().any(|&(a, b)| a >= gt.len() || b >= gt.len()) {
        return Err(PipelineError::Contract("pose and skeleton disagree".into()));
    }
    if bones.is_empty() {
        return Ok(0.0);
    }
    let ok = bones
        .iter()
        .filter(|&&(a, b)| {
            let tol = alpha * (gt[a] - gt[b]).norm();
            (pred[a] - gt[a]).norm() <= tol && (pred[b] - gt[b]).norm() <= tol
        })
        .count();
    Ok(ok as f64 / bones.len() as f64)
}

/// Pair counts for the same-cluster vs same-identity decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub true_positive: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl PairCounts {
    pub fn add(&mut self, other: PairCounts) {
        self.true_positive += other.true_positive;
        self.predicted += other.predicted;
        self.actual += other.actual;
    }

    /// Precision is 1 when nothing was predicted, recall is 1 when nothing
    /// was there to find.
    pub fn scores(&self) -> MatchingScores {
        let precision = if self.predicted == 0 {
            1.0
        } else {
            self.true_positive as f64 / self.predicted as f64
        };
        let recall = if self.actual == 0 {
            1.0
        } else {
            self.true_positive as f64 / self.actual as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MatchingScores {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchingScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Count detection pairs that share a cluster and pairs that share an
/// identity. Detections missing from every cluster count as singletons;
/// clutter has no identity and never forms a true pair.
pub fn matching_pairs(clusters: &[Cluster], detections: &[Vec<Detection>]) -> PairCounts {
    let ident = |(v, d): (usize, usize)| detections.get(v).and_then(|ds| ds.get(d)).and_then(|x| x.identity);
    let mut counts = PairCounts::default();
    for c in clusters {
        for (i, &a) in c.members.iter().enumerate() {
            for &b in &c.members[i + 1..] {
                counts.predicted += 1;
                if let (Some(x), Some(y)) = (ident(a), ident(b)) {
                    if x == y {
                        counts.true_positive += 1;
                    }
                }
            }
        }
    }
    let flat: Vec<Option<usize>> = detections.iter().flatten().map(|d| d.identity).collect();
    for (i, a) in flat.iter().enumerate() {
        for b in &flat[i + 1..] {
            if a.is_some() && a == b {
                counts.actual += 1;
            }
        }
    }
    counts
}

pub fn matching_f1(clusters: &[Cluster], detections: &[Vec<Detection>]) -> MatchingScores {
    matching_pairs(clusters, detections).scores()
}
