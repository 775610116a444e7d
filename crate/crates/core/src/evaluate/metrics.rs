use crate::error::{Error, Result};

use super::matching::{MatchRecord, TreeMatching};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountLevel {
    #[default]
    Point,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub level: CountLevel,
}

impl ConfusionCounts {
    pub fn points(tp: u64, fp: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            level: CountLevel::Point,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall, F1 and IoU; every 0/0 is 0.
pub fn point_metrics(c: ConfusionCounts) -> PointMetrics {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    PointMetrics {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
        iou: ratio(tp, tp + fp + fn_),
    }
}

/// Mean residual height and RMSE over matched trees.
pub fn height_metrics(records: &[MatchRecord]) -> Result<(f64, f64)> {
    let residuals: Vec<f64> = records.iter().filter_map(|r| r.residual).collect();
    if residuals.is_empty() {
        return Err(Error::Empty("matched trees for height metrics"));
    }
    let n = residuals.len() as f64;
    let mean = super::aggregate::ordered_sum(residuals.iter().copied()) / n;
    let mse = super::aggregate::ordered_sum(residuals.iter().map(|r| r * r)) / n;
    Ok((mean, mse.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionMode {
    /// A matched pair counts as a detection only at `IoU >= threshold`.
    IouThreshold(f64),
    /// Every matched pair is a detection.
    Assignment,
}

impl Default for DetectionMode {
    fn default() -> Self {
        DetectionMode::IouThreshold(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionRates {
    pub detections: usize,
    pub commissions: usize,
    pub omissions: usize,
    pub detection: f64,
    pub commission: f64,
    pub omission: f64,
}

/// Detection, commission and omission rates of one matching.
///
/// A pair below the IoU threshold counts both as a commission (its
/// prediction) and an omission (its ground-truth tree). Rates are
/// normalised by the total number of cases.
pub fn detection_rates(m: &TreeMatching, mode: DetectionMode) -> Result<DetectionRates> {
    if m.records.is_empty() && m.unassigned_predictions.is_empty() {
        return Err(Error::Empty("tree matching"));
    }
    let mut out = DetectionRates {
        commissions: m.unassigned_predictions.len(),
        ..Default::default()
    };
    for r in &m.records {
        match r.pred_id {
            None => out.omissions += 1,
            Some(_) => {
                let hit = match mode {
                    DetectionMode::IouThreshold(t) => r.iou >= t,
                    DetectionMode::Assignment => true,
                };
                if hit {
                    out.detections += 1;
                } else {
                    out.commissions += 1;
                    out.omissions += 1;
                }
            }
        }
    }
    let total = (out.detections + out.commissions + out.omissions) as f64;
    out.detection = out.detections as f64 / total;
    out.commission = out.commissions as f64 / total;
    out.omission = out.omissions as f64 / total;
    Ok(out)
}
