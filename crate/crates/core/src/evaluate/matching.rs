use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::cloud::{InstanceId, LabeledCloud};
use crate::spatial::SpatialIndex;

use super::metrics::{point_metrics, ConfusionCounts};

/// Nearest predicted point for every ground-truth point, `None` when the
/// nearest one is farther than `tolerance` (or the prediction is empty).
pub fn match_point_sets(
    pred: &LabeledCloud,
    gt: &LabeledCloud,
    tolerance: f64,
) -> Vec<Option<usize>> {
    if pred.is_empty() {
        return vec![None; gt.len()];
    }
    let index = SpatialIndex::new(pred.points.clone());
    gt.points
        .iter()
        .map(|q| {
            let hit = index.knn(q, 1).expect("non-empty index")[0];
            (hit.distance <= tolerance).then_some(hit.index)
        })
        .collect()
}

/// How predicted points relate to ground-truth points.
#[derive(Debug, Clone, Copy)]
pub enum Correspondence<'a> {
    /// Both clouds hold the same points in the same order.
    SameIndex,
    /// Output of [`match_point_sets`]: predicted index per ground-truth point.
    Matched(&'a [Option<usize>]),
}

/// One ground-truth tree and the prediction assigned to it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchRecord {
    pub gt_id: InstanceId,
    /// `None` when the tree was omitted.
    pub pred_id: Option<InstanceId>,
    pub overlap: u64,
    pub gt_size: u64,
    /// Size of the prediction in ground-truth index space.
    pub pred_size: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub gt_height: f64,
    pub pred_height: Option<f64>,
    /// `gt_height - pred_height`.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreeMatching {
    /// One record per ground-truth tree, largest tree first.
    pub records: Vec<MatchRecord>,
    /// Predicted instances never assigned (commissions), ascending.
    pub unassigned_predictions: Vec<InstanceId>,
}

/// Greedy iterative tree elimination.
///
/// Ground-truth trees are visited by descending point count (ties: lower
/// id). Each takes the remaining prediction with the largest point overlap
/// (ties: lower id) which is then removed from the pool; a tree without any
/// overlapping prediction left is an omission. Tree heights are the maximum
/// point height of each instance in its own cloud.
pub fn greedy_tree_matching(
    gt: &LabeledCloud,
    pred: &LabeledCloud,
    corr: Correspondence<'_>,
) -> TreeMatching {
    let n = gt.len();
    let gt_labels: Vec<Option<InstanceId>> = gt.instance.clone().unwrap_or_else(|| vec![None; n]);
    let pred_at_gt: Vec<Option<InstanceId>> = match corr {
        Correspondence::SameIndex => {
            assert_eq!(
                pred.len(),
                n,
                "same-index correspondence needs equal cloud sizes"
            );
            pred.instance.clone().unwrap_or_else(|| vec![None; n])
        }
        Correspondence::Matched(m) => m
            .iter()
            .map(|o| o.and_then(|j| pred.instance_at(j)))
            .collect(),
    };

    let mut gt_size: BTreeMap<InstanceId, u64> = BTreeMap::new();
    let mut gt_height: HashMap<InstanceId, f64> = HashMap::new();
    let mut pred_size: HashMap<InstanceId, u64> = HashMap::new();
    let mut overlap: HashMap<InstanceId, BTreeMap<InstanceId, u64>> = HashMap::new();
    for i in 0..n {
        if let Some(g) = gt_labels[i] {
            *gt_size.entry(g).or_default() += 1;
            let h = gt_height.entry(g).or_insert(f64::NEG_INFINITY);
            *h = h.max(gt.height(i));
        }
        if let Some(p) = pred_at_gt[i] {
            *pred_size.entry(p).or_default() += 1;
            if let Some(g) = gt_labels[i] {
                *overlap.entry(g).or_default().entry(p).or_default() += 1;
            }
        }
    }
    let mut pred_height: HashMap<InstanceId, f64> = HashMap::new();
    for j in 0..pred.len() {
        if let Some(p) = pred.instance_at(j) {
            let h = pred_height.entry(p).or_insert(f64::NEG_INFINITY);
            *h = h.max(pred.height(j));
        }
    }
    let mut pool: BTreeSet<InstanceId> = pred.instance_ids().into_iter().collect();
    pool.extend(pred_size.keys().copied());

    let mut order: Vec<(InstanceId, u64)> = gt_size.iter().map(|(&g, &s)| (g, s)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut records = Vec::with_capacity(order.len());
    for (g, size) in order {
        let best = overlap.get(&g).and_then(|row| {
            row.iter()
                .filter(|(p, &c)| c > 0 && pool.contains(p))
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&p, &c)| (p, c))
        });
        let h_gt = gt_height[&g];
        let record = match best {
            Some((p, ov)) => {
                pool.remove(&p);
                let ps = pred_size[&p];
                let m = point_metrics(ConfusionCounts::points(ov, ps - ov, size - ov));
                let h_pred = pred_height.get(&p).copied().unwrap_or(f64::NEG_INFINITY);
                let h_pred = h_pred.is_finite().then_some(h_pred);
                MatchRecord {
                    gt_id: g,
                    pred_id: Some(p),
                    overlap: ov,
                    gt_size: size,
                    pred_size: ps,
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    iou: m.iou,
                    gt_height: h_gt,
                    pred_height: h_pred,
                    residual: h_pred.map(|h| h_gt - h),
                }
            }
            None => MatchRecord {
                gt_id: g,
                gt_size: size,
                gt_height: h_gt,
                ..Default::default()
            },
        };
        records.push(record);
    }
    TreeMatching {
        records,
        unassigned_predictions: pool.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;

    fn labelled(labels: Vec<Option<InstanceId>>) -> LabeledCloud {
        let n = labels.len();
        LabeledCloud::new(
            (0..n)
                .map(|i| Point::new(i as f64, 0.0, (i % 7) as f64))
                .collect(),
        )
        .unwrap()
        .with_instance(labels)
        .unwrap()
    }

    #[test]
    fn identity_matching() {
        let labels: Vec<Option<InstanceId>> = (0..60)
            .map(|i| if i % 5 == 4 { None } else { Some(i % 3) })
            .collect();
        let c = labelled(labels);
        let m = greedy_tree_matching(&c, &c, Correspondence::SameIndex);
        assert_eq!(m.records.len(), 3);
        for r in &m.records {
            assert_eq!(r.pred_id, Some(r.gt_id));
            assert_eq!(r.iou, 1.0);
            assert_eq!(r.residual, Some(0.0));
        }
        assert!(m.unassigned_predictions.is_empty());
    }

    #[test]
    fn hand_enumerated_overlaps() {
        // gt A (id 0): 100 points, B (id 1): 50 points.
        // pred 1 covers 90 of A and 10 of B; pred 2 covers 40 of B.
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        for i in 0..100 {
            gt.push(Some(0));
            pred.push(if i < 90 { Some(1) } else { None });
        }
        for i in 0..50 {
            gt.push(Some(1));
            pred.push(if i < 10 { Some(1) } else { Some(2) });
        }
        let m = greedy_tree_matching(&labelled(gt), &labelled(pred), Correspondence::SameIndex);
        assert_eq!(m.records[0].gt_id, 0);
        assert_eq!(m.records[0].pred_id, Some(1));
        assert_eq!(m.records[0].overlap, 90);
        assert_eq!(m.records[0].pred_size, 100);
        assert_eq!(m.records[1].gt_id, 1);
        assert_eq!(m.records[1].pred_id, Some(2));
        assert_eq!(m.records[1].overlap, 40);
        assert!(m.unassigned_predictions.is_empty());
    }

    #[test]
    fn empty_prediction_omits_everything() {
        let gt = labelled(vec![Some(0), Some(0), Some(1)]);
        let pred = labelled(vec![None, None, None]);
        let m = greedy_tree_matching(&gt, &pred, Correspondence::SameIndex);
        assert!(m.records.iter().all(|r| r.pred_id.is_none() && r.f1 == 0.0));
    }

    #[test]
    fn never_assigned_predictions_are_commissions() {
        let gt = labelled(vec![Some(0), Some(0), None, None]);
        let pred = labelled(vec![Some(5), Some(5), Some(7), Some(9)]);
        let m = greedy_tree_matching(&gt, &pred, Correspondence::SameIndex);
        assert_eq!(m.unassigned_predictions, vec![7, 9]);
    }

    #[test]
    fn point_matching_cases() {
        let gt = labelled((0..10).map(|i| Some(i as InstanceId)).collect());
        let m = match_point_sets(&gt, &gt, 0.1);
        assert_eq!(m, (0..10).map(Some).collect::<Vec<_>>());

        // Every other point of a unit-spaced line kept: tolerance 1.0
        // matches all of them, 0.1 only the kept ones.
        let line =
            LabeledCloud::new((0..10).map(|i| Point::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        let half = line.select(&[0, 2, 4, 6, 8]);
        let m = match_point_sets(&half, &line, 1.0);
        assert!(m.iter().all(Option::is_some));
        let m = match_point_sets(&half, &line, 0.1);
        assert_eq!(m.iter().filter(|o| o.is_none()).count(), 5);

        let far = labelled(vec![Some(0)]);
        let mut shifted = far.clone();
        shifted.translate(0.0, 1.0, 0.0);
        assert_eq!(match_point_sets(&shifted, &far, 0.1), vec![None]);
    }

    #[test]
    fn matched_correspondence_uses_prediction_labels() {
        let gt = labelled(vec![Some(0), Some(0), Some(1), Some(1)]);
        let pred = labelled(vec![Some(3), Some(4)]);
        let corr = vec![Some(0), Some(0), Some(1), None];
        let m = greedy_tree_matching(&gt, &pred, Correspondence::Matched(&corr));
        assert_eq!(m.records[0].pred_id, Some(3));
        assert_eq!(m.records[0].iou, 1.0);
        assert_eq!(m.records[1].pred_id, Some(4));
        assert_eq!(m.records[1].recall, 0.5);
    }
}
