//! Segmentation and detection scores: foreground IoU/Dice, one-to-one
//! instance matching, centre detection precision/recall, and correlations.

mod assignment;

pub use assignment::max_weight_assignment;

use crate::geometry::Point;
use crate::maskops::{CenterSet, InstanceLabelMap};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    DimensionMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("matching tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("series is constant")]
    ConstantSeries,
}

/// Pixel counts behind the foreground overlap scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub union: u64,
    pub pred: u64,
    pub gt: u64,
}

impl OverlapCounts {
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }

    pub fn dice(&self) -> f64 {
        if self.pred + self.gt == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.pred + self.gt) as f64
        }
    }
}

impl std::ops::Add for OverlapCounts {
    type Output = OverlapCounts;
    fn add(self, o: OverlapCounts) -> OverlapCounts {
        OverlapCounts {
            intersection: self.intersection + o.intersection,
            union: self.union + o.union,
            pred: self.pred + o.pred,
            gt: self.gt + o.gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: u32,
    pub gt: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEvalReport {
    pub aggregate_iou: f64,
    pub aggregate_dice: f64,
    pub overlap: OverlapCounts,
    pub iou_threshold: f64,
    pub matched_pairs: Vec<MatchedPair>,
    pub mean_matched_iou: f64,
    pub mean_matched_dice: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub detection_precision: f64,
    pub detection_recall: f64,
    pub detection_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub tp: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
}

fn check_shapes(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<(), MetricsError> {
    if !pred.same_shape(gt) {
        return Err(MetricsError::DimensionMismatch {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    Ok(())
}

pub fn overlap_counts(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<OverlapCounts, MetricsError> {
    check_shapes(pred, gt)?;
    let mut c = OverlapCounts::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p != 0, g != 0);
        c.intersection += (p && g) as u64;
        c.union += (p || g) as u64;
        c.pred += p as u64;
        c.gt += g as u64;
    }
    Ok(c)
}

/// Foreground IoU and Dice; both are 1 when neither map has foreground.
pub fn aggregate_overlap(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<(f64, f64), MetricsError> {
    let c = overlap_counts(pred, gt)?;
    Ok((c.iou(), c.dice()))
}

/// Precision/recall convention shared by instance and centre matching: an
/// empty denominator scores 1 when the other side is empty too, else 0.
fn ratio(tp: usize, denom: usize, other: usize) -> f64 {
    match (denom, other) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => tp as f64 / denom as f64,
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1 from match counts; both sets empty scores 1.
pub fn precision_recall_f1(tp: usize, n_pred: usize, n_gt: usize) -> (f64, f64, f64) {
    let p = ratio(tp, n_pred, n_gt);
    let r = ratio(tp, n_gt, n_pred);
    (p, r, f1(p, r))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

/// One-to-one instance matching that maximises total IoU over pairs with
/// IoU at or above `iou_threshold`.
///
/// Candidate pairs split into connected components of the pred/gt overlap
/// graph, and each component is solved exactly with the Hungarian method.
pub fn match_instances(
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    iou_threshold: f64,
) -> Result<SegEvalReport, MetricsError> {
    check_shapes(pred, gt)?;
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(MetricsError::InvalidThreshold(iou_threshold));
    }
    let overlap = overlap_counts(pred, gt)?;

    let mut pred_area: BTreeMap<u32, u64> = BTreeMap::new();
    let mut gt_area: BTreeMap<u32, u64> = BTreeMap::new();
    let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != 0 {
            *pred_area.entry(p).or_insert(0) += 1;
        }
        if g != 0 {
            *gt_area.entry(g).or_insert(0) += 1;
        }
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }

    let pred_ids: Vec<u32> = pred_area.keys().copied().collect();
    let gt_ids: Vec<u32> = gt_area.keys().copied().collect();
    let pred_idx: HashMap<u32, usize> = pred_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let gt_idx: HashMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut edges: Vec<(usize, usize, f64)> = inter
        .iter()
        .filter_map(|(&(p, g), &i)| {
            let u = pred_area[&p] + gt_area[&g] - i;
            let iou = i as f64 / u as f64;
            (iou >= iou_threshold).then(|| (pred_idx[&p], gt_idx[&g], iou))
        })
        .collect();
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let np = pred_ids.len();
    let mut uf = UnionFind((0..np + gt_ids.len()).collect());
    for &(p, g, _) in &edges {
        uf.union(p, np + g);
    }
    let mut components: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for &e in &edges {
        components.entry(uf.find(e.0)).or_default().push(e);
    }

    let mut matched = Vec::new();
    for comp in components.values() {
        if comp.len() == 1 {
            let (p, g, iou) = comp[0];
            matched.push(MatchedPair { pred: pred_ids[p], gt: gt_ids[g], iou });
            continue;
        }
        let mut rows: Vec<usize> = comp.iter().map(|e| e.0).collect();
        let mut cols: Vec<usize> = comp.iter().map(|e| e.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        let mut w = vec![vec![0.0; cols.len()]; rows.len()];
        for &(p, g, iou) in comp {
            let r = rows.binary_search(&p).unwrap();
            let c = cols.binary_search(&g).unwrap();
            w[r][c] = iou;
        }
        for (r, c) in max_weight_assignment(&w).into_iter().enumerate() {
            if let Some(c) = c {
                if w[r][c] > 0.0 {
                    matched.push(MatchedPair { pred: pred_ids[rows[r]], gt: gt_ids[cols[c]], iou: w[r][c] });
                }
            }
        }
    }
    matched.sort_by_key(|m| (m.pred, m.gt));

    let tp = matched.len();
    let (n_pred, n_gt) = (pred_ids.len(), gt_ids.len());
    let (mean_iou, mean_dice) = if tp == 0 {
        let vacuous = if n_pred == 0 && n_gt == 0 { 1.0 } else { 0.0 };
        (vacuous, vacuous)
    } else {
        let s_iou: f64 = matched.iter().map(|m| m.iou).sum();
        let s_dice: f64 = matched.iter().map(|m| 2.0 * m.iou / (1.0 + m.iou)).sum();
        (s_iou / tp as f64, s_dice / tp as f64)
    };
    let precision = ratio(tp, n_pred, n_gt);
    let recall = ratio(tp, n_gt, n_pred);
    Ok(SegEvalReport {
        aggregate_iou: overlap.iou(),
        aggregate_dice: overlap.dice(),
        overlap,
        iou_threshold,
        matched_pairs: matched,
        mean_matched_iou: mean_iou,
        mean_matched_dice: mean_dice,
        n_pred,
        n_gt,
        tp,
        fp: n_pred - tp,
        fn_: n_gt - tp,
        detection_precision: precision,
        detection_recall: recall,
        detection_f1: f1(precision, recall),
    })
}

/// Centre-to-centre detection scores.
///
/// Pairs within `tolerance` are matched greedily in order of increasing
/// distance (mutual nearest first), then the matching is grown along
/// augmenting paths until no further pair can be added.
pub fn detection_metrics(
    pred: &CenterSet,
    gt: &CenterSet,
    tolerance: f64,
) -> Result<DetectionScores, MetricsError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(MetricsError::InvalidTolerance(tolerance));
    }
    let adj = candidate_pairs(&pred.points, &gt.points, tolerance);
    let tp = max_cardinality_matching(&adj, gt.len());
    let precision = ratio(tp, pred.len(), gt.len());
    let recall = ratio(tp, gt.len(), pred.len());
    Ok(DetectionScores { tp, precision, recall, f1: f1(precision, recall) })
}

/// For every pred point, the gt points within `tol`, nearest first.
fn candidate_pairs(pred: &[Point], gt: &[Point], tol: f64) -> Vec<Vec<(f64, usize)>> {
    let cell = |p: Point| ((p.x / tol).floor() as i64, (p.y / tol).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, &g) in gt.iter().enumerate() {
        grid.entry(cell(g)).or_default().push(j);
    }
    pred.iter()
        .map(|&p| {
            let (cx, cy) = cell(p);
            let mut near = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(list) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in list {
                            let d = p.dist(gt[j]);
                            if d <= tol {
                                near.push((d, j));
                            }
                        }
                    }
                }
            }
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near
        })
        .collect()
}

fn max_cardinality_matching(adj: &[Vec<(f64, usize)>], n_gt: usize) -> usize {
    let mut pred_match = vec![usize::MAX; adj.len()];
    let mut gt_match = vec![usize::MAX; n_gt];

    let mut pairs: Vec<(f64, usize, usize)> =
        adj.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&(d, j)| (d, i, j))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    for (_, i, j) in pairs {
        if pred_match[i] == usize::MAX && gt_match[j] == usize::MAX {
            pred_match[i] = j;
            gt_match[j] = i;
        }
    }

    // BFS augmenting paths from each free pred vertex.
    for start in 0..adj.len() {
        if pred_match[start] != usize::MAX || adj[start].is_empty() {
            continue;
        }
        let mut parent_gt = vec![usize::MAX; n_gt]; // pred that reached gt j
        let mut queue = std::collections::VecDeque::from([start]);
        let mut end = None;
        'bfs: while let Some(i) = queue.pop_front() {
            for &(_, j) in &adj[i] {
                if parent_gt[j] != usize::MAX {
                    continue;
                }
                parent_gt[j] = i;
                if gt_match[j] == usize::MAX {
                    end = Some(j);
                    break 'bfs;
                }
                queue.push_back(gt_match[j]);
            }
        }
        let Some(mut j) = end else { continue };
        loop {
            let i = parent_gt[j];
            let prev = pred_match[i];
            pred_match[i] = j;
            gt_match[j] = i;
            if i == start {
                break;
            }
            j = prev;
        }
    }
    pred_match.iter().filter(|&&m| m != usize::MAX).count()
}

fn check_series(xs: &[f64], ys: &[f64]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewSamples(xs.len()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_series(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_series(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

pub fn correlation_report(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport, MetricsError> {
    Ok(CorrelationReport { pearson_r: pearson(xs, ys)?, spearman_rho: spearman(xs, ys)?, n: xs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn map(w: usize, h: usize, labels: Vec<u32>) -> InstanceLabelMap {
        InstanceLabelMap::from_vec(w, h, labels).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let mut a = InstanceLabelMap::new(4, 4).unwrap();
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            a.set(x, y, 1);
        }
        assert_eq!(aggregate_overlap(&a, &a).unwrap(), (1.0, 1.0));

        let mut b = InstanceLabelMap::new(4, 4).unwrap();
        for (x, y) in [(1, 0), (2, 0), (1, 1), (2, 1)] {
            b.set(x, y, 3);
        }
        let (iou, dice) = aggregate_overlap(&a, &b).unwrap();
        assert_eq!(iou, 1.0 / 3.0);
        assert_eq!(dice, 0.5);

        let mut c = InstanceLabelMap::new(4, 4).unwrap();
        c.set(3, 3, 1);
        assert_eq!(aggregate_overlap(&a, &c).unwrap(), (0.0, 0.0));

        let e = InstanceLabelMap::new(4, 4).unwrap();
        assert_eq!(aggregate_overlap(&e, &e).unwrap(), (1.0, 1.0));
        let wide = InstanceLabelMap::new(5, 4).unwrap();
        assert!(matches!(aggregate_overlap(&a, &wide), Err(MetricsError::DimensionMismatch { .. })));
    }

    #[test]
    fn matching_examples() {
        let gt = map(6, 1, vec![1, 1, 0, 2, 2, 0]);
        let r = match_instances(&gt, &gt, 0.5).unwrap();
        assert_eq!(r.tp, 2);
        assert_eq!((r.fp, r.fn_), (0, 0));
        assert!(r.matched_pairs.iter().all(|m| m.iou == 1.0));

        let empty = InstanceLabelMap::new(6, 1).unwrap();
        let r = match_instances(&empty, &gt, 0.5).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp), (0, 2, 0));
        assert_eq!((r.detection_precision, r.detection_recall, r.detection_f1), (0.0, 0.0, 0.0));

        let r = match_instances(&empty, &empty, 0.5).unwrap();
        assert_eq!((r.detection_precision, r.detection_recall, r.mean_matched_iou), (1.0, 1.0, 1.0));

        assert!(matches!(match_instances(&gt, &gt, 0.0), Err(MetricsError::InvalidThreshold(_))));
        assert!(matches!(match_instances(&gt, &gt, 1.5), Err(MetricsError::InvalidThreshold(_))));
    }

    #[test]
    fn low_threshold_prefers_optimal_total() {
        // pred 1 overlaps gt A strongly and gt B weakly; pred 2 only overlaps gt A.
        // Greedy by IoU would take (1,A) and leave pred 2 unmatched.
        let pred = map(10, 1, vec![1, 1, 1, 1, 1, 1, 2, 2, 0, 0]);
        let gt = map(10, 1, vec![5, 5, 5, 5, 6, 6, 6, 6, 6, 6]);
        let r = match_instances(&pred, &gt, 0.1).unwrap();
        assert_eq!(r.tp, 2);
        let total: f64 = r.matched_pairs.iter().map(|m| m.iou).sum();
        // (1,5) = 4/6, (2,6) = 2/6  vs  (1,6) = 2/10, (2,5) = 0
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detection_examples() {
        let pts = CenterSet::from_points(vec![Point::new(1.0, 1.0), Point::new(5.0, 5.0)]);
        let s = detection_metrics(&pts, &pts, 1.0).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = detection_metrics(&CenterSet::default(), &pts, 1.0).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = detection_metrics(&CenterSet::default(), &CenterSet::default(), 1.0).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert!(detection_metrics(&pts, &pts, 0.0).is_err());

        // greedy would pair p0-g0 and strand p1; augmentation recovers both
        let pred = CenterSet::from_points(vec![Point::new(0.0, 0.0), Point::new(-1.35, 0.0)]);
        let gt = CenterSet::from_points(vec![Point::new(-0.5, 0.0), Point::new(1.3, 0.0)]);
        assert_eq!(detection_metrics(&pred, &gt, 1.4).unwrap().tp, 2);
    }

    fn brute_max_matching(pred: &[Point], gt: &[Point], tol: f64) -> usize {
        fn go(i: usize, pred: &[Point], gt: &[Point], tol: f64, used: &mut Vec<bool>) -> usize {
            if i == pred.len() {
                return 0;
            }
            let mut best = go(i + 1, pred, gt, tol, used);
            for j in 0..gt.len() {
                if !used[j] && pred[i].dist(gt[j]) <= tol {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, pred, gt, tol, used));
                    used[j] = false;
                }
            }
            best
        }
        go(0, pred, gt, tol, &mut vec![false; gt.len()])
    }

    #[test]
    fn detection_matches_exhaustive_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let np = rng.gen_range(0..=8);
            let ng = rng.gen_range(0..=8);
            let pred: Vec<Point> = (0..np).map(|_| Point::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0))).collect();
            let gt: Vec<Point> = (0..ng).map(|_| Point::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0))).collect();
            let tol = rng.gen_range(0.5..2.5);
            let s = detection_metrics(&CenterSet::from_points(pred.clone()), &CenterSet::from_points(gt.clone()), tol).unwrap();
            assert_eq!(s.tp, brute_max_matching(&pred, &gt, tol));
        }
    }

    #[test]
    fn correlation_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        let cubed: Vec<f64> = xs.iter().map(|x| x * x * x + 7.0).collect();
        assert!((spearman(&xs, &cubed).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(MetricsError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ConstantSeries));
        assert_eq!(spearman(&[1.0], &[1.0]), Err(MetricsError::TooFewSamples(1)));
    }

    #[test]
    fn spearman_with_ties_matches_ranking_oracle() {
        let xs = [3.0, 1.0, 3.0, 2.0, 5.0, 1.0];
        let ys = [1.0, 2.0, 2.0, 2.0, 9.0, 0.5];
        // ranks worked by hand: xs -> [4.5, 1.5, 4.5, 3, 6, 1.5], ys -> [2, 4, 4, 4, 6, 1]
        let rx = [4.5, 1.5, 4.5, 3.0, 6.0, 1.5];
        let ry = [2.0, 4.0, 4.0, 4.0, 6.0, 1.0];
        assert_eq!(average_ranks(&xs), rx);
        assert_eq!(average_ranks(&ys), ry);
        let mean = 3.5;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for k in 0..6 {
            sxy += (rx[k] - mean) * (ry[k] - mean);
            sxx += (rx[k] - mean) * (rx[k] - mean);
            syy += (ry[k] - mean) * (ry[k] - mean);
        }
        let oracle = sxy / (sxx * syy).sqrt();
        assert!((spearman(&xs, &ys).unwrap() - oracle).abs() < 1e-14);
    }

    fn random_map(rng: &mut impl Rng, w: usize, h: usize, k: u32) -> InstanceLabelMap {
        map(w, h, (0..w * h).map(|_| if rng.gen_bool(0.4) { 0 } else { rng.gen_range(1..=k) }).collect())
    }

    #[test]
    fn relabeling_changes_nothing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let a = random_map(&mut rng, 12, 9, 5);
        let b = random_map(&mut rng, 12, 9, 5);
        let perm = [0u32, 40, 7, 19, 3, 1000];
        let b2 = map(12, 9, b.labels().iter().map(|&l| perm[l as usize]).collect());
        let r1 = match_instances(&a, &b, 0.2).unwrap();
        let r2 = match_instances(&a, &b2, 0.2).unwrap();
        assert_eq!((r1.tp, r1.aggregate_iou, r1.mean_matched_iou), (r2.tp, r2.aggregate_iou, r2.mean_matched_iou));
    }

    proptest! {
        #[test]
        fn dice_iou_identity_and_symmetry(a in prop::collection::vec(0u32..3, 64), b in prop::collection::vec(0u32..3, 64)) {
            let (a, b) = (map(8, 8, a), map(8, 8, b));
            let (iou, dice) = aggregate_overlap(&a, &b).unwrap();
            prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
            prop_assert_eq!(aggregate_overlap(&b, &a).unwrap(), (iou, dice));
            prop_assert_eq!(match_instances(&a, &b, 0.3).unwrap().tp, match_instances(&b, &a, 0.3).unwrap().tp);
        }

        #[test]
        fn agreeing_pixel_never_lowers_iou(a in prop::collection::vec(0u32..2, 36), b in prop::collection::vec(0u32..2, 36), idx in 0usize..36) {
            let (ma, mb) = (map(6, 6, a.clone()), map(6, 6, b));
            let before = aggregate_overlap(&ma, &mb).unwrap().0;
            let mut a2 = a;
            a2[idx] = u32::from(mb.labels()[idx] != 0);
            let after = aggregate_overlap(&map(6, 6, a2), &mb).unwrap().0;
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn correlation_invariances(xs in prop::collection::vec(-100.0f64..100.0, 3..20), scale in 0.1f64..10.0, shift in -50.0f64..50.0) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + i as f64 * 0.1).collect();
            if let (Ok(r), Ok(rho)) = (pearson(&xs, &ys), spearman(&xs, &ys)) {
                let xs2: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
                prop_assert!((pearson(&xs2, &ys).unwrap() - r).abs() < 1e-9);
                let xs3: Vec<f64> = xs.iter().map(|x| x.exp().min(1e300)).collect();
                prop_assert!((spearman(&xs3, &ys).unwrap() - rho).abs() < 1e-12);
            }
        }
    }
}
