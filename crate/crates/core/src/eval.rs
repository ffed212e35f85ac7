//! Line-level scoring: one-to-one matching at an acceptance threshold,
//! detection rate / recognition accuracy / FM, and 11-point average
//! precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Intersection over union of the two box areas.
    #[default]
    Iou,
    /// Intersection over the ground-truth box area.
    GtCoverage,
}

impl ScoreMode {
    pub fn other(self) -> Self {
        match self {
            ScoreMode::Iou => ScoreMode::GtCoverage,
            ScoreMode::GtCoverage => ScoreMode::Iou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    /// Highest score first, skipping pairs that reuse a box.
    #[default]
    Greedy,
    /// Maximum number of admissible pairs.
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub t_a: f64,
    pub score_mode: ScoreMode,
    pub assignment: Assignment,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            t_a: 0.80,
            score_mode: ScoreMode::Iou,
            assignment: Assignment::Greedy,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_a > 0.0 && self.t_a <= 1.0) {
            return Err(Error::Parameter(format!("t_a must be in (0, 1], got {}", self.t_a)));
        }
        Ok(())
    }
}

pub fn match_score(gt: &BoundingBox, det: &BoundingBox, mode: ScoreMode) -> f64 {
    let inter = gt.intersection_area(det) as f64;
    match mode {
        ScoreMode::Iou => inter / ((gt.area() + det.area()) as f64 - inter),
        ScoreMode::GtCoverage => inter / gt.area() as f64,
    }
}

/// One-to-one pairs `(gt index, det index)` whose score is at least `t_a`.
pub fn match_lines(gt: &[BoundingBox], det: &[BoundingBox], cfg: &MatchConfig) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (g, gb) in gt.iter().enumerate() {
        for (d, db) in det.iter().enumerate() {
            let s = match_score(gb, db, cfg.score_mode);
            if s > 0.0 && s >= cfg.t_a {
                candidates.push((s, g, d));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    match cfg.assignment {
        Assignment::Greedy => greedy(&candidates, gt.len(), det.len()),
        Assignment::Optimal => maximum_matching(&candidates, gt.len(), det.len()),
    }
}

fn greedy(candidates: &[(f64, usize, usize)], n_gt: usize, n_det: usize) -> Vec<(usize, usize)> {
    let mut gt_used = vec![false; n_gt];
    let mut det_used = vec![false; n_det];
    let mut pairs = Vec::new();
    for &(_, g, d) in candidates {
        if !gt_used[g] && !det_used[d] {
            gt_used[g] = true;
            det_used[d] = true;
            pairs.push((g, d));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Kuhn's augmenting-path algorithm. Adjacency lists keep the score order of
/// `candidates`, so higher-scoring partners are tried first.
fn maximum_matching(candidates: &[(f64, usize, usize)], n_gt: usize, n_det: usize) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_gt];
    for &(_, g, d) in candidates {
        adj[g].push(d);
    }
    let mut det_owner: Vec<Option<usize>> = vec![None; n_det];
    for g in 0..n_gt {
        let mut seen = vec![false; n_det];
        augment(g, &adj, &mut det_owner, &mut seen);
    }
    let mut pairs: Vec<(usize, usize)> = det_owner
        .iter()
        .enumerate()
        .filter_map(|(d, o)| o.map(|g| (g, d)))
        .collect();
    pairs.sort_unstable();
    pairs
}

fn augment(g: usize, adj: &[Vec<usize>], det_owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &d in &adj[g] {
        if seen[d] {
            continue;
        }
        seen[d] = true;
        if det_owner[d].is_none_or(|other| augment(other, adj, det_owner, seen)) {
            det_owner[d] = Some(g);
            return true;
        }
    }
    false
}

/// N (ground truth), M (detections) and one-to-one matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    #[serde(rename = "N")]
    pub n_gt: usize,
    #[serde(rename = "M")]
    pub n_det: usize,
    pub o2o: usize,
}

impl std::ops::Add for EvalCounts {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            n_gt: self.n_gt + rhs.n_gt,
            n_det: self.n_det + rhs.n_det,
            o2o: self.o2o + rhs.o2o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    #[serde(rename = "DR")]
    pub dr: f64,
    #[serde(rename = "RA")]
    pub ra: f64,
    #[serde(rename = "FM")]
    pub fm: f64,
}

/// `DR = o2o/N`, `RA = o2o/M`, `FM = 2·DR·RA / (DR + RA)`.
pub fn compute_fm(counts: &EvalCounts) -> Result<Rates> {
    if counts.n_gt == 0 {
        return Err(Error::UndefinedRate {
            code: "empty-ground-truth",
            reason: "DR needs at least one ground-truth line".into(),
        });
    }
    if counts.n_det == 0 {
        return Err(Error::UndefinedRate {
            code: "empty-detections",
            reason: "RA needs at least one detected line".into(),
        });
    }
    if counts.o2o > counts.n_gt.min(counts.n_det) {
        return Err(Error::Parameter(format!(
            "o2o {} exceeds min(N, M) = {}",
            counts.o2o,
            counts.n_gt.min(counts.n_det)
        )));
    }
    let dr = counts.o2o as f64 / counts.n_gt as f64;
    let ra = counts.o2o as f64 / counts.n_det as f64;
    let fm = if dr + ra == 0.0 { 0.0 } else { 2.0 * dr * ra / (dr + ra) };
    Ok(Rates { dr, ra, fm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Highest precision among samples whose recall rounds (half up) to each
    /// 0.1 level; levels without samples take the interpolated value.
    #[default]
    Paper,
    /// Highest precision among samples with recall at or above each level.
    Interpolated,
}

const RECALL_EPS: f64 = 1e-9;

/// Precision at recall levels 0.0, 0.1, ..., 1.0.
pub fn eleven_point_curve(samples: &[(f64, f64)], mode: ApMode) -> Result<[f64; 11]> {
    for &(r, p) in samples {
        if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "recall/precision sample ({r}, {p}) outside [0, 1]"
            )));
        }
    }
    let interpolated = |level: usize| -> f64 {
        let r = level as f64 / 10.0;
        samples
            .iter()
            .filter(|s| s.0 >= r - RECALL_EPS)
            .map(|s| s.1)
            .fold(0.0, f64::max)
    };
    let mut curve = [0.0; 11];
    match mode {
        ApMode::Interpolated => {
            for (k, v) in curve.iter_mut().enumerate() {
                *v = interpolated(k);
            }
        }
        ApMode::Paper => {
            let mut binned: [Option<f64>; 11] = [None; 11];
            for &(r, p) in samples {
                let k = ((r * 10.0 + 0.5 + RECALL_EPS).floor() as usize).min(10);
                binned[k] = Some(binned[k].map_or(p, |q: f64| q.max(p)));
            }
            for (k, v) in curve.iter_mut().enumerate() {
                *v = binned[k].unwrap_or_else(|| interpolated(k));
            }
        }
    }
    Ok(curve)
}

/// Mean of the 11-point precision curve. No samples gives 0.
pub fn eleven_point_ap(samples: &[(f64, f64)], mode: ApMode) -> Result<f64> {
    if samples.is_empty() {
        log::warn!("no recall/precision samples; AP is 0");
        return Ok(0.0);
    }
    let curve = eleven_point_curve(samples, mode)?;
    Ok(curve.iter().sum::<f64>() / 11.0)
}

pub fn mean_ap(per_class_ap: &[f64]) -> Result<f64> {
    if per_class_ap.is_empty() {
        return Err(Error::Parameter("mAP needs at least one class".into()));
    }
    Ok(per_class_ap.iter().sum::<f64>() / per_class_ap.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEval {
    pub id: String,
    #[serde(flatten)]
    pub counts: EvalCounts,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    #[serde(flatten)]
    pub counts: EvalCounts,
    #[serde(rename = "DR")]
    pub dr: f64,
    #[serde(rename = "RA")]
    pub ra: f64,
    #[serde(rename = "FM")]
    pub fm: f64,
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// Aggregate under the other score mode, for sensitivity checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlternateScore {
    pub score_mode: ScoreMode,
    #[serde(flatten)]
    pub counts: EvalCounts,
    #[serde(rename = "DR")]
    pub dr: f64,
    #[serde(rename = "RA")]
    pub ra: f64,
    #[serde(rename = "FM")]
    pub fm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReportConfig {
    #[serde(flatten)]
    pub matching: MatchConfig,
    pub ap_mode: ApMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageEval>,
    pub aggregate: Aggregate,
    /// Precision at recall 0.0, 0.1, ..., 1.0 used for AP.
    pub eleven_point: [f64; 11],
    pub alternate: AlternateScore,
    pub config: EvalReportConfig,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Per-image `(recall, precision)` samples.
    pub fn pr_samples(&self) -> Vec<(f64, f64)> {
        self.per_image.iter().map(|e| (e.recall, e.precision)).collect()
    }
}

/// Per-image precision and recall. Empty denominators count as perfect when
/// the other side is empty too, and as zero otherwise.
pub fn precision_recall(c: &EvalCounts) -> (f64, f64) {
    let precision = match (c.n_det, c.n_gt) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (m, _) => c.o2o as f64 / m as f64,
    };
    let recall = match (c.n_gt, c.n_det) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (n, _) => c.o2o as f64 / n as f64,
    };
    (precision, recall)
}

fn rates_or_zero(counts: &EvalCounts, warnings: &mut Vec<String>, label: &str) -> Rates {
    match compute_fm(counts) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("{label}: {e}; rates reported as 0"));
            Rates {
                dr: if counts.n_gt > 0 {
                    counts.o2o as f64 / counts.n_gt as f64
                } else {
                    0.0
                },
                ra: if counts.n_det > 0 {
                    counts.o2o as f64 / counts.n_det as f64
                } else {
                    0.0
                },
                fm: 0.0,
            }
        }
    }
}

/// Scores every image id present in `gt`.
///
/// Ids found only in `det` are reported as warnings and excluded; ids
/// without detections count as images with zero detected lines. Fails when
/// `gt` and `det` share no id.
pub fn evaluate_dataset(
    gt: &BTreeMap<String, Vec<BoundingBox>>,
    det: &BTreeMap<String, Vec<BoundingBox>>,
    cfg: &MatchConfig,
    ap_mode: ApMode,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    for id in det.keys().filter(|id| !gt.contains_key(*id)) {
        warnings.push(format!("detections for '{id}' have no ground truth; excluded"));
    }
    if !gt.keys().any(|id| det.contains_key(id)) {
        return Err(Error::Parameter("ground truth and detections share no image id".into()));
    }

    let alt_cfg = MatchConfig {
        score_mode: cfg.score_mode.other(),
        ..*cfg
    };
    let empty = Vec::new();
    let mut per_image = Vec::new();
    let mut total = EvalCounts::default();
    let mut alt_total = EvalCounts::default();
    for (id, gt_boxes) in gt {
        let det_boxes = match det.get(id) {
            Some(d) => d,
            None => {
                warnings.push(format!("no detections for '{id}'; counted as zero detected lines"));
                &empty
            }
        };
        let counts = EvalCounts {
            n_gt: gt_boxes.len(),
            n_det: det_boxes.len(),
            o2o: match_lines(gt_boxes, det_boxes, cfg).len(),
        };
        alt_total = alt_total
            + EvalCounts {
                o2o: match_lines(gt_boxes, det_boxes, &alt_cfg).len(),
                ..counts
            };
        total = total + counts;
        let (precision, recall) = precision_recall(&counts);
        per_image.push(ImageEval {
            id: id.clone(),
            counts,
            precision,
            recall,
        });
    }

    let rates = rates_or_zero(&total, &mut warnings, "aggregate");
    let alt_rates = rates_or_zero(&alt_total, &mut warnings, "alternate score mode");
    let samples: Vec<(f64, f64)> = per_image.iter().map(|e| (e.recall, e.precision)).collect();
    let eleven_point = eleven_point_curve(&samples, ap_mode)?;
    let ap = eleven_point_ap(&samples, ap_mode)?;
    let map = mean_ap(&[ap])?;

    Ok(EvalReport {
        per_image,
        aggregate: Aggregate {
            counts: total,
            dr: rates.dr,
            ra: rates.ra,
            fm: rates.fm,
            ap,
            map,
        },
        eleven_point,
        alternate: AlternateScore {
            score_mode: alt_cfg.score_mode,
            counts: alt_total,
            dr: alt_rates.dr,
            ra: alt_rates.ra,
            fm: alt_rates.fm,
        },
        config: EvalReportConfig {
            matching: *cfg,
            ap_mode,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: usize, y0: usize, x1: usize, y1: usize) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    const TABLE_1_4: [(f64, f64); 11] = [
        (1.0, 1.0),
        (0.9, 0.76),
        (0.8, 0.73),
        (0.7, 0.76),
        (0.6, 0.71),
        (0.5, 0.4),
        (0.4, 0.42),
        (0.3, 0.68),
        (0.2, 0.3),
        (0.1, 0.26),
        (0.0, 0.0),
    ];

    #[test]
    fn identity_matches_everything() {
        let boxes = vec![b(0, 0, 99, 19), b(0, 40, 99, 59), b(0, 80, 99, 99)];
        let pairs = match_lines(&boxes, &boxes, &MatchConfig::default());
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn half_overlap_is_rejected() {
        // Equal boxes overlapping in two thirds: IoU = 200 / 400.
        let g = b(0, 0, 29, 9);
        let d = b(10, 0, 39, 9);
        let iou = match_score(&g, &d, ScoreMode::Iou);
        assert!((iou - 0.5).abs() < 1e-12);
        assert!(match_lines(&[g], &[d], &MatchConfig::default()).is_empty());
    }

    #[test]
    fn coverage_mode_accepts_contained_gt() {
        let g = b(10, 10, 49, 29);
        let d = b(0, 0, 99, 39);
        let cfg = MatchConfig {
            score_mode: ScoreMode::GtCoverage,
            ..MatchConfig::default()
        };
        assert_eq!(match_lines(&[g], &[d], &cfg), vec![(0, 0)]);
        assert!(match_lines(&[g], &[d], &MatchConfig::default()).is_empty());
    }

    #[test]
    fn optimal_beats_greedy_on_adversarial_case() {
        // g0 scores highest with d0, but d0 is g1's only partner.
        let cfg = MatchConfig {
            t_a: 0.5,
            score_mode: ScoreMode::GtCoverage,
            assignment: Assignment::Greedy,
        };
        let g0 = b(0, 0, 9, 9);
        let g1 = b(0, 0, 9, 19);
        let d0 = b(0, 0, 9, 19);
        let d1 = b(0, 0, 9, 5);
        let greedy = match_lines(&[g0, g1], &[d0, d1], &cfg);
        let optimal = match_lines(
            &[g0, g1],
            &[d0, d1],
            &MatchConfig {
                assignment: Assignment::Optimal,
                ..cfg
            },
        );
        assert_eq!(greedy.len(), 1);
        assert_eq!(optimal.len(), 2);
    }

    #[test]
    fn fm_reproduces_reported_rows() {
        let r = compute_fm(&EvalCounts {
            n_gt: 2915,
            n_det: 3437,
            o2o: 2591,
        })
        .unwrap();
        assert!((r.dr - 0.8888).abs() <= 0.0005);
        assert!((r.ra - 0.7538).abs() <= 0.0005);
        assert!((r.fm - 0.8157).abs() <= 0.0005);
        let r = compute_fm(&EvalCounts {
            n_gt: 872,
            n_det: 943,
            o2o: 695,
        })
        .unwrap();
        assert!((r.fm - 0.7658).abs() <= 0.0005);
        let r = compute_fm(&EvalCounts {
            n_gt: 5,
            n_det: 5,
            o2o: 5,
        })
        .unwrap();
        assert_eq!((r.dr, r.ra, r.fm), (1.0, 1.0, 1.0));
        let r = compute_fm(&EvalCounts {
            n_gt: 5,
            n_det: 5,
            o2o: 0,
        })
        .unwrap();
        assert_eq!(r.fm, 0.0);
    }

    #[test]
    fn fm_rejects_empty_populations() {
        assert!(matches!(
            compute_fm(&EvalCounts {
                n_gt: 0,
                n_det: 3,
                o2o: 0
            }),
            Err(Error::UndefinedRate {
                code: "empty-ground-truth",
                ..
            })
        ));
        assert!(matches!(
            compute_fm(&EvalCounts {
                n_gt: 3,
                n_det: 0,
                o2o: 0
            }),
            Err(Error::UndefinedRate {
                code: "empty-detections",
                ..
            })
        ));
    }

    #[test]
    fn ap_reproduces_table() {
        let ap = eleven_point_ap(&TABLE_1_4, ApMode::Paper).unwrap();
        assert!((ap - 6.02 / 11.0).abs() < 1e-12);
        assert!((ap - 0.547).abs() <= 0.001);
        assert!((mean_ap(&[ap]).unwrap() - ap).abs() < 1e-15);
        let interp = eleven_point_ap(&TABLE_1_4, ApMode::Interpolated).unwrap();
        assert!(interp >= ap);
    }

    #[test]
    fn ap_edge_cases() {
        let perfect: Vec<(f64, f64)> = (0..=10).map(|k| (k as f64 / 10.0, 1.0)).collect();
        assert_eq!(eleven_point_ap(&perfect, ApMode::Paper).unwrap(), 1.0);
        assert_eq!(eleven_point_ap(&[], ApMode::Paper).unwrap(), 0.0);
        assert_eq!(eleven_point_ap(&[(1.0, 1.0)], ApMode::Paper).unwrap(), 1.0);
        assert!(eleven_point_ap(&[(1.2, 0.5)], ApMode::Paper).is_err());
        // 0.35 rounds half up to 0.4.
        let c = eleven_point_curve(&[(0.35, 0.9), (0.0, 0.1)], ApMode::Paper).unwrap();
        assert_eq!(c[4], 0.9);
        assert_eq!(c[3], 0.9);
        assert_eq!(c[0], 0.1);
    }

    #[test]
    fn mean_ap_values() {
        assert_eq!(mean_ap(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_ap(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() < 1e-12);
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn dataset_identity_and_warnings() {
        let mut gt = BTreeMap::new();
        gt.insert("1_1".to_string(), vec![b(0, 0, 99, 19), b(0, 40, 99, 59)]);
        gt.insert("1_2".to_string(), vec![b(0, 0, 50, 10)]);
        let mut det = gt.clone();
        det.insert("9_9".to_string(), vec![b(0, 0, 5, 5)]);
        let r = evaluate_dataset(&gt, &det, &MatchConfig::default(), ApMode::Paper).unwrap();
        assert_eq!(r.aggregate.fm, 1.0);
        assert_eq!(r.aggregate.ap, 1.0);
        assert_eq!(
            r.aggregate.counts,
            EvalCounts {
                n_gt: 3,
                n_det: 3,
                o2o: 3
            }
        );
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("9_9"));

        let mut other = BTreeMap::new();
        other.insert("x".to_string(), vec![]);
        assert!(evaluate_dataset(&gt, &other, &MatchConfig::default(), ApMode::Paper).is_err());
    }

    #[test]
    fn report_json_shape() {
        let mut gt = BTreeMap::new();
        gt.insert("3_1".to_string(), vec![b(0, 0, 9, 9)]);
        let r = evaluate_dataset(&gt, &gt, &MatchConfig::default(), ApMode::Paper).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["N", "M", "o2o", "DR", "RA", "FM", "AP", "mAP"] {
            assert!(v["aggregate"].get(key).is_some(), "missing aggregate.{key}");
        }
        for key in ["id", "N", "M", "o2o", "precision", "recall"] {
            assert!(v["per_image"][0].get(key).is_some(), "missing per_image.{key}");
        }
        assert_eq!(v["config"]["t_a"], 0.8);
        assert!(v["warnings"].as_array().unwrap().is_empty());
    }
}
