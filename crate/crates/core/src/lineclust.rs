//! Grouping component midpoints into text lines with OPTICS over the
//! vertical axis, then assembling and cropping the lines.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::components::{BoundingBox, ComponentSet};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// How the reachability plot is cut into clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EpsCut {
    /// `max(factor * median finite reachability, floor)`.
    Auto {
        factor: f64,
        floor: f64,
    },
    Fixed {
        eps: f64,
    },
}

impl Default for EpsCut {
    fn default() -> Self {
        EpsCut::Auto {
            factor: 4.0,
            floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticsParams {
    /// Neighbourhood size, counting the point itself.
    pub min_samples: usize,
    /// Neighbourhood radius; `f64::INFINITY` for unbounded.
    #[serde(with = "finite_or_inf")]
    pub max_eps: f64,
    pub cut: EpsCut,
}

impl Default for OpticsParams {
    fn default() -> Self {
        Self {
            min_samples: 3,
            max_eps: f64::INFINITY,
            cut: EpsCut::default(),
        }
    }
}

impl OpticsParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples == 0 {
            return Err(Error::Parameter("min_samples must be at least 1".into()));
        }
        if !(self.max_eps > 0.0) {
            return Err(Error::Parameter(format!(
                "max_eps must be positive, got {}",
                self.max_eps
            )));
        }
        Ok(())
    }
}

/// TOML has no infinity literal; serialize unbounded radii as `"inf"`.
pub(crate) mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// One step of the OPTICS ordering. Undefined distances are `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingEntry {
    pub index: usize,
    pub reachability: f64,
    pub core_distance: f64,
}

#[derive(PartialEq)]
struct Seed {
    reach: f64,
    index: usize,
}

impl Eq for Seed {}

impl Ord for Seed {
    // Reversed for a min-heap on (reach, index).
    fn cmp(&self, other: &Self) -> Ordering {
        other.reach.total_cmp(&self.reach).then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Seed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// OPTICS ordering of 1-D points.
///
/// Sweeps start from the lowest unprocessed index. Seeds are expanded in
/// `(reachability, index)` order, so the output is fully deterministic.
pub fn optics_order(points: &[f64], params: &OpticsParams) -> Result<Vec<OrderingEntry>> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::Parameter("OPTICS needs at least one point".into()));
    }
    if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::Parameter(format!("non-finite point {bad}")));
    }
    let n = points.len();
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
    let values: Vec<f64> = sorted.iter().map(|&i| points[i]).collect();
    let mut rank = vec![0usize; n];
    for (r, &i) in sorted.iter().enumerate() {
        rank[i] = r;
    }

    let core: Vec<f64> = (0..n)
        .map(|i| core_distance(&values, rank[i], points[i], params))
        .collect();

    let mut processed = vec![false; n];
    let mut reach = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();

    for start in 0..n {
        if processed[start] {
            continue;
        }
        processed[start] = true;
        out.push(OrderingEntry {
            index: start,
            reachability: f64::INFINITY,
            core_distance: core[start],
        });
        if !core[start].is_finite() {
            continue;
        }
        update_seeds(
            start, points, &values, &sorted, &core, &processed, &mut reach, &mut heap, params,
        );
        while let Some(Seed { reach: r, index: q }) = heap.pop() {
            if processed[q] || r != reach[q] {
                continue;
            }
            processed[q] = true;
            out.push(OrderingEntry {
                index: q,
                reachability: r,
                core_distance: core[q],
            });
            if core[q].is_finite() {
                update_seeds(
                    q, points, &values, &sorted, &core, &processed, &mut reach, &mut heap, params,
                );
            }
        }
    }
    Ok(out)
}

/// Distance to the `min_samples`-th nearest point (self included), or
/// `+inf` when that exceeds `max_eps`.
fn core_distance(values: &[f64], pos: usize, v: f64, params: &OpticsParams) -> f64 {
    let k = params.min_samples;
    if k > values.len() {
        return f64::INFINITY;
    }
    // Grow a window around `pos` one nearest point at a time.
    let (mut lo, mut hi) = (pos, pos);
    let mut kth = 0.0;
    for _ in 1..k {
        let left = (lo > 0).then(|| (v - values[lo - 1]).abs());
        let right = (hi + 1 < values.len()).then(|| (values[hi + 1] - v).abs());
        match (left, right) {
            (Some(l), Some(r)) if l <= r => {
                lo -= 1;
                kth = l;
            }
            (Some(_), Some(r)) | (None, Some(r)) => {
                hi += 1;
                kth = r;
            }
            (Some(l), None) => {
                lo -= 1;
                kth = l;
            }
            (None, None) => unreachable!("k <= n"),
        }
    }
    if kth <= params.max_eps {
        kth
    } else {
        f64::INFINITY
    }
}

#[allow(clippy::too_many_arguments)]
fn update_seeds(
    p: usize,
    points: &[f64],
    values: &[f64],
    sorted: &[usize],
    core: &[f64],
    processed: &[bool],
    reach: &mut [f64],
    heap: &mut BinaryHeap<Seed>,
    params: &OpticsParams,
) {
    let v = points[p];
    let lo = values.partition_point(|&x| x < v - params.max_eps);
    let hi = values.partition_point(|&x| x <= v + params.max_eps);
    for &o in &sorted[lo..hi] {
        if processed[o] {
            continue;
        }
        let d = (points[o] - v).abs();
        if d > params.max_eps {
            continue;
        }
        let new_reach = core[p].max(d);
        if new_reach < reach[o] {
            reach[o] = new_reach;
            heap.push(Seed {
                reach: new_reach,
                index: o,
            });
        }
    }
}

/// Resolves the cut level for `ordering`.
pub fn eps_cut(ordering: &[OrderingEntry], cut: &EpsCut) -> f64 {
    match *cut {
        EpsCut::Fixed { eps } => eps,
        EpsCut::Auto { factor, floor } => {
            let mut finite: Vec<f64> = ordering
                .iter()
                .map(|e| e.reachability)
                .filter(|r| r.is_finite())
                .collect();
            if finite.is_empty() {
                return floor;
            }
            finite.sort_by(f64::total_cmp);
            (factor * median_sorted(&finite)).max(floor)
        }
    }
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Cluster label per point (indexed like the input points); `-1` is noise.
///
/// A point whose reachability exceeds the cut opens a new run; following
/// points at or below the cut join it. Runs shorter than `min_samples` are
/// noise. Cluster ids count up in ordering order.
pub fn extract_clusters(ordering: &[OrderingEntry], params: &OpticsParams) -> Vec<i64> {
    let cut = eps_cut(ordering, &params.cut);
    let n = ordering.len();
    let mut labels = vec![-1i64; n];
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for e in ordering {
        if e.reachability > cut || runs.is_empty() {
            runs.push(vec![e.index]);
        } else {
            runs.last_mut().expect("non-empty").push(e.index);
        }
    }
    let mut next = 0i64;
    for run in runs {
        if run.len() >= params.min_samples {
            for i in run {
                labels[i] = next;
            }
            next += 1;
        }
    }
    labels
}

/// One detected text line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextLine {
    /// 0-based, top to bottom.
    pub line_index: usize,
    pub cluster_id: i64,
    pub members: Vec<BoundingBox>,
    pub crop: BoundingBox,
    pub y_top: usize,
    pub y_bottom: usize,
}

impl TextLine {
    pub fn mean_cy(&self) -> f64 {
        self.members.iter().map(|b| b.midpoint().1).sum::<f64>() / self.members.len() as f64
    }
}

/// Builds one [`TextLine`] per cluster.
///
/// Noise boxes join the cluster with the nearest mean `cy` when that distance
/// is at most the median gap between consecutive cluster means (for a single
/// cluster: the larger of its height and 5% of the page height); otherwise
/// they are dropped. Lines are ordered by mean member `cy`.
pub fn assemble_lines(components: &ComponentSet, labels: &[i64]) -> Result<Vec<TextLine>> {
    if labels.len() != components.boxes.len() {
        return Err(Error::Parameter(format!(
            "{} labels for {} boxes",
            labels.len(),
            components.boxes.len()
        )));
    }
    let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut noise = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            noise.push(i);
        } else {
            clusters.entry(l).or_default().push(i);
        }
    }
    if clusters.is_empty() {
        return Ok(Vec::new());
    }

    let cy = |i: usize| components.boxes[i].midpoint().1;
    let mean = |members: &[usize]| members.iter().map(|&i| cy(i)).sum::<f64>() / members.len() as f64;
    let means: Vec<(i64, f64)> = clusters.iter().map(|(&id, m)| (id, mean(m))).collect();

    let mut sorted_means: Vec<f64> = means.iter().map(|&(_, m)| m).collect();
    sorted_means.sort_by(f64::total_cmp);
    let reach = if sorted_means.len() >= 2 {
        let mut gaps: Vec<f64> = sorted_means.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        median_sorted(&gaps)
    } else {
        let members = &clusters[&means[0].0];
        let span = BoundingBox::enclosing(members.iter().map(|&i| &components.boxes[i])).map_or(0, |b| b.height());
        (span as f64).max(0.05 * components.height as f64)
    };

    for i in noise {
        let y = cy(i);
        let nearest = means
            .iter()
            .min_by(|a, b| (a.1 - y).abs().total_cmp(&(b.1 - y).abs()).then(a.0.cmp(&b.0)))
            .expect("at least one cluster");
        if (nearest.1 - y).abs() <= reach {
            clusters.get_mut(&nearest.0).expect("known cluster").push(i);
        }
    }

    let mut lines: Vec<TextLine> = clusters
        .into_iter()
        .map(|(id, mut idx)| {
            idx.sort_unstable();
            let members: Vec<BoundingBox> = idx.iter().map(|&i| components.boxes[i]).collect();
            let crop = BoundingBox::enclosing(&members).expect("non-empty cluster");
            TextLine {
                line_index: 0,
                cluster_id: id,
                y_top: crop.y_min,
                y_bottom: crop.y_max,
                members,
                crop,
            }
        })
        .collect();
    lines.sort_by(|a, b| {
        a.mean_cy()
            .total_cmp(&b.mean_cy())
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    for (k, line) in lines.iter_mut().enumerate() {
        line.line_index = k;
    }
    Ok(lines)
}

/// Cuts each line's crop rectangle out of `image`, in line order.
pub fn crop_lines(image: &RasterImage, lines: &[TextLine]) -> Result<Vec<RasterImage>> {
    let mut ordered: Vec<&TextLine> = lines.iter().collect();
    ordered.sort_by_key(|l| l.line_index);
    ordered
        .into_iter()
        .map(|l| image.crop(l.crop.x_min, l.y_top, l.crop.x_max, l.y_bottom))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::AreaMode;

    fn params(min_samples: usize) -> OpticsParams {
        OpticsParams {
            min_samples,
            ..OpticsParams::default()
        }
    }

    fn set_of(boxes: Vec<BoundingBox>, height: usize) -> ComponentSet {
        ComponentSet {
            pixel_counts: boxes.iter().map(|b| b.area()).collect(),
            boxes,
            width: 1000,
            height,
            min_area_used: 0.0,
            area_mode: AreaMode::BoxArea,
        }
    }

    fn bx(x: usize, cy: usize, half_h: usize) -> BoundingBox {
        BoundingBox::new(x, cy - half_h, x + 20, cy + half_h).unwrap()
    }

    #[test]
    fn single_point() {
        let o = optics_order(&[5.0], &params(1)).unwrap();
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].reachability, f64::INFINITY);
        assert_eq!(o[0].core_distance, 0.0);
        assert!(optics_order(&[], &params(1)).is_err());
    }

    #[test]
    fn two_triplets() {
        let pts = [0.0, 1.0, 2.0, 100.0, 101.0, 102.0];
        let o = optics_order(&pts, &params(2)).unwrap();
        let jumps: Vec<usize> = o
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, e)| e.reachability > 50.0)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(jumps, vec![3]);
        let labels = extract_clusters(&o, &params(2));
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn identical_points_have_zero_reachability() {
        let o = optics_order(&[7.0; 6], &params(3)).unwrap();
        assert!(o[1..].iter().all(|e| e.reachability == 0.0));
        assert_eq!(extract_clusters(&o, &params(3)), vec![0; 6]);
    }

    #[test]
    fn too_few_points_is_all_noise() {
        let o = optics_order(&[1.0, 2.0], &params(3)).unwrap();
        assert_eq!(extract_clusters(&o, &params(3)), vec![-1, -1]);
    }

    #[test]
    fn bounded_eps_leaves_far_points_unreached() {
        let p = OpticsParams {
            min_samples: 2,
            max_eps: 5.0,
            cut: EpsCut::Fixed { eps: 3.0 },
        };
        let o = optics_order(&[0.0, 1.0, 50.0, 51.0], &p).unwrap();
        assert_eq!(o.iter().filter(|e| e.reachability.is_infinite()).count(), 2);
        assert_eq!(extract_clusters(&o, &p), vec![0, 0, 1, 1]);
    }

    #[test]
    fn assemble_orders_lines() {
        let mut boxes = Vec::new();
        let mut labels = Vec::new();
        for (cluster, cy) in [(2, 500), (0, 100), (1, 300)] {
            for k in 0..3 {
                boxes.push(bx(10 + 40 * k, cy, 10));
                labels.push(cluster);
            }
        }
        let lines = assemble_lines(&set_of(boxes, 700), &labels).unwrap();
        assert_eq!(lines.len(), 3);
        let order: Vec<(usize, i64)> = lines.iter().map(|l| (l.line_index, l.cluster_id)).collect();
        assert_eq!(order, vec![(0, 0), (1, 1), (2, 2)]);
        let top = &lines[0];
        assert_eq!((top.y_top, top.y_bottom), (90, 110));
        assert_eq!((top.crop.x_min, top.crop.x_max), (10, 110));
    }

    #[test]
    fn noise_attaches_to_nearest_line() {
        let mut boxes = vec![bx(10, 300, 10), bx(50, 300, 10), bx(90, 300, 10)];
        boxes.extend([bx(10, 500, 10), bx(50, 500, 10), bx(90, 500, 10)]);
        boxes.push(bx(200, 310, 4));
        let labels = vec![0, 0, 0, 1, 1, 1, -1];
        let lines = assemble_lines(&set_of(boxes.clone(), 800), &labels).unwrap();
        assert_eq!(lines[0].members.len(), 4);
        assert!(lines[0].members.contains(&boxes[6]));
        assert_eq!(lines[1].members.len(), 3);

        // Far above the first line: more than one median gap away.
        boxes[6] = bx(200, 60, 4);
        let lines = assemble_lines(&set_of(boxes, 800), &labels).unwrap();
        assert_eq!(lines.iter().map(|l| l.members.len()).sum::<usize>(), 6);
    }

    #[test]
    fn assemble_edge_cases() {
        assert!(assemble_lines(&set_of(vec![], 100), &[]).unwrap().is_empty());
        let boxes = vec![bx(10, 50, 5)];
        assert!(assemble_lines(&set_of(boxes.clone(), 100), &[-1]).unwrap().is_empty());
        assert!(assemble_lines(&set_of(boxes, 100), &[]).is_err());
    }

    #[test]
    fn crops_have_line_geometry() {
        let img = RasterImage::from_fn(600, 300, |x, y| ((x + y) % 256) as u8);
        let a = TextLine {
            line_index: 1,
            cluster_id: 0,
            members: vec![BoundingBox::new(20, 150, 80, 170).unwrap()],
            crop: BoundingBox::new(20, 150, 80, 170).unwrap(),
            y_top: 150,
            y_bottom: 170,
        };
        let b = TextLine {
            line_index: 0,
            cluster_id: 1,
            members: vec![BoundingBox::new(10, 40, 500, 95).unwrap()],
            crop: BoundingBox::new(10, 40, 500, 95).unwrap(),
            y_top: 40,
            y_bottom: 95,
        };
        let crops = crop_lines(&img, &[a.clone(), b]).unwrap();
        assert_eq!((crops[0].width(), crops[0].height()), (491, 56));
        assert_eq!((crops[1].width(), crops[1].height()), (61, 21));
        assert_eq!(crops[0].get(0, 0), img.get(10, 40));

        let out = TextLine {
            crop: BoundingBox::new(20, 150, 800, 170).unwrap(),
            ..a
        };
        assert!(matches!(crop_lines(&img, &[out]), Err(Error::Invariant(_))));
    }

    #[test]
    fn params_serialize_infinite_eps() {
        let p = OpticsParams::default();
        let json = serde_json_like(&p);
        assert!(json.contains("inf"));
    }

    fn serde_json_like(p: &OpticsParams) -> String {
        toml::to_string(p).unwrap()
    }
}
