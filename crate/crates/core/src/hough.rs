//! Hough line and circle detection, and the two mask edits built on them:
//! thickening detected head strokes and severing circular bridges.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{smoothed_gradients, BinaryImage};

/// Line segment found by [`hough_lines`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegmentHit {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    /// Supporting edge samples along the segment.
    pub votes: usize,
    /// Normal angle of the line, radians in `[0, pi)`. Horizontal is `pi/2`.
    pub theta: f64,
    pub rho: f64,
}

impl LineSegmentHit {
    pub fn length(&self) -> f64 {
        let dx = self.x2 as f64 - self.x1 as f64;
        let dy = self.y2 as f64 - self.y1 as f64;
        dx.hypot(dy)
    }
}

/// Search parameters for [`hough_lines`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub rho_res: f64,
    pub theta_res: f64,
    pub votes_min: usize,
    pub min_len: f64,
    pub max_gap: usize,
    /// Half-width of the searched angle range around horizontal. Values of
    /// `pi/2` or more search every orientation.
    pub theta_window: f64,
    /// Perpendicular tolerance, in pixels, when collecting support.
    pub band: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            rho_res: 1.0,
            theta_res: PI / 180.0,
            votes_min: 80,
            min_len: 50.0,
            max_gap: 10,
            theta_window: 5f64.to_radians(),
            band: 1,
        }
    }
}

impl LineSearch {
    fn validate(&self) -> Result<()> {
        if !(self.rho_res > 0.0) || !(self.theta_res > 0.0) {
            return Err(Error::Parameter("Hough resolutions must be positive".into()));
        }
        if !(self.theta_window >= 0.0) {
            return Err(Error::Parameter("theta window must be non-negative".into()));
        }
        Ok(())
    }

    fn thetas(&self) -> Vec<f64> {
        if self.theta_window >= FRAC_PI_2 {
            let n = (PI / self.theta_res).round().max(1.0) as usize;
            return (0..n).map(|i| i as f64 * PI / n as f64).collect();
        }
        let k = (self.theta_window / self.theta_res + 1e-9).floor() as i64;
        (-k..=k).map(|i| FRAC_PI_2 + i as f64 * self.theta_res).collect()
    }
}

/// Deterministic progressive Hough transform restricted to `theta_window`.
///
/// Accumulator cells with at least `votes_min` votes are visited strongest
/// first. Each cell's line is walked across the image collecting unclaimed
/// edge pixels within `band`; runs broken by more than `max_gap` samples
/// become separate segments. Segments shorter than `min_len` or with fewer
/// than `votes_min` supporting samples are discarded. Pixels of accepted
/// segments are claimed so later cells cannot report them again.
pub fn hough_lines(edges: &BinaryImage, search: &LineSearch) -> Result<Vec<LineSegmentHit>> {
    search.validate()?;
    let (w, h) = (edges.width(), edges.height());
    let points: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| edges.get(x, y))
        .collect();
    if points.is_empty() {
        return Ok(Vec::new());
    }

    let thetas = search.thetas();
    let trig: Vec<(f64, f64)> = thetas.iter().map(|t| (t.cos(), t.sin())).collect();
    let diag = ((w * w + h * h) as f64).sqrt();
    let n_rho = (2.0 * diag / search.rho_res).ceil() as usize + 1;
    let mut acc = vec![0u32; n_rho * thetas.len()];
    for &(x, y) in &points {
        for (ti, &(c, s)) in trig.iter().enumerate() {
            let rho = x as f64 * c + y as f64 * s;
            let ri = ((rho + diag) / search.rho_res).round() as usize;
            acc[ri * thetas.len() + ti] += 1;
        }
    }

    let mut cells: Vec<(u32, usize, usize)> = acc
        .iter()
        .enumerate()
        .filter(|(_, &v)| v as usize >= search.votes_min.max(1))
        .map(|(i, &v)| (v, i / thetas.len(), i % thetas.len()))
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed = BinaryImage::zeros(w, h);
    let mut hits = Vec::new();
    for (_, ri, ti) in cells {
        let rho = ri as f64 * search.rho_res - diag;
        let theta = thetas[ti];
        let (c, s) = trig[ti];
        for seg in walk_line(edges, &claimed, rho, c, s, search) {
            if seg.samples.len() < search.votes_min {
                continue;
            }
            let (x1, y1) = seg.samples[0].0;
            let (x2, y2) = seg.samples[seg.samples.len() - 1].0;
            let hit = LineSegmentHit {
                x1,
                y1,
                x2,
                y2,
                votes: seg.samples.len(),
                theta,
                rho,
            };
            if hit.length() + 1.0 < search.min_len {
                continue;
            }
            for (_, support) in &seg.samples {
                for &(px, py) in support {
                    claimed.set(px, py, true);
                }
            }
            hits.push(hit);
        }
    }
    Ok(hits)
}

/// A position on the line and the unclaimed edge pixels supporting it.
type Sample = ((usize, usize), Vec<(usize, usize)>);

struct Segment {
    samples: Vec<Sample>,
}

fn walk_line(
    edges: &BinaryImage,
    claimed: &BinaryImage,
    rho: f64,
    c: f64,
    s: f64,
    search: &LineSearch,
) -> Vec<Segment> {
    let (w, h) = (edges.width() as isize, edges.height() as isize);
    let band = search.band as isize;
    // Step along the dominant axis so consecutive samples are adjacent.
    let horizontal = s.abs() >= c.abs();
    let steps = if horizontal { w } else { h };
    let mut segments = Vec::new();
    let mut current: Vec<Sample> = Vec::new();
    let mut gap = 0usize;
    for t in 0..steps {
        let (px, py) = if horizontal {
            (t, ((rho - t as f64 * c) / s).round() as isize)
        } else {
            (((rho - t as f64 * s) / c).round() as isize, t)
        };
        if px < 0 || py < 0 || px >= w || py >= h {
            if !current.is_empty() {
                gap += 1;
            }
            continue;
        }
        let mut support = Vec::new();
        for d in -band..=band {
            let (qx, qy) = if horizontal { (px, py + d) } else { (px + d, py) };
            if qx >= 0
                && qy >= 0
                && qx < w
                && qy < h
                && edges.get(qx as usize, qy as usize)
                && !claimed.get(qx as usize, qy as usize)
            {
                support.push((qx as usize, qy as usize));
            }
        }
        if support.is_empty() {
            if !current.is_empty() {
                gap += 1;
                if gap > search.max_gap {
                    segments.push(Segment {
                        samples: std::mem::take(&mut current),
                    });
                    gap = 0;
                }
            }
        } else {
            gap = 0;
            current.push(((px as usize, py as usize), support));
        }
    }
    if !current.is_empty() {
        segments.push(Segment { samples: current });
    }
    segments
}

/// Draws each segment onto a copy of `binary` with a square brush of side
/// `thickness`.
pub fn reinforce_matra(binary: &BinaryImage, hits: &[LineSegmentHit], thickness: usize) -> Result<BinaryImage> {
    if thickness == 0 {
        return Err(Error::Parameter("stroke thickness must be at least 1".into()));
    }
    let mut out = binary.clone();
    let lo = -((thickness as isize - 1) / 2);
    let hi = thickness as isize / 2;
    for hit in hits {
        for (x, y) in bresenham(hit.x1 as isize, hit.y1 as isize, hit.x2 as isize, hit.y2 as isize) {
            for dy in lo..=hi {
                for dx in lo..=hi {
                    let (qx, qy) = (x + dx, y + dy);
                    if qx >= 0 && qy >= 0 && (qx as usize) < out.width() && (qy as usize) < out.height() {
                        out.set(qx as usize, qy as usize, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn bresenham(x0: isize, y0: isize, x1: isize, y1: isize) -> Vec<(isize, isize)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    let mut out = Vec::new();
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Circle found by [`hough_circles`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleHit {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Boundary pixels lying on the circle.
    pub votes: usize,
    /// Supported fraction of the visible circumference.
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleSearch {
    pub r_min: usize,
    pub r_max: usize,
    /// Minimum boundary pixels supporting an accepted circle.
    pub votes_min: usize,
    /// Minimum 3x3 accumulator sum for a centre candidate.
    pub peak_min: usize,
    pub center_min_dist: f64,
    /// Minimum supported fraction of the visible circumference. Arcs that
    /// run through the interior of other ink are not visible.
    pub min_coverage: f64,
    /// Minimum visible fraction of the circumference.
    pub min_visible: f64,
    /// Boundary pixels within this distance of the radius support it.
    pub support_band: f64,
    /// Minimum background fraction inside the ring.
    pub min_hollow: f64,
    /// Smoothing applied before taking gradient directions.
    pub grad_sigma: f64,
    /// Pixels with smoothed gradient magnitude below this do not vote.
    pub grad_min: f64,
}

impl Default for CircleSearch {
    fn default() -> Self {
        Self {
            r_min: 8,
            r_max: 40,
            votes_min: 40,
            peak_min: 300,
            center_min_dist: 20.0,
            min_coverage: 0.85,
            min_visible: 0.65,
            support_band: 2.0,
            min_hollow: 0.7,
            grad_sigma: 1.4,
            grad_min: 60.0,
        }
    }
}

/// Gradient-direction circle Hough transform on a binary mask.
///
/// Every pixel with a strong smoothed gradient votes for candidate centres
/// along its gradient line (both directions) at each radius in range. Local
/// maxima of the centre accumulator are then verified against the mask
/// boundary: the radius with the best angular coverage is kept when both
/// its coverage and its boundary support pass the thresholds. Accepted
/// circles are suppressed greedily so centres are `center_min_dist` apart.
pub fn hough_circles(image: &BinaryImage, search: &CircleSearch) -> Result<Vec<CircleHit>> {
    if search.r_min == 0 || search.r_min > search.r_max {
        return Err(Error::Parameter(format!(
            "circle radii must satisfy 0 < r_min <= r_max, got {}..{}",
            search.r_min, search.r_max
        )));
    }
    let (w, h) = (image.width(), image.height());
    if image.count_ones() == 0 {
        return Ok(Vec::new());
    }

    let grad = smoothed_gradients(&image.to_raster(), search.grad_sigma);
    let mut acc = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = grad.magnitude[i];
            if m < search.grad_min || m <= 0.0 {
                continue;
            }
            let (ux, uy) = (grad.gx[i] / m, grad.gy[i] / m);
            for r in search.r_min..=search.r_max {
                for sign in [-1.0, 1.0] {
                    let cx = (x as f64 + sign * r as f64 * ux).round();
                    let cy = (y as f64 + sign * r as f64 * uy).round();
                    if cx >= 0.0 && cy >= 0.0 && (cx as usize) < w && (cy as usize) < h {
                        acc[cy as usize * w + cx as usize] += 1;
                    }
                }
            }
        }
    }

    // 3x3 window sums absorb rounding scatter of the votes.
    let window = |x: usize, y: usize| -> u32 {
        let mut s = 0;
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                s += acc[ny * w + nx];
            }
        }
        s
    };
    // Peaks must dominate a neighbourhood half as wide as the smallest radius.
    let peak_radius = (search.r_min / 2).max(1);
    let local_max = max_filter(&acc, w, h, peak_radius);
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = acc[y * w + x];
            if v == 0 || v < local_max[y * w + x] {
                continue;
            }
            let total = window(x, y);
            if total as usize >= search.peak_min {
                candidates.push((total, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    let boundary = boundary_pixels(image);
    let rims: Vec<Vec<(f64, f64)>> = (search.r_min..=search.r_max)
        .map(|r| {
            let bins = ((2.0 * PI * r as f64).round() as usize).max(16);
            (0..bins)
                .map(|k| {
                    let a = (k as f64 + 0.5) / bins as f64 * 2.0 * PI - PI;
                    (r as f64 * a.cos(), r as f64 * a.sin())
                })
                .collect()
        })
        .collect();
    let mut verified: Vec<CircleHit> = Vec::new();
    for (_, x, y) in candidates {
        let (cx, cy) = refine_centre(&acc, w, h, x, y);
        if verified
            .iter()
            .any(|c| (c.cx - cx).hypot(c.cy - cy) < search.center_min_dist)
        {
            continue;
        }
        // Rings are hollow; reject centres sitting in ink before the full check.
        let inner = search.r_min as f64 - search.support_band - 1.0;
        if hollowness(image, cx, cy, inner) < search.min_hollow {
            continue;
        }
        if let Some(hit) = verify_circle(image, &boundary, &rims, cx, cy, search) {
            verified.push(hit);
        }
    }
    Ok(verified)
}

/// Maximum over the `(2r+1) x (2r+1)` window around each pixel.
fn max_filter(data: &[u32], w: usize, h: usize, r: usize) -> Vec<u32> {
    let mut rows = vec![0u32; w * h];
    for y in 0..h {
        let line = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = vec![0u32; w * h];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).max().unwrap_or(0);
        }
    }
    out
}

fn refine_centre(acc: &[u32], w: usize, h: usize, x: usize, y: usize) -> (f64, f64) {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            let v = acc[ny * w + nx] as f64;
            sx += v * nx as f64;
            sy += v * ny as f64;
            sw += v;
        }
    }
    if sw == 0.0 {
        (x as f64, y as f64)
    } else {
        (sx / sw, sy / sw)
    }
}

/// Foreground pixels with at least one 4-neighbour in the background.
fn boundary_pixels(image: &BinaryImage) -> BinaryImage {
    BinaryImage::from_fn(image.width(), image.height(), |x, y| {
        if !image.get(x, y) {
            return false;
        }
        let (x, y) = (x as isize, y as isize);
        !image.get_or_bg(x - 1, y)
            || !image.get_or_bg(x + 1, y)
            || !image.get_or_bg(x, y - 1)
            || !image.get_or_bg(x, y + 1)
    })
}

/// `rims[r - r_min]` holds the offsets of the angular bin centres at radius `r`.
fn verify_circle(
    image: &BinaryImage,
    boundary: &BinaryImage,
    rims: &[Vec<(f64, f64)>],
    cx: f64,
    cy: f64,
    search: &CircleSearch,
) -> Option<CircleHit> {
    let (w, h) = (image.width(), image.height());
    let band = search.support_band;
    let reach = search.r_max as f64 + band + 0.5;
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let x1 = ((cx + reach).ceil().max(0.0) as usize).min(w - 1);
    let y1 = ((cy + reach).ceil().max(0.0) as usize).min(h - 1);
    // Boundary pixels bucketed by integer distance from the centre.
    let mut by_distance: Vec<Vec<(f64, f64)>> = vec![Vec::new(); reach.ceil() as usize + 1];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if boundary.get(x, y) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let d = dx.hypot(dy);
                if d <= reach {
                    by_distance[d as usize].push((d, dy.atan2(dx)));
                }
            }
        }
    }
    let within = |r: f64| {
        let lo = (r - band).floor().max(0.0) as usize;
        let hi = ((r + band).floor() as usize).min(by_distance.len() - 1);
        by_distance[lo..=hi]
            .iter()
            .flatten()
            .filter(move |&&(d, _)| (d - r).abs() <= band)
    };
    let hidden = |x: f64, y: f64| -> bool {
        let (x, y) = (x.round(), y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return false;
        }
        let (x, y) = (x as usize, y as usize);
        image.get(x, y) && !boundary.get(x, y)
    };

    let mut best: Option<(f64, usize, usize)> = None;
    for r in search.r_min..=search.r_max {
        let rf = r as f64;
        let rim = &rims[r - search.r_min];
        let bins = rim.len();
        let mut covered = vec![false; bins];
        let mut support = 0usize;
        for &(_, a) in within(rf) {
            support += 1;
            let b = (((a + PI) / (2.0 * PI)) * bins as f64) as usize;
            covered[b.min(bins - 1)] = true;
        }
        if support < search.votes_min {
            continue;
        }
        let mut visible = 0usize;
        let mut hit = 0usize;
        for (&c, &(ox, oy)) in covered.iter().zip(rim) {
            if c {
                hit += 1;
                visible += 1;
            } else if !hidden(cx + ox, cy + oy) {
                visible += 1;
            }
        }
        if (visible as f64) < search.min_visible * bins as f64 {
            continue;
        }
        let coverage = hit as f64 / visible as f64;
        let better = match best {
            None => true,
            Some((bc, bs, _)) => coverage > bc + 1e-12 || ((coverage - bc).abs() <= 1e-12 && support > bs),
        };
        if better {
            best = Some((coverage, support, r));
        }
    }
    let (coverage, support, r) = best?;
    if coverage < search.min_coverage {
        return None;
    }
    let on: Vec<f64> = within(r as f64).map(|&(d, _)| d).collect();
    if on.is_empty() {
        return None;
    }
    let radius = (on.iter().sum::<f64>() / on.len() as f64).clamp(search.r_min as f64, search.r_max as f64);
    if hollowness(image, cx, cy, radius - band - 1.0) < search.min_hollow {
        return None;
    }
    Some(CircleHit {
        cx,
        cy,
        radius,
        votes: support,
        coverage,
    })
}

/// Background fraction of the disc of radius `r` around `(cx, cy)`.
fn hollowness(image: &BinaryImage, cx: f64, cy: f64, r: f64) -> f64 {
    if r < 1.0 {
        return 1.0;
    }
    let (w, h) = (image.width() as isize, image.height() as isize);
    let (mut total, mut empty) = (0usize, 0usize);
    let ri = r.ceil() as isize;
    let (icx, icy) = (cx.round() as isize, cy.round() as isize);
    for y in (icy - ri).max(0)..=(icy + ri).min(h - 1) {
        for x in (icx - ri).max(0)..=(icx + ri).min(w - 1) {
            if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                total += 1;
                if !image.get(x as usize, y as usize) {
                    empty += 1;
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        empty as f64 / total as f64
    }
}

/// Clears every pixel whose distance from a hit's centre is within
/// `erase_half_width` of its radius.
pub fn break_circles(binary: &BinaryImage, hits: &[CircleHit], erase_half_width: f64) -> Result<BinaryImage> {
    if !(erase_half_width >= 1.0) {
        return Err(Error::Parameter(format!(
            "erase thickness must be at least 1, got {erase_half_width}"
        )));
    }
    let mut out = binary.clone();
    let (w, h) = (binary.width(), binary.height());
    for c in hits {
        let outer = c.radius + erase_half_width;
        let x0 = (c.cx - outer).floor().max(0.0) as usize;
        let y0 = (c.cy - outer).floor().max(0.0) as usize;
        let x1 = ((c.cx + outer).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((c.cy + outer).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - c.cx).hypot(y as f64 - c.cy);
                if (d - c.radius).abs() <= erase_half_width {
                    out.set(x, y, false);
                }
            }
        }
    }
    Ok(out)
}
