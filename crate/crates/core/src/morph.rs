//! Binary morphology, Euclidean distance transform and speck-noise removal.
//!
//! Pixels outside the image are background for every operation here.

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::raster::BinaryImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeShape {
    #[default]
    Rect,
    Ellipse,
}

/// Centre-anchored structuring element with odd side lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSe", into = "RawSe")]
pub struct StructuringElement {
    shape: SeShape,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSe {
    shape: SeShape,
    width: usize,
    height: usize,
}

impl TryFrom<RawSe> for StructuringElement {
    type Error = Error;
    fn try_from(raw: RawSe) -> Result<Self> {
        StructuringElement::new(raw.shape, raw.width, raw.height)
    }
}

impl From<StructuringElement> for RawSe {
    fn from(se: StructuringElement) -> Self {
        RawSe {
            shape: se.shape,
            width: se.width,
            height: se.height,
        }
    }
}

impl StructuringElement {
    pub fn new(shape: SeShape, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "structuring element sides must be odd and positive, got {width}x{height}"
            )));
        }
        Ok(Self { shape, width, height })
    }

    pub fn rect(width: usize, height: usize) -> Result<Self> {
        Self::new(SeShape::Rect, width, height)
    }

    pub fn ellipse(width: usize, height: usize) -> Result<Self> {
        Self::new(SeShape::Ellipse, width, height)
    }

    /// The 3x3 square.
    pub fn square3() -> Self {
        Self {
            shape: SeShape::Rect,
            width: 3,
            height: 3,
        }
    }

    pub fn shape(&self) -> SeShape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Offsets `(dx, dy)` covered by the element relative to its centre.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let rx = (self.width / 2) as isize;
        let ry = (self.height / 2) as isize;
        let mut out = Vec::new();
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                let inside = match self.shape {
                    SeShape::Rect => true,
                    SeShape::Ellipse => {
                        let nx = if rx == 0 { 0.0 } else { dx as f64 / (rx as f64 + 0.5) };
                        let ny = if ry == 0 { 0.0 } else { dy as f64 / (ry as f64 + 0.5) };
                        nx * nx + ny * ny <= 1.0
                    }
                };
                if inside {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

/// Inclusive-window foreground counts via a summed-area table.
struct Integral {
    width: usize,
    height: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(image: &BinaryImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += image.get(x, y) as u32;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    /// Foreground count in `[x0, x1] x [y0, y1]` clipped to the image.
    fn count(&self, x0: isize, y0: isize, x1: isize, y1: isize) -> u32 {
        let cx0 = x0.max(0) as usize;
        let cy0 = y0.max(0) as usize;
        let cx1 = (x1 + 1).min(self.width as isize).max(0) as usize;
        let cy1 = (y1 + 1).min(self.height as isize).max(0) as usize;
        if cx0 >= cx1 || cy0 >= cy1 {
            return 0;
        }
        let w = self.width + 1;
        self.sums[cy1 * w + cx1] + self.sums[cy0 * w + cx0] - self.sums[cy0 * w + cx1] - self.sums[cy1 * w + cx0]
    }
}

/// A pixel survives when every pixel under the element is foreground.
pub fn erode(image: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    let (w, h) = (image.width(), image.height());
    match se.shape {
        SeShape::Rect => {
            let table = Integral::new(image);
            let (rx, ry) = ((se.width / 2) as isize, (se.height / 2) as isize);
            let full = (se.width * se.height) as u32;
            BinaryImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as isize, y as isize);
                table.count(x - rx, y - ry, x + rx, y + ry) == full
            })
        }
        SeShape::Ellipse => {
            let offsets = se.offsets();
            BinaryImage::from_fn(w, h, |x, y| {
                offsets
                    .iter()
                    .all(|&(dx, dy)| image.get_or_bg(x as isize + dx, y as isize + dy))
            })
        }
    }
}

fn dilate_once(image: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    let (w, h) = (image.width(), image.height());
    match se.shape {
        SeShape::Rect => {
            let table = Integral::new(image);
            let (rx, ry) = ((se.width / 2) as isize, (se.height / 2) as isize);
            BinaryImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as isize, y as isize);
                table.count(x - rx, y - ry, x + rx, y + ry) > 0
            })
        }
        SeShape::Ellipse => {
            let offsets = se.offsets();
            BinaryImage::from_fn(w, h, |x, y| {
                offsets
                    .iter()
                    .any(|&(dx, dy)| image.get_or_bg(x as isize + dx, y as isize + dy))
            })
        }
    }
}

/// Dilation repeated `iterations` times; zero iterations is the identity.
pub fn dilate(image: &BinaryImage, se: &StructuringElement, iterations: usize) -> BinaryImage {
    let mut out = image.clone();
    for _ in 0..iterations {
        out = dilate_once(&out, se);
    }
    out
}

/// Erosion followed by dilation with the same element.
pub fn open(image: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    dilate(&erode(image, se), se, 1)
}

/// Per-pixel distance map.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DistanceMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel (the ring just outside the image counts as background).
///
/// Two 1-D lower-envelope passes over squared distances.
pub fn distance_transform(image: &BinaryImage) -> DistanceMap {
    let (w, h) = (image.width(), image.height());
    // Padded by one background pixel on each side.
    let (pw, ph) = (w + 2, h + 2);
    let inf = f64::INFINITY;
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if image.get(x, y) {
                grid[(y + 1) * pw + x + 1] = inf;
            }
        }
    }
    let mut f = vec![0.0; pw.max(ph)];
    let mut d = vec![0.0; pw.max(ph)];
    let mut v = vec![0usize; pw.max(ph)];
    let mut z = vec![0.0; pw.max(ph) + 1];
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        lower_envelope(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        lower_envelope(&f[..pw], &mut d[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&d[..pw]);
    }
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(grid[(y + 1) * pw + x + 1].sqrt());
        }
    }
    DistanceMap {
        width: w,
        height: h,
        data,
    }
}

/// 1-D squared distance transform of a sampled function (Felzenszwalb and
/// Huttenlocher). `f` must contain at least one finite value.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            d.iter_mut().for_each(|x| *x = f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Knobs for speck removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub open_se: StructuringElement,
    pub dilate_se: StructuringElement,
    pub dilate_iterations: usize,
    /// Pixels with distance below `fg_dist_ratio * max distance` are thin.
    pub fg_dist_ratio: f64,
    /// Components of the dilated mask smaller than this fraction of the page
    /// area are small.
    pub area_floor_frac: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            open_se: StructuringElement::square3(),
            dilate_se: StructuringElement::square3(),
            dilate_iterations: 2,
            fg_dist_ratio: 0.4,
            area_floor_frac: 0.00005,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fg_dist_ratio > 0.0 && self.fg_dist_ratio < 1.0) {
            return Err(Error::Parameter(format!(
                "fg_dist_ratio must be in (0, 1), got {}",
                self.fg_dist_ratio
            )));
        }
        if !(self.area_floor_frac >= 0.0) {
            return Err(Error::Parameter("area_floor_frac must be non-negative".into()));
        }
        Ok(())
    }

    pub fn area_floor(&self, width: usize, height: usize) -> f64 {
        self.area_floor_frac * (width * height) as f64
    }
}

/// Intermediate masks of [`remove_noise`].
#[derive(Debug, Clone)]
pub struct NoiseRemoval {
    pub opened: BinaryImage,
    /// Opened mask grown by the dilation; used to group nearby strokes.
    pub sure_fg: BinaryImage,
    /// Pixels classified as speck noise.
    pub noise: BinaryImage,
    pub denoised: BinaryImage,
}

/// Opens the mask, then subtracts pixels that are both thin (distance
/// transform below `fg_dist_ratio` of its maximum) and part of a small blob
/// of the dilated mask.
pub fn remove_noise(binary: &BinaryImage, params: &NoiseParams) -> Result<NoiseRemoval> {
    params.validate()?;
    let (w, h) = (binary.width(), binary.height());
    let opened = open(binary, &params.open_se);
    let sure_fg = dilate(&opened, &params.dilate_se, params.dilate_iterations);
    let dist = distance_transform(&opened);
    let cutoff = params.fg_dist_ratio * dist.max();
    let labels = label_components(&sure_fg, Connectivity::Eight);
    let mut areas = vec![0usize; labels.count + 1];
    for &l in &labels.labels {
        areas[l as usize] += 1;
    }
    let floor = params.area_floor(w, h);
    let noise = BinaryImage::from_fn(w, h, |x, y| {
        if !opened.get(x, y) {
            return false;
        }
        let i = y * w + x;
        let label = labels.labels[i] as usize;
        dist.data[i] < cutoff && (areas[label] as f64) < floor
    });
    let denoised = opened.difference(&noise);
    Ok(NoiseRemoval {
        opened,
        sure_fg,
        noise,
        denoised,
    })
}
