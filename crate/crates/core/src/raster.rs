//! Pixel grids, grayscale conversion, resizing, Otsu binarization and Canny
//! edge detection.
//!
//! All images are row-major. Grayscale intensities are `u8`; binary images
//! store `0`/`1` per pixel with `1` meaning foreground ink.

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Image of the given size with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 255 - v).collect(),
        }
    }

    /// Copies the inclusive rectangle `[x0, x1] x [y0, y1]`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 > x1 || y0 > y1 || x1 >= self.width || y1 >= self.height {
            return Err(Error::Invariant(format!(
                "crop ({x0},{y0})-({x1},{y1}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let w = x1 - x0 + 1;
        let mut data = Vec::with_capacity(w * (y1 - y0 + 1));
        for y in y0..=y1 {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..=row + x1]);
        }
        Self::new(w, y1 - y0 + 1, data)
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("dimensions checked at construction")
    }

    pub fn from_gray_image(img: &GrayImage) -> Result<Self> {
        Self::new(img.width() as usize, img.height() as usize, img.as_raw().clone())
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Two-level image; `1` is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "binary image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "binary data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidImage(format!("binary image contains value {bad}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "binary image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    out.data[y * width + x] = 1;
                }
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    /// Like [`get`](Self::get) but returns background outside the image.
    #[inline]
    pub fn get_or_bg(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.same_dims(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &Self) -> Self {
        assert!(self.same_dims(other), "dimension mismatch");
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a != 0 && b == 0) as u8)
                .collect(),
        }
    }

    /// Foreground rendered as 255, background as 0.
    pub fn to_raster(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        }
    }

    pub fn to_gray_image(&self) -> GrayImage {
        self.to_raster().to_gray_image()
    }
}

/// BT.601 luma with round-half-up, in integer arithmetic.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Converts an 8-bit image with 1 to 4 channels to grayscale.
///
/// Alpha is ignored. 16-bit and floating point inputs are rejected.
pub fn to_grayscale(image: &DynamicImage) -> Result<RasterImage> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let data: Vec<u8> = match image {
        DynamicImage::ImageLuma8(img) => img.as_raw().clone(),
        DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(img) => img.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(img) => img.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(Error::Format(format!(
                "only 8-bit images are supported, got {:?}",
                other.color()
            )))
        }
    };
    RasterImage::new(w, h, data)
}

/// Upscales with bilinear interpolation so that `width >= min_width`,
/// preserving the aspect ratio. Scaled height is rounded half-up.
/// Images already wide enough are returned unchanged.
pub fn resize_to_min_width(image: &RasterImage, min_width: usize) -> RasterImage {
    let (w, h) = (image.width, image.height);
    if w >= min_width || min_width == 0 {
        return image.clone();
    }
    let new_w = min_width;
    let new_h = scaled_height(w, h, new_w);
    resize_bilinear(image, new_w, new_h)
}

/// `round_half_up(h * new_w / w)`, at least 1.
pub fn scaled_height(w: usize, h: usize, new_w: usize) -> usize {
    ((2 * h * new_w + w) / (2 * w)).max(1)
}

pub fn resize_bilinear(image: &RasterImage, new_w: usize, new_h: usize) -> RasterImage {
    let (w, h) = (image.width, image.height);
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let sample_axis = |i: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..new_w).map(|x| sample_axis(x, sx, w)).collect();
    let mut data = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let (y0, y1, fy) = sample_axis(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = image.get(x0, y0) as f64 * (1.0 - fx) + image.get(x1, y0) as f64 * fx;
            let bottom = image.get(x0, y1) as f64 * (1.0 - fx) + image.get(x1, y1) as f64 * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    RasterImage {
        width: new_w,
        height: new_h,
        data,
    }
}

pub fn histogram(data: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in data {
        hist[v as usize] += 1;
    }
    hist
}

/// Global Otsu threshold.
///
/// The returned `t` splits pixels into `{p < t}` and `{p >= t}` and maximizes
/// the between-class variance; among equal maxima the smallest `t` wins. An
/// image with a single intensity returns that intensity.
pub fn otsu_threshold(image: &RasterImage) -> u8 {
    otsu_from_histogram(&histogram(&image.data))
}

pub fn otsu_from_histogram(hist: &[u64; 256]) -> u8 {
    let present: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    match present.as_slice() {
        [] => return 0,
        [only] => return *only as u8,
        _ => {}
    }
    let total_n: i128 = hist.iter().map(|&c| c as i128).sum();
    let total_s: i128 = hist.iter().enumerate().map(|(i, &c)| i as i128 * c as i128).sum();

    let mut best_t = 0u8;
    let mut best_var = -1.0f64;
    let (mut n0, mut s0) = (0i128, 0i128);
    for t in 0..256usize {
        if t > 0 {
            n0 += hist[t - 1] as i128;
            s0 += (t as i128 - 1) * hist[t - 1] as i128;
        }
        let n1 = total_n - n0;
        let s1 = total_s - s0;
        // n0*n1*(m0 - m1)^2, up to the constant 1/N^2.
        let var = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let diff = s0 * n1 - s1 * n0;
            (diff * diff) as f64 / (n0 * n1) as f64
        };
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Dark ink on a light page.
    #[default]
    InkDark,
    /// Light ink on a dark page.
    InkLight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ThresholdMode {
    #[default]
    Global,
    /// Otsu per square tile with bilinear interpolation of tile thresholds.
    Local { tile: usize },
}

/// Global Otsu binarization. With [`Polarity::InkDark`] a pixel is
/// foreground when it is strictly below the threshold.
pub fn binarize(image: &RasterImage, polarity: Polarity) -> BinaryImage {
    match polarity {
        Polarity::InkDark => {
            let t = otsu_threshold(image);
            threshold_below(image, |_, _| t as f64)
        }
        Polarity::InkLight => binarize(&image.negated(), Polarity::InkDark),
    }
}

pub fn binarize_with(image: &RasterImage, polarity: Polarity, mode: ThresholdMode) -> Result<BinaryImage> {
    match mode {
        ThresholdMode::Global => Ok(binarize(image, polarity)),
        ThresholdMode::Local { tile } => binarize_local(image, polarity, tile),
    }
}

/// Tiled Otsu: one threshold per `tile x tile` block, interpolated
/// bilinearly between tile centres.
pub fn binarize_local(image: &RasterImage, polarity: Polarity, tile: usize) -> Result<BinaryImage> {
    if tile == 0 {
        return Err(Error::Parameter("local Otsu tile size must be positive".into()));
    }
    if polarity == Polarity::InkLight {
        return binarize_local(&image.negated(), Polarity::InkDark, tile);
    }
    let (w, h) = (image.width, image.height);
    let tx = w.div_ceil(tile);
    let ty = h.div_ceil(tile);
    let mut thresholds = vec![0.0f64; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0u64; 256];
            for y in j * tile..((j + 1) * tile).min(h) {
                for x in i * tile..((i + 1) * tile).min(w) {
                    hist[image.get(x, y) as usize] += 1;
                }
            }
            thresholds[j * tx + i] = otsu_from_histogram(&hist) as f64;
        }
    }
    let centre = |i: usize, len: usize| -> f64 {
        let start = i * tile;
        let end = ((i + 1) * tile).min(len);
        (start + end - 1) as f64 / 2.0
    };
    let axis = |p: usize, n: usize, len: usize| -> (usize, usize, f64) {
        let pf = p as f64;
        if n == 1 || pf <= centre(0, len) {
            return (0, 0, 0.0);
        }
        if pf >= centre(n - 1, len) {
            return (n - 1, n - 1, 0.0);
        }
        let mut i = 0;
        while centre(i + 1, len) < pf {
            i += 1;
        }
        let c0 = centre(i, len);
        let c1 = centre(i + 1, len);
        (i, i + 1, (pf - c0) / (c1 - c0))
    };
    let cols: Vec<_> = (0..w).map(|x| axis(x, tx, w)).collect();
    let rows: Vec<_> = (0..h).map(|y| axis(y, ty, h)).collect();
    Ok(threshold_below(image, |x, y| {
        let (i0, i1, fx) = cols[x];
        let (j0, j1, fy) = rows[y];
        let t = |i: usize, j: usize| thresholds[j * tx + i];
        let top = t(i0, j0) * (1.0 - fx) + t(i1, j0) * fx;
        let bottom = t(i0, j1) * (1.0 - fx) + t(i1, j1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

fn threshold_below(image: &RasterImage, t: impl Fn(usize, usize) -> f64) -> BinaryImage {
    BinaryImage::from_fn(image.width, image.height, |x, y| (image.get(x, y) as f64) < t(x, y))
}

/// Image-space gradients from a Gaussian-smoothed Sobel operator.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Normalized 1-D Gaussian taps. Radius is `round(1.5 * sigma)`, at least 1,
/// which gives the usual 5-tap kernel for sigma 1.4.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((1.5 * sigma).round() as usize).max(1);
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[clamp(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[clamp(y as isize + k as isize - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// 3x3 Sobel with replicated borders and L2 magnitude.
pub fn sobel(data: &[f64], width: usize, height: usize) -> Gradients {
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, width as isize - 1) as usize;
        let yc = y.clamp(0, height as isize - 1) as usize;
        data[yc * width + xc]
    };
    let n = width * height;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut magnitude = vec![0.0; n];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * width + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            magnitude[i] = dx.hypot(dy);
        }
    }
    Gradients {
        width,
        height,
        gx,
        gy,
        magnitude,
    }
}

pub fn smoothed_gradients(image: &RasterImage, sigma: f64) -> Gradients {
    let blurred = gaussian_blur(&image.to_f64(), image.width, image.height, sigma);
    sobel(&blurred, image.width, image.height)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
            sigma: 1.4,
        }
    }
}

/// Canny edges with the default smoothing (sigma 1.4).
pub fn canny_edges(image: &RasterImage, low: f64, high: f64) -> Result<BinaryImage> {
    canny_edges_with(
        image,
        &CannyParams {
            low,
            high,
            ..CannyParams::default()
        },
    )
}

pub fn canny_edges_with(image: &RasterImage, params: &CannyParams) -> Result<BinaryImage> {
    let CannyParams { low, high, sigma } = *params;
    if !(0.0..=255.0).contains(&low) || !(0.0..=255.0).contains(&high) || low > high {
        return Err(Error::Parameter(format!(
            "Canny thresholds must satisfy 0 <= low <= high <= 255, got low={low} high={high}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "Canny sigma must be non-negative, got {sigma}"
        )));
    }
    let grad = smoothed_gradients(image, sigma);
    let nms = non_max_suppression(&grad);
    Ok(hysteresis(&nms, grad.width, grad.height, low, high))
}

/// Thins gradient magnitude to ridge pixels along the quantized gradient
/// direction. Border pixels are always suppressed.
pub fn non_max_suppression(grad: &Gradients) -> Vec<f64> {
    let (w, h) = (grad.width, grad.height);
    let mut out = vec![0.0; w * h];
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = grad.magnitude[i];
            if m <= 0.0 {
                continue;
            }
            let mut angle = grad.gy[i].atan2(grad.gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let before = grad.magnitude[((y as isize - dy) as usize) * w + (x as isize - dx) as usize];
            let after = grad.magnitude[((y as isize + dy) as usize) * w + (x as isize + dx) as usize];
            if m >= before && m > after {
                out[i] = m;
            }
        }
    }
    out
}

/// Double threshold: pixels `>= high` seed edges that grow through
/// 8-connected pixels `>= low`.
pub fn hysteresis(nms: &[f64], width: usize, height: usize, low: f64, high: f64) -> BinaryImage {
    let mut out = BinaryImage::zeros(width, height);
    let mut stack = Vec::new();
    for (i, &m) in nms.iter().enumerate() {
        if m > 0.0 && m >= high && out.data[i] == 0 {
            out.data[i] = 1;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (x, y) = ((j % width) as isize, (j / width) as isize);
                for ny in y - 1..=y + 1 {
                    for nx in x - 1..=x + 1 {
                        if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                            continue;
                        }
                        let k = ny as usize * width + nx as usize;
                        if out.data[k] == 0 && nms[k] > 0.0 && nms[k] >= low {
                            out.data[k] = 1;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Writes a grayscale image as PNG.
pub fn save_png(image: &GrayImage, path: &std::path::Path) -> Result<()> {
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
