//! The full page pipeline: resize, binarize, edges, denoise, head-stroke
//! reinforcement, circle breaking, components, clustering and line boxes.

use std::time::Instant;

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::components::{extract_boxes, label_components, BoundingBox, ComponentSet};
use crate::config::{EdgeSource, PipelineConfig};
use crate::error::Result;
use crate::hough::{break_circles, bresenham, hough_circles, hough_lines, reinforce_matra, CircleHit, LineSegmentHit};
use crate::lineclust::{assemble_lines, eps_cut, extract_clusters, median_sorted, optics_order, TextLine};
use crate::morph::remove_noise;
use crate::raster::{
    binarize_with, canny_edges_with, otsu_threshold, resize_to_min_width, BinaryImage, Polarity, RasterImage,
    ThresholdMode,
};

/// A named intermediate image, written as `<name>.png` by debug dumps.
#[derive(Debug, Clone)]
pub struct StageImage {
    pub name: &'static str,
    pub image: RgbImage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub original_width: usize,
    pub original_height: usize,
    /// Size after upscaling to the minimum width; all intermediate results
    /// are in these coordinates.
    pub working_width: usize,
    pub working_height: usize,
    /// Global Otsu threshold, when global thresholding was used.
    pub threshold: Option<u8>,
    pub line_hits: Vec<LineSegmentHit>,
    pub circle_hits: Vec<CircleHit>,
    pub components: ComponentSet,
    /// Cluster label per component, `-1` for noise.
    pub cluster_labels: Vec<i64>,
    pub eps_cut: Option<f64>,
    pub lines: Vec<TextLine>,
    /// Line rectangles in original image coordinates, aligned with `lines`.
    pub line_boxes: Vec<BoundingBox>,
    pub warnings: Vec<String>,
    pub timings: Vec<StageTiming>,
    pub stages: Vec<StageImage>,
}

impl Segmentation {
    /// Cuts each line rectangle out of the original grayscale page.
    pub fn crops(&self, original: &RasterImage) -> Result<Vec<RasterImage>> {
        self.line_boxes
            .iter()
            .map(|b| original.crop(b.x_min, b.y_min, b.x_max, b.y_max))
            .collect()
    }
}

/// Maps an inclusive box from a `from` sized image onto the matching
/// pixels of a `to` sized image, covering every touched pixel.
pub fn rescale_box(b: &BoundingBox, from: (usize, usize), to: (usize, usize)) -> BoundingBox {
    if from == to {
        return *b;
    }
    let span = |lo: usize, hi: usize, f: usize, t: usize| -> (usize, usize) {
        let s = t as f64 / f as f64;
        let a = ((lo as f64 * s).floor() as usize).min(t - 1);
        let z = (((hi + 1) as f64 * s).ceil() as usize)
            .saturating_sub(1)
            .clamp(a, t - 1);
        (a, z)
    };
    let (x_min, x_max) = span(b.x_min, b.x_max, from.0, to.0);
    let (y_min, y_max) = span(b.y_min, b.y_max, from.1, to.1);
    BoundingBox {
        x_min,
        y_min,
        x_max,
        y_max,
    }
}

struct Clock {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            ms: (now - self.start).as_secs_f64() * 1e3,
        });
        self.start = now;
    }
}

/// Segments a grayscale page into text lines.
///
/// With `keep_stages` the intermediate images are collected in stage order
/// (`01_gray` through `11_line_boxes`).
pub fn segment_page(gray: &RasterImage, cfg: &PipelineConfig, keep_stages: bool) -> Result<Segmentation> {
    cfg.validate()?;
    let mut clock = Clock::new();
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let mut keep = |name: &'static str, image: &dyn Fn() -> RgbImage| {
        if keep_stages {
            stages.push(StageImage { name, image: image() });
        }
    };

    let working = resize_to_min_width(gray, cfg.resize.min_width);
    let (w, h) = (working.width(), working.height());
    clock.lap("resize");
    keep("01_gray", &|| gray_rgb(&working));

    let binary = binarize_with(&working, cfg.binarize.polarity, cfg.binarize.threshold)?;
    let threshold = match cfg.binarize.threshold {
        ThresholdMode::Global => Some(match cfg.binarize.polarity {
            Polarity::InkDark => otsu_threshold(&working),
            Polarity::InkLight => otsu_threshold(&working.negated()),
        }),
        ThresholdMode::Local { .. } => None,
    };
    clock.lap("binarize");
    keep("02_binary", &|| mask_rgb(&binary));

    let edge_input = match cfg.edges.source {
        EdgeSource::Binary => binary.to_raster(),
        EdgeSource::Gray => working.clone(),
    };
    let edges = canny_edges_with(&edge_input, &cfg.edges.canny())?;
    clock.lap("edges");
    keep("03_edges", &|| mask_rgb(&edges));

    let denoise = remove_noise(&binary, &cfg.noise)?;
    clock.lap("denoise");
    keep("04_opened", &|| mask_rgb(&denoise.opened));
    keep("05_sure_fg", &|| mask_rgb(&denoise.sure_fg));
    keep("06_denoised", &|| mask_rgb(&denoise.denoised));

    let line_hits = if cfg.lines.enabled {
        hough_lines(&edges, &cfg.lines.search(w))?
    } else {
        Vec::new()
    };
    let reinforced = reinforce_matra(&denoise.denoised, &line_hits, cfg.lines.thickness)?;
    clock.lap("hough_lines");
    keep("07_hough_lines", &|| {
        let mut img = mask_rgb(&denoise.denoised);
        for hit in &line_hits {
            draw_segment(&mut img, hit, RED);
        }
        img
    });

    let circle_hits = if cfg.circles.enabled {
        hough_circles(&reinforced, &cfg.circles.search)?
    } else {
        Vec::new()
    };
    let broken = break_circles(&reinforced, &circle_hits, cfg.circles.erase_half_width)?;
    clock.lap("hough_circles");
    keep("08_circles_removed", &|| {
        let mut img = mask_rgb(&broken);
        for c in &circle_hits {
            draw_circle(&mut img, c, GREEN);
        }
        img
    });

    let labels = label_components(&broken, cfg.components.connectivity);
    let min_area = cfg.components.min_area_frac * (w * h) as f64;
    let components = extract_boxes(&labels, min_area, cfg.components.area_mode);
    clock.lap("components");
    keep("09_boxes", &|| {
        let mut img = mask_rgb(&broken);
        for b in &components.boxes {
            draw_rect(&mut img, b, BLUE);
            draw_dot(&mut img, b.midpoint(), RED);
        }
        img
    });

    let (cluster_labels, cut) = cluster_components(&components, cfg, &mut warnings)?;
    let lines = assemble_lines(&components, &cluster_labels)?;
    if lines.is_empty() {
        warnings.push("no text lines detected".to_string());
    }
    clock.lap("clustering");
    keep("10_clusters", &|| {
        let mut img = gray_rgb(&working);
        for (b, &l) in components.boxes.iter().zip(&cluster_labels) {
            let colour = if l < 0 {
                GREY
            } else {
                PALETTE[l as usize % PALETTE.len()]
            };
            draw_dot(&mut img, b.midpoint(), colour);
        }
        img
    });
    keep("11_line_boxes", &|| {
        let mut img = gray_rgb(&working);
        for l in &lines {
            draw_rect(&mut img, &l.crop, RED);
        }
        img
    });

    let original = (gray.width(), gray.height());
    let line_boxes = lines.iter().map(|l| rescale_box(&l.crop, (w, h), original)).collect();

    Ok(Segmentation {
        original_width: original.0,
        original_height: original.1,
        working_width: w,
        working_height: h,
        threshold,
        line_hits,
        circle_hits,
        components,
        cluster_labels,
        eps_cut: cut,
        lines,
        line_boxes,
        warnings,
        timings: clock.timings,
        stages,
    })
}

/// OPTICS over component midpoint `cy`. When every point ends up as noise
/// (fewer components per line than `min_samples`), each run of the
/// reachability plot becomes its own cluster instead.
fn cluster_components(
    components: &ComponentSet,
    cfg: &PipelineConfig,
    warnings: &mut Vec<String>,
) -> Result<(Vec<i64>, Option<f64>)> {
    if components.is_empty() {
        return Ok((Vec::new(), None));
    }
    let cys: Vec<f64> = components.midpoints().iter().map(|p| p.1).collect();
    let mut heights: Vec<f64> = components.boxes.iter().map(|b| b.height() as f64).collect();
    heights.sort_by(f64::total_cmp);
    let mut params = cfg.clustering.optics(median_sorted(&heights));
    let ordering = optics_order(&cys, &params)?;
    let cut = eps_cut(&ordering, &params.cut);
    let mut labels = extract_clusters(&ordering, &params);
    if labels.iter().all(|&l| l < 0) {
        warnings.push(format!(
            "no cluster reached min_samples = {}; treating each reachability run as a line",
            params.min_samples
        ));
        params.min_samples = 1;
        labels = extract_clusters(&ordering, &params);
    }
    Ok((labels, Some(cut)))
}

const RED: Rgb<u8> = Rgb([220, 30, 30]);
const GREEN: Rgb<u8> = Rgb([30, 200, 60]);
const BLUE: Rgb<u8> = Rgb([40, 90, 230]);
const GREY: Rgb<u8> = Rgb([128, 128, 128]);
const PALETTE: [Rgb<u8>; 8] = [
    Rgb([230, 25, 75]),
    Rgb([60, 180, 75]),
    Rgb([0, 130, 200]),
    Rgb([245, 130, 48]),
    Rgb([145, 30, 180]),
    Rgb([70, 200, 200]),
    Rgb([240, 50, 230]),
    Rgb([170, 110, 40]),
];

fn gray_rgb(img: &RasterImage) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img.get(x as usize, y as usize);
        Rgb([v, v, v])
    })
}

fn mask_rgb(mask: &BinaryImage) -> RgbImage {
    RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        let v = if mask.get(x as usize, y as usize) { 255 } else { 0 };
        Rgb([v, v, v])
    })
}

fn put(img: &mut RgbImage, x: isize, y: isize, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_segment(img: &mut RgbImage, hit: &LineSegmentHit, c: Rgb<u8>) {
    for (x, y) in bresenham(hit.x1 as isize, hit.y1 as isize, hit.x2 as isize, hit.y2 as isize) {
        put(img, x, y, c);
    }
}

fn draw_rect(img: &mut RgbImage, b: &BoundingBox, c: Rgb<u8>) {
    let (x0, y0, x1, y1) = (b.x_min as isize, b.y_min as isize, b.x_max as isize, b.y_max as isize);
    for x in x0..=x1 {
        put(img, x, y0, c);
        put(img, x, y1, c);
    }
    for y in y0..=y1 {
        put(img, x0, y, c);
        put(img, x1, y, c);
    }
}

fn draw_dot(img: &mut RgbImage, (x, y): (f64, f64), c: Rgb<u8>) {
    let (x, y) = (x.round() as isize, y.round() as isize);
    for dy in -2..=2 {
        for dx in -2..=2 {
            put(img, x + dx, y + dy, c);
        }
    }
}

fn draw_circle(img: &mut RgbImage, hit: &CircleHit, c: Rgb<u8>) {
    let steps = (2.0 * std::f64::consts::PI * hit.radius).ceil().max(16.0) as usize * 2;
    for k in 0..steps {
        let a = k as f64 / steps as f64 * 2.0 * std::f64::consts::PI;
        put(
            img,
            (hit.cx + hit.radius * a.cos()).round() as isize,
            (hit.cy + hit.radius * a.sin()).round() as isize,
            c,
        );
    }
}
