//! Connected-component labeling and bounding boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Axis-aligned pixel rectangle with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::Parameter(format!(
                "degenerate box ({x_min},{y_min})-({x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Box centre `((x_min + x_max) / 2, (y_min + y_max) / 2)`.
    pub fn midpoint(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn intersection_area(&self, other: &Self) -> usize {
        self.intersection(other).map_or(0, |b| b.area())
    }

    pub fn union_box(&self, other: &Self) -> Self {
        Self {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_max < width && self.y_max < height
    }

    /// Smallest box enclosing all of `boxes`, or `None` when empty.
    pub fn enclosing<'a>(boxes: impl IntoIterator<Item = &'a BoundingBox>) -> Option<Self> {
        boxes.into_iter().copied().reduce(|a, b| a.union_box(&b))
    }
}

/// Per-pixel component labels; `0` is background, components are `1..=count`
/// numbered in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LabelMap {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Slot 0 is the background and never merged.
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling.
pub fn label_components(binary: &BinaryImage, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (binary.width(), binary.height());
    let mut labels = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
    };

    for y in 0..h {
        for x in 0..w {
            if !binary.get(x, y) {
                continue;
            }
            let mut current = 0u32;
            for &(dx, dy) in back {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let l = labels[ny as usize * w + nx as usize];
                if l == 0 {
                    continue;
                }
                current = if current == 0 { l } else { sets.union(current, l) };
            }
            labels[y * w + x] = if current == 0 { sets.make() } else { current };
        }
    }

    // Second pass: resolve to roots and compact in first-seen order.
    let mut compact = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if compact[root] == 0 {
            count += 1;
            compact[root] = count;
        }
        *l = compact[root];
    }

    LabelMap {
        width: w,
        height: h,
        labels,
        count: count as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreaMode {
    /// Filter on bounding-box area.
    #[default]
    BoxArea,
    /// Filter on the number of foreground pixels in the component.
    PixelCount,
}

/// Boxes that survived the area filter, in label order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSet {
    pub boxes: Vec<BoundingBox>,
    /// Foreground pixels per surviving component, aligned with `boxes`.
    pub pixel_counts: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub min_area_used: f64,
    pub area_mode: AreaMode,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn midpoints(&self) -> Vec<(f64, f64)> {
        self.boxes.iter().map(BoundingBox::midpoint).collect()
    }
}

/// Tight boxes of every component, dropping those whose area (per `mode`)
/// is below `min_area`.
pub fn extract_boxes(labels: &LabelMap, min_area: f64, mode: AreaMode) -> ComponentSet {
    let n = labels.count;
    let mut extents: Vec<Option<BoundingBox>> = vec![None; n];
    let mut pixels = vec![0usize; n];
    for y in 0..labels.height {
        for x in 0..labels.width {
            let l = labels.get(x, y) as usize;
            if l == 0 {
                continue;
            }
            pixels[l - 1] += 1;
            let slot = &mut extents[l - 1];
            *slot = Some(match slot {
                None => BoundingBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                },
                Some(b) => BoundingBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min,
                    x_max: b.x_max.max(x),
                    y_max: y,
                },
            });
        }
    }
    let mut boxes = Vec::new();
    let mut pixel_counts = Vec::new();
    for (b, count) in extents.into_iter().zip(pixels) {
        let Some(b) = b else { continue };
        let measure = match mode {
            AreaMode::BoxArea => b.area(),
            AreaMode::PixelCount => count,
        };
        if measure as f64 >= min_area {
            boxes.push(b);
            pixel_counts.push(count);
        }
    }
    ComponentSet {
        boxes,
        pixel_counts,
        width: labels.width,
        height: labels.height,
        min_area_used: min_area,
        area_mode: mode,
    }
}
