//! Seeded synthetic pages with known line boxes, for end-to-end tests.
//!
//! Each row is a band of blob "words" made of vertical character strokes
//! and a body, optionally joined by a head stroke along the top. Rows are
//! separated by at least three row heights. Optional rings straddle the gap
//! between adjacent rows so that, unbroken, they would merge the two rows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::components::BoundingBox;
use crate::raster::RasterImage;

/// Planted rings are `2 * RING_HALF_WIDTH + 1` pixels thick.
pub const RING_HALF_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthOptions {
    pub lines: usize,
    /// Join each word's strokes with a head stroke.
    pub matra: bool,
    /// Plant rings bridging adjacent rows.
    pub circle_bridges: bool,
    /// Isolated ink specks scattered over the page.
    pub specks: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            lines: 5,
            matra: true,
            circle_bridges: false,
            specks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantedRing {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Index of the upper of the two rows it touches.
    pub upper_row: usize,
}

#[derive(Debug, Clone)]
pub struct SynthPage {
    pub image: RasterImage,
    /// Ground-truth line boxes, top to bottom.
    pub lines: Vec<BoundingBox>,
    pub rings: Vec<PlantedRing>,
}

struct Row {
    top: usize,
    height: usize,
    /// Inclusive x ranges of the words.
    words: Vec<(usize, usize)>,
}

/// Generates a page from `seed`. The same seed and options always produce
/// the same page.
pub fn generate_page(seed: u64, opts: &SynthOptions) -> SynthPage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = opts.lines.max(1);
    let width = rng.gen_range(1000..=1400usize);
    let margin_x = rng.gen_range(40..=80usize);
    let margin_top = rng.gen_range(50..=90usize);

    // Bridging rings must span the gap with a radius of at most 40.
    let height_range = if opts.circle_bridges { 16..=19 } else { 18..=32 };
    let row_h = rng.gen_range(height_range);
    let gap_extra = if opts.circle_bridges { 6 } else { row_h };

    let mut rows = Vec::with_capacity(k);
    let mut y = margin_top;
    for _ in 0..k {
        let height = row_h + rng.gen_range(0..=2usize);
        rows.push(Row {
            top: y,
            height,
            words: Vec::new(),
        });
        y += height + 3 * (row_h + 2) + rng.gen_range(0..=gap_extra);
    }
    let last = rows.last().expect("at least one row");
    let page_h = last.top + last.height + rng.gen_range(50..=90usize);

    let paper: u8 = rng.gen_range(200..=240);
    let ink: u8 = rng.gen_range(20..=70);
    let mut mask = vec![false; width * page_h];

    for row in rows.iter_mut() {
        let n_words = rng.gen_range(3..=10usize);
        let usable = width - 2 * margin_x;
        let mut spans: Vec<(usize, usize)> = (0..n_words)
            .map(|_| (rng.gen_range(40..=100usize), rng.gen_range(20..=35usize)))
            .collect();
        while spans.len() > 3 && spans.iter().map(|s| s.0 + s.1).sum::<usize>() > usable {
            spans.pop();
        }
        let total: usize = spans.iter().map(|s| s.0 + s.1).sum();
        let mut x = margin_x + rng.gen_range(0..=usable.saturating_sub(total));
        for (word_w, gap) in spans {
            draw_word(&mut mask, width, x, row.top, word_w, row.height, opts.matra, &mut rng);
            row.words.push((x, x + word_w - 1));
            x += word_w + gap;
        }
    }

    let mut rings = Vec::new();
    if opts.circle_bridges && k >= 2 {
        let n_rings = rng.gen_range(1..=2usize.min(k - 1));
        let mut pairs: Vec<usize> = (0..k - 1).collect();
        for _ in 0..n_rings {
            let i = pairs.swap_remove(rng.gen_range(0..pairs.len()));
            if let Some(ring) = plant_ring(&mut mask, width, page_h, &rows, i, &mut rng) {
                rings.push(ring);
            }
        }
    }

    // Specks: single pixels and 2x1 dots away from the rows.
    for _ in 0..opts.specks {
        let sx = rng.gen_range(0..width - 1);
        let sy = rng.gen_range(0..page_h);
        let near_row = rows.iter().any(|r| sy + 4 >= r.top && sy <= r.top + r.height + 4);
        if near_row {
            continue;
        }
        mask[sy * width + sx] = true;
        if rng.gen_bool(0.5) {
            mask[sy * width + sx + 1] = true;
        }
    }

    let lines = rows.iter().map(row_box).collect();
    let data: Vec<u8> = mask
        .iter()
        .map(|&on| {
            let base = if on { ink } else { paper } as i32;
            (base + rng.gen_range(-8..=8)).clamp(0, 255) as u8
        })
        .collect();
    SynthPage {
        image: RasterImage::new(width, page_h, data).expect("dims match data"),
        lines,
        rings,
    }
}

#[allow(clippy::too_many_arguments)]
fn draw_word(
    mask: &mut [bool],
    width: usize,
    x0: usize,
    top: usize,
    word_w: usize,
    row_h: usize,
    matra: bool,
    rng: &mut ChaCha8Rng,
) {
    let mut fill = |x: usize, y0: usize, y1: usize| {
        for y in y0..=y1 {
            mask[y * width + x] = true;
        }
    };
    let bottom = top + row_h - 1;
    let body_top = top + row_h / 4;
    // Characters: bodies 8..16 wide separated by 2-3 px slits.
    let mut x = x0;
    let end = x0 + word_w - 1;
    while x <= end {
        let cw = rng.gen_range(8..=16usize).min(end - x + 1);
        let lo = body_top + rng.gen_range(0..=2usize);
        let hi = bottom - rng.gen_range(0..=row_h / 5);
        for cx in x..x + cw {
            fill(cx, lo, hi);
        }
        // A full-height stem pins the row band.
        let stem = x + rng.gen_range(0..cw.saturating_sub(3).max(1));
        for sx in stem..(stem + 4).min(x + cw) {
            fill(sx, top, bottom);
        }
        x += cw + rng.gen_range(2..=3usize);
    }
    // Word extremes always reach the band edges.
    for sx in [x0, end] {
        fill(sx, top, bottom);
    }
    if matra {
        for sx in x0..=end {
            fill(sx, top, top + 3);
        }
    }
}

fn plant_ring(
    mask: &mut [bool],
    width: usize,
    page_h: usize,
    rows: &[Row],
    upper: usize,
    rng: &mut ChaCha8Rng,
) -> Option<PlantedRing> {
    let (a, b) = (&rows[upper], &rows[upper + 1]);
    let a_bottom = a.top + a.height - 1;
    let gap = b.top - a_bottom - 1;
    // Columns where both rows have a word with some margin.
    let candidates: Vec<usize> = (0..width)
        .filter(|&x| {
            let inside = |r: &Row| r.words.iter().any(|&(l, h)| x >= l + 8 && x + 8 <= h);
            inside(a) && inside(b)
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let cx = candidates[rng.gen_range(0..candidates.len())] as f64;
    let cy = (a_bottom + b.top) as f64 / 2.0;
    let radius = (gap as f64 / 2.0).ceil() + RING_HALF_WIDTH + 2.0;
    let reach = radius + RING_HALF_WIDTH + 1.0;
    let y0 = (cy - reach).max(0.0) as usize;
    let y1 = ((cy + reach) as usize).min(page_h - 1);
    let x0 = (cx - reach).max(0.0) as usize;
    let x1 = ((cx + reach) as usize).min(width - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if ((x as f64 - cx).hypot(y as f64 - cy) - radius).abs() <= RING_HALF_WIDTH {
                mask[y * width + x] = true;
            }
        }
    }
    Some(PlantedRing {
        cx,
        cy,
        radius,
        upper_row: upper,
    })
}

/// Tight box of the row's word ink (rings excluded).
fn row_box(row: &Row) -> BoundingBox {
    let x_min = row.words.first().expect("row has words").0;
    let x_max = row.words.last().expect("row has words").1;
    BoundingBox {
        x_min,
        y_min: row.top,
        x_max,
        y_max: row.top + row.height - 1,
    }
}
