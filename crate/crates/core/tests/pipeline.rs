use lineseg_core::config::PipelineConfig;
use lineseg_core::eval::{match_lines, MatchConfig};
use lineseg_core::pipeline::segment_page;
use lineseg_core::raster::RasterImage;
use lineseg_core::synth::{generate_page, SynthOptions};

#[test]
fn recovers_each_planted_row_count() {
    let cfg = PipelineConfig::default();
    for k in 1..=12 {
        let page = generate_page(
            300 + k as u64,
            &SynthOptions {
                lines: k,
                ..SynthOptions::default()
            },
        );
        let seg = segment_page(&page.image, &cfg, false).unwrap();
        assert_eq!(seg.lines.len(), k, "k = {k}: {:?}", seg.line_boxes);
        let o2o = match_lines(&page.lines, &seg.line_boxes, &MatchConfig::default()).len();
        assert_eq!(o2o, k, "k = {k}");
    }
}

#[test]
fn ring_bridges_do_not_merge_rows() {
    let cfg = PipelineConfig::default();
    let opts = SynthOptions {
        lines: 6,
        circle_bridges: true,
        ..SynthOptions::default()
    };
    for seed in 0..6 {
        let page = generate_page(seed, &opts);
        assert!(!page.rings.is_empty());
        let seg = segment_page(&page.image, &cfg, false).unwrap();
        assert!(!seg.circle_hits.is_empty(), "seed {seed}");
        assert_eq!(seg.lines.len(), 6, "seed {seed}");
    }
}

#[test]
fn bridged_rows_need_circle_breaking() {
    let mut cfg = PipelineConfig::default();
    cfg.circles.enabled = false;
    let opts = SynthOptions {
        lines: 6,
        circle_bridges: true,
        ..SynthOptions::default()
    };
    let page = generate_page(2, &opts);
    let seg = segment_page(&page.image, &cfg, false).unwrap();
    // The unbroken ring joins two rows into one component whose box
    // spoils at least one line rectangle.
    let o2o = match_lines(&page.lines, &seg.line_boxes, &MatchConfig::default()).len();
    assert!(o2o < 6, "{:?}", seg.line_boxes);
}

#[test]
fn segmentation_is_deterministic() {
    let page = generate_page(
        42,
        &SynthOptions {
            lines: 7,
            circle_bridges: true,
            ..SynthOptions::default()
        },
    );
    let cfg = PipelineConfig::default();
    let a = segment_page(&page.image, &cfg, true).unwrap();
    let b = segment_page(&page.image, &cfg, true).unwrap();
    assert_eq!(a.line_boxes, b.line_boxes);
    assert_eq!(a.cluster_labels, b.cluster_labels);
    assert_eq!(a.circle_hits, b.circle_hits);
    assert_eq!(a.stages.len(), 11);
    for (x, y) in a.stages.iter().zip(&b.stages) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.image, y.image);
    }
}

#[test]
fn narrow_page_boxes_map_back_to_original_size() {
    let page = generate_page(
        9,
        &SynthOptions {
            lines: 3,
            ..SynthOptions::default()
        },
    );
    // Halve the page so the pipeline has to upscale it.
    let (w, h) = (page.image.width() / 2, page.image.height() / 2);
    let small = RasterImage::from_fn(w, h, |x, y| page.image.get(2 * x, 2 * y));
    let seg = segment_page(&small, &PipelineConfig::default(), false).unwrap();
    assert!(seg.working_width >= 1000);
    assert_eq!(seg.lines.len(), 3);
    assert!(seg.line_boxes.iter().all(|b| b.fits_within(w, h)));
    assert_eq!(seg.crops(&small).unwrap().len(), 3);
}
