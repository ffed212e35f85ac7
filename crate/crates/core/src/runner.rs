//! File-level drivers: segment one image into an output tree, segment a
//! whole dataset in parallel, and score annotation directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{DynamicImage, ImageFormat, ImageReader};
use rayon::prelude::*;
use serde::Serialize;
use walkdir::WalkDir;

use crate::components::BoundingBox;
use crate::config::{EvalConfig, PipelineConfig};
use crate::dataio::{
    export_line_crops, is_image_path, read_voc, read_yolo, scan_dataset, write_voc, write_yolo, LineAnnotation, PageId,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalReport};
use crate::pipeline::{segment_page, StageTiming};
use crate::raster::{to_grayscale, RasterImage};

pub const PAGE_MANIFEST: &str = "manifest.json";
pub const BATCH_MANIFEST: &str = "batch_manifest.json";

/// Loads any supported image file as 8-bit grayscale.
pub fn load_gray(path: &Path) -> Result<RasterImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?
        .with_guessed_format()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let img = reader.decode()?;
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => to_grayscale(&img),
        other => to_grayscale(&DynamicImage::ImageRgb8(other.to_rgb8())),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentOptions {
    pub overwrite: bool,
    /// Write the numbered intermediate images to `<page dir>/debug/`.
    pub debug_dumps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestLine {
    /// 1-based, top to bottom.
    pub line_number: usize,
    /// Crop path relative to the page directory.
    pub file: String,
    /// Inclusive box in original image coordinates.
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub components: usize,
}

/// Everything needed to reproduce and audit one page run. Only `timings`
/// varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageManifest {
    pub image: String,
    pub page: String,
    pub original_width: usize,
    pub original_height: usize,
    pub working_width: usize,
    pub working_height: usize,
    pub threshold: Option<u8>,
    pub eps_cut: Option<f64>,
    pub hough_segments: usize,
    pub circles: usize,
    pub components: usize,
    pub line_count: usize,
    pub lines: Vec<ManifestLine>,
    pub yolo: String,
    pub voc: String,
    pub debug_stages: Vec<String>,
    pub warnings: Vec<String>,
    pub config: PipelineConfig,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct PageOutput {
    pub dir: PathBuf,
    pub manifest: PageManifest,
}

fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(format!("json: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Segments `image` and writes line crops, YOLO and VOC annotations and a
/// manifest under `page.output_dir(out_root)`. A page with no lines still
/// gets (empty) annotations and a manifest.
pub fn segment_file(
    image: &Path,
    page: &PageId,
    out_root: &Path,
    cfg: &PipelineConfig,
    opts: SegmentOptions,
) -> Result<PageOutput> {
    let start = Instant::now();
    let gray = load_gray(image)?;
    let seg = segment_page(&gray, cfg, opts.debug_dumps)?;
    for w in &seg.warnings {
        log::warn!("{}: {w}", image.display());
    }

    let dir = page.output_dir(out_root);
    let stem = page.stem();
    let yolo_name = format!("{stem}.txt");
    let voc_name = format!("{stem}.xml");
    let debug_dir = dir.join("debug");
    let debug_paths: Vec<PathBuf> = seg
        .stages
        .iter()
        .map(|s| debug_dir.join(format!("{}.png", s.name)))
        .collect();
    if !opts.overwrite {
        let fixed = [dir.join(&yolo_name), dir.join(&voc_name), dir.join(PAGE_MANIFEST)];
        if let Some(p) = fixed.iter().chain(&debug_paths).find(|p| p.exists()) {
            return Err(Error::Collision(p.clone()));
        }
    }

    let crops = seg.crops(&gray)?;
    let crop_paths = export_line_crops(out_root, page, &seg.lines, &crops, opts.overwrite)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let ann = LineAnnotation::new(seg.original_width, seg.original_height, seg.line_boxes.clone())?;
    write_yolo(&ann, &dir.join(&yolo_name))?;
    write_voc(&ann, &dir.join(&voc_name))?;
    if !debug_paths.is_empty() {
        fs::create_dir_all(&debug_dir).map_err(|e| Error::io(format!("creating {}", debug_dir.display()), e))?;
        for (stage, path) in seg.stages.iter().zip(&debug_paths) {
            stage.image.save_with_format(path, ImageFormat::Png)?;
        }
    }

    let relative = |p: &Path| slash_path(p.strip_prefix(&dir).unwrap_or(p));
    let lines = seg
        .lines
        .iter()
        .zip(&seg.line_boxes)
        .zip(&crop_paths)
        .map(|((l, b), p)| ManifestLine {
            line_number: l.line_index + 1,
            file: relative(p),
            bbox: *b,
            components: l.members.len(),
        })
        .collect();
    let mut timings = seg.timings.clone();
    timings.push(StageTiming {
        stage: "total",
        ms: start.elapsed().as_secs_f64() * 1e3,
    });
    let manifest = PageManifest {
        image: slash_path(image),
        page: stem,
        original_width: seg.original_width,
        original_height: seg.original_height,
        working_width: seg.working_width,
        working_height: seg.working_height,
        threshold: seg.threshold,
        eps_cut: seg.eps_cut,
        hough_segments: seg.line_hits.len(),
        circles: seg.circle_hits.len(),
        components: seg.components.len(),
        line_count: seg.lines.len(),
        lines,
        yolo: yolo_name,
        voc: voc_name,
        debug_stages: debug_paths.iter().map(|p| relative(p)).collect(),
        warnings: seg.warnings.clone(),
        config: *cfg,
        timings,
    };
    write_json(&manifest, &dir.join(PAGE_MANIFEST))?;
    Ok(PageOutput { dir, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchPage {
    pub page: String,
    pub image: String,
    pub line_count: usize,
    /// Page manifest path relative to the output root.
    pub manifest: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchFailure {
    pub page: String,
    pub image: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchTiming {
    pub page: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchManifest {
    pub root: String,
    pub images: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub total_lines: usize,
    pub pages: Vec<BatchPage>,
    pub failures: Vec<BatchFailure>,
    /// Files under the root that are not dataset page images.
    pub skipped: Vec<String>,
    pub config: PipelineConfig,
    pub timings: Vec<BatchTiming>,
}

impl BatchManifest {
    /// True when there was work to do and none of it succeeded.
    pub fn all_failed(&self) -> bool {
        self.images > 0 && self.succeeded == 0
    }
}

/// Segments every page image of the dataset tree at `root` using `jobs`
/// worker threads. Per-image failures are recorded and do not stop the
/// batch. Results are ordered by page regardless of `jobs`.
pub fn run_batch(
    root: &Path,
    out_root: &Path,
    cfg: &PipelineConfig,
    opts: SegmentOptions,
    jobs: usize,
) -> Result<BatchManifest> {
    cfg.validate()?;
    if jobs == 0 {
        return Err(Error::Parameter("jobs must be positive".into()));
    }
    let scan = scan_dataset(root)?;
    let batch_path = out_root.join(BATCH_MANIFEST);
    if !opts.overwrite && batch_path.exists() {
        return Err(Error::Collision(batch_path));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let results: Vec<(Result<PageOutput>, f64)> = pool.install(|| {
        scan.entries
            .par_iter()
            .map(|entry| {
                let start = Instant::now();
                let out = segment_file(&entry.image, &entry.page_id(), out_root, cfg, opts);
                (out, start.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    });

    let relative_to_root = |p: &Path| slash_path(p.strip_prefix(root).unwrap_or(p));
    let mut pages = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (entry, (result, ms)) in scan.entries.iter().zip(results) {
        let page = entry.page_id().stem();
        let image = relative_to_root(&entry.image);
        timings.push(BatchTiming { page: page.clone(), ms });
        match result {
            Ok(out) => {
                let manifest = out.dir.join(PAGE_MANIFEST);
                pages.push(BatchPage {
                    page,
                    image,
                    line_count: out.manifest.line_count,
                    manifest: slash_path(manifest.strip_prefix(out_root).unwrap_or(&manifest)),
                    warnings: out.manifest.warnings,
                });
            }
            Err(e) => {
                log::error!("{}: {e}", entry.image.display());
                failures.push(BatchFailure {
                    page,
                    image,
                    error: e.to_string(),
                });
            }
        }
    }
    let manifest = BatchManifest {
        root: slash_path(root),
        images: scan.entries.len(),
        succeeded: pages.len(),
        failed: failures.len(),
        total_lines: pages.iter().map(|p| p.line_count).sum(),
        pages,
        failures,
        skipped: scan.skipped.iter().map(|p| relative_to_root(p)).collect(),
        config: *cfg,
        timings,
    };
    fs::create_dir_all(out_root).map_err(|e| Error::io(format!("creating {}", out_root.display()), e))?;
    write_json(&manifest, &batch_path)?;
    Ok(manifest)
}

/// Line boxes keyed by file stem, with notes about files that were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub boxes: BTreeMap<String, Vec<BoundingBox>>,
    pub warnings: Vec<String>,
}

fn sibling_image(path: &Path) -> Option<PathBuf> {
    let dir = path.parent()?;
    let stem = path.file_stem()?;
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_stem() == Some(stem) && is_image_path(p))
        .collect();
    found.sort();
    found.into_iter().next()
}

/// Recursively loads `.xml` (VOC) and `.txt` (YOLO) annotations under
/// `dir`, keyed by file stem. When both exist for a stem in the same
/// directory the VOC file wins. YOLO files take their image size from a
/// sibling image with the same stem and are skipped without one. The same
/// stem in two directories is an error.
pub fn load_annotation_dir(dir: &Path) -> Result<AnnotationSet> {
    if !dir.is_dir() {
        return Err(Error::io(
            format!("reading annotations {}", dir.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut chosen: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut set = AnnotationSet::default();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Format(format!("walking {}: {e}", dir.display())))?;
        let path = entry.path();
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !entry.file_type().is_file() || !matches!(ext.as_deref(), Some("xml" | "txt")) {
            continue;
        }
        let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
            continue;
        };
        match chosen.get(&stem) {
            Some(prev) if prev.parent() != path.parent() => {
                return Err(Error::Format(format!(
                    "annotation id '{stem}' appears in both {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
            Some(prev) if prev.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) => continue,
            _ => {}
        }
        chosen.insert(stem, path.to_path_buf());
    }
    for (stem, path) in chosen {
        let is_voc = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml"));
        let ann = if is_voc {
            read_voc(&path)?
        } else {
            let Some(image) = sibling_image(&path) else {
                set.warnings.push(format!(
                    "{}: no sibling image to size the YOLO boxes; skipped",
                    path.display()
                ));
                continue;
            };
            let (w, h) = image::image_dimensions(&image)?;
            read_yolo(&path, w as usize, h as usize)?
        };
        set.boxes.insert(stem, ann.boxes);
    }
    Ok(set)
}

/// Scores the annotations under `det_dir` against those under `gt_dir`.
pub fn evaluate_dirs(gt_dir: &Path, det_dir: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let gt = load_annotation_dir(gt_dir)?;
    let det = load_annotation_dir(det_dir)?;
    let mut report = evaluate_dataset(&gt.boxes, &det.boxes, &cfg.matching, cfg.ap_mode)?;
    let mut warnings = gt.warnings;
    warnings.extend(det.warnings);
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

/// The 11-point interpolated precision curve as `recall,precision` CSV.
pub fn pr_curve_csv(report: &EvalReport) -> String {
    let mut out = String::from("recall,precision\n");
    for (i, p) in report.eleven_point.iter().enumerate() {
        out.push_str(&format!("{:.1},{p:.6}\n", i as f64 / 10.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_page, SynthOptions};

    fn write_page(dir: &Path, name: &str, seed: u64, lines: usize) {
        let page = generate_page(
            seed,
            &SynthOptions {
                lines,
                ..SynthOptions::default()
            },
        );
        page.image.to_gray_image().save(dir.join(name)).unwrap();
    }

    #[test]
    fn segment_file_writes_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        write_page(tmp.path(), "3_4.png", 11, 3);
        let out = tmp.path().join("out");
        let opts = SegmentOptions {
            overwrite: false,
            debug_dumps: true,
        };
        let cfg = PipelineConfig::default();
        let page = PageId::from_path(Path::new("3_4.png"));
        let res = segment_file(&tmp.path().join("3_4.png"), &page, &out, &cfg, opts).unwrap();
        assert_eq!(res.dir, out.join("3").join("4"));
        assert_eq!(res.manifest.line_count, 3);
        for f in [
            "3_4.txt",
            "3_4.xml",
            "manifest.json",
            "lines/3_4_1.png",
            "lines/3_4_3.png",
            "debug/11_line_boxes.png",
        ] {
            assert!(res.dir.join(f).is_file(), "{f}");
        }
        let voc = read_voc(&res.dir.join("3_4.xml")).unwrap();
        assert_eq!(voc.boxes.len(), 3);
        let err = segment_file(&tmp.path().join("3_4.png"), &page, &out, &cfg, opts).unwrap_err();
        assert!(matches!(err, Error::Collision(_)), "{err}");
        let again = SegmentOptions {
            overwrite: true,
            ..opts
        };
        assert!(segment_file(&tmp.path().join("3_4.png"), &page, &out, &cfg, again).is_ok());
    }

    #[test]
    fn blank_page_gives_empty_annotations() {
        let tmp = tempfile::tempdir().unwrap();
        RasterImage::filled(300, 200, 255)
            .to_gray_image()
            .save(tmp.path().join("blank.png"))
            .unwrap();
        let page = PageId::from_path(Path::new("blank.png"));
        let res = segment_file(
            &tmp.path().join("blank.png"),
            &page,
            tmp.path(),
            &PipelineConfig::default(),
            SegmentOptions::default(),
        )
        .unwrap();
        assert_eq!(res.manifest.line_count, 0);
        assert!(!res.manifest.warnings.is_empty());
        assert_eq!(fs::read_to_string(res.dir.join("blank.txt")).unwrap(), "");
    }

    #[test]
    fn batch_records_failures() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("data");
        fs::create_dir_all(root.join("1")).unwrap();
        write_page(&root.join("1"), "1_1.png", 1, 2);
        fs::write(root.join("1").join("1_2.png"), b"not a png").unwrap();
        fs::write(root.join("notes.md"), b"x").unwrap();
        let out = tmp.path().join("out");
        let m = run_batch(&root, &out, &PipelineConfig::default(), SegmentOptions::default(), 2).unwrap();
        assert_eq!((m.images, m.succeeded, m.failed), (2, 1, 1));
        assert_eq!(m.failures[0].page, "1_2");
        assert_eq!(m.skipped, vec!["notes.md".to_string()]);
        assert!(!m.all_failed());
        assert!(out.join(BATCH_MANIFEST).is_file());
    }

    #[test]
    fn annotation_dir_prefers_voc_and_sizes_yolo() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        let b = BoundingBox::new(10, 10, 49, 19).unwrap();
        let ann = LineAnnotation::new(100, 50, vec![b]).unwrap();
        write_voc(&ann, &d.join("1_1.xml")).unwrap();
        fs::write(d.join("1_1.txt"), "0 0.5 0.5 1 1\n").unwrap();
        write_yolo(&ann, &d.join("1_2.txt")).unwrap();
        RasterImage::filled(100, 50, 255)
            .to_gray_image()
            .save(d.join("1_2.png"))
            .unwrap();
        fs::write(d.join("readme.txt"), "hello").unwrap();
        let set = load_annotation_dir(d).unwrap();
        assert_eq!(set.boxes["1_1"], vec![b]);
        assert_eq!(set.boxes["1_2"], vec![b]);
        assert!(!set.boxes.contains_key("readme"));
        assert_eq!(set.warnings.len(), 1);
    }

    #[test]
    fn pr_csv_has_eleven_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let ann = LineAnnotation::new(100, 50, vec![BoundingBox::new(0, 0, 9, 9).unwrap()]).unwrap();
        write_voc(&ann, &tmp.path().join("1_1.xml")).unwrap();
        let report = evaluate_dirs(tmp.path(), tmp.path(), &EvalConfig::default()).unwrap();
        assert_eq!(report.aggregate.fm, 1.0);
        let csv = pr_curve_csv(&report);
        assert_eq!(csv.lines().count(), 12);
        assert!(csv.ends_with("1.0,1.000000\n"));
    }
}
