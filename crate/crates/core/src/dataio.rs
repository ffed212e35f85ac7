//! Dataset traversal, the `Folder_Page[_Line[_Word]]` naming grammar,
//! YOLO / PascalVOC line annotations and crop export.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use walkdir::WalkDir;

use crate::components::BoundingBox;
use crate::error::{Error, Result};
use crate::lineclust::TextLine;
use crate::raster::{save_png, RasterImage};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// A parsed file stem such as `7_2` (page), `7_2_3` (line) or `7_2_3_4`
/// (word). All numbers are positive and written without leading zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SampleName {
    pub folder: u32,
    pub page: u32,
    pub line: Option<u32>,
    pub word: Option<u32>,
}

impl SampleName {
    pub fn page(folder: u32, page: u32) -> Self {
        Self {
            folder,
            page,
            line: None,
            word: None,
        }
    }

    pub fn line(folder: u32, page: u32, line: u32) -> Self {
        Self {
            folder,
            page,
            line: Some(line),
            word: None,
        }
    }

    pub fn is_page(&self) -> bool {
        self.line.is_none()
    }
}

impl fmt::Display for SampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.folder, self.page)?;
        if let Some(l) = self.line {
            write!(f, "_{l}")?;
        }
        if let Some(w) = self.word {
            write!(f, "_{w}")?;
        }
        Ok(())
    }
}

fn parse_positive(part: &str) -> Option<u32> {
    if part.is_empty() || part.starts_with('0') || !part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    part.parse().ok().filter(|&n| n > 0)
}

impl FromStr for SampleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('_').collect();
        let nums: Option<Vec<u32>> = parts.iter().map(|p| parse_positive(p)).collect();
        match nums.as_deref() {
            Some(&[folder, page]) => Ok(Self::page(folder, page)),
            Some(&[folder, page, line]) => Ok(Self::line(folder, page, line)),
            Some(&[folder, page, line, word]) => Ok(Self {
                folder,
                page,
                line: Some(line),
                word: Some(word),
            }),
            _ => Err(Error::Format(format!("'{s}' does not match Folder_Page[_Line[_Word]]"))),
        }
    }
}

/// Identifies a page for output naming. Images outside the dataset grammar
/// keep their own file stem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(untagged)]
pub enum PageId {
    Dataset { folder: u32, page: u32 },
    Other(String),
}

impl PageId {
    pub fn from_path(path: &Path) -> Self {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "page".to_string());
        match stem.parse::<SampleName>() {
            Ok(n) if n.is_page() => PageId::Dataset {
                folder: n.folder,
                page: n.page,
            },
            _ => PageId::Other(stem),
        }
    }

    pub fn stem(&self) -> String {
        match self {
            PageId::Dataset { folder, page } => SampleName::page(*folder, *page).to_string(),
            PageId::Other(s) => s.clone(),
        }
    }

    /// `out/<Folder>/<Page>` for dataset pages, `out/<stem>` otherwise.
    pub fn output_dir(&self, out_root: &Path) -> PathBuf {
        match self {
            PageId::Dataset { folder, page } => out_root.join(folder.to_string()).join(page.to_string()),
            PageId::Other(s) => out_root.join(s),
        }
    }

    /// File stem of the 1-based `line_number`-th line crop.
    pub fn line_stem(&self, line_number: usize) -> String {
        format!("{}_{line_number}", self.stem())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetEntry {
    pub folder: u32,
    pub page: u32,
    pub image: PathBuf,
    /// A sibling `.xml` or `.txt` file with the same stem, if any.
    pub annotation: Option<PathBuf>,
}

impl DatasetEntry {
    pub fn page_id(&self) -> PageId {
        PageId::Dataset {
            folder: self.folder,
            page: self.page,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetScan {
    pub entries: Vec<DatasetEntry>,
    /// Files that are not page images of the dataset grammar.
    pub skipped: Vec<PathBuf>,
}

fn extension_lower(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn is_image_path(path: &Path) -> bool {
    extension_lower(path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
}

fn sibling_annotation(image: &Path) -> Option<PathBuf> {
    ["xml", "txt"]
        .iter()
        .map(|ext| image.with_extension(ext))
        .find(|p| p.is_file())
}

/// Recursively collects page images named `<Folder>_<Page>.<ext>`, sorted
/// numerically by (folder, page) and then by path.
pub fn scan_dataset(root: &Path) -> Result<DatasetScan> {
    if !root.is_dir() {
        return Err(Error::io(
            format!("reading dataset root {}", root.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut scan = DatasetScan::default();
    let mut annotations = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let context = format!("walking {}", root.display());
            match e.into_io_error() {
                Some(io) => Error::io(context, io),
                None => Error::Format(format!("{context}: filesystem loop")),
            }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.into_path();
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<SampleName>().ok());
        match name {
            Some(n) if n.is_page() && is_image_path(&path) => {
                scan.entries.push(DatasetEntry {
                    folder: n.folder,
                    page: n.page,
                    annotation: sibling_annotation(&path),
                    image: path,
                });
            }
            Some(n) if n.is_page() && matches!(extension_lower(&path).as_deref(), Some("xml" | "txt")) => {
                annotations.push(path);
            }
            _ => scan.skipped.push(path),
        }
    }
    // Annotation files not attached to any image are reported as skipped.
    for a in annotations {
        if !scan
            .entries
            .iter()
            .any(|e| e.annotation.as_deref() == Some(a.as_path()))
        {
            scan.skipped.push(a);
        }
    }
    scan.entries
        .sort_by(|a, b| (a.folder, a.page, &a.image).cmp(&(b.folder, b.page, &b.image)));
    scan.skipped.sort();
    Ok(scan)
}

/// Line boxes of one image in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineAnnotation {
    pub width: usize,
    pub height: usize,
    pub class_id: u32,
    pub boxes: Vec<BoundingBox>,
}

impl LineAnnotation {
    pub fn new(width: usize, height: usize, boxes: Vec<BoundingBox>) -> Result<Self> {
        let ann = Self {
            width,
            height,
            class_id: 0,
            boxes,
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Parameter("annotation image dims must be positive".into()));
        }
        if let Some(b) = self.boxes.iter().find(|b| !b.fits_within(self.width, self.height)) {
            return Err(Error::Parameter(format!(
                "box {b:?} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Normalized `(cx, cy, w, h)` of an inclusive pixel box.
pub fn normalize_box(b: &BoundingBox, width: usize, height: usize) -> [f64; 4] {
    let (w, h) = (width as f64, height as f64);
    [
        (b.x_min + b.x_max + 1) as f64 / 2.0 / w,
        (b.y_min + b.y_max + 1) as f64 / 2.0 / h,
        b.width() as f64 / w,
        b.height() as f64 / h,
    ]
}

/// Inverse of [`normalize_box`]: edges are rounded to the pixel grid and the
/// result is clamped into the image.
pub fn denormalize_box(fields: [f64; 4], width: usize, height: usize) -> BoundingBox {
    let [cx, cy, bw, bh] = fields;
    let span = |c: f64, s: f64, n: usize| -> (usize, usize) {
        let lo = ((c - s / 2.0) * n as f64).round().max(0.0) as usize;
        let hi = ((c + s / 2.0) * n as f64).round() as usize;
        let lo = lo.min(n - 1);
        let hi = hi.saturating_sub(1).clamp(lo, n - 1);
        (lo, hi)
    };
    let (x_min, x_max) = span(cx, bw, width);
    let (y_min, y_max) = span(cy, bh, height);
    BoundingBox {
        x_min,
        y_min,
        x_max,
        y_max,
    }
}

pub fn format_yolo(ann: &LineAnnotation) -> String {
    let mut out = String::new();
    for b in &ann.boxes {
        let [cx, cy, w, h] = normalize_box(b, ann.width, ann.height);
        out.push_str(&format!("{} {cx:.6} {cy:.6} {w:.6} {h:.6}\n", ann.class_id));
    }
    out
}

pub fn parse_yolo(text: &str, width: usize, height: usize, path: &Path) -> Result<LineAnnotation> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter("image dims must be positive".into()));
    }
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut class_id = None;
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let class: u32 = fields[0]
            .parse()
            .map_err(|_| err(line_no, format!("bad class id '{}'", fields[0])))?;
        if *class_id.get_or_insert(class) != class {
            return Err(err(
                line_no,
                format!("mixed class ids ({} and {class})", class_id.unwrap()),
            ));
        }
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            let f = fields[k + 1];
            *v = f
                .parse::<f64>()
                .map_err(|_| err(line_no, format!("field {} '{f}' is not a number", k + 2)))?;
            if !(0.0..=1.0).contains(v) {
                return Err(err(line_no, format!("field {} = {f} outside [0, 1]", k + 2)));
            }
        }
        if vals[2] == 0.0 || vals[3] == 0.0 {
            return Err(err(line_no, "zero-size box".into()));
        }
        boxes.push(denormalize_box(vals, width, height));
    }
    Ok(LineAnnotation {
        width,
        height,
        class_id: class_id.unwrap_or(0),
        boxes,
    })
}

pub fn read_yolo(path: &Path, width: usize, height: usize) -> Result<LineAnnotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_yolo(&text, width, height, path)
}

pub fn write_yolo(ann: &LineAnnotation, path: &Path) -> Result<()> {
    ann.validate()?;
    fs::write(path, format_yolo(ann)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// PascalVOC XML with inclusive, 0-based pixel coordinates.
pub fn format_voc(ann: &LineAnnotation, filename: &str) -> String {
    let mut out = String::from("<annotation>\n");
    out.push_str(&format!("  <filename>{}</filename>\n", xml_escape(filename)));
    out.push_str(&format!(
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>1</depth>\n  </size>\n",
        ann.width, ann.height
    ));
    for b in &ann.boxes {
        out.push_str(&format!(
            "  <object>\n    <name>line</name>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>\n",
            b.x_min, b.y_min, b.x_max, b.y_max
        ));
    }
    out.push_str("</annotation>\n");
    out
}

pub fn write_voc(ann: &LineAnnotation, path: &Path) -> Result<()> {
    ann.validate()?;
    let filename = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    fs::write(path, format_voc(ann, &filename)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

pub fn parse_voc(text: &str, path: &Path) -> Result<LineAnnotation> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.pos().row as usize,
        message: e.to_string(),
    })?;
    let err = |node: roxmltree::Node, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: doc.text_pos_at(node.range().start).row as usize,
        message,
    };
    let int = |parent: roxmltree::Node, name: &str| -> Result<usize> {
        let node = child(parent, name).ok_or_else(|| err(parent, format!("missing <{name}>")))?;
        let text = node.text().unwrap_or("").trim();
        // Some tools write coordinates as floats; accept integral ones.
        text.parse::<usize>()
            .ok()
            .or_else(|| {
                text.parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0)
                    .map(|v| v.round() as usize)
            })
            .ok_or_else(|| err(node, format!("<{name}> '{text}' is not a pixel coordinate")))
    };
    let root = doc.root_element();
    let size = child(root, "size").ok_or_else(|| err(root, "missing <size>".into()))?;
    let (width, height) = (int(size, "width")?, int(size, "height")?);
    let mut boxes = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let bnd = child(obj, "bndbox").ok_or_else(|| err(obj, "missing <bndbox>".into()))?;
        let b = BoundingBox::new(
            int(bnd, "xmin")?,
            int(bnd, "ymin")?,
            int(bnd, "xmax")?,
            int(bnd, "ymax")?,
        )
        .map_err(|e| err(bnd, e.to_string()))?;
        boxes.push(b);
    }
    let ann = LineAnnotation {
        width,
        height,
        class_id: 0,
        boxes,
    };
    ann.validate().map_err(|e| err(root, e.to_string()))?;
    Ok(ann)
}

pub fn read_voc(path: &Path) -> Result<LineAnnotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_voc(&text, path)
}

/// Writes `<page dir>/lines/<stem>_<Line>.png` for each line, numbering
/// lines from 1 in the given order. Existing files are an error unless
/// `overwrite` is set; collisions are checked before anything is written.
pub fn export_line_crops(
    out_root: &Path,
    page: &PageId,
    lines: &[TextLine],
    crops: &[RasterImage],
    overwrite: bool,
) -> Result<Vec<PathBuf>> {
    if lines.len() != crops.len() {
        return Err(Error::Parameter(format!(
            "{} lines but {} crops",
            lines.len(),
            crops.len()
        )));
    }
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    let dir = page.output_dir(out_root).join("lines");
    let paths: Vec<PathBuf> = lines
        .iter()
        .map(|l| dir.join(format!("{}.png", page.line_stem(l.line_index + 1))))
        .collect();
    if !overwrite {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Collision(p.clone()));
        }
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for (crop, path) in crops.iter().zip(&paths) {
        save_png(&crop.to_gray_image(), path)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: usize, y0: usize, x1: usize, y1: usize) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn name_grammar() {
        assert_eq!("7_2".parse::<SampleName>().unwrap(), SampleName::page(7, 2));
        assert_eq!("7_2_3".parse::<SampleName>().unwrap(), SampleName::line(7, 2, 3));
        let w: SampleName = "7_2_3_4".parse().unwrap();
        assert_eq!((w.line, w.word), (Some(3), Some(4)));
        assert_eq!(w.to_string(), "7_2_3_4");
        for bad in ["7", "7_", "a_1", "07_1", "0_1", "1_2_3_4_5", "", "1__2", "1_-2"] {
            assert!(bad.parse::<SampleName>().is_err(), "{bad}");
        }
    }

    #[test]
    fn page_id_paths() {
        let p = PageId::from_path(Path::new("/x/7_2.jpg"));
        assert_eq!(p, PageId::Dataset { folder: 7, page: 2 });
        assert_eq!(p.output_dir(Path::new("out")), Path::new("out/7/2"));
        assert_eq!(p.line_stem(3), "7_2_3");
        let q = PageId::from_path(Path::new("scan.png"));
        assert_eq!(q, PageId::Other("scan".into()));
        assert_eq!(q.output_dir(Path::new("out")), Path::new("out/scan"));
    }

    #[test]
    fn yolo_examples() {
        let p = Path::new("a.txt");
        let full = parse_yolo("0 0.5 0.5 1.0 1.0\n", 100, 100, p).unwrap();
        assert_eq!(full.boxes, vec![b(0, 0, 99, 99)]);
        assert_eq!(format_yolo(&full), "0 0.500000 0.500000 1.000000 1.000000\n");

        let ann = parse_yolo("0 0.25 0.1 0.5 0.1", 1000, 500, p).unwrap();
        assert_eq!(ann.boxes, vec![b(0, 25, 499, 74)]);
        assert_eq!(ann.boxes[0].x_min + ann.boxes[0].width() / 2, 250);

        assert!(parse_yolo("", 10, 10, p).unwrap().boxes.is_empty());
    }

    #[test]
    fn yolo_errors_carry_line_numbers() {
        let p = Path::new("bad.txt");
        match parse_yolo("0 0.5 0.5 0.1 0.1\n0 1.5 0.5 0.1 0.1\n", 10, 10, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_yolo("0 0.5 0.5 0.1\n", 10, 10, p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_yolo("0 x 0.5 0.1 0.1\n", 10, 10, p).is_err());
    }

    #[test]
    fn voc_roundtrip_and_empty() {
        let ann = LineAnnotation::new(120, 80, vec![b(3, 4, 100, 20), b(0, 0, 119, 79)]).unwrap();
        let text = format_voc(&ann, "1_1");
        assert!(text.contains("<name>line</name>"));
        assert_eq!(parse_voc(&text, Path::new("x.xml")).unwrap(), ann);

        let empty = LineAnnotation::new(10, 10, vec![]).unwrap();
        let text = format_voc(&empty, "e");
        assert!(!text.contains("<object>"));
        assert_eq!(parse_voc(&text, Path::new("e.xml")).unwrap(), empty);
        assert!(format_yolo(&empty).is_empty());
    }

    #[test]
    fn voc_rejects_out_of_image_box() {
        let text = "<annotation><size><width>10</width><height>10</height></size>\
            <object><name>line</name><bndbox><xmin>0</xmin><ymin>0</ymin><xmax>10</xmax><ymax>5</ymax></bndbox></object></annotation>";
        assert!(parse_voc(text, Path::new("x.xml")).is_err());
    }

    #[test]
    fn scan_orders_numerically() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_dataset(dir.path()).unwrap().entries.is_empty());
        for name in ["10_1.jpg", "3_2.jpg", "3_1.jpg", "notes.txt", "3_1.xml"] {
            fs::write(dir.path().join(name), b"").unwrap();
        }
        fs::create_dir(dir.path().join("lines")).unwrap();
        fs::write(dir.path().join("lines/3_1_1.png"), b"").unwrap();
        let scan = scan_dataset(dir.path()).unwrap();
        let order: Vec<(u32, u32)> = scan.entries.iter().map(|e| (e.folder, e.page)).collect();
        assert_eq!(order, vec![(3, 1), (3, 2), (10, 1)]);
        assert_eq!(scan.entries[0].annotation, Some(dir.path().join("3_1.xml")));
        assert_eq!(scan.skipped.len(), 2);
        assert!(scan.skipped.iter().any(|p| p.ends_with("notes.txt")));
        assert!(scan_dataset(&dir.path().join("missing")).is_err());
    }
}
