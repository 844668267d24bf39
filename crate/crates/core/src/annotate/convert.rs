use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::geometry::{BBox, ClassId, Detection, GroundTruthInstance, Polygon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub gt: Vec<GroundTruthInstance>,
}

/// Format-neutral label collection: class names plus per-image instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub classes: Vec<String>,
    pub images: Vec<LabeledImage>,
}

impl LabelSet {
    pub fn from_dataset(ds: &DatasetIndex) -> Self {
        Self {
            classes: ds.classes.clone(),
            images: ds
                .images
                .values()
                .map(|r| LabeledImage {
                    image_id: r.image_id.clone(),
                    width: r.width,
                    height: r.height,
                    gt: r.gt.clone(),
                })
                .collect(),
        }
    }

    /// Fails on the first instance that leaves its image or names an
    /// unknown class.
    pub fn validate(&self) -> Result<()> {
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::InvalidDataset(format!("image `{}` has zero size", img.image_id)));
            }
            for (k, g) in img.gt.iter().enumerate() {
                if !g.bbox.within(img.width as f64, img.height as f64) {
                    return Err(Error::OutOfBounds {
                        image_id: img.image_id.clone(),
                        detail: format!(
                            "instance {k} box {:?} exceeds {}x{}",
                            g.bbox.to_array(),
                            img.width,
                            img.height
                        ),
                    });
                }
                if g.class_id as usize >= self.classes.len() {
                    return Err(Error::InvalidDataset(format!(
                        "image `{}` instance {k} has class {} of {}",
                        img.image_id,
                        g.class_id,
                        self.classes.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToYolo,
    ToCoco,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to_yolo" | "yolo" => Ok(Direction::ToYolo),
            "to_coco" | "coco" => Ok(Direction::ToCoco),
            other => Err(Error::Parse(format!("unknown conversion direction `{other}`"))),
        }
    }
}

/// `|a - b| / max(|a|, |b|, 1)`; the floor keeps coordinates near zero from
/// inflating the ratio.
pub fn relative_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

// ---- YOLO ----

/// `class cx cy w h`, normalized by image size.
pub fn yolo_line(g: &GroundTruthInstance, width: u32, height: u32) -> String {
    let (w, h) = (width as f64, height as f64);
    let b = &g.bbox;
    let cx = (b.x_min() + b.x_max()) / 2.0 / w;
    let cy = (b.y_min() + b.y_max()) / 2.0 / h;
    format!("{} {:?} {:?} {:?} {:?}", g.class_id, cx, cy, b.width() / w, b.height() / h)
}

pub fn parse_yolo_line(line: &str, width: u32, height: u32) -> Result<GroundTruthInstance> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(Error::Parse(format!("YOLO line `{line}` needs 5 fields")));
    }
    let class: ClassId = parts[0]
        .parse()
        .map_err(|_| Error::Parse(format!("YOLO class `{}` is not an integer", parts[0])))?;
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts[1..]) {
        *slot = p
            .parse()
            .map_err(|_| Error::Parse(format!("YOLO value `{p}` is not a number")))?;
    }
    let [cx, cy, bw, bh] = v;
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Parse(format!("YOLO line `{line}` is not normalized")));
    }
    let (w, h) = (width as f64, height as f64);
    // clamp absorbs rounding at the image border
    let x0 = ((cx - bw / 2.0) * w).clamp(0.0, w);
    let x1 = ((cx + bw / 2.0) * w).clamp(0.0, w);
    let y0 = ((cy - bh / 2.0) * h).clamp(0.0, h);
    let y1 = ((cy + bh / 2.0) * h).clamp(0.0, h);
    Ok(GroundTruthInstance::new(BBox::new(x0, y0, x1, y1)?, class))
}

/// Label file body per image id.
pub fn to_yolo(set: &LabelSet) -> Result<BTreeMap<String, String>> {
    set.validate()?;
    Ok(set
        .images
        .iter()
        .map(|img| {
            let mut body = String::new();
            for g in &img.gt {
                body.push_str(&yolo_line(g, img.width, img.height));
                body.push('\n');
            }
            (img.image_id.clone(), body)
        })
        .collect())
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `classes.txt`, `images.txt` (`id width height` per line) and
/// `labels/<id>.txt`.
pub fn write_yolo_dir(set: &LabelSet, dir: &Path) -> Result<Vec<PathBuf>> {
    let labels = to_yolo(set)?;
    let label_dir = dir.join("labels");
    std::fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
    let mut written = Vec::new();
    let classes = dir.join("classes.txt");
    write(&classes, &set.classes.iter().map(|c| format!("{c}\n")).collect::<String>())?;
    written.push(classes);
    let mut manifest = String::new();
    for img in &set.images {
        let _ = writeln!(manifest, "{} {} {}", img.image_id, img.width, img.height);
    }
    let images = dir.join("images.txt");
    write(&images, &manifest)?;
    written.push(images);
    for (id, body) in labels {
        let p = label_dir.join(format!("{id}.txt"));
        write(&p, &body)?;
        written.push(p);
    }
    Ok(written)
}

pub fn from_yolo_dir(dir: &Path) -> Result<LabelSet> {
    let classes: Vec<String> = read(&dir.join("classes.txt"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().to_string())
        .collect();
    let mut images = Vec::new();
    for line in read(&dir.join("images.txt"))?.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let dims = (f.len() == 3)
            .then(|| f[1].parse::<u32>().ok().zip(f[2].parse::<u32>().ok()))
            .flatten();
        let Some((width, height)) = dims else {
            return Err(Error::Parse(format!("manifest line `{line}` must be `id width height`")));
        };
        let path = dir.join("labels").join(format!("{}.txt", f[0]));
        let body = if path.exists() { read(&path)? } else { String::new() };
        let gt = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_yolo_line(l, width, height))
            .collect::<Result<_>>()?;
        images.push(LabeledImage {
            image_id: f[0].to_string(),
            width,
            height,
            gt,
        });
    }
    let set = LabelSet { classes, images };
    set.validate()?;
    Ok(set)
}

// ---- COCO ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segmentation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("parsing COCO document", e))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing COCO document", e))
    }

    /// Category id to class index, by position among categories sorted by id.
    fn class_map(&self) -> BTreeMap<u64, ClassId> {
        let mut ids: Vec<u64> = self.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.into_iter().enumerate().map(|(k, id)| (id, k as ClassId)).collect()
    }

    fn file_names(&self) -> BTreeMap<u64, &str> {
        self.images.iter().map(|i| (i.id, i.file_name.as_str())).collect()
    }
}

/// Category ids are class index + 1; image ids are 1-based in set order.
pub fn to_coco(set: &LabelSet) -> Result<CocoDocument> {
    set.validate()?;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (k, img) in set.images.iter().enumerate() {
        let image_id = k as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: img.image_id.clone(),
            width: img.width,
            height: img.height,
        });
        for g in &img.gt {
            let b = &g.bbox;
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: g.class_id as u64 + 1,
                bbox: [b.x_min(), b.y_min(), b.width(), b.height()],
                area: b.area(),
                iscrowd: 0,
                segmentation: g
                    .mask()
                    .map(|m| vec![m.iter().flat_map(|p| [p[0], p[1]]).collect()])
                    .unwrap_or_default(),
            });
        }
    }
    let categories = set
        .classes
        .iter()
        .enumerate()
        .map(|(k, name)| CocoCategory {
            id: k as u64 + 1,
            name: name.clone(),
        })
        .collect();
    Ok(CocoDocument {
        images,
        annotations,
        categories,
    })
}

fn coco_box(b: [f64; 4]) -> Result<BBox> {
    BBox::from_xywh(b[0], b[1], b[2], b[3])
}

pub fn from_coco(doc: &CocoDocument) -> Result<LabelSet> {
    let mut cats: Vec<&CocoCategory> = doc.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    let classes = cats.iter().map(|c| c.name.clone()).collect();
    let class_map = doc.class_map();
    let mut by_id: BTreeMap<u64, LabeledImage> = doc
        .images
        .iter()
        .map(|i| {
            (
                i.id,
                LabeledImage {
                    image_id: i.file_name.clone(),
                    width: i.width,
                    height: i.height,
                    gt: Vec::new(),
                },
            )
        })
        .collect();
    for a in &doc.annotations {
        let class = *class_map
            .get(&a.category_id)
            .ok_or_else(|| Error::Parse(format!("annotation {} has unknown category {}", a.id, a.category_id)))?;
        let img = by_id
            .get_mut(&a.image_id)
            .ok_or_else(|| Error::Parse(format!("annotation {} refers to unknown image {}", a.id, a.image_id)))?;
        let bbox = coco_box(a.bbox)?;
        let gt = match a.segmentation.first() {
            Some(flat) if flat.len() >= 6 && flat.len() % 2 == 0 => {
                let mask: Polygon = flat.chunks(2).map(|p| [p[0], p[1]]).collect();
                GroundTruthInstance::with_mask(bbox, class, mask)?
            }
            _ => GroundTruthInstance::new(bbox, class),
        };
        img.gt.push(gt);
    }
    let set = LabelSet {
        classes,
        images: by_id.into_values().collect(),
    };
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Deserialize)]
struct CocoResult {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

/// Parses a COCO results array against the ground-truth document it refers
/// to, giving detections keyed by image file name.
pub fn read_coco_results(text: &str, gt: &CocoDocument) -> Result<BTreeMap<String, Vec<Detection>>> {
    let rows: Vec<CocoResult> = serde_json::from_str(text).map_err(|e| Error::json("parsing COCO results", e))?;
    let class_map = gt.class_map();
    let names = gt.file_names();
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in rows {
        let name = names
            .get(&r.image_id)
            .ok_or_else(|| Error::UnknownImage(r.image_id.to_string()))?;
        let class = *class_map
            .get(&r.category_id)
            .ok_or_else(|| Error::Parse(format!("result has unknown category {}", r.category_id)))?;
        out.entry(name.to_string())
            .or_default()
            .push(Detection::new(coco_box(r.bbox)?, class, r.score)?);
    }
    Ok(out)
}

/// Writes the label set in the requested format under `out` and returns the
/// written paths.
pub fn convert_labels(set: &LabelSet, direction: Direction, out: &Path) -> Result<Vec<PathBuf>> {
    match direction {
        Direction::ToYolo => write_yolo_dir(set, out),
        Direction::ToCoco => {
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let path = out.join("annotations.json");
            let mut body = to_coco(set)?.to_json()?;
            body.push('\n');
            write(&path, &body)?;
            Ok(vec![path])
        }
    }
}
