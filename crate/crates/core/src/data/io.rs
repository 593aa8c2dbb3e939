//! PNG/JPEG datasets on disk and the tab-separated manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Directory conventions understood by [`load_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `images/<id>.png` with `masks/<id>_segmentation.png`.
    Flat,
    /// ISIC challenge folders: a `*_Input` image directory and a
    /// `*_GroundTruth` mask directory side by side.
    Isic,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Layout::Flat),
            "isic" => Ok(Layout::Isic),
            other => Err(Error::Config(format!("unknown layout {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub rejected: Vec<Rejection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

fn unreadable(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// RGB image as `[3, H, W]` in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Grayscale image as `[H, W]` in [0, 1].
pub fn load_gray(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p[0] as f64 / 255.0).collect();
    Tensor::new(vec![h, w], data)
}

/// Grayscale mask as `[H, W]`, binarized at 128.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| (p[0] >= 128) as u8 as f64).collect();
    Tensor::new(vec![h, w], data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let [3, h, w] = *image.shape() else {
        return Err(Error::shape(format!("expected [3, H, W], got {:?}", image.shape())));
    };
    let d = image.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[h * w + i]), to_u8(d[2 * h * w + i])])
    });
    img.save(path).map_err(|e| unreadable(path, e))
}

/// Values ≥ 0.5 are written as 255, others as 0.
pub fn save_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let [h, w] = *mask.shape() else {
        return Err(Error::shape(format!("expected [H, W], got {:?}", mask.shape())));
    };
    let d = mask.data();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if d[y as usize * w + x as usize] >= 0.5 { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| unreadable(path, e))
}

/// Probability map `[H, W]` as 8-bit gray, `round(255·p)`.
pub fn save_probability(path: &Path, map: &Tensor) -> Result<()> {
    let [h, w] = *map.shape() else {
        return Err(Error::shape(format!("expected [H, W], got {:?}", map.shape())));
    };
    let bytes = map.data().iter().map(|&v| to_u8(v)).collect();
    save_gray(path, w, h, bytes)
}

/// Raw 8-bit grayscale PNG.
pub fn save_gray(path: &Path, w: usize, h: usize, bytes: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::shape(format!("gray buffer does not match {w}x{h}")))?;
    img.save(path).map_err(|e| unreadable(path, e))
}

/// Write `images/` and `masks/` in the flat layout plus `manifest.tsv`.
pub fn save_dataset(root: &Path, dataset: &[Sample]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for s in dataset {
        let image = PathBuf::from("images").join(format!("{}.png", s.id));
        let mask = PathBuf::from("masks").join(format!("{}_segmentation.png", s.id));
        save_image(&root.join(&image), &s.image)?;
        save_mask(&root.join(&mask), &s.mask)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            mask,
        });
    }
    write_manifest(&root.join("manifest.tsv"), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "id\timage\tmask")?;
    for e in entries {
        writeln!(out, "{}\t{}\t{}", e.id, e.image.display(), e.mask.display())?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            match cols[..] {
                [id, image, mask] => Ok(ManifestEntry {
                    id: id.to_string(),
                    image: image.into(),
                    mask: mask.into(),
                }),
                _ => Err(Error::Format(format!("bad manifest row: {l}"))),
            }
        })
        .collect()
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn find_dir(root: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    found.sort();
    Ok(found.into_iter().next())
}

/// Load every image with its `<id>_segmentation.png` partner, sorted by id.
///
/// Unreadable files, missing masks and size mismatches are collected in the
/// report; with `strict` the first of them aborts the load instead.
pub fn load_dataset(root: &Path, layout: Layout, strict: bool) -> Result<(Dataset, LoadReport)> {
    let (image_dir, mask_dir) = match layout {
        Layout::Flat => (Some(root.join("images")), Some(root.join("masks"))),
        Layout::Isic => (find_dir(root, "_Input")?, find_dir(root, "_GroundTruth")?),
    };
    let mut report = LoadReport::default();
    let Some(image_dir) = image_dir.filter(|d| d.is_dir()) else {
        return Ok((Vec::new(), report));
    };
    let mask_dir = mask_dir.unwrap_or_else(|| root.join("masks"));
    let mut images: Vec<PathBuf> = fs::read_dir(&image_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    images.sort();

    let mut dataset = Vec::new();
    for path in images {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mask_path = mask_dir.join(format!("{id}_segmentation.png"));
        let loaded = (|| -> Result<Sample> {
            if !mask_path.is_file() {
                return Err(Error::MissingMask(id.clone()));
            }
            let image = load_image(&path)?;
            let mask = load_mask(&mask_path)?;
            if image.shape()[1..] != *mask.shape() {
                return Err(Error::shape(format!(
                    "image {:?} vs mask {:?}",
                    &image.shape()[1..],
                    mask.shape()
                )));
            }
            Sample::new(id.clone(), image, mask)
        })();
        match loaded {
            Ok(s) => dataset.push(s),
            Err(e) if strict => return Err(e),
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                report.rejected.push(Rejection {
                    id: id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    dataset.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, report) = load_dataset(dir.path(), Layout::Flat, false).unwrap();
        assert!(ds.is_empty() && report.rejected.is_empty());
        fs::create_dir(dir.path().join("images")).unwrap();
        let (ds, report) = load_dataset(dir.path(), Layout::Flat, true).unwrap();
        assert!(ds.is_empty() && report.rejected.is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![ManifestEntry {
            id: "a".into(),
            image: "images/a.png".into(),
            mask: "masks/a_segmentation.png".into(),
        }];
        write_manifest(&dir.path().join("m.tsv"), &entries).unwrap();
        assert_eq!(read_manifest(&dir.path().join("m.tsv")).unwrap(), entries);
    }
}
