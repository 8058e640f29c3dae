//! Dataset directory layout: `root/cam_a/` and `root/cam_b/` hold
//! `<person_id>_<index>.png` files, `root/manifest.json` carries the
//! train/test identity split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::imageops::FilterType;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sampler::dataset::{CameraView, Dataset, Identity, Manifest};

/// Target extent every loaded image is bilinearly resized to.
pub const LOAD_HEIGHT: usize = 230;
pub const LOAD_WIDTH: usize = 80;

fn tensor_to_rgb(img: &Tensor) -> image::RgbImage {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (img.data()[(0 * h + y) * w + x] * 255.0).round().clamp(0.0, 255.0) as u8,
                (img.data()[(h + y) * w + x] * 255.0).round().clamp(0.0, 255.0) as u8,
                (img.data()[(2 * h + y) * w + x] * 255.0).round().clamp(0.0, 255.0) as u8,
            ];
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out
}

fn rgb_to_tensor(img: &image::RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f64; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape consistent")
}

/// Writes the dataset to `root` in the documented layout. Rerunning with an
/// identical dataset produces byte-identical files.
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    for view in [CameraView::A, CameraView::B] {
        fs::create_dir_all(root.join(view.dir_name())).map_err(|e| Error::io(root.display(), e))?;
    }
    for identity in dataset.identities() {
        for view in [CameraView::A, CameraView::B] {
            for (index, img) in identity.view(view).iter().enumerate() {
                let path = root
                    .join(view.dir_name())
                    .join(format!("{}_{}.png", identity.person_id, index));
                tensor_to_rgb(img)
                    .save(&path)
                    .map_err(|e| Error::io(path.display(), e))?;
            }
        }
    }
    let manifest = serde_json::to_string_pretty(&dataset.manifest())
        .map_err(|e| Error::io("manifest", e))?;
    fs::write(root.join("manifest.json"), manifest).map_err(|e| Error::io(root.display(), e))?;
    Ok(())
}

fn scan_view(root: &Path, view: CameraView) -> Result<BTreeMap<u32, BTreeMap<u32, Tensor>>> {
    let dir = root.join(view.dir_name());
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(dir.display(), e))?;
    let mut by_identity: BTreeMap<u32, BTreeMap<u32, Tensor>> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display(), e))?;
        let path = entry.path();
        if path.extension().is_none_or(|e| e != "png") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::io(path.display(), "unreadable file name"))?;
        let (id_str, index_str) = stem.split_once('_').ok_or_else(|| {
            Error::io(path.display(), "file name must be <person_id>_<index>.png")
        })?;
        let person_id: u32 = id_str
            .parse()
            .map_err(|_| Error::io(path.display(), "person id is not an integer"))?;
        let index: u32 = index_str
            .parse()
            .map_err(|_| Error::io(path.display(), "image index is not an integer"))?;

        let decoded = image::open(&path).map_err(|e| Error::io(path.display(), e))?;
        let resized = if decoded.height() == LOAD_HEIGHT as u32 && decoded.width() == LOAD_WIDTH as u32 {
            decoded
        } else {
            decoded.resize_exact(LOAD_WIDTH as u32, LOAD_HEIGHT as u32, FilterType::Triangle)
        };
        by_identity
            .entry(person_id)
            .or_default()
            .insert(index, rgb_to_tensor(&resized.to_rgb8()));
    }
    Ok(by_identity)
}

/// Loads a dataset directory: decodes every image, bilinearly resizes to
/// 230x80, scales to [0, 1], and enforces the dataset invariants.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(manifest_path.display(), e))?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_text).map_err(|e| Error::io(manifest_path.display(), e))?;

    let mut view_a = scan_view(root, CameraView::A)?;
    let mut view_b = scan_view(root, CameraView::B)?;

    let mut ids: Vec<u32> = view_a.keys().chain(view_b.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();

    let identities = ids
        .into_iter()
        .map(|person_id| Identity {
            person_id,
            view_a: view_a
                .remove(&person_id)
                .map(|m| m.into_values().collect())
                .unwrap_or_default(),
            view_b: view_b
                .remove(&person_id)
                .map(|m| m.into_values().collect())
                .unwrap_or_default(),
        })
        .collect();

    Dataset::new(identities, manifest.train_ids, manifest.test_ids)
}
