//! In-memory dataset model: identities with images grouped by camera view.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Camera view A is the probe side, view B the gallery side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CameraView {
    A,
    B,
}

impl CameraView {
    pub fn dir_name(self) -> &'static str {
        match self {
            CameraView::A => "cam_a",
            CameraView::B => "cam_b",
        }
    }
}

/// Stable reference to one image of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageKey {
    pub person_id: u32,
    pub view: CameraView,
    pub index: u32,
}

#[derive(Debug, Clone)]
pub struct Identity {
    pub person_id: u32,
    /// Probe-view images, each [channels, height, width] in [0, 1].
    pub view_a: Vec<Tensor>,
    /// Gallery-view images.
    pub view_b: Vec<Tensor>,
}

impl Identity {
    pub fn view(&self, view: CameraView) -> &[Tensor] {
        match view {
            CameraView::A => &self.view_a,
            CameraView::B => &self.view_b,
        }
    }
}

/// Train/test identity split stored alongside the image directories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    identities: Vec<Identity>,
    by_id: HashMap<u32, usize>,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
}

impl Dataset {
    /// Builds a dataset and enforces the invariants: unique ids, disjoint
    /// train/test splits, consistent image shapes, and at least one image
    /// per view for every training identity.
    pub fn new(mut identities: Vec<Identity>, mut train_ids: Vec<u32>, mut test_ids: Vec<u32>) -> Result<Dataset> {
        identities.sort_by_key(|i| i.person_id);
        train_ids.sort_unstable();
        test_ids.sort_unstable();

        let mut by_id = HashMap::new();
        for (i, identity) in identities.iter().enumerate() {
            if by_id.insert(identity.person_id, i).is_some() {
                return Err(Error::Dataset(format!("duplicate person id {}", identity.person_id)));
            }
        }
        for w in train_ids.windows(2).chain(test_ids.windows(2)) {
            if w[0] == w[1] {
                return Err(Error::Dataset(format!("duplicate id {} in split", w[0])));
            }
        }
        if let Some(overlap) = train_ids.iter().find(|id| test_ids.binary_search(id).is_ok()) {
            return Err(Error::Dataset(format!(
                "identity {overlap} appears in both the train and test split"
            )));
        }
        for id in train_ids.iter().chain(&test_ids) {
            if !by_id.contains_key(id) {
                return Err(Error::Dataset(format!("split references unknown identity {id}")));
            }
        }

        let mut dims: Option<(usize, usize, usize)> = None;
        for identity in &identities {
            for img in identity.view_a.iter().chain(&identity.view_b) {
                if img.order() != 3 {
                    return Err(Error::Dataset(format!(
                        "image of identity {} must be [C,H,W], got {:?}",
                        identity.person_id,
                        img.shape()
                    )));
                }
                let got = (img.shape()[0], img.shape()[1], img.shape()[2]);
                match dims {
                    None => dims = Some(got),
                    Some(expect) if expect != got => {
                        return Err(Error::Dataset(format!(
                            "inconsistent image shapes: {expect:?} vs {got:?} (identity {})",
                            identity.person_id
                        )))
                    }
                    _ => {}
                }
            }
        }
        let (channels, height, width) =
            dims.ok_or_else(|| Error::Dataset("dataset contains no images".into()))?;

        for id in &train_ids {
            let identity = &identities[by_id[id]];
            if identity.view_a.is_empty() || identity.view_b.is_empty() {
                return Err(Error::Dataset(format!(
                    "training identity {id} is missing a camera view ({} probe, {} gallery images)",
                    identity.view_a.len(),
                    identity.view_b.len()
                )));
            }
        }

        Ok(Dataset {
            height,
            width,
            channels,
            identities,
            by_id,
            train_ids,
            test_ids,
        })
    }

    pub fn identities(&self) -> &[Identity] {
        &self.identities
    }

    pub fn identity(&self, person_id: u32) -> Result<&Identity> {
        self.by_id
            .get(&person_id)
            .map(|&i| &self.identities[i])
            .ok_or_else(|| Error::Dataset(format!("unknown identity {person_id}")))
    }

    pub fn image(&self, key: &ImageKey) -> Result<&Tensor> {
        let identity = self.identity(key.person_id)?;
        identity
            .view(key.view)
            .get(key.index as usize)
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "identity {} has no image {} in view {:?}",
                    key.person_id, key.index, key.view
                ))
            })
    }

    pub fn total_images(&self) -> usize {
        self.identities.iter().map(|i| i.view_a.len() + i.view_b.len()).sum()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: 1,
            train_ids: self.train_ids.clone(),
            test_ids: self.test_ids.clone(),
        }
    }

    /// Copies the referenced images into one [n, C, H, W] batch tensor.
    pub fn gather(&self, keys: &[ImageKey]) -> Result<Tensor> {
        if keys.is_empty() {
            return Err(Error::Batch("cannot gather an empty image list".into()));
        }
        let plane = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(keys.len() * plane);
        for key in keys {
            data.extend_from_slice(self.image(key)?.data());
        }
        Tensor::new(vec![keys.len(), self.channels, self.height, self.width], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_image(v: f64) -> Tensor {
        Tensor::filled(&[3, 4, 2], v)
    }

    fn identity(id: u32, a: usize, b: usize) -> Identity {
        Identity {
            person_id: id,
            view_a: (0..a).map(|i| tiny_image(i as f64 * 0.1)).collect(),
            view_b: (0..b).map(|i| tiny_image(i as f64 * 0.2)).collect(),
        }
    }

    #[test]
    fn counts_and_lookup() {
        let ds = Dataset::new(vec![identity(1, 1, 1), identity(2, 1, 1)], vec![1, 2], vec![]).unwrap();
        assert_eq!(ds.total_images(), 4);
        assert_eq!(ds.identity(2).unwrap().person_id, 2);
        let key = ImageKey { person_id: 1, view: CameraView::B, index: 0 };
        assert!(ds.image(&key).is_ok());
    }

    #[test]
    fn rejects_split_overlap() {
        let err = Dataset::new(vec![identity(1, 1, 1), identity(2, 1, 1)], vec![1, 2], vec![2]).unwrap_err();
        assert!(err.to_string().contains("both the train and test split"));
    }

    #[test]
    fn rejects_missing_view_naming_identity() {
        let err = Dataset::new(vec![identity(7, 1, 0), identity(8, 1, 1)], vec![7, 8], vec![]).unwrap_err();
        assert!(err.to_string().contains('7'), "{err}");
    }

    #[test]
    fn gather_stacks_in_key_order() {
        let ds = Dataset::new(vec![identity(1, 2, 1)], vec![], vec![1]).unwrap();
        let keys = [
            ImageKey { person_id: 1, view: CameraView::A, index: 1 },
            ImageKey { person_id: 1, view: CameraView::A, index: 0 },
        ];
        let batch = ds.gather(&keys).unwrap();
        assert_eq!(batch.shape(), &[2, 3, 4, 2]);
        assert_eq!(batch.at4(0, 0, 0, 0), 0.1);
        assert_eq!(batch.at4(1, 0, 0, 0), 0.0);
    }
}
