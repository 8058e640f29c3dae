//! Anchor-based mini-batch generation.
//!
//! A batch is built from `A` anchor units: each unit picks one probe-view
//! anchor image, `M` gallery-view positives of the same identity and `N`
//! gallery-view negatives from other identities, expanding to A*(M+N)
//! labeled pairs. Every referenced image appears exactly once in the batch's
//! image list so the trainer forwards each unique image once.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::margin_loss::{PairLabel, PairRef, TripletRef};
use crate::sampler::dataset::{CameraView, Dataset, ImageKey};

/// One anchor with its positive and negative partners, as slots into the
/// batch's deduplicated image list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorUnit {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    /// Unique images referenced by this batch.
    pub images: Vec<ImageKey>,
    /// A*(M+N) labeled pairs over image slots.
    pub pairs: Vec<PairRef>,
    pub units: Vec<AnchorUnit>,
}

impl PairBatch {
    /// All M*N (anchor, positive, negative) pairings of every unit.
    pub fn triplets(&self) -> Vec<TripletRef> {
        let mut out = Vec::new();
        for unit in &self.units {
            for &p in &unit.positives {
                for &n in &unit.negatives {
                    out.push(TripletRef {
                        anchor: unit.anchor,
                        positive: p,
                        negative: n,
                    });
                }
            }
        }
        out
    }

    pub fn positive_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == PairLabel::Positive).count()
    }
}

struct SlotMap {
    images: Vec<ImageKey>,
    slots: HashMap<ImageKey, usize>,
}

impl SlotMap {
    fn new() -> Self {
        SlotMap {
            images: Vec::new(),
            slots: HashMap::new(),
        }
    }

    fn slot(&mut self, key: ImageKey) -> usize {
        if let Some(&s) = self.slots.get(&key) {
            return s;
        }
        let s = self.images.len();
        self.images.push(key);
        self.slots.insert(key, s);
        s
    }
}

/// Chooses `count` distinct indices from 0..n by partial Fisher-Yates.
fn choose_distinct(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(count <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Generates one anchor-based mini-batch. Reproducible given the RNG state:
/// the same (dataset, anchors, positives, negatives, seed) yields an
/// identical batch.
///
/// Anchor identities are drawn without replacement while `anchors` does not
/// exceed the number of training identities; positives fall back to sampling
/// with replacement when an identity has fewer than `positives` gallery
/// images.
pub fn make_minibatch(
    dataset: &Dataset,
    anchors: usize,
    positives: usize,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch> {
    if anchors == 0 || positives == 0 || negatives == 0 {
        return Err(Error::Batch(format!(
            "batch spec must be positive, got A={anchors}, M={positives}, N={negatives}"
        )));
    }
    let train = &dataset.train_ids;
    if train.len() < 2 {
        return Err(Error::Batch(format!(
            "negatives require at least 2 training identities, dataset has {}",
            train.len()
        )));
    }

    let anchor_ids: Vec<u32> = if anchors <= train.len() {
        choose_distinct(train.len(), anchors, rng)
            .into_iter()
            .map(|i| train[i])
            .collect()
    } else {
        (0..anchors).map(|_| train[rng.gen_range(0..train.len())]).collect()
    };

    let mut slots = SlotMap::new();
    let mut pairs = Vec::with_capacity(anchors * (positives + negatives));
    let mut units = Vec::with_capacity(anchors);

    for &person_id in &anchor_ids {
        let identity = dataset.identity(person_id)?;
        let anchor_index = rng.gen_range(0..identity.view_a.len()) as u32;
        let anchor_slot = slots.slot(ImageKey {
            person_id,
            view: CameraView::A,
            index: anchor_index,
        });

        let gallery_count = identity.view_b.len();
        let positive_indices: Vec<u32> = if gallery_count >= positives {
            choose_distinct(gallery_count, positives, rng)
                .into_iter()
                .map(|i| i as u32)
                .collect()
        } else {
            (0..positives).map(|_| rng.gen_range(0..gallery_count) as u32).collect()
        };
        let positive_slots: Vec<usize> = positive_indices
            .into_iter()
            .map(|index| {
                slots.slot(ImageKey {
                    person_id,
                    view: CameraView::B,
                    index,
                })
            })
            .collect();

        let own_pos = train.binary_search(&person_id).expect("anchor from train split");
        let negative_slots: Vec<usize> = (0..negatives)
            .map(|_| -> Result<usize> {
                let mut k = rng.gen_range(0..train.len() - 1);
                if k >= own_pos {
                    k += 1;
                }
                let other = dataset.identity(train[k])?;
                let index = rng.gen_range(0..other.view_b.len()) as u32;
                Ok(slots.slot(ImageKey {
                    person_id: other.person_id,
                    view: CameraView::B,
                    index,
                }))
            })
            .collect::<Result<_>>()?;

        for &p in &positive_slots {
            pairs.push(PairRef {
                a: anchor_slot,
                b: p,
                label: PairLabel::Positive,
            });
        }
        for &n in &negative_slots {
            pairs.push(PairRef {
                a: anchor_slot,
                b: n,
                label: PairLabel::Negative,
            });
        }
        units.push(AnchorUnit {
            anchor: anchor_slot,
            positives: positive_slots,
            negatives: negative_slots,
        });
    }

    Ok(PairBatch {
        images: slots.images,
        pairs,
        units,
    })
}
