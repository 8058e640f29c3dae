//! Synthetic identity-image generation: a desk-scale stand-in for the real
//! re-identification benchmarks.
//!
//! Each identity is a deterministic parametric appearance (head/torso/leg
//! color blocks plus a sinusoidal clothing texture). Every rendered image
//! re-draws horizontal jitter and pixel noise; gallery-view (camera B)
//! images additionally get a per-identity global brightness shift, playing
//! the role of the second camera's transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sampler::dataset::{CameraView, Dataset, Identity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Number of training identities (>= 2 so negatives exist).
    pub train_ids: usize,
    /// Number of disjoint test identities.
    pub test_ids: usize,
    /// Images per identity per camera view (>= 1).
    pub images_per_view: usize,
    pub height: usize,
    pub width: usize,
    /// Per-pixel additive Gaussian noise.
    pub noise_sigma: f64,
    /// Maximum horizontal shift in pixels, re-drawn per image.
    pub jitter_max: usize,
    /// Camera-B brightness factor drawn from 1 +- this range per identity.
    pub brightness_range: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_ids: 30,
            test_ids: 10,
            images_per_view: 4,
            height: 230,
            width: 80,
            noise_sigma: 0.05,
            jitter_max: 4,
            brightness_range: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.train_ids < 2 {
            problems.push(format!(
                "at least 2 training identities required (no negatives exist otherwise), got {}",
                self.train_ids
            ));
        }
        if self.images_per_view < 1 {
            problems.push("images_per_view must be at least 1".into());
        }
        if self.height < 8 || self.width < 2 {
            problems.push(format!("image extent {}x{} too small", self.height, self.width));
        }
        if !(self.noise_sigma >= 0.0) || !(self.brightness_range >= 0.0) {
            problems.push("noise_sigma and brightness_range must be non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfigList(problems))
        }
    }
}

/// splitmix64 finalizer; used to derive independent sub-seeds so generation
/// order never affects any image's content.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &p in parts {
        acc = mix(acc ^ p);
    }
    acc
}

/// Per-identity appearance parameters, all drawn from the identity's seed.
struct Appearance {
    head: [f64; 3],
    torso: [f64; 3],
    legs: [f64; 3],
    background: [f64; 3],
    /// Fractional row where the head ends and where the torso ends.
    head_end: f64,
    torso_end: f64,
    freq_x: f64,
    freq_y: f64,
    phase: f64,
    amplitude: f64,
    /// Camera-B global brightness factor.
    brightness_b: f64,
}

fn draw_appearance(config: &SyntheticConfig, person_id: u32) -> Appearance {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 1, person_id as u64]));
    let mut color = |lo: f64, hi: f64| -> [f64; 3] {
        [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
    };
    Appearance {
        head: color(0.05, 0.95),
        torso: color(0.05, 0.95),
        legs: color(0.05, 0.95),
        background: color(0.3, 0.7),
        head_end: rng.gen_range(0.12..0.20),
        torso_end: rng.gen_range(0.55..0.70),
        freq_x: rng.gen_range(1.0..6.0),
        freq_y: rng.gen_range(0.0..3.0),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        amplitude: rng.gen_range(0.06..0.14),
        brightness_b: 1.0 + rng.gen_range(-config.brightness_range..=config.brightness_range),
    }
}

fn render_image(config: &SyntheticConfig, app: &Appearance, person_id: u32, view: CameraView, index: u32) -> Tensor {
    let view_tag = match view {
        CameraView::A => 0u64,
        CameraView::B => 1u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        config.seed,
        2,
        person_id as u64,
        view_tag,
        index as u64,
    ]));
    let jitter: i64 = if config.jitter_max == 0 {
        rng.gen_range(0..=0)
    } else {
        rng.gen_range(-(config.jitter_max as i64)..=config.jitter_max as i64)
    };
    let brightness = match view {
        CameraView::A => 1.0,
        CameraView::B => app.brightness_b,
    };

    let (h, w) = (config.height, config.width);
    let head_rows = (app.head_end * h as f64) as usize;
    let torso_rows = (app.torso_end * h as f64) as usize;
    let mut data = vec![0.0f64; 3 * h * w];
    let normal = StandardNormal;

    for y in 0..h {
        for x in 0..w {
            let xs = x as i64 - jitter;
            let (base, textured): (&[f64; 3], bool) = if xs < 0 || xs >= w as i64 {
                (&app.background, false)
            } else if y < head_rows {
                (&app.head, false)
            } else if y < torso_rows {
                (&app.torso, true)
            } else {
                (&app.legs, true)
            };
            let texture = if textured {
                let t = std::f64::consts::TAU
                    * (app.freq_x * xs.max(0) as f64 / w as f64 + app.freq_y * y as f64 / h as f64)
                    + app.phase;
                app.amplitude * t.sin()
            } else {
                0.0
            };
            for c in 0..3 {
                let n: f64 = normal.sample(&mut rng);
                let v = (base[c] + texture) * brightness + config.noise_sigma * n;
                data[(c * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape consistent")
}

/// Generates a fully in-memory synthetic dataset. Deterministic given the
/// config, independent of evaluation order.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let total = config.train_ids + config.test_ids;
    let mut identities = Vec::with_capacity(total);
    for person_id in 1..=total as u32 {
        let app = draw_appearance(config, person_id);
        let render_view = |view: CameraView| -> Vec<Tensor> {
            (0..config.images_per_view as u32)
                .map(|k| render_image(config, &app, person_id, view, k))
                .collect()
        };
        identities.push(Identity {
            person_id,
            view_a: render_view(CameraView::A),
            view_b: render_view(CameraView::B),
        });
    }
    let train_ids: Vec<u32> = (1..=config.train_ids as u32).collect();
    let test_ids: Vec<u32> = (config.train_ids as u32 + 1..=total as u32).collect();
    Dataset::new(identities, train_ids, test_ids)
}
