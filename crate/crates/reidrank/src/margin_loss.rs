//! Loss mathematics: squared Euclidean pair distance, batch-mean distances,
//! the adaptive up/down margins and their midpoint/half-width
//! reparameterization, the hinge loss, the L2 regularizer, gradients with
//! respect to the features, and the fixed-margin contrastive and triplet
//! baselines.
//!
//! The margins are batch statistics treated as constants during
//! backpropagation: margins are computed once per mini-batch and no gradient
//! flows through the mean distances. The feature gradient of an active pair
//! is the exact derivative of the hinge term, 2*y*(f_a - f_b), accumulated
//! over every pair that references the feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParamSet;
use crate::numerics::Tensor;

/// Relationship between the two identities of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    /// Same identity, y = +1.
    Positive,
    /// Different identities, y = -1.
    Negative,
}

impl PairLabel {
    pub fn sign(self) -> f64 {
        match self {
            PairLabel::Positive => 1.0,
            PairLabel::Negative => -1.0,
        }
    }
}

/// A labeled pair referencing two rows of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

/// A triplet referencing anchor, positive and negative feature rows.
#[derive(Debug, Clone, Copy)]
pub struct TripletRef {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Per-batch statistics and the adaptive margins derived from them.
///
/// Invariants for s, d >= 0 and mu, gamma > 0:
/// 0 <= m_p < 1/mu, m_n >= max(s, ln 2 / gamma), and when
/// gamma <= mu * ln 2 the half-width m_c stays strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginState {
    /// Mean positive (intra-class) squared distance in the batch.
    pub s: f64,
    /// Mean negative (inter-class) squared distance in the batch.
    pub d: f64,
    /// Adaptive up-margin: ceiling on positive distances.
    pub m_p: f64,
    /// Adaptive down-margin: floor on negative distances.
    pub m_n: f64,
    /// Midpoint (m_p + m_n) / 2.
    pub m_tau: f64,
    /// Half-width (m_n - m_p) / 2.
    pub m_c: f64,
    pub mu: f64,
    pub gamma: f64,
}

/// Which similarity term supervises training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LossKind {
    /// The large adaptive margin loss.
    Adaptive,
    /// Fixed-margin contrastive baseline: positives pay D, negatives pay
    /// max(margin - D, 0).
    Contrastive { margin: f64 },
    /// Fixed-margin triplet baseline: max(D(a,p) - D(a,n) + margin, 0).
    Triplet { margin: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Adaptive => "adaptive",
            LossKind::Contrastive { .. } => "contrastive",
            LossKind::Triplet { .. } => "triplet",
        }
    }
}

/// Loss hyper-parameters. Defaults: mu = 8, gamma = 2.1, lambda = 0.01,
/// adaptive loss; the baselines default to a fixed margin of 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub mu: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub loss: LossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mu: 8.0,
            gamma: 2.1,
            lambda: 0.01,
            loss: LossKind::Adaptive,
        }
    }
}

pub const DEFAULT_FIXED_MARGIN: f64 = 1.0;

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.mu > 0.0) {
            problems.push(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.gamma > 0.0) {
            problems.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.lambda >= 0.0) {
            problems.push(format!("lambda must be non-negative, got {}", self.lambda));
        }
        match self.loss {
            LossKind::Contrastive { margin } | LossKind::Triplet { margin } => {
                if !(margin > 0.0) {
                    problems.push(format!("fixed margin must be positive, got {margin}"));
                }
            }
            LossKind::Adaptive => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfigList(problems))
        }
    }
}

/// Squared Euclidean distance between two feature vectors.
pub fn pair_distance(fa: &[f64], fb: &[f64]) -> Result<f64> {
    if fa.len() != fb.len() {
        return Err(Error::shape("pair_distance", fa.len(), fb.len()));
    }
    Ok(fa.iter().zip(fb).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Arithmetic means of the positive and negative distances of a batch.
/// Both classes must be present.
pub fn batch_mean_distances(distances: &[(f64, PairLabel)]) -> Result<(f64, f64)> {
    let (mut s_sum, mut s_n, mut d_sum, mut d_n) = (0.0, 0usize, 0.0, 0usize);
    for &(dist, label) in distances {
        match label {
            PairLabel::Positive => {
                s_sum += dist;
                s_n += 1;
            }
            PairLabel::Negative => {
                d_sum += dist;
                d_n += 1;
            }
        }
    }
    if s_n == 0 || d_n == 0 {
        return Err(Error::Batch(format!(
            "batch must contain both pair classes (got {s_n} positive, {d_n} negative)"
        )));
    }
    Ok((s_sum / s_n as f64, d_sum / d_n as f64))
}

/// Numerically stable down-margin ln(1 + exp(gamma * s)) / gamma.
/// Past gamma*s > 30 the direct form loses the +1 and larger values overflow
/// exp; the tail form s + exp(-gamma s)/gamma is exact there and, adding a
/// non-negative term to s itself, preserves m_n >= s in double precision.
fn softplus_over(s: f64, gamma: f64) -> f64 {
    let x = gamma * s;
    if x > 30.0 {
        s + (-x).exp() / gamma
    } else {
        x.exp().ln_1p() / gamma
    }
}

/// Largest double strictly below `x` (x positive and finite here).
fn next_below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Adaptive margins from the batch-mean distances:
/// m_p = (1 - exp(-mu * d)) / mu and m_n = ln(1 + exp(gamma * s)) / gamma,
/// with the midpoint/half-width presetting m_p = m_tau - m_c,
/// m_n = m_tau + m_c.
///
/// The up-margin satisfies m_p < 1/mu for every finite d. Once mu*d exceeds
/// ~37, the difference is no longer representable in double precision and
/// the raw expression would round to exactly 1/mu; the result is therefore
/// saturated at the largest double strictly below the asymptote so the open
/// bound holds for any input.
pub fn adaptive_margins(s: f64, d: f64, mu: f64, gamma: f64) -> MarginState {
    debug_assert!(s >= 0.0 && d >= 0.0 && mu > 0.0 && gamma > 0.0);
    let asymptote = 1.0 / mu;
    let m_p = ((1.0 - (-mu * d).exp()) / mu).min(next_below(asymptote));
    let m_n = softplus_over(s, gamma);
    MarginState {
        s,
        d,
        m_p,
        m_n,
        m_tau: 0.5 * (m_p + m_n),
        m_c: 0.5 * (m_n - m_p),
        mu,
        gamma,
    }
}

/// Hinge term of one pair: max(m_c - y * (m_tau - D), 0). Algebraically this
/// is max(D - m_p, 0) for positives and max(m_n - D, 0) for negatives.
pub fn hinge_loss(distance: f64, label: PairLabel, margins: &MarginState) -> f64 {
    (margins.m_c - label.sign() * (margins.m_tau - distance)).max(0.0)
}

/// L2 regularizer over every trainable parameter tensor.
pub fn regularizer(params: &ParamSet) -> f64 {
    params.squared_norm()
}

/// Result of evaluating a similarity term over one batch of features.
#[derive(Debug)]
pub struct BatchLoss {
    /// Sum of the per-pair (or per-triplet) loss terms.
    pub similarity: f64,
    /// Gradient of the similarity term w.r.t. each feature row.
    pub feature_grads: Tensor,
    /// Fraction of pairs/triplets with a non-zero loss term.
    pub active_fraction: f64,
    /// Margins used (adaptive state, or the fixed margin echoed into
    /// m_p/m_n for the baselines).
    pub margins: MarginState,
}

fn check_features(features: &Tensor) -> Result<(usize, usize)> {
    if features.order() != 2 {
        return Err(Error::shape("features", "[n, dim]", format!("order {}", features.order())));
    }
    Ok((features.shape()[0], features.shape()[1]))
}

fn pair_distances(features: &Tensor, pairs: &[PairRef]) -> Result<Vec<(f64, PairLabel)>> {
    let (rows, _) = check_features(features)?;
    pairs
        .iter()
        .map(|p| {
            if p.a >= rows || p.b >= rows {
                return Err(Error::Batch(format!(
                    "pair ({}, {}) out of range for {rows} features",
                    p.a, p.b
                )));
            }
            Ok((pair_distance(features.row(p.a), features.row(p.b))?, p.label))
        })
        .collect()
}

fn accumulate_pair_grad(grads: &mut Tensor, features: &Tensor, a: usize, b: usize, coeff: f64) {
    let dim = features.shape()[1];
    let (fa_base, fb_base) = (a * dim, b * dim);
    for k in 0..dim {
        let diff = features.data()[fa_base + k] - features.data()[fb_base + k];
        grads.data_mut()[fa_base + k] += coeff * diff;
        grads.data_mut()[fb_base + k] -= coeff * diff;
    }
}

/// Adaptive-margin loss over a batch with the margins held fixed.
///
/// For each pair with residual R = m_c - y (m_tau - D) > 0 the feature
/// gradients are dL/df_a = 2 y (f_a - f_b) and dL/df_b = -2 y (f_a - f_b);
/// inactive pairs contribute nothing.
pub fn adaptive_batch_with_margins(features: &Tensor, pairs: &[PairRef], margins: &MarginState) -> Result<BatchLoss> {
    let (rows, dim) = check_features(features)?;
    let mut grads = Tensor::zeros(&[rows, dim]);
    let mut similarity = 0.0;
    let mut active = 0usize;
    for p in pairs {
        let dist = pair_distance(features.row(p.a), features.row(p.b))?;
        let term = hinge_loss(dist, p.label, margins);
        if term > 0.0 {
            similarity += term;
            active += 1;
            accumulate_pair_grad(&mut grads, features, p.a, p.b, 2.0 * p.label.sign());
        }
    }
    Ok(BatchLoss {
        similarity,
        feature_grads: grads,
        active_fraction: active as f64 / pairs.len().max(1) as f64,
        margins: *margins,
    })
}

/// Computes the batch margins from the mean distances (the once-per-batch
/// step of the descent algorithm), then evaluates the adaptive loss.
pub fn adaptive_batch(features: &Tensor, pairs: &[PairRef], mu: f64, gamma: f64) -> Result<BatchLoss> {
    let distances = pair_distances(features, pairs)?;
    let (s, d) = batch_mean_distances(&distances)?;
    let margins = adaptive_margins(s, d, mu, gamma);
    adaptive_batch_with_margins(features, pairs, &margins)
}

/// Fixed-margin contrastive baseline: positives pay D, negatives pay
/// max(margin - D, 0).
pub fn contrastive_batch(features: &Tensor, pairs: &[PairRef], margin: f64) -> Result<BatchLoss> {
    let (rows, dim) = check_features(features)?;
    let mut grads = Tensor::zeros(&[rows, dim]);
    let mut similarity = 0.0;
    let mut active = 0usize;
    let mut state = fixed_margin_state(features, pairs, margin)?;
    for p in pairs {
        let dist = pair_distance(features.row(p.a), features.row(p.b))?;
        match p.label {
            PairLabel::Positive => {
                similarity += dist;
                if dist > 0.0 {
                    active += 1;
                }
                accumulate_pair_grad(&mut grads, features, p.a, p.b, 2.0);
            }
            PairLabel::Negative => {
                let term = margin - dist;
                if term > 0.0 {
                    similarity += term;
                    active += 1;
                    accumulate_pair_grad(&mut grads, features, p.a, p.b, -2.0);
                }
            }
        }
    }
    state.m_p = margin;
    state.m_n = margin;
    Ok(BatchLoss {
        similarity,
        feature_grads: grads,
        active_fraction: active as f64 / pairs.len().max(1) as f64,
        margins: state,
    })
}

/// Fixed-margin triplet baseline over anchor-based units.
pub fn triplet_batch(features: &Tensor, pairs: &[PairRef], triplets: &[TripletRef], margin: f64) -> Result<BatchLoss> {
    let (rows, dim) = check_features(features)?;
    if triplets.is_empty() {
        return Err(Error::Batch("triplet loss needs at least one triplet".into()));
    }
    let mut grads = Tensor::zeros(&[rows, dim]);
    let mut similarity = 0.0;
    let mut active = 0usize;
    for t in triplets {
        let d_ap = pair_distance(features.row(t.anchor), features.row(t.positive))?;
        let d_an = pair_distance(features.row(t.anchor), features.row(t.negative))?;
        let term = d_ap - d_an + margin;
        if term > 0.0 {
            similarity += term;
            active += 1;
            accumulate_pair_grad(&mut grads, features, t.anchor, t.positive, 2.0);
            accumulate_pair_grad(&mut grads, features, t.anchor, t.negative, -2.0);
        }
    }
    let mut state = fixed_margin_state(features, pairs, margin)?;
    state.m_p = margin;
    state.m_n = margin;
    Ok(BatchLoss {
        similarity,
        feature_grads: grads,
        active_fraction: active as f64 / triplets.len() as f64,
        margins: state,
    })
}

/// Margin state for the fixed-margin baselines: the batch means are still
/// measured (for the metrics log) but the margins are the fixed value.
fn fixed_margin_state(features: &Tensor, pairs: &[PairRef], margin: f64) -> Result<MarginState> {
    let distances = pair_distances(features, pairs)?;
    let (s, d) = batch_mean_distances(&distances)?;
    Ok(MarginState {
        s,
        d,
        m_p: margin,
        m_n: margin,
        m_tau: margin,
        m_c: 0.0,
        mu: f64::NAN,
        gamma: f64::NAN,
    })
}

/// Total loss of a batch: similarity term plus lambda times the L2
/// regularizer over all parameters. The adaptive margins are recomputed from
/// the batch, matching the per-iteration sequencing of training.
pub fn total_loss(
    features: &Tensor,
    pairs: &[PairRef],
    triplets: &[TripletRef],
    params: &ParamSet,
    config: &LossConfig,
) -> Result<f64> {
    let batch = match config.loss {
        LossKind::Adaptive => adaptive_batch(features, pairs, config.mu, config.gamma)?,
        LossKind::Contrastive { margin } => contrastive_batch(features, pairs, margin)?,
        LossKind::Triplet { margin } => triplet_batch(features, pairs, triplets, margin)?,
    };
    Ok(batch.similarity + config.lambda * regularizer(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = core::f64::consts::LN_2;

    fn random_features(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, dim], data).unwrap()
    }

    #[test]
    fn pair_distance_basics() {
        let a = vec![1.0, 0.0, 0.0];
        assert_eq!(pair_distance(&a, &a).unwrap(), 0.0);
        let b = vec![0.0, 1.0, 0.0];
        assert_eq!(pair_distance(&a, &b).unwrap(), 2.0);
        assert!(pair_distance(&a, &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut expect = 0.0;
            for k in 0..16 {
                expect += (x[k] - y[k]) * (x[k] - y[k]);
            }
            assert!((pair_distance(&x, &y).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_means_are_per_class_arithmetic_means() {
        let one = [(0.2, PairLabel::Positive), (1.0, PairLabel::Negative)];
        assert_eq!(batch_mean_distances(&one).unwrap(), (0.2, 1.0));

        let mixed = [
            (0.1, PairLabel::Positive),
            (0.3, PairLabel::Positive),
            (1.0, PairLabel::Negative),
            (2.0, PairLabel::Negative),
            (3.0, PairLabel::Negative),
        ];
        let (s, d) = batch_mean_distances(&mixed).unwrap();
        assert!((s - 0.2).abs() < 1e-15);
        assert!((d - 2.0).abs() < 1e-15);

        assert!(batch_mean_distances(&[(0.5, PairLabel::Positive)]).is_err());
    }

    #[test]
    fn margin_formulas_match_high_precision_values() {
        // d = 0 kills the up-margin entirely.
        let m = adaptive_margins(0.3, 0.0, 8.0, 2.1);
        assert_eq!(m.m_p, 0.0);

        // d -> infinity saturates at 1/mu.
        let m = adaptive_margins(0.3, 1e9, 8.0, 2.1);
        assert!((m.m_p - 0.125).abs() < 1e-12);

        // s = 0: m_n = ln 2 / gamma.
        let m = adaptive_margins(0.0, 1.0, 8.0, 2.1);
        assert!((m.m_n - LN2 / 2.1).abs() < 1e-14);

        // s = 1: m_n = ln(1 + e^{2.1}) / 2.1.
        let m = adaptive_margins(1.0, 1.0, 8.0, 2.1);
        assert!((m.m_n - (1.0 + (2.1f64).exp()).ln() / 2.1).abs() < 1e-14);
    }

    #[test]
    fn softplus_is_stable_for_huge_means() {
        let m = adaptive_margins(1e6, 1e6, 8.0, 2.1);
        assert!(m.m_n.is_finite());
        assert!((m.m_n - 1e6).abs() < 1e-6);
        assert!(m.m_c.is_finite() && m.m_tau.is_finite());
    }

    #[test]
    fn margin_invariants_hold_over_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mu, gamma) = (8.0, 2.1);
        for _ in 0..10_000 {
            let s = rng.gen_range(0.0..100.0);
            let d = rng.gen_range(0.0..100.0);
            let m = adaptive_margins(s, d, mu, gamma);
            assert!(m.m_p >= 0.0 && m.m_p < 1.0 / mu);
            assert!(m.m_n >= s.max(LN2 / gamma));
            assert!(m.m_c > 0.0, "m_c must stay positive when gamma <= mu ln 2");
            assert!(m.m_tau > m.m_c);
        }
    }

    #[test]
    fn margins_are_monotone_in_their_mean_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (mu, gamma) = (8.0, 2.1);
        // Strict monotonicity of m_p is only representable before
        // 1 - exp(-mu d) saturates (mu d ~ 36); check strictly there and
        // non-decreasing across the full range.
        let mut small: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..3.5)).collect();
        small.sort_by(f64::total_cmp);
        small.dedup();
        let mut prev_mp = -1.0;
        let mut prev_mn = -1.0;
        let mut last_gap = f64::INFINITY;
        for &v in &small {
            let m = adaptive_margins(v, v, mu, gamma);
            assert!(m.m_p > prev_mp, "m_p not strictly increasing at d={v}");
            assert!(m.m_n > prev_mn, "m_n not strictly increasing at s={v}");
            // m_n - s decreases monotonically toward 0.
            let gap = m.m_n - m.s;
            assert!(gap > 0.0 && gap <= last_gap + 1e-12);
            last_gap = gap;
            prev_mp = m.m_p;
            prev_mn = m.m_n;
        }
        let mut wide: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..100.0)).collect();
        wide.sort_by(f64::total_cmp);
        let mut prev = -1.0;
        for &v in &wide {
            let m = adaptive_margins(v, v, mu, gamma);
            assert!(m.m_p >= prev);
            prev = m.m_p;
        }
    }

    #[test]
    fn hinge_equals_two_case_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let s = rng.gen_range(0.0..10.0);
            let d = rng.gen_range(0.0..10.0);
            let margins = adaptive_margins(s, d, 8.0, 2.1);
            let dist = rng.gen_range(0.0..10.0);
            let pos = hinge_loss(dist, PairLabel::Positive, &margins);
            assert!((pos - (dist - margins.m_p).max(0.0)).abs() < 1e-12);
            let neg = hinge_loss(dist, PairLabel::Negative, &margins);
            assert!((neg - (margins.m_n - dist).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_satisfied_constraints_cost_nothing() {
        let margins = adaptive_margins(0.5, 2.0, 8.0, 2.1);
        assert_eq!(hinge_loss(margins.m_p * 0.5, PairLabel::Positive, &margins), 0.0);
        assert_eq!(hinge_loss(margins.m_n + 1.0, PairLabel::Negative, &margins), 0.0);
        let delta = 0.125;
        let v = hinge_loss(margins.m_p + delta, PairLabel::Positive, &margins);
        assert!((v - delta).abs() < 1e-12);
    }

    // The similarity terms are piecewise quadratic in the features, so away
    // from hinge kinks central differences are exact up to roundoff and a
    // generous step keeps the roundoff term tiny.
    fn fd_feature_grads<L>(features: &Tensor, loss: L, analytic: &Tensor, tol: f64)
    where
        L: Fn(&Tensor) -> f64,
    {
        const H: f64 = 1e-4;
        for i in 0..features.len() {
            let mut plus = features.clone();
            plus.data_mut()[i] += H;
            let mut minus = features.clone();
            minus.data_mut()[i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                ((a - numeric).abs() / denom) < tol,
                "entry {i}: {a} vs {numeric}"
            );
        }
    }

    #[test]
    fn adaptive_grads_match_finite_differences_with_frozen_margins() {
        let features = random_features(6, 8, 3);
        let pairs = vec![
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
            PairRef { a: 0, b: 2, label: PairLabel::Negative },
            PairRef { a: 3, b: 4, label: PairLabel::Positive },
            PairRef { a: 3, b: 5, label: PairLabel::Negative },
            PairRef { a: 0, b: 5, label: PairLabel::Negative },
        ];
        let dists = pair_distances(&features, &pairs).unwrap();
        let (s, d) = batch_mean_distances(&dists).unwrap();
        let margins = adaptive_margins(s, d, 8.0, 2.1);
        // Keep clear of hinge kinks so central differences are valid.
        for &(dist, label) in &dists {
            let r = margins.m_c - label.sign() * (margins.m_tau - dist);
            assert!(r.abs() > 1e-4, "test fixture sits on a hinge kink");
        }
        let batch = adaptive_batch_with_margins(&features, &pairs, &margins).unwrap();
        fd_feature_grads(
            &features,
            |f| adaptive_batch_with_margins(f, &pairs, &margins).unwrap().similarity,
            &batch.feature_grads,
            1e-8,
        );
    }

    #[test]
    fn inactive_pairs_have_zero_gradient() {
        // Distances: positive far below m_p impossible (m_p < 1/mu), so use
        // identical features (D = 0 <= m_p boundary is active only if > 0).
        let mut features = Tensor::zeros(&[3, 4]);
        features.data_mut()[8] = 10.0; // row 2 far away
        let pairs = vec![
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
            PairRef { a: 0, b: 2, label: PairLabel::Negative },
        ];
        // s = 0, d = 100: m_p ~ 0.125, m_n ~ ln2/2.1 ~ 0.33; positive D=0
        // inactive, negative D=100 inactive.
        let batch = adaptive_batch(&features, &pairs, 8.0, 2.1).unwrap();
        assert_eq!(batch.similarity, 0.0);
        assert!(batch.feature_grads.data().iter().all(|&g| g == 0.0));
        assert_eq!(batch.active_fraction, 0.0);
    }

    #[test]
    fn active_positive_pair_attracts() {
        let features = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pairs = vec![PairRef { a: 0, b: 1, label: PairLabel::Positive }];
        let margins = adaptive_margins(1.0, 0.01, 8.0, 2.1);
        let batch = adaptive_batch_with_margins(&features, &pairs, &margins).unwrap();
        // D = 1 > m_p, so the pair is active; dL/df_a = 2(f_a - f_b) points
        // from f_b toward f_a, and descent moves f_a toward f_b.
        assert!(batch.similarity > 0.0);
        assert_eq!(batch.feature_grads.row(0), &[2.0, 0.0]);
        assert_eq!(batch.feature_grads.row(1), &[-2.0, 0.0]);
    }

    #[test]
    fn contrastive_matches_finite_differences() {
        let features = random_features(5, 6, 9);
        let pairs = vec![
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
            PairRef { a: 0, b: 2, label: PairLabel::Negative },
            PairRef { a: 3, b: 4, label: PairLabel::Negative },
        ];
        let batch = contrastive_batch(&features, &pairs, 1.0).unwrap();
        fd_feature_grads(
            &features,
            |f| contrastive_batch(f, &pairs, 1.0).unwrap().similarity,
            &batch.feature_grads,
            1e-7,
        );
    }

    #[test]
    fn contrastive_trivial_cases() {
        // Positive with identical features -> 0; negative with D >= m -> 0.
        let far = Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        let mixed = vec![
            PairRef { a: 0, b: 0, label: PairLabel::Positive },
            PairRef { a: 0, b: 1, label: PairLabel::Negative },
        ];
        let b = contrastive_batch(&far, &mixed, 1.0).unwrap();
        assert_eq!(b.similarity, 0.0);
    }

    #[test]
    fn triplet_matches_finite_differences() {
        let features = random_features(6, 5, 13);
        let pairs = vec![
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
            PairRef { a: 0, b: 2, label: PairLabel::Negative },
        ];
        let triplets = vec![
            TripletRef { anchor: 0, positive: 1, negative: 2 },
            TripletRef { anchor: 3, positive: 4, negative: 5 },
        ];
        let batch = triplet_batch(&features, &pairs, &triplets, 1.0).unwrap();
        fd_feature_grads(
            &features,
            |f| triplet_batch(f, &pairs, &triplets, 1.0).unwrap().similarity,
            &batch.feature_grads,
            1e-7,
        );
    }

    #[test]
    fn triplet_trivial_cases() {
        // Separated enough that D(a,p) + m <= D(a,n): zero loss.
        let features = Tensor::new(vec![3, 2], vec![0.0, 0.0, 0.1, 0.0, 5.0, 0.0]).unwrap();
        let pairs = vec![
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
            PairRef { a: 0, b: 2, label: PairLabel::Negative },
        ];
        let trip = vec![TripletRef { anchor: 0, positive: 1, negative: 2 }];
        let b = triplet_batch(&features, &pairs, &trip, 1.0).unwrap();
        assert_eq!(b.similarity, 0.0);

        // anchor == positive: loss = max(m - D(a,n), 0).
        let close = Tensor::new(vec![3, 2], vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.0]).unwrap();
        let trip2 = vec![TripletRef { anchor: 0, positive: 0, negative: 2 }];
        let b2 = triplet_batch(&close, &pairs, &trip2, 1.0).unwrap();
        assert!((b2.similarity - (1.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_includes_regularizer() {
        let config = crate::network::NetConfig::reduced();
        let params = crate::network::init_params(&config, 1).unwrap();
        let features = Tensor::zeros(&[2, 4]);
        let pairs = vec![
            PairRef { a: 0, b: 0, label: PairLabel::Positive },
            PairRef { a: 0, b: 1, label: PairLabel::Negative },
        ];
        // All-zero features: s = d = 0, negative D = 0 < m_n -> active hinge.
        let lc = LossConfig { lambda: 0.0, ..LossConfig::default() };
        let margins = adaptive_margins(0.0, 0.0, lc.mu, lc.gamma);
        let hinge = hinge_loss(0.0, PairLabel::Negative, &margins);
        let total = total_loss(&features, &pairs, &[], &params, &lc).unwrap();
        assert!((total - hinge).abs() < 1e-12);

        let lc2 = LossConfig { lambda: 0.5, ..LossConfig::default() };
        let total2 = total_loss(&features, &pairs, &[], &params, &lc2).unwrap();
        assert!((total2 - hinge - 0.5 * params.squared_norm()).abs() < 1e-9);
    }

    #[test]
    fn grad_accumulates_over_shared_anchor() {
        let features = random_features(3, 4, 21);
        let margins = adaptive_margins(5.0, 0.01, 8.0, 2.1);
        let single = vec![PairRef { a: 0, b: 1, label: PairLabel::Positive }];
        let double = vec![
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
            PairRef { a: 0, b: 1, label: PairLabel::Positive },
        ];
        let g1 = adaptive_batch_with_margins(&features, &single, &margins).unwrap();
        let g2 = adaptive_batch_with_margins(&features, &double, &margins).unwrap();
        for (a, b) in g1.feature_grads.data().iter().zip(g2.feature_grads.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
