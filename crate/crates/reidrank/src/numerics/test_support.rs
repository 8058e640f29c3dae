//! Shared helpers for the numerics unit tests: deterministic random tensors
//! and a central finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::tensor::Tensor;

pub(crate) fn seeded_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Checks every entry of `analytic` against central finite differences of
/// `loss` (perturbation 1e-5), requiring relative error below `tol`.
pub(crate) fn fd_tolerance_check<F>(operand: &Tensor, analytic: &Tensor, tol: f64, loss: F)
where
    F: Fn(&Tensor) -> f64,
{
    const H: f64 = 1e-5;
    assert_eq!(operand.shape(), analytic.shape());
    for i in 0..operand.len() {
        let mut plus = operand.clone();
        plus.data_mut()[i] += H;
        let mut minus = operand.clone();
        minus.data_mut()[i] -= H;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        assert!(
            rel < tol,
            "entry {i}: analytic {a} vs numeric {numeric} (rel {rel:.3e} > {tol:.1e})"
        );
    }
}
