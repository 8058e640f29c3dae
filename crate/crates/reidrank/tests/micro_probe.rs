use std::time::Instant;

#[test]
#[ignore]
fn conv_grad_pieces() {
    // Global conv shapes: O=64, K=147, P=16576.
    let (o, k, p) = (64usize, 147usize, 16576usize);
    let cols = vec![1.0f64; k * p];
    let up = vec![1.0f64; o * p];
    let mut up_t = vec![0.0f64; p * o];
    let mut grad_w_t = vec![0.0f64; k * o];

    let t = Instant::now();
    for _ in 0..8 {
        // transpose up [O,P] -> up_t [P,O]
        const TILE: usize = 32;
        for r0 in (0..o).step_by(TILE) {
            for c0 in (0..p).step_by(TILE) {
                for r in r0..(r0 + TILE).min(o) {
                    let base = r * p;
                    for c in c0..(c0 + TILE).min(p) {
                        up_t[c * o + r] = up[base + c];
                    }
                }
            }
        }
    }
    println!("transpose x8: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    for _ in 0..8 {
        unsafe {
            matrixmultiply::dgemm(
                k, p, o, 1.0,
                cols.as_ptr(), p as isize, 1,
                up_t.as_ptr(), o as isize, 1,
                1.0,
                grad_w_t.as_mut_ptr(), o as isize, 1,
            );
        }
    }
    println!("gradW gemm x8: {:.3}s ({:.1} GFLOP/s)", t.elapsed().as_secs_f64(),
        8.0 * 2.0 * (k * p * o) as f64 / t.elapsed().as_secs_f64() / 1e9);
}
