//! Haar analysis and synthesis on a small signal, plus the fusion step that
//! mixes a reconstruction back into its input.

use wavegate::wavelet::{dwt_forward, dwt_inverse, fuse_features, FuseParams};
use wavegate::Tensor;

fn main() -> wavegate::Result<()> {
    let x = Tensor::new(vec![1, 1, 8], vec![1.0, 2.0, 3.0, 4.0, 4.0, 4.0, 0.0, -2.0])?;
    let w = dwt_forward(&x)?;
    println!("signal      {:?}", x.data());
    println!("approx (cA) {:.5?}", w.approx.data());
    println!("detail (cD) {:.5?}", w.detail.data());

    let back = dwt_inverse(&w)?;
    println!("round-trip error {:.2e}", back.max_abs_diff(&x));
    println!(
        "energy: signal {:.4}, coefficients {:.4}",
        x.sum_sq(),
        w.approx.sum_sq() + w.detail.sum_sq()
    );

    // drop the detail band: a piecewise-constant smoothing
    let smooth = dwt_inverse(&wavegate::wavelet::WaveletPair {
        approx: w.approx.clone(),
        detail: Tensor::zeros(w.detail.shape()),
    })?;
    println!("low-pass    {:.3?}", smooth.data());

    let fused = fuse_features(&x, &smooth, &FuseParams::averaging(1))?;
    println!("averaged    {:.3?}", fused.data());
    Ok(())
}
