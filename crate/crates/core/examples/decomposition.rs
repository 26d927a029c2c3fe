//! Per-layer decomposition of a gradient against a base direction and its
//! exact reconstruction.

use dpdr::{decompose, normalize_base, reconstruct, LayeredVector};

fn main() -> dpdr::Result<()> {
    let released = LayeredVector::from_layers(vec![vec![1.0, 1.0], vec![0.0, 0.0, 0.0], vec![2.0]])?;
    let base = normalize_base(&released, 1);
    println!("base {:?}, degenerate layers {:?}", base.direction().as_slice(), base.degenerate_layers());

    let g = LayeredVector::from_layers(vec![vec![3.0, 1.0], vec![0.5, -0.5, 1.0], vec![-4.0]])?;
    let d = decompose(&g, &base)?;
    println!("alphas {:?}", d.alphas);
    println!("g_perp {:?}", d.g_perp.as_slice());
    for l in 0..g.layer_count() {
        println!(
            "layer {l}: <g_perp, b> = {:+.1e}, |g|² - α² - |g_perp|² = {:+.1e}",
            d.g_perp.dot_layer(base.direction(), l)?,
            g.norm_layer(l).powi(2) - d.alphas[l].powi(2) - d.g_perp.norm_layer(l).powi(2)
        );
    }

    let back = reconstruct(&d.alphas, &d.g_perp, &base)?;
    println!("reconstruction error {:.1e}", back.sub(&g)?.norm());
    Ok(())
}
