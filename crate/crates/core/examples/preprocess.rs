//! Front end on a phantom: rescale, ×4 downsample, CLAHE.

use masscade::imagecore::{generate_phantom, PhantomSpec};
use masscade::preprocess::{preprocess_case, PreprocessConfig};

fn main() -> masscade::Result<()> {
    let case = generate_phantom(&PhantomSpec { seed: 3, ..PhantomSpec::default() })?;
    let cfg = PreprocessConfig::default();
    let p = preprocess_case(&case, &cfg)?;
    let (lo, hi) = p.image.min_max();
    println!(
        "{}x{} -> {}x{} (factor {}), CLAHE range {lo}..={hi}",
        case.image.width(),
        case.image.height(),
        p.image.width(),
        p.image.height(),
        p.downsample_factor
    );
    let inside: Vec<f64> = p
        .image
        .pixels()
        .iter()
        .zip(p.breast_mask.bits())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    println!("mean in-breast intensity {:.0} over {} px", mean, inside.len());
    for m in &p.masses {
        println!("mass {} now covers {} px", m.id, m.mask().count());
    }
    Ok(())
}
