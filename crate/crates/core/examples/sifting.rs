//! Band selectivity of morphological sifting on bright disks.

use masscade::imagecore::GrayImage16;
use masscade::morphosift::{default_bands, sift_multiscale};

fn disk(size: usize, d: f64) -> GrayImage16 {
    let c = size as f64 / 2.0;
    GrayImage16::from_fn(size, size, |x, y| {
        let r = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
        if r <= d / 2.0 { 40000 } else { 10000 }
    })
    .unwrap()
}

fn main() -> masscade::Result<()> {
    let bands = default_bands();
    for b in &bands {
        println!("band {}: {}..{} px (lines {:?})", b.index, b.d_min, b.d_max, b.lengths());
    }
    for d in [15.0, 25.0, 50.0, 90.0] {
        let stack = sift_multiscale(&disk(160, d), &bands, 18)?;
        let energy: Vec<f64> = stack
            .images
            .iter()
            .map(|im| im.pixels().iter().map(|&v| v as f64).sum())
            .collect();
        let total: f64 = energy.iter().sum();
        let shares: Vec<String> = energy.iter().map(|e| format!("{:5.1}%", 100.0 * e / total)).collect();
        println!("disk d={d:>4}: {}", shares.join(" "));
    }
    Ok(())
}
