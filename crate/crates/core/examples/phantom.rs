//! Generates one phantom and writes it in the dataset layout.
//!
//! cargo run --release --example phantom -- /tmp/phantom

use std::path::PathBuf;

use masscade::imagecore::{generate_phantom, save_case, PhantomSpec};

fn main() -> masscade::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantom_out".into()));
    let spec = PhantomSpec {
        n_masses: 2,
        spiculation: true,
        seed: 7,
        ..PhantomSpec::default()
    };
    let case = generate_phantom(&spec)?;
    println!(
        "{}x{} phantom, {} breast pixels",
        case.image.width(),
        case.image.height(),
        case.breast_mask.count()
    );
    for m in &case.masses {
        println!("  mass {}: {} px, {} outline vertices", m.id, m.mask().count(), m.polygon.len());
    }
    save_case(&case, &out)?;
    println!("written to {}", out.join(&case.case_id).display());
    Ok(())
}
