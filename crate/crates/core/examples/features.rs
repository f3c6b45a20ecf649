//! The 22-dimensional descriptor of the best candidate of each mass.

use masscade::features::{assemble_vector, FeatureConfig, FeatureSchema};
use masscade::imagecore::{generate_phantom, PhantomSpec};
use masscade::morphosift::{default_bands, sift_multiscale};
use masscade::pipeline::case_candidates;
use masscade::preprocess::{preprocess_case, PreprocessConfig};
use masscade::superpixel::{CandidateLabel, SlicConfig};

fn main() -> masscade::Result<()> {
    let case = generate_phantom(&PhantomSpec { n_masses: 1, seed: 5, ..PhantomSpec::default() })?;
    let prep = preprocess_case(&case, &PreprocessConfig::default())?;
    let stack = sift_multiscale(&prep.image, &default_bands(), 18)?;
    let recs = case_candidates(&prep, &stack, &SlicConfig::default())?;
    let schema = FeatureSchema::v1();
    let best = recs
        .iter()
        .filter(|r| r.label == CandidateLabel::Positive)
        .max_by(|a, b| a.best_dice.partial_cmp(&b.best_dice).unwrap());
    let Some(best) = best else {
        println!("no positive candidate");
        return Ok(());
    };
    let v = assemble_vector(&best.to_candidate()?, &prep.image, &stack, &FeatureConfig::default())?;
    println!("candidate #{} (scale {}, Dice {:.2})", best.index, best.scale, best.best_dice.unwrap());
    for (name, value) in schema.names.iter().zip(&v.values) {
        println!("  {name:<22} {value:.6}");
    }
    Ok(())
}
