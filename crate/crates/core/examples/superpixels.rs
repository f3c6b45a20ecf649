//! SLIC candidates on one phantom, labelled and filtered.

use masscade::imagecore::{generate_phantom, PhantomSpec};
use masscade::morphosift::{default_bands, sift_multiscale};
use masscade::pipeline::case_candidates;
use masscade::preprocess::{preprocess_case, PreprocessConfig};
use masscade::superpixel::{CandidateLabel, SlicConfig};

fn main() -> masscade::Result<()> {
    let case = generate_phantom(&PhantomSpec { n_masses: 2, seed: 11, ..PhantomSpec::default() })?;
    let prep = preprocess_case(&case, &PreprocessConfig::default())?;
    let stack = sift_multiscale(&prep.image, &default_bands(), 18)?;
    let cfg = SlicConfig::default();
    let recs = case_candidates(&prep, &stack, &cfg)?;
    for s in 1..=stack.len() {
        let at: Vec<_> = recs.iter().filter(|r| r.scale == s).collect();
        let pos = at.iter().filter(|r| r.label == CandidateLabel::Positive).count();
        let kept = at.iter().filter(|r| r.kept).count();
        println!("scale {s}: {:3} superpixels, {pos} positive, {kept} kept", at.len());
    }
    for r in recs.iter().filter(|r| r.label == CandidateLabel::Positive) {
        println!(
            "  positive #{} scale {} area {} Dice {:.2} vs {} kept={}",
            r.index,
            r.scale,
            r.area,
            r.best_dice.unwrap_or(0.0),
            r.matched_mass_id.as_deref().unwrap_or("-"),
            r.kept
        );
    }
    Ok(())
}
