//! Cascade of SVM ensembles on imbalanced Gaussian blobs.

use masscade::cascade::{compute_n, train_cascade, CascadeSetup, SvmParams};
use masscade::features::FeatureSchema;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn blob(rng: &mut ChaCha8Rng, n: usize, centre: f64, d: usize) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..d).map(|_| centre + noise.sample(rng)).collect()).collect()
}

fn main() -> masscade::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let schema = FeatureSchema::v1();
    let d = schema.len();
    let t = blob(&mut rng, 40, 1.0, d);
    let f = blob(&mut rng, 1200, -0.3, d);
    let mut vx = blob(&mut rng, 10, 1.0, d);
    vx.extend(blob(&mut rng, 60, -0.3, d));
    let vy: Vec<f64> = (0..70).map(|i| if i < 10 { 1.0 } else { -1.0 }).collect();
    println!("N = {} members per stage", compute_n(f.len(), t.len())?);

    let params = SvmParams::default();
    let setup = CascadeSetup {
        params: &params,
        schema: schema.clone(),
        config_hash: String::new(),
        validation: (&vx, &vy),
    };
    let model = train_cascade(&t, &f, &setup)?;
    println!("positives per stage {:?}", model.summary.positives);
    println!("negatives per stage {:?}", model.summary.negatives);
    println!("Platt A={:.3} B={:.3}", model.platt.a, model.platt.b);

    let test_pos = blob(&mut rng, 200, 1.0, d);
    let test_neg = blob(&mut rng, 200, -0.3, d);
    let mean_p = |rows: &[Vec<f64>]| -> masscade::Result<f64> {
        let p = model.score_all(&schema, rows)?;
        Ok(p.iter().map(|p| p.probability).sum::<f64>() / p.len() as f64)
    };
    println!("mean probability: positives {:.3}, negatives {:.3}", mean_p(&test_pos)?, mean_p(&test_neg)?);
    Ok(())
}
