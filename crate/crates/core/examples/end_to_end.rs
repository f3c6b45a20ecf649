//! Synthesises a small dataset and runs every stage on it.
//!
//! cargo run --release --example end_to_end -- 20 /tmp/masscade_demo

use std::path::PathBuf;

use masscade::pipeline::{load_froc, run_all, synth, PipelineConfig};
use masscade::eval::tpr_at_fpi;

fn main() -> masscade::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "masscade_demo".into()));
    let mut cfg = PipelineConfig::default();
    cfg.synth.n_cases = n;
    cfg.eval.k = cfg.eval.k.min(n);
    cfg.cascade.c = 10.0;
    let data = root.join("data");
    let out = root.join("out");
    synth(&cfg, &data)?;
    run_all(&cfg, &data, &out)?;
    let points = load_froc(&out)?;
    for fpi in [0.1, 0.5, 1.0, 2.0] {
        println!("TPR at FPI <= {fpi}: {:.3}", tpr_at_fpi(&points, fpi));
    }
    println!("artifacts under {}", out.display());
    Ok(())
}
