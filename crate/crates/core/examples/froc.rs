//! Dice matching and a FROC curve on hand-made detections.

use masscade::eval::{froc, froc_csv, match_predictions, EvalCase, ScoredRegion};
use masscade::imagecore::Region;

fn square(x0: usize, y0: usize, side: usize) -> Region {
    let coords = (y0..y0 + side).flat_map(|y| (x0..x0 + side).map(move |x| (x, y)));
    Region::from_coords(64, 64, coords).unwrap()
}

fn main() -> masscade::Result<()> {
    let mass = square(10, 10, 10);
    let preds = vec![
        ScoredRegion { region: square(12, 10, 10), probability: 0.9 },
        ScoredRegion { region: square(12, 11, 10), probability: 0.8 },
        ScoredRegion { region: square(40, 40, 8), probability: 0.7 },
    ];
    let m = match_predictions(&preds, std::slice::from_ref(&mass), 0.2, 0.5)?;
    println!("tp {} fp {} fn {} (surviving {:?})", m.tp, m.fp, m.fn_, m.surviving);

    let cases = vec![
        EvalCase { case_id: "a".into(), masses: vec![mass.clone()], predictions: preds },
        EvalCase {
            case_id: "b".into(),
            masses: vec![square(30, 30, 12)],
            predictions: vec![ScoredRegion { region: square(33, 33, 12), probability: 0.4 }],
        },
    ];
    print!("{}", froc_csv(&froc(&cases, None, 0.2, 0.5)?));
    Ok(())
}
