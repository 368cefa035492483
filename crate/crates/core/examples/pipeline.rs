//! Simulate a sequence, track it and score the tracks.

use owtrack::eval::{pred_tracks_from_results, track_ar, EvalConfig};
use owtrack::sim::{simulate, SequenceSpec};
use owtrack::tracker::{run_all, tracks_to_results, TrackerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SequenceSpec { seed: 3, jitter_sigma: 1.0, drop_rate: 0.05, ..Default::default() };
    let (gt, dets) = simulate(&spec)?;
    let config = TrackerConfig { score_thresh: 0.0, ..Default::default() };
    let tracks = run_all(&config, &dets)?;
    let results = tracks_to_results(&gt.table, &tracks);
    let preds = pred_tracks_from_results(&results, &gt.table)?;
    let ar = track_ar(&preds, &gt, &EvalConfig::default())?.ar;
    println!("{} tracks, track AR@100 = {:.3}", preds.len(), ar);
    Ok(())
}
