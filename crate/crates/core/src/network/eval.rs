use crate::preprocess::FrameInputs;
use crate::Result;

use super::model::{Prediction, ThreeStreamModel};
use super::train::{predict_all, LabeledClip};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Fraction of clips whose frame majority vote equals the label.
    pub clip_accuracy: f64,
    pub frame_accuracy: f64,
    /// Clip accuracy per true class; `None` for classes without clips.
    pub per_class: Vec<Option<f64>>,
    /// Fraction of frames whose confidence is below the threshold.
    pub below_threshold_rate: f64,
    pub clips: usize,
    pub frames: usize,
}

/// Plurality over `classes` (in time order); ties go to the tied class seen
/// most recently. `None` for an empty slice.
pub fn majority_vote(classes: &[usize]) -> Option<usize> {
    let max_class = *classes.iter().max()?;
    let mut counts = vec![0usize; max_class + 1];
    let mut last_seen = vec![0usize; max_class + 1];
    for (t, &c) in classes.iter().enumerate() {
        counts[c] += 1;
        last_seen[c] = t;
    }
    (0..=max_class)
        .filter(|&c| counts[c] > 0)
        .max_by_key(|&c| (counts[c], last_seen[c]))
}

/// Scores per-clip frame predictions against clip labels.
pub fn score_predictions(clips: &[(usize, Vec<Prediction>)], num_classes: usize, threshold: f32) -> EvalReport {
    let mut clip_hits = 0;
    let mut frame_hits = 0;
    let mut frames = 0;
    let mut below = 0;
    let mut per_class = vec![(0usize, 0usize); num_classes];
    for (label, preds) in clips {
        let classes: Vec<usize> = preds.iter().map(|p| p.class_id).collect();
        let hit = majority_vote(&classes) == Some(*label);
        clip_hits += usize::from(hit);
        if let Some(slot) = per_class.get_mut(*label) {
            slot.0 += usize::from(hit);
            slot.1 += 1;
        }
        frames += preds.len();
        frame_hits += preds.iter().filter(|p| p.class_id == *label).count();
        below += preds.iter().filter(|p| p.confidence < threshold).count();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    EvalReport {
        clip_accuracy: ratio(clip_hits, clips.len()),
        frame_accuracy: ratio(frame_hits, frames),
        per_class: per_class
            .into_iter()
            .map(|(h, n)| (n > 0).then(|| ratio(h, n)))
            .collect(),
        below_threshold_rate: ratio(below, frames),
        clips: clips.len(),
        frames,
    }
}

/// Clip-level evaluation: each clip's sampled frames vote for its class.
pub fn evaluate(model: &ThreeStreamModel<f32>, clips: &[LabeledClip], threshold: f32) -> Result<EvalReport> {
    let mut scored = Vec::with_capacity(clips.len());
    for clip in clips {
        let inputs: Vec<&FrameInputs> = clip.frames.iter().collect();
        scored.push((clip.label, predict_all(model, &inputs)?));
    }
    Ok(score_predictions(&scored, model.num_classes(), threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn pred(class: usize, conf: f32, k: usize) -> Prediction {
        let rest = (1.0 - conf) / (k - 1) as f32;
        let probs = (0..k).map(|c| if c == class { conf } else { rest }).collect();
        Prediction {
            class_id: class,
            confidence: conf,
            probabilities: probs,
        }
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let clips: Vec<(usize, Vec<Prediction>)> = (0..24).map(|i| (i % 12, vec![pred(i % 12, 0.9, 12); 3])).collect();
        assert_eq!(score_predictions(&clips, 12, 0.5).clip_accuracy, 1.0);
        let constant: Vec<_> = (0..24).map(|i| (i % 12, vec![pred(0, 0.9, 12); 3])).collect();
        let r = score_predictions(&constant, 12, 0.5);
        assert!((r.clip_accuracy - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(r.per_class[0], Some(1.0));
        assert_eq!(r.per_class[5], Some(0.0));
    }

    #[test]
    fn vote_ties_prefer_recent() {
        assert_eq!(majority_vote(&[0, 1]), Some(1));
        assert_eq!(majority_vote(&[1, 0, 0, 1]), Some(1));
        assert_eq!(majority_vote(&[2, 2, 1]), Some(2));
        assert_eq!(majority_vote(&[]), None);
    }

    /// Independent recount: string-keyed tallies and explicit tie search.
    #[test]
    fn matches_recount_on_random_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 5;
        let clips: Vec<(usize, Vec<Prediction>)> = (0..50)
            .map(|_| {
                let n = rng.random_range(1..8);
                let label = rng.random_range(0..k);
                let preds = (0..n)
                    .map(|_| pred(rng.random_range(0..k), rng.random_range(0.2..1.0), k))
                    .collect();
                (label, preds)
            })
            .collect();
        let report = score_predictions(&clips, k, 0.6);

        let mut correct = 0;
        let mut below = 0;
        let mut total = 0;
        for (label, preds) in &clips {
            let mut tally: HashMap<String, usize> = HashMap::new();
            for p in preds {
                *tally.entry(p.class_id.to_string()).or_default() += 1;
                total += 1;
                if p.confidence < 0.6 {
                    below += 1;
                }
            }
            let best = *tally.values().max().unwrap();
            let winner = preds
                .iter()
                .rev()
                .find(|p| tally[&p.class_id.to_string()] == best)
                .unwrap()
                .class_id;
            if winner == *label {
                correct += 1;
            }
        }
        assert_eq!(report.clip_accuracy, correct as f64 / 50.0);
        assert_eq!(report.below_threshold_rate, below as f64 / total as f64);
        assert_eq!(report.frames, total);
    }
}
