use rand::seq::index;

use crate::media::ClipMeta;
use crate::rng::rng_for;
use crate::{Error, Result};

/// Random per-second frame selection.
///
/// Each whole second of the clip contributes `sample_fps` distinct frames
/// (or all eligible frames when fewer exist). A trailing partial second with
/// at least two frames contributes `ceil(fraction * sample_fps)`. The last
/// frame of the clip is never chosen because it has no successor. Every
/// index `i` is returned as the pair `(i, i + 1)`, ascending.
pub fn sample_frames(meta: &ClipMeta, sample_fps: u32, seed: u64) -> Result<Vec<(usize, usize)>> {
    if sample_fps == 0 {
        return Err(Error::contract("sample_fps must be >= 1"));
    }
    if sample_fps > meta.fps {
        return Err(Error::contract(format!(
            "sample_fps {sample_fps} exceeds clip fps {}",
            meta.fps
        )));
    }
    let fps = meta.fps as usize;
    let k = sample_fps as usize;
    let eligible_end = meta.frame_count.saturating_sub(1);
    let mut rng = rng_for(seed, "sample_frames");
    let mut out = Vec::new();
    let mut start = 0;
    while start < meta.frame_count {
        let end = (start + fps).min(meta.frame_count);
        let span = end - start;
        let quota = if span == fps {
            k
        } else if span >= 2 {
            (span * k).div_ceil(fps)
        } else {
            0
        };
        let candidates = end.min(eligible_end).saturating_sub(start);
        let take = quota.min(candidates);
        if take > 0 {
            let mut picked: Vec<usize> = index::sample(&mut rng, candidates, take)
                .into_iter()
                .map(|i| start + i)
                .collect();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|i| (i, i + 1)));
        }
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(fps: u32, frames: usize) -> ClipMeta {
        ClipMeta {
            fps,
            width: 8,
            height: 8,
            frame_count: frames,
        }
    }

    #[test]
    fn exhaustive_one_second() {
        let pairs = sample_frames(&meta(30, 30), 30, 1).unwrap();
        let expected: Vec<_> = (0..29).map(|i| (i, i + 1)).collect();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn three_per_second_over_two_seconds() {
        let pairs = sample_frames(&meta(30, 60), 3, 9).unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs.iter().filter(|p| p.0 < 30).count(), 3);
        assert!(pairs.iter().all(|&(i, j)| j == i + 1 && j < 60));
        assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn deterministic_per_seed() {
        let m = meta(30, 354);
        assert_eq!(sample_frames(&m, 4, 5).unwrap(), sample_frames(&m, 4, 5).unwrap());
        assert_ne!(sample_frames(&m, 4, 5).unwrap(), sample_frames(&m, 4, 6).unwrap());
    }

    #[test]
    fn partial_trailing_second() {
        // 354 frames at 30 fps: 11 whole seconds plus 24 frames (0.8 s) -> ceil(0.8 * 5) = 4.
        let pairs = sample_frames(&meta(30, 354), 5, 2).unwrap();
        assert_eq!(pairs.len(), 11 * 5 + 4);
        assert!(pairs.iter().all(|&(_, j)| j < 354));
        // A single trailing frame contributes nothing.
        assert_eq!(sample_frames(&meta(30, 31), 5, 2).unwrap().len(), 5);
    }

    #[test]
    fn rejects_oversampling() {
        assert!(sample_frames(&meta(30, 30), 31, 0).is_err());
    }
}
