//! Precomputed flow / HOG files and loading clips as network inputs.
//!
//! Cache layout: `<clip>_p<i>.flo` and `<clip>_p<i>.pgm` for the pair
//! starting at source frame `i`, plus `index.tsv` with rows
//! `clip<TAB>i<TAB>flo file<TAB>pgm file`. A clip that could not be
//! processed gets one row `clip<TAB>failed<TAB>-<TAB>reason`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::media::{decode_pnm, encode_flo, encode_pnm, read_clip, read_flo, ClipFrames, ClipMeta};
use crate::network::LabeledClip;
use crate::preprocess::{preprocess_pair, resize_bilinear, sample_frames, FrameInputs, PreprocessConfig, PreprocessedPair};
use crate::rng::derive_seed;
use crate::{Error, Result};

use super::names::ClipId;

pub const CACHE_INDEX: &str = "index.tsv";

/// Counts of cache files written and left alone, plus clips that failed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheReport {
    pub written: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheEntry {
    pub clip: String,
    pub pair: usize,
    pub flo: String,
    pub pgm: String,
}

fn clip_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// The frame pairs a clip contributes; the sampling seed mixes the config
/// seed with the clip name so every clip draws independently.
pub fn clip_pairs(name: &str, meta: &ClipMeta, cfg: &PreprocessConfig) -> Result<Vec<(usize, usize)>> {
    sample_frames(meta, cfg.sample_fps, derive_seed(cfg.seed, name))
}

fn process_clip(dir: &Path, cfg: &PreprocessConfig) -> Result<Vec<(usize, PreprocessedPair)>> {
    let (meta, frames) = read_clip(dir)?;
    clip_pairs(&clip_name(dir), &meta, cfg)?
        .into_iter()
        .map(|(i, j)| Ok((i, preprocess_pair(&frames.frame(i)?, &frames.frame(j)?, cfg)?)))
        .collect()
}

/// Writes `bytes` unless the file already holds exactly them. Returns whether it wrote.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    fs::write(path, bytes).map_err(Error::io(path))?;
    Ok(true)
}

/// Computes flow and HOG for every sampled pair of every clip into `out_dir`.
///
/// Idempotent: files whose content would not change are not rewritten.
/// Unreadable clips are recorded as failed and skipped.
pub fn precompute_cache(clip_dirs: &[PathBuf], cfg: &PreprocessConfig, out_dir: impl AsRef<Path>) -> Result<CacheReport> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let results: Vec<(String, Result<(Vec<CacheEntry>, usize, usize)>)> = clip_dirs
        .par_iter()
        .map(|dir| {
            let name = clip_name(dir);
            let result = process_clip(dir, cfg).and_then(|pairs| {
                let (mut written, mut skipped) = (0, 0);
                let mut entries = Vec::with_capacity(pairs.len());
                for (i, p) in pairs {
                    let flo = format!("{name}_p{i}.flo");
                    let pgm = format!("{name}_p{i}.pgm");
                    for (file, bytes) in [(&flo, encode_flo(&p.flow)?), (&pgm, encode_pnm(&p.hog))] {
                        if write_if_changed(&out.join(file), &bytes)? {
                            written += 1;
                        } else {
                            skipped += 1;
                        }
                    }
                    entries.push(CacheEntry {
                        clip: name.clone(),
                        pair: i,
                        flo,
                        pgm,
                    });
                }
                Ok((entries, written, skipped))
            });
            (name, result)
        })
        .collect();

    let mut report = CacheReport::default();
    let mut index = String::new();
    for (name, result) in results {
        match result {
            Ok((entries, w, s)) => {
                report.written += w;
                report.skipped += s;
                for e in entries {
                    index.push_str(&format!("{}\t{}\t{}\t{}\n", e.clip, e.pair, e.flo, e.pgm));
                }
            }
            Err(e) => {
                let reason = e.to_string().replace(['\t', '\n'], " ");
                log::warn!("cache: skipping {name}: {reason}");
                index.push_str(&format!("{name}\tfailed\t-\t{reason}\n"));
                report.failed.push((name, reason));
            }
        }
    }
    write_if_changed(&out.join(CACHE_INDEX), index.as_bytes())?;
    Ok(report)
}

/// Successful entries of a cache index, grouped by clip.
pub fn read_cache_index(dir: impl AsRef<Path>) -> Result<HashMap<String, Vec<CacheEntry>>> {
    let path = dir.as_ref().join(CACHE_INDEX);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let mut map: HashMap<String, Vec<CacheEntry>> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::contract(format!("{}: malformed line {}", path.display(), n + 1));
        if cols.len() != 4 {
            return Err(bad());
        }
        if cols[1] == "failed" {
            continue;
        }
        map.entry(cols[0].to_string()).or_default().push(CacheEntry {
            clip: cols[0].to_string(),
            pair: cols[1].parse().map_err(|_| bad())?,
            flo: cols[2].to_string(),
            pgm: cols[3].to_string(),
        });
    }
    Ok(map)
}

fn cached_inputs(frames: &ClipFrames, entry: &CacheEntry, cache: &Path, cfg: &PreprocessConfig) -> Result<FrameInputs> {
    let s = cfg.target_size;
    let rgb = resize_bilinear(&frames.frame(entry.pair)?, s, s)?;
    let flow = read_flo(cache.join(&entry.flo))?;
    let pgm_path = cache.join(&entry.pgm);
    let hog = decode_pnm(&fs::read(&pgm_path).map_err(Error::io(&pgm_path))?)?;
    FrameInputs::from_parts(&rgb, &flow, &hog)
}

/// Network inputs for every sampled pair of the clip in `dir`, read from
/// `cache` when it has the clip and computed otherwise.
pub fn load_clip_inputs(
    dir: impl AsRef<Path>,
    cfg: &PreprocessConfig,
    cache: Option<(&Path, &HashMap<String, Vec<CacheEntry>>)>,
) -> Result<Vec<FrameInputs>> {
    let dir = dir.as_ref();
    let name = clip_name(dir);
    if let Some((cache_dir, entries)) = cache.and_then(|(d, index)| index.get(&name).map(|e| (d, e))) {
        let (_, frames) = read_clip(dir)?;
        return entries.iter().map(|e| cached_inputs(&frames, e, cache_dir, cfg)).collect();
    }
    Ok(process_clip(dir, cfg)?.into_iter().map(|(_, p)| p.inputs()).collect())
}

/// Loads `ids` from `clips_root/<stem>/` as labeled training clips, in parallel.
pub fn load_labeled_clips(
    clips_root: impl AsRef<Path>,
    ids: &[ClipId],
    cfg: &PreprocessConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<LabeledClip>> {
    cfg.validate()?;
    let index = cache_dir.map(read_cache_index).transpose()?;
    let cache = cache_dir.zip(index.as_ref());
    let root = clips_root.as_ref();
    ids.par_iter()
        .map(|id| {
            Ok(LabeledClip {
                name: id.to_string(),
                label: id.class_index(),
                frames: load_clip_inputs(root.join(id.stem()), cfg, cache)?,
            })
        })
        .collect()
}
