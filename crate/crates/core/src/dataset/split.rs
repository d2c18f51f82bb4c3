//! Train/test manifests:
//!
//! ```text
//! [train]
//! HandWash_001_A_01_G_01.avi
//! [test]
//! HandWash_002_A_01_G_02.avi
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use super::names::{ClipId, NameError};
use crate::rng::rng_for;
use crate::{Error, Result};

/// Counts of the official full-dataset split: (train, test).
pub const FULL_SPLIT_COUNTS: (usize, usize) = (2624, 880);

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("line {line}: {source}")]
    Name { line: usize, source: NameError },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("clips in both train and test: {}", .names.join(", "))]
    Overlap { names: Vec<String> },
    #[error("expected {expected:?} (train, test) clips, found {found:?}")]
    Counts {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<ClipId>,
    pub test: Vec<ClipId>,
}

impl SplitManifest {
    pub fn counts(&self) -> (usize, usize) {
        (self.train.len(), self.test.len())
    }

    pub fn parse(text: &str) -> Result<Self, SplitError> {
        let mut m = SplitManifest::default();
        let mut section: Option<bool> = None; // Some(true) = train
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim_end_matches('\r');
            if s.trim().is_empty() || s.starts_with('#') {
                continue;
            }
            match s {
                "[train]" => section = Some(true),
                "[test]" => section = Some(false),
                _ if s.starts_with('[') => {
                    return Err(SplitError::Syntax {
                        line,
                        message: format!("unknown section {s}"),
                    })
                }
                _ => {
                    let id: ClipId = s.parse().map_err(|source| SplitError::Name { line, source })?;
                    match section {
                        Some(true) => m.train.push(id),
                        Some(false) => m.test.push(id),
                        None => {
                            return Err(SplitError::Syntax {
                                line,
                                message: "clip name before any [train]/[test] header".into(),
                            })
                        }
                    }
                }
            }
        }
        if m.train.is_empty() && m.test.is_empty() {
            log::warn!("split manifest lists no clips");
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[train]\n");
        for id in &self.train {
            out.push_str(&format!("{id}\n"));
        }
        out.push_str("[test]\n");
        for id in &self.test {
            out.push_str(&format!("{id}\n"));
        }
        out
    }

    /// Rejects overlap between the sections and, when given, unexpected counts.
    pub fn validate(&self, expected: Option<(usize, usize)>) -> Result<(), SplitError> {
        let train: HashSet<_> = self.train.iter().collect();
        let overlap: BTreeSet<String> = self
            .test
            .iter()
            .filter(|id| train.contains(id))
            .map(ToString::to_string)
            .collect();
        if !overlap.is_empty() {
            return Err(SplitError::Overlap {
                names: overlap.into_iter().collect(),
            });
        }
        if let Some(expected) = expected {
            if self.counts() != expected {
                return Err(SplitError::Counts {
                    expected,
                    found: self.counts(),
                });
            }
        }
        Ok(())
    }
}

/// Reads and validates (disjointness only) a manifest file.
pub fn load_split(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let m = SplitManifest::parse(&text)?;
    m.validate(None)?;
    Ok(m)
}

/// Group-disjoint split: whole groups go to test until `test_fraction` of
/// the groups is reached (at least one group when there are two or more).
pub fn split_by_group(ids: &[ClipId], test_fraction: f64, seed: u64) -> Result<SplitManifest> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::contract("test fraction must be in [0, 1)"));
    }
    let mut groups: BTreeMap<u8, Vec<ClipId>> = BTreeMap::new();
    for id in ids {
        groups.entry(id.group).or_default().push(*id);
    }
    let mut keys: Vec<u8> = groups.keys().copied().collect();
    keys.shuffle(&mut rng_for(seed, "split_by_group"));
    let mut n_test = (keys.len() as f64 * test_fraction).round() as usize;
    if n_test == 0 && keys.len() >= 2 && test_fraction > 0.0 {
        n_test = 1;
    }
    let test_groups: HashSet<u8> = keys[..n_test].iter().copied().collect();
    let mut m = SplitManifest::default();
    for (g, members) in groups {
        if test_groups.contains(&g) {
            m.test.extend(members);
        } else {
            m.train.extend(members);
        }
    }
    m.train.sort();
    m.test.sort();
    Ok(m)
}
