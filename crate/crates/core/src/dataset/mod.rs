//! Clip naming, split manifests, synthetic data and cache precomputation.

mod cache;
mod names;
mod split;
mod synth;

pub use cache::{
    clip_pairs, load_clip_inputs, load_labeled_clips, precompute_cache, read_cache_index, CacheEntry, CacheReport,
    CACHE_INDEX,
};
pub use names::{ClipId, NameError, NUM_ACTION_CLASSES};
pub use split::{load_split, split_by_group, SplitError, SplitManifest, FULL_SPLIT_COUNTS};
pub use synth::{
    analytic_flow, clip_specs, generate_synthetic, render_clip, render_frame, ClipSpec, Motion, SynthConfig,
    SynthDataset, Texture, CLIPS_DIR, LABELS_FILE, SPLIT_FILE,
};
