//! The real-time loop: a ring buffer of per-frame predictions, polled at a
//! fixed interval for a thresholded majority vote, with erroneous-action
//! detection when confident votes stop arriving.

mod buffer;
mod pipeline;

pub use buffer::{
    format_event_log, ErroneousDetector, ErroneousEvent, Event, FrameBuffer, FrameRecord, Verdict, WindowDecision,
};
pub use pipeline::{run_live, run_offline, FrameClassifier, RuntimeConfig};
