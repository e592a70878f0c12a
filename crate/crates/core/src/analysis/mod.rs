//! Detection metrics and the sub-band EMD comparison.

pub mod emd;
pub mod metrics;

pub use emd::{emd_1d, emd_report, histogram, EmdReport, EmdRow, DEFAULT_BINS, DEFAULT_DEPTH};
pub use metrics::{accuracy, auc, frame_and_video_metrics, video_level, Level, Metrics, VideoScore, THRESHOLD};
