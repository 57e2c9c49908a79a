pub mod cv;
pub mod metrics;

pub use cv::*;
pub use metrics::*;
