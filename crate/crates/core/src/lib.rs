//! Signal-side building blocks for ECG transfer learning.
//!
//! The crate covers everything that happens before (and after) a network sees
//! data:
//!
//! - [`wfdb`]: MIT-BIH / WFDB header, format-212 and annotation codecs
//! - [`dsp`]: Chebyshev type I filtering, Shannon-energy R-peak detection,
//!   1.2-RR beat segmentation and resampling
//! - [`spectrogram`]: windowing, STFT, dB scaling, image tensors and PNG export
//! - [`synth`]: Gaussian-template ECG synthesis and a surrogate CRT cohort
//! - [`metrics`]: confusion counts, accuracy / sensitivity / specificity and
//!   the classical baselines (guideline rule, logistic regression, linear SVM)
//! - [`container`]: the `ECGT` binary tensor container used by every artifact

pub mod container;
pub mod dsp;
pub mod error;
pub mod fingerprint;
pub mod label;
pub mod metrics;
pub mod spectrogram;
pub mod synth;
pub mod wfdb;

pub use container::Tensor;
pub use error::{Error, Result};
pub use fingerprint::{ChannelPolicy, Fingerprint};
pub use label::{CrtLabel, SegmentLabel};
pub use wfdb::AamiClass;
