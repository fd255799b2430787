//! The preprocessing fingerprint carried by every image set and checkpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrogram::{SpectrogramConfig, WindowKind};

/// How leads become image channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelPolicy {
    /// Single channel from the detection lead.
    FirstLead,
    /// One channel per lead, in file order.
    StackedLeads { leads: usize },
}

impl ChannelPolicy {
    pub fn channels(self) -> usize {
        match self {
            ChannelPolicy::FirstLead => 1,
            ChannelPolicy::StackedLeads { leads } => leads,
        }
    }
}

pub const NORMALIZATION_MINMAX_DB: &str = "per-image min-max of dB magnitude";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub fs: f64,
    pub window_kind: WindowKind,
    pub window_len: usize,
    pub hop: usize,
    pub floor_db: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub normalization: String,
    pub channel_policy: ChannelPolicy,
}

impl Fingerprint {
    pub fn new(
        fs: f64,
        spec: &SpectrogramConfig,
        image_height: usize,
        image_width: usize,
        channel_policy: ChannelPolicy,
    ) -> Self {
        Fingerprint {
            fs,
            window_kind: spec.window_kind,
            window_len: spec.window_len,
            hop: spec.hop,
            floor_db: spec.floor_db,
            image_height,
            image_width,
            normalization: NORMALIZATION_MINMAX_DB.to_string(),
            channel_policy,
        }
    }

    pub fn spectrogram_config(&self) -> SpectrogramConfig {
        SpectrogramConfig {
            window_kind: self.window_kind,
            window_len: self.window_len,
            hop: self.hop,
            floor_db: self.floor_db,
        }
    }

    pub fn channels(&self) -> usize {
        self.channel_policy.channels()
    }

    /// Errors with the list of differing fields when two fingerprints
    /// describe different preprocessing.
    pub fn check_compatible(&self, other: &Fingerprint) -> Result<()> {
        let mut diffs = Vec::new();
        if self.fs != other.fs {
            diffs.push(format!("fs {} vs {}", self.fs, other.fs));
        }
        if self.window_kind != other.window_kind {
            diffs.push(format!("window {} vs {}", self.window_kind, other.window_kind));
        }
        if self.window_len != other.window_len {
            diffs.push(format!("window_len {} vs {}", self.window_len, other.window_len));
        }
        if self.hop != other.hop {
            diffs.push(format!("hop {} vs {}", self.hop, other.hop));
        }
        if self.floor_db != other.floor_db {
            diffs.push(format!("floor_db {} vs {}", self.floor_db, other.floor_db));
        }
        if (self.image_height, self.image_width) != (other.image_height, other.image_width) {
            diffs.push(format!(
                "image {}x{} vs {}x{}",
                self.image_height, self.image_width, other.image_height, other.image_width
            ));
        }
        if self.normalization != other.normalization {
            diffs.push("normalization".to_string());
        }
        if self.channel_policy != other.channel_policy {
            diffs.push(format!("channels {:?} vs {:?}", self.channel_policy, other.channel_policy));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "incompatible preprocessing fingerprint: {}",
                diffs.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_len_mismatch_is_reported() {
        let a = Fingerprint::new(360.0, &SpectrogramConfig::default(), 96, 96, ChannelPolicy::FirstLead);
        assert!(a.check_compatible(&a.clone()).is_ok());
        let mut b = a.clone();
        b.window_len = 256;
        let err = a.check_compatible(&b).unwrap_err().to_string();
        assert!(err.contains("window_len 512 vs 256"), "{err}");
    }

    #[test]
    fn serde_shape() {
        let fp = Fingerprint::new(
            360.0,
            &SpectrogramConfig::default(),
            32,
            32,
            ChannelPolicy::StackedLeads { leads: 2 },
        );
        let json = serde_json::to_value(&fp).unwrap();
        assert_eq!(json["window_kind"], "hann");
        assert_eq!(json["channel_policy"]["kind"], "stacked_leads");
        let back: Fingerprint = serde_json::from_value(json).unwrap();
        assert_eq!(back, fp);
        assert_eq!(back.channels(), 2);
    }
}
