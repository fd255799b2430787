//! Checkpoint directories: `manifest.json` plus `weights.bin`.
//!
//! `weights.bin` is a named-tensor table: a little-endian `u32` tensor
//! count, then per tensor a `u16` name length, the UTF-8 name and the tensor
//! in the `ECGT` container format.

use std::io::{Cursor, Read};
use std::path::Path;

use ecgtl_core::{Error, Fingerprint, Result, Tensor};
use ecgtl_nn::{ResNet, ResNetConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_completed: usize,
    /// Mean training loss of the last epoch; absent before the first.
    pub final_loss: Option<f64>,
    /// False when data preparation ran on several workers.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    architecture: ResNetConfig,
    label_names: Vec<String>,
    fingerprint: Fingerprint,
    meta: TrainMeta,
    tensor_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ResNetConfig,
    /// Class index to name.
    pub label_names: Vec<String>,
    pub fingerprint: Fingerprint,
    pub meta: TrainMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &ResNet<f32>, label_names: Vec<String>, fingerprint: Fingerprint, meta: TrainMeta) -> Result<Self> {
        let ck = Checkpoint {
            config: model.config.clone(),
            label_names,
            fingerprint,
            meta,
            tensors: model.export(),
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.label_names.len() != self.config.num_classes {
            return Err(Error::Format(format!(
                "label map has {} entries for {} classes",
                self.label_names.len(),
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Rebuilds the network with these weights.
    pub fn model(&self) -> Result<ResNet<f32>> {
        let mut m = ResNet::build(self.config.clone(), 0)?;
        m.import(&self.tensors)?;
        Ok(m)
    }

    fn manifest_json(&self) -> Result<String> {
        let m = Manifest {
            version: MANIFEST_VERSION,
            architecture: self.config.clone(),
            label_names: self.label_names.clone(),
            fingerprint: self.fingerprint.clone(),
            meta: self.meta.clone(),
            tensor_count: self.tensors.len(),
        };
        Ok(serde_json::to_string_pretty(&m)?)
    }

    pub fn weights_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.tensors.len()).map_err(|_| Error::Size("too many tensors".into()))?;
        let mut out = count.to_le_bytes().to_vec();
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Size(format!("tensor name {name} too long")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&t.to_bytes());
        }
        Ok(out)
    }

    pub fn parse_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
        let mut r = Cursor::new(bytes);
        let read = |buf: &mut [u8], r: &mut Cursor<&[u8]>| {
            r.read_exact(buf).map_err(|_| Error::Truncated("weights table".into()))
        };
        let mut b4 = [0u8; 4];
        read(&mut b4, &mut r)?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            read(&mut b2, &mut r)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            read(&mut name, &mut r)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let t = Tensor::read_from(&mut r)?;
            out.push((name, t));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after the weights table".into()));
        }
        Ok(out)
    }

    /// SHA-256 over the manifest and the weights table, hex encoded.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.manifest_json()?.as_bytes());
        h.update(self.weights_bytes()?);
        Ok(hex::encode(h.finalize()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest_json()?).map_err(|e| Error::file(&path, e))?;
        let path = dir.join(WEIGHTS_FILE);
        std::fs::write(&path, self.weights_bytes()?).map_err(|e| Error::file(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {}", m.version)));
        }
        let path = dir.join(WEIGHTS_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::file(&path, e))?;
        let tensors = Self::parse_weights(&bytes)?;
        if tensors.len() != m.tensor_count {
            return Err(Error::Format(format!(
                "manifest lists {} tensors, weights hold {}",
                m.tensor_count,
                tensors.len()
            )));
        }
        let ck = Checkpoint {
            config: m.architecture,
            label_names: m.label_names,
            fingerprint: m.fingerprint,
            meta: m.meta,
            tensors,
        };
        ck.validate()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecgtl_core::spectrogram::SpectrogramConfig;
    use ecgtl_core::ChannelPolicy;

    fn checkpoint() -> Checkpoint {
        let cfg = ResNetConfig::new(18, 1, 3).unwrap().with_base_width(2);
        let model = ResNet::<f32>::build(cfg, 4).unwrap();
        let fp = Fingerprint::new(360.0, &SpectrogramConfig::default(), 16, 16, ChannelPolicy::FirstLead);
        let meta = TrainMeta {
            seed: 4,
            epochs_completed: 2,
            final_loss: Some(0.5),
            deterministic: true,
        };
        Checkpoint::from_model(&model, vec!["a".into(), "b".into(), "c".into()], fp, meta).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let ck = checkpoint();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.digest().unwrap(), ck.digest().unwrap());
        let model = back.model().unwrap();
        assert_eq!(model.export(), ck.tensors);
    }

    #[test]
    fn weights_table_layout() {
        let ck = checkpoint();
        let bytes = ck.weights_bytes().unwrap();
        assert_eq!(u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize, ck.tensors.len());
        let name = &ck.tensors[0].0;
        let len = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        assert_eq!(&bytes[6..6 + len], name.as_bytes());
        assert_eq!(&bytes[6 + len..6 + len + 4], b"ECGT");
        assert_eq!(bytes.len(), 4 + ck.tensors.iter().map(|(n, t)| 2 + n.len() + t.encoded_len()).sum::<usize>());
        assert!(Checkpoint::parse_weights(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn label_map_must_match_head() {
        let mut ck = checkpoint();
        ck.label_names.pop();
        assert!(ck.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(ck.save(dir.path()).is_err());
    }

    #[test]
    fn digest_tracks_weights() {
        let ck = checkpoint();
        let mut other = ck.clone();
        other.tensors[0].1.data[0] += 1.0;
        assert_ne!(ck.digest().unwrap(), other.digest().unwrap());
    }
}
