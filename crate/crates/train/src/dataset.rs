//! Labeled image sets and their on-disk form.
//!
//! A set directory holds `images.ecgt` (`[N, C, H, W]`), `index.tsv` (one
//! `group<TAB>label` line per image) and `set.json` (fingerprint and label
//! names).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ecgtl_core::spectrogram::ImageTensor;
use ecgtl_core::{Error, Fingerprint, Result, Tensor};
use ecgtl_nn::Feat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const IMAGES_FILE: &str = "images.ecgt";
pub const INDEX_FILE: &str = "index.tsv";
pub const SET_FILE: &str = "set.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SetMeta {
    fingerprint: Fingerprint,
    label_names: Vec<String>,
    seed: Option<u64>,
}

/// Images with class labels and a grouping key (record or patient id).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub fingerprint: Fingerprint,
    pub label_names: Vec<String>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `[N, C, H, W]`.
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub groups: Vec<String>,
    /// Seed of the generator that produced the source data, when known.
    pub seed: Option<u64>,
}

impl ImageSet {
    pub fn new(fingerprint: Fingerprint, label_names: Vec<String>) -> Self {
        ImageSet {
            channels: fingerprint.channels(),
            height: fingerprint.image_height,
            width: fingerprint.image_width,
            fingerprint,
            label_names,
            images: Vec::new(),
            labels: Vec::new(),
            groups: Vec::new(),
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, image: &ImageTensor, label: usize, group: &str) -> Result<()> {
        if (image.channels, image.height, image.width) != (self.channels, self.height, self.width) {
            return Err(Error::Shape(format!(
                "image {}x{}x{} does not match set {}x{}x{}",
                image.channels, image.height, image.width, self.channels, self.height, self.width
            )));
        }
        if label >= self.num_classes() {
            return Err(Error::Data(format!("label {label} outside {} classes", self.num_classes())));
        }
        self.images.extend_from_slice(&image.data);
        self.labels.push(label);
        self.groups.push(group.to_string());
        Ok(())
    }

    /// Gathers the listed images into a network batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Feat<f32>> {
        let mut buf = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index { index: i, len: self.len() });
            }
            buf.extend_from_slice(self.image(i));
        }
        Feat::from_nchw(indices.len(), self.channels, self.height, self.width, &buf)
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Image indices per group, groups in sorted order.
    pub fn by_group(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, g) in self.groups.iter().enumerate() {
            out.entry(g.as_str()).or_default().push(i);
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let tensor = Tensor::new(
            vec![self.len(), self.channels, self.height, self.width],
            self.images.clone(),
        )?;
        tensor.write(&dir.join(IMAGES_FILE))?;
        let mut index = String::new();
        for (g, l) in self.groups.iter().zip(&self.labels) {
            let _ = writeln!(index, "{g}\t{}", self.label_names[*l]);
        }
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, index).map_err(|e| Error::file(&path, e))?;
        let meta = SetMeta {
            fingerprint: self.fingerprint.clone(),
            label_names: self.label_names.clone(),
            seed: self.seed,
        };
        let path = dir.join(SET_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::file(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SET_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let meta: SetMeta = serde_json::from_str(&text)?;
        let mut set = ImageSet::new(meta.fingerprint, meta.label_names);
        set.seed = meta.seed;
        let tensor = Tensor::read(&dir.join(IMAGES_FILE))?;
        let expected = [set.channels, set.height, set.width];
        if tensor.dims.len() != 4 || tensor.dims[1..] != expected {
            return Err(Error::Shape(format!(
                "{IMAGES_FILE} has dims {:?}, fingerprint wants [N, {}, {}, {}]",
                tensor.dims, expected[0], expected[1], expected[2]
            )));
        }
        let path = dir.join(INDEX_FILE);
        let index = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        for (line_no, line) in index.lines().enumerate() {
            let (g, l) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: line_no + 1,
                msg: "expected group<TAB>label".into(),
            })?;
            let label = set.label_names.iter().position(|n| n == l).ok_or_else(|| Error::Parse {
                line: line_no + 1,
                msg: format!("unknown label {l}"),
            })?;
            set.labels.push(label);
            set.groups.push(g.to_string());
        }
        if set.labels.len() != tensor.dims[0] {
            return Err(Error::Data(format!(
                "{INDEX_FILE} lists {} images, {IMAGES_FILE} holds {}",
                set.labels.len(),
                tensor.dims[0]
            )));
        }
        set.images = tensor.data;
        Ok(set)
    }
}

/// Splits image indices per class with `test_fraction` of each class held
/// out (rounded, at least one image when a class has two or more). Beats of
/// one record may fall on both sides.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut k = (test_fraction * idx.len() as f64).round() as usize;
        if test_fraction > 0.0 && k == 0 && idx.len() >= 2 {
            k = 1;
        }
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
