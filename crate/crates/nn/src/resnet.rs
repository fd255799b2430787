use ecgtl_core::synth::derive_seed;
use ecgtl_core::{Error, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockKind, ConvBn, ResidualBlock};
use crate::float::Float;
use crate::layers::{global_avg_pool, global_avg_pool_backward, relu_backward, relu_inplace, Linear, MaxPool2d};
use crate::tensor::{Feat, Mat, Param};

/// Unit indices used by freezing: the stem is 0, stages are 1 to 4, the
/// head is 5.
pub const STEM_UNIT: usize = 0;
pub const HEAD_UNIT: usize = 5;

const HEAD_STREAM: u64 = 0x6865_6164;

fn default_base_width() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetConfig {
    /// 18, 50 or 101.
    pub variant: u32,
    pub input_channels: usize,
    pub num_classes: usize,
    pub stage_blocks: Vec<usize>,
    /// Channels of the stem and first stage; later stages double it.
    #[serde(default = "default_base_width")]
    pub base_width: usize,
}

impl ResNetConfig {
    pub fn standard_blocks(variant: u32) -> Result<Vec<usize>> {
        match variant {
            18 => Ok(vec![2, 2, 2, 2]),
            50 => Ok(vec![3, 4, 6, 3]),
            101 => Ok(vec![3, 4, 23, 3]),
            v => Err(Error::Config(format!("unknown ResNet variant {v} (expected 18, 50 or 101)"))),
        }
    }

    pub fn new(variant: u32, input_channels: usize, num_classes: usize) -> Result<Self> {
        let cfg = ResNetConfig {
            variant,
            input_channels,
            num_classes,
            stage_blocks: Self::standard_blocks(variant)?,
            base_width: 64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = Self::standard_blocks(self.variant)?;
        if self.stage_blocks != blocks {
            return Err(Error::Config(format!(
                "ResNet-{} has stage blocks {blocks:?}, got {:?}",
                self.variant, self.stage_blocks
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes {} < 2", self.num_classes)));
        }
        if self.input_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("input channels and base width must be positive".into()));
        }
        Ok(())
    }

    pub fn block_kind(&self) -> BlockKind {
        if self.variant == 18 {
            BlockKind::Basic
        } else {
            BlockKind::Bottleneck
        }
    }

    /// Width of the pooled features that feed the head.
    pub fn embed_dim(&self) -> usize {
        self.base_width * 8 * self.block_kind().expansion()
    }
}

/// Which units a name belongs to, from its prefix.
pub fn unit_of(name: &str) -> Option<usize> {
    if name.starts_with("stem.") {
        return Some(STEM_UNIT);
    }
    if name.starts_with("head.") {
        return Some(HEAD_UNIT);
    }
    let rest = name.strip_prefix("stage")?;
    let digit = rest.chars().next()?.to_digit(10)? as usize;
    (1..=4).contains(&digit).then_some(digit)
}

/// Stem (7x7/2 convolution, batch norm, ReLU, 3x3/2 max pool), four stages
/// of residual blocks, global average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct ResNet<T> {
    pub config: ResNetConfig,
    pub stem: ConvBn<T>,
    pub pool: MaxPool2d,
    pub stages: Vec<Vec<ResidualBlock<T>>>,
    pub head: Linear<T>,
    trainable_from: usize,
    stem_out: Option<Feat<T>>,
    pooled_hw: (usize, usize),
}

impl<T: Float> ResNet<T> {
    /// He-normal convolutions, unit batch-norm scales, a small-normal head.
    /// Identical seeds give bitwise-identical parameters.
    pub fn build(config: ResNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = config.base_width;
        let kind = config.block_kind();
        let stem = ConvBn {
            conv: crate::layers::Conv2d::new(config.input_channels, base, 7, 2, 3, &mut rng),
            bn: crate::layers::BatchNorm2d::new(base),
        };
        let mut cin = base;
        let mut stages = Vec::with_capacity(4);
        for (s, &n) in config.stage_blocks.iter().enumerate() {
            let width = base << s;
            let mut blocks = Vec::with_capacity(n);
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let block = ResidualBlock::new(kind, cin, width, stride, &mut rng);
                cin = block.out_channels();
                blocks.push(block);
            }
            stages.push(blocks);
        }
        let head = Linear::new(cin, config.num_classes, &mut Self::head_rng(seed));
        Ok(ResNet {
            config,
            stem,
            pool: MaxPool2d::new(3, 2, 1),
            stages,
            head,
            trainable_from: STEM_UNIT,
            stem_out: None,
            pooled_hw: (0, 0),
        })
    }

    fn head_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(seed, HEAD_STREAM))
    }

    /// Swaps in a freshly initialized head; the body is untouched.
    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::Config(format!("num_classes {num_classes} < 2")));
        }
        self.head = Linear::new(self.config.embed_dim(), num_classes, &mut Self::head_rng(seed));
        self.config.num_classes = num_classes;
        Ok(())
    }

    /// Units below `unit` are frozen: they run in inference mode (running
    /// batch-norm statistics, no updates) and receive no gradient.
    pub fn set_trainable_from(&mut self, unit: usize) {
        self.trainable_from = unit.min(HEAD_UNIT);
    }

    pub fn trainable_from(&self) -> usize {
        self.trainable_from
    }

    fn check_input(&self, x: &Feat<T>) -> Result<()> {
        if x.c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels, x.c
            )));
        }
        Ok(())
    }

    /// Pooled features before the head, inference mode.
    pub fn embed(&self, x: &Feat<T>) -> Result<Mat<T>> {
        self.check_input(x)?;
        if x.n == 0 {
            return Ok(Mat::zeros(0, self.config.embed_dim()));
        }
        let mut h = self.stem.infer(x)?;
        relu_inplace(&mut h.data);
        h = self.pool.infer(&h)?;
        for block in self.stages.iter().flatten() {
            h = block.infer(&h)?;
        }
        Ok(global_avg_pool(&h))
    }

    /// Inference-mode logits `[N, num_classes]`.
    pub fn forward(&self, x: &Feat<T>) -> Result<Mat<T>> {
        let e = self.embed(x)?;
        if e.rows == 0 {
            return Ok(Mat::zeros(0, self.config.num_classes));
        }
        self.head.infer(&e)
    }

    /// Training-mode logits; trainable units use batch statistics and cache
    /// activations for [`ResNet::backward`].
    pub fn forward_train(&mut self, x: &Feat<T>) -> Result<Mat<T>> {
        self.check_input(x)?;
        let from = self.trainable_from;
        let mut h = if from == STEM_UNIT {
            let mut s = self.stem.forward(x)?;
            relu_inplace(&mut s.data);
            let p = self.pool.forward(&s)?;
            self.stem_out = Some(s);
            p
        } else {
            let mut s = self.stem.infer(x)?;
            relu_inplace(&mut s.data);
            self.pool.infer(&s)?
        };
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for block in blocks {
                h = if s + 1 >= from { block.forward(&h)? } else { block.infer(&h)? };
            }
        }
        self.pooled_hw = (h.h, h.w);
        let e = global_avg_pool(&h);
        self.head.forward(&e)
    }

    pub fn backward(&mut self, dlogits: &Mat<T>) {
        let from = self.trainable_from;
        let de = self.head.backward(dlogits);
        if from == HEAD_UNIT {
            return;
        }
        let mut d = global_avg_pool_backward(&de, self.pooled_hw.0, self.pooled_hw.1);
        let first_stage = from.max(1);
        for s in (first_stage..=4).rev() {
            for j in (0..self.stages[s - 1].len()).rev() {
                let need_dx = !(s == from && j == 0);
                match self.stages[s - 1][j].backward(&d, need_dx) {
                    Some(next) => d = next,
                    None => return,
                }
            }
        }
        if from == STEM_UNIT {
            let mut d = self.pool.backward(&d);
            let s = self.stem_out.take().expect("stem activation");
            relu_backward(&mut d.data, &s.data);
            self.stem.backward(&d, false);
        }
    }

    /// Every named tensor: parameters and batch-norm buffers, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.stem.tensors("stem.", "conv", "bn", &mut out);
        for (s, blocks) in self.stages.iter().enumerate() {
            for (j, b) in blocks.iter().enumerate() {
                b.tensors(&format!("stage{}.{}.", s + 1, j), &mut out);
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        self.stem.tensors_mut("stem.", "conv", "bn", &mut out);
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for (j, b) in blocks.iter_mut().enumerate() {
                b.tensors_mut(&format!("stage{}.{}.", s + 1, j), &mut out);
            }
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    /// Learnable tensors of the units that are not frozen.
    pub fn trainable_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let from = self.trainable_from;
        self.tensors_mut()
            .into_iter()
            .filter(|(n, p)| !p.is_buffer() && unit_of(n).is_some_and(|u| u >= from))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.tensors_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(_, p)| !p.is_buffer())
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite()))
    }

    /// Named `f32` copies of every tensor.
    pub fn export(&self) -> Vec<(String, Tensor)> {
        self.tensors()
            .into_iter()
            .map(|(n, p)| {
                let data = p.value.iter().map(|v| v.f64() as f32).collect();
                (n, Tensor { dims: p.shape.clone(), data })
            })
            .collect()
    }

    /// Loads tensors by name. The name set and every shape must match the
    /// architecture exactly; values must be finite.
    pub fn import(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &Tensor> = std::collections::HashMap::new();
        for (n, t) in named {
            if by_name.insert(n.as_str(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {n}")));
            }
        }
        let mut targets = self.tensors_mut();
        if targets.len() != by_name.len() {
            return Err(Error::Format(format!(
                "architecture has {} tensors, checkpoint has {}",
                targets.len(),
                by_name.len()
            )));
        }
        for (name, p) in targets.iter_mut() {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if t.dims != p.shape {
                return Err(Error::Shape(format!("{name}: expected {:?}, got {:?}", p.shape, t.dims)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{name} has non-finite values")));
            }
            for (d, s) in p.value.iter_mut().zip(&t.data) {
                *d = T::of(*s as f64);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax_cross_entropy;
    use rand::Rng;

    fn tiny(variant: u32) -> ResNetConfig {
        ResNetConfig::new(variant, 1, 5).unwrap().with_base_width(2)
    }

    fn batch(n: usize, c: usize, h: usize, seed: u64) -> Feat<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Feat::zeros(c, n, h, h);
        f.data.iter_mut().for_each(|v| *v = r.random_range(0.0..1.0));
        f
    }

    #[test]
    fn config_validation() {
        assert!(matches!(ResNetConfig::new(34, 1, 5), Err(Error::Config(_))));
        assert!(ResNetConfig::new(18, 1, 1).is_err());
        assert_eq!(ResNetConfig::new(101, 1, 2).unwrap().stage_blocks, vec![3, 4, 23, 3]);
        let mut c = ResNetConfig::new(18, 1, 2).unwrap();
        c.stage_blocks = vec![1, 1, 1, 1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn embedding_widths() {
        assert_eq!(ResNetConfig::new(18, 1, 5).unwrap().embed_dim(), 512);
        assert_eq!(ResNetConfig::new(50, 1, 5).unwrap().embed_dim(), 2048);
        assert_eq!(ResNetConfig::new(101, 1, 5).unwrap().embed_dim(), 2048);
    }

    #[test]
    fn full_width_resnet18_output_shape() {
        let m = ResNet::<f32>::build(ResNetConfig::new(18, 1, 5).unwrap(), 0).unwrap();
        let x = batch(2, 1, 96, 1);
        let y = m.forward(&x).unwrap();
        assert_eq!((y.rows, y.cols), (2, 5));
        assert_eq!(m.embed(&x).unwrap().cols, 512);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ResNet::<f32>::build(tiny(50), 7).unwrap();
        let b = ResNet::<f32>::build(tiny(50), 7).unwrap();
        let c = ResNet::<f32>::build(tiny(50), 8).unwrap();
        assert_eq!(a.export(), b.export());
        assert_ne!(a.export(), c.export());
    }

    #[test]
    fn inference_is_deterministic_and_rowwise() {
        let m = ResNet::<f32>::build(tiny(18), 1).unwrap();
        let one = batch(1, 1, 32, 3);
        let mut x = Feat::zeros(1, 3, 32, 32);
        for n in 0..3 {
            x.data[n * 1024..(n + 1) * 1024].copy_from_slice(&one.data);
        }
        let y = m.forward(&x).unwrap();
        assert_eq!(y.row(0), y.row(1));
        assert_eq!(y.row(1), y.row(2));
        assert_eq!(m.forward(&x).unwrap(), y);
        let s = y.softmax();
        assert!((s.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let empty = m.forward(&Feat::zeros(1, 0, 32, 32)).unwrap();
        assert_eq!((empty.rows, empty.cols), (0, 5));
        assert!(m.forward(&Feat::zeros(2, 1, 32, 32)).is_err());
    }

    #[test]
    fn replace_head_keeps_body() {
        let mut m = ResNet::<f32>::build(tiny(18), 1).unwrap();
        let x = batch(2, 1, 32, 4);
        let before = m.embed(&x).unwrap();
        let body: Vec<_> = m.export().into_iter().filter(|(n, _)| !n.starts_with("head.")).collect();
        m.replace_head(2, 9).unwrap();
        assert_eq!(m.embed(&x).unwrap(), before);
        assert_eq!(m.forward(&x).unwrap().cols, 2);
        let body2: Vec<_> = m.export().into_iter().filter(|(n, _)| !n.starts_with("head.")).collect();
        assert_eq!(body, body2);
        let mut m2 = m.clone();
        m2.replace_head(2, 9).unwrap();
        assert_eq!(m.head.weight, m2.head.weight);
        assert!(matches!(m.replace_head(1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn unit_prefixes() {
        assert_eq!(unit_of("stem.conv.weight"), Some(0));
        assert_eq!(unit_of("stage3.1.bn2.bias"), Some(3));
        assert_eq!(unit_of("head.bias"), Some(5));
        assert_eq!(unit_of("other"), None);
        let m = ResNet::<f32>::build(tiny(18), 0).unwrap();
        assert!(m.tensors().iter().all(|(n, _)| unit_of(n).is_some()));
    }

    #[test]
    fn import_round_trip_and_guards() {
        let a = ResNet::<f32>::build(tiny(18), 1).unwrap();
        let mut b = ResNet::<f32>::build(tiny(18), 2).unwrap();
        b.import(&a.export()).unwrap();
        assert_eq!(a.export(), b.export());
        let mut t = a.export();
        t.pop();
        assert!(b.import(&t).is_err());
        let mut t = a.export();
        t[0].1.data[0] = f32::NAN;
        assert!(b.import(&t).is_err());
    }

    #[test]
    fn frozen_units_are_untouched_by_a_step() {
        let mut m = ResNet::<f32>::build(tiny(18), 3).unwrap();
        m.set_trainable_from(3);
        let before = m.export();
        let x = batch(4, 1, 32, 5);
        let logits = m.forward_train(&x).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &[0, 1, 2, 3], None).unwrap();
        m.backward(&d);
        for (_, p) in m.trainable_params_mut() {
            let g = p.grad.clone();
            for (v, g) in p.value.iter_mut().zip(&g) {
                *v -= 0.1 * g;
            }
        }
        let after = m.export();
        for ((n, a), (_, b)) in before.iter().zip(&after) {
            let unit = unit_of(n).unwrap();
            if unit < 3 {
                assert_eq!(a, b, "{n} changed");
            }
        }
        assert_ne!(before.last(), after.last());
    }

    /// Central differences through the whole network in f64, in training
    /// mode with every unit trainable.
    #[test]
    fn whole_network_gradients() {
        for variant in [18, 50] {
            let mut m = ResNet::<f64>::build(tiny(variant), 11).unwrap();
            // a step this small keeps ReLU and pooling switches out of the
            // differences; spatial size keeps the deep batch norms well posed
            let mut r = ChaCha8Rng::seed_from_u64(6);
            let mut x = Feat::zeros(1, 4, 64, 64);
            x.data.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
            let labels = [0, 3, 4, 1];
            let logits = m.forward_train(&x).unwrap();
            let (_, d) = softmax_cross_entropy(&logits, &labels, None).unwrap();
            m.zero_grad();
            m.backward(&d);
            let grads: Vec<(String, Vec<f64>)> = m
                .trainable_params_mut()
                .into_iter()
                .map(|(n, p)| (n, p.grad.clone()))
                .collect();
            let loss = |m: &mut ResNet<f64>| {
                let l = m.forward_train(&x).unwrap();
                softmax_cross_entropy(&l, &labels, None).unwrap().0
            };
            let (mut ok, mut total) = (0, 0);
            for (name, g) in &grads {
                // sample a few coordinates of each tensor
                for i in (0..g.len()).step_by((g.len() / 3).max(1)) {
                    let h = 1e-7;
                    let probe = |delta: f64| {
                        let mut mm = m.clone();
                        for (n, p) in mm.tensors_mut() {
                            if &n == name {
                                p.value[i] += delta;
                            }
                        }
                        loss(&mut mm)
                    };
                    let fd = (probe(h) - probe(-h)) / (2.0 * h);
                    total += 1;
                    if (fd - g[i]).abs() <= 1e-3 * fd.abs().max(g[i].abs()).max(1e-6) {
                        ok += 1;
                    }
                }
            }
            assert!(ok as f64 >= 0.95 * total as f64, "ResNet-{variant}: {ok}/{total}");
        }
    }
}
