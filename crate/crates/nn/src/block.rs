use ecgtl_core::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::float::Float;
use crate::layers::{relu_backward, relu_inplace, BatchNorm2d, Conv2d};
use crate::tensor::{Feat, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3x3 convolutions.
    Basic,
    /// 1x1 reduce, 3x3, 1x1 expand by [`BOTTLENECK_EXPANSION`].
    Bottleneck,
}

pub const BOTTLENECK_EXPANSION: usize = 4;

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => BOTTLENECK_EXPANSION,
        }
    }
}

/// A convolution followed by batch normalization.
#[derive(Debug, Clone)]
pub struct ConvBn<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Float> ConvBn<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        ConvBn {
            conv: Conv2d::new(cin, cout, k, stride, k / 2, rng),
            bn: BatchNorm2d::new(cout),
        }
    }

    pub fn infer(&self, x: &Feat<T>) -> Result<Feat<T>> {
        self.bn.infer(&self.conv.infer(x)?)
    }

    pub fn forward(&mut self, x: &Feat<T>) -> Result<Feat<T>> {
        let h = self.conv.forward(x)?;
        self.bn.forward(&h, true)
    }

    pub fn backward(&mut self, dy: &Feat<T>, need_dx: bool) -> Option<Feat<T>> {
        let d = self.bn.backward(dy);
        self.conv.backward(&d, need_dx)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, conv: &str, bn: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((format!("{prefix}{conv}.weight"), &self.conv.weight));
        out.push((format!("{prefix}{bn}.weight"), &self.bn.gamma));
        out.push((format!("{prefix}{bn}.bias"), &self.bn.beta));
        out.push((format!("{prefix}{bn}.running_mean"), &self.bn.running_mean));
        out.push((format!("{prefix}{bn}.running_var"), &self.bn.running_var));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, conv: &str, bn: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((format!("{prefix}{conv}.weight"), &mut self.conv.weight));
        out.push((format!("{prefix}{bn}.weight"), &mut self.bn.gamma));
        out.push((format!("{prefix}{bn}.bias"), &mut self.bn.beta));
        out.push((format!("{prefix}{bn}.running_mean"), &mut self.bn.running_mean));
        out.push((format!("{prefix}{bn}.running_var"), &mut self.bn.running_var));
    }
}

/// `y = relu(F(x) + shortcut(x))`, where `F` is the conv/batch-norm branch
/// with ReLUs between its layers, and the shortcut is the identity or a
/// 1x1 projection when the shape changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub kind: BlockKind,
    pub branch: Vec<ConvBn<T>>,
    pub shortcut: Option<ConvBn<T>>,
    hidden: Vec<Feat<T>>,
    output: Option<Feat<T>>,
}

impl<T: Float> ResidualBlock<T> {
    /// `width` is the inner channel count; the block outputs
    /// `width * kind.expansion()` channels.
    pub fn new<R: Rng>(kind: BlockKind, cin: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        let cout = width * kind.expansion();
        let branch = match kind {
            BlockKind::Basic => vec![
                ConvBn::new(cin, width, 3, stride, rng),
                ConvBn::new(width, width, 3, 1, rng),
            ],
            BlockKind::Bottleneck => vec![
                ConvBn::new(cin, width, 1, 1, rng),
                ConvBn::new(width, width, 3, stride, rng),
                ConvBn::new(width, cout, 1, 1, rng),
            ],
        };
        let shortcut = (stride != 1 || cin != cout).then(|| ConvBn::new(cin, cout, 1, stride, rng));
        Self::from_parts(kind, branch, shortcut)
    }

    pub fn from_parts(kind: BlockKind, branch: Vec<ConvBn<T>>, shortcut: Option<ConvBn<T>>) -> Self {
        ResidualBlock {
            kind,
            branch,
            shortcut,
            hidden: Vec::new(),
            output: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.branch[0].conv.cin
    }

    pub fn out_channels(&self) -> usize {
        self.branch.last().expect("non-empty branch").bn.c
    }

    fn join(&self, mut f: Feat<T>, s: &Feat<T>) -> Result<Feat<T>> {
        if !f.same_shape(s) {
            return Err(Error::Shape(format!(
                "residual branch gives {}x{}x{} but the shortcut gives {}x{}x{}; a projection is required",
                f.c, f.h, f.w, s.c, s.h, s.w
            )));
        }
        for (a, b) in f.data.iter_mut().zip(&s.data) {
            *a += *b;
        }
        relu_inplace(&mut f.data);
        Ok(f)
    }

    pub fn infer(&self, x: &Feat<T>) -> Result<Feat<T>> {
        let mut h = x.clone();
        for (i, cb) in self.branch.iter().enumerate() {
            h = cb.infer(&h)?;
            if i + 1 < self.branch.len() {
                relu_inplace(&mut h.data);
            }
        }
        match &self.shortcut {
            Some(p) => {
                let s = p.infer(x)?;
                self.join(h, &s)
            }
            None => self.join(h, x),
        }
    }

    /// Training-mode forward (batch statistics), caching for `backward`.
    pub fn forward(&mut self, x: &Feat<T>) -> Result<Feat<T>> {
        self.hidden.clear();
        let mut h = self.branch[0].forward(x)?;
        for i in 1..self.branch.len() {
            relu_inplace(&mut h.data);
            let next = self.branch[i].forward(&h)?;
            self.hidden.push(std::mem::replace(&mut h, next));
        }
        let y = match &mut self.shortcut {
            Some(p) => {
                let s = p.forward(x)?;
                self.join(h, &s)?
            }
            None => self.join(h, x)?,
        };
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Feat<T>, need_dx: bool) -> Option<Feat<T>> {
        let y = self.output.take().expect("backward without a training forward");
        let mut d = dy.clone();
        relu_backward(&mut d.data, &y.data);
        let ds = match &mut self.shortcut {
            Some(p) => p.backward(&d, need_dx),
            None => need_dx.then(|| d.clone()),
        };
        let mut g = d;
        for i in (0..self.branch.len()).rev() {
            let need = i > 0 || need_dx;
            match self.branch[i].backward(&g, need) {
                Some(next) => g = next,
                None => break,
            }
            if i > 0 {
                let h = self.hidden.pop().expect("cached activation");
                relu_backward(&mut g.data, &h.data);
            }
        }
        self.hidden.clear();
        let mut dx = ds?;
        for (a, b) in dx.data.iter_mut().zip(&g.data) {
            *a += *b;
        }
        Some(dx)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (i, cb) in self.branch.iter().enumerate() {
            cb.tensors(prefix, &format!("conv{}", i + 1), &format!("bn{}", i + 1), out);
        }
        if let Some(p) = &self.shortcut {
            p.tensors(prefix, "shortcut.conv", "shortcut.bn", out);
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        for (i, cb) in self.branch.iter_mut().enumerate() {
            cb.tensors_mut(prefix, &format!("conv{}", i + 1), &format!("bn{}", i + 1), out);
        }
        if let Some(p) = &mut self.shortcut {
            p.tensors_mut(prefix, "shortcut.conv", "shortcut.bn", out);
        }
    }
}
