//! Residual image classifiers with batch normalisation: a tiny network for
//! desk-scale runs, WideResNet-16-8 style networks for small images and a
//! ResNet-50 for larger ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Forward, Init, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierArch {
    /// Three stages of one post-activation basic block, widths `w, 2w, 4w`.
    Tiny { width: usize },
    /// Pre-activation wide residual network of the given depth and widening.
    WideResnet { depth: usize, widen: usize },
    /// Bottleneck ResNet-50 with a 7x7 stride-2 stem and max pooling.
    Resnet50,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub arch: ClassifierArch,
    pub channels: usize,
    pub num_classes: usize,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.num_classes < 2 {
            return Err(Error::Invalid("classifier needs >= 1 channel and >= 2 classes".into()));
        }
        match self.arch {
            ClassifierArch::Tiny { width } if width == 0 => {
                Err(Error::Invalid("tiny classifier width must be positive".into()))
            }
            ClassifierArch::WideResnet { depth, widen } if depth < 10 || (depth - 4) % 6 != 0 || widen == 0 => {
                Err(Error::Invalid(format!(
                    "wide resnet depth must be 6n + 4 with n >= 1 and widen >= 1, got {depth}-{widen}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
enum Block {
    Basic {
        c1: Conv2d,
        bn1: BatchNorm2d,
        c2: Conv2d,
        bn2: BatchNorm2d,
        shortcut: Option<(Conv2d, BatchNorm2d)>,
    },
    PreAct {
        bn1: BatchNorm2d,
        c1: Conv2d,
        bn2: BatchNorm2d,
        c2: Conv2d,
        shortcut: Option<Conv2d>,
    },
    Bottleneck {
        c1: Conv2d,
        bn1: BatchNorm2d,
        c2: Conv2d,
        bn2: BatchNorm2d,
        c3: Conv2d,
        bn3: BatchNorm2d,
        shortcut: Option<(Conv2d, BatchNorm2d)>,
    },
}

#[derive(Clone, Debug)]
pub struct Classifier<T: Scalar> {
    pub config: ClassifierConfig,
    pub params: ParamStore<T>,
    stem: Conv2d,
    stem_bn: Option<BatchNorm2d>,
    stem_pool: bool,
    blocks: Vec<Block>,
    final_bn: Option<BatchNorm2d>,
    fc: Linear,
}

struct Builder<'a, T: Scalar> {
    p: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv2d {
        Conv2d::new(self.p, name, cin, cout, k, stride, k / 2, false, Init::KaimingNormal, &mut self.rng)
    }

    fn bn(&mut self, name: &str, c: usize) -> BatchNorm2d {
        BatchNorm2d::new(self.p, name, c)
    }
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let mut b = Builder {
            p: &mut p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut blocks = Vec::new();
        let (stem, stem_bn, stem_pool, final_bn, feat) = match config.arch {
            ClassifierArch::Tiny { width } => {
                let stem = b.conv("stem", config.channels, width, 3, 1);
                let stem_bn = b.bn("stem_bn", width);
                let mut cin = width;
                for (i, (mult, stride)) in [(1, 1), (2, 2), (4, 2)].into_iter().enumerate() {
                    blocks.push(basic_block(&mut b, &format!("stage{i}.0"), cin, width * mult, stride));
                    cin = width * mult;
                }
                (stem, Some(stem_bn), false, None, cin)
            }
            ClassifierArch::WideResnet { depth, widen } => {
                let n = (depth - 4) / 6;
                let stem = b.conv("stem", config.channels, 16, 3, 1);
                let mut cin = 16;
                for (s, (w, stride)) in [(16 * widen, 1), (32 * widen, 2), (64 * widen, 2)].into_iter().enumerate() {
                    for i in 0..n {
                        let name = format!("stage{s}.{i}");
                        let st = if i == 0 { stride } else { 1 };
                        let bn1 = b.bn(&format!("{name}.bn1"), cin);
                        let c1 = b.conv(&format!("{name}.conv1"), cin, w, 3, st);
                        let bn2 = b.bn(&format!("{name}.bn2"), w);
                        let c2 = b.conv(&format!("{name}.conv2"), w, w, 3, 1);
                        let shortcut = (cin != w || st != 1).then(|| b.conv(&format!("{name}.shortcut"), cin, w, 1, st));
                        blocks.push(Block::PreAct { bn1, c1, bn2, c2, shortcut });
                        cin = w;
                    }
                }
                let final_bn = b.bn("final_bn", cin);
                (stem, None, false, Some(final_bn), cin)
            }
            ClassifierArch::Resnet50 => {
                let stem = b.conv("stem", config.channels, 64, 7, 2);
                let stem_bn = b.bn("stem_bn", 64);
                let mut cin = 64;
                for (s, (w, count, stride)) in [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)].into_iter().enumerate() {
                    for i in 0..count {
                        let name = format!("stage{s}.{i}");
                        let st = if i == 0 { stride } else { 1 };
                        let out = 4 * w;
                        let c1 = b.conv(&format!("{name}.conv1"), cin, w, 1, 1);
                        let bn1 = b.bn(&format!("{name}.bn1"), w);
                        let c2 = b.conv(&format!("{name}.conv2"), w, w, 3, st);
                        let bn2 = b.bn(&format!("{name}.bn2"), w);
                        let c3 = b.conv(&format!("{name}.conv3"), w, out, 1, 1);
                        let bn3 = b.bn(&format!("{name}.bn3"), out);
                        let shortcut = (cin != out || st != 1).then(|| {
                            (
                                b.conv(&format!("{name}.shortcut"), cin, out, 1, st),
                                b.bn(&format!("{name}.shortcut_bn"), out),
                            )
                        });
                        blocks.push(Block::Bottleneck { c1, bn1, c2, bn2, c3, bn3, shortcut });
                        cin = out;
                    }
                }
                (stem, Some(stem_bn), true, None, cin)
            }
        };
        let fc = Linear::new(b.p, "fc", feat, config.num_classes, &mut b.rng);
        Ok(Classifier {
            config,
            params: p,
            stem,
            stem_bn,
            stem_pool,
            blocks,
            final_bn,
            fc,
        })
    }

    /// Class logits `[N, K]` for model-range inputs `[N, C, H, W]`.
    pub fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = f.g.value(x).dims4();
        if c != self.config.channels {
            return Err(Error::Shape(format!(
                "classifier expects {} channels, got {c}",
                self.config.channels
            )));
        }
        let mut y = self.stem.forward(f, x)?;
        if let Some(bn) = &self.stem_bn {
            y = bn.forward(f, y)?;
            y = f.g.relu(y);
        }
        if self.stem_pool {
            y = f.g.max_pool2d(y, 3, 2, 1)?;
        }
        for blk in &self.blocks {
            y = block_forward(f, blk, y)?;
        }
        if let Some(bn) = &self.final_bn {
            y = bn.forward(f, y)?;
            y = f.g.relu(y);
        }
        let pooled = f.g.global_avg_pool(y);
        self.fc.forward(f, pooled)
    }

    /// Eval-mode logits for a batch of model-range images.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut f = Forward::new(&mut g, &p, false);
        let out = self.forward(&mut f, xv)?;
        Ok(g.value(out).clone())
    }
}

fn basic_block<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, stride: usize) -> Block {
    let c1 = b.conv(&format!("{name}.conv1"), cin, cout, 3, stride);
    let bn1 = b.bn(&format!("{name}.bn1"), cout);
    let c2 = b.conv(&format!("{name}.conv2"), cout, cout, 3, 1);
    let bn2 = b.bn(&format!("{name}.bn2"), cout);
    let shortcut = (cin != cout || stride != 1).then(|| {
        (
            b.conv(&format!("{name}.shortcut"), cin, cout, 1, stride),
            b.bn(&format!("{name}.shortcut_bn"), cout),
        )
    });
    Block::Basic { c1, bn1, c2, bn2, shortcut }
}

fn block_forward<T: Scalar>(f: &mut Forward<'_, T>, blk: &Block, x: Var) -> Result<Var> {
    match blk {
        Block::Basic { c1, bn1, c2, bn2, shortcut } => {
            let y = c1.forward(f, x)?;
            let y = bn1.forward(f, y)?;
            let y = f.g.relu(y);
            let y = c2.forward(f, y)?;
            let y = bn2.forward(f, y)?;
            let sc = match shortcut {
                Some((conv, bn)) => {
                    let s = conv.forward(f, x)?;
                    bn.forward(f, s)?
                }
                None => x,
            };
            let y = f.g.add(y, sc)?;
            Ok(f.g.relu(y))
        }
        Block::PreAct { bn1, c1, bn2, c2, shortcut } => {
            let o = bn1.forward(f, x)?;
            let o = f.g.relu(o);
            let y = c1.forward(f, o)?;
            let y = bn2.forward(f, y)?;
            let y = f.g.relu(y);
            let y = c2.forward(f, y)?;
            let sc = match shortcut {
                Some(conv) => conv.forward(f, o)?,
                None => x,
            };
            f.g.add(y, sc)
        }
        Block::Bottleneck { c1, bn1, c2, bn2, c3, bn3, shortcut } => {
            let y = c1.forward(f, x)?;
            let y = bn1.forward(f, y)?;
            let y = f.g.relu(y);
            let y = c2.forward(f, y)?;
            let y = bn2.forward(f, y)?;
            let y = f.g.relu(y);
            let y = c3.forward(f, y)?;
            let y = bn3.forward(f, y)?;
            let sc = match shortcut {
                Some((conv, bn)) => {
                    let s = conv.forward(f, x)?;
                    bn.forward(f, s)?
                }
                None => x,
            };
            let y = f.g.add(y, sc)?;
            Ok(f.g.relu(y))
        }
    }
}
