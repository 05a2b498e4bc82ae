//! U-shaped restoration network predicting the clean image from
//! `(x_t, cond, t)`.
//!
//! Layout for `levels = L` (widths `w_l = base * mult_l`):
//!
//! * `sfe`: 3x3 conv, `2 C_img -> w_0`;
//! * `enc{l}` for `l < L-1`: blocks at `w_l`, skip taken, stride-2 3x3 conv to `w_{l+1}`;
//! * `mid`: bottleneck blocks at `w_{L-1}`;
//! * `dec{l}` for `l = L-2 .. 0`: nearest x2 upsample + 3x3 conv to `w_l`,
//!   prompt module, concat with skip `l`, 1x1 fuse to `w_l`, blocks;
//! * `out`: 3x3 conv, `w_0 -> C_img`.

mod blocks;
mod config;

use std::rc::Rc;

use lumafix_autograd::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{sinusoidal, Block, ConvBlock, TimeEmbedding, TransformerBlock};
pub use config::{BlockKind, ModelConfig};

use crate::diffusion::Predictor;
use crate::error::{Error, Result};
use crate::nn::{Binder, Conv2d, Module, ParamStore};
use crate::prompt::{PromptConfig, PromptModule};

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub level: usize,
    pub blocks: Vec<Block>,
    pub down: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub level: usize,
    pub up: Conv2d,
    pub prompt: PromptModule,
    pub fuse: Conv2d,
    pub blocks: Vec<Block>,
}

/// Shapes recorded during one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LevelTrace {
    /// Encoder skip tensors, shallowest first.
    pub skips: Vec<Vec<usize>>,
    /// Decoder stage outputs in execution order (deepest first).
    pub decoder: Vec<Vec<usize>>,
}

pub struct NetOutput<'t> {
    pub y: Var<'t>,
    pub trace: LevelTrace,
    /// Output of each decoder prompt module in execution order; entry 0 is
    /// prompt block 1 (the deepest).
    pub prompts: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct RestorationNet {
    pub config: ModelConfig,
    pub time: TimeEmbedding,
    pub sfe: Conv2d,
    pub encoder: Vec<EncoderStage>,
    pub bottleneck: Vec<Block>,
    pub decoder: Vec<DecoderStage>,
    pub out: Conv2d,
}

impl RestorationNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let td = c.time_embed_dim;
        let block = |name: String, level: usize| match c.block_kind {
            BlockKind::Transformer => Block::Transformer(TransformerBlock::new(
                name,
                c.width(level),
                c.heads[level],
                td,
                c.ffn_mult,
            )),
            BlockKind::Conv => Block::Conv(ConvBlock::new(name, c.width(level), td)),
        };
        let encoder = (0..c.levels - 1)
            .map(|l| EncoderStage {
                level: l,
                blocks: (0..c.enc_blocks)
                    .map(|i| block(format!("enc{l}.block{i}"), l))
                    .collect(),
                down: Conv2d::strided(format!("enc{l}.down"), c.width(l), c.width(l + 1), 3, 2),
            })
            .collect();
        let deepest = c.levels - 1;
        let bottleneck = (0..c.bottleneck_blocks)
            .map(|i| block(format!("mid.block{i}"), deepest))
            .collect();
        let decoder = (0..c.levels - 1)
            .rev()
            .map(|l| {
                let w = c.width(l);
                DecoderStage {
                    level: l,
                    up: Conv2d::same(format!("dec{l}.up"), c.width(l + 1), w, 3),
                    prompt: PromptModule::new(
                        &format!("dec{l}.prompt"),
                        PromptConfig {
                            channels: w,
                            prompt_channels: w,
                            components: c.prompt_n,
                            prompt_size: c.prompt_size,
                            use_api: c.use_api,
                            use_gps: c.use_gps,
                        },
                    ),
                    fuse: Conv2d::same(format!("dec{l}.fuse"), 2 * w, w, 1),
                    blocks: (0..c.dec_blocks)
                        .map(|i| block(format!("dec{l}.block{i}"), l))
                        .collect(),
                }
            })
            .collect();
        Ok(Self {
            time: TimeEmbedding::new("time", td),
            sfe: Conv2d::same("sfe", 2 * c.image_channels, c.width(0), 3),
            out: Conv2d::same("out", c.width(0), c.image_channels, 3),
            encoder,
            bottleneck,
            decoder,
            config,
        })
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(store)
    }

    pub fn check_input(&self, x_t: &[usize], cond: &[usize]) -> Result<()> {
        let c = self.config.image_channels;
        let d = self.config.divisor();
        if x_t.len() != 3 || x_t[0] != c {
            return Err(Error::Model(format!("x_t shape {x_t:?}, expected ({c}, H, W)")));
        }
        if x_t != cond {
            return Err(Error::Model(format!("x_t shape {x_t:?} differs from cond {cond:?}")));
        }
        if x_t[1] % d != 0 || x_t[2] % d != 0 || x_t[1] == 0 || x_t[2] == 0 {
            return Err(Error::Model(format!(
                "spatial size {}x{} not a positive multiple of {d}",
                x_t[1], x_t[2]
            )));
        }
        Ok(())
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x_t: Var<'t>, cond: Var<'t>, t: usize) -> Result<NetOutput<'t>> {
        self.check_input(&x_t.shape(), &cond.shape())?;
        let temb = self.time.forward(b, t)?;
        let mut h = self.sfe.forward(b, Var::concat(&[x_t, cond], 0)?)?;
        let mut trace = LevelTrace::default();
        let mut skips = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            for blk in &stage.blocks {
                h = blk.forward(b, h, temb)?;
            }
            trace.skips.push(h.shape());
            skips.push(h);
            h = stage.down.forward(b, h)?;
        }
        for blk in &self.bottleneck {
            h = blk.forward(b, h, temb)?;
        }
        let mut prompts = Vec::with_capacity(self.decoder.len());
        for stage in &self.decoder {
            h = stage.up.forward(b, h.upsample_nearest(2)?)?;
            h = stage.prompt.forward(b, h)?;
            prompts.push(h);
            h = stage.fuse.forward(b, Var::concat(&[h, skips[stage.level]], 0)?)?;
            for blk in &stage.blocks {
                h = blk.forward(b, h, temb)?;
            }
            trace.decoder.push(h.shape());
        }
        Ok(NetOutput {
            y: self.out.forward(b, h)?,
            trace,
            prompts,
        })
    }

    /// Inference-only prediction.
    pub fn predict(&self, store: &ParamStore, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        let tape = Tape::inference();
        let b = Binder::new(&tape, store);
        let out = self.forward(&b, tape.constant(x_t.clone()), tape.constant(cond.clone()), t)?;
        let y = out.y.value();
        drop(out);
        Ok(Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone()))
    }

    /// Binds the network to a parameter set for the sampler.
    pub fn predictor<'a>(&'a self, store: &'a ParamStore) -> NetPredictor<'a> {
        NetPredictor { net: self, store }
    }
}

impl Module for RestorationNet {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.time.init(store, rng)?;
        self.sfe.init(store, rng)?;
        for stage in &self.encoder {
            for blk in &stage.blocks {
                blk.init(store, rng)?;
            }
            stage.down.init(store, rng)?;
        }
        for blk in &self.bottleneck {
            blk.init(store, rng)?;
        }
        for stage in &self.decoder {
            stage.up.init(store, rng)?;
            stage.prompt.init(store, rng)?;
            stage.fuse.init(store, rng)?;
            for blk in &stage.blocks {
                blk.init(store, rng)?;
            }
        }
        self.out.init(store, rng)
    }
}

pub struct NetPredictor<'a> {
    pub net: &'a RestorationNet,
    pub store: &'a ParamStore,
}

impl Predictor for NetPredictor<'_> {
    fn predict(&self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        self.net.predict(self.store, x_t, cond, t)
    }
}
