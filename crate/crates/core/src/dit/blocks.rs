use lumafix_autograd::{Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{from_tokens, to_tokens, Binder, Conv2d, LayerNorm, Linear, Module, ParamStore};

/// Sinusoidal features of `t`: `sin(t f_i)` then `cos(t f_i)` with
/// `f_i = 10000^(-i / (dim/2))`.
pub fn sinusoidal(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        v[i] = a.sin();
        v[half + i] = a.cos();
    }
    Tensor::from_vec(&[1, dim], v).expect("sized")
}

/// Sinusoidal features followed by `Linear -> GELU -> Linear`; output `(1, dim)`.
#[derive(Clone, Debug)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TimeEmbedding {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            dim,
            fc1: Linear::new(format!("{name}.fc1"), dim, dim),
            fc2: Linear::new(format!("{name}.fc2"), dim, dim),
        }
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, t: usize) -> Result<Var<'t>> {
        let s = b.constant(sinusoidal(t, self.dim));
        self.fc2.forward(b, self.fc1.forward(b, s)?.gelu())
    }
}

impl Module for TimeEmbedding {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.fc1.init(store, rng)?;
        self.fc2.init(store, rng)
    }
}

/// `X1 = X0 + Attn(LN(X0)) + W_t e_t`, `X2 = X1 + FFN(LN(X1))`, over the
/// `H*W` tokens of a `(C, H, W)` map.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub name: String,
    pub channels: usize,
    pub heads: usize,
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub attn_out: Linear,
    pub time: Linear,
    pub norm2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerBlock {
    pub fn new(name: impl Into<String>, channels: usize, heads: usize, time_dim: usize, ffn_mult: usize) -> Self {
        let name = name.into();
        let hidden = channels * ffn_mult;
        Self {
            norm1: LayerNorm::new(format!("{name}.norm1"), channels),
            qkv: Linear::new(format!("{name}.qkv"), channels, 3 * channels),
            attn_out: Linear::new(format!("{name}.attn_out"), channels, channels),
            time: Linear::new(format!("{name}.time"), time_dim, channels),
            norm2: LayerNorm::new(format!("{name}.norm2"), channels),
            ffn_in: Linear::new(format!("{name}.ffn_in"), channels, hidden),
            ffn_out: Linear::new(format!("{name}.ffn_out"), hidden, channels),
            name,
            channels,
            heads,
        }
    }

    /// Multi-head softmax attention over token rows `(L, C)`.
    pub fn attention<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let c = self.channels;
        let dh = c / self.heads;
        let qkv = self.qkv.forward(b, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads = (0..self.heads)
            .map(|h| {
                let q = qkv.slice(1, h * dh, dh)?;
                let k = qkv.slice(1, c + h * dh, dh)?;
                let v = qkv.slice(1, 2 * c + h * dh, dh)?;
                Var::attention(q, k, v, scale)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            Var::concat(&heads, 1)?
        };
        self.attn_out.forward(b, merged)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, temb: Var<'t>) -> Result<Var<'t>> {
        let (c, h, w) = x.value().dims3()?;
        if c != self.channels {
            return Err(Error::Invalid(format!(
                "{}: {c} channels, expected {}",
                self.name, self.channels
            )));
        }
        let x0 = to_tokens(x)?;
        let attn = self.attention(b, self.norm1.forward(b, x0)?)?;
        let t = self.time.forward(b, temb)?.reshape(&[c])?;
        let x1 = x0.add(attn)?.add_row(t)?;
        let hidden = self.ffn_in.forward(b, self.norm2.forward(b, x1)?)?.gelu();
        let x2 = x1.add(self.ffn_out.forward(b, hidden)?)?;
        from_tokens(x2, h, w)
    }
}

impl Module for TransformerBlock {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.norm1.init(store, rng)?;
        self.qkv.init(store, rng)?;
        self.attn_out.init(store, rng)?;
        self.time.init(store, rng)?;
        self.norm2.init(store, rng)?;
        self.ffn_in.init(store, rng)?;
        self.ffn_out.init(store, rng)
    }
}

/// `x + conv2(GELU(conv1(x) + W_t e_t))`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub name: String,
    pub channels: usize,
    pub conv1: Conv2d,
    pub time: Linear,
    pub conv2: Conv2d,
}

impl ConvBlock {
    pub fn new(name: impl Into<String>, channels: usize, time_dim: usize) -> Self {
        let name = name.into();
        Self {
            conv1: Conv2d::same(format!("{name}.conv1"), channels, channels, 3),
            time: Linear::new(format!("{name}.time"), time_dim, channels),
            conv2: Conv2d::same(format!("{name}.conv2"), channels, channels, 3),
            name,
            channels,
        }
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, temb: Var<'t>) -> Result<Var<'t>> {
        let t = self.time.forward(b, temb)?.reshape(&[self.channels])?;
        let h = self.conv1.forward(b, x)?.add_channel(t)?.gelu();
        Ok(x.add(self.conv2.forward(b, h)?)?)
    }
}

impl Module for ConvBlock {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.conv1.init(store, rng)?;
        self.time.init(store, rng)?;
        self.conv2.init(store, rng)
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Transformer(TransformerBlock),
    Conv(ConvBlock),
}

impl Block {
    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, temb: Var<'t>) -> Result<Var<'t>> {
        match self {
            Block::Transformer(blk) => blk.forward(b, x, temb),
            Block::Conv(blk) => blk.forward(b, x, temb),
        }
    }
}

impl Module for Block {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        match self {
            Block::Transformer(blk) => blk.init(store, rng),
            Block::Conv(blk) => blk.init(store, rng),
        }
    }
}
