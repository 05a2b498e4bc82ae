use std::fmt;
use std::str::FromStr;

use crate::config::{join_list, KvConfig};
use crate::error::{Error, Result};

/// Residual block used at every encoder, bottleneck and decoder position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Pre-norm attention + FFN with time injection.
    Transformer,
    /// Two 3x3 convolutions with time injection (plain U-Net ablation).
    Conv,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Transformer => "transformer",
            BlockKind::Conv => "conv",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(BlockKind::Transformer),
            "conv" => Ok(BlockKind::Conv),
            _ => Err(Error::config("block_kind", format!("`{s}` is not transformer|conv"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub heads: Vec<usize>,
    pub enc_blocks: usize,
    pub bottleneck_blocks: usize,
    pub dec_blocks: usize,
    pub prompt_n: usize,
    pub prompt_size: usize,
    pub time_embed_dim: usize,
    pub image_channels: usize,
    pub ffn_mult: usize,
    pub use_api: bool,
    pub use_gps: bool,
    pub block_kind: BlockKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 16,
            channel_mults: vec![1, 2, 2, 4],
            heads: vec![1, 2, 2, 4],
            enc_blocks: 1,
            bottleneck_blocks: 2,
            dec_blocks: 1,
            prompt_n: 5,
            prompt_size: 8,
            time_embed_dim: 32,
            image_channels: 3,
            ffn_mult: 2,
            use_api: true,
            use_gps: true,
            block_kind: BlockKind::Transformer,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 15] = [
        "levels",
        "base_channels",
        "channel_mults",
        "heads",
        "enc_blocks",
        "bottleneck_blocks",
        "dec_blocks",
        "prompt_n",
        "prompt_size",
        "time_embed_dim",
        "image_channels",
        "ffn_mult",
        "use_api",
        "use_gps",
        "block_kind",
    ];

    /// A two-level, four-channel network for fast checks.
    pub fn tiny() -> Self {
        Self {
            levels: 2,
            base_channels: 4,
            channel_mults: vec![1, 2],
            heads: vec![1, 2],
            enc_blocks: 1,
            bottleneck_blocks: 1,
            dec_blocks: 1,
            prompt_n: 3,
            prompt_size: 4,
            time_embed_dim: 8,
            ..Self::default()
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.levels < 2 {
            return bad("levels", format!("{} < 2", self.levels));
        }
        if self.channel_mults.len() != self.levels {
            return bad(
                "channel_mults",
                format!("{} entries for {} levels", self.channel_mults.len(), self.levels),
            );
        }
        if self.heads.len() != self.levels {
            return bad(
                "heads",
                format!("{} entries for {} levels", self.heads.len(), self.levels),
            );
        }
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("prompt_n", self.prompt_n),
            ("prompt_size", self.prompt_size),
            ("image_channels", self.image_channels),
            ("ffn_mult", self.ffn_mult),
        ] {
            if v == 0 {
                return bad(name, "must be positive".into());
            }
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad(
                "time_embed_dim",
                format!("{} is not a positive even number", self.time_embed_dim),
            );
        }
        for l in 0..self.levels {
            if self.channel_mults[l] == 0 {
                return bad("channel_mults", "multipliers must be positive".into());
            }
            let (w, h) = (self.width(l), self.heads[l]);
            if h == 0 || w % h != 0 {
                return bad("heads", format!("level {l}: width {w} not divisible by {h} heads"));
            }
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            levels: kv.get_or("levels", d.levels)?,
            base_channels: kv.get_or("base_channels", d.base_channels)?,
            channel_mults: kv.get_list_or("channel_mults", d.channel_mults)?,
            heads: kv.get_list_or("heads", d.heads)?,
            enc_blocks: kv.get_or("enc_blocks", d.enc_blocks)?,
            bottleneck_blocks: kv.get_or("bottleneck_blocks", d.bottleneck_blocks)?,
            dec_blocks: kv.get_or("dec_blocks", d.dec_blocks)?,
            prompt_n: kv.get_or("prompt_n", d.prompt_n)?,
            prompt_size: kv.get_or("prompt_size", d.prompt_size)?,
            time_embed_dim: kv.get_or("time_embed_dim", d.time_embed_dim)?,
            image_channels: kv.get_or("image_channels", d.image_channels)?,
            ffn_mult: kv.get_or("ffn_mult", d.ffn_mult)?,
            use_api: kv.get_or("use_api", d.use_api)?,
            use_gps: kv.get_or("use_gps", d.use_gps)?,
            block_kind: match kv.get_str("block_kind") {
                Some(s) => s.parse()?,
                None => d.block_kind,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("levels", self.levels);
        kv.set("base_channels", self.base_channels);
        kv.set("channel_mults", join_list(&self.channel_mults));
        kv.set("heads", join_list(&self.heads));
        kv.set("enc_blocks", self.enc_blocks);
        kv.set("bottleneck_blocks", self.bottleneck_blocks);
        kv.set("dec_blocks", self.dec_blocks);
        kv.set("prompt_n", self.prompt_n);
        kv.set("prompt_size", self.prompt_size);
        kv.set("time_embed_dim", self.time_embed_dim);
        kv.set("image_channels", self.image_channels);
        kv.set("ffn_mult", self.ffn_mult);
        kv.set("use_api", self.use_api);
        kv.set("use_gps", self.use_gps);
        kv.set("block_kind", self.block_kind);
    }
}
