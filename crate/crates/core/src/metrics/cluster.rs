use std::fmt::Write as _;

use lumafix_autograd::Tape;

use crate::data::{Label, PairedSample};
use crate::diffusion::{resize_down, Schedules};
use crate::dit::RestorationNet;
use crate::error::{Error, Result};
use crate::nn::{Binder, ParamStore};

use super::davies_bouldin;

pub const CLUSTER_HEADER: &str = "block,level,channels,samples,dbi";

/// Spatially pooled outputs of one decoder prompt module.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFeatures {
    /// 1-based in decoding order (1 = deepest).
    pub block: usize,
    pub level: usize,
    pub channels: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

/// Runs each corrupted input through the network at `t = 1` with the
/// noise-free state `x_1 = sqrt(alpha_bar_1) cond_1` and records the
/// spatial mean of every prompt module's output.
pub fn extract_prompt_features(
    net: &RestorationNet,
    store: &ParamStore,
    schedules: &Schedules,
    samples: &[PairedSample],
) -> Result<Vec<BlockFeatures>> {
    let mut blocks: Vec<BlockFeatures> = net
        .decoder
        .iter()
        .enumerate()
        .map(|(i, stage)| BlockFeatures {
            block: i + 1,
            level: stage.level,
            channels: net.config.width(stage.level),
            features: Vec::with_capacity(samples.len()),
            labels: Vec::with_capacity(samples.len()),
        })
        .collect();
    let u = schedules.scaling.factor(1);
    let keep = schedules.noise.alpha_bar(1).sqrt();
    for s in samples {
        let cond = resize_down(&s.input, u)?;
        let x1 = cond.scale(keep);
        let tape = Tape::inference();
        let b = Binder::new(&tape, store);
        let out = net.forward(&b, tape.constant(x1), tape.constant(cond), 1)?;
        for (blk, p) in blocks.iter_mut().zip(&out.prompts) {
            let pooled = p.spatial_mean()?.value().data().to_vec();
            if pooled.len() != blk.channels {
                return Err(Error::Model(format!(
                    "prompt block {} pooled to {} values, expected {}",
                    blk.block,
                    pooled.len(),
                    blk.channels
                )));
            }
            blk.features.push(pooled);
            blk.labels.push(s.label);
        }
    }
    Ok(blocks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRow {
    pub block: usize,
    pub level: usize,
    pub channels: usize,
    pub samples: usize,
    pub dbi: f64,
}

pub fn cluster_report(blocks: &[BlockFeatures]) -> Result<Vec<ClusterRow>> {
    blocks
        .iter()
        .map(|b| {
            Ok(ClusterRow {
                block: b.block,
                level: b.level,
                channels: b.channels,
                samples: b.features.len(),
                dbi: davies_bouldin(&b.features, &b.labels)?,
            })
        })
        .collect()
}

pub fn cluster_csv(rows: &[ClusterRow]) -> String {
    let mut s = format!("{CLUSTER_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{:.6}", r.block, r.level, r.channels, r.samples, r.dbi).expect("string write");
    }
    s
}
