//! Batch restoration over in-memory images or PNG directories.

use std::path::{Path, PathBuf};

use lumafix_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::{create_dir, list_pngs, read_png, write_png, PairedSample};
use crate::diffusion::{sample, Schedules};
use crate::dit::RestorationNet;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::nn::ParamStore;

/// Sampling RNG for the `index`-th image of a run, so each image is
/// reproducible on its own regardless of batch composition.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn restore_images(
    net: &RestorationNet,
    store: &ParamStore,
    schedules: &Schedules,
    inputs: &[Tensor],
    seed: u64,
) -> Result<Vec<Tensor>> {
    let predictor = net.predictor(store);
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| sample(&predictor, x, schedules, &mut image_rng(seed, i)))
        .collect()
}

/// Metrics of `restored` against each sample's ground truth, plus the
/// baseline of the corrupted inputs against the same ground truth.
pub fn evaluate_restored(restored: &[Tensor], samples: &[PairedSample]) -> Result<(MetricReport, MetricReport)> {
    if restored.len() != samples.len() {
        return Err(Error::Invalid(format!(
            "{} restored images for {} samples",
            restored.len(),
            samples.len()
        )));
    }
    let mut ours = MetricReport::default();
    let mut base = MetricReport::default();
    for (r, s) in restored.iter().zip(samples) {
        ours.push(s.id.clone(), r, &s.gt)?;
        base.push(s.id.clone(), &s.input, &s.gt)?;
    }
    Ok((ours, base))
}

/// Restores every PNG in `input_dir` into `output_dir` under the same file
/// name, sampling with the checkpoint's model and schedule.
pub fn restore_dir(
    checkpoint: &Path,
    input_dir: &Path,
    output_dir: &Path,
    seed: u64,
    on_image: &mut dyn FnMut(&Path),
) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let net = ckpt.network(checkpoint)?;
    let schedules = ckpt.schedule.build()?;
    let files = list_pngs(input_dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!("{}: no PNG images", input_dir.display())));
    }
    create_dir(output_dir)?;
    let predictor = net.predictor(&ckpt.params);
    let mut written = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let cond = read_png(f)?;
        let img = sample(&predictor, &cond, &schedules, &mut image_rng(seed, i))?;
        let out = output_dir.join(f.file_name().expect("listed file"));
        write_png(&out, &img)?;
        on_image(&out);
        written.push(out);
    }
    Ok(written)
}
