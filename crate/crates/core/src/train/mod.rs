//! L1 training of the restoration network under the pyramid forward process.

mod adam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lumafix_autograd::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;

use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::data::{create_dir, write_atomic, PairedSample};
use crate::diffusion::{forward_sample, gaussian_like, resize_down, ScheduleConfig, Schedules};
use crate::dit::{ModelConfig, RestorationNet};
use crate::error::{Error, Result};
use crate::nn::{Binder, ParamStore};

pub const LOSS_TRACE_HEADER: &str = "epoch,step,loss";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_TRACE_FILE: &str = "loss.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    /// Train on random `patch x patch` windows of each level's image.
    pub patch_size: Option<usize>,
    /// Rescale gradients whose global norm exceeds this.
    pub grad_clip: Option<f64>,
    /// Seeds parameter init, shuffling, timesteps, crops and noise.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-4,
            batch_size: 4,
            max_steps: None,
            patch_size: None,
            grad_clip: None,
            seed: 0,
        }
    }
}

fn optional<T: std::str::FromStr + PartialEq + Default>(kv: &KvConfig, key: &str, d: Option<T>) -> Result<Option<T>> {
    match kv.get_str(key) {
        None => Ok(d),
        Some("none") => Ok(None),
        Some(_) => {
            let v: T = kv.get_or(key, T::default())?;
            Ok((v != T::default()).then_some(v))
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 7] = [
        "epochs",
        "learning_rate",
        "batch_size",
        "max_steps",
        "patch_size",
        "grad_clip",
        "seed",
    ];

    /// Missing keys keep their defaults; `0` or `none` disables the optional ones.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.get_or("epochs", d.epochs)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_steps: optional(kv, "max_steps", d.max_steps)?,
            patch_size: optional(kv, "patch_size", d.patch_size)?,
            grad_clip: optional(kv, "grad_clip", d.grad_clip)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        Ok(())
    }

    /// Updates per epoch for `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Random choices for one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub t: usize,
    /// Full-resolution window `(y0, x0, h, w)`, aligned to the level factor.
    pub window: Option<(usize, usize, usize, usize)>,
    /// Noise at the level resolution of the (cropped) image.
    pub noise: Tensor,
}

pub fn draw<R: Rng + ?Sized>(gt: &Tensor, schedules: &Schedules, patch: Option<usize>, rng: &mut R) -> Result<Draw> {
    let (c, h, w) = gt.dims3()?;
    let t = rng.gen_range(1..=schedules.steps());
    let u = schedules.scaling.factor(t);
    let (lh, lw) = (h / u, w / u);
    let window = match patch {
        Some(p) if lh >= p && lw >= p && (lh > p || lw > p) => {
            let y0 = rng.gen_range(0..=lh - p) * u;
            let x0 = rng.gen_range(0..=lw - p) * u;
            Some((y0, x0, p * u, p * u))
        }
        _ => None,
    };
    let (nh, nw) = window.map_or((lh, lw), |(_, _, wh, ww)| (wh / u, ww / u));
    Ok(Draw {
        t,
        window,
        noise: gaussian_like(&[c, nh, nw], rng),
    })
}

pub fn crop(x: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = x.dims3()?;
    if y0 + h > ih || x0 + w > iw {
        return Err(Error::Invalid(format!("crop {h}x{w}+{y0}+{x0} outside {ih}x{iw}")));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in y0..y0 + h {
            let row = (ch * ih + y) * iw;
            out.extend_from_slice(&x.data()[row + x0..row + x0 + w]);
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], out)?)
}

/// `mean |y_theta(x_t, cond_t, t) - gt_t|` for one sample and its draw,
/// where `_t` denotes downscaling to level `U_t`.
pub fn sample_loss<'t>(
    net: &RestorationNet,
    b: &Binder<'t, '_>,
    sample: &PairedSample,
    d: &Draw,
    schedules: &Schedules,
) -> Result<Var<'t>> {
    let (gt, input) = match d.window {
        Some((y0, x0, h, w)) => (crop(&sample.gt, y0, x0, h, w)?, crop(&sample.input, y0, x0, h, w)?),
        None => (sample.gt.clone(), sample.input.clone()),
    };
    let u = schedules.scaling.factor(d.t);
    let x_t = forward_sample(&gt, d.t, schedules, &d.noise)?;
    let cond = resize_down(&input, u)?;
    let target = resize_down(&gt, u)?;
    let out = net.forward(b, b.constant(x_t), b.constant(cond), d.t)?;
    Ok(out.y.l1_loss(&target)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub epoch: usize,
    /// 1-based, counted across epochs.
    pub step: usize,
    pub loss: f64,
}

/// One optimizer update on `batch`; returns the mean per-sample loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    net: &RestorationNet,
    store: &mut ParamStore,
    opt: &mut Adam,
    batch: &[&PairedSample],
    schedules: &Schedules,
    cfg: &TrainConfig,
    rng: &mut R,
    at: (usize, usize),
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut total = store.zeros_like();
    let mut loss_sum = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        let d = draw(&sample.gt, schedules, cfg.patch_size, rng)?;
        let tape = Tape::new();
        let b = Binder::new(&tape, store);
        let loss = sample_loss(net, &b, sample, &d, schedules)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite {
                loss: value,
                epoch: at.0,
                step: at.1,
            });
        }
        loss_sum += value;
        let grads = b.collect(&tape.backward(loss)?);
        total.accumulate(&grads, scale)?;
    }
    let norm = total.global_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            loss: norm,
            epoch: at.0,
            step: at.1,
        });
    }
    if let Some(clip) = cfg.grad_clip {
        if norm > clip {
            total.scale(clip / norm);
        }
    }
    opt.update(store, &total)?;
    Ok(loss_sum * scale)
}

/// Runs `cfg.epochs` shuffled passes over `data` (or until `max_steps`),
/// updating `store` in place. `on_step` sees every record as it is produced.
pub fn train_loop(
    net: &RestorationNet,
    store: &mut ParamStore,
    data: &[PairedSample],
    schedules: &Schedules,
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    // parameter init uses the seed directly; the loop gets its own stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let batch: Vec<&PairedSample> = chunk.iter().map(|&i| &data[i]).collect();
            let loss = train_step(net, store, &mut opt, &batch, schedules, cfg, &mut rng, (epoch, step))?;
            let rec = StepRecord { epoch, step, loss };
            on_step(&rec);
            records.push(rec);
        }
    }
    Ok(records)
}

pub fn loss_trace_csv(records: &[StepRecord]) -> String {
    let mut s = format!("{LOSS_TRACE_HEADER}\n");
    for r in records {
        writeln!(s, "{},{},{}", r.epoch, r.step, r.loss).expect("string write");
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
    pub records: Vec<StepRecord>,
    pub params: ParamStore,
}

/// Initialises a network from `train.seed`, trains it, and writes
/// `model.ckpt` and `loss.csv` into `out_dir`.
pub fn run_training(
    data: &[PairedSample],
    model: &ModelConfig,
    schedule: &ScheduleConfig,
    train: &TrainConfig,
    out_dir: &Path,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let schedules = schedule.build()?;
    let net = RestorationNet::new(model.clone())?;
    let mut params = net.init_params(train.seed)?;
    create_dir(out_dir)?;
    let records = train_loop(&net, &mut params, data, &schedules, train, on_step)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    Checkpoint {
        model: model.clone(),
        schedule: schedule.clone(),
        params: params.clone(),
    }
    .save(&checkpoint)?;
    let loss_trace = out_dir.join(LOSS_TRACE_FILE);
    write_atomic(&loss_trace, loss_trace_csv(&records).as_bytes())?;
    Ok(TrainOutcome {
        checkpoint,
        loss_trace,
        records,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing_and_defaults() {
        let kv = KvConfig::parse(
            "epochs = 3\nmax_steps = 0\npatch_size = 32\ngrad_clip = none\n",
            Path::new("-"),
        )
        .unwrap();
        let c = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.max_steps, None);
        assert_eq!(c.patch_size, Some(32));
        assert_eq!(c.grad_clip, None);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 4);
        assert!(TrainConfig::from_kv(&KvConfig::parse("learning_rate = -1", Path::new("-")).unwrap()).is_err());
    }

    #[test]
    fn crop_extracts_window() {
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(crop(&x, 1, 1, 2, 2).unwrap().data(), &[4.0, 5.0, 7.0, 8.0]);
        assert!(crop(&x, 2, 2, 2, 2).is_err());
    }

    #[test]
    fn draw_windows_are_level_aligned() {
        let s = ScheduleConfig::default().build().unwrap();
        let gt = Tensor::zeros(&[3, 64, 64]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let d = draw(&gt, &s, Some(16), &mut rng).unwrap();
            let u = s.scaling.factor(d.t);
            let (y0, x0, h, w) = d.window.unwrap();
            assert_eq!((y0 % u, x0 % u, h, w), (0, 0, 16 * u, 16 * u));
            assert_eq!(d.noise.shape(), &[3, 16, 16]);
        }
        let d = draw(&gt, &s, Some(64), &mut rng).unwrap();
        assert!(d.window.is_none());
    }
}
