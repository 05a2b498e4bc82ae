//! Pyramid diffusion: schedules, forward corruption, reverse posterior and
//! the coarse-to-fine sampling loop.
//!
//! The forward marginal jumps straight from `x_0` to step `t`:
//! `x_t = sqrt(abar_t) * down(x_0, U_t) + sqrt(1 - abar_t) * eps`.
//! Reverse steps either stay at the current resolution (the usual DDPM
//! posterior with `y_pred` in place of `x_0`) or, where the schedule changes
//! resolution, upsample the prediction and re-noise it at level `t - 1`.

mod schedule;

use lumafix_autograd::{kernels, Tensor};
use rand::Rng;

pub use schedule::{
    build_schedules, NoiseSchedule, NoiseSpec, ScalingSchedule, ScalingStep, ScheduleConfig, Schedules,
};

use crate::error::{Error, Result};

/// Block-mean downsampling; `factor == 1` is the identity.
pub fn resize_down(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Invalid("resize factor must be >= 1".into()));
    }
    Ok(kernels::avg_pool(x, factor)?)
}

/// Bilinear upsampling by an integer factor; `factor == 1` is the identity.
pub fn resize_up(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Invalid("resize factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (_, h, w) = x.dims3()?;
    Ok(kernels::resize_bilinear(x, h * factor, w * factor)?)
}

pub fn gaussian_like<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape, rng)
}

/// `x_t` for a given standard-normal `noise` at the resolution of level `U_t`.
pub fn forward_sample(x0: &Tensor, t: usize, schedules: &Schedules, noise: &Tensor) -> Result<Tensor> {
    schedules.check_t(t)?;
    let base = resize_down(x0, schedules.scaling.factor(t))?;
    if noise.shape() != base.shape() {
        return Err(Error::Invalid(format!(
            "noise shape {:?} does not match level-{t} shape {:?}",
            noise.shape(),
            base.shape()
        )));
    }
    let ab = schedules.noise.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(base.zip_map(noise, "forward_sample", |x, e| sa * x + sn * e)?)
}

pub fn forward_sample_rng<R: Rng + ?Sized>(
    x0: &Tensor,
    t: usize,
    schedules: &Schedules,
    rng: &mut R,
) -> Result<Tensor> {
    schedules.check_t(t)?;
    let (c, h, w) = x0.dims3()?;
    let f = schedules.scaling.factor(t);
    if h % f != 0 || w % f != 0 {
        return Err(Error::Invalid(format!("{h}x{w} image not divisible by U_{t} = {f}")));
    }
    let noise = gaussian_like(&[c, h / f, w / f], rng);
    forward_sample(x0, t, schedules, &noise)
}

/// Mean and isotropic variance of `p(x_{t-1} | x_t)`.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub mean: Tensor,
    pub variance: f64,
}

/// The reverse-step Gaussian for step `t`, with `y_pred` the restored-image
/// estimate at the resolution of `x_t`.
pub fn posterior(x_t: &Tensor, t: usize, y_pred: &Tensor, schedules: &Schedules) -> Result<Posterior> {
    schedules.check_t(t)?;
    if x_t.shape() != y_pred.shape() {
        return Err(Error::Invalid(format!(
            "x_t {:?} and prediction {:?} differ in resolution",
            x_t.shape(),
            y_pred.shape()
        )));
    }
    let n = &schedules.noise;
    let (a, ab, ab_prev) = (n.alpha(t), n.alpha_bar(t), n.alpha_bar(t - 1));
    let ratio = schedules.scaling.ratio(t);
    if ratio == 1 {
        let cy = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab);
        let cx = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok(Posterior {
            mean: y_pred.zip_map(x_t, "posterior", |y, x| cy * y + cx * x)?,
            variance: (1.0 - ab_prev) * (1.0 - a) / (1.0 - ab),
        })
    } else {
        Ok(Posterior {
            mean: resize_up(y_pred, ratio)?.scale(ab_prev.sqrt()),
            variance: 1.0 - ab_prev,
        })
    }
}

/// One reverse step with explicit standard-normal `noise` (shape of the
/// output). At `t == 1` the noise is ignored and the mean returned.
pub fn reverse_step(x_t: &Tensor, t: usize, y_pred: &Tensor, schedules: &Schedules, noise: &Tensor) -> Result<Tensor> {
    let post = posterior(x_t, t, y_pred, schedules)?;
    if noise.shape() != post.mean.shape() {
        return Err(Error::Invalid(format!(
            "noise shape {:?} does not match step output {:?}",
            noise.shape(),
            post.mean.shape()
        )));
    }
    if t == 1 {
        return Ok(post.mean);
    }
    let sd = post.variance.sqrt();
    Ok(post.mean.zip_map(noise, "reverse_step", |m, e| m + sd * e)?)
}

pub fn reverse_step_rng<R: Rng + ?Sized>(
    x_t: &Tensor,
    t: usize,
    y_pred: &Tensor,
    schedules: &Schedules,
    rng: &mut R,
) -> Result<Tensor> {
    let post = posterior(x_t, t, y_pred, schedules)?;
    if t == 1 {
        return Ok(post.mean);
    }
    let noise = gaussian_like(post.mean.shape(), rng);
    let sd = post.variance.sqrt();
    Ok(post.mean.zip_map(&noise, "reverse_step", |m, e| m + sd * e)?)
}

/// Anything that maps `(x_t, cond at the same resolution, t)` to a
/// restored-image estimate at that resolution.
pub trait Predictor {
    fn predict(&self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor>;
}

impl<F> Predictor for F
where
    F: Fn(&Tensor, &Tensor, usize) -> Result<Tensor>,
{
    fn predict(&self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        self(x_t, cond, t)
    }
}

/// Result of [`sample_traced`]: the clamped image plus the shape of every
/// state visited, from `x_T` down to `x_0`.
#[derive(Clone, Debug)]
pub struct SampleTrace {
    pub image: Tensor,
    pub shapes: Vec<Vec<usize>>,
}

/// Runs the reverse chain from noise at the coarsest level to a full
/// resolution image, clamped to `[0, 1]` at the end only.
pub fn sample<P: Predictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    cond: &Tensor,
    schedules: &Schedules,
    rng: &mut R,
) -> Result<Tensor> {
    Ok(sample_traced(model, cond, schedules, rng)?.image)
}

pub fn sample_traced<P: Predictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    cond: &Tensor,
    schedules: &Schedules,
    rng: &mut R,
) -> Result<SampleTrace> {
    let (c, h, w) = cond.dims3()?;
    let coarsest = schedules.scaling.coarsest();
    if h % coarsest != 0 || w % coarsest != 0 {
        return Err(Error::Invalid(format!(
            "condition {h}x{w} not divisible by the coarsest scale factor {coarsest}"
        )));
    }
    let steps = schedules.steps();
    let mut x = gaussian_like(&[c, h / coarsest, w / coarsest], rng);
    let mut shapes = vec![x.shape().to_vec()];
    for t in (1..=steps).rev() {
        let cond_t = resize_down(cond, schedules.scaling.factor(t))?;
        let y = model.predict(&x, &cond_t, t)?;
        if y.shape() != x.shape() {
            return Err(Error::Invalid(format!(
                "predictor returned {:?} for state {:?} at t={t}",
                y.shape(),
                x.shape()
            )));
        }
        x = reverse_step_rng(&x, t, &y, schedules, rng)?;
        shapes.push(x.shape().to_vec());
    }
    Ok(SampleTrace {
        image: x.clamp(0.0, 1.0),
        shapes,
    })
}
