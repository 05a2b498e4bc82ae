//! Noise and resolution schedules of the pyramid process.

use std::fmt;
use std::str::FromStr;

use crate::config::{join_list, parse_list, KvConfig};
use crate::error::{Error, Result};

/// Per-step retention factors `alpha_t` and their running products.
///
/// Indexing is 1-based in `t`; `alpha_bar(0)` is the empty product 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// How to produce the per-step `alpha_t`.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    /// `alpha_bar` linearly spaced from `start` at t=1 to `end` at t=T.
    LinearAlphaBar { start: f64, end: f64 },
    /// Explicit `alpha_1..alpha_T`.
    Alphas(Vec<f64>),
}

impl NoiseSchedule {
    pub fn new(steps: usize, spec: &NoiseSpec) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("at least one step is required".into()));
        }
        let alphas = match spec {
            NoiseSpec::Alphas(a) => {
                if a.len() != steps {
                    return Err(Error::Schedule(format!("{} alphas given for {steps} steps", a.len())));
                }
                a.clone()
            }
            NoiseSpec::LinearAlphaBar { start, end } => {
                if !(*start > 0.0 && *start < 1.0 && *end > 0.0 && *end <= *start) {
                    return Err(Error::Schedule(format!(
                        "alpha_bar range must satisfy 0 < end <= start < 1, got {start}..{end}"
                    )));
                }
                let bars: Vec<f64> = (0..steps)
                    .map(|i| {
                        if steps == 1 {
                            *start
                        } else {
                            start + (end - start) * i as f64 / (steps - 1) as f64
                        }
                    })
                    .collect();
                let mut prev = 1.0;
                bars.iter()
                    .map(|&b| {
                        let a = b / prev;
                        prev = b;
                        a
                    })
                    .collect()
            }
        };
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Schedule(format!("alpha_{} = {a} is not in (0, 1)", i + 1)));
            }
        }
        for (i, w) in alphas.windows(2).enumerate() {
            if w[1] > w[0] * (1.0 + 1e-12) {
                return Err(Error::Schedule(format!(
                    "alphas must be nonincreasing: alpha_{} = {} < alpha_{} = {}",
                    i + 1,
                    w[0],
                    i + 2,
                    w[1]
                )));
            }
        }
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// One resolution change: at step `t` the latent shrinks by `ratio`
/// relative to step `t - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingStep {
    pub t: usize,
    pub ratio: f64,
}

impl FromStr for ScalingStep {
    type Err = String;

    /// `"4"` (ratio 2) or `"4x3"`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (t, ratio) = match s.split_once('x') {
            Some((t, r)) => (t, r.trim().parse::<f64>().map_err(|e| e.to_string())?),
            None => (s, 2.0),
        };
        let t = t.trim().parse::<usize>().map_err(|e| e.to_string())?;
        Ok(Self { t, ratio })
    }
}

impl fmt::Display for ScalingStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ratio == 2.0 {
            write!(f, "{}", self.t)
        } else {
            write!(f, "{}x{}", self.t, self.ratio)
        }
    }
}

/// Integer downscale factors `U_0 = 1 <= U_1 <= ... <= U_T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalingSchedule {
    factors: Vec<usize>,
}

impl ScalingSchedule {
    /// Validates explicit factors `U_0..U_T`.
    pub fn from_factors(factors: &[f64]) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::Schedule("scaling schedule needs U_0..U_T with T >= 1".into()));
        }
        if factors[0] != 1.0 {
            return Err(Error::Schedule(format!("U_0 must be 1, got {}", factors[0])));
        }
        let mut out = vec![1usize];
        for (t, w) in factors.windows(2).enumerate() {
            let ratio = w[1] / w[0];
            if !(ratio >= 1.0 && ratio.fract() == 0.0 && ratio.is_finite()) {
                return Err(Error::Schedule(format!(
                    "U_{}/U_{} = {ratio} is not a positive integer",
                    t + 1,
                    t
                )));
            }
            out.push(out[t] * ratio as usize);
        }
        Ok(Self { factors: out })
    }

    /// Builds `U` for `steps` steps from a list of resolution changes.
    pub fn from_steps(steps: usize, changes: &[ScalingStep]) -> Result<Self> {
        let mut ratios = vec![1.0; steps + 1];
        for c in changes {
            if c.t == 0 || c.t > steps {
                return Err(Error::Schedule(format!("scaling step t={} outside [1, {steps}]", c.t)));
            }
            if ratios[c.t] != 1.0 {
                return Err(Error::Schedule(format!("scaling step t={} given twice", c.t)));
            }
            ratios[c.t] = c.ratio;
        }
        let mut factors = vec![1.0];
        for t in 1..=steps {
            factors.push(factors[t - 1] * ratios[t]);
        }
        Self::from_factors(&factors)
    }

    pub fn factor(&self, t: usize) -> usize {
        self.factors[t]
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    /// `U_t / U_{t-1}` for `t >= 1`.
    pub fn ratio(&self, t: usize) -> usize {
        self.factors[t] / self.factors[t - 1]
    }

    pub fn coarsest(&self) -> usize {
        *self.factors.last().expect("nonempty")
    }

    pub fn steps(&self) -> usize {
        self.factors.len() - 1
    }
}

/// The paired schedules driving forward corruption and reverse sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedules {
    pub noise: NoiseSchedule,
    pub scaling: ScalingSchedule,
}

impl Schedules {
    pub fn steps(&self) -> usize {
        self.noise.steps()
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(())
    }
}

pub fn build_schedules(steps: usize, noise: &NoiseSpec, scaling: &[ScalingStep]) -> Result<Schedules> {
    Ok(Schedules {
        noise: NoiseSchedule::new(steps, noise)?,
        scaling: ScalingSchedule::from_steps(steps, scaling)?,
    })
}

/// Serializable schedule description (`steps`, `alpha_bar_start`,
/// `alpha_bar_end`, `scaling_steps`).
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub alpha_bar_start: f64,
    pub alpha_bar_end: f64,
    pub scaling_steps: Vec<ScalingStep>,
}

impl Default for ScheduleConfig {
    /// Eight steps, one resolution halving at t=4: `U = [1,1,1,1,2,2,2,2,2]`.
    fn default() -> Self {
        Self {
            steps: 8,
            alpha_bar_start: 0.9999,
            alpha_bar_end: 0.02,
            scaling_steps: vec![ScalingStep { t: 4, ratio: 2.0 }],
        }
    }
}

impl ScheduleConfig {
    pub const KEYS: [&'static str; 4] = ["steps", "alpha_bar_start", "alpha_bar_end", "scaling_steps"];

    pub fn build(&self) -> Result<Schedules> {
        build_schedules(
            self.steps,
            &NoiseSpec::LinearAlphaBar {
                start: self.alpha_bar_start,
                end: self.alpha_bar_end,
            },
            &self.scaling_steps,
        )
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let scaling_steps = match kv.get_str("scaling_steps") {
            None => d.scaling_steps,
            Some(v) => parse_list("scaling_steps", if v.eq_ignore_ascii_case("none") { "" } else { v })?,
        };
        Ok(Self {
            steps: kv.get_or("steps", d.steps)?,
            alpha_bar_start: kv.get_or("alpha_bar_start", d.alpha_bar_start)?,
            alpha_bar_end: kv.get_or("alpha_bar_end", d.alpha_bar_end)?,
            scaling_steps,
        })
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("steps", self.steps);
        kv.set("alpha_bar_start", self.alpha_bar_start);
        kv.set("alpha_bar_end", self.alpha_bar_end);
        kv.set(
            "scaling_steps",
            if self.scaling_steps.is_empty() {
                "none".to_string()
            } else {
                join_list(&self.scaling_steps)
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alphas(a: &[f64]) -> Result<NoiseSchedule> {
        NoiseSchedule::new(a.len(), &NoiseSpec::Alphas(a.to_vec()))
    }

    #[test]
    fn single_step_product() {
        let s = alphas(&[0.9]).unwrap();
        assert_eq!(s.alpha_bars(), &[0.9]);
        assert!(alphas(&[1.0]).is_err());
        assert!(alphas(&[0.0]).is_err());
    }

    #[test]
    fn two_step_product() {
        let s = alphas(&[0.9, 0.8]).unwrap();
        assert_eq!(s.alpha_bar(1), 0.9);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn rejects_increasing_alphas() {
        assert!(alphas(&[0.8, 0.9]).is_err());
        assert!(alphas(&[0.9, 0.9, 0.5]).is_ok());
    }

    #[test]
    fn default_schedule_shape() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.scaling.factors(), &[1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert!((s.noise.alpha_bar(1) - 0.9999).abs() < 1e-12);
        assert!((s.noise.alpha_bar(8) - 0.02).abs() < 1e-12);
        let bars = s.noise.alpha_bars();
        assert!(bars.windows(2).all(|w| w[1] < w[0]));
        let mut prod = 1.0;
        for t in 1..=8 {
            prod *= s.noise.alpha(t);
            assert!((prod - s.noise.alpha_bar(t)).abs() <= 1e-12 * prod);
        }
    }

    #[test]
    fn scaling_rejects_fractional_ratios() {
        assert!(ScalingSchedule::from_factors(&[1.0, 1.5]).is_err());
        assert!(ScalingSchedule::from_factors(&[1.0, 2.0, 1.0]).is_err());
        assert!(ScalingSchedule::from_factors(&[2.0, 2.0]).is_err());
        let s = ScalingSchedule::from_factors(&[1.0, 1.0, 2.0, 6.0]).unwrap();
        assert_eq!(s.ratio(3), 3);
        assert!(ScalingSchedule::from_steps(3, &[ScalingStep { t: 2, ratio: 2.5 }]).is_err());
        assert!(ScalingSchedule::from_steps(3, &[ScalingStep { t: 4, ratio: 2.0 }]).is_err());
    }

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = ScheduleConfig {
            steps: 5,
            alpha_bar_start: 0.99,
            alpha_bar_end: 0.1,
            scaling_steps: vec![ScalingStep { t: 2, ratio: 2.0 }, ScalingStep { t: 4, ratio: 3.0 }],
        };
        let mut kv = KvConfig::new();
        cfg.write_kv(&mut kv);
        assert_eq!(ScheduleConfig::from_kv(&kv).unwrap(), cfg);
        let none = ScheduleConfig {
            scaling_steps: vec![],
            ..cfg
        };
        let mut kv = KvConfig::new();
        none.write_kv(&mut kv);
        assert_eq!(ScheduleConfig::from_kv(&kv).unwrap(), none);
    }
}
