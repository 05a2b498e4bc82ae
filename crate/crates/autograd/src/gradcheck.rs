//! Central finite-difference checks of tape gradients.

use crate::{Result, Tape, Tensor, Var};

/// Worst disagreement found for one input.
#[derive(Clone, Debug)]
pub struct InputCheck {
    pub index: usize,
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub inputs: Vec<InputCheck>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with a small floor so that two near-zero values agree.
pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floor(a, b, 1e-8)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Evenly spaced entry indices, at most `max_probes` of them.
pub fn probe_indices(len: usize, max_probes: usize) -> Vec<usize> {
    if len <= max_probes {
        return (0..len).collect();
    }
    let stride = len as f64 / max_probes as f64;
    (0..max_probes).map(|i| (i as f64 * stride) as usize).collect()
}

/// Compares gradients of the scalar `f(inputs)` against central differences
/// with step `h`, probing up to `max_probes` entries of each input.
pub fn check<F>(f: F, inputs: &[Tensor], h: f64, max_probes: usize) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        Ok(f(&tape, &vars)?.value().data()[0])
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let probes = probe_indices(inputs[i].len(), max_probes);
        let mut worst = InputCheck {
            index: i,
            probes: probes.len(),
            max_rel_err: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &e in &probes {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[e];
            let err = rel_err(a, numeric);
            if err > worst.max_rel_err {
                worst = InputCheck {
                    max_rel_err: err,
                    worst_entry: e,
                    analytic: a,
                    numeric,
                    ..worst
                };
            }
        }
        report.push(worst);
    }
    Ok(GradCheck { inputs: report })
}
