//! Finite-difference checks for module parameters and inputs.

use lumafix_autograd::gradcheck::{probe_indices, rel_err_floor};
use lumafix_autograd::{Tape, Tensor, Var};

use crate::error::Result;
use crate::nn::{Binder, ParamStore};

/// Worst relative error for one parameter tensor (or the input).
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor of the relative error. Central differences of an O(1)
/// loss carry roundoff near `eps / h` (about 1e-11 at `h = 1e-5`), so entries
/// whose gradient is below this floor are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Name used for the input entry of a [`check_module`] report.
pub const INPUT: &str = "<input>";

/// Compares backprop gradients of the scalar `f(params, input)` against
/// central differences, for the input and every parameter tensor in `store`.
pub fn check_module<F>(store: &ParamStore, input: &Tensor, f: F, h: f64, max_probes: usize) -> Result<Vec<GroupCheck>>
where
    F: for<'t> Fn(&Binder<'t, '_>, Var<'t>) -> Result<Var<'t>>,
{
    let eval = |s: &ParamStore, x: &Tensor| -> Result<f64> {
        let tape = Tape::inference();
        let b = Binder::new(&tape, s);
        let v = tape.leaf(x.clone());
        Ok(f(&b, v)?.value().data()[0])
    };

    let tape = Tape::new();
    let binder = Binder::new(&tape, store);
    let x = tape.leaf(input.clone());
    let loss = f(&binder, x)?;
    let grads = tape.backward(loss)?;
    let input_grad = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    let param_grads = binder.collect(&grads);

    let mut report = Vec::new();
    let mut xs = input.clone();
    report.push(probe(INPUT, &input_grad, max_probes, h, |e, d| {
        let orig = xs.data()[e];
        xs.data_mut()[e] = orig + d;
        let v = eval(store, &xs);
        xs.data_mut()[e] = orig;
        v
    })?);

    let mut work = store.clone();
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for (name, grad) in names.iter().zip(&param_grads.grads) {
        report.push(probe(name, grad, max_probes, h, |e, d| {
            let t = work.get_mut(name).expect("cloned store");
            let orig = t.data()[e];
            t.data_mut()[e] = orig + d;
            let v = eval(&work, input);
            work.get_mut(name).expect("cloned store").data_mut()[e] = orig;
            v
        })?);
    }
    Ok(report)
}

fn probe(
    name: &str,
    analytic: &Tensor,
    max_probes: usize,
    h: f64,
    mut eval_shifted: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GroupCheck> {
    let mut worst = GroupCheck {
        name: name.to_string(),
        max_rel_err: 0.0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for e in probe_indices(analytic.len(), max_probes) {
        let numeric = (eval_shifted(e, h)? - eval_shifted(e, -h)?) / (2.0 * h);
        let a = analytic.data()[e];
        let err = rel_err_floor(a, numeric, GRAD_FLOOR);
        if err > worst.max_rel_err {
            worst = GroupCheck {
                max_rel_err: err,
                analytic: a,
                numeric,
                ..worst
            };
        }
    }
    Ok(worst)
}

/// Largest error across a report.
pub fn worst(report: &[GroupCheck]) -> Option<&GroupCheck> {
    report.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
}
