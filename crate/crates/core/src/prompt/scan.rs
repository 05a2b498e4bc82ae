//! Four-direction cross-scan with an input-gated linear recurrence.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use lumafix_autograd::{kernels, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Binder, Linear, Module, ParamStore};

/// Corner-to-corner traversal orders of a feature map.
///
/// The discriminant is the serialization index used in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    /// Row-major from the top-left corner.
    TopLeftToBottomRight = 0,
    /// Exact reversal of [`ScanDirection::TopLeftToBottomRight`].
    BottomRightToTopLeft = 1,
    /// Down each column, columns taken right to left.
    TopRightToBottomLeft = 2,
    /// Exact reversal of [`ScanDirection::TopRightToBottomLeft`].
    BottomLeftToTopRight = 3,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::TopLeftToBottomRight,
        ScanDirection::BottomRightToTopLeft,
        ScanDirection::TopRightToBottomLeft,
        ScanDirection::BottomLeftToTopRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The traversal visiting the same positions backwards.
    pub fn reversed(self) -> Self {
        use ScanDirection::*;
        match self {
            TopLeftToBottomRight => BottomRightToTopLeft,
            BottomRightToTopLeft => TopLeftToBottomRight,
            TopRightToBottomLeft => BottomLeftToTopRight,
            BottomLeftToTopRight => TopRightToBottomLeft,
        }
    }

    pub fn as_str(self) -> &'static str {
        use ScanDirection::*;
        match self {
            TopLeftToBottomRight => "tl-br",
            BottomRightToTopLeft => "br-tl",
            TopRightToBottomLeft => "tr-bl",
            BottomLeftToTopRight => "bl-tr",
        }
    }

    /// Row-major positions `y * w + x` in visiting order.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        use ScanDirection::*;
        let row_major = || (0..h * w).collect::<Vec<_>>();
        let col_from_right = || {
            (0..w)
                .rev()
                .flat_map(|x| (0..h).map(move |y| y * w + x))
                .collect::<Vec<_>>()
        };
        match self {
            TopLeftToBottomRight => row_major(),
            BottomRightToTopLeft => row_major().into_iter().rev().collect(),
            TopRightToBottomLeft => col_from_right(),
            BottomLeftToTopRight => col_from_right().into_iter().rev().collect(),
        }
    }
}

impl fmt::Display for ScanDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScanDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown scan direction `{s}`")))
    }
}

/// `(C, H, W)` to a `(H*W, C)` sequence in the direction's visiting order.
pub fn directional_flatten(x: &Tensor, dir: ScanDirection) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let mut seq = vec![0.0; hw * c];
    for (k, p) in dir.order(h, w).into_iter().enumerate() {
        for ch in 0..c {
            seq[k * c + ch] = x.data()[ch * hw + p];
        }
    }
    Ok(Tensor::from_vec(&[hw, c], seq)?)
}

/// Inverse of [`directional_flatten`].
pub fn directional_unflatten(seq: &Tensor, dir: ScanDirection, h: usize, w: usize) -> Result<Tensor> {
    let (len, c) = seq.dims2()?;
    if len != h * w {
        return Err(Error::Invalid(format!("sequence of {len} tokens cannot fill {h}x{w}")));
    }
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for (k, p) in dir.order(h, w).into_iter().enumerate() {
        for ch in 0..c {
            x[ch * hw + p] = seq.data()[k * c + ch];
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], x)?)
}

/// Input-dependent gates `(a, b, c)` of the recurrence
/// `h_k = a_k * h_{k-1} + b_k * u_k`, `y_k = c_k * h_k`.
///
/// `a_k = sigmoid(u_k Wa + ba)`, `b_k = u_k Wb + bb`, `c_k = u_k Wc + bc`.
/// The same gates serve every scan direction.
#[derive(Clone, Debug)]
pub struct GatedScan {
    pub name: String,
    pub dim: usize,
    pub decay: Linear,
    pub input: Linear,
    pub output: Linear,
}

/// Initial bias of the decay gate; sigmoid(1) keeps ~73% of the state per step.
const DECAY_BIAS_INIT: f64 = 1.0;

impl GatedScan {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        let name = name.into();
        Self {
            decay: Linear::new(format!("{name}.decay"), dim, dim),
            input: Linear::new(format!("{name}.input"), dim, dim),
            output: Linear::new(format!("{name}.output"), dim, dim),
            name,
            dim,
        }
    }

    /// Gates for token rows `u (L, D)`.
    pub fn gates<'t>(&self, b: &Binder<'t, '_>, u: Var<'t>) -> Result<[Var<'t>; 3]> {
        Ok([
            self.decay.forward(b, u)?.sigmoid(),
            self.input.forward(b, u)?,
            self.output.forward(b, u)?,
        ])
    }

    /// Scans `u (L, D)` along each of `orders`; returns one `(L, D)` output
    /// per order, rows in the input's layout.
    pub fn scan_orders<'t>(&self, b: &Binder<'t, '_>, u: Var<'t>, orders: &[Arc<Vec<usize>>]) -> Result<Vec<Var<'t>>> {
        let [a, bg, c] = self.gates(b, u)?;
        orders
            .iter()
            .map(|o| Ok(Var::gated_scan(a, bg, c, u, o.clone())?))
            .collect()
    }
}

impl Module for GatedScan {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.decay.init(store, rng)?;
        self.input.init(store, rng)?;
        self.output.init(store, rng)?;
        let bias = store.get_mut(&self.decay.bias_name()).expect("just inserted");
        bias.data_mut().fill(DECAY_BIAS_INIT);
        Ok(())
    }
}

/// Runs the gated recurrence over a `(L, D)` sequence in its natural order.
pub fn selective_scan_1d<'t>(b: &Binder<'t, '_>, seq: Var<'t>, gates: &GatedScan) -> Result<Var<'t>> {
    let (len, d) = seq.value().dims2()?;
    if len == 0 {
        return Err(Error::Invalid("selective scan of an empty sequence".into()));
    }
    if d != gates.dim {
        return Err(Error::Invalid(format!(
            "sequence width {d}, gates expect {}",
            gates.dim
        )));
    }
    let order = Arc::new((0..len).collect());
    Ok(gates.scan_orders(b, seq, &[order])?.remove(0))
}

/// The bare recurrence for explicit gates, without a tape.
pub fn gated_recurrence(a: &Tensor, b: &Tensor, c: &Tensor, u: &Tensor) -> Result<Tensor> {
    let (len, _) = u.dims2()?;
    let order: Vec<usize> = (0..len).collect();
    Ok(kernels::gated_scan(a, b, c, u, &order)?.0)
}
