//! Global prompt scanner: cross-scan fusion of features with the prompt.

use std::sync::Arc;

use lumafix_autograd::Var;

use crate::error::{Error, Result};
use crate::nn::{from_tokens, to_tokens, Binder, Conv2d, Module, ParamStore};

use super::scan::{GatedScan, ScanDirection};

/// `X_P = [X_in || P']` is scanned in all four directions with shared gates;
/// the summed scans are projected back to `C` channels and added to a
/// 1x1 -> 3x3 convolutional skip path on `X_in`.
///
/// With `prompt_channels == 0` the scanner runs on `X_in` alone.
#[derive(Clone, Debug)]
pub struct GlobalPromptScanner {
    pub name: String,
    pub channels: usize,
    pub prompt_channels: usize,
    pub scan: GatedScan,
    pub proj: Conv2d,
    pub skip_in: Conv2d,
    pub skip_out: Conv2d,
}

impl GlobalPromptScanner {
    pub fn new(name: impl Into<String>, channels: usize, prompt_channels: usize) -> Self {
        let name = name.into();
        let d = channels + prompt_channels;
        Self {
            scan: GatedScan::new(format!("{name}.scan"), d),
            proj: Conv2d::same(format!("{name}.proj"), d, channels, 1),
            skip_in: Conv2d::same(format!("{name}.skip_in"), channels, channels, 1),
            skip_out: Conv2d::same(format!("{name}.skip_out"), channels, channels, 3),
            name,
            channels,
            prompt_channels,
        }
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, prompt: Option<Var<'t>>) -> Result<Var<'t>> {
        let (c, h, w) = x.value().dims3()?;
        if c != self.channels {
            return Err(Error::Invalid(format!(
                "{}: {c} channels, expected {}",
                self.name, self.channels
            )));
        }
        let xp = match prompt {
            Some(p) => {
                let (cp, ph, pw) = p.value().dims3()?;
                if (ph, pw) != (h, w) || cp != self.prompt_channels {
                    return Err(Error::Invalid(format!(
                        "{}: prompt {cp}x{ph}x{pw} does not match features {c}x{h}x{w}",
                        self.name
                    )));
                }
                Var::concat(&[x, p], 0)?
            }
            None if self.prompt_channels == 0 => x,
            None => return Err(Error::Invalid(format!("{}: prompt required", self.name))),
        };
        let tokens = to_tokens(xp)?;
        let orders: Vec<Arc<Vec<usize>>> = ScanDirection::ALL.iter().map(|d| Arc::new(d.order(h, w))).collect();
        let scans = self.scan.scan_orders(b, tokens, &orders)?;
        let mut merged = scans[0];
        for s in &scans[1..] {
            merged = merged.add(*s)?;
        }
        let fused = self.proj.forward(b, from_tokens(merged, h, w)?)?;
        let skip = self.skip_out.forward(b, self.skip_in.forward(b, x)?)?;
        Ok(fused.add(skip)?)
    }
}

impl Module for GlobalPromptScanner {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.scan.init(store, rng)?;
        self.proj.init(store, rng)?;
        self.skip_in.init(store, rng)?;
        self.skip_out.init(store, rng)
    }
}
