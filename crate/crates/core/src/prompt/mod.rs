//! Illumination prompt module inserted at every decoder stage.
//!
//! `P' = API(X_in; P)` turns a bank of learnable prompt components into a
//! single input-weighted prompt map; `X_out = GPS(X_in; P')` fuses it with
//! the features through a four-direction cross-scan.

mod api;
mod gps;
mod scan;

use lumafix_autograd::Var;

pub use api::{AdaptivePromptIntegration, ApiParts, MultiScaleExtract, MULTISCALE_KERNELS};
pub use gps::GlobalPromptScanner;
pub use scan::{
    directional_flatten, directional_unflatten, gated_recurrence, selective_scan_1d, GatedScan, ScanDirection,
};

use crate::error::Result;
use crate::nn::{Binder, Conv2d, Module, ParamStore};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptConfig {
    pub channels: usize,
    pub prompt_channels: usize,
    pub components: usize,
    pub prompt_size: usize,
    pub use_api: bool,
    pub use_gps: bool,
}

/// API followed by GPS, or one of the ablated variants:
///
/// * no API: GPS scans the features without a prompt;
/// * no GPS: the prompt is merged by a 1x1 convolution over `[X_in || P']`;
/// * neither: identity.
#[derive(Clone, Debug)]
pub struct PromptModule {
    pub config: PromptConfig,
    pub api: Option<AdaptivePromptIntegration>,
    pub gps: Option<GlobalPromptScanner>,
    pub merge: Option<Conv2d>,
}

impl PromptModule {
    pub fn new(name: &str, config: PromptConfig) -> Self {
        let c = config.channels;
        let cp = config.prompt_channels;
        let api = config.use_api.then(|| {
            AdaptivePromptIntegration::new(format!("{name}.api"), c, cp, config.components, config.prompt_size)
        });
        let gps = config
            .use_gps
            .then(|| GlobalPromptScanner::new(format!("{name}.gps"), c, if config.use_api { cp } else { 0 }));
        let merge = (config.use_api && !config.use_gps).then(|| Conv2d::same(format!("{name}.merge"), c + cp, c, 1));
        Self {
            config,
            api,
            gps,
            merge,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.api.is_none() && self.gps.is_none()
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let prompt = match &self.api {
            Some(api) => Some(api.forward(b, x)?),
            None => None,
        };
        match (&self.gps, &self.merge, prompt) {
            (Some(gps), _, p) => gps.forward(b, x, p),
            (None, Some(merge), Some(p)) => merge.forward(b, Var::concat(&[x, p], 0)?),
            _ => Ok(x),
        }
    }
}

impl Module for PromptModule {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        if let Some(api) = &self.api {
            api.init(store, rng)?;
        }
        if let Some(gps) = &self.gps {
            gps.init(store, rng)?;
        }
        if let Some(m) = &self.merge {
            m.init(store, rng)?;
        }
        Ok(())
    }
}
