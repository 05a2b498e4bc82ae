//! Adaptive prompt integration: input-gated weighting of a learnable
//! prompt bank.

use lumafix_autograd::{Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Binder, Conv2d, DepthwiseConv2d, Linear, Module, ParamStore};

/// Kernel sizes of the parallel receptive-field branches.
pub const MULTISCALE_KERNELS: [usize; 3] = [3, 5, 7];

/// Parallel depthwise branches (3x3, 5x5, 7x7) concatenated and fused back
/// to the input width by a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct MultiScaleExtract {
    pub branches: Vec<DepthwiseConv2d>,
    pub fuse: Conv2d,
}

impl MultiScaleExtract {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            branches: MULTISCALE_KERNELS
                .iter()
                .map(|&k| DepthwiseConv2d::new(format!("{name}.dw{k}"), channels, k))
                .collect(),
            fuse: Conv2d::same(format!("{name}.fuse"), channels * MULTISCALE_KERNELS.len(), channels, 1),
        }
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let parts = self
            .branches
            .iter()
            .map(|br| br.forward(b, x))
            .collect::<Result<Vec<_>>>()?;
        self.fuse.forward(b, Var::concat(&parts, 0)?)
    }
}

impl Module for MultiScaleExtract {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        for br in &self.branches {
            br.init(store, rng)?;
        }
        self.fuse.init(store, rng)
    }
}

/// Intermediate values of one [`AdaptivePromptIntegration`] pass.
pub struct ApiParts<'t> {
    /// Spatial mean of the sigmoid gate maps, `(N)`.
    pub gate_mean: Var<'t>,
    /// Per-component weights after the fully connected layer, `(N)`.
    pub weights: Var<'t>,
    /// The emitted prompt, `(C_p, H, W)`.
    pub prompt: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct AdaptivePromptIntegration {
    pub name: String,
    pub channels: usize,
    pub prompt_channels: usize,
    pub components: usize,
    pub prompt_size: usize,
    pub extract: MultiScaleExtract,
    /// Expands the `[avg || max]` pooled pair to `N` gate maps.
    pub gate_conv: Conv2d,
    pub gate_fcn: Linear,
    pub out_conv: Conv2d,
}

impl AdaptivePromptIntegration {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        prompt_channels: usize,
        components: usize,
        prompt_size: usize,
    ) -> Self {
        let name = name.into();
        Self {
            extract: MultiScaleExtract::new(&format!("{name}.extract"), channels),
            gate_conv: Conv2d::same(format!("{name}.gate_conv"), 2, components, 3),
            gate_fcn: Linear::new(format!("{name}.gate_fcn"), components, components),
            out_conv: Conv2d::same(format!("{name}.out_conv"), prompt_channels, prompt_channels, 3),
            name,
            channels,
            prompt_channels,
            components,
            prompt_size,
        }
    }

    /// Name of the `(N, C_p, S, S)` prompt bank.
    pub fn bank_name(&self) -> String {
        format!("{}.components", self.name)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_parts(b, x)?.prompt)
    }

    pub fn forward_parts<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<ApiParts<'t>> {
        let (c, h, w) = x.value().dims3()?;
        if c != self.channels {
            return Err(Error::Invalid(format!(
                "{}: {c} input channels, expected {}",
                self.name, self.channels
            )));
        }
        let xa = self.extract.forward(b, x)?;
        let pooled = Var::concat(&[xa.channel_mean()?, xa.channel_max()?], 0)?;
        let gates = self.gate_conv.forward(b, pooled)?.sigmoid();
        let gate_mean = gates.spatial_mean()?;
        let n = self.components;
        let weights = self.gate_fcn.forward(b, gate_mean.reshape(&[1, n])?)?.reshape(&[n])?;
        let prompt = self.integrate(b, weights, h, w)?;
        Ok(ApiParts {
            gate_mean,
            weights,
            prompt,
        })
    }

    /// `Conv3x3(resize(sum_n weights[n] * P[n]))` at `(h, w)`.
    pub fn integrate<'t>(&self, b: &Binder<'t, '_>, weights: Var<'t>, h: usize, w: usize) -> Result<Var<'t>> {
        let (n, cp, s) = (self.components, self.prompt_channels, self.prompt_size);
        let bank = b.param(&self.bank_name())?.reshape(&[n, cp * s * s])?;
        let mixed = weights.reshape(&[1, n])?.matmul(bank)?.reshape(&[cp, s, s])?;
        let resized = if (h, w) == (s, s) {
            mixed
        } else {
            mixed.resize_bilinear(h, w)?
        };
        self.out_conv.forward(b, resized)
    }
}

impl Module for AdaptivePromptIntegration {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.extract.init(store, rng)?;
        self.gate_conv.init(store, rng)?;
        self.gate_fcn.init(store, rng)?;
        let s = self.prompt_size;
        store.insert(
            self.bank_name(),
            Tensor::rand_uniform(&[self.components, self.prompt_channels, s, s], 0.0, 1.0, rng),
        )?;
        self.out_conv.init(store, rng)
    }
}
