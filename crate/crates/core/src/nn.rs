//! Convolution layers and residual blocks built on [`Graph`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{BoundParams, Init, ParamId, ParamLayout};
use crate::tensor::{ConvSpec, Real, Shape};

#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    w: ParamId,
    b: Option<ParamId>,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, spec: ConvSpec) -> Self {
        Self::with_gain(layout, name, spec, 1.0)
    }

    /// Weights drawn with the He bound scaled by `gain`.
    pub fn with_gain(layout: &mut ParamLayout, name: &str, spec: ConvSpec, gain: f64) -> Self {
        let k = spec.kernel_size;
        let fan_in = spec.in_channels * k * k;
        let w = layout.declare(
            format!("{name}.w"),
            Shape::new(spec.out_channels, spec.in_channels, k * k),
            Init::HeUniform { fan_in, gain },
        );
        let b = spec
            .has_bias
            .then(|| layout.declare(format!("{name}.b"), Shape::new(spec.out_channels, 1, 1), Init::Zeros));
        Conv { spec, w, b }
    }

    /// Stride-1 conv with bias.
    pub fn same(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(Self::new(layout, name, ConvSpec::new(cin, cout, k, 1)?))
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        g.conv2d(x, self.spec, p.var(self.w), self.b.map(|b| p.var(b)))
    }
}

/// Init gain of the second conv in a [`ResBlock`]; blocks start close to
/// the identity so deep stacks keep activations bounded.
pub const RESIDUAL_GAIN: f64 = 0.1;

/// `x + conv(leaky_relu(conv(x)))` with square `kernel` convs.
#[derive(Clone, Debug)]
pub struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, kernel: usize) -> Result<Self> {
        Ok(ResBlock {
            c1: Conv::same(layout, &format!("{name}.conv1"), channels, channels, kernel)?,
            c2: Conv::with_gain(
                layout,
                &format!("{name}.conv2"),
                ConvSpec::new(channels, channels, kernel, 1)?,
                RESIDUAL_GAIN,
            ),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var, slope: T) -> Result<Var> {
        let h = self.c1.forward(g, p, x)?;
        let h = g.leaky_relu(h, slope)?;
        let h = self.c2.forward(g, p, h)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ResStack {
    blocks: Vec<ResBlock>,
}

impl ResStack {
    /// `count` blocks of 3x3 convs.
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, count: usize) -> Result<Self> {
        Self::with_kernel(layout, name, channels, count, 3)
    }

    pub fn with_kernel(
        layout: &mut ParamLayout,
        name: &str,
        channels: usize,
        count: usize,
        kernel: usize,
    ) -> Result<Self> {
        let blocks = (0..count)
            .map(|i| ResBlock::new(layout, &format!("{name}.block{i}"), channels, kernel))
            .collect::<Result<_>>()?;
        Ok(ResStack { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, mut x: Var, slope: T) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, p, x, slope)?;
        }
        Ok(x)
    }
}
