//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients over all paths. Node
//! ids are handed out as [`Var`]s, so inputs always precede their consumers.

use crate::error::{ensure, Result};
use crate::ops::{self, Axis};
use crate::tensor::{ConvSpec, Real, Shape, Tensor};
use crate::wavelet::{self, HaarConvention};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    Unshuffle { x: Var, r: usize },
    Shuffle { x: Var, r: usize },
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Softmax { x: Var },
    NormalizeRows { x: Var, eps: T },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: T },
    LeakyRelu { x: Var, slope: T },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Mean { x: Var },
    Sum { x: Var },
    Abs { x: Var },
    Norm { x: Var },
    Bilinear { x: Var },
    Gather { x: Var, idx: Vec<usize> },
    HaarAnalysis { x: Var, conv: HaarConvention },
    HaarSynthesis { x: Var, conv: HaarConvention },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-graph counters for structural assertions in tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphStats {
    pub location_maps: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    kinks: Option<u64>,
    stats: GraphStats,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), kinks: None, stats: GraphStats::default() }
    }

    /// Records a hash of every piecewise branch taken (activation signs,
    /// selected indices). Two forwards with equal signatures evaluate the
    /// same smooth piece, which is what finite-difference checks need.
    pub fn with_kink_tracking() -> Self {
        Graph { kinks: Some(FNV_OFFSET), ..Self::new() }
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks
    }

    pub fn stats(&self) -> GraphStats {
        self.stats
    }

    pub(crate) fn note_location_map(&mut self) {
        self.stats.location_maps += 1;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn mix(&mut self, word: u64) {
        if let Some(h) = self.kinks.as_mut() {
            *h = (*h ^ word).wrapping_mul(FNV_PRIME);
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Learnable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true, "param")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, spec: ConvSpec, w: Var, b: Option<Var>) -> Result<Var> {
        let y = ops::conv2d(self.value(x), &spec, self.value(w), b.map(|b| self.value(b)))?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(y, Op::Conv { x, w, b, spec }, ng, "conv2d")
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_unshuffle(self.value(x), r)?;
        let ng = self.ng(x);
        self.push(y, Op::Unshuffle { x, r }, ng, "pixel_unshuffle")
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), r)?;
        let ng = self.ng(x);
        self.push(y, Op::Shuffle { x, r }, ng, "pixel_shuffle")
    }

    pub fn channel_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::channel_matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Matmul { a, b }, ng, "channel_matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = ops::transpose(self.value(x));
        let ng = self.ng(x);
        self.push(y, Op::Transpose { x }, ng, "transpose")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(y, Op::Softmax { x }, ng, "softmax_rows")
    }

    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Result<Var> {
        let y = ops::normalize_rows(self.value(x), eps);
        let ng = self.ng(x);
        self.push(y, Op::NormalizeRows { x, eps }, ng, "normalize_rows")
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure!(sa == sb, "{op}: shapes {sa} and {sb} differ");
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Add { a, b }, ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Sub { a, b }, ng, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Mul { a, b }, ng, "mul")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let y = self.value(x).scaled(s);
        let ng = self.ng(x);
        self.push(y, Op::Scale { x, s }, ng, "scale")
    }

    /// Slope applies for `x <= 0`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if self.kinks.is_some() {
            let words: Vec<u64> = self
                .value(x)
                .data()
                .chunks(64)
                .map(|c| c.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i)))
                .collect();
            words.into_iter().for_each(|w| self.mix(w));
        }
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let ng = self.ng(x);
        self.push(y, Op::LeakyRelu { x, slope }, ng, "leaky_relu")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&refs)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(y, Op::Concat { parts: parts.to_vec() }, ng, "concat")
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice_channels(self.value(x), start, len)?;
        let ng = self.ng(x);
        self.push(y, Op::Slice { x, start }, ng, "slice_channels")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let y = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        let ng = self.ng(x);
        self.push(y, Op::Mean { x }, ng, "mean")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(y, Op::Sum { x }, ng, "sum")
    }

    /// Subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        if self.kinks.is_some() {
            let words: Vec<u64> = self
                .value(x)
                .data()
                .chunks(32)
                .map(|c| {
                    c.iter().enumerate().fold(0u64, |acc, (i, &v)| {
                        let code = if v > T::zero() {
                            1u64
                        } else if v < T::zero() {
                            2
                        } else {
                            3
                        };
                        acc | (code << (2 * i))
                    })
                })
                .collect();
            words.into_iter().for_each(|w| self.mix(w));
        }
        let y = self.value(x).map(T::abs);
        let ng = self.ng(x);
        self.push(y, Op::Abs { x }, ng, "abs")
    }

    /// Frobenius norm over every element.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum_sq().sqrt());
        let ng = self.ng(x);
        self.push(y, Op::Norm { x }, ng, "l2_norm")
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        let ng = self.ng(x);
        self.push(y, Op::Bilinear { x }, ng, "bilinear_resize")
    }

    /// Differentiable [`ops::select_top`]; selected indices are constants.
    pub fn select_top(&mut self, x: Var, keep: usize, axis: Axis) -> Result<Var> {
        let (shape, idx) = ops::select_top_indices(self.value(x), keep, axis)?;
        if self.kinks.is_some() {
            for &i in &idx {
                self.mix(i as u64);
            }
        }
        let src = self.value(x).data();
        let y = Tensor::new(shape, idx.iter().map(|&i| src[i]).collect())?;
        let ng = self.ng(x);
        self.push(y, Op::Gather { x, idx }, ng, "select_top")
    }

    /// Haar analysis; output stacks `[A, V, H, D]` along channels.
    pub fn haar_analysis(&mut self, x: Var, conv: HaarConvention) -> Result<Var> {
        let y = wavelet::analyze_stacked(self.value(x), conv.analysis_scale())?;
        let ng = self.ng(x);
        self.push(y, Op::HaarAnalysis { x, conv }, ng, "dwt2d")
    }

    /// Inverse of [`Graph::haar_analysis`] on a stacked `[A, V, H, D]` input.
    pub fn haar_synthesis(&mut self, x: Var, conv: HaarConvention) -> Result<Var> {
        let y = wavelet::synthesize_stacked(self.value(x), conv.synthesis_scale())?;
        let ng = self.ng(x);
        self.push(y, Op::HaarSynthesis { x, conv }, ng, "idwt2d")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        ensure!(self.value(loss).len() == 1, "backward: loss must be scalar, got {}", self.shape(loss));
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, y: &Tensor<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let (dx, dw, db) = ops::conv2d_backward(self.value(*x), spec, self.value(*w), dy);
                acc(*x, dx);
                acc(*w, dw.reshape(self.shape(*w)).expect("weight shape"));
                if let (Some(b), Some(db)) = (b, db) {
                    acc(*b, db.reshape(self.shape(*b)).expect("bias shape"));
                }
            }
            Op::Unshuffle { x, r } => acc(*x, ops::pixel_shuffle(dy, *r).expect("adjoint shape")),
            Op::Shuffle { x, r } => acc(*x, ops::pixel_unshuffle(dy, *r).expect("adjoint shape")),
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, ops::channel_matmul(dy, &ops::transpose(tb)).expect("adjoint shape"));
                }
                if self.ng(*b) {
                    acc(*b, ops::channel_matmul(&ops::transpose(ta), dy).expect("adjoint shape"));
                }
            }
            Op::Transpose { x } => acc(*x, ops::transpose(dy)),
            Op::Softmax { x } => acc(*x, ops::softmax_rows_backward(y, dy)),
            Op::NormalizeRows { x, eps } => acc(*x, ops::normalize_rows_backward(self.value(*x), *eps, dy)),
            Op::Add { a, b } => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub { a, b } => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let prod = |t: &Tensor<T>| {
                    let data = t.data().iter().zip(dy.data()).map(|(&u, &g)| u * g).collect();
                    Tensor::new(t.shape(), data).expect("same shape")
                };
                acc(*a, prod(tb));
                acc(*b, prod(ta));
            }
            Op::Scale { x, s } => acc(*x, dy.scaled(*s)),
            Op::LeakyRelu { x, slope } => {
                let tx = self.value(*x);
                let data = tx
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { g * *slope })
                    .collect();
                acc(*x, Tensor::new(tx.shape(), data).expect("same shape"));
            }
            Op::Concat { parts } => {
                let plane = dy.shape().plane();
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p);
                    let chunk = dy.data()[offset..offset + s.c * plane].to_vec();
                    offset += s.c * plane;
                    acc(p, Tensor::new(s, chunk).expect("concat part"));
                }
            }
            Op::Slice { x, start } => {
                let s = self.shape(*x);
                let mut g = Tensor::zeros(s);
                let p = s.plane();
                g.data_mut()[start * p..start * p + dy.len()].copy_from_slice(dy.data());
                acc(*x, g);
            }
            Op::Mean { x } => {
                let s = self.shape(*x);
                acc(*x, Tensor::full(s, dy.item() / T::of(s.len() as f64)));
            }
            Op::Sum { x } => acc(*x, Tensor::full(self.shape(*x), dy.item())),
            Op::Abs { x } => {
                let g = dy.data().iter().copied();
                let tx = self.value(*x);
                let data = tx
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, g)| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*x, Tensor::new(tx.shape(), data).expect("same shape"));
            }
            Op::Norm { x } => {
                let n = y.item();
                let tx = self.value(*x);
                if n > T::zero() {
                    acc(*x, tx.scaled(dy.item() / n));
                } else {
                    acc(*x, Tensor::zeros(tx.shape()));
                }
            }
            Op::Bilinear { x } => acc(*x, ops::bilinear_resize_backward(self.shape(*x), dy)),
            Op::Gather { x, idx } => {
                let mut g = Tensor::zeros(self.shape(*x));
                let gd = g.data_mut();
                for (&i, &v) in idx.iter().zip(dy.data()) {
                    gd[i] += v;
                }
                acc(*x, g);
            }
            Op::HaarAnalysis { x, conv } => {
                let g = wavelet::synthesize_stacked(dy, conv.analysis_scale()).expect("adjoint shape");
                acc(*x, g);
            }
            Op::HaarSynthesis { x, conv } => {
                let g = wavelet::analyze_stacked(dy, conv.synthesis_scale()).expect("adjoint shape");
                acc(*x, g);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `v` does not influence the loss or is not differentiable.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
