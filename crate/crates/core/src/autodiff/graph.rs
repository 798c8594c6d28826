//! Append-only computation graph with reverse-mode differentiation.
//!
//! Nodes are recorded in execution order; [`Graph::backward`] walks them in
//! exact reverse. Only leaves created with [`Graph::param`] keep gradients.
//! Gradients accumulate across repeated `backward` calls until
//! [`Graph::zero_grad`].

use super::conv::{self, Geom};
use super::gemm::gemm;
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a spike nonlinearity behaves in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeForward {
    /// Exact Heaviside step: outputs are 0 or 1.
    #[default]
    Heaviside,
    /// Integral of the fast-sigmoid surrogate, `0.5 + u / (1 + slope |u|)`.
    /// Its true derivative equals the surrogate, which makes BPTT checkable
    /// against finite differences.
    Smoothed,
}

/// Fast-sigmoid surrogate derivative `1 / (1 + slope |u|)^2`.
pub fn surrogate_derivative(u: f64, slope: f64) -> f64 {
    let d = 1.0 + slope * u.abs();
    1.0 / (d * d)
}

#[derive(Clone, Copy, Debug)]
struct ConvParams {
    stride: usize,
    padding: usize,
    output_padding: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, p: ConvParams },
    ConvTranspose2d { x: Var, w: Var, b: Var, p: ConvParams },
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Scale(Var, f64),
    Axpby { a: Var, b: Var, alpha: f64, beta: f64 },
    Mul(Var, Var),
    ResetZero { v: Var, s: Var },
    Reshape(Var),
    Columns { x: Var, start: usize, len: usize },
    Spike { x: Var, threshold: f64, slope: f64 },
    Reparameterize { mu: Var, logvar: Var, eps: Vec<f64> },
    Sum(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
    Bce { recon: Var, target: Vec<f64> },
    GaussianKl { mu: Var, logvar: Var },
    SoftmaxCe { logits: Var, target: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recorded computation over [`Tensor`] values.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const BCE_CLAMP: f64 = 1e-12;

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Trainable leaf; receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ── layers ────────────────────────────────────────────────────────

    /// 2-D correlation. `x: [N,Cin,H,W]`, `w: [Cout,Cin,kH,kW]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (geom, n, cout) = self.conv_geom(x, w, b, stride, padding)?;
        let mut out = vec![0.0; n * cout * geom.out_h * geom.out_w];
        conv::conv_forward(
            &geom,
            cout,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let value = Tensor::new(vec![n, cout, geom.out_h, geom.out_w], out)?;
        let p = ConvParams {
            stride,
            padding,
            output_padding: 0,
        };
        self.push("conv2d", value, Op::Conv2d { x, w, b, p }, &[x, w, b])
    }

    fn conv_geom(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<(Geom, usize, usize)> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 {
            return Err(shape_err("conv2d", format!("input must be [N,C,H,W], got {xs:?}")));
        }
        if ws.len() != 4 {
            return Err(shape_err("conv2d", format!("weight must be [Cout,Cin,kH,kW], got {ws:?}")));
        }
        if ws[1] != xs[1] {
            return Err(shape_err(
                "conv2d",
                format!("input channels: input has {}, weight expects {}", xs[1], ws[1]),
            ));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err(
                "conv2d",
                format!("bias length: expected [{}], got {:?}", ws[0], self.shape(b)),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be at least 1"));
        }
        if xs[2] + 2 * pad < ws[2] {
            return Err(shape_err("conv2d", format!("height {} + 2*{pad} < kernel height {}", xs[2], ws[2])));
        }
        if xs[3] + 2 * pad < ws[3] {
            return Err(shape_err("conv2d", format!("width {} + 2*{pad} < kernel width {}", xs[3], ws[3])));
        }
        let geom = Geom {
            channels: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            out_h: (xs[2] + 2 * pad - ws[2]) / stride + 1,
            out_w: (xs[3] + 2 * pad - ws[3]) / stride + 1,
        };
        Ok((geom, xs[0], ws[0]))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`].
    /// `x: [N,Cin,H,W]`, `w: [Cin,Cout,kH,kW]`, `b: [Cout]`; output side is
    /// `(H-1)*stride - 2*padding + kH + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (geom, n, cin) = self.conv_t_geom(x, w, b, stride, padding, output_padding)?;
        let mut out = vec![0.0; n * geom.channels * geom.h * geom.w];
        conv::conv_t_forward(
            &geom,
            cin,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let value = Tensor::new(vec![n, geom.channels, geom.h, geom.w], out)?;
        let p = ConvParams {
            stride,
            padding,
            output_padding,
        };
        self.push("conv_transpose2d", value, Op::ConvTranspose2d { x, w, b, p }, &[x, w, b])
    }

    fn conv_t_geom(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<(Geom, usize, usize)> {
        let op = "conv_transpose2d";
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 {
            return Err(shape_err(op, format!("input must be [N,C,H,W], got {xs:?}")));
        }
        if ws.len() != 4 {
            return Err(shape_err(op, format!("weight must be [Cin,Cout,kH,kW], got {ws:?}")));
        }
        if ws[0] != xs[1] {
            return Err(shape_err(
                op,
                format!("input channels: input has {}, weight expects {}", xs[1], ws[0]),
            ));
        }
        if self.shape(b) != [ws[1]] {
            return Err(shape_err(
                op,
                format!("bias length: expected [{}], got {:?}", ws[1], self.shape(b)),
            ));
        }
        if stride == 0 {
            return Err(shape_err(op, "stride must be at least 1"));
        }
        if output_padding >= stride {
            return Err(shape_err(op, format!("output_padding {output_padding} must be < stride {stride}")));
        }
        let side = |len: usize, k: usize, dim: &str| -> Result<usize> {
            let full = (len - 1) * stride + k + output_padding;
            if full <= 2 * pad {
                return Err(shape_err(op, format!("{dim}: padding {pad} consumes the whole output")));
            }
            Ok(full - 2 * pad)
        };
        let geom = Geom {
            channels: ws[1],
            h: side(xs[2], ws[2], "height")?,
            w: side(xs[3], ws[3], "width")?,
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            out_h: xs[2],
            out_w: xs[3],
        };
        Ok((geom, xs[0], xs[1]))
    }

    /// `x: [N,F]`, `w: [G,F]`, `b: [G]` → `x wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 {
            return Err(shape_err("linear", format!("expected 2-D input and weight, got {xs:?} and {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(shape_err(
                "linear",
                format!("inner dimension: input has {} features, weight expects {}", xs[1], ws[1]),
            ));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err(
                "linear",
                format!("bias length: expected [{}], got {:?}", ws[0], self.shape(b)),
            ));
        }
        let (n, f, g) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * g];
        gemm(n, f, g, self.value(x).data(), false, self.value(w).data(), true, &mut out, 0.0);
        let bias = self.value(b).data();
        for row in out.chunks_mut(g) {
            row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        let value = Tensor::new(vec![n, g], out)?;
        self.push("linear", value, Op::Linear { x, w, b }, &[x, w, b])
    }

    // ── elementwise ───────────────────────────────────────────────────

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, value, op, &[x])
    }

    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, factor), |v| v * factor)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("operands differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `alpha * a + beta * b`.
    pub fn axpby(&mut self, a: Var, b: Var, alpha: f64, beta: f64) -> Result<Var> {
        self.same_shape("axpby", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("axpby", value, Op::Axpby { a, b, alpha, beta }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.axpby(a, b, 1.0, 1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// `v * (1 - s)`: membrane reset to zero where a spike occurred.
    pub fn reset_zero(&mut self, v: Var, s: Var) -> Result<Var> {
        self.same_shape("reset_zero", v, s)?;
        let data = self
            .value(v)
            .data()
            .iter()
            .zip(self.value(s).data())
            .map(|(v, s)| v * (1.0 - s))
            .collect();
        let value = Tensor::new(self.shape(v).to_vec(), data)?;
        self.push("reset_zero", value, Op::ResetZero { v, s }, &[v, s])
    }

    /// Spike nonlinearity on `x - threshold`. The backward pass always uses
    /// [`surrogate_derivative`].
    pub fn spike(&mut self, x: Var, threshold: f64, slope: f64, forward: SpikeForward) -> Result<Var> {
        let op = Op::Spike { x, threshold, slope };
        match forward {
            SpikeForward::Heaviside => self.map("spike", x, op, |v| if v - threshold >= 0.0 { 1.0 } else { 0.0 }),
            SpikeForward::Smoothed => self.map("spike", x, op, |v| {
                let u = v - threshold;
                0.5 + u / (1.0 + slope * u.abs())
            }),
        }
    }

    // ── shape ─────────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Columns `start..start+len` of a `[N,F]` tensor.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || start + len > xs[1] || len == 0 {
            return Err(shape_err(
                "columns",
                format!("cannot take columns {start}..{} of {xs:?}", start + len),
            ));
        }
        let f = xs[1];
        let data = self
            .value(x)
            .data()
            .chunks(f)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(vec![xs[0], len], data)?;
        self.push("columns", value, Op::Columns { x, start, len }, &[x])
    }

    // ── latent sampling ──────────────────────────────────────────────

    /// `mu + exp(0.5 logvar) * eps` with a recorded noise tensor.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
        self.same_shape("reparameterize", mu, logvar)?;
        if eps.shape() != self.shape(mu) {
            return Err(shape_err(
                "reparameterize",
                format!("noise shape {:?} vs mean shape {:?}", eps.shape(), self.shape(mu)),
            ));
        }
        let data = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .zip(eps.data())
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let value = Tensor::new(self.shape(mu).to_vec(), data)?;
        let op = Op::Reparameterize {
            mu,
            logvar,
            eps: eps.data().to_vec(),
        };
        self.push("reparameterize", value, op, &[mu, logvar])
    }

    // ── reductions and losses ────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ_i weights_i x_i` over all elements.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(shape_err(
                "weighted_sum",
                format!("{} weights for {} elements", weights.len(), self.value(x).numel()),
            ));
        }
        let s = self.value(x).data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    /// Binary cross-entropy summed over each sample and averaged over the
    /// leading batch dimension. Predictions must lie in `[0, 1]`; they are
    /// clamped away from the endpoints before taking logarithms.
    pub fn bce(&mut self, recon: Var, target: &Tensor) -> Result<Var> {
        if target.shape() != self.shape(recon) {
            return Err(shape_err(
                "bce",
                format!("target {:?} vs reconstruction {:?}", target.shape(), self.shape(recon)),
            ));
        }
        let r = self.value(recon);
        if let Some(bad) = r.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(shape_err("bce", format!("reconstruction value {bad} outside [0, 1]")));
        }
        let n = r.shape()[0] as f64;
        let loss: f64 = r
            .data()
            .iter()
            .zip(target.data())
            .map(|(&r, &t)| {
                let r = r.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * r.ln() + (1.0 - t) * (1.0 - r).ln())
            })
            .sum::<f64>()
            / n;
        let op = Op::Bce {
            recon,
            target: target.data().to_vec(),
        };
        self.push("bce", Tensor::scalar(loss), op, &[recon])
    }

    /// KL divergence of `N(mu, exp(logvar))` from `N(0, 1)`, summed over the
    /// latent dimension and averaged over the batch.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        self.same_shape("gaussian_kl", mu, logvar)?;
        let n = self.shape(mu)[0] as f64;
        let kl: f64 = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum::<f64>()
            / n;
        self.push("gaussian_kl", Tensor::scalar(kl), Op::GaussianKl { mu, logvar }, &[mu, logvar])
    }

    /// Softmax cross-entropy of `[N,K]` logits against per-row target
    /// distributions, averaged over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || target.shape() != ls {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {ls:?} vs target {:?}", target.shape()),
            ));
        }
        let (n, k) = (ls[0], ls[1]);
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for ((row, t), p) in self
            .value(logits)
            .data()
            .chunks(k)
            .zip(target.data().chunks(k))
            .zip(probs.chunks_mut(k))
        {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..k {
                let log_p = row[j] - lse;
                p[j] = log_p.exp();
                if t[j] != 0.0 {
                    loss -= t[j] * log_p;
                }
            }
        }
        let op = Op::SoftmaxCe {
            logits,
            target: target.data().to_vec(),
            probs,
        };
        self.push("softmax_cross_entropy", Tensor::scalar(loss / n as f64), op, &[logits])
    }

    // ── backward ──────────────────────────────────────────────────────

    /// Reverse-mode pass from a scalar node. Gradients add onto any left by
    /// earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                leaf_grads.push((i, g));
            }
        }
        for (i, g) in leaf_grads {
            check_finite("backward", &g)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, p } => {
                let (geom, _, cout) = self.conv_geom(*x, *w, *b, p.stride, p.padding)?;
                let mut dx = wants(*x).then(|| vec![0.0; nodes[x.0].value.numel()]);
                let (dw, db) =
                    conv::conv_backward(&geom, cout, val(*x), val(*w), g, dx.as_deref_mut(), wants(*w));
                if let Some(dx) = dx {
                    acc(*x, &mut |s| add_into(s, &dx));
                }
                acc(*w, &mut |s| add_into(s, &dw));
                acc(*b, &mut |s| add_into(s, &db));
            }
            Op::ConvTranspose2d { x, w, b, p } => {
                let (geom, _, cin) = self.conv_t_geom(*x, *w, *b, p.stride, p.padding, p.output_padding)?;
                let mut dx = wants(*x).then(|| vec![0.0; nodes[x.0].value.numel()]);
                let (dw, db) =
                    conv::conv_t_backward(&geom, cin, val(*x), val(*w), g, dx.as_deref_mut(), wants(*w));
                if let Some(dx) = dx {
                    acc(*x, &mut |s| add_into(s, &dx));
                }
                acc(*w, &mut |s| add_into(s, &dw));
                acc(*b, &mut |s| add_into(s, &db));
            }
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (n, f, gdim) = (xs[0], xs[1], nodes[w.0].value.shape()[0]);
                acc(*x, &mut |s| gemm(n, gdim, f, g, false, val(*w), false, s, 1.0));
                acc(*w, &mut |s| gemm(gdim, n, f, g, true, val(*x), false, s, 1.0));
                acc(*b, &mut |s| {
                    for row in g.chunks(gdim) {
                        add_into(s, row);
                    }
                });
            }
            Op::Relu(x) => acc(*x, &mut |s| {
                for ((s, g), v) in s.iter_mut().zip(g).zip(val(*x)) {
                    if *v > 0.0 {
                        *s += g;
                    }
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(out) {
                    *s += g * y * (1.0 - y);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(out) {
                    *s += g * y;
                }
            }),
            Op::Scale(x, f) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += f * g)),
            Op::Axpby { a, b, alpha, beta } => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += alpha * g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += beta * g));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(val(*b)) {
                        *s += g * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(val(*a)) {
                        *s += g * x;
                    }
                });
            }
            Op::ResetZero { v, s: spikes } => {
                acc(*v, &mut |s| {
                    for ((s, g), sp) in s.iter_mut().zip(g).zip(val(*spikes)) {
                        *s += g * (1.0 - sp);
                    }
                });
                acc(*spikes, &mut |s| {
                    for ((s, g), vv) in s.iter_mut().zip(g).zip(val(*v)) {
                        *s -= g * vv;
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::Columns { x, start, len } => {
                let f = nodes[x.0].value.shape()[1];
                acc(*x, &mut |s| {
                    for (row, grow) in s.chunks_mut(f).zip(g.chunks(*len)) {
                        add_into(&mut row[*start..*start + *len], grow);
                    }
                });
            }
            Op::Spike { x, threshold, slope } => acc(*x, &mut |s| {
                for ((s, g), v) in s.iter_mut().zip(g).zip(val(*x)) {
                    *s += g * surrogate_derivative(v - threshold, *slope);
                }
            }),
            Op::Reparameterize { mu, logvar, eps } => {
                acc(*mu, &mut |s| add_into(s, g));
                acc(*logvar, &mut |s| {
                    for (((s, g), lv), e) in s.iter_mut().zip(g).zip(val(*logvar)).zip(eps) {
                        *s += g * 0.5 * (0.5 * lv).exp() * e;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::WeightedSum { x, weights } => acc(*x, &mut |s| {
                s.iter_mut().zip(weights).for_each(|(s, w)| *s += g[0] * w)
            }),
            Op::Bce { recon, target } => {
                let n = nodes[recon.0].value.shape()[0] as f64;
                acc(*recon, &mut |s| {
                    for ((s, &r), &t) in s.iter_mut().zip(val(*recon)).zip(target) {
                        let r = r.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        *s += g[0] * (r - t) / (r * (1.0 - r)) / n;
                    }
                });
            }
            Op::GaussianKl { mu, logvar } => {
                let n = nodes[mu.0].value.shape()[0] as f64;
                acc(*mu, &mut |s| {
                    s.iter_mut().zip(val(*mu)).for_each(|(s, m)| *s += g[0] * m / n)
                });
                acc(*logvar, &mut |s| {
                    s.iter_mut()
                        .zip(val(*logvar))
                        .for_each(|(s, lv)| *s += g[0] * 0.5 * (lv.exp() - 1.0) / n)
                });
            }
            Op::SoftmaxCe { logits, target, probs } => {
                let shape = nodes[logits.0].value.shape();
                let (n, k) = (shape[0], shape[1]);
                acc(*logits, &mut |s| {
                    for ((srow, prow), trow) in s.chunks_mut(k).zip(probs.chunks(k)).zip(target.chunks(k)) {
                        let mass: f64 = trow.iter().sum();
                        for j in 0..k {
                            srow[j] += g[0] * (mass * prow[j] - trow[j]) / n as f64;
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
