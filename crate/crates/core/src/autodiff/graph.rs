use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Xcorr { template: Var, search: Var },
    Unary { x: Var, kind: Unary },
    Binary { a: Var, b: Var, kind: Binary },
    Scale { x: Var, k: f64 },
    AddScalar { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    SquaredL2 { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Reshape { x: Var },
    Linear { x: Var, weight: Var, bias: Var },
    SpatialMean { x: Var },
    Broadcast { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order; [`Graph::backward`] replays
/// their adjoints in reverse, visiting each node once. A graph is meant
/// to be built, differentiated and dropped on a single thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass; `None` for nodes that do not require grad.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad matches value shape"))
    }

    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(op, format!("shape {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (in_ch, in_h, in_w) = self.value(input).chw()?;
        let ws = self.shape(weight).to_vec();
        let [out_ch, w_in, kh, kw] = ws[..] else {
            return Err(TensorError::dim("conv2d", format!("weight must be rank 4, got {ws:?}")));
        };
        if w_in != in_ch {
            return Err(TensorError::dim("conv2d", format!("weight expects {w_in} input channels, input has {in_ch}")));
        }
        if kh != kw {
            return Err(TensorError::dim("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if self.shape(bias) != [out_ch] {
            return Err(TensorError::dim("conv2d", format!("bias shape {:?}, expected [{out_ch}]", self.shape(bias))));
        }
        if stride == 0 {
            return Err(TensorError::dim("conv2d", "stride must be at least 1".into()));
        }
        if kh > in_h + 2 * pad || kw > in_w + 2 * pad {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {kh} exceeds padded input {in_h}x{in_w} (pad {pad})"),
            ));
        }
        let geom = ConvGeom { in_ch, in_h, in_w, out_ch, kernel: kh, stride, pad };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(vec![out_ch, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    /// Per-channel cross-correlation (no kernel flip) of a template over a search map.
    pub fn depthwise_xcorr(&mut self, template: Var, search: Var) -> Result<Var, TensorError> {
        let (tc, th, tw) = self.value(template).chw()?;
        let (sc, sh, sw) = self.value(search).chw()?;
        if tc != sc {
            return Err(TensorError::dim("depthwise_xcorr", format!("channels {tc} vs {sc}")));
        }
        if th > sh || tw > sw {
            return Err(TensorError::dim(
                "depthwise_xcorr",
                format!("template {th}x{tw} larger than search {sh}x{sw}"),
            ));
        }
        let out =
            kernels::xcorr_forward(self.value(template).data(), self.value(search).data(), tc, (th, tw), (sh, sw));
        let value = Tensor::new(vec![tc, sh - th + 1, sw - tw + 1], out)?;
        let rg = self.rg(template) || self.rg(search);
        Ok(self.push(value, Op::Xcorr { template, search }, rg))
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Result<Var, TensorError> {
        let src = self.value(x);
        let data: Vec<f64> = match kind {
            Unary::Relu => src.data().iter().map(|&v| v.max(0.0)).collect(),
            Unary::Sigmoid => src.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
            Unary::Exp => src.data().iter().map(|&v| v.exp()).collect(),
            Unary::Softplus => src.data().iter().map(|&v| kernels::softplus(v)).collect(),
            Unary::Log => {
                if let Some(bad) = src.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(TensorError::Domain { op: "log", detail: format!("input {bad}") });
                }
                src.data().iter().map(|&v| v.ln()).collect()
            }
        };
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Unary { x, kind }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Unary::Log)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Unary::Softplus)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var, TensorError> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
            Binary::Min => f64::min,
        };
        let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary { a, b, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Div, "div")
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Min, "minimum")
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * k).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, k }, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v + c).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::AddScalar { x }, rg)
    }

    /// Sum of all elements in row-major order, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// Sum of squared elements.
    pub fn squared_l2(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SquaredL2 { x }, rg)
    }

    /// Concatenate along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Contract("concat of zero tensors".into()));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(TensorError::dim(
                    "concat",
                    format!("shape {:?} does not match trailing extents {tail:?}", s),
                ));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Channel concatenation of `[C_i, H, W]` maps.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        for &p in parts {
            self.value(p).chw()?;
        }
        self.concat(parts)
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(TensorError::dim(
                "slice",
                format!("range {start}..{} out of leading extent {}", start + len, shape[0]),
            ));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    /// Affine map `weight · x + bias` of a rank-1 input.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let ([n], [m, wn]) = (&xs[..], &ws[..]) else {
            return Err(TensorError::dim("linear", format!("expected x [n] and weight [m, n], got {xs:?} and {ws:?}")));
        };
        if n != wn || self.shape(bias) != [*m] {
            return Err(TensorError::dim("linear", format!("x {xs:?}, weight {ws:?}, bias {:?}", self.shape(bias))));
        }
        let (m, n) = (*m, *n);
        let mut out = self.value(bias).data().to_vec();
        kernels::gemm(m, n, 1, self.value(weight).data(), self.value(x).data(), &mut out, true);
        let value = Tensor::new(vec![m], out)?;
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, Op::Linear { x, weight, bias }, rg))
    }

    /// Average over the spatial extents: `[C,H,W] -> [C,1,1]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, h, w) = self.value(x).chw()?;
        let hw = (h * w) as f64;
        let data = self.value(x).data().chunks(h * w).map(|plane| plane.iter().sum::<f64>() / hw).collect();
        let value = Tensor::new(vec![c, 1, 1], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpatialMean { x }, rg))
    }

    /// Tile a `[C,1,1]` map to `[C,H,W]`.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let (c, xh, xw) = self.value(x).chw()?;
        if xh != 1 || xw != 1 || h == 0 || w == 0 {
            return Err(TensorError::dim(
                "broadcast_spatial",
                format!("expected [C,1,1] -> [C,{h},{w}], got {:?}", self.shape(x)),
            ));
        }
        let data = self.value(x).data().iter().flat_map(|&v| std::iter::repeat_n(v, h * w)).collect();
        let value = Tensor::new(vec![c, h, w], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Broadcast { x }, rg))
    }

    /// Populate `∂loss/∂v` for every node that requires grad.
    ///
    /// Gradients from any earlier pass are discarded first; nodes that
    /// require grad but do not feed `loss` end up with zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = self.nodes.iter().map(|n| n.requires_grad.then(|| vec![0.0; n.value.numel()])).collect();
        if let Some(g) = self.grads[loss.0].as_mut() {
            g[0] = 1.0;
        } else {
            return Ok(());
        }
        for i in (0..=loss.0).rev() {
            let Some(upstream) = self.grads[i].take() else { continue };
            self.propagate(i, &upstream);
            self.grads[i] = Some(upstream);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, d: &[f64]) {
        let Graph { nodes, grads } = self;
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Conv2d { input, weight, bias, geom } => {
                let mut gi = grads[input.0].take();
                let mut gw = grads[weight.0].take();
                let mut gb = grads[bias.0].take();
                kernels::conv2d_backward(
                    val(input),
                    val(weight),
                    d,
                    &geom,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                grads[input.0] = gi;
                grads[weight.0] = gw;
                grads[bias.0] = gb;
            }
            &Op::Xcorr { template, search } => {
                let (c, th, tw) = nodes[template.0].value.chw().expect("rank 3");
                let (_, sh, sw) = nodes[search.0].value.chw().expect("rank 3");
                let mut gt = grads[template.0].take();
                let mut gs = grads[search.0].take();
                kernels::xcorr_backward(
                    val(template),
                    val(search),
                    d,
                    c,
                    (th, tw),
                    (sh, sw),
                    gt.as_deref_mut(),
                    gs.as_deref_mut(),
                );
                grads[template.0] = gt;
                grads[search.0] = gs;
            }
            &Op::Unary { x, kind } => {
                let (xv, yv) = (val(x), nodes[i].value.data());
                match kind {
                    Unary::Relu => acc(grads, x, |j| if xv[j] > 0.0 { d[j] } else { 0.0 }),
                    Unary::Sigmoid => acc(grads, x, |j| d[j] * yv[j] * (1.0 - yv[j])),
                    Unary::Exp => acc(grads, x, |j| d[j] * yv[j]),
                    Unary::Log => acc(grads, x, |j| d[j] / xv[j]),
                    Unary::Softplus => acc(grads, x, |j| d[j] * kernels::sigmoid(xv[j])),
                }
            }
            &Op::Binary { a, b, kind } => {
                let (av, bv) = (val(a), val(b));
                match kind {
                    Binary::Add => {
                        acc(grads, a, |j| d[j]);
                        acc(grads, b, |j| d[j]);
                    }
                    Binary::Sub => {
                        acc(grads, a, |j| d[j]);
                        acc(grads, b, |j| -d[j]);
                    }
                    Binary::Mul => {
                        acc(grads, a, |j| d[j] * bv[j]);
                        acc(grads, b, |j| d[j] * av[j]);
                    }
                    Binary::Div => {
                        acc(grads, a, |j| d[j] / bv[j]);
                        acc(grads, b, |j| -d[j] * av[j] / (bv[j] * bv[j]));
                    }
                    Binary::Min => {
                        acc(grads, a, |j| if av[j] <= bv[j] { d[j] } else { 0.0 });
                        acc(grads, b, |j| if av[j] <= bv[j] { 0.0 } else { d[j] });
                    }
                }
            }
            &Op::Scale { x, k } => acc(grads, x, |j| d[j] * k),
            &Op::AddScalar { x } | &Op::Reshape { x } => acc(grads, x, |j| d[j]),
            &Op::Sum { x } => acc(grads, x, |_| d[0]),
            &Op::Mean { x } => {
                let n = nodes[x.0].value.numel() as f64;
                acc(grads, x, |_| d[0] / n);
            }
            &Op::SquaredL2 { x } => {
                let xv = val(x);
                acc(grads, x, |j| 2.0 * xv[j] * d[0]);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.numel();
                    acc(grads, p, |j| d[offset + j]);
                    offset += n;
                }
            }
            &Op::Slice { x, start } => {
                let row: usize = nodes[x.0].value.shape()[1..].iter().product();
                if let Some(g) = grads[x.0].as_mut() {
                    for (gv, dv) in g[start * row..].iter_mut().zip(d) {
                        *gv += dv;
                    }
                }
            }
            &Op::Linear { x, weight, bias } => {
                let (m, n) = (d.len(), nodes[x.0].value.numel());
                acc(grads, bias, |j| d[j]);
                if let Some(g) = grads[weight.0].as_mut() {
                    kernels::gemm(m, 1, n, d, val(x), g, true);
                }
                if let Some(g) = grads[x.0].as_mut() {
                    kernels::gemm_tn(n, m, 1, val(weight), d, g, true);
                }
            }
            &Op::SpatialMean { x } => {
                let (_, h, w) = nodes[x.0].value.chw().expect("rank 3");
                let hw = h * w;
                acc(grads, x, |j| d[j / hw] / hw as f64);
            }
            &Op::Broadcast { x } => {
                let (_, h, w) = nodes[i].value.chw().expect("rank 3");
                let hw = h * w;
                if let Some(g) = grads[x.0].as_mut() {
                    for (c, gv) in g.iter_mut().enumerate() {
                        *gv += d[c * hw..(c + 1) * hw].iter().sum::<f64>();
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
    if let Some(g) = grads[v.0].as_mut() {
        for (j, gv) in g.iter_mut().enumerate() {
            *gv += f(j);
        }
    }
}
