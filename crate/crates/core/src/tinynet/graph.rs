//! Reverse-mode automatic differentiation over a linear tape.

use crate::error::NetError;
use crate::field::ScalarField;
use crate::geometry::{PoolPadPlan, ResamplePlan};

use super::loss::{dice_grad, dice_value};
use super::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    Silu(NodeId),
    AvgPool2(NodeId),
    Upsample2(NodeId),
    Concat(Vec<NodeId>),
    Resample { x: NodeId, plan: ResamplePlan },
    PoolPad { x: NodeId, plan: PoolPadPlan },
    ChannelScale { x: NodeId, scale: Vec<f64> },
    Softmax(NodeId),
    Detach,
    Dice { x: NodeId, target: ScalarField },
    Dot { x: NodeId, weights: Vec<f64> },
    WeightedSum(Vec<(NodeId, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A forward computation recorded for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(context: &str, detail: String) -> NetError {
    NetError::Shape {
        context: context.to_string(),
        detail,
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Zero-padded stride-1 2-D convolution of a `[cin, h, w]` input.
pub(crate) fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut out = vec![0.0; cout * hw];
    for o in 0..cout {
        let op = &mut out[o * hw..(o + 1) * hw];
        op.fill(bias[o]);
        for i in 0..cin {
            let ip = &x[i * hw..(i + 1) * hw];
            if k == 3 && w >= 3 {
                conv3_plane(op, ip, h, w, &wt[(o * cin + i) * 9..(o * cin + i + 1) * 9]);
                continue;
            }
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = wt[((o * cin + i) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let orow = &mut op[y * w + x0..y * w + x1];
                        let irow = &ip[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3x3 fast path; adds taps in the same order as the generic loop.
fn conv3_plane(op: &mut [f64], ip: &[f64], h: usize, w: usize, k: &[f64]) {
    for ky in 0..3 {
        let (y0, y1) = (if ky == 0 { 1 } else { 0 }, if ky == 2 { h - 1 } else { h });
        let (a, b, c) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
        for y in y0..y1 {
            let sy = y + ky - 1;
            let orow = &mut op[y * w..(y + 1) * w];
            let irow = &ip[sy * w..(sy + 1) * w];
            let mut v = orow[0];
            v += b * irow[0];
            v += c * irow[1];
            orow[0] = v;
            for (o, t) in orow[1..w - 1].iter_mut().zip(irow.windows(3)) {
                let mut v = *o;
                v += a * t[0];
                v += b * t[1];
                v += c * t[2];
                *o = v;
            }
            let mut v = orow[w - 1];
            v += a * irow[w - 2];
            v += b * irow[w - 1];
            orow[w - 1] = v;
        }
    }
}

/// Gradients of the convolution with respect to input, kernel and bias.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[f64],
    cout: usize,
    k: usize,
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut gx = vec![0.0; cin * hw];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; cout];
    for o in 0..cout {
        let gp = &gout[o * hw..(o + 1) * hw];
        gb[o] = gp.iter().sum();
        for i in 0..cin {
            let ip = &x[i * hw..(i + 1) * hw];
            let gxp = &mut gx[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    if x0 >= x1 {
                        continue;
                    }
                    let widx = ((o * cin + i) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let n = x1 - x0;
                        let grow = &gp[y * w + x0..y * w + x1];
                        let irow = &ip[sy * w + sx0..sy * w + sx0 + n];
                        let xrow = &mut gxp[sy * w + sx0..sy * w + sx0 + n];
                        for ((g, iv), xg) in grow.iter().zip(irow).zip(xrow.iter_mut()) {
                            acc += g * iv;
                            *xg += wv * g;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

/// Parameter gradients from [`Graph::backward`], indexed by parameter id.
pub type ParamGrads = Vec<Option<Vec<f64>>>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    /// A trainable leaf; its gradient is reported under `param_id`.
    pub fn param(&mut self, param_id: usize, t: &Tensor) -> NodeId {
        self.push(t.clone(), Op::Param(param_id))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        let (cin, h, wd) = self.value(x).dims3();
        let ws = &self.value(w).shape;
        if ws.len() != 4 || ws[1] != cin || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel {ws:?} for input with {cin} channels")));
        }
        let (cout, k) = (ws[0], ws[2]);
        if self.value(b).shape != [cout] {
            return Err(shape_err("conv2d", format!("bias {:?}, expected [{cout}]", self.value(b).shape)));
        }
        let out = conv2d_forward(
            &self.value(x).data,
            cin,
            h,
            wd,
            &self.value(w).data,
            &self.value(b).data,
            cout,
            k,
        );
        Ok(self.push(
            Tensor {
                shape: vec![cout, h, wd],
                data: out,
            },
            Op::Conv2d { x, w, b },
        ))
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a * sigmoid(a)).collect(),
        };
        self.push(out, Op::Silu(x))
    }

    /// 2x2 mean pooling; odd trailing rows/columns are an error.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId, NetError> {
        let (c, h, w) = self.value(x).dims3();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("avg_pool2", format!("odd spatial size {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = &self.value(x).data;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * oh + y / 2) * ow + xx / 2] += 0.25 * src[(ch * h + y) * w + xx];
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![c, oh, ow],
                data: out,
            },
            Op::AvgPool2(x),
        ))
    }

    /// 2x nearest-neighbour upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let (c, h, w) = self.value(x).dims3();
        let (oh, ow) = (h * 2, w * 2);
        let src = &self.value(x).data;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push(
            Tensor {
                shape: vec![c, oh, ow],
                data: out,
            },
            Op::Upsample2(x),
        )
    }

    /// Channel concatenation; spatial sizes must agree.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, NetError> {
        let (_, h, w) = self.value(xs[0]).dims3();
        let mut c = 0;
        let mut data = Vec::new();
        for &x in xs {
            let (cx, hx, wx) = self.value(x).dims3();
            if (hx, wx) != (h, w) {
                return Err(shape_err("concat", format!("{hx}x{wx} does not match {h}x{w}")));
            }
            c += cx;
            data.extend_from_slice(&self.value(x).data);
        }
        Ok(self.push(
            Tensor {
                shape: vec![c, h, w],
                data,
            },
            Op::Concat(xs.to_vec()),
        ))
    }

    pub fn resample(&mut self, x: NodeId, plan: ResamplePlan) -> Result<NodeId, NetError> {
        let (_, h, w) = self.value(x).dims3();
        if (h, w) != (plan.in_side(), plan.in_side()) {
            return Err(shape_err("resample", format!("input {h}x{w}, plan expects {}", plan.in_side())));
        }
        let out = Tensor::from_field(&plan.apply(&self.value(x).to_field()));
        Ok(self.push(out, Op::Resample { x, plan }))
    }

    pub fn pool_pad(&mut self, x: NodeId, plan: PoolPadPlan) -> Result<NodeId, NetError> {
        let (_, h, w) = self.value(x).dims3();
        if (h, w) != (plan.in_side(), plan.in_side()) {
            return Err(shape_err("pool_pad", format!("input {h}x{w}, plan expects {}", plan.in_side())));
        }
        let out = Tensor::from_field(&plan.apply(&self.value(x).to_field()));
        Ok(self.push(out, Op::PoolPad { x, plan }))
    }

    /// Multiplies each channel by a fixed factor (spatial dropout masks).
    pub fn channel_scale(&mut self, x: NodeId, scale: Vec<f64>) -> NodeId {
        let (c, h, w) = self.value(x).dims3();
        assert_eq!(scale.len(), c);
        let mut data = self.value(x).data.clone();
        for (ch, s) in scale.iter().enumerate() {
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v *= s;
            }
        }
        self.push(
            Tensor {
                shape: vec![c, h, w],
                data,
            },
            Op::ChannelScale { x, scale },
        )
    }

    /// Per-pixel softmax across channels.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let (c, h, w) = self.value(x).dims3();
        let hw = h * w;
        let src = &self.value(x).data;
        let mut data = vec![0.0; c * hw];
        for i in 0..hw {
            let m = (0..c).map(|ch| src[ch * hw + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ch in 0..c {
                let e = (src[ch * hw + i] - m).exp();
                data[ch * hw + i] = e;
                z += e;
            }
            for ch in 0..c {
                data[ch * hw + i] /= z;
            }
        }
        self.push(
            Tensor {
                shape: vec![c, h, w],
                data,
            },
            Op::Softmax(x),
        )
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, Op::Detach)
    }

    pub fn dice_loss(&mut self, x: NodeId, target: &ScalarField) -> Result<NodeId, NetError> {
        let pred = self.value(x).to_field();
        let v = dice_value(&pred, target)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Dice {
                x,
                target: target.clone(),
            },
        ))
    }

    /// `Σ weights[i] · x[i]`.
    pub fn dot(&mut self, x: NodeId, weights: Vec<f64>) -> NodeId {
        assert_eq!(weights.len(), self.value(x).len());
        let v = self.value(x).data.iter().zip(&weights).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(v), Op::Dot { x, weights })
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let v = terms.iter().map(|&(n, w)| w * self.value(n).item()).sum();
        self.push(Tensor::scalar(v), Op::WeightedSum(terms.to_vec()))
    }

    /// Backpropagates from the scalar node `loss`; returns gradients for
    /// parameter ids `0..num_params` (`None` for parameters not reached).
    pub fn backward(&self, loss: NodeId, num_params: usize) -> ParamGrads {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut out: ParamGrads = vec![None; num_params];
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input | Op::Detach => {}
                Op::Param(pid) => add_into(&mut out[*pid], &g),
                Op::Conv2d { x, w, b } => {
                    let (cin, h, wd) = self.value(*x).dims3();
                    let ws = &self.value(*w).shape;
                    let (gx, gw, gb) = conv2d_backward(
                        &self.value(*x).data,
                        cin,
                        h,
                        wd,
                        &self.value(*w).data,
                        ws[0],
                        ws[2],
                        &g,
                    );
                    add_into(&mut grads[*x], &gx);
                    add_into(&mut grads[*w], &gw);
                    add_into(&mut grads[*b], &gb);
                }
                Op::Silu(x) => {
                    let gx: Vec<f64> = self
                        .value(*x)
                        .data
                        .iter()
                        .zip(&g)
                        .map(|(&a, &gv)| {
                            let s = sigmoid(a);
                            gv * s * (1.0 + a * (1.0 - s))
                        })
                        .collect();
                    add_into(&mut grads[*x], &gx);
                }
                Op::AvgPool2(x) => {
                    let (c, h, w) = self.value(*x).dims3();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[(ch * h + y) * w + xx] = 0.25 * g[(ch * oh + y / 2) * ow + xx / 2];
                            }
                        }
                    }
                    add_into(&mut grads[*x], &gx);
                }
                Op::Upsample2(x) => {
                    let (c, h, w) = self.value(*x).dims3();
                    let (oh, ow) = (h * 2, w * 2);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
                            }
                        }
                    }
                    add_into(&mut grads[*x], &gx);
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        add_into(&mut grads[x], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Resample { x, plan } => {
                    let gf = Tensor {
                        shape: self.nodes[id].value.shape.clone(),
                        data: g,
                    }
                    .to_field();
                    add_into(&mut grads[*x], plan.apply_adjoint(&gf).data());
                }
                Op::PoolPad { x, plan } => {
                    let gf = Tensor {
                        shape: self.nodes[id].value.shape.clone(),
                        data: g,
                    }
                    .to_field();
                    add_into(&mut grads[*x], plan.apply_adjoint(&gf).data());
                }
                Op::ChannelScale { x, scale } => {
                    let (_, h, w) = self.value(*x).dims3();
                    let mut gx = g;
                    for (ch, s) in scale.iter().enumerate() {
                        for v in &mut gx[ch * h * w..(ch + 1) * h * w] {
                            *v *= s;
                        }
                    }
                    add_into(&mut grads[*x], &gx);
                }
                Op::Softmax(x) => {
                    let (c, h, w) = self.value(*x).dims3();
                    let hw = h * w;
                    let y = &self.nodes[id].value.data;
                    let mut gx = vec![0.0; c * hw];
                    for i in 0..hw {
                        let dot: f64 = (0..c).map(|ch| y[ch * hw + i] * g[ch * hw + i]).sum();
                        for ch in 0..c {
                            gx[ch * hw + i] = y[ch * hw + i] * (g[ch * hw + i] - dot);
                        }
                    }
                    add_into(&mut grads[*x], &gx);
                }
                Op::Dice { x, target } => {
                    let pred = self.value(*x).to_field();
                    let gp = dice_grad(&pred, target).expect("validated in forward");
                    let gx: Vec<f64> = gp.data().iter().map(|v| v * g[0]).collect();
                    add_into(&mut grads[*x], &gx);
                }
                Op::Dot { x, weights } => {
                    let gx: Vec<f64> = weights.iter().map(|w| w * g[0]).collect();
                    add_into(&mut grads[*x], &gx);
                }
                Op::WeightedSum(terms) => {
                    for &(n, w) in terms {
                        add_into(&mut grads[n], &[w * g[0]]);
                    }
                }
            }
        }
        out
    }
}
