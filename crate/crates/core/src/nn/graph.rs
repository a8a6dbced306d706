//! A small reverse-mode autodiff tape over row-major 2D tensors.
//!
//! Every node is evaluated eagerly when it is recorded. Voxel grids are stored
//! channels-last as `[voxels, channels]` with the spatial layout carried by the
//! convolution ops.

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Leaky rectifier with negative slope 0.1.
    LeakyRelu,
    /// `1.7159 * tanh(2x / 3)`; odd, so zero maps to zero.
    ScaledTanh,
}

const LEAK: f64 = 0.1;
const TANH_A: f64 = 1.7159;
const TANH_B: f64 = 2.0 / 3.0;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAK * x
                }
            }
            Self::ScaledTanh => TANH_A * (TANH_B * x).tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Self::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAK
                }
            }
            Self::ScaledTanh => {
                let th = (TANH_B * x).tanh();
                TANH_A * TANH_B * (1.0 - th * th)
            }
        }
    }
}

/// Spatial layout of a same-padded, stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub dims: [usize; 3],
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn tap_offset(&self, tap: usize) -> [isize; 3] {
        let [_, ky, kz] = self.kernel;
        let k = [tap / (ky * kz), (tap / kz) % ky, tap % kz];
        [0, 1, 2].map(|a| (k[a] as isize - (self.kernel[a] / 2) as isize) * self.dilation[a] as isize)
    }

    fn voxels(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Scalar loss summary kept alongside the loss node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsLossParts {
    pub mse: f64,
    pub std: f64,
    pub std_reg: f64,
    pub total: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Act { x: Var, act: Activation },
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    SegmentMean { x: Var, seg: Vec<Option<usize>>, counts: Vec<usize> },
    Conv { x: Var, w: Var, geom: ConvGeom },
    AvgPool2 { x: Var, dims: [usize; 2] },
    Upsample2 { x: Var, dims: [usize; 2] },
    EpsLoss { pred: Var, target: Vec<f64>, parts: EpsLossParts },
    Reshape { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a backward pass, indexed like the parameter store.
pub struct ParamGrads(pub Vec<Vec<f64>>);

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Mean squared error, population standard deviation of `pred` and the combined loss.
pub fn eps_loss_parts(pred: &[f64], target: &[f64], lambda: f64) -> EpsLossParts {
    let m = pred.len() as f64;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / m;
    let mean = pred.iter().sum::<f64>() / m;
    let std = (pred.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / m).sqrt();
    let std_reg = smooth_l1(std - 1.0);
    EpsLossParts {
        mse,
        std,
        std_reg,
        total: mse + lambda * std_reg,
        lambda,
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.data.iter().all(|v| !v.is_nan()), "NaN produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let (rows, cols) = p.matrix_shape();
        self.push(Tensor::new(rows, cols, p.data.clone()), Op::Param(id), true)
    }

    /// `x · wᵀ + b` with `w` shaped `[out, in]` and `b` shaped `[1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols, wv.cols, "linear: input width {} vs weight {}", xv.cols, wv.cols);
        let (n, din, dout) = (xv.rows, xv.cols, wv.rows);
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for r in 0..n {
                out[r * dout..(r + 1) * dout].copy_from_slice(bv);
            }
        }
        // out += x · wᵀ
        gemm(n, din, dout, &xv.data, (din, 1), &wv.data, (1, din), &mut out, dout);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(n, dout, out), Op::Linear { x, w, b }, needs)
    }

    pub fn act(&mut self, x: Var, act: Activation) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|&v| act.apply(v)).collect());
        let needs = self.needs(x);
        self.push(t, Op::Act { x, act }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add: shape mismatch");
        let t = Tensor::new(av.rows, av.cols, av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect());
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "mul: shape mismatch");
        let t = Tensor::new(av.rows, av.cols, av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect());
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), needs)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows, rows, "concat: row mismatch");
                out.extend_from_slice(v.row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(rows, cols, out), Op::Concat(parts.to_vec()), needs)
    }

    /// Row gather: output row `i` is input row `idx[i]`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * xv.cols);
        for &i in &idx {
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::new(idx.len(), xv.cols, out);
        let needs = self.needs(x);
        self.push(t, Op::Gather { x, idx }, needs)
    }

    /// Mean of the rows sharing a segment id; rows with `None` are dropped and
    /// empty segments are zero.
    pub fn segment_mean(&mut self, x: Var, seg: Vec<Option<usize>>, segments: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(seg.len(), xv.rows, "segment_mean: one id per row");
        let c = xv.cols;
        let mut counts = vec![0usize; segments];
        let mut out = vec![0.0; segments * c];
        for (r, s) in seg.iter().enumerate() {
            if let Some(s) = *s {
                counts[s] += 1;
                for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
        }
        for (s, &n) in counts.iter().enumerate() {
            if n > 0 {
                let inv = 1.0 / n as f64;
                out[s * c..(s + 1) * c].iter_mut().for_each(|v| *v *= inv);
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(segments, c, out), Op::SegmentMean { x, seg, counts }, needs)
    }

    /// Same-padded, stride-1, bias-free convolution. `w` is `[taps * cout, cin]`.
    pub fn conv(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.rows, geom.voxels(), "conv: grid size mismatch");
        assert_eq!(xv.cols, geom.cin, "conv: input channels");
        assert_eq!(wv.rows * wv.cols, geom.taps() * geom.cout * geom.cin, "conv: weight size");
        let mut out = vec![0.0; geom.voxels() * geom.cout];
        conv_forward(&xv.data, &wv.data, &geom, &mut out);
        let needs = self.needs(x) || self.needs(w);
        self.push(Tensor::new(geom.voxels(), geom.cout, out), Op::Conv { x, w, geom }, needs)
    }

    /// 2x2 average pooling over a `[nx * ny, c]` plane.
    pub fn avg_pool2(&mut self, x: Var, dims: [usize; 2]) -> Var {
        let xv = self.value(x);
        let [nx, ny] = dims;
        let (hx, hy, c) = (nx / 2, ny / 2, xv.cols);
        let mut out = vec![0.0; hx * hy * c];
        for ix in 0..nx {
            for iy in 0..ny {
                let o = ((ix / 2) * hy + iy / 2) * c;
                for (k, v) in xv.row(ix * ny + iy).iter().enumerate() {
                    out[o + k] += 0.25 * v;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(hx * hy, c, out), Op::AvgPool2 { x, dims }, needs)
    }

    /// Nearest-neighbor 2x upsampling to a `dims` plane.
    pub fn upsample2(&mut self, x: Var, dims: [usize; 2]) -> Var {
        let xv = self.value(x);
        let [nx, ny] = dims;
        let (hy, c) = (ny / 2, xv.cols);
        let mut out = Vec::with_capacity(nx * ny * c);
        for ix in 0..nx {
            for iy in 0..ny {
                out.extend_from_slice(xv.row((ix / 2) * hy + iy / 2));
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(nx * ny, c, out), Op::Upsample2 { x, dims }, needs)
    }

    /// Reinterprets the row-major buffer with a new row width.
    pub fn reshape(&mut self, x: Var, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.data.len() % cols, 0, "reshape: {} values into width {cols}", xv.data.len());
        let t = Tensor::new(xv.data.len() / cols, cols, xv.data.clone());
        let needs = self.needs(x);
        self.push(t, Op::Reshape { x }, needs)
    }

    /// Scalar `mse(pred, target) + lambda * smooth_l1(std(pred) - 1)`.
    pub fn eps_loss(&mut self, pred: Var, target: Vec<f64>, lambda: f64) -> (Var, EpsLossParts) {
        let pv = self.value(pred);
        assert_eq!(pv.data.len(), target.len(), "loss: shape mismatch");
        let parts = eps_loss_parts(&pv.data, &target, lambda);
        let needs = self.needs(pred);
        let v = self.push(
            Tensor::new(1, 1, vec![parts.total]),
            Op::EpsLoss { pred, target, parts },
            needs,
        );
        (v, parts)
    }

    /// Backpropagates from the scalar `root` and collects parameter gradients.
    pub fn backward(&self, root: Var, store: &ParamStore) -> ParamGrads {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.data.len()]);
        let mut out = ParamGrads(store.iter().map(|p| vec![0.0; p.data.len()]).collect());
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, b) in out.0[id.0].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, din, dout) = (xv.rows, xv.cols, wv.rows);
                    if self.needs(*x) {
                        // dx += g · w
                        let dx = grad_buf(&mut grads, *x, n * din);
                        gemm(n, dout, din, &g, (dout, 1), &wv.data, (din, 1), dx, din);
                    }
                    if self.needs(*w) {
                        // dw += gᵀ · x
                        let dw = grad_buf(&mut grads, *w, dout * din);
                        gemm(dout, n, din, &g, (1, dout), &xv.data, (din, 1), dw, din);
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            let db = grad_buf(&mut grads, *b, dout);
                            for r in 0..n {
                                for (d, go) in db.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                                    *d += go;
                                }
                            }
                        }
                    }
                }
                Op::Act { x, act } => {
                    let xv = &self.value(*x).data;
                    let dx = grad_buf(&mut grads, *x, xv.len());
                    for ((d, gv), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += gv * act.derivative(*xi);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            let d = grad_buf(&mut grads, v, g.len());
                            d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if self.needs(v) {
                            let ov = &self.value(other).data;
                            let d = grad_buf(&mut grads, v, g.len());
                            for ((d, gv), o) in d.iter_mut().zip(&g).zip(ov) {
                                *d += gv * o;
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows;
                    let cols = node.value.cols;
                    let mut start = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        if self.needs(p) {
                            let d = grad_buf(&mut grads, p, rows * pc);
                            for r in 0..rows {
                                let src = &g[r * cols + start..r * cols + start + pc];
                                for (dv, s) in d[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *dv += s;
                                }
                            }
                        }
                        start += pc;
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = self.value(*x);
                    let c = xv.cols;
                    let d = grad_buf(&mut grads, *x, xv.data.len());
                    for (r, &src) in idx.iter().enumerate() {
                        for (dv, gv) in d[src * c..(src + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *dv += gv;
                        }
                    }
                }
                Op::SegmentMean { x, seg, counts } => {
                    let xv = self.value(*x);
                    let c = xv.cols;
                    let d = grad_buf(&mut grads, *x, xv.data.len());
                    for (r, s) in seg.iter().enumerate() {
                        if let Some(s) = *s {
                            let inv = 1.0 / counts[s] as f64;
                            for (dv, gv) in d[r * c..(r + 1) * c].iter_mut().zip(&g[s * c..(s + 1) * c]) {
                                *dv += gv * inv;
                            }
                        }
                    }
                }
                Op::Conv { x, w, geom } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if self.needs(*x) {
                        let dx = grad_buf(&mut grads, *x, xv.data.len());
                        conv_backward_input(&g, &wv.data, geom, dx);
                    }
                    if self.needs(*w) {
                        let dw = grad_buf(&mut grads, *w, wv.data.len());
                        conv_backward_weight(&g, &xv.data, geom, dw);
                    }
                }
                Op::AvgPool2 { x, dims } => {
                    let xv = self.value(*x);
                    let [nx, ny] = *dims;
                    let (hy, c) = (ny / 2, xv.cols);
                    let d = grad_buf(&mut grads, *x, xv.data.len());
                    for ix in 0..nx {
                        for iy in 0..ny {
                            let o = ((ix / 2) * hy + iy / 2) * c;
                            let r = (ix * ny + iy) * c;
                            for k in 0..c {
                                d[r + k] += 0.25 * g[o + k];
                            }
                        }
                    }
                }
                Op::Upsample2 { x, dims } => {
                    let xv = self.value(*x);
                    let [nx, ny] = *dims;
                    let (hy, c) = (ny / 2, xv.cols);
                    let d = grad_buf(&mut grads, *x, xv.data.len());
                    for ix in 0..nx {
                        for iy in 0..ny {
                            let o = ((ix / 2) * hy + iy / 2) * c;
                            let r = (ix * ny + iy) * c;
                            for k in 0..c {
                                d[o + k] += g[r + k];
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    let d = grad_buf(&mut grads, *x, g.len());
                    d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                }
                Op::EpsLoss { pred, target, parts } => {
                    let pv = &self.value(*pred).data;
                    let m = pv.len() as f64;
                    let mean = pv.iter().sum::<f64>() / m;
                    let reg = if parts.std > 0.0 {
                        parts.lambda * smooth_l1_grad(parts.std - 1.0) / (m * parts.std)
                    } else {
                        0.0
                    };
                    let d = grad_buf(&mut grads, *pred, pv.len());
                    for ((dv, p), t) in d.iter_mut().zip(pv).zip(target) {
                        *dv += g[0] * (2.0 * (p - t) / m + reg * (p - mean));
                    }
                }
            }
        }
        out
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Iterates `(out_voxel, in_voxel)` pairs of a tap, clipped to the grid.
#[inline]
fn for_each_pair(geom: &ConvGeom, tap: usize, mut f: impl FnMut(usize, usize)) {
    let off = geom.tap_offset(tap);
    let [nx, ny, nz] = geom.dims;
    let range = |n: usize, o: isize| {
        let lo = (-o).max(0) as usize;
        let hi = (n as isize - o.max(0)).max(0) as usize;
        lo..hi.max(lo)
    };
    let (rx, ry, rz) = (range(nx, off[0]), range(ny, off[1]), range(nz, off[2]));
    for ix in rx {
        let sx = (ix as isize + off[0]) as usize;
        for iy in ry.clone() {
            let sy = (iy as isize + off[1]) as usize;
            let base_o = (ix * ny + iy) * nz;
            let base_i = (sx * ny + sy) * nz;
            for iz in rz.clone() {
                let sz = (iz as isize + off[2]) as usize;
                f(base_o + iz, base_i + sz);
            }
        }
    }
}

/// `c = a · b + beta * c` for row-major `c` (`m × n`, row stride `ldc`); `a`
/// and `b` are given as (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_beta(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    ldc: usize,
    beta: f64,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, k, rsa, csa) < a.len(), "gemm: lhs out of range");
    assert!(last(k, n, rsb, csb) < b.len(), "gemm: rhs out of range");
    assert!(last(m, n, ldc, 1) < c.len(), "gemm: output out of range");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `c += a · b`; see [`gemm_beta`].
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], ldc: usize) {
    gemm_beta(m, k, n, a, sa, b, sb, c, ldc, 1.0);
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` on a reused thread-local buffer of `len` values with unspecified
/// contents; `f` must overwrite whatever it reads.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.take();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        let r = f(&mut buf[..len]);
        cell.replace(buf);
        r
    })
}

/// Unfolds the input into `[voxels, taps * cin]`, writing every entry
/// (out-of-grid taps as zeros).
fn im2col(x: &[f64], geom: &ConvGeom, col: &mut [f64]) {
    let cin = geom.cin;
    let taps = geom.taps();
    let width = taps * cin;
    let [nx, ny, nz] = geom.dims;
    let offsets: Vec<[isize; 3]> = (0..taps).map(|t| geom.tap_offset(t)).collect();
    let dims = [nx as isize, ny as isize, nz as isize];
    let mut v = 0;
    for ix in 0..nx as isize {
        for iy in 0..ny as isize {
            for iz in 0..nz as isize {
                let row = &mut col[v * width..(v + 1) * width];
                for (tap, off) in offsets.iter().enumerate() {
                    let s = [ix + off[0], iy + off[1], iz + off[2]];
                    let dst = &mut row[tap * cin..(tap + 1) * cin];
                    if (0..3).all(|a| (0..dims[a]).contains(&s[a])) {
                        let vi = ((s[0] as usize * ny) + s[1] as usize) * nz + s[2] as usize;
                        dst.copy_from_slice(&x[vi * cin..(vi + 1) * cin]);
                    } else {
                        dst.fill(0.0);
                    }
                }
                v += 1;
            }
        }
    }
}

/// Weights `[taps, cout, cin]` rearranged to `[taps * cin, cout]`.
fn weights_by_tap_input(w: &[f64], geom: &ConvGeom) -> Vec<f64> {
    let (cin, cout) = (geom.cin, geom.cout);
    let mut wr = vec![0.0; w.len()];
    for tap in 0..geom.taps() {
        for co in 0..cout {
            for ci in 0..cin {
                wr[(tap * cin + ci) * cout + co] = w[(tap * cout + co) * cin + ci];
            }
        }
    }
    wr
}

fn conv_forward(x: &[f64], w: &[f64], geom: &ConvGeom, out: &mut [f64]) {
    let width = geom.taps() * geom.cin;
    let wr = weights_by_tap_input(w, geom);
    with_scratch(geom.voxels() * width, |col| {
        im2col(x, geom, col);
        gemm(geom.voxels(), width, geom.cout, col, (width, 1), &wr, (geom.cout, 1), out, geom.cout);
    });
}

fn conv_backward_input(g: &[f64], w: &[f64], geom: &ConvGeom, dx: &mut [f64]) {
    let (cin, cout) = (geom.cin, geom.cout);
    let width = geom.taps() * cin;
    let wr = weights_by_tap_input(w, geom);
    with_scratch(geom.voxels() * width, |dcol| {
        gemm_beta(geom.voxels(), cout, width, g, (cout, 1), &wr, (1, cout), dcol, width, 0.0);
        for tap in 0..geom.taps() {
            for_each_pair(geom, tap, |vo, vi| {
                let src = &dcol[vo * width + tap * cin..vo * width + (tap + 1) * cin];
                for (d, s) in dx[vi * cin..(vi + 1) * cin].iter_mut().zip(src) {
                    *d += s;
                }
            });
        }
    });
}

fn conv_backward_weight(g: &[f64], x: &[f64], geom: &ConvGeom, dw: &mut [f64]) {
    let (cin, cout) = (geom.cin, geom.cout);
    let width = geom.taps() * cin;
    let mut dwr = vec![0.0; width * cout];
    with_scratch(geom.voxels() * width, |col| {
        im2col(x, geom, col);
        gemm(width, geom.voxels(), cout, col, (1, width), g, (cout, 1), &mut dwr, cout);
    });
    for tap in 0..geom.taps() {
        for co in 0..cout {
            for ci in 0..cin {
                dw[(tap * cout + co) * cin + ci] += dwr[(tap * cin + ci) * cout + co];
            }
        }
    }
}
