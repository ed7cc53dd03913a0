//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push gradients back to its inputs. [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order since inputs always precede outputs.

use super::tensor::Tensor;
use crate::geometry::wrap_angle;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        batch: usize,
        inp: usize,
        out: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
        cols: usize,
    },
    ConcatCols(Vec<(Var, usize)>),
    ConcatRows(Vec<Var>),
    Index0 {
        x: Var,
        index: usize,
    },
    Sum(Var),
    DotConst(Var, Vec<f64>),
    PoseLoss {
        pred: Var,
        dt: Vec<f64>,
        dr: Vec<f64>,
        gamma: f64,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copy a recorded value out as a tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("valid node")
    }

    /// Record an input. Gradients are tracked when the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.leaf(&t))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.leaf(&Tensor::zeros(shape))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn as_matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{what}: expected a matrix, got {s:?}"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * s).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), v, Op::Scale(a, s), ng)
    }

    /// Elementwise product with a constant, e.g. a dropout mask.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::Shape("mul_const length".into()));
        }
        let v = self.value(a).iter().zip(&c).map(|(x, m)| x * m).collect();
        let ng = self.needs(a);
        Ok(self.push(self.shape(a).to_vec(), v, Op::MulConst(a, c), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), v, Op::Tanh(a), ng)
    }

    /// Elementwise `max(x, slope·x)` for `0 ≤ slope ≤ 1`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self
            .value(a)
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), v, Op::LeakyRelu(a, slope), ng)
    }

    /// `x · wᵀ + b` for `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, inp) = self.as_matrix(x, "linear input")?;
        let (out, w_in) = self.as_matrix(w, "linear weight")?;
        if w_in != inp {
            return Err(Error::Shape(format!("linear: input width {inp}, weight expects {w_in}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != out {
                return Err(Error::Shape(format!("linear: bias length {} != {out}", self.value(b).len())));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = vec![0.0; batch * out];
        for bi in 0..batch {
            let xr = &xv[bi * inp..(bi + 1) * inp];
            for o in 0..out {
                let wr = &wv[o * inp..(o + 1) * inp];
                y[bi * out + o] = xr.iter().zip(wr).map(|(p, q)| p * q).sum();
            }
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_mut(out) {
                for (yo, bo) in row.iter_mut().zip(bv) {
                    *yo += bo;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            vec![batch, out],
            y,
            Op::Linear {
                x,
                w,
                b,
                batch,
                inp,
                out,
            },
            ng,
        ))
    }

    /// 2-D cross-correlation of `x: [N, C, H, W]` with `w: [O, C, k, k]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = match self.shape(x) {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(Error::Shape(format!("conv2d input must be [N,C,H,W], got {s:?}"))),
        };
        let (o, wc, k) = match self.shape(w) {
            [o, wc, k1, k2] if k1 == k2 => (*o, *wc, *k1),
            s => return Err(Error::Shape(format!("conv2d kernel must be [O,C,k,k], got {s:?}"))),
        };
        if wc != c {
            return Err(Error::Shape(format!("conv2d: input has {c} channels, kernel {wc}")));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::Shape(format!(
                "conv2d: kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(Error::Shape("conv2d bias length".into()));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let g = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let q = c * k * k;
        let p = ho * wo;
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; n * o * p];
        let mut col = vec![0.0; q * p];
        for ni in 0..n {
            im2col(&xv[ni * c * h * wd..(ni + 1) * c * h * wd], &g, &mut col);
            let dst = &mut out[ni * o * p..(ni + 1) * o * p];
            for oi in 0..o {
                let drow = &mut dst[oi * p..(oi + 1) * p];
                for qi in 0..q {
                    let wq = wv[oi * q + qi];
                    if wq == 0.0 {
                        continue;
                    }
                    for (d, s) in drow.iter_mut().zip(&col[qi * p..(qi + 1) * p]) {
                        *d += wq * s;
                    }
                }
            }
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for ni in 0..n {
                for oi in 0..o {
                    let start = (ni * o + oi) * p;
                    for v in &mut out[start..start + p] {
                        *v += bv[oi];
                    }
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(vec![n, o, ho, wo], out, Op::Conv2d { x, w, b, g }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape(a))));
        }
        let v = self.value(a).to_vec();
        let ng = self.needs(a);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(a), ng))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.as_matrix(x, "slice_cols")?;
        if start + len > cols || len == 0 {
            return Err(Error::Shape(format!("slice {start}..{} of {cols} columns", start + len)));
        }
        let xv = self.value(x);
        let v = (0..rows)
            .flat_map(|r| xv[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        let ng = self.needs(x);
        Ok(self.push(vec![rows, len], v, Op::SliceCols { x, start, len, cols }, ng))
    }

    /// Concatenate matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (rows, _) = self.as_matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.as_matrix(p, "concat_cols")?;
            if r != rows {
                return Err(Error::Shape(format!("concat_cols: {r} rows vs {rows}")));
            }
            widths.push((p, c));
        }
        let total: usize = widths.iter().map(|(_, c)| c).sum();
        let mut v = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(p, c) in &widths {
                v.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, total], v, Op::ConcatCols(widths), ng))
    }

    /// Concatenate along the leading axis; trailing dimensions must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut v = Vec::new();
        for &p in parts {
            if self.shape(p)[1..] != tail[..] {
                return Err(Error::Shape(format!(
                    "concat_rows: {:?} vs {:?}",
                    self.shape(p),
                    self.shape(first)
                )));
            }
            lead += self.shape(p)[0];
            v.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(shape, v, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Slice `index` along the leading axis, keeping a leading axis of size 1
    /// for matrices and dropping it for higher ranks.
    pub fn index0(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if index >= shape[0] {
            return Err(Error::Shape(format!("index {index} out of {}", shape[0])));
        }
        let inner: usize = shape[1..].iter().product();
        let v = self.value(x)[index * inner..(index + 1) * inner].to_vec();
        let out_shape = if shape.len() <= 2 {
            vec![1, inner]
        } else {
            shape[1..].to_vec()
        };
        let ng = self.needs(x);
        Ok(self.push(out_shape, v, Op::Index0 { x, index }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum(a), ng)
    }

    /// `Σ a_i w_i` against constant weights; turns any output into a scalar for checking.
    pub fn dot_const(&mut self, a: Var, w: Vec<f64>) -> Result<Var> {
        if w.len() != self.value(a).len() {
            return Err(Error::Shape("dot_const length".into()));
        }
        let s = self.value(a).iter().zip(&w).map(|(x, y)| x * y).sum();
        let ng = self.needs(a);
        Ok(self.push(vec![1], vec![s], Op::DotConst(a, w), ng))
    }

    /// Mean over the batch of `‖t̂ − t‖² + γ‖wrap(r̂ − r)‖²` for `pred: [K, 6]`.
    pub fn pose_loss(&mut self, pred: Var, truth: &[f64], gamma: f64) -> Result<Var> {
        let (k, six) = self.as_matrix(pred, "pose_loss")?;
        if six != 6 || truth.len() != k * 6 {
            return Err(Error::Shape(format!(
                "pose_loss: prediction {:?} vs {} truth values",
                self.shape(pred),
                truth.len()
            )));
        }
        let pv = self.value(pred);
        let mut dt = Vec::with_capacity(k * 3);
        let mut dr = Vec::with_capacity(k * 3);
        for i in 0..k {
            for j in 0..3 {
                dt.push(pv[i * 6 + j] - truth[i * 6 + j]);
                dr.push(wrap_angle(pv[i * 6 + 3 + j] - truth[i * 6 + 3 + j]));
            }
        }
        let total: f64 = dt.iter().map(|d| d * d).sum::<f64>() + gamma * dr.iter().map(|d| d * d).sum::<f64>();
        let ng = self.needs(pred);
        Ok(self.push(
            vec![1],
            vec![total / k as f64],
            Op::PoseLoss { pred, dt, dr, gamma },
            ng,
        ))
    }

    /// Gradient of the last `backward` root with respect to `v`, if any flowed there.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Back-propagate from the scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].needs_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].shape.iter().product();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The op is moved out temporarily so parent gradient buffers can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(*a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.acc(*b) {
                    axpy(gb, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(*a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.acc(*b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.clone();
                    let ga = self.acc(*a).expect("needs grad");
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(&bv) {
                        *d += gi * bi;
                    }
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.clone();
                    let gb = self.acc(*b).expect("needs grad");
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(&av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(*a) {
                    axpy(ga, g, *s);
                }
            }
            Op::MulConst(a, c) => {
                if let Some(ga) = self.acc(*a) {
                    for ((d, gi), ci) in ga.iter_mut().zip(g).zip(c) {
                        *d += gi * ci;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                if let Some(ga) = self.acc(*a) {
                    for ((d, gi), yi) in ga.iter_mut().zip(g).zip(&y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                self.nodes[i].value = y;
            }
            Op::Tanh(a) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                if let Some(ga) = self.acc(*a) {
                    for ((d, gi), yi) in ga.iter_mut().zip(g).zip(&y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                self.nodes[i].value = y;
            }
            Op::LeakyRelu(a, slope) => {
                let x = std::mem::take(&mut self.nodes[a.0].value);
                if let Some(ga) = self.acc(*a) {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(&x) {
                        *d += if *xi >= 0.0 { *gi } else { gi * slope };
                    }
                }
                self.nodes[a.0].value = x;
            }
            Op::Linear {
                x,
                w,
                b,
                batch,
                inp,
                out,
            } => {
                let (batch, inp, out) = (*batch, *inp, *out);
                if self.needs(*x) {
                    let wv = std::mem::take(&mut self.nodes[w.0].value);
                    let gx = self.acc(*x).expect("needs grad");
                    for bi in 0..batch {
                        let gxr = &mut gx[bi * inp..(bi + 1) * inp];
                        for o in 0..out {
                            let go = g[bi * out + o];
                            if go != 0.0 {
                                axpy(gxr, &wv[o * inp..(o + 1) * inp], go);
                            }
                        }
                    }
                    self.nodes[w.0].value = wv;
                }
                if self.needs(*w) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    let gw = self.acc(*w).expect("needs grad");
                    for bi in 0..batch {
                        let xr = &xv[bi * inp..(bi + 1) * inp];
                        for o in 0..out {
                            let go = g[bi * out + o];
                            if go != 0.0 {
                                axpy(&mut gw[o * inp..(o + 1) * inp], xr, go);
                            }
                        }
                    }
                    self.nodes[x.0].value = xv;
                }
                if let Some(gb) = b.and_then(|b| self.acc(b)) {
                    for row in g.chunks(out) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Conv2d { x, w, b, g: geom } => self.backprop_conv(*x, *w, *b, geom, g),
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(*a) {
                    axpy(ga, g, 1.0);
                }
            }
            Op::SliceCols { x, start, len, cols } => {
                let (start, len, cols) = (*start, *len, *cols);
                if let Some(gx) = self.acc(*x) {
                    for (r, grow) in g.chunks(len).enumerate() {
                        axpy(&mut gx[r * cols + start..r * cols + start + len], grow, 1.0);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total: usize = parts.iter().map(|(_, c)| c).sum();
                let mut offset = 0;
                for &(p, c) in parts {
                    if let Some(gp) = self.acc(p) {
                        for (r, grow) in g.chunks(total).enumerate() {
                            axpy(&mut gp[r * c..(r + 1) * c], &grow[offset..offset + c], 1.0);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if let Some(gp) = self.acc(p) {
                        axpy(gp, &g[offset..offset + n], 1.0);
                    }
                    offset += n;
                }
            }
            Op::Index0 { x, index } => {
                let n = g.len();
                let index = *index;
                if let Some(gx) = self.acc(*x) {
                    axpy(&mut gx[index * n..(index + 1) * n], g, 1.0);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(*a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::DotConst(a, w) => {
                if let Some(ga) = self.acc(*a) {
                    axpy(ga, w, g[0]);
                }
            }
            Op::PoseLoss { pred, dt, dr, gamma } => {
                let k = dt.len() / 3;
                let s = 2.0 * g[0] / k as f64;
                if let Some(gp) = self.acc(*pred) {
                    for i in 0..k {
                        for j in 0..3 {
                            gp[i * 6 + j] += s * dt[i * 3 + j];
                            gp[i * 6 + 3 + j] += s * gamma * dr[i * 3 + j];
                        }
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn backprop_conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[f64]) {
        let ConvGeom { n, c, h, w: wd, o, k, .. } = *geom;
        let q = c * k * k;
        let p = geom.ho * geom.wo;
        let xv = std::mem::take(&mut self.nodes[x.0].value);
        let wv = std::mem::take(&mut self.nodes[w.0].value);
        let mut col = vec![0.0; q * p];
        let mut dcol = vec![0.0; q * p];
        let need_x = self.needs(x);
        let need_w = self.needs(w);
        for ni in 0..n {
            let gout = &g[ni * o * p..(ni + 1) * o * p];
            if need_w {
                im2col(&xv[ni * c * h * wd..(ni + 1) * c * h * wd], geom, &mut col);
                let gw = self.acc(w).expect("needs grad");
                for oi in 0..o {
                    let grow = &gout[oi * p..(oi + 1) * p];
                    for qi in 0..q {
                        gw[oi * q + qi] += grow
                            .iter()
                            .zip(&col[qi * p..(qi + 1) * p])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            if need_x {
                dcol.iter_mut().for_each(|v| *v = 0.0);
                for oi in 0..o {
                    let grow = &gout[oi * p..(oi + 1) * p];
                    for qi in 0..q {
                        let wq = wv[oi * q + qi];
                        if wq != 0.0 {
                            axpy(&mut dcol[qi * p..(qi + 1) * p], grow, wq);
                        }
                    }
                }
                let gx = self.acc(x).expect("needs grad");
                col2im_add(&dcol, geom, &mut gx[ni * c * h * wd..(ni + 1) * c * h * wd]);
            }
        }
        if let Some(gb) = b.and_then(|b| self.acc(b)) {
            for ni in 0..n {
                for (oi, gbo) in gb.iter_mut().enumerate() {
                    let start = (ni * o + oi) * p;
                    *gbo += g[start..start + p].iter().sum::<f64>();
                }
            }
        }
        self.nodes[x.0].value = xv;
        self.nodes[w.0].value = wv;
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.ho * g.wo;
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let qi = (ci * g.k + ky) * g.k + kx;
                let row = &mut col[qi * p..(qi + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        row[oy * g.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(ci * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.ho * g.wo;
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let qi = (ci * g.k + ky) * g.k + kx;
                let row = &col[qi * p..(qi + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx[(ci * g.h + iy as usize) * g.w + ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap().with_requires_grad(true)
    }

    #[test]
    fn product_rule_through_shared_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[1], vec![3.0]));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
        let x = tape.leaf(&param(&[2], vec![0.5, -0.5]));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[2], vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[3], vec![0.0, -1.0, 2.0]));
        let y = tape.leaky_relu(x, 0.1);
        assert_eq!(tape.value(y), &[0.0, -0.1, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap()[1], 0.1);
    }

    #[test]
    fn conv_shape_arithmetic_and_errors() {
        let mut tape = Tape::new();
        let x = tape.zeros(&[1, 2, 32, 128]);
        let w = tape.zeros(&[4, 2, 7, 7]);
        let y = tape.conv2d(x, w, None, 2, 3).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 16, 64]);
        let bad = tape.zeros(&[4, 3, 7, 7]);
        assert!(tape.conv2d(x, bad, None, 1, 0).is_err());
    }

    #[test]
    fn conv_identity_and_box_filter() {
        let mut tape = Tape::new();
        let img: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.constant(&[1, 1, 4, 5], img.clone()).unwrap();
        let one = tape.constant(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = tape.conv2d(x, one, None, 1, 0).unwrap();
        assert_eq!(tape.value(y), img.as_slice());

        let c = tape.constant(&[1, 1, 5, 6], vec![2.5; 30]).unwrap();
        let ones = tape.constant(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = tape.conv2d(c, ones, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 4]);
        assert!(tape.value(y).iter().all(|&v| (v - 22.5).abs() < 1e-12));
    }

    #[test]
    fn slicing_and_concatenation_round_trip() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let a = tape.slice_cols(x, 0, 1).unwrap();
        let b = tape.slice_cols(x, 1, 2).unwrap();
        let y = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(y), tape.value(x).to_vec().as_slice());
        let r1 = tape.index0(x, 1).unwrap();
        assert_eq!(tape.value(r1), &[4.0, 5.0, 6.0]);
        let r0 = tape.index0(x, 0).unwrap();
        let stacked = tape.concat_rows(&[r0, r1]).unwrap();
        assert_eq!(tape.shape(stacked), &[2, 3]);
        let s = tape.dot_const(stacked, vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }
}
