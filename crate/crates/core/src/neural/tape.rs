use std::rc::Rc;

use super::{gemm, Gradients, NeuralError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    Relu(Var),
    Concat(Vec<Var>),
    /// out[i] = x[idx[i]]
    Gather {
        x: Var,
        idx: Rc<[u32]>,
    },
    /// out[idx[i]] += w[i]·x[i]
    Scatter {
        x: Var,
        idx: Rc<[u32]>,
        w: Option<Rc<[f32]>>,
    },
    /// Column vector; log-softmax within each segment.
    SegLogSoftmax {
        x: Var,
        seg: Rc<[u32]>,
    },
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Rc<[f32]>),
    AddConst(Var),
    Scale(Var, f32),
    Clamp(Var, f32, f32),
    Min(Var, Var),
    Square(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter feeds this node; inputs and constants don't.
    grad: bool,
}

impl Op {
    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::Concat(xs) => xs.clone(),
            Op::Relu(x)
            | Op::Affine { x, .. }
            | Op::Gather { x, .. }
            | Op::Scatter { x, .. }
            | Op::SegLogSoftmax { x, .. }
            | Op::Exp(x)
            | Op::MulConst(x, _)
            | Op::AddConst(x)
            | Op::Scale(x, _)
            | Op::Clamp(x, _, _)
            | Op::Square(x)
            | Op::Sum(x) => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Min(a, b) => vec![*a, *b],
        }
    }
}

/// Records a forward computation over a borrowed parameter store so that
/// [`Tape::backward`] can produce exact gradients.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        let grad = match &op {
            Op::Input => false,
            Op::Param(_) | Op::Affine { .. } => true,
            op => op.operands().iter().any(|v| self.nodes[v.0].grad),
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// First op that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<(), NeuralError> {
        match self.non_finite {
            Some(op) => Err(NeuralError::NonFinite { op }),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.store.value(id).clone();
        self.push(t, Op::Param(id), "param")
    }

    /// `x·W + b` with `W: in × out`, `b: 1 × out`.
    pub fn affine(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let (wt, bt) = (self.store.value(w), self.store.value(b));
        let xt = self.value(x);
        assert_eq!(xt.cols, wt.rows, "affine input width");
        let (m, k, n) = (xt.rows, wt.rows, wt.cols);
        let mut out = Tensor::from_vec(m, n, bt.data.repeat(m));
        gemm(m, k, n, &xt.data, (k, 1), &wt.data, (n, 1), 1.0, &mut out.data, n);
        self.push(out, Op::Affine { x, w, b }, "affine")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    /// Column-wise concatenation of equal-row inputs.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let rows = self.value(xs[0]).rows;
        let cols: usize = xs.iter().map(|&x| self.value(x).cols).sum();
        let parts: Vec<&Tensor> = xs.iter().map(|&x| self.value(x)).collect();
        assert!(parts.iter().all(|t| t.rows == rows), "concat rows");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in &parts {
                data.extend_from_slice(t.row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        self.push(out, Op::Concat(xs.to_vec()), "concat")
    }

    pub fn gather(&mut self, x: Var, idx: Rc<[u32]>) -> Var {
        let t = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx.iter() {
            data.extend_from_slice(t.row(i as usize));
        }
        let out = Tensor::from_vec(idx.len(), t.cols, data);
        self.push(out, Op::Gather { x, idx }, "gather")
    }

    /// Weighted segment sum into `rows` output rows (weights default to 1).
    pub fn scatter(&mut self, x: Var, idx: Rc<[u32]>, w: Option<Rc<[f32]>>, rows: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.rows, idx.len(), "scatter index length");
        let mut out = Tensor::zeros(rows, t.cols);
        for (r, &i) in idx.iter().enumerate() {
            let wr = w.as_ref().map_or(1.0, |w| w[r]);
            let dst = &mut out.data[i as usize * t.cols..(i as usize + 1) * t.cols];
            for (d, s) in dst.iter_mut().zip(t.row(r)) {
                *d += wr * s;
            }
        }
        self.push(out, Op::Scatter { x, idx, w }, "scatter")
    }

    /// Log-softmax of a column vector within each segment id.
    pub fn seg_log_softmax(&mut self, x: Var, seg: Rc<[u32]>) -> Var {
        let t = self.value(x);
        assert_eq!(t.cols, 1, "seg_log_softmax expects a column");
        assert_eq!(t.rows, seg.len(), "segment length");
        let nseg = seg.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
        let mut max = vec![f32::NEG_INFINITY; nseg];
        for (r, &s) in seg.iter().enumerate() {
            max[s as usize] = max[s as usize].max(t.data[r]);
        }
        let mut sum = vec![0f64; nseg];
        for (r, &s) in seg.iter().enumerate() {
            sum[s as usize] += f64::from(t.data[r] - max[s as usize]).exp();
        }
        let data = seg
            .iter()
            .enumerate()
            .map(|(r, &s)| t.data[r] - max[s as usize] - sum[s as usize].ln() as f32)
            .collect();
        let out = Tensor::column(data);
        self.push(out, Op::SegLogSoftmax { x, seg }, "log_softmax")
    }

    fn map(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op, name: &'static str) -> Var {
        let t = self.value(x);
        let out = Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&v| f(v)).collect());
        self.push(out, op, name)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op, name: &'static str) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name} shapes");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, op, name)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f32::exp, Op::Exp(x), "exp")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, f32::min, Op::Min(a, b), "min")
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, x: Var, c: Rc<[f32]>) -> Var {
        assert_eq!(self.value(x).len(), c.len(), "mul_const length");
        let mut out = self.value(x).clone();
        out.data.iter_mut().zip(c.iter()).for_each(|(v, c)| *v *= c);
        self.push(out, Op::MulConst(x, c), "mul_const")
    }

    pub fn add_const(&mut self, x: Var, c: Rc<[f32]>) -> Var {
        assert_eq!(self.value(x).len(), c.len(), "add_const length");
        let mut out = self.value(x).clone();
        out.data.iter_mut().zip(c.iter()).for_each(|(v, c)| *v += c);
        self.push(out, Op::AddConst(x), "add_const")
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s), "scale")
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi), "clamp")
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x), "square")
    }

    /// Sum of all elements as a 1×1 value (accumulated in f64).
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().map(|&v| f64::from(v)).sum();
        self.push(Tensor::from_vec(1, 1, vec![s as f32]), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f32)
    }

    /// Reverse pass from a 1×1 `loss`; returns gradients for every
    /// parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NeuralError> {
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.len() != 1 {
            return Err(NeuralError::NoGraphRecorded);
        }
        self.check_finite()?;
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        let mut grads: Vec<Option<Tensor>> = vec![None; self.store.len()];

        fn acc(slot: &mut Option<Tensor>, shape: [usize; 2]) -> &mut Tensor {
            slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]))
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let dst = acc(&mut grads[id.0], g.shape());
                    dst.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d += s);
                }
                Op::Affine { x, w, b } => {
                    let xt = &self.nodes[x.0].value;
                    let wt = self.store.value(*w);
                    let (m, k, n) = (xt.rows, wt.rows, wt.cols);
                    // dW += xᵀ·g
                    let dw = acc(&mut grads[w.0], wt.shape());
                    gemm(k, m, n, &xt.data, (1, k), &g.data, (n, 1), 1.0, &mut dw.data, n);
                    let db = acc(&mut grads[b.0], [1, n]);
                    for r in 0..m {
                        db.data.iter_mut().zip(g.row(r)).for_each(|(d, s)| *d += s);
                    }
                    // dx += g·Wᵀ
                    if self.nodes[x.0].grad {
                        let dx = acc(&mut adj[x.0], xt.shape());
                        gemm(m, n, k, &g.data, (n, 1), &wt.data, (1, n), 1.0, &mut dx.data, k);
                    }
                }
                Op::Relu(x) => {
                    let dx = acc(&mut adj[x.0], out.shape());
                    for ((d, &gv), &o) in dx.data.iter_mut().zip(&g.data).zip(&out.data) {
                        if o > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Concat(xs) => {
                    let cols = out.cols;
                    let mut off = 0;
                    for x in xs {
                        let shape = self.nodes[x.0].value.shape();
                        let dx = acc(&mut adj[x.0], shape);
                        for r in 0..shape[0] {
                            let src = &g.data[r * cols + off..r * cols + off + shape[1]];
                            dx.row_mut(r).iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                        off += shape[1];
                    }
                }
                Op::Gather { x, idx } => {
                    let shape = self.nodes[x.0].value.shape();
                    let dx = acc(&mut adj[x.0], shape);
                    for (r, &src) in idx.iter().enumerate() {
                        dx.row_mut(src as usize)
                            .iter_mut()
                            .zip(g.row(r))
                            .for_each(|(d, s)| *d += s);
                    }
                }
                Op::Scatter { x, idx, w } => {
                    let shape = self.nodes[x.0].value.shape();
                    let dx = acc(&mut adj[x.0], shape);
                    for (r, &dst) in idx.iter().enumerate() {
                        let wr = w.as_ref().map_or(1.0, |w| w[r]);
                        dx.row_mut(r)
                            .iter_mut()
                            .zip(g.row(dst as usize))
                            .for_each(|(d, s)| *d += wr * s);
                    }
                }
                Op::SegLogSoftmax { x, seg } => {
                    // dx_i = g_i − softmax_i · Σ_{j∈seg} g_j
                    let nseg = seg.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
                    let mut gsum = vec![0f64; nseg];
                    for (r, &s) in seg.iter().enumerate() {
                        gsum[s as usize] += f64::from(g.data[r]);
                    }
                    let dx = acc(&mut adj[x.0], out.shape());
                    for (r, &s) in seg.iter().enumerate() {
                        let p = out.data[r].exp();
                        dx.data[r] += g.data[r] - p * gsum[s as usize] as f32;
                    }
                }
                Op::Exp(x) => {
                    let dx = acc(&mut adj[x.0], out.shape());
                    for ((d, &gv), &o) in dx.data.iter_mut().zip(&g.data).zip(&out.data) {
                        *d += gv * o;
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let d = acc(&mut adj[v.0], out.shape());
                        d.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Sub(a, b) => {
                    let d = acc(&mut adj[a.0], out.shape());
                    d.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d += s);
                    let d = acc(&mut adj[b.0], out.shape());
                    d.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d -= s);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<f32> = g.data.iter().zip(&tb.data).map(|(g, y)| g * y).collect();
                    let db: Vec<f32> = g.data.iter().zip(&ta.data).map(|(g, x)| g * x).collect();
                    let d = acc(&mut adj[a.0], out.shape());
                    d.data.iter_mut().zip(&da).for_each(|(d, s)| *d += s);
                    let d = acc(&mut adj[b.0], out.shape());
                    d.data.iter_mut().zip(&db).for_each(|(d, s)| *d += s);
                }
                Op::MulConst(x, c) => {
                    let d = acc(&mut adj[x.0], out.shape());
                    for ((d, &gv), &c) in d.data.iter_mut().zip(&g.data).zip(c.iter()) {
                        *d += gv * c;
                    }
                }
                Op::AddConst(x) => {
                    let d = acc(&mut adj[x.0], out.shape());
                    d.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d += s);
                }
                Op::Scale(x, s) => {
                    let d = acc(&mut adj[x.0], out.shape());
                    d.data.iter_mut().zip(&g.data).for_each(|(d, gv)| *d += gv * s);
                }
                Op::Clamp(x, lo, hi) => {
                    let xt = &self.nodes[x.0].value;
                    let d = acc(&mut adj[x.0], out.shape());
                    for ((d, &gv), &xv) in d.data.iter_mut().zip(&g.data).zip(&xt.data) {
                        if xv >= *lo && xv <= *hi {
                            *d += gv;
                        }
                    }
                }
                Op::Min(a, b) => {
                    // Ties route the gradient to the first argument.
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let first: Vec<bool> = ta.data.iter().zip(&tb.data).map(|(x, y)| x <= y).collect();
                    let d = acc(&mut adj[a.0], out.shape());
                    for ((d, &gv), &f) in d.data.iter_mut().zip(&g.data).zip(&first) {
                        if f {
                            *d += gv;
                        }
                    }
                    let d = acc(&mut adj[b.0], out.shape());
                    for ((d, &gv), &f) in d.data.iter_mut().zip(&g.data).zip(&first) {
                        if !f {
                            *d += gv;
                        }
                    }
                }
                Op::Square(x) => {
                    let xt = &self.nodes[x.0].value;
                    let d = acc(&mut adj[x.0], out.shape());
                    for ((d, &gv), &xv) in d.data.iter_mut().zip(&g.data).zip(&xt.data) {
                        *d += 2.0 * gv * xv;
                    }
                }
                Op::Sum(x) => {
                    let shape = self.nodes[x.0].value.shape();
                    let d = acc(&mut adj[x.0], shape);
                    let gv = g.data[0];
                    d.data.iter_mut().for_each(|d| *d += gv);
                }
            }
        }
        Ok(Gradients(grads))
    }
}
