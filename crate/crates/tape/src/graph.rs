use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{s, Axis};

use crate::geometry::{im2col, im2col_backward, max_pool, Grid, Kernel, PoolWindow};
use crate::Mat;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Mat),
    Borrowed(&'a Mat),
}

impl Value<'_> {
    fn get(&self) -> &Mat {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    MaskRows(Var, Vec<bool>),
    BroadcastRows(Var),
    MeanRows(Var),
    SumRows(Var),
    SumAll(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    Reshape(Var),
    Im2Col(Var, Grid, Kernel),
    MaxPool(Var, Vec<usize>),
    BivariateNll {
        mu: Var,
        sigma: Var,
        rho: Var,
        target: Mat,
    },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    needs_grad: bool,
}

/// Records operations on matrices so that gradients can be propagated back
/// from a scalar output.
///
/// Shape mismatches are programming errors and panic.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<usize, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// An owned leaf that receives a gradient.
    pub fn variable(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Binds a borrowed parameter matrix. Binding the same matrix twice
    /// returns the same node.
    pub fn param(&mut self, m: &'a Mat) -> Var {
        let key = m as *const Mat as usize;
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Borrowed(m),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul: inner dimensions differ");
        let out = va.dot(vb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shapes differ");
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(va.ncols(), vr.ncols(), "add_row: column count differs");
        let out = va + vr;
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shapes differ");
        let out = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shapes differ");
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Multiplies every entry of `a` by the `1 x 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by: factor must be 1x1");
        let k = self.value(s)[[0, 0]];
        let out = self.value(a) * k;
        let ng = self.ng(a) || self.ng(s);
        self.push(out, Op::ScaleBy(a, s), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { alpha * x });
        let ng = self.ng(a);
        self.push(out, Op::LeakyRelu(a, alpha), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let ng = self.ng(a);
        self.push(out, Op::Log(a), ng)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: nothing to concatenate");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: nothing to concatenate");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    /// Output row `k` is input row `idx[k]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), idx);
        let ng = self.ng(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Places input row `k` at output row `idx[k]` of an `n x c` zero matrix.
    /// Destination rows must be distinct.
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows(), idx.len(), "scatter_rows: index count differs from rows");
        let mut out = Mat::zeros((n, va.ncols()));
        let mut seen = vec![false; n];
        for (k, &r) in idx.iter().enumerate() {
            assert!(!seen[r], "scatter_rows: duplicate destination row {r}");
            seen[r] = true;
            out.row_mut(r).assign(&va.row(k));
        }
        let ng = self.ng(a);
        self.push(out, Op::ScatterRows(a, idx.to_vec()), ng)
    }

    /// Rows with `keep[r] == false` become exactly zero.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows(), keep.len(), "mask_rows: mask length differs from rows");
        let mut out = Mat::zeros(va.dim());
        for (r, &k) in keep.iter().enumerate() {
            if k {
                out.row_mut(r).assign(&va.row(r));
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MaskRows(a, keep.to_vec()), ng)
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows(), 1, "broadcast_rows: input must be a single row");
        let out = va
            .broadcast((n, va.ncols()))
            .expect("broadcast_rows")
            .to_owned();
        let ng = self.ng(a);
        self.push(out, Op::BroadcastRows(a), ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.nrows() as f64;
        let out = (va.sum_axis(Axis(0)) / n).insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape: element count differs");
        let out = Mat::from_shape_vec((rows, cols), va.iter().copied().collect()).expect("reshape");
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Unfolds every cell's `kh x kw` neighbourhood into one row
    /// (zero outside the grid), so a same-padded convolution becomes a
    /// matrix product.
    pub fn im2col(&mut self, a: Var, grid: Grid, k: Kernel) -> Var {
        let out = im2col(self.value(a), grid, k);
        let ng = self.ng(a);
        self.push(out, Op::Im2Col(a, grid, k), ng)
    }

    pub fn max_pool(&mut self, a: Var, grid: Grid, win: PoolWindow) -> Var {
        let (out, arg) = max_pool(self.value(a), grid, win);
        let ng = self.ng(a);
        self.push(out, Op::MaxPool(a, arg), ng)
    }

    /// Per-row negative log-density of a bivariate Gaussian.
    ///
    /// `mu` and `sigma` are `n x 2`, `rho` is `n x 1` and `target` holds the
    /// observed points. Returns an `n x 1` column.
    pub fn bivariate_nll(&mut self, mu: Var, sigma: Var, rho: Var, target: Mat) -> Var {
        let n = target.nrows();
        assert_eq!(target.ncols(), 2);
        assert_eq!(self.shape(mu), (n, 2), "bivariate_nll: mu must be n x 2");
        assert_eq!(self.shape(sigma), (n, 2), "bivariate_nll: sigma must be n x 2");
        assert_eq!(self.shape(rho), (n, 1), "bivariate_nll: rho must be n x 1");
        let (m, sg, r) = (self.value(mu), self.value(sigma), self.value(rho));
        let mut out = Mat::zeros((n, 1));
        for i in 0..n {
            out[[i, 0]] = bivariate_nll(
                [m[[i, 0]], m[[i, 1]]],
                [sg[[i, 0]], sg[[i, 1]]],
                r[[i, 0]],
                [target[[i, 0]], target[[i, 1]]],
            );
        }
        let ng = self.ng(mu) || self.ng(sigma) || self.ng(rho);
        self.push(
            out,
            Op::BivariateNll {
                mu,
                sigma,
                rho,
                target,
            },
            ng,
        )
    }

    /// Back-propagates from a `1 x 1` output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward: output must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = self.nodes[i].value.get();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::ScaleBy(a, s) => {
                let k = self.value(*s)[[0, 0]];
                if self.ng(*a) {
                    self.accumulate(grads, *a, g * k);
                }
                if self.ng(*s) {
                    let d = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, Mat::from_elem((1, 1), d));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g * *k),
            Op::LeakyRelu(a, alpha) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= alpha;
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = ndarray::Zip::from(g).and(y).map_collect(|&g, &y| g * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = ndarray::Zip::from(g).and(y).map_collect(|&g, &y| g * (1.0 - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * y),
            Op::Log(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Clamp(a, lo, hi) => {
                let d = ndarray::Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| if x >= *lo && x <= *hi { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (k, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(k);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ScatterRows(a, idx) => {
                self.accumulate(grads, *a, g.select(Axis(0), idx));
            }
            Op::MaskRows(a, keep) => {
                let mut d = g.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        d.row_mut(r).fill(0.0);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::BroadcastRows(a) => {
                self.accumulate(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows();
                let d = g.broadcast((n, g.ncols())).unwrap().to_owned() / n as f64;
                self.accumulate(grads, *a, d);
            }
            Op::SumRows(a) => {
                let n = self.value(*a).nrows();
                let d = g.broadcast((n, g.ncols())).unwrap().to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.sum();
                    drow.zip_mut_with(&yrow, |d, &y| *d -= y * dot);
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let total = drow.sum();
                    drow.zip_mut_with(&yrow, |d, &ly| *d -= ly.exp() * total);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Reshape(a) => {
                let dim = self.value(*a).dim();
                let d = Mat::from_shape_vec(dim, g.iter().copied().collect()).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Im2Col(a, grid, k) => {
                let c = self.value(*a).ncols();
                self.accumulate(grads, *a, im2col_backward(g, *grid, *k, c));
            }
            Op::MaxPool(a, arg) => {
                let va = self.value(*a);
                let c = va.ncols();
                let mut d = Mat::zeros(va.dim());
                for (k, &src) in arg.iter().enumerate() {
                    d[[src / c, src % c]] += g[[k / c, k % c]];
                }
                self.accumulate(grads, *a, d);
            }
            Op::BivariateNll {
                mu,
                sigma,
                rho,
                target,
            } => {
                let n = target.nrows();
                let (m, sg, r) = (self.value(*mu), self.value(*sigma), self.value(*rho));
                let mut dmu = Mat::zeros((n, 2));
                let mut dsg = Mat::zeros((n, 2));
                let mut drho = Mat::zeros((n, 1));
                for i in 0..n {
                    let (sx, sy, p) = (sg[[i, 0]], sg[[i, 1]], r[[i, 0]]);
                    let a = (target[[i, 0]] - m[[i, 0]]) / sx;
                    let b = (target[[i, 1]] - m[[i, 1]]) / sy;
                    let q = 1.0 - p * p;
                    let z = a * a - 2.0 * p * a * b + b * b;
                    let gi = g[[i, 0]];
                    dmu[[i, 0]] = -gi * (a - p * b) / (q * sx);
                    dmu[[i, 1]] = -gi * (b - p * a) / (q * sy);
                    dsg[[i, 0]] = gi * (1.0 / sx - a * (a - p * b) / (q * sx));
                    dsg[[i, 1]] = gi * (1.0 / sy - b * (b - p * a) / (q * sy));
                    drho[[i, 0]] = gi * (-p / q - a * b / q + p * z / (q * q));
                }
                self.accumulate(grads, *mu, dmu);
                self.accumulate(grads, *sigma, dsg);
                self.accumulate(grads, *rho, drho);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    /// Gradient of a node, `None` when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a bound parameter, looked up by address.
    pub fn param(&self, m: &Mat) -> Option<&Mat> {
        let key = m as *const Mat as usize;
        self.params.get(&key).and_then(|&v| self.wrt(v))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative log-density of a bivariate Gaussian at `y`.
pub(crate) fn bivariate_nll(mu: [f64; 2], sigma: [f64; 2], rho: f64, y: [f64; 2]) -> f64 {
    let a = (y[0] - mu[0]) / sigma[0];
    let b = (y[1] - mu[1]) / sigma[1];
    let q = 1.0 - rho * rho;
    let z = a * a - 2.0 * rho * a * b + b * b;
    (2.0 * PI * sigma[0] * sigma[1] * q.sqrt()).ln() + z / (2.0 * q)
}
