//! Parameter containers and the dense, convolutional and recurrent layers
//! built on the tape.

use condpred_tape::{Graph, Grid, Kernel, Mat, Var};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Negative slope of every leaky ReLU in the model.
pub const ALPHA: f64 = 0.1;

/// Walks the named parameter matrices of a module in a fixed order.
pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Params`] by visiting the listed fields, each of which is a
/// `Mat` or another `Params`.
#[macro_export]
macro_rules! impl_params {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::Params for $ty {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a condpred_tape::Mat)) {
                $( $crate::nn::Visit::visit_field(&self.$field, &$crate::nn::join_pub(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut condpred_tape::Mat)) {
                $( $crate::nn::Visit::visit_field_mut(&mut self.$field, &$crate::nn::join_pub(prefix, stringify!($field)), f); )*
            }
        }
    };
}

#[doc(hidden)]
pub fn join_pub(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

/// Field-level dispatch used by [`impl_params!`].
pub trait Visit {
    fn visit_field<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a Mat));
    fn visit_field_mut(&mut self, name: &str, f: &mut dyn FnMut(String, &mut Mat));
}

impl Visit for Mat {
    fn visit_field<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(name.to_string(), self)
    }
    fn visit_field_mut(&mut self, name: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        f(name.to_string(), self)
    }
}

impl<P: Params> Visit for P {
    fn visit_field<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        self.visit(name, f)
    }
    fn visit_field_mut(&mut self, name: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        self.visit_mut(name, f)
    }
}

impl<P: Params> Params for Option<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        if let Some(p) = self {
            p.visit(prefix, f)
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f)
        }
    }
}

/// Named parameter list of a module.
pub fn named<P: Params + ?Sized>(p: &P) -> Vec<(String, &Mat)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, m| out.push((n, m)));
    out
}

pub fn count<P: Params + ?Sized>(p: &P) -> usize {
    named(p).iter().map(|(_, m)| m.len()).sum()
}

pub fn all_finite<P: Params + ?Sized>(p: &P) -> bool {
    named(p).iter().all(|(_, m)| m.iter().all(|x| x.is_finite()))
}

pub fn fill<P: Params + ?Sized>(p: &mut P, value: f64) {
    p.visit_mut("", &mut |_, m| m.fill(value));
}

/// Deterministic initializer. Every call to [`Init::stream`] yields an
/// independent ChaCha stream, so parameter groups do not share randomness.
pub struct Init {
    seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Mat {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    let d = Uniform::new_inclusive(-a, a);
    Mat::from_shape_simple_fn((rows, cols), || d.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in x out`.
    pub w: Mat,
    /// `1 x out`.
    pub b: Mat,
}

impl_params!(Linear { w, b });

impl Linear {
    pub fn new(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: fan_in_uniform(inp, out, inp, rng),
            b: Mat::zeros((1, out)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Var {
        let w = g.param(&self.w);
        let b = g.param(&self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Same-padded convolution over grids stored as `(batch * h * w) x c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub kh: usize,
    pub kw: usize,
    pub lin: Linear,
}

impl_params!(Conv { lin });

impl Conv {
    pub fn new(kh: usize, kw: usize, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            kh,
            kw,
            lin: Linear::new(kh * kw * inp, out, rng),
        }
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::new(self.kh, self.kw)
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var, grid: Grid) -> Var {
        let cols = if self.kh == 1 && self.kw == 1 {
            x
        } else {
            g.im2col(x, grid, self.kernel())
        };
        self.lin.forward(g, cols)
    }
}

/// Long short-term memory cell with gates ordered input, forget, cell,
/// output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    /// `in x 4h`.
    pub wx: Mat,
    /// `h x 4h`.
    pub wh: Mat,
    /// `1 x 4h`.
    pub b: Mat,
}

impl_params!(Lstm { wx, wh, b });

impl Lstm {
    pub fn new(inp: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut b = Mat::zeros((1, 4 * hidden));
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            wx: fan_in_uniform(inp, 4 * hidden, hidden, rng),
            wh: fan_in_uniform(hidden, 4 * hidden, hidden, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.wx.nrows()
    }

    /// One step given the already projected input `xw = x·Wx` (`n x 4h`).
    pub fn step<'a>(&'a self, g: &mut Graph<'a>, xw: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden();
        let wh = g.param(&self.wh);
        let b = g.param(&self.b);
        let hw = g.matmul(h, wh);
        let z = g.add(xw, hw);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, n);
        let f = g.slice_cols(z, n, n);
        let u = g.slice_cols(z, 2 * n, n);
        let o = g.slice_cols(z, 3 * n, n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let iu = g.mul(i, u);
        let c = g.add(fc, iu);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        (h, c)
    }

    pub fn zero_state(&self, g: &mut Graph<'_>, n: usize) -> (Var, Var) {
        let h = g.constant(Mat::zeros((n, self.hidden())));
        let c = g.constant(Mat::zeros((n, self.hidden())));
        (h, c)
    }
}
