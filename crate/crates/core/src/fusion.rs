//! Cross-domain fusion of the two intention graphs: attention between the
//! flattened graphs yields the interaction vector `I`, and the influence
//! evaluator weighs each domain's low-level context into `G`.
//!
//! How the flattened graphs are combined into `I` is a strategy chosen by
//! name (`cross`, `self` or `off`) from [`fusion_strategies`].

use std::sync::OnceLock;

use condpred_tape::{Graph, Grid, Mat, PoolWindow, Var};

use crate::error::{Error, Result};
use crate::graphs::IntentionGraph;
use crate::impl_params;
use crate::nn::{Init, Linear, ALPHA};
use crate::scene::GridSpec;

/// Query, key and value projections followed by a row-wise fully
/// connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub fc: Linear,
}

impl_params!(AttentionParams { q, k, v, fc });

impl AttentionParams {
    pub fn init(init: &Init, stream: u64, input: usize, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "attention dim must split evenly into heads");
        let mut rng = init.stream(stream);
        Self {
            heads,
            q: Linear::new(input, dim, &mut rng),
            k: Linear::new(input, dim, &mut rng),
            v: Linear::new(input, dim, &mut rng),
            fc: Linear::new(dim, dim, &mut rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.fc.outputs()
    }

    pub fn input(&self) -> usize {
        self.q.inputs()
    }

    /// Attends `n` query blocks of `cells` rows each to the matching key and
    /// value blocks. Returns the transformed `(n * cells) x dim` matrix and
    /// every block's attention matrices (one per head).
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        mq: Var,
        mkv: Var,
        n: usize,
        cells: usize,
    ) -> (Var, Vec<Var>) {
        let q = self.q.forward(g, mq);
        let k = self.k.forward(g, mkv);
        let v = self.v.forward(g, mkv);
        let dh = self.dim() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut blocks = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n * self.heads);
        for b in 0..n {
            let (qb, kb, vb) = (
                g.slice_rows(q, b * cells, cells),
                g.slice_rows(k, b * cells, cells),
                g.slice_rows(v, b * cells, cells),
            );
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (qh, kh, vh) = if self.heads == 1 {
                    (qb, kb, vb)
                } else {
                    (g.slice_cols(qb, h * dh, dh), g.slice_cols(kb, h * dh, dh), g.slice_cols(vb, h * dh, dh))
                };
                let kt = g.transpose(kh);
                let s = g.matmul(qh, kt);
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                weights.push(a);
                heads.push(g.matmul(a, vh));
            }
            blocks.push(if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) });
        }
        let att = if blocks.len() == 1 { blocks[0] } else { g.concat_rows(&blocks) };
        let out = self.fc.forward(g, att);
        (g.leaky_relu(out, ALPHA), weights)
    }
}

/// Learned weighting of the two domains' low-level graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceParams {
    /// Shared by both domains: `[pooled graph ⊕ ξ_tar] -> context`.
    pub context: Linear,
    /// Shared scorer: `context -> logit`.
    pub score: Linear,
}

impl_params!(InfluenceParams { context, score });

/// Number of rows the influence evaluator pools a graph down to.
pub const INFLUENCE_ROWS: usize = 5;

impl InfluenceParams {
    pub fn init(init: &Init, stream: u64, spec: &GridSpec, graph_channels: usize, enc: usize, ctx: usize) -> Self {
        let mut rng = init.stream(stream);
        let pooled = influence_window(spec).output(Grid::new(1, spec.rows, spec.cols)).cells();
        Self {
            context: Linear::new(pooled * graph_channels + enc, ctx, &mut rng),
            score: Linear::new(ctx, 1, &mut rng),
        }
    }

    pub fn ctx_dim(&self) -> usize {
        self.context.outputs()
    }

    fn context_of<'a>(&'a self, g: &mut Graph<'a>, v: Var, xi: Var, n: usize, spec: &GridSpec) -> Var {
        let grid = Grid::new(n, spec.rows, spec.cols);
        let win = influence_window(spec);
        let pooled = g.max_pool(v, grid, win);
        let per = win.output(grid).cells();
        let c = g.shape(v).1;
        let flat = g.reshape(pooled, n, per * c);
        let x = g.concat_cols(&[flat, xi]);
        let x = self.context.forward(g, x);
        g.leaky_relu(x, ALPHA)
    }

    /// Returns `(β, G)` with `β` as `n x 2` and `G` as `n x 2C`.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        vc: Var,
        vf: Var,
        xi: Var,
        n: usize,
        spec: &GridSpec,
    ) -> (Var, Var) {
        let cc = self.context_of(g, vc, xi, n, spec);
        let cf = self.context_of(g, vf, xi, n, spec);
        let lc = self.score.forward(g, cc);
        let lf = self.score.forward(g, cf);
        let logits = g.concat_cols(&[lc, lf]);
        let beta = g.softmax_rows(logits);
        let ones = g.constant(Mat::ones((1, self.ctx_dim())));
        let b1 = g.slice_cols(beta, 0, 1);
        let b2 = g.slice_cols(beta, 1, 1);
        let b1 = g.matmul(b1, ones);
        let b2 = g.matmul(b2, ones);
        let gc = g.mul(cc, b1);
        let gf = g.mul(cf, b2);
        (beta, g.concat_cols(&[gc, gf]))
    }
}

/// Max-pool window reducing a grid to at most [`INFLUENCE_ROWS`] rows and
/// one column.
pub fn influence_window(spec: &GridSpec) -> PoolWindow {
    let ph = spec.rows.div_ceil(INFLUENCE_ROWS);
    PoolWindow::new(ph, spec.cols, ph, spec.cols)
}

/// Constant `n x (n * cells)` matrix averaging each block of `cells` rows.
pub fn block_mean(g: &mut Graph<'_>, n: usize, cells: usize) -> Var {
    let w = 1.0 / cells as f64;
    g.constant(Mat::from_shape_fn((n, n * cells), |(i, j)| if j / cells == i { w } else { 0.0 }))
}

/// Combines the enabled domains' flattened graphs into the interaction
/// vector `I`.
pub trait DomainFusion: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether both domains must be enabled.
    fn needs_both(&self) -> bool;

    /// Whether one attention parameter set per domain is required.
    fn uses_attention(&self) -> bool;

    /// Width of `I` given the enabled domain count, the graph channel count
    /// and the attention dimension.
    fn output_dim(&self, domains: usize, graph_channels: usize, attn_dim: usize) -> usize;

    /// `graphs` holds one `(n * cells) x (D + 1)` matrix per enabled
    /// domain (current first) and `attn` the matching parameter sets.
    fn fuse<'a>(
        &self,
        g: &mut Graph<'a>,
        graphs: &[Var],
        attn: &[&'a AttentionParams],
        n: usize,
        cells: usize,
    ) -> Var;
}

/// Bidirectional cross-attention: each domain queries the other.
pub struct CrossAttention;

impl DomainFusion for CrossAttention {
    fn name(&self) -> &'static str {
        "cross"
    }
    fn needs_both(&self) -> bool {
        true
    }
    fn uses_attention(&self) -> bool {
        true
    }
    fn output_dim(&self, domains: usize, _: usize, attn_dim: usize) -> usize {
        domains * attn_dim
    }
    fn fuse<'a>(&self, g: &mut Graph<'a>, graphs: &[Var], attn: &[&'a AttentionParams], n: usize, cells: usize) -> Var {
        let (mc, mf) = (graphs[0], graphs[1]);
        let (tc, _) = attn[0].forward(g, mc, mf, n, cells);
        let (tf, _) = attn[1].forward(g, mf, mc, n, cells);
        let pool = block_mean(g, n, cells);
        let ic = g.matmul(pool, tc);
        let i_f = g.matmul(pool, tf);
        g.concat_cols(&[ic, i_f])
    }
}

/// Each domain attends to itself, with the same parameter count as
/// [`CrossAttention`].
pub struct SelfAttention;

impl DomainFusion for SelfAttention {
    fn name(&self) -> &'static str {
        "self"
    }
    fn needs_both(&self) -> bool {
        false
    }
    fn uses_attention(&self) -> bool {
        true
    }
    fn output_dim(&self, domains: usize, _: usize, attn_dim: usize) -> usize {
        domains * attn_dim
    }
    fn fuse<'a>(&self, g: &mut Graph<'a>, graphs: &[Var], attn: &[&'a AttentionParams], n: usize, cells: usize) -> Var {
        let pool = block_mean(g, n, cells);
        let parts: Vec<Var> = graphs
            .iter()
            .zip(attn)
            .map(|(&m, p)| {
                let (t, _) = p.forward(g, m, m, n, cells);
                g.matmul(pool, t)
            })
            .collect();
        if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)
        }
    }
}

/// No attention: the graphs are mean-pooled and concatenated.
pub struct NoFusion;

impl DomainFusion for NoFusion {
    fn name(&self) -> &'static str {
        "off"
    }
    fn needs_both(&self) -> bool {
        false
    }
    fn uses_attention(&self) -> bool {
        false
    }
    fn output_dim(&self, domains: usize, graph_channels: usize, _: usize) -> usize {
        domains * graph_channels
    }
    fn fuse<'a>(&self, g: &mut Graph<'a>, graphs: &[Var], _: &[&'a AttentionParams], n: usize, cells: usize) -> Var {
        let pool = block_mean(g, n, cells);
        let parts: Vec<Var> = graphs.iter().map(|&m| g.matmul(pool, m)).collect();
        if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)
        }
    }
}

pub struct FusionRegistry {
    entries: Vec<Box<dyn DomainFusion>>,
}

impl FusionRegistry {
    pub fn get(&self, name: &str) -> Option<&dyn DomainFusion> {
        self.entries
            .iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
            .map(|f| f.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|f| f.name()).collect()
    }
}

pub fn fusion_strategies() -> &'static FusionRegistry {
    static REGISTRY: OnceLock<FusionRegistry> = OnceLock::new();
    REGISTRY.get_or_init(|| FusionRegistry {
        entries: vec![Box::new(CrossAttention), Box::new(SelfAttention), Box::new(NoFusion)],
    })
}

pub fn fusion_strategy(name: &str) -> Result<&'static dyn DomainFusion> {
    fusion_strategies().get(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown fusion strategy '{name}' (expected one of {:?})",
            fusion_strategies().names()
        ))
    })
}

/// Row-major `HW x (D + 1)` matrix of a graph; row `r` is cell
/// `(r / W, r % W)`.
pub fn flatten_graph(v: &IntentionGraph) -> Result<Mat> {
    if v.tensor.nrows() != v.rows * v.cols {
        return Err(Error::Shape(format!(
            "graph holds {} cells, expected {}x{}",
            v.tensor.nrows(),
            v.rows,
            v.cols
        )));
    }
    Ok(v.tensor.clone())
}

pub fn unflatten_graph(m: &Mat, rows: usize, cols: usize) -> Result<IntentionGraph> {
    if m.nrows() != rows * cols {
        return Err(Error::Shape(format!("{} rows cannot form a {rows}x{cols} grid", m.nrows())));
    }
    Ok(IntentionGraph {
        tensor: m.clone(),
        rows,
        cols,
    })
}

/// `F^fc(softmax(Q Kᵀ / √d) V)` for one query matrix. Returns the attended
/// matrix and the attention weights of the first head.
pub fn cross_attend(mq: &Mat, mkv: &Mat, params: &AttentionParams) -> Result<(Mat, Mat)> {
    if mq.ncols() != params.input() || mkv.ncols() != params.input() {
        return Err(Error::Shape(format!(
            "attention expects {} columns, got {} and {}",
            params.input(),
            mq.ncols(),
            mkv.ncols()
        )));
    }
    if mq.nrows() != mkv.nrows() {
        return Err(Error::Shape("query and key matrices must have the same cell count".into()));
    }
    let mut g = Graph::new();
    let q = g.constant(mq.clone());
    let kv = g.constant(mkv.clone());
    let (out, weights) = params.forward(&mut g, q, kv, 1, mq.nrows());
    Ok((g.value(out).clone(), g.value(weights[0]).clone()))
}

/// Mean over cells of both attended matrices, current first.
pub fn fuse_cross(mc: &Mat, mf: &Mat) -> Vec<f64> {
    let n = mc.nrows() as f64;
    let m = mf.nrows() as f64;
    mc.columns()
        .into_iter()
        .map(|c| c.sum() / n)
        .chain(mf.columns().into_iter().map(|c| c.sum() / m))
        .collect()
}

/// Returns `(β1, β2, G)`.
pub fn influence_weights(
    vc: &IntentionGraph,
    vf: &IntentionGraph,
    xi: &[f64],
    params: &InfluenceParams,
    spec: &GridSpec,
) -> Result<(f64, f64, Vec<f64>)> {
    let expected = params.context.inputs();
    let pooled = influence_window(spec).output(Grid::new(1, spec.rows, spec.cols)).cells();
    if vc.tensor.dim() != vf.tensor.dim()
        || vc.tensor.nrows() != spec.cells()
        || pooled * vc.tensor.ncols() + xi.len() != expected
    {
        return Err(Error::Shape(format!(
            "influence inputs {:?}, {:?} and encoding {} do not fit a context map of {expected} inputs",
            vc.tensor.dim(),
            vf.tensor.dim(),
            xi.len()
        )));
    }
    let mut g = Graph::new();
    let c = g.constant(vc.tensor.clone());
    let f = g.constant(vf.tensor.clone());
    let x = g.constant(Mat::from_shape_vec((1, xi.len()), xi.to_vec()).expect("row"));
    let (beta, gv) = params.forward(&mut g, c, f, x, 1, spec);
    let b = g.value(beta);
    Ok((b[[0, 0]], b[[0, 1]], g.value(gv).row(0).to_vec()))
}

pub fn intention_vector(i: &[f64], g: &[f64]) -> Vec<f64> {
    i.iter().chain(g).copied().collect()
}
