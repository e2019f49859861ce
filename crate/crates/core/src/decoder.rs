//! Ego-centric refinement of the intention vectors, maneuver classification
//! and maneuver-conditioned bivariate Gaussian trajectory decoding.

use std::f64::consts::PI;

use condpred_tape::{Graph, Grid, Mat, Var};
use serde::{Deserialize, Serialize};

use crate::data::InstanceId;
use crate::error::{Error, Result};
use crate::graphs::place;
use crate::impl_params;
use crate::nn::{Conv, Init, Linear, Lstm, ALPHA};
use crate::scene::{Cell, GridSpec, Lateral, Longitudinal, ManeuverLabel, Point};

/// Smallest standard deviation the decoder emits (meters).
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Largest standard deviation the decoder emits (meters).
pub const SIGMA_CEIL: f64 = 1e4;
/// Bound on `|ρ|`, keeping `1 - ρ²` away from zero.
pub const RHO_LIMIT: f64 = 1.0 - 1e-6;

/// Three same-padded 3x3 convolutions over the ego-centric grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FcnParams {
    pub conv1: Conv,
    pub conv2: Conv,
    pub conv3: Conv,
}

impl_params!(FcnParams { conv1, conv2, conv3 });

impl FcnParams {
    pub fn init(init: &Init, stream: u64, z: usize, width: usize) -> Self {
        let mut rng = init.stream(stream);
        Self {
            conv1: Conv::new(3, 3, z, width, &mut rng),
            conv2: Conv::new(3, 3, width, width, &mut rng),
            conv3: Conv::new(3, 3, width, z, &mut rng),
        }
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, s: Var, batch: usize, spec: &GridSpec) -> Var {
        let grid = Grid::new(batch, spec.rows, spec.cols);
        let mut x = s;
        for conv in [&self.conv1, &self.conv2, &self.conv3] {
            x = conv.forward(g, x, grid);
            x = g.leaky_relu(x, ALPHA);
        }
        x
    }
}

/// Lateral and longitudinal maneuver classifiers on a shared hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub hidden: Linear,
    pub lat: Linear,
    pub lon: Linear,
}

impl_params!(HeadParams { hidden, lat, lon });

impl HeadParams {
    pub fn init(init: &Init, stream: u64, z: usize, hidden: usize) -> Self {
        let mut rng = init.stream(stream);
        Self {
            hidden: Linear::new(z, hidden, &mut rng),
            lat: Linear::new(hidden, 3, &mut rng),
            lon: Linear::new(hidden, 2, &mut rng),
        }
    }

    /// Log-probabilities `(n x 3, n x 2)`.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, z: Var) -> (Var, Var) {
        let h = self.hidden.forward(g, z);
        let h = g.leaky_relu(h, ALPHA);
        let lat = self.lat.forward(g, h);
        let lon = self.lon.forward(g, h);
        (g.log_softmax_rows(lat), g.log_softmax_rows(lon))
    }
}

/// Recurrent trajectory decoder fed the constant input
/// `[Z⁺ ⊕ one_hot(lateral) ⊕ one_hot(longitudinal)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub lstm: Lstm,
    pub out: Linear,
}

impl_params!(DecoderParams { lstm, out });

/// Per-step Gaussian parameters of `m` decoded sequences, stacked step by
/// step (row `k * m + i` is step `k` of sequence `i`), relative to each
/// sequence's last observed position.
pub struct DecodedSteps {
    pub mu: Var,
    pub sigma: Var,
    pub rho: Var,
    pub m: usize,
    pub steps: usize,
}

impl DecoderParams {
    pub fn init(init: &Init, stream: u64, z: usize, hidden: usize) -> Self {
        let mut rng = init.stream(stream);
        Self {
            lstm: Lstm::new(z + 5, hidden, &mut rng),
            out: Linear::new(hidden, 5, &mut rng),
        }
    }

    pub fn z_dim(&self) -> usize {
        self.lstm.inputs() - 5
    }

    /// Decodes `m` sequences. `z` is `m x Z`; `codes` holds each row's
    /// maneuver encoding. Displacements and deviations are multiplied by
    /// `unit` so outputs are in meters.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        z: Var,
        codes: &[[f64; 5]],
        steps: usize,
        unit: f64,
    ) -> DecodedSteps {
        let m = codes.len();
        let onehot = g.constant(Mat::from_shape_fn((m, 5), |(i, j)| codes[i][j]));
        let x = g.concat_cols(&[z, onehot]);
        let wx = g.param(&self.lstm.wx);
        let xw = g.matmul(x, wx);
        let (mut h, mut c) = self.lstm.zero_state(g, m);
        let mut hs = Vec::with_capacity(steps);
        for _ in 0..steps {
            (h, c) = self.lstm.step(g, xw, h, c);
            hs.push(h);
        }
        let hs = g.concat_rows(&hs);
        let raw = self.out.forward(g, hs);

        let delta = g.slice_cols(raw, 0, 2);
        let delta = g.scale(delta, unit);
        let mut acc = g.slice_rows(delta, 0, m);
        let mut mus = vec![acc];
        for k in 1..steps {
            let d = g.slice_rows(delta, k * m, m);
            acc = g.add(acc, d);
            mus.push(acc);
        }
        let mu = g.concat_rows(&mus);
        let s = g.slice_cols(raw, 2, 2);
        let s = g.exp(s);
        let s = g.scale(s, unit);
        let sigma = g.clamp(s, SIGMA_FLOOR, SIGMA_CEIL);
        let r = g.slice_cols(raw, 4, 1);
        let r = g.tanh(r);
        let rho = g.clamp(r, -RHO_LIMIT, RHO_LIMIT);
        DecodedSteps {
            mu,
            sigma,
            rho,
            m,
            steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDistribution {
    pub p_lat: [f64; 3],
    pub p_lon: [f64; 2],
    /// Indexed like [`ManeuverLabel::ALL`].
    pub p_joint: [f64; 6],
}

impl ManeuverDistribution {
    pub fn from_parts(p_lat: [f64; 3], p_lon: [f64; 2]) -> Self {
        let mut p_joint = [0.0; 6];
        for (i, pl) in p_lat.iter().enumerate() {
            for (j, po) in p_lon.iter().enumerate() {
                p_joint[i * 2 + j] = pl * po;
            }
        }
        Self { p_lat, p_lon, p_joint }
    }

    pub fn argmax(&self) -> ManeuverLabel {
        let k = (0..6)
            .max_by(|&a, &b| self.p_joint[a].total_cmp(&self.p_joint[b]).then(b.cmp(&a)))
            .expect("six classes");
        ManeuverLabel::ALL[k]
    }

    pub fn prob(&self, m: ManeuverLabel) -> f64 {
        self.p_joint[m.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStep {
    pub mu: Point,
    pub sigma: Point,
    pub rho: f64,
}

impl GaussianStep {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.x > 0.0 && self.sigma.y > 0.0) || !(self.rho.abs() < 1.0) || !self.mu.is_finite() {
            return Err(Error::Invalid(format!("invalid Gaussian step {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrajectory {
    pub steps: Vec<GaussianStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPrediction {
    pub target: u64,
    pub maneuvers: ManeuverDistribution,
    /// One trajectory per maneuver, indexed like [`ManeuverLabel::ALL`].
    pub trajectories: Vec<GaussianTrajectory>,
}

impl TargetPrediction {
    pub fn best(&self) -> &GaussianTrajectory {
        &self.trajectories[self.maneuvers.argmax().index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub instance: InstanceId,
    pub targets: Vec<TargetPrediction>,
}

/// Ego-centric grid of intention vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialIntentionTensor {
    /// `HW x Z`.
    pub tensor: Mat,
    pub target_cells: Vec<(u64, Cell)>,
    /// Targets that lost their cell to a nearer target.
    pub displaced: Vec<(u64, Cell)>,
}

/// Places every target's `Z` at its cell relative to the ego.
pub fn assemble(zs: &[(u64, Vec<f64>, Point)], spec: &GridSpec) -> Result<SocialIntentionTensor> {
    spec.validate()?;
    let dim = zs.first().map_or(0, |z| z.1.len());
    if zs.iter().any(|z| z.1.len() != dim) {
        return Err(Error::DimensionMismatch("intention vectors differ in length".into()));
    }
    let items: Vec<(Point, u64)> = zs.iter().map(|z| (z.2, z.0)).collect();
    let p = place(&items, spec);
    let mut tensor = Mat::zeros((spec.cells(), dim));
    let mut target_cells = Vec::new();
    for &(k, cell) in &p.placed {
        tensor
            .row_mut(spec.index(cell))
            .assign(&ndarray::ArrayView1::from(zs[k].1.as_slice()));
        target_cells.push((zs[k].0, cell));
    }
    target_cells.sort_unstable();
    let mut displaced: Vec<(u64, Cell)> = p.displaced.iter().map(|&(k, c)| (zs[k].0, c)).collect();
    displaced.sort_unstable();
    Ok(SocialIntentionTensor {
        tensor,
        target_cells,
        displaced,
    })
}

/// Runs the convolutional stack and reads `Z⁺` at every placed target's
/// cell.
pub fn refine(s: &SocialIntentionTensor, params: &FcnParams, spec: &GridSpec) -> Result<Vec<(u64, Vec<f64>)>> {
    if s.tensor.dim() != (spec.cells(), params.conv1.lin.inputs() / 9) {
        return Err(Error::Shape(format!("social intention tensor {:?} does not fit the stack", s.tensor.dim())));
    }
    let mut g = Graph::new();
    let x = g.constant(s.tensor.clone());
    let y = params.forward(&mut g, x, 1, spec);
    let out = g.value(y);
    Ok(s.target_cells
        .iter()
        .map(|&(id, cell)| (id, out.row(spec.index(cell)).to_vec()))
        .collect())
}

pub fn maneuver_distribution(z: &[f64], params: &HeadParams) -> Result<ManeuverDistribution> {
    if z.len() != params.hidden.inputs() {
        return Err(Error::Shape(format!("head expects {} inputs, got {}", params.hidden.inputs(), z.len())));
    }
    let mut g = Graph::new();
    let x = g.constant(Mat::from_shape_vec((1, z.len()), z.to_vec()).expect("row"));
    let (lat, lon) = params.forward(&mut g, x);
    let (a, b) = (g.value(lat), g.value(lon));
    Ok(ManeuverDistribution::from_parts(
        [a[[0, 0]].exp(), a[[0, 1]].exp(), a[[0, 2]].exp()],
        [b[[0, 0]].exp(), b[[0, 1]].exp()],
    ))
}

/// Checks a maneuver code is one lateral one-hot followed by one
/// longitudinal one-hot.
pub fn maneuver_from_code(code: &[f64; 5]) -> Result<ManeuverLabel> {
    let bad = || Error::Invalid(format!("invalid maneuver encoding {code:?}"));
    let hot = |xs: &[f64]| -> Option<usize> {
        (xs.iter().all(|&x| x == 0.0 || x == 1.0) && xs.iter().filter(|&&x| x == 1.0).count() == 1)
            .then(|| xs.iter().position(|&x| x == 1.0))
            .flatten()
    };
    let lat = hot(&code[..3]).ok_or_else(bad)?;
    let lon = hot(&code[3..]).ok_or_else(bad)?;
    Ok(ManeuverLabel::new(Lateral::ALL[lat], Longitudinal::ALL[lon]))
}

pub(crate) fn collect_trajectory(
    g: &Graph<'_>,
    d: &DecodedSteps,
    i: usize,
    to_world: impl Fn(Point) -> Point,
) -> GaussianTrajectory {
    let (mu, sg, rho) = (g.value(d.mu), g.value(d.sigma), g.value(d.rho));
    GaussianTrajectory {
        steps: (0..d.steps)
            .map(|k| {
                let r = k * d.m + i;
                GaussianStep {
                    mu: to_world(Point::new(mu[[r, 0]], mu[[r, 1]])),
                    sigma: Point::new(sg[[r, 0]], sg[[r, 1]]),
                    rho: rho[[r, 0]],
                }
            })
            .collect(),
    }
}

/// Decodes one maneuver's trajectory, with means offset from `last_pos`.
pub fn decode(
    z: &[f64],
    code: [f64; 5],
    last_pos: Point,
    params: &DecoderParams,
    steps: usize,
) -> Result<GaussianTrajectory> {
    maneuver_from_code(&code)?;
    if z.len() != params.z_dim() {
        return Err(Error::Shape(format!("decoder expects {} inputs, got {}", params.z_dim(), z.len())));
    }
    let mut g = Graph::new();
    let zv = g.constant(Mat::from_shape_vec((1, z.len()), z.to_vec()).expect("row"));
    let d = params.forward(&mut g, zv, &[code], steps, 1.0);
    Ok(collect_trajectory(&g, &d, 0, |p| p.add(last_pos)))
}

/// Negative log-density of `y` under a bivariate Gaussian step.
pub fn gaussian_nll(step: &GaussianStep, y: Point) -> Result<f64> {
    step.validate()?;
    let (sx, sy, r) = (step.sigma.x, step.sigma.y, step.rho);
    let dx = y.x - step.mu.x;
    let dy = y.y - step.mu.y;
    let q = 1.0 - r * r;
    let z = (dx / sx).powi(2) - 2.0 * r * dx * dy / (sx * sy) + (dy / sy).powi(2);
    Ok((2.0 * PI * sx * sy * q.sqrt()).ln() + z / (2.0 * q))
}

/// `log Σ exp(x)` with max-shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Joint log-likelihood of the targets' futures: the sum over targets of
/// the log of the maneuver mixture of whole-trajectory likelihoods.
pub fn posterior(pred: &PredictionSet, futures: &[(u64, Vec<Point>)]) -> Result<f64> {
    let mut total = 0.0;
    for (id, future) in futures {
        let t = pred
            .targets
            .iter()
            .find(|t| t.target == *id)
            .ok_or_else(|| Error::Missing(format!("prediction for target {id}")))?;
        let mut terms = Vec::with_capacity(6);
        for (k, traj) in t.trajectories.iter().enumerate() {
            if traj.steps.len() != future.len() {
                return Err(Error::Shape(format!(
                    "target {id}: {} predicted steps for {} observed",
                    traj.steps.len(),
                    future.len()
                )));
            }
            let mut ll = t.maneuvers.p_joint[k].ln();
            for (s, y) in traj.steps.iter().zip(future) {
                ll -= gaussian_nll(s, *y)?;
            }
            terms.push(ll);
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}
