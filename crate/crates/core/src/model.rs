//! The full forecasting model: configuration, parameter groups, instance
//! preparation and the batched forward pass.

use std::collections::HashMap;

use condpred_tape::{Graph, Mat, Var};
use serde::{Deserialize, Serialize};

use crate::data::{Horizon, Instance, InstanceId};
use crate::decoder::{
    collect_trajectory, DecodedSteps, DecoderParams, FcnParams, HeadParams, ManeuverDistribution, PredictionSet,
    TargetPrediction,
};
use crate::encoder::{relative, EncoderParams, Role};
use crate::error::{Error, Result};
use crate::fusion::{fusion_strategy, AttentionParams, DomainFusion, InfluenceParams};
use crate::graphs::{place, PoolParams};
use crate::impl_params;
use crate::nn::Init;
use crate::scene::{Cell, GridSpec, LocalFrame, ManeuverLabel, Point};

/// Layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    /// Channels of the encoders' convolutional lift.
    pub conv: usize,
    /// Encoder state size `D`.
    pub enc: usize,
    /// Attention width `D'`.
    pub attn: usize,
    pub heads: usize,
    /// Influence context width.
    pub ctx: usize,
    /// Hidden width of the refinement stack.
    pub fcn: usize,
    /// Hidden width of the maneuver classifier.
    pub head: usize,
    /// Decoder state size.
    pub dec: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            conv: 32,
            enc: 64,
            attn: 64,
            heads: 1,
            ctx: 64,
            fcn: 128,
            head: 64,
            dec: 128,
        }
    }
}

/// Component switches matching the ablation columns: current-domain
/// information, future-domain information, the cross-domain strategy,
/// influence evaluation and ego-centric refinement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub info_c: bool,
    pub info_f: bool,
    /// Name of a [`DomainFusion`] strategy: `cross`, `self` or `off`.
    pub icd: String,
    pub iie: bool,
    pub fusion: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::full()
    }
}

impl Toggles {
    pub fn full() -> Self {
        Self {
            info_c: true,
            info_f: true,
            icd: "cross".into(),
            iie: true,
            fusion: true,
        }
    }

    /// A named preset: `variant1` .. `variant5` or `full`.
    pub fn preset(name: &str) -> Result<Self> {
        VARIANTS
            .iter()
            .find(|(n, ..)| n.eq_ignore_ascii_case(name))
            .map(|&(_, c, f, icd, iie, fusion)| Toggles {
                info_c: c,
                info_f: f,
                icd: icd.into(),
                iie,
                fusion,
            })
            .ok_or_else(|| Error::Config(format!("unknown variant '{name}'")))
    }

    pub fn domains(&self) -> usize {
        usize::from(self.info_c) + usize::from(self.info_f)
    }

    pub fn strategy(&self) -> Result<&'static dyn DomainFusion> {
        fusion_strategy(&self.icd)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.strategy()?;
        if s.needs_both() && self.domains() != 2 {
            return Err(Error::Config(format!("icd = {} needs both info_c and info_f", s.name())));
        }
        if self.iie && self.domains() != 2 {
            return Err(Error::Config("iie needs both info_c and info_f".into()));
        }
        Ok(())
    }

    /// Short description in the ablation table layout.
    pub fn columns(&self) -> [String; 5] {
        let mark = |b: bool| if b { "x" } else { "" }.to_string();
        let icd = match self.icd.as_str() {
            "cross" => "x".to_string(),
            "off" => String::new(),
            other => other.to_string(),
        };
        [mark(self.info_c), mark(self.info_f), icd, mark(self.iie), mark(self.fusion)]
    }
}

type Preset = (&'static str, bool, bool, &'static str, bool, bool);

/// Ablation presets: name, info_c, info_f, icd, iie, fusion.
pub const VARIANTS: [Preset; 6] = [
    ("variant1", false, false, "off", false, false),
    ("variant2", true, false, "off", false, true),
    ("variant3", false, true, "off", false, true),
    ("variant4", true, true, "self", false, true),
    ("variant5", true, true, "cross", false, true),
    ("full", true, true, "cross", true, true),
];

pub fn variant_names() -> Vec<&'static str> {
    VARIANTS.iter().map(|v| v.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub toggles: Toggles,
    pub grid: GridSpec,
    pub horizon: Horizon,
    /// Positions fed to the encoders are divided by this length and decoded
    /// displacements and deviations multiplied by it (meters).
    pub length_unit: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            toggles: Toggles::full(),
            grid: GridSpec::default(),
            horizon: Horizon::default(),
            length_unit: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.toggles.validate()?;
        self.grid.validate()?;
        let d = &self.dims;
        if [d.conv, d.enc, d.attn, d.heads, d.ctx, d.fcn, d.head, d.dec].contains(&0) {
            return Err(Error::Config("all dims must be positive".into()));
        }
        if d.attn % d.heads != 0 {
            return Err(Error::Config(format!("attn {} is not divisible by heads {}", d.attn, d.heads)));
        }
        if !(self.length_unit.is_finite() && self.length_unit > 0.0) {
            return Err(Error::Config("length_unit must be positive".into()));
        }
        if self.horizon.t_obs < 2 || self.horizon.t_pred == 0 {
            return Err(Error::Config("t_obs must be at least 2 and t_pred positive".into()));
        }
        Ok(())
    }

    pub fn graph_channels(&self) -> usize {
        self.dims.enc + 1
    }

    pub fn i_dim(&self) -> usize {
        match self.toggles.domains() {
            0 => 0,
            n => self
                .toggles
                .strategy()
                .map_or(0, |s| s.output_dim(n, self.graph_channels(), self.dims.attn)),
        }
    }

    pub fn g_dim(&self) -> usize {
        if self.toggles.iie {
            2 * self.dims.ctx
        } else {
            0
        }
    }

    /// Width of the intention vector `Z`.
    pub fn z_dim(&self) -> usize {
        if self.toggles.domains() == 0 {
            self.dims.enc
        } else {
            self.i_dim() + self.g_dim()
        }
    }
}

/// Every learnable parameter group. Groups switched off by the toggles are
/// absent.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub enc_target: EncoderParams,
    pub enc_ego: Option<EncoderParams>,
    pub enc_nbr: Option<EncoderParams>,
    pub pool_c: Option<PoolParams>,
    pub pool_f: Option<PoolParams>,
    pub attn_c: Option<AttentionParams>,
    pub attn_f: Option<AttentionParams>,
    pub influence: Option<InfluenceParams>,
    pub fcn: Option<FcnParams>,
    pub head: HeadParams,
    pub decoder: DecoderParams,
}

impl_params!(ModelParams {
    enc_target,
    enc_ego,
    enc_nbr,
    pool_c,
    pool_f,
    attn_c,
    attn_f,
    influence,
    fcn,
    head,
    decoder,
});

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dims;
        let t = &cfg.toggles;
        let init = Init::new(seed);
        let uses_attn = t.domains() > 0 && t.strategy()?.uses_attention();
        let z = cfg.z_dim();
        Ok(Self {
            enc_target: EncoderParams::init(Role::Target, seed, d.conv, d.enc),
            enc_ego: t.info_f.then(|| EncoderParams::init(Role::Ego, seed, d.conv, d.enc)),
            enc_nbr: t.info_c.then(|| EncoderParams::init(Role::Neighbor, seed, d.conv, d.enc)),
            pool_c: t.info_c.then(|| PoolParams::init(&init, 10, d.enc)),
            pool_f: t.info_f.then(|| PoolParams::init(&init, 11, d.enc)),
            attn_c: (uses_attn && t.info_c)
                .then(|| AttentionParams::init(&init, 20, cfg.graph_channels(), d.attn, d.heads)),
            attn_f: (uses_attn && t.info_f)
                .then(|| AttentionParams::init(&init, 21, cfg.graph_channels(), d.attn, d.heads)),
            influence: t
                .iie
                .then(|| InfluenceParams::init(&init, 30, &cfg.grid, cfg.graph_channels(), d.enc, d.ctx)),
            fcn: t.fusion.then(|| FcnParams::init(&init, 40, z, d.fcn)),
            head: HeadParams::init(&init, 50, z, d.head),
            decoder: DecoderParams::init(&init, 60, z, d.dec),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreparedTarget {
    pub agent_id: u64,
    #[serde(skip)]
    pub frame: LocalFrame,
    /// Scaled history relative to the target at the prediction instant.
    pub history: Vec<Point>,
    /// `(agent index, cell)` of each neighbor that holds a cell.
    pub neighbors: Vec<(usize, Cell)>,
    /// The ego's cell in the target's grid.
    pub ego_cell: Option<Cell>,
    /// Future in the target frame (meters).
    pub future: Option<Vec<Point>>,
    pub maneuver: Option<ManeuverLabel>,
}

/// Model-ready form of an [`Instance`]: relative, scaled sequences and
/// resolved grid cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prepared {
    pub id: InstanceId,
    /// Scaled neighbor histories, each relative to its own last point.
    pub agents: Vec<Vec<Point>>,
    /// Scaled ego plan relative to the ego at the prediction instant.
    pub plan: Vec<Point>,
    pub targets: Vec<PreparedTarget>,
    /// Ego-grid layouts: `(target index, cell)` lists. The first holds every
    /// target that won its cell; each further layout swaps in one target
    /// that lost a collision.
    pub layouts: Vec<Vec<(usize, Cell)>>,
    /// `(layout, cell)` where each target's refined vector is read.
    pub readout: Vec<(usize, Cell)>,
}

impl Prepared {
    /// Everything except the ego plan, for checking candidate isolation.
    pub fn non_ego_inputs(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("plan");
        }
        Ok(serde_json::to_string(&v)?)
    }
}

fn frame_of(points: &[Point]) -> LocalFrame {
    if points.len() >= 2 {
        LocalFrame::from_history(points)
    } else {
        LocalFrame::new(points[0], 1.0)
    }
}

/// Rows of a batch of decoded sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// One sequence per target under its labelled maneuver.
    TrueManeuver,
    /// Six sequences per target, one per maneuver.
    All,
}

/// Graph outputs of a batch.
pub struct BatchOutput {
    pub log_lat: Var,
    pub log_lon: Var,
    pub decoded: DecodedSteps,
    /// Targets in batch order as `(instance index, target index)`.
    pub targets: Vec<(usize, usize)>,
    pub beta: Option<Var>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn prepare(&self, inst: &Instance) -> Result<Prepared> {
        prepare(&self.config, inst)
    }

    /// Builds the forward pass of a batch on `g`.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, batch: &[&Prepared], mode: DecodeMode) -> Result<BatchOutput> {
        forward_with(&self.config, &self.params, g, batch, mode)
    }

    /// Training objective of a batch: the mean over instances of the summed
    /// per-target negative log-likelihood of the future under the true
    /// maneuver plus the maneuver classification loss.
    pub fn loss<'a>(&'a self, g: &mut Graph<'a>, batch: &[&Prepared]) -> Result<Var> {
        loss_with(&self.config, &self.params, g, batch)
    }
    /// Predicts all six maneuver trajectories for every target of each
    /// instance. Instances without targets yield empty sets.
    pub fn predict_prepared(&self, batch: &[&Prepared]) -> Result<Vec<PredictionSet>> {
        let mut sets: Vec<PredictionSet> = batch
            .iter()
            .map(|p| PredictionSet {
                instance: p.id,
                targets: Vec::new(),
            })
            .collect();
        let nonempty: Vec<&Prepared> = batch.iter().copied().filter(|p| !p.targets.is_empty()).collect();
        if nonempty.is_empty() {
            return Ok(sets);
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, &nonempty, DecodeMode::All)?;
        let (lat, lon) = (g.value(out.log_lat), g.value(out.log_lon));
        let index: HashMap<InstanceId, usize> = batch.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        for (i, &(b, k)) in out.targets.iter().enumerate() {
            let t = &nonempty[b].targets[k];
            let maneuvers = ManeuverDistribution::from_parts(
                [lat[[i, 0]].exp(), lat[[i, 1]].exp(), lat[[i, 2]].exp()],
                [lon[[i, 0]].exp(), lon[[i, 1]].exp()],
            );
            let trajectories = (0..6)
                .map(|m| collect_trajectory(&g, &out.decoded, i * 6 + m, |p| t.frame.to_world(p)))
                .collect();
            sets[index[&nonempty[b].id]].targets.push(TargetPrediction {
                target: t.agent_id,
                maneuvers,
                trajectories,
            });
        }
        Ok(sets)
    }

    pub fn predict(&self, inst: &Instance) -> Result<PredictionSet> {
        let p = self.prepare(inst)?;
        Ok(self.predict_prepared(&[&p])?.remove(0))
    }

    /// Predicts many instances in chunks of `chunk`.
    pub fn predict_all(&self, instances: &[Instance], chunk: usize) -> Result<Vec<PredictionSet>> {
        let prepared = instances.iter().map(|i| self.prepare(i)).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(prepared.len());
        for c in prepared.chunks(chunk.max(1)) {
            let refs: Vec<&Prepared> = c.iter().collect();
            out.extend(self.predict_prepared(&refs)?);
        }
        Ok(out)
    }
}

/// Builds the forward pass of a batch on `g` with parameters `p`.
pub fn forward_with<'a>(
    cfg: &ModelConfig,
    p: &'a ModelParams,
    g: &mut Graph<'a>,
    batch: &[&Prepared],
    mode: DecodeMode,
) -> Result<BatchOutput> {
    let spec = &cfg.grid;
    let hw = spec.cells();
    let targets: Vec<(usize, usize)> = batch
        .iter()
        .enumerate()
        .flat_map(|(b, inst)| (0..inst.targets.len()).map(move |k| (b, k)))
        .collect();
    let n = targets.len();
    if n == 0 {
        return Err(Error::Invalid("batch has no targets".into()));
    }
    let tgt = |i: usize| &batch[targets[i].0].targets[targets[i].1];

    let hist: Vec<Vec<Point>> = (0..n).map(|i| tgt(i).history.clone()).collect();
    let xi = p.enc_target.forward(g, &hist);

    let mut graphs = Vec::new();
    let mut attn = Vec::new();
    let mut vc = None;
    let mut vf = None;
    if let (Some(enc), Some(pool)) = (&p.enc_nbr, &p.pool_c) {
        let mut seqs = Vec::new();
        let mut offsets = Vec::with_capacity(batch.len());
        for inst in batch {
            offsets.push(seqs.len());
            seqs.extend(inst.agents.iter().cloned());
        }
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for i in 0..n {
            for &(a, cell) in &tgt(i).neighbors {
                src.push(offsets[targets[i].0] + a);
                dst.push(i * hw + spec.index(cell));
            }
        }
        let social = if src.is_empty() {
            g.constant(Mat::zeros((n * hw, cfg.dims.enc)))
        } else {
            let enc_all = enc.forward(g, &seqs);
            let rows = g.gather_rows(enc_all, &src);
            g.scatter_rows(rows, &dst, n * hw)
        };
        let mut occ = vec![false; n * hw];
        for &r in &dst {
            occ[r] = true;
        }
        let v = pool.forward(g, social, &occ, xi, n, spec);
        vc = Some(v);
        graphs.push(v);
        if let Some(a) = &p.attn_c {
            attn.push(a);
        }
    }
    if let (Some(enc), Some(pool)) = (&p.enc_ego, &p.pool_f) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for i in 0..n {
            if let Some(cell) = tgt(i).ego_cell {
                src.push(targets[i].0);
                dst.push(i * hw + spec.index(cell));
            }
        }
        let social = if src.is_empty() {
            g.constant(Mat::zeros((n * hw, cfg.dims.enc)))
        } else {
            let plans: Vec<Vec<Point>> = batch.iter().map(|b| b.plan.clone()).collect();
            let enc_all = enc.forward(g, &plans);
            let rows = g.gather_rows(enc_all, &src);
            g.scatter_rows(rows, &dst, n * hw)
        };
        let mut occ = vec![false; n * hw];
        for &r in &dst {
            occ[r] = true;
        }
        let v = pool.forward(g, social, &occ, xi, n, spec);
        vf = Some(v);
        graphs.push(v);
        if let Some(a) = &p.attn_f {
            attn.push(a);
        }
    }

    let mut beta = None;
    let z = if graphs.is_empty() {
        xi
    } else {
        let strategy = cfg.toggles.strategy()?;
        let i_vec = strategy.fuse(g, &graphs, &attn, n, hw);
        match (&p.influence, vc, vf) {
            (Some(inf), Some(c), Some(f)) => {
                let (b, gv) = inf.forward(g, c, f, xi, n, spec);
                beta = Some(b);
                g.concat_cols(&[i_vec, gv])
            }
            _ => i_vec,
        }
    };

    let zplus = match &p.fcn {
        Some(fcn) => {
            let mut base = Vec::with_capacity(batch.len());
            let mut layouts = 0;
            for inst in batch {
                base.push(layouts);
                layouts += inst.layouts.len();
            }
            let mut first = vec![0; batch.len()];
            let mut acc = 0;
            for (b, inst) in batch.iter().enumerate() {
                first[b] = acc;
                acc += inst.targets.len();
            }
            let mut src = Vec::new();
            let mut dst = Vec::new();
            for (b, inst) in batch.iter().enumerate() {
                for (l, layout) in inst.layouts.iter().enumerate() {
                    for &(k, cell) in layout {
                        src.push(first[b] + k);
                        dst.push((base[b] + l) * hw + spec.index(cell));
                    }
                }
            }
            let rows = g.gather_rows(z, &src);
            let s = g.scatter_rows(rows, &dst, layouts * hw);
            let refined = fcn.forward(g, s, layouts, spec);
            let read: Vec<usize> = targets
                .iter()
                .map(|&(b, k)| {
                    let (l, cell) = batch[b].readout[k];
                    (base[b] + l) * hw + spec.index(cell)
                })
                .collect();
            g.gather_rows(refined, &read)
        }
        None => z,
    };

    let (log_lat, log_lon) = p.head.forward(g, zplus);

    let (rows, codes): (Vec<usize>, Vec<[f64; 5]>) = match mode {
        DecodeMode::TrueManeuver => (0..n)
            .map(|i| {
                tgt(i)
                    .maneuver
                    .map(|m| (i, m.encoding()))
                    .ok_or_else(|| Error::Missing(format!("maneuver label for target {}", tgt(i).agent_id)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        DecodeMode::All => (0..n)
            .flat_map(|i| ManeuverLabel::ALL.iter().map(move |m| (i, m.encoding())))
            .unzip(),
    };
    let zrows = if mode == DecodeMode::TrueManeuver { zplus } else { g.gather_rows(zplus, &rows) };
    let decoded = p
        .decoder
        .forward(g, zrows, &codes, cfg.horizon.t_pred, cfg.length_unit);
    Ok(BatchOutput {
        log_lat,
        log_lon,
        decoded,
        targets,
        beta,
    })
}

/// See [`Model::loss`].
pub fn loss_with<'a>(cfg: &ModelConfig, p: &'a ModelParams, g: &mut Graph<'a>, batch: &[&Prepared]) -> Result<Var> {
    let out = forward_with(cfg, p, g, batch, DecodeMode::TrueManeuver)?;
    let n = out.targets.len();
    let steps = cfg.horizon.t_pred;
    let mut y = Mat::zeros((steps * n, 2));
    let mut lat_sel = Mat::zeros((n, 3));
    let mut lon_sel = Mat::zeros((n, 2));
    for (i, &(b, k)) in out.targets.iter().enumerate() {
        let t = &batch[b].targets[k];
        let future = t
            .future
            .as_ref()
            .ok_or_else(|| Error::Missing(format!("future of target {}", t.agent_id)))?;
        if future.len() != steps {
            return Err(Error::Shape(format!("target {} has {} future points", t.agent_id, future.len())));
        }
        for (s, p) in future.iter().enumerate() {
            y[[s * n + i, 0]] = p.x;
            y[[s * n + i, 1]] = p.y;
        }
        let m = t.maneuver.expect("checked by forward");
        lat_sel[[i, m.lateral.index()]] = 1.0;
        lon_sel[[i, m.longitudinal.index()]] = 1.0;
    }
    let d = &out.decoded;
    let nll = g.bivariate_nll(d.mu, d.sigma, d.rho, y);
    let traj = g.sum_all(nll);
    let ls = g.constant(lat_sel);
    let os = g.constant(lon_sel);
    let a = g.mul(out.log_lat, ls);
    let b = g.mul(out.log_lon, os);
    let a = g.sum_all(a);
    let b = g.sum_all(b);
    let man = g.add(a, b);
    let total = g.sub(traj, man);
    let instances = batch.iter().filter(|b| !b.targets.is_empty()).count();
    Ok(g.scale(total, 1.0 / instances as f64))
}

/// Converts an instance to model inputs under `cfg`.
pub fn prepare(cfg: &ModelConfig, inst: &Instance) -> Result<Prepared> {
    let spec = &cfg.grid;
    let unit = cfg.length_unit;
    if inst.ego_history.is_empty() {
        return Err(Error::Invalid(format!("instance {}: empty ego history", inst.id)));
    }
    let ego_frame = frame_of(&inst.ego_history);
    let ego_now = ego_frame.origin;
    let plan = relative(inst.ego_plan.points(), ego_now, ego_frame.heading, unit);

    let mut agent_index: HashMap<u64, usize> = HashMap::new();
    let mut agents = Vec::new();
    let mut targets = Vec::with_capacity(inst.targets.len());
    for t in &inst.targets {
        if t.history.len() < 2 {
            return Err(Error::Invalid(format!("target {}: history shorter than 2", t.agent_id)));
        }
        if t.history.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid(format!("target {}: non-finite history", t.agent_id)));
        }
        let frame = frame_of(&t.history);
        let mut items = Vec::new();
        let mut ids = Vec::new();
        for nb in &t.neighbors {
            if nb.history.len() < 2 {
                continue;
            }
            let now = *nb.history.last().expect("non-empty");
            items.push((frame.to_local(now), nb.agent_id));
            ids.push(nb);
        }
        let placement = place(&items, spec);
        let neighbors = placement
            .placed
            .iter()
            .map(|&(k, cell)| {
                let nb = ids[k];
                let idx = *agent_index.entry(nb.agent_id).or_insert_with(|| {
                    let f = frame_of(&nb.history);
                    agents.push(relative(&nb.history, f.origin, f.heading, unit));
                    agents.len() - 1
                });
                (idx, cell)
            })
            .collect();
        let future = t
            .future
            .as_ref()
            .map(|f| f.iter().map(|&p| frame.to_local(p)).collect());
        targets.push(PreparedTarget {
            agent_id: t.agent_id,
            frame,
            history: relative(&t.history, frame.origin, frame.heading, unit),
            neighbors,
            ego_cell: spec.cell_of(frame.to_local(ego_now)),
            future,
            maneuver: t.maneuver,
        });
    }

    let items: Vec<(Point, u64)> = targets
        .iter()
        .map(|t| (ego_frame.to_local(t.frame.origin), t.agent_id))
        .collect();
    let placement = place(&items, spec);
    if placement.placed.len() + placement.displaced.len() != targets.len() {
        return Err(Error::Invalid(format!("instance {}: a target lies outside the ego grid", inst.id)));
    }
    let mut layouts = vec![placement.placed.clone()];
    let mut readout = vec![(0, (0, 0)); targets.len()];
    for &(k, cell) in &placement.placed {
        readout[k] = (0, cell);
    }
    for &(k, cell) in &placement.displaced {
        let layout = placement
            .placed
            .iter()
            .map(|&(j, c)| if c == cell { (k, c) } else { (j, c) })
            .collect();
        readout[k] = (layouts.len(), cell);
        layouts.push(layout);
    }
    Ok(Prepared {
        id: inst.id,
        agents,
        plan,
        targets,
        layouts,
        readout,
    })
}
