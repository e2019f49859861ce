//! Optimization: the training objective, Adam, the epoch loop and
//! finite-difference gradient verification.

use std::path::PathBuf;

use condpred_tape::{Graph, Mat, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Meta};
use crate::data::Instance;
use crate::decoder::{gaussian_nll, PredictionSet};
use crate::error::{Error, Result};
use crate::model::{Model, Prepared};
use crate::nn::{named, Params};
use crate::scene::{ManeuverLabel, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Instances per optimizer step.
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm limit.
    pub clip: f64,
    /// When set, the step size follows a cosine from `lr` down to this
    /// value over the run.
    pub lr_final: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            epochs: 10,
            seed: 0,
            clip: 10.0,
            lr_final: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if let Some(f) = self.lr_final {
            if !(f.is_finite() && f > 0.0 && f <= self.lr) {
                return Err(Error::Config("lr_final must be in (0, lr]".into()));
            }
        }
        Ok(())
    }

    /// Step size used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            None => self.lr,
            Some(f) => {
                let frac = if self.epochs <= 1 { 0.0 } else { (epoch - 1) as f64 / (self.epochs - 1) as f64 };
                f + 0.5 * (self.lr - f) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Objective evaluated on finished predictions: for each target, the summed
/// per-frame negative log-likelihood of its future under the true
/// maneuver's trajectory minus the log-probability of that maneuver.
pub fn loss_from_predictions(pred: &PredictionSet, truth: &[(u64, Vec<Point>, Option<ManeuverLabel>)]) -> Result<f64> {
    let mut total = 0.0;
    for (id, future, label) in truth {
        let label = label.ok_or_else(|| Error::Missing(format!("maneuver label for target {id}")))?;
        let t = pred
            .targets
            .iter()
            .find(|t| t.target == *id)
            .ok_or_else(|| Error::Missing(format!("prediction for target {id}")))?;
        let traj = &t.trajectories[label.index()];
        if traj.steps.len() != future.len() {
            return Err(Error::Shape(format!(
                "target {id}: {} predicted frames, {} observed",
                traj.steps.len(),
                future.len()
            )));
        }
        for (s, &y) in traj.steps.iter().zip(future) {
            total += gaussian_nll(s, y)?;
        }
        total -= t.maneuvers.prob(label).ln();
    }
    Ok(total)
}

/// Adam with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new<P: Params>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Mat> = named(params).iter().map(|(_, m)| Mat::zeros(m.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads` follows the parameters' visiting order.
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &[Mat]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut k = 0;
        params.visit_mut("", &mut |_, p| {
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
            k += 1;
        });
    }
}

/// Gradients of `loss` for every parameter in visiting order, zero where
/// the loss does not depend on it.
pub fn gradients<P: Params>(g: &Graph<'_>, loss: Var, params: &P) -> Vec<Mat> {
    let grads = g.backward(loss);
    named(params)
        .into_iter()
        .map(|(_, m)| grads.param(m).cloned().unwrap_or_else(|| Mat::zeros(m.dim())))
        .collect()
}

/// Scales `grads` so their global norm is at most `limit`; returns the norm
/// before clipping.
pub fn clip_norm(grads: &mut [Mat], limit: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > limit {
        let k = limit / norm;
        for g in grads {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}

/// Prepares instances for training, dropping those without targets.
pub fn prepare_all(model: &Model, instances: &[Instance]) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        if inst.targets.is_empty() {
            continue;
        }
        if !inst.has_ground_truth() {
            return Err(Error::Missing(format!("ground truth for instance {}", inst.id)));
        }
        out.push(model.prepare(inst)?);
    }
    Ok(out)
}

/// Mean objective per instance over `set`, in chunks of `batch`.
pub fn mean_loss(model: &Model, set: &[Prepared], batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Invalid("empty set".into()));
    }
    let mut total = 0.0;
    for chunk in set.chunks(batch.max(1)) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let mut g = Graph::new();
        let l = model.loss(&mut g, &refs)?;
        total += g.value(l)[[0, 0]] * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Epoch 0 holds the loss of the initial parameters; later epochs the
    /// mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (training loss when there
    /// is no validation set).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub log: Vec<EpochLog>,
}

/// Where and how training reports progress.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Best checkpoint is written here whenever it improves.
    pub checkpoint: Option<PathBuf>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochLog) + 'a>>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

pub fn train(
    mut model: Model,
    train_set: &[Instance],
    val_set: &[Instance],
    cfg: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_p = prepare_all(&model, train_set)?;
    let val_p = prepare_all(&model, val_set)?;
    if train_p.is_empty() {
        return Err(Error::Invalid("training set has no instances with targets".into()));
    }
    let score = |m: &Model, train_loss: f64| -> Result<(f64, Option<f64>)> {
        if val_p.is_empty() {
            Ok((train_loss, None))
        } else {
            let v = mean_loss(m, &val_p, cfg.batch)?;
            Ok((v, Some(v)))
        }
    };
    let init_loss = mean_loss(&model, &train_p, cfg.batch)?;
    if !init_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            batch: 0,
            loss: init_loss,
        });
    }
    let (mut best_score, val) = score(&model, init_loss)?;
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: init_loss,
        val_loss: val,
    }];
    let emit = |hooks: &mut TrainHooks<'_>, entry: &EpochLog| {
        log::info!(
            "epoch {} train {:.6} val {}",
            entry.epoch,
            entry.train_loss,
            entry.val_loss.map_or("-".into(), |v| format!("{v:.6}"))
        );
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(entry);
        }
    };
    emit(&mut hooks, &history[0]);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let write = |m: &Model, epoch: usize, entry: &EpochLog, path: &Option<PathBuf>| -> Result<()> {
        if let Some(p) = path {
            let meta = Meta {
                epoch,
                train_loss: Some(entry.train_loss),
                val_loss: entry.val_loss,
                seed: cfg.seed,
            };
            checkpoint::save(p, m, &meta)?;
        }
        Ok(())
    };
    write(&best, 0, &history[0], &hooks.checkpoint)?;

    let mut adam = Adam::new(&model.params, cfg.lr);
    for epoch in 1..=cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        let order = epoch_order(train_p.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let refs: Vec<&Prepared> = chunk.iter().map(|&i| &train_p[i]).collect();
            let mut grads = {
                let mut g = Graph::new();
                let l = model.loss(&mut g, &refs)?;
                let value = g.value(l)[[0, 0]];
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: value,
                    });
                }
                sum += value * chunk.len() as f64;
                gradients(&g, l, &model.params)
            };
            let norm = clip_norm(&mut grads, cfg.clip);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: norm,
                });
            }
            adam.step(&mut model.params, &grads);
        }
        let train_loss = sum / train_p.len() as f64;
        let (s, val) = score(&model, train_loss)?;
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss: val,
        };
        emit(&mut hooks, &entry);
        if s < best_score {
            best_score = s;
            best = model.clone();
            best_epoch = epoch;
            write(&best, epoch, &entry, &hooks.checkpoint)?;
        }
        history.push(entry);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        log: history,
    })
}

/// Per-group result of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
}

/// Top-level group of a parameter name: `enc_nbr.lstm.wh` is in `enc_nbr`.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Compares the analytic directional derivative of `loss` along a random
/// unit direction per parameter group with a central difference of step
/// `eps`. `corrupt` may alter the analytic gradient of any matrix before
/// comparison.
pub fn check_gradients<P, F>(
    params: &P,
    eps: f64,
    seed: u64,
    loss: F,
    corrupt: &dyn Fn(&str, &mut Mat),
) -> Result<GradCheck>
where
    P: Params + Clone,
    F: for<'a> Fn(&'a P, &mut Graph<'a>) -> Result<Var>,
{
    let eval = |p: &P| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(p, &mut g)?;
        Ok(g.value(l)[[0, 0]])
    };
    let mut analytic = {
        let mut g = Graph::new();
        let l = loss(params, &mut g)?;
        gradients(&g, l, params)
    };
    let names: Vec<(String, (usize, usize))> = named(params).into_iter().map(|(n, m)| (n, m.dim())).collect();
    for ((name, _), grad) in names.iter().zip(analytic.iter_mut()) {
        corrupt(name, grad);
    }
    let mut order: Vec<&str> = Vec::new();
    for (n, _) in &names {
        if !order.contains(&group_of(n)) {
            order.push(group_of(n));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(order.len());
    for group in order {
        let mut dir: Vec<Option<Mat>> = names
            .iter()
            .map(|(n, dim)| (group_of(n) == group).then(|| Mat::from_shape_simple_fn(*dim, || StandardNormal.sample(&mut rng))))
            .collect();
        let norm = dir.iter().flatten().map(|u| u.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        for u in dir.iter_mut().flatten() {
            u.mapv_inplace(|x| x / norm);
        }
        let a: f64 = dir
            .iter()
            .zip(&analytic)
            .filter_map(|(u, g)| u.as_ref().map(|u| (g * u).sum()))
            .sum();
        let shifted = |sign: f64| -> Result<f64> {
            let mut p = params.clone();
            let mut i = 0;
            p.visit_mut("", &mut |_, m| {
                if let Some(u) = &dir[i] {
                    m.scaled_add(sign * eps, u);
                }
                i += 1;
            });
            eval(&p)
        };
        let n = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
        let scale = a.abs().max(n.abs());
        let rel = if scale < 1e-10 { (a - n).abs() } else { (a - n).abs() / scale };
        groups.push(GroupCheck {
            name: group.to_string(),
            analytic: a,
            numeric: n,
            rel_error: rel,
        });
    }
    let max_rel_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    Ok(GradCheck { groups, max_rel_error })
}

/// Gradient check of the full training objective on `batch`.
pub fn grad_check(model: &Model, batch: &[&Prepared], eps: f64, seed: u64) -> Result<GradCheck> {
    grad_check_with(model, batch, eps, seed, &|_, _| {})
}

pub fn grad_check_with(
    model: &Model,
    batch: &[&Prepared],
    eps: f64,
    seed: u64,
    corrupt: &dyn Fn(&str, &mut Mat),
) -> Result<GradCheck> {
    check_gradients(
        &model.params,
        eps,
        seed,
        |p, g| crate::model::loss_with(&model.config, p, g, batch),
        corrupt,
    )
}
