//! Per-horizon RMSE and NLL, the evaluation protocol and the ablation
//! report.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{downsample_plan, Instance, InstanceId};
use crate::decoder::{gaussian_nll, log_sum_exp, PredictionSet, TargetPrediction};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Toggles};
use crate::scene::Point;
use crate::train::{train, TrainConfig, TrainHooks};

/// Frames per evaluated horizon step (one second at 5 Hz).
pub const FRAMES_PER_SECOND: usize = 5;

/// Evaluated frames (1-based): 5, 10, .. up to `t_pred`.
pub fn horizon_frames(t_pred: usize) -> Vec<usize> {
    (1..=t_pred / FRAMES_PER_SECOND).map(|k| k * FRAMES_PER_SECOND).collect()
}

/// Ground-truth future of one target.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub instance: InstanceId,
    pub target: u64,
    pub future: Vec<Point>,
}

pub fn truths(instances: &[Instance]) -> Result<Vec<Truth>> {
    let mut out = Vec::new();
    for inst in instances {
        for t in &inst.targets {
            let future = t
                .future
                .clone()
                .ok_or_else(|| Error::Missing(format!("future of target {} in {}", t.agent_id, inst.id)))?;
            out.push(Truth {
                instance: inst.id,
                target: t.agent_id,
                future,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllMode {
    /// Six-component maneuver mixture at each frame.
    #[default]
    Mixture,
    /// Only the most probable maneuver's Gaussian.
    BestManeuver,
}

impl std::str::FromStr for NllMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(NllMode::Mixture),
            "best" | "best-maneuver" | "best_maneuver" => Ok(NllMode::BestManeuver),
            _ => Err(Error::Config(format!("unknown nll mode '{s}'"))),
        }
    }
}

/// Values at each horizon followed by their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonValues {
    pub values: Vec<f64>,
    pub avg: f64,
}

impl HorizonValues {
    fn new(values: Vec<f64>) -> Self {
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        Self { values, avg }
    }
}

fn pair<'a>(preds: &'a [PredictionSet], gts: &'a [Truth], t_pred: usize) -> Result<Vec<(&'a TargetPrediction, &'a Truth)>> {
    if gts.is_empty() {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    if horizon_frames(t_pred).is_empty() {
        return Err(Error::Invalid(format!("prediction horizon {t_pred} is shorter than one second")));
    }
    let index: HashMap<(InstanceId, u64), &TargetPrediction> = preds
        .iter()
        .flat_map(|p| p.targets.iter().map(move |t| ((p.instance, t.target), t)))
        .collect();
    gts.iter()
        .map(|gt| {
            let p = index
                .get(&(gt.instance, gt.target))
                .ok_or_else(|| Error::Missing(format!("prediction for target {} in {}", gt.target, gt.instance)))?;
            if gt.future.len() < t_pred || p.trajectories.iter().any(|tr| tr.steps.len() < t_pred) {
                return Err(Error::Shape(format!("target {} in {} is shorter than {t_pred} frames", gt.target, gt.instance)));
            }
            Ok((*p, gt))
        })
        .collect()
}

/// RMSE of the most probable maneuver's mean at each horizon, pooled over
/// all targets.
pub fn rmse_horizons(preds: &[PredictionSet], gts: &[Truth], t_pred: usize) -> Result<HorizonValues> {
    let pairs = pair(preds, gts, t_pred)?;
    let values = horizon_frames(t_pred)
        .into_iter()
        .map(|f| {
            let sq: f64 = pairs
                .iter()
                .map(|(p, gt)| {
                    let mu = p.best().steps[f - 1].mu;
                    let d = mu.sub(gt.future[f - 1]);
                    d.x * d.x + d.y * d.y
                })
                .sum();
            (sq / pairs.len() as f64).sqrt()
        })
        .collect();
    Ok(HorizonValues::new(values))
}

/// Negative log-likelihood of a single frame under one target's prediction.
pub fn frame_nll(p: &TargetPrediction, frame: usize, y: Point, mode: NllMode) -> Result<f64> {
    match mode {
        NllMode::BestManeuver => gaussian_nll(&p.best().steps[frame - 1], y),
        NllMode::Mixture => {
            let mut terms = Vec::with_capacity(p.trajectories.len());
            for (k, tr) in p.trajectories.iter().enumerate() {
                terms.push(p.maneuvers.p_joint[k].ln() - gaussian_nll(&tr.steps[frame - 1], y)?);
            }
            Ok(-log_sum_exp(&terms))
        }
    }
}

/// Mean per-target NLL (natural log) of the true position at each horizon.
pub fn nll_horizons(preds: &[PredictionSet], gts: &[Truth], t_pred: usize, mode: NllMode) -> Result<HorizonValues> {
    let pairs = pair(preds, gts, t_pred)?;
    let mut values = Vec::new();
    for f in horizon_frames(t_pred) {
        let mut sum = 0.0;
        for (p, gt) in &pairs {
            sum += frame_nll(p, f, gt.future[f - 1], mode)?;
        }
        values.push(sum / pairs.len() as f64);
    }
    Ok(HorizonValues::new(values))
}

/// Rate of the ego plan fed to the model during evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanRate {
    /// Every fifth point of the 5 Hz plan.
    #[serde(rename = "1hz")]
    Hz1,
    #[default]
    #[serde(rename = "5hz")]
    Hz5,
}

impl PlanRate {
    pub fn hz(self) -> u32 {
        match self {
            PlanRate::Hz1 => 1,
            PlanRate::Hz5 => 5,
        }
    }
}

impl std::str::FromStr for PlanRate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1hz" | "1" => Ok(PlanRate::Hz1),
            "5hz" | "5" => Ok(PlanRate::Hz5),
            _ => Err(Error::Config(format!("plan rate must be 1hz or 5hz, got '{s}'"))),
        }
    }
}

impl std::fmt::Display for PlanRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}hz", self.hz())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    /// Seconds of each horizon column.
    pub horizons_s: Vec<f64>,
    /// Meters.
    pub rmse: HorizonValues,
    pub nll: HorizonValues,
    pub nll_mode: NllMode,
    /// Logarithm base and aggregation of the NLL columns.
    pub nll_convention: String,
    pub plan_rate: PlanRate,
    pub instances: usize,
    pub targets: usize,
}

impl HorizonReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "metric");
        for h in &self.horizons_s {
            let _ = write!(s, "{:>9}", format!("{h}s"));
        }
        let _ = writeln!(s, "{:>9}", "avg");
        for (name, v) in [("RMSE", &self.rmse), ("NLL", &self.nll)] {
            let _ = write!(s, "{name:<8}");
            for x in &v.values {
                let _ = write!(s, "{x:>9.3}");
            }
            let _ = writeln!(s, "{:>9.3}", v.avg);
        }
        let _ = writeln!(
            s,
            "# {} instances, {} targets, plan {}, nll {:?} ({})",
            self.instances, self.targets, self.plan_rate, self.nll_mode, self.nll_convention
        );
        s
    }
}

/// Replaces each 5 Hz plan with its 1 Hz reduction when requested.
pub fn with_plan_rate(instances: &[Instance], rate: PlanRate, t_pred: usize) -> Result<Vec<Instance>> {
    instances
        .iter()
        .map(|i| match rate {
            PlanRate::Hz5 => Ok(i.clone()),
            PlanRate::Hz1 => Ok(i.with_plan(downsample_plan(&i.ego_plan, t_pred)?)),
        })
        .collect()
}

/// Predictions for many instances, computed in parallel chunks and
/// returned in input order.
pub fn predict_many(model: &Model, instances: &[Instance], chunk: usize) -> Result<Vec<PredictionSet>> {
    let parts: Vec<Result<Vec<PredictionSet>>> = instances
        .par_chunks(chunk.max(1))
        .map(|c| model.predict_all(c, c.len()))
        .collect();
    let mut out = Vec::with_capacity(instances.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Runs the model over `instances` with plans at `rate` and scores both
/// metrics.
pub fn evaluate(model: &Model, instances: &[Instance], rate: PlanRate, mode: NllMode) -> Result<HorizonReport> {
    let t_pred = model.config.horizon.t_pred;
    let inputs = with_plan_rate(instances, rate, t_pred)?;
    let gts = truths(instances)?;
    let preds = predict_many(model, &inputs, 16)?;
    Ok(HorizonReport {
        horizons_s: horizon_frames(t_pred)
            .iter()
            .map(|&f| (f / FRAMES_PER_SECOND) as f64)
            .collect(),
        rmse: rmse_horizons(&preds, &gts, t_pred)?,
        nll: nll_horizons(&preds, &gts, t_pred, mode)?,
        nll_mode: mode,
        nll_convention: "natural log, mean over targets per frame".into(),
        plan_rate: rate,
        instances: instances.iter().filter(|i| !i.targets.is_empty()).count(),
        targets: gts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    pub params: usize,
    pub report: HorizonReport,
}

/// Trains and evaluates each variant with the same seed and data.
pub fn ablation_suite(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[(String, Toggles)],
    train_set: &[Instance],
    val_set: &[Instance],
    test_set: &[Instance],
    rate: PlanRate,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for (name, toggles) in variants {
        let cfg = ModelConfig {
            toggles: toggles.clone(),
            ..base.clone()
        };
        let model = Model::new(cfg, train_cfg.seed)?;
        let out = train(model, train_set, val_set, train_cfg, TrainHooks::default())?;
        let report = evaluate(&out.best, test_set, rate, NllMode::Mixture)?;
        rows.push(AblationRow {
            name: name.clone(),
            toggles: toggles.clone(),
            params: crate::nn::count(&out.best.params),
            report,
        });
    }
    Ok(rows)
}

/// Plain-text table with one row per variant: toggle columns, then average
/// RMSE and NLL.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10}{:>9}{:>9}{:>7}{:>6}{:>8}{:>10}{:>10}{:>10}",
        "variant", "info(c)", "info(f)", "ICD", "IIE", "Fusion", "params", "RMSE", "NLL"
    );
    for r in rows {
        let c = r.toggles.columns();
        let _ = writeln!(
            s,
            "{:<10}{:>9}{:>9}{:>7}{:>6}{:>8}{:>10}{:>10.3}{:>10.3}",
            r.name, c[0], c[1], c[2], c[3], c[4], r.params, r.report.rmse.avg, r.report.nll.avg
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{GaussianStep, GaussianTrajectory, ManeuverDistribution};

    fn pred(id: InstanceId, target: u64, mus: &[Point], sigma: f64) -> PredictionSet {
        let traj = GaussianTrajectory {
            steps: mus
                .iter()
                .map(|&mu| GaussianStep {
                    mu,
                    sigma: Point::new(sigma, sigma),
                    rho: 0.0,
                })
                .collect(),
        };
        PredictionSet {
            instance: id,
            targets: vec![TargetPrediction {
                target,
                maneuvers: ManeuverDistribution::from_parts([1.0, 0.0, 0.0], [1.0, 0.0]),
                trajectories: vec![traj; 6],
            }],
        }
    }

    fn line(n: usize, dy: f64) -> Vec<Point> {
        (1..=n).map(|k| Point::new(k as f64, dy)).collect()
    }

    #[test]
    fn exact_prediction_has_zero_rmse_and_closed_form_nll() {
        let id = InstanceId { ego: 1, t: 0 };
        let gt = vec![Truth {
            instance: id,
            target: 2,
            future: line(25, 0.0),
        }];
        let p = vec![pred(id, 2, &line(25, 0.0), 1.0)];
        let r = rmse_horizons(&p, &gt, 25).unwrap();
        assert_eq!(r.values, vec![0.0; 5]);
        let n = nll_horizons(&p, &gt, 25, NllMode::BestManeuver).unwrap();
        let m = nll_horizons(&p, &gt, 25, NllMode::Mixture).unwrap();
        for v in n.values.iter().chain(&m.values) {
            assert!((v - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_offset_gives_unit_rmse() {
        let id = InstanceId { ego: 1, t: 0 };
        let gt = vec![Truth {
            instance: id,
            target: 2,
            future: line(25, 0.0),
        }];
        let r = rmse_horizons(&[pred(id, 2, &line(25, 1.0), 1.0)], &gt, 25).unwrap();
        assert_eq!(r.values, vec![1.0; 5]);
        assert_eq!(r.avg, 1.0);
    }

    #[test]
    fn missing_or_empty_inputs_are_errors() {
        let id = InstanceId { ego: 1, t: 0 };
        assert!(rmse_horizons(&[], &[], 25).is_err());
        let gt = vec![Truth {
            instance: id,
            target: 9,
            future: line(25, 0.0),
        }];
        assert!(rmse_horizons(&[pred(id, 2, &line(25, 0.0), 1.0)], &gt, 25).is_err());
    }

    #[test]
    fn parse_rates_and_modes() {
        assert_eq!("1hz".parse::<PlanRate>().unwrap(), PlanRate::Hz1);
        assert_eq!("5Hz".parse::<PlanRate>().unwrap(), PlanRate::Hz5);
        assert!("2hz".parse::<PlanRate>().is_err());
        assert_eq!("best".parse::<NllMode>().unwrap(), NllMode::BestManeuver);
        assert_eq!(serde_json::to_string(&PlanRate::Hz1).unwrap(), "\"1hz\"");
    }
}
