//! Acceptance suite: one PASS/FAIL line per criterion. Criteria 1-8 gate
//! the exit status; criterion 9 only reports.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use condpred_core::data::synthetic::{generate_synthetic, ScenarioMix, SynthConfig};
use condpred_core::data::{build_splits, extract_instances, load_tracks, Horizon, Instance, InstanceId, Neighbor, SplitSpec};
use condpred_core::decoder::{
    gaussian_nll, maneuver_distribution, posterior, GaussianStep, GaussianTrajectory, HeadParams, ManeuverDistribution,
    PredictionSet, TargetPrediction,
};
use condpred_core::fusion::{cross_attend, flatten_graph, influence_weights, AttentionParams, InfluenceParams};
use condpred_core::graphs::{build_current_graph, build_future_graph, build_graph, scatter, IntentionGraph, PoolParams};
use condpred_core::metrics::{ablation_suite, evaluate, predict_many, NllMode, PlanRate};
use condpred_core::model::{Dims, Model, ModelConfig, Prepared, Toggles};
use condpred_core::nn::{Init, Params};
use condpred_core::scene::{EgoPlan, GridSpec, Point};
use condpred_core::train::{grad_check, grad_check_with, mean_loss, prepare_all, train, TrainConfig, TrainHooks};
use condpred_core::whatif::{whatif, WhatIfQuery};
use condpred_tape::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NGSIM_ENV: &str = "CONDPRED_NGSIM";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Desk-scale widths: every layer `w` wide except the 2w fusion and
/// decoder stacks.
fn desk(w: usize, toggles: Toggles) -> ModelConfig {
    ModelConfig {
        dims: Dims {
            conv: 8,
            enc: w,
            attn: w,
            heads: 1,
            ctx: w,
            fcn: 2 * w,
            head: w,
            dec: 2 * w,
        },
        toggles,
        ..ModelConfig::default()
    }
}

fn schedule(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch: 4,
        epochs,
        seed: 0,
        clip: 10.0,
        lr_final: Some(1e-5),
    }
}

fn only(family: ScenarioMix, scenarios: usize, agents: usize) -> SynthConfig {
    SynthConfig {
        scenarios,
        agents,
        mix: family,
        ..SynthConfig::default()
    }
}

const CRUISE: ScenarioMix = ScenarioMix {
    cruise: 1.0,
    lane_change: 0.0,
    brake: 0.0,
    reactive: 0.0,
};

const REACTIVE: ScenarioMix = ScenarioMix {
    cruise: 0.0,
    lane_change: 0.0,
    brake: 0.0,
    reactive: 1.0,
};

fn gradient_integrity() -> Outcome {
    let t0 = Instant::now();
    let (model, batch) = common::grad_setup(Toggles::full());
    let refs: Vec<&Prepared> = batch.iter().collect();
    let clean = grad_check(&model, &refs, 1e-5, 1).unwrap();
    let corrupted = grad_check_with(&model, &refs, 1e-5, 1, &|name, g| {
        if name == "decoder.out.w" {
            g.mapv_inplace(|x| -x);
        }
    })
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        clean.max_rel_error <= 1e-4 && corrupted.max_rel_error > 1e-2 && secs < 60.0,
        format!(
            "max rel error {:.2e} over {} groups, corrupted {:.2e}, {secs:.1}s",
            clean.max_rel_error,
            clean.groups.len(),
            corrupted.max_rel_error
        ),
    )
}

/// Log density from the explicit covariance, its determinant and inverse.
fn log_density_oracle(s: &GaussianStep, y: Point) -> f64 {
    let c = [
        [s.sigma.x * s.sigma.x, s.rho * s.sigma.x * s.sigma.y],
        [s.rho * s.sigma.x * s.sigma.y, s.sigma.y * s.sigma.y],
    ];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let inv = [[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]];
    let d = [y.x - s.mu.x, y.y - s.mu.y];
    let quad: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| d[i] * inv[i][j] * d[j]).sum();
    -0.5 * quad - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln()
}

fn density_oracle(s: &GaussianStep, y: Point) -> f64 {
    log_density_oracle(s, y).exp()
}

fn random_step(rng: &mut ChaCha8Rng) -> GaussianStep {
    GaussianStep {
        mu: Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
        sigma: Point::new(rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)),
        rho: rng.gen_range(-0.9..0.9),
    }
}

fn gaussian_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_nll = 0.0f64;
    for _ in 0..1000 {
        let s = random_step(&mut rng);
        let y = Point::new(s.mu.x + rng.gen_range(-4.0..4.0), s.mu.y + rng.gen_range(-4.0..4.0));
        worst_nll = worst_nll.max((gaussian_nll(&s, y).unwrap() + log_density_oracle(&s, y)).abs());
    }
    let mut worst_mix = 0.0f64;
    for _ in 0..50 {
        let steps = 3;
        let targets: Vec<TargetPrediction> = (0..2u64)
            .map(|id| {
                let lat = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
                let lon = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
                let (sl, so): (f64, f64) = (lat.iter().sum(), lon.iter().sum());
                TargetPrediction {
                    target: id,
                    maneuvers: ManeuverDistribution::from_parts(lat.map(|p| p / sl), lon.map(|p| p / so)),
                    trajectories: (0..6)
                        .map(|_| GaussianTrajectory {
                            steps: (0..steps).map(|_| random_step(&mut rng)).collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        let futures: Vec<(u64, Vec<Point>)> = (0..2u64)
            .map(|id| (id, (0..steps).map(|_| Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect()))
            .collect();
        let mut total = 0.0;
        for a in 0..6 {
            for b in 0..6 {
                let mut p = 1.0;
                for (t, k) in [(0, a), (1, b)] {
                    p *= targets[t].maneuvers.p_joint[k];
                    for (s, y) in targets[t].trajectories[k].steps.iter().zip(&futures[t].1) {
                        p *= density_oracle(s, *y);
                    }
                }
                total += p;
            }
        }
        let pred = PredictionSet {
            instance: InstanceId { ego: 0, t: 0 },
            targets,
        };
        worst_mix = worst_mix.max((posterior(&pred, &futures).unwrap() - total.ln()).abs());
    }
    outcome(
        worst_nll <= 1e-9 && worst_mix <= 1e-9,
        format!("gaussian nll max error {worst_nll:.1e} (1000 steps), mixture posterior {worst_mix:.1e} (50 fixtures)"),
    )
}

fn random_graph(rng: &mut ChaCha8Rng, spec: &GridSpec) -> IntentionGraph {
    let mut t = Mat::from_shape_fn((spec.cells(), 65), |_| rng.gen_range(-3.0..3.0));
    for r in 0..spec.cells() {
        t[[r, 64]] = f64::from(u8::from(rng.gen_bool(0.2)));
    }
    IntentionGraph {
        tensor: t,
        rows: spec.rows,
        cols: spec.cols,
    }
}

fn normalization() -> Outcome {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut beta, mut attn, mut prob) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..1000u64 {
        let init = Init::new(1000 + trial);
        let k = rng.gen_range(0.1..10.0);
        let mut a = AttentionParams::init(&init, 20, 65, 64, 1);
        let mut inf = InfluenceParams::init(&init, 30, &spec, 65, 64, 64);
        let mut head = HeadParams::init(&init, 50, 256, 64);
        a.visit_mut("", &mut |_, m| m.mapv_inplace(|x| x * k));
        inf.visit_mut("", &mut |_, m| m.mapv_inplace(|x| x * k));
        head.visit_mut("", &mut |_, m| m.mapv_inplace(|x| x * k));
        let (vc, vf) = (random_graph(&mut rng, &spec), random_graph(&mut rng, &spec));
        let xi: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (b1, b2, _) = influence_weights(&vc, &vf, &xi, &inf, &spec).unwrap();
        beta = beta.max((b1 + b2 - 1.0).abs());
        let (_, w) = cross_attend(&flatten_graph(&vc).unwrap(), &flatten_graph(&vf).unwrap(), &a).unwrap();
        for row in w.rows() {
            attn = attn.max((row.sum() - 1.0).abs());
        }
        let z: Vec<f64> = (0..256).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d = maneuver_distribution(&z, &head).unwrap();
        for s in [d.p_lat.iter().sum::<f64>(), d.p_lon.iter().sum(), d.p_joint.iter().sum()] {
            prob = prob.max((s - 1.0).abs());
        }
    }
    outcome(
        beta <= 1e-6 && attn <= 1e-6 && prob <= 1e-6,
        format!("1000 trials: |b1+b2-1| {beta:.1e}, attention rows {attn:.1e}, probabilities {prob:.1e}"),
    )
}

fn shapes_and_masking() -> Outcome {
    let spec = GridSpec::default();
    let pool = PoolParams::init(&Init::new(3), 10, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut enc = || -> Vec<f64> { (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let xi = enc();
    let nbrs: Vec<(Vec<f64>, Point)> = [(-20.0, -3.5), (4.0, 0.0), (12.0, 3.5), (90.0, 0.0)]
        .iter()
        .map(|&(x, y)| (enc(), Point::new(x, y)))
        .collect();
    let vc = build_current_graph(&xi, &nbrs, &pool, &spec).unwrap();
    let vf = build_future_graph(&xi, &enc(), Point::new(16.0, 0.0), &pool, &spec).unwrap();
    let shapes_ok = vc.shape() == [25, 5, 65]
        && vf.shape() == [25, 5, 65]
        && flatten_graph(&vc).unwrap().dim() == (125, 65)
        && flatten_graph(&vf).unwrap().dim() == (125, 65);

    let social = scatter(&nbrs, 64, &spec).unwrap();
    let base = build_graph(&xi, &social, &pool, &spec).unwrap();
    let mut noisy = social.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for r in 0..spec.cells() {
        if !noisy.occupancy[r] {
            noisy.grid.row_mut(r).mapv_inplace(|_| rng.gen_range(-50.0..50.0));
        }
    }
    let cells_ok = build_graph(&xi, &noisy, &pool, &spec).unwrap() == base;

    let cfg = desk(16, Toggles::full());
    let tracks = generate_synthetic(&SynthConfig { scenarios: 2, ..SynthConfig::default() }, 3).unwrap();
    let (inst, _) = extract_instances(&tracks, &cfg.grid, cfg.horizon, 10).unwrap();
    let inst = inst.into_iter().find(|i| i.targets.len() >= 2).unwrap();
    let model = Model::new(cfg, 4).unwrap();
    let before = model.predict(&inst).unwrap();
    let mut moved = inst.clone();
    for (k, t) in moved.targets.iter_mut().enumerate() {
        let now = *t.history.last().unwrap();
        let off = Point::new(70.0 + 10.0 * k as f64, 0.0);
        t.neighbors.push(Neighbor {
            agent_id: 77_000 + k as u64,
            history: (0..15).map(|s| now.add(off).add(Point::new(3.0 * (s as f64 - 14.0), 0.0))).collect(),
            rel_to_target: off,
        });
    }
    let agents_ok = model.predict(&moved).unwrap() == before;
    outcome(
        shapes_ok && cells_ok && agents_ok,
        format!("graph shapes {shapes_ok}, unoccupied cells masked {cells_ok}, out-of-grid agents ignored {agents_ok}"),
    )
}

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let tracks = generate_synthetic(&only(CRUISE, 8, 4), 1).unwrap();
    let (mut inst, _) = extract_instances(&tracks, &GridSpec::default(), Horizon::default(), 10).unwrap();
    inst.retain(|i| !i.targets.is_empty());
    inst.truncate(64);
    let model = Model::new(desk(32, Toggles::full()), 0).unwrap();
    let out = train(model, &inst, &[], &schedule(200), TrainHooks::default()).unwrap();
    let prepared = prepare_all(&out.last, &inst).unwrap();
    let first = out.log[0].train_loss;
    let last = mean_loss(&out.last, &prepared, 16).unwrap();
    let report = evaluate(&out.last, &inst, PlanRate::Hz5, NllMode::Mixture).unwrap();
    let rmse5 = report.rmse.values[4];
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        inst.len() == 64 && last <= 0.1 * first && rmse5 < 0.5 && secs < 900.0,
        format!(
            "{} instances, loss {first:.1} -> {last:.1} (ratio {:.3}), train RMSE@5s {rmse5:.3} m, {secs:.0}s",
            inst.len(),
            last / first
        ),
    )
}

fn reactive_scenes(seed: u64, scenarios: usize) -> Vec<Instance> {
    let tracks = generate_synthetic(&only(REACTIVE, scenarios, 3), seed).unwrap();
    let (mut inst, _) = extract_instances(&tracks, &GridSpec::default(), Horizon::default(), 5).unwrap();
    // Scenes seen from the lead vehicle, whose plan the followers react to.
    inst.retain(|i| !i.targets.is_empty() && i.id.ego % 1000 == 0);
    inst
}

/// Brake at 4 m/s² down to half speed, or hold the current speed.
fn brake_and_cruise(inst: &Instance) -> (EgoPlan, EgoPlan) {
    let h = &inst.ego_history;
    let last = h[h.len() - 1];
    let v = last.sub(h[h.len() - 2]).scale(5.0);
    let speed = v.norm();
    let dir = v.scale(1.0 / speed);
    let (mut brake, mut cruise) = (Vec::new(), Vec::new());
    let (mut x, mut s) = (0.0, speed);
    for k in 1..=inst.ego_plan.len() {
        s = (s - 4.0 * 0.2).max(0.5 * speed);
        x += s * 0.2;
        brake.push(last.add(dir.scale(x)));
        cruise.push(last.add(dir.scale(speed * 0.2 * k as f64)));
    }
    (EgoPlan::new(brake, 5).unwrap(), EgoPlan::new(cruise, 5).unwrap())
}

/// Probability-weighted mean position of the follower at the last frame,
/// along the ego's heading.
fn longitudinal_mean(p: &TargetPrediction, inst: &Instance) -> f64 {
    let frame = inst.ego_frame();
    p.trajectories
        .iter()
        .zip(&p.maneuvers.p_joint)
        .map(|(tr, w)| w * frame.to_local(tr.steps.last().unwrap().mu).x)
        .sum()
}

fn conditional_sensitivity(trained: &mut Option<(Model, Vec<Instance>)>) -> Outcome {
    let data = reactive_scenes(1, 8);
    let test = reactive_scenes(99, 6);
    let fit = |name: &str| train(Model::new(desk(16, Toggles::preset(name).unwrap()), 0).unwrap(), &data, &[], &schedule(100), TrainHooks::default()).unwrap().last;
    let full = fit("full");
    let v2 = fit("variant2");
    let (mut smaller, mut cases, mut gaps) = (0, 0, Vec::new());
    let mut identical = true;
    for inst in &test {
        let (b, c) = brake_and_cruise(inst);
        let q = WhatIfQuery {
            instance: inst.clone(),
            candidates: vec![b, c],
        };
        let out = whatif(&full, &q).unwrap();
        let follower = inst.id.ego + 1;
        if let (Some(pb), Some(pc)) = (
            out[0].targets.iter().find(|t| t.target == follower),
            out[1].targets.iter().find(|t| t.target == follower),
        ) {
            let gap = longitudinal_mean(pb, inst) - longitudinal_mean(pc, inst);
            cases += 1;
            if gap < 0.0 {
                smaller += 1;
            }
            gaps.push(gap);
        }
        let o2 = whatif(&v2, &q).unwrap();
        identical &= o2[0] == o2[1];
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    *trained = Some((full, test));
    outcome(
        cases > 0 && smaller == cases && identical,
        format!(
            "follower 5s mean smaller under braking in {smaller}/{cases} held-out scenes (mean shift {mean_gap:.2} m), variant2 bit-identical {identical}"
        ),
    )
}

fn ablation_trend() -> Outcome {
    let t0 = Instant::now();
    let tracks = generate_synthetic(&SynthConfig { scenarios: 40, ..SynthConfig::default() }, 7).unwrap();
    let base = desk(16, Toggles::full());
    let (s, _) = build_splits(&tracks, &base.grid, base.horizon, 10, &SplitSpec::default()).unwrap();
    let variants: Vec<(String, Toggles)> = ["full", "variant1"]
        .iter()
        .map(|n| (n.to_string(), Toggles::preset(n).unwrap()))
        .collect();
    let rows = ablation_suite(&base, &schedule(40), &variants, &s.train, &s.val, &s.test, PlanRate::Hz5).unwrap();
    let (full, v1) = (rows[0].report.rmse.avg, rows[1].report.rmse.avg);
    outcome(
        full <= v1,
        format!(
            "test split ({} instances): full avg RMSE {full:.3} m, variant1 {v1:.3} m, {:.0}s",
            s.test.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn coarse_plan(trained: &Option<(Model, Vec<Instance>)>) -> Outcome {
    let (model, test) = match trained {
        Some(t) => (t.0.clone(), t.1.clone()),
        None => (Model::new(desk(16, Toggles::full()), 0).unwrap(), reactive_scenes(99, 6)),
    };
    let a = evaluate(&model, &test, PlanRate::Hz1, NllMode::Mixture).unwrap();
    let b = evaluate(&model, &test, PlanRate::Hz1, NllMode::Mixture).unwrap();
    let finite = a.rmse.values.iter().chain(&a.nll.values).all(|v| v.is_finite());
    let p1 = predict_many(&model, &test, 4).unwrap();
    let p2 = predict_many(&model, &test, 4).unwrap();
    let repeat = a == b && p1 == p2;
    outcome(
        finite && repeat,
        format!(
            "1 Hz plans: avg RMSE {:.3} m, avg NLL {:.3}, finite {finite}, repeated runs identical {repeat}",
            a.rmse.avg, a.nll.avg
        ),
    )
}

fn full_data() -> Option<String> {
    let path = std::env::var(NGSIM_ENV).ok()?;
    let epochs = std::env::var("CONDPRED_NGSIM_EPOCHS").ok().and_then(|e| e.parse().ok()).unwrap_or(10);
    let run = || -> condpred_core::Result<String> {
        let tracks = load_tracks(std::path::Path::new(&path), "ngsim")?;
        let cfg = ModelConfig::default();
        let (s, _) = build_splits(&tracks, &cfg.grid, cfg.horizon, 5, &SplitSpec::default())?;
        let tc = TrainConfig {
            epochs,
            ..TrainConfig::default()
        };
        let out = train(Model::new(cfg, 0)?, &s.train, &s.val, &tc, TrainHooks::default())?;
        let r = evaluate(&out.best, &s.test, PlanRate::Hz5, NllMode::Mixture)?;
        let band = (r.rmse.avg - 1.67).abs() / 1.67 <= 0.15;
        Ok(format!("avg RMSE {:.3} m after {epochs} epochs, within 15% of 1.67 m: {band}", r.rmse.avg))
    };
    Some(run().unwrap_or_else(|e| format!("run failed: {e}")))
}

fn main() {
    let mut trained = None;
    let gating: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("gradient integrity", Box::new(gradient_integrity)),
        ("gaussian and mixture oracles", Box::new(gaussian_oracles)),
        ("normalization invariants", Box::new(normalization)),
        ("shape and masking contracts", Box::new(shapes_and_masking)),
        ("overfit convergence", Box::new(overfit)),
        ("conditional sensitivity", Box::new(|| conditional_sensitivity(&mut trained))),
    ];
    let mut failed = 0;
    let mut report = |k: usize, name: &str, r: std::thread::Result<Outcome>| {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("panicked: {}", e.downcast_ref::<String>().cloned().unwrap_or_default())),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {k} {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    for (k, (name, f)) in gating.into_iter().enumerate() {
        report(k + 1, name, catch_unwind(AssertUnwindSafe(f)));
    }
    report(7, "ablation trend", catch_unwind(ablation_trend));
    report(8, "coarse-plan protocol", catch_unwind(AssertUnwindSafe(|| coarse_plan(&trained))));
    match full_data() {
        Some(msg) => println!("criterion 9 INFO: full-data run: {msg}"),
        None => println!("criterion 9 INFO: full-data run: skipped, NGSIM data unavailable (set {NGSIM_ENV})"),
    }
    println!("acceptance: {} of 8 gating criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
