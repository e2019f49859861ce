mod common;

use condpred_core::checkpoint::{self, Meta};
use condpred_core::data::synthetic::SynthConfig;
use condpred_core::data::Instance;
use condpred_core::metrics::{evaluate, predict_many, NllMode, PlanRate};
use condpred_core::model::{Model, ModelConfig, Prepared, Toggles};
use condpred_core::nn::named;
use condpred_core::train::{loss_from_predictions, train, TrainConfig, TrainHooks};
use condpred_tape::Graph;

use common::{instances, reduced_config};

fn corpus(cfg: &ModelConfig) -> Vec<Instance> {
    let synth = SynthConfig {
        agents: 4,
        scenarios: 3,
        frames: 60,
        lanes: 2,
        ..SynthConfig::default()
    };
    instances(&synth, 12, &cfg.grid, cfg.horizon, 5)
        .into_iter()
        .filter(|i| !i.targets.is_empty())
        .take(12)
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch: 4,
        epochs,
        seed: 9,
        clip: 10.0,
        lr_final: None,
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = reduced_config(Toggles::full());
    let data = corpus(&cfg);
    let run = || train(Model::new(cfg.clone(), 1).unwrap(), &data[..8], &data[8..], &quick(3), TrainHooks::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.last.params, b.last.params);
    assert_eq!(a.log, b.log);
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let cfg = reduced_config(Toggles::full());
    let data = corpus(&cfg);
    let model = Model::new(cfg, 2).unwrap();
    let out = train(model.clone(), &data, &[], &quick(0), TrainHooks::default()).unwrap();
    assert_eq!(out.last, model);
    assert_eq!(out.best, model);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log[0].epoch, 0);
}

#[test]
fn training_lowers_the_loss_and_moves_every_group() {
    let cfg = reduced_config(Toggles::full());
    let data = corpus(&cfg);
    let model = Model::new(cfg, 3).unwrap();
    let out = train(model.clone(), &data, &[], &quick(5), TrainHooks::default()).unwrap();
    assert!(out.log.last().unwrap().train_loss < out.log[0].train_loss);
    for ((name, a), (_, b)) in named(&model.params).into_iter().zip(named(&out.last.params)) {
        assert_ne!(a, b, "{name} did not move");
    }
}

#[test]
fn graph_loss_matches_loss_from_predictions() {
    let cfg = reduced_config(Toggles::full());
    let data = corpus(&cfg);
    let model = Model::new(cfg, 4).unwrap();
    for inst in data.iter().take(6) {
        let prepared = model.prepare(inst).unwrap();
        let mut g = Graph::new();
        let l = model.loss(&mut g, &[&prepared]).unwrap();
        let graph_value = g.value(l)[[0, 0]];
        let truth: Vec<_> = inst
            .targets
            .iter()
            .map(|t| (t.agent_id, t.future.clone().unwrap(), t.maneuver))
            .collect();
        let direct = loss_from_predictions(&model.predict(inst).unwrap(), &truth).unwrap();
        assert!((graph_value - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{graph_value} vs {direct}");
    }
}

#[test]
fn batched_prediction_equals_one_at_a_time() {
    let cfg = reduced_config(Toggles::full());
    let data = corpus(&cfg);
    let model = Model::new(cfg, 5).unwrap();
    let prepared: Vec<Prepared> = data.iter().map(|i| model.prepare(i).unwrap()).collect();
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let batched = model.predict_prepared(&refs).unwrap();
    for (inst, b) in data.iter().zip(&batched) {
        let single = model.predict(inst).unwrap();
        for (s, t) in single.targets.iter().zip(&b.targets) {
            for (x, y) in s.maneuvers.p_joint.iter().zip(&t.maneuvers.p_joint) {
                assert!((x - y).abs() <= 1e-12);
            }
            for (tx, ty) in s.trajectories.iter().zip(&t.trajectories) {
                for (a, c) in tx.steps.iter().zip(&ty.steps) {
                    assert!(a.mu.sub(c.mu).norm() <= 1e-9 && (a.rho - c.rho).abs() <= 1e-12);
                }
            }
        }
    }
    assert_eq!(predict_many(&model, &data, 3).unwrap(), model.predict_all(&data, 3).unwrap());
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let cfg = reduced_config(Toggles::preset("variant4").unwrap());
    let data = corpus(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let out = train(
        Model::new(cfg.clone(), 6).unwrap(),
        &data[..8],
        &data[8..],
        &quick(2),
        TrainHooks {
            checkpoint: Some(path.clone()),
            on_epoch: None,
        },
    )
    .unwrap();
    let (loaded, meta) = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.best);
    assert_eq!(meta.epoch, out.best_epoch);
    for inst in &data {
        assert_eq!(loaded.predict(inst).unwrap(), out.best.predict(inst).unwrap());
    }

    let other = Model::new(reduced_config(Toggles::full()), 6).unwrap();
    checkpoint::save(&path, &other, &Meta::default()).unwrap();
    assert!(matches!(
        checkpoint::load_matching(&path, &cfg),
        Err(condpred_core::Error::DimensionMismatch(_))
    ));
}

#[test]
fn coarse_plan_evaluation_is_finite_and_repeatable() {
    let cfg = ModelConfig {
        grid: condpred_core::scene::GridSpec::default(),
        horizon: condpred_core::data::Horizon::default(),
        ..reduced_config(Toggles::full())
    };
    let data = corpus(&cfg);
    let model = Model::new(cfg, 7).unwrap();
    let a = evaluate(&model, &data, PlanRate::Hz1, NllMode::Mixture).unwrap();
    let b = evaluate(&model, &data, PlanRate::Hz1, NllMode::Mixture).unwrap();
    assert_eq!(a, b);
    assert!(a.rmse.values.iter().chain(&a.nll.values).all(|v| v.is_finite()));
    assert_ne!(a, evaluate(&model, &data, PlanRate::Hz5, NllMode::Mixture).unwrap());
}
