#![allow(dead_code)]

use condpred_core::data::synthetic::{generate_synthetic, SynthConfig};
use condpred_core::data::{extract_instances, Horizon, Instance};
use condpred_core::model::{Dims, Model, ModelConfig, Prepared, Toggles};
use condpred_core::nn::Params;
use condpred_core::scene::GridSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// D = 8 on a 5 x 3 grid with 4 observed and 5 predicted frames.
pub fn reduced_config(toggles: Toggles) -> ModelConfig {
    ModelConfig {
        dims: Dims {
            conv: 4,
            enc: 8,
            attn: 8,
            heads: 1,
            ctx: 4,
            fcn: 8,
            head: 8,
            dec: 8,
        },
        toggles,
        grid: GridSpec {
            length_ft: 200.0,
            width_ft: 36.0,
            rows: 5,
            cols: 3,
        },
        horizon: Horizon { t_obs: 4, t_pred: 5 },
        length_unit: 10.0,
    }
}

pub fn instances(synth: &SynthConfig, seed: u64, grid: &GridSpec, horizon: Horizon, stride: usize) -> Vec<Instance> {
    let tracks = generate_synthetic(synth, seed).unwrap();
    extract_instances(&tracks, grid, horizon, stride).unwrap().0
}

/// Adds uniform noise in `±scale` to every parameter so no unit sits
/// exactly on an activation kink.
pub fn jitter<P: Params>(p: &mut P, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.visit_mut("", &mut |_, m| m.mapv_inplace(|x| x + rng.gen_range(-scale..scale)));
}

/// Reduced model with jittered parameters and one prepared instance holding
/// at least two targets, one of them with neighbors.
pub fn grad_setup(toggles: Toggles) -> (Model, Vec<Prepared>) {
    let cfg = reduced_config(toggles);
    let synth = SynthConfig {
        agents: 4,
        scenarios: 4,
        frames: 30,
        lanes: 2,
        ..SynthConfig::default()
    };
    let all = instances(&synth, 5, &cfg.grid, cfg.horizon, 5);
    let mut model = Model::new(cfg, 11).unwrap();
    jitter(&mut model.params, 3, 0.2);
    let picked: Vec<_> = all
        .iter()
        .filter(|i| i.targets.len() >= 2 && i.targets.iter().any(|t| !t.neighbors.is_empty()))
        .take(1)
        .map(|i| model.prepare(i).unwrap())
        .collect();
    assert!(!picked.is_empty(), "no instance with interacting targets");
    (model, picked)
}
