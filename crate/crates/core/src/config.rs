//! Run configuration: one flat TOML file whose keys cover the model, grid,
//! training, data and evaluation settings. Command-line overrides use the
//! same keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synthetic::{ScenarioMix, SynthConfig};
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::metrics::{NllMode, PlanRate};
use crate::model::{ModelConfig, Toggles};
use crate::train::TrainConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CONDPRED_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Track format name for ingestion.
    pub format: String,
    /// Frames between instance anchors at 5 Hz.
    pub stride: usize,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: "synthetic".into(),
            stride: 5,
            split: SplitSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub plan_rate: PlanRate,
    pub nll_mode: NllMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub synth_seed: u64,
    pub eval: EvalConfig,
}

/// Keys accepted in a config file. Every key is optional; absent keys keep
/// their defaults. `variant` selects a toggle preset that the individual
/// toggle keys then refine.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub clip: Option<f64>,
    /// Final step size of a cosine schedule; unset keeps `lr` constant.
    pub lr_final: Option<f64>,

    pub variant: Option<String>,
    pub info_c: Option<bool>,
    pub info_f: Option<bool>,
    pub icd: Option<String>,
    pub iie: Option<bool>,
    pub fusion: Option<bool>,

    pub conv_dim: Option<usize>,
    pub enc_dim: Option<usize>,
    pub attn_dim: Option<usize>,
    pub heads: Option<usize>,
    pub ctx_dim: Option<usize>,
    pub fcn_dim: Option<usize>,
    pub head_dim: Option<usize>,
    pub dec_dim: Option<usize>,
    pub length_unit: Option<f64>,

    pub grid_length_ft: Option<f64>,
    pub grid_width_ft: Option<f64>,
    pub grid_rows: Option<usize>,
    pub grid_cols: Option<usize>,
    pub t_obs: Option<usize>,
    pub t_pred: Option<usize>,

    pub format: Option<String>,
    pub stride: Option<usize>,
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub test_frac: Option<f64>,
    pub split_seed: Option<u64>,

    pub synth_seed: Option<u64>,
    pub synth_scenarios: Option<usize>,
    pub synth_agents: Option<usize>,
    pub synth_frames: Option<usize>,
    pub synth_lanes: Option<usize>,
    pub synth_lane_width_m: Option<f64>,
    pub synth_speed_min: Option<f64>,
    pub synth_speed_max: Option<f64>,
    pub synth_speed_spread: Option<f64>,
    pub synth_decel: Option<f64>,
    pub synth_brake_floor: Option<f64>,
    pub synth_lane_change_s: Option<f64>,
    pub synth_reaction_lag_s: Option<f64>,
    pub synth_reactive_brake_prob: Option<f64>,
    pub synth_noise: Option<f64>,
    pub mix_cruise: Option<f64>,
    pub mix_lane_change: Option<f64>,
    pub mix_brake: Option<f64>,
    pub mix_reactive: Option<f64>,

    pub plan_rate: Option<String>,
    pub nll_mode: Option<String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses one `key=value` override; the value uses TOML syntax, with
    /// bare words read as strings.
    pub fn parse_override(kv: &str) -> Result<Self> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        Self::parse(&format!("{k} = {v}")).or_else(|_| Self::parse(&format!("{k} = {}", toml_string(v))))
    }

    /// Applies every key set in `self` on top of `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($($key:ident => $dst:expr),* $(,)?) => {
                $( if let Some(v) = self.$key.clone() { $dst = v; } )*
            };
        }
        if let Some(v) = &self.variant {
            cfg.model.toggles = Toggles::preset(v)?;
        }
        if self.lr_final.is_some() {
            cfg.train.lr_final = self.lr_final;
        }
        let m = &mut cfg.model;
        set! {
            seed => cfg.train.seed,
            lr => cfg.train.lr,
            batch => cfg.train.batch,
            epochs => cfg.train.epochs,
            clip => cfg.train.clip,
            info_c => m.toggles.info_c,
            info_f => m.toggles.info_f,
            icd => m.toggles.icd,
            iie => m.toggles.iie,
            fusion => m.toggles.fusion,
            conv_dim => m.dims.conv,
            enc_dim => m.dims.enc,
            attn_dim => m.dims.attn,
            heads => m.dims.heads,
            ctx_dim => m.dims.ctx,
            fcn_dim => m.dims.fcn,
            head_dim => m.dims.head,
            dec_dim => m.dims.dec,
            length_unit => m.length_unit,
            grid_length_ft => m.grid.length_ft,
            grid_width_ft => m.grid.width_ft,
            grid_rows => m.grid.rows,
            grid_cols => m.grid.cols,
            t_obs => m.horizon.t_obs,
            t_pred => m.horizon.t_pred,
            format => cfg.data.format,
            stride => cfg.data.stride,
            train_frac => cfg.data.split.train_frac,
            val_frac => cfg.data.split.val_frac,
            test_frac => cfg.data.split.test_frac,
            split_seed => cfg.data.split.seed,
            synth_seed => cfg.synth_seed,
            synth_scenarios => cfg.synth.scenarios,
            synth_agents => cfg.synth.agents,
            synth_frames => cfg.synth.frames,
            synth_lanes => cfg.synth.lanes,
            synth_lane_width_m => cfg.synth.lane_width_m,
            synth_speed_min => cfg.synth.speed_min,
            synth_speed_max => cfg.synth.speed_max,
            synth_speed_spread => cfg.synth.speed_spread,
            synth_decel => cfg.synth.decel,
            synth_brake_floor => cfg.synth.brake_floor,
            synth_lane_change_s => cfg.synth.lane_change_s,
            synth_reaction_lag_s => cfg.synth.reaction_lag_s,
            synth_reactive_brake_prob => cfg.synth.reactive_brake_prob,
            synth_noise => cfg.synth.noise,
            mix_cruise => cfg.synth.mix.cruise,
            mix_lane_change => cfg.synth.mix.lane_change,
            mix_brake => cfg.synth.mix.brake,
            mix_reactive => cfg.synth.mix.reactive,
        }
        if let Some(v) = &self.plan_rate {
            cfg.eval.plan_rate = v.parse()?;
        }
        if let Some(v) = &self.nll_mode {
            cfg.eval.nll_mode = v.parse()?;
        }
        Ok(())
    }

    /// Every key with its current value in `cfg`, as a complete file.
    pub fn from_run(cfg: &RunConfig) -> Self {
        let m = &cfg.model;
        let s = &cfg.synth;
        let ScenarioMix {
            cruise,
            lane_change,
            brake,
            reactive,
        } = s.mix;
        Self {
            seed: Some(cfg.train.seed),
            lr: Some(cfg.train.lr),
            batch: Some(cfg.train.batch),
            epochs: Some(cfg.train.epochs),
            clip: Some(cfg.train.clip),
            lr_final: cfg.train.lr_final,
            variant: None,
            info_c: Some(m.toggles.info_c),
            info_f: Some(m.toggles.info_f),
            icd: Some(m.toggles.icd.clone()),
            iie: Some(m.toggles.iie),
            fusion: Some(m.toggles.fusion),
            conv_dim: Some(m.dims.conv),
            enc_dim: Some(m.dims.enc),
            attn_dim: Some(m.dims.attn),
            heads: Some(m.dims.heads),
            ctx_dim: Some(m.dims.ctx),
            fcn_dim: Some(m.dims.fcn),
            head_dim: Some(m.dims.head),
            dec_dim: Some(m.dims.dec),
            length_unit: Some(m.length_unit),
            grid_length_ft: Some(m.grid.length_ft),
            grid_width_ft: Some(m.grid.width_ft),
            grid_rows: Some(m.grid.rows),
            grid_cols: Some(m.grid.cols),
            t_obs: Some(m.horizon.t_obs),
            t_pred: Some(m.horizon.t_pred),
            format: Some(cfg.data.format.clone()),
            stride: Some(cfg.data.stride),
            train_frac: Some(cfg.data.split.train_frac),
            val_frac: Some(cfg.data.split.val_frac),
            test_frac: Some(cfg.data.split.test_frac),
            split_seed: Some(cfg.data.split.seed),
            synth_seed: Some(cfg.synth_seed),
            synth_scenarios: Some(s.scenarios),
            synth_agents: Some(s.agents),
            synth_frames: Some(s.frames),
            synth_lanes: Some(s.lanes),
            synth_lane_width_m: Some(s.lane_width_m),
            synth_speed_min: Some(s.speed_min),
            synth_speed_max: Some(s.speed_max),
            synth_speed_spread: Some(s.speed_spread),
            synth_decel: Some(s.decel),
            synth_brake_floor: Some(s.brake_floor),
            synth_lane_change_s: Some(s.lane_change_s),
            synth_reaction_lag_s: Some(s.reaction_lag_s),
            synth_reactive_brake_prob: Some(s.reactive_brake_prob),
            synth_noise: Some(s.noise),
            mix_cruise: Some(cruise),
            mix_lane_change: Some(lane_change),
            mix_brake: Some(brake),
            mix_reactive: Some(reactive),
            plan_rate: Some(cfg.eval.plan_rate.to_string()),
            nll_mode: Some(
                match cfg.eval.nll_mode {
                    NllMode::Mixture => "mixture",
                    NllMode::BestManeuver => "best",
                }
                .into(),
            ),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl RunConfig {
    /// Defaults, then the file (if any), then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            ConfigFile::read(p)?.apply(&mut cfg)?;
        }
        for kv in overrides {
            ConfigFile::parse_override(kv)?.apply(&mut cfg)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if crate::data::formats().get(&self.data.format).is_none() {
            return Err(Error::Config(format!(
                "unknown format '{}', expected one of {:?}",
                self.data.format,
                crate::data::formats().names()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let file = ConfigFile::parse("variant = \"variant2\"\nepochs = 3\nenc_dim = 8\nplan_rate = \"1hz\"\n").unwrap();
        let mut cfg = RunConfig::default();
        file.apply(&mut cfg).unwrap();
        assert_eq!(cfg.model.toggles, Toggles::preset("variant2").unwrap());
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.dims.enc, 8);
        assert_eq!(cfg.eval.plan_rate, PlanRate::Hz1);
        ConfigFile::parse_override("icd=self").unwrap().apply(&mut cfg).unwrap();
        assert_eq!(cfg.model.toggles.icd, "self");
        ConfigFile::parse_override("lr = 0.01").unwrap().apply(&mut cfg).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ConfigFile::parse("nope = 1").is_err());
        assert!(ConfigFile::parse("epochs = \"x\"").is_err());
        assert!(ConfigFile::parse_override("epochs").is_err());
        let mut cfg = RunConfig::default();
        assert!(ConfigFile::parse("variant = \"variant9\"").unwrap().apply(&mut cfg).is_err());
    }

    #[test]
    fn full_dump_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.model.dims.fcn = 7;
        cfg.synth.mix.brake = 0.5;
        cfg.eval.nll_mode = NllMode::BestManeuver;
        let text = ConfigFile::from_run(&cfg).to_toml().unwrap();
        let mut back = RunConfig::default();
        ConfigFile::parse(&text).unwrap().apply(&mut back).unwrap();
        assert_eq!(back, cfg);
    }
}
