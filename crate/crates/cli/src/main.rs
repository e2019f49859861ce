use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condpred_core::checkpoint::{self, Meta};
use condpred_core::config::{RunConfig, CONFIG_ENV};
use condpred_core::data::synthetic::generate_synthetic;
use condpred_core::data::{build_splits, load_tracks, read_instances, write_instances, write_synthetic, Instance};
use condpred_core::metrics::{ablation_suite, ablation_table, evaluate, predict_many, with_plan_rate, NllMode, PlanRate};
use condpred_core::model::{Model, Toggles};
use condpred_core::scene::EgoPlan;
use condpred_core::train::{train, TrainHooks};
use condpred_core::whatif::{whatif, WhatIfQuery};
use condpred_core::Error;

mod output;

#[derive(Parser)]
#[command(name = "condpred", version, about = "Ego-conditioned trajectory forecasting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw track table into train/val/test instance caches.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Track format; defaults to the config's `format`.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus and its instance caches.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `<data>/train.jsonl`, validating on `<data>/val.jsonl`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<data>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        plan_rate: Option<PlanRate>,
        #[arg(long)]
        nll_mode: Option<NllMode>,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write JSON-lines predictions for one split.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        plan_rate: Option<PlanRate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict one scene under each candidate ego plan.
    Whatif {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON array of `{"rate": 1|5, "points": [[x, y], ..]}`.
        #[arg(long)]
        candidates: PathBuf,
        /// Scene as a single instance JSON document.
        #[arg(long, conflicts_with_all = ["data", "instance"])]
        scene: Option<PathBuf>,
        #[arg(long, requires = "instance")]
        data: Option<PathBuf>,
        /// Instance id `ego@t` within `--data`.
        #[arg(long, requires = "data")]
        instance: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate several variants on the same data and seed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated preset names; all presets when absent.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        plan_rate: Option<PlanRate>,
        /// Text table path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the rows as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Process exit status for each failure class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Missing(_) => 3,
        Error::Config(_) => 4,
        Error::DimensionMismatch(_) | Error::Shape(_) => 5,
        Error::Parse { .. }
        | Error::UnknownFormat(_)
        | Error::NonMonotonicFrames { .. }
        | Error::Json(_)
        | Error::Checkpoint(_) => 6,
        Error::Diverged { .. } => 7,
        Error::Invalid(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(c: &Common) -> condpred_core::Result<RunConfig> {
    if let Some(p) = &c.config {
        if !p.exists() {
            return Err(Error::Missing(format!("config file {}", p.display())));
        }
    }
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> condpred_core::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Writes to `out` or stdout.
fn emit(out: Option<&Path>, text: &str) -> condpred_core::Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn split_path(data: &Path, split: &str) -> condpred_core::Result<PathBuf> {
    match split {
        "train" | "val" | "test" => Ok(data.join(format!("{split}.jsonl"))),
        _ => Err(Error::Config(format!("split must be train, val or test, got '{split}'"))),
    }
}

fn read_split(data: &Path, split: &str, t_pred: Option<usize>) -> condpred_core::Result<Vec<Instance>> {
    let path = split_path(data, split)?;
    if !path.exists() {
        return Err(Error::Missing(format!("instance cache {}", path.display())));
    }
    let (header, instances) = read_instances(&path)?;
    if let Some(t) = t_pred {
        if header.t_pred != t {
            return Err(Error::DimensionMismatch(format!(
                "{} holds {}-frame futures, the model predicts {t}",
                path.display(),
                header.t_pred
            )));
        }
    }
    Ok(instances)
}

fn write_splits(out: &Path, cfg: &RunConfig, splits: &condpred_core::data::Splits) -> condpred_core::Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let h = cfg.model.horizon;
    write_instances(&out.join("train.jsonl"), &splits.train, h)?;
    write_instances(&out.join("val.jsonl"), &splits.val, h)?;
    write_instances(&out.join("test.jsonl"), &splits.test, h)?;
    let text = condpred_core::config::ConfigFile::from_run(cfg).to_toml()?;
    write_text(&out.join("config.toml"), &text)
}

/// Loads a checkpoint, checking it against the configuration when one was
/// given explicitly.
fn load_model(path: &Path, c: &Common) -> condpred_core::Result<(Model, Meta)> {
    if !path.exists() {
        return Err(Error::Missing(format!("checkpoint {}", path.display())));
    }
    if c.config.is_some() || !c.overrides.is_empty() {
        let cfg = load_config(c)?;
        checkpoint::load_matching(path, &cfg.model)
    } else {
        checkpoint::load(path)
    }
}

fn run(cli: Cli) -> condpred_core::Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Ingest { input, format, out } => {
            let cfg = load_config(c)?;
            if !input.exists() {
                return Err(Error::Missing(format!("input {}", input.display())));
            }
            let fmt = format.unwrap_or_else(|| cfg.data.format.clone());
            let tracks = load_tracks(&input, &fmt)?;
            let m = &cfg.model;
            let (splits, summary) = build_splits(&tracks, &m.grid, m.horizon, cfg.data.stride, &cfg.data.split)?;
            write_splits(&out, &cfg, &splits)?;
            log::info!(
                "{} tracks, {} instances ({} train, {} val, {} test), {} targets",
                tracks.len(),
                summary.instances,
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                summary.targets
            );
        }
        Command::Synth { out } => {
            let cfg = load_config(c)?;
            let tracks = generate_synthetic(&cfg.synth, cfg.synth_seed)?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            let csv = out.join("tracks.csv");
            let mut f = std::io::BufWriter::new(fs::File::create(&csv).map_err(io_err(&csv))?);
            write_synthetic(&tracks, &mut f).map_err(io_err(&csv))?;
            f.flush().map_err(io_err(&csv))?;
            let m = &cfg.model;
            let (splits, summary) = build_splits(&tracks, &m.grid, m.horizon, cfg.data.stride, &cfg.data.split)?;
            write_splits(&out, &cfg, &splits)?;
            log::info!(
                "{} scenarios, {} instances ({} train, {} val, {} test)",
                cfg.synth.scenarios,
                summary.instances,
                splits.train.len(),
                splits.val.len(),
                splits.test.len()
            );
        }
        Command::Train { data, checkpoint, epochs } => {
            let mut cfg = load_config(c)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let t_pred = Some(cfg.model.horizon.t_pred);
            let train_set = read_split(&data, "train", t_pred)?;
            let val_path = split_path(&data, "val")?;
            let val_set = if val_path.exists() {
                read_split(&data, "val", t_pred)?
            } else {
                Vec::new()
            };
            let ckpt = checkpoint.unwrap_or_else(|| data.join("model.ckpt"));
            let log_path = ckpt.with_extension("log.jsonl");
            let mut lines = String::new();
            let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            let outcome = train(
                model,
                &train_set,
                &val_set,
                &cfg.train,
                TrainHooks {
                    checkpoint: Some(ckpt.clone()),
                    on_epoch: Some(Box::new(|e| {
                        lines.push_str(&serde_json::to_string(e).expect("log entry"));
                        lines.push('\n');
                    })),
                },
            )?;
            write_text(&log_path, &lines)?;
            log::info!("best epoch {} written to {}", outcome.best_epoch, ckpt.display());
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            plan_rate,
            nll_mode,
            out,
        } => {
            let cfg = load_config(c)?;
            let (model, _) = load_model(&checkpoint, c)?;
            let set = read_split(&data, &split, Some(model.config.horizon.t_pred))?;
            let rate = plan_rate.unwrap_or(cfg.eval.plan_rate);
            let mode = nll_mode.unwrap_or(cfg.eval.nll_mode);
            let report = evaluate(&model, &set, rate, mode)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            match &out {
                Some(p) => {
                    write_text(p, &json)?;
                    print!("{}", report.table());
                }
                None => {
                    eprint!("{}", report.table());
                    emit(None, &json)?;
                }
            }
        }
        Command::Predict {
            data,
            checkpoint,
            split,
            plan_rate,
            out,
        } => {
            let cfg = load_config(c)?;
            let (model, _) = load_model(&checkpoint, c)?;
            let t_pred = model.config.horizon.t_pred;
            let set = read_split(&data, &split, None)?;
            let inputs = with_plan_rate(&set, plan_rate.unwrap_or(cfg.eval.plan_rate), t_pred)?;
            let preds = predict_many(&model, &inputs, 16)?;
            let mut text = String::new();
            for p in &preds {
                for r in output::records(p) {
                    text.push_str(&serde_json::to_string(&r)?);
                    text.push('\n');
                }
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Whatif {
            checkpoint,
            candidates,
            scene,
            data,
            instance,
            split,
            out,
        } => {
            let (model, _) = load_model(&checkpoint, c)?;
            let instance = match (scene, data, instance) {
                (Some(path), _, _) => {
                    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                    serde_json::from_str::<Instance>(&text)?
                }
                (None, Some(data), Some(id)) => read_split(&data, &split, None)?
                    .into_iter()
                    .find(|i| i.id.to_string() == id)
                    .ok_or_else(|| Error::Missing(format!("instance {id} in the {split} split")))?,
                _ => return Err(Error::Config("whatif needs --scene or --data with --instance".into())),
            };
            let text = fs::read_to_string(&candidates).map_err(io_err(&candidates))?;
            let candidates: Vec<EgoPlan> = serde_json::from_str(&text)?;
            let query = WhatIfQuery { instance, candidates };
            let sets = whatif(&model, &query)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&sets)? + "\n"))?;
        }
        Command::Ablate {
            data,
            variants,
            plan_rate,
            out,
            json,
        } => {
            let cfg = load_config(c)?;
            let names: Vec<String> = if variants.is_empty() {
                condpred_core::model::variant_names().into_iter().map(String::from).collect()
            } else {
                variants
            };
            let variants = names
                .iter()
                .map(|n| Ok((n.clone(), Toggles::preset(n)?)))
                .collect::<condpred_core::Result<Vec<_>>>()?;
            let t_pred = Some(cfg.model.horizon.t_pred);
            let train_set = read_split(&data, "train", t_pred)?;
            let val_set = read_split(&data, "val", t_pred)?;
            let test_set = read_split(&data, "test", t_pred)?;
            let rows = ablation_suite(
                &cfg.model,
                &cfg.train,
                &variants,
                &train_set,
                &val_set,
                &test_set,
                plan_rate.unwrap_or(cfg.eval.plan_rate),
            )?;
            emit(out.as_deref(), &ablation_table(&rows))?;
            if let Some(p) = json {
                write_text(&p, &(serde_json::to_string_pretty(&rows)? + "\n"))?;
            }
        }
    }
    Ok(())
}
