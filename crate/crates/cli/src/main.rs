//! `dawsol`: generate data, train, evaluate, visualize, ablate, dump the anchor cache.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dawsol::ablation::{ablation_csv, run_ablation, AblationRow};
use dawsol::config::load_config;
use dawsol::data::{generate_synthetic, load_manifest, read_rgb, EvalSet, SplitRole, SyntheticSpec, TrainingSet};
use dawsol::trainer::{eval_records, evaluate, load_checkpoint, save_checkpoint, train, LogRecord};
use dawsol::viz::{render_overlay, save_overlay};
use dawsol::{Error, Exec, Result, RunConfig};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "dawsol", version, about = "CAM localization with domain-adaptive training")]
struct Cli {
    /// Run every batch-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

/// Run configuration sources, applied in order: defaults, file, seed, overrides.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Config file with one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic shapes dataset.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Generator setting such as `test_images=100`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train on `<data>/train` and write a checkpoint and a JSON-lines log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a checkpoint on an annotated split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write per-threshold curves as CSV.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Write heatmap overlays with the extracted box.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Box threshold; defaults to the metric-optimal one on annotated splits, else 0.5.
        #[arg(long)]
        tau: Option<f64>,
        /// Only the first N images in id order.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train and score the five component rows on one seed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// CSV destination.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the anchor cache of a checkpoint as CSV.
    DumpCache {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

fn load_train(cfg: &RunConfig, data: &Path) -> Result<TrainingSet> {
    let manifest = load_manifest(data, "train", SplitRole::Train, cfg.num_classes)?;
    TrainingSet::load(&manifest, cfg.image_size)
}

fn load_eval(cfg: &RunConfig, data: &Path, split: &str) -> Result<EvalSet> {
    let manifest = load_manifest(data, split, SplitRole::Eval, cfg.num_classes)?;
    EvalSet::load(&manifest, cfg.image_size)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::GenerateSynthetic { out, seed, overrides } => {
            let mut spec = SyntheticSpec::default();
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.apply_overrides(&overrides)?;
            let summary = generate_synthetic(&spec, &out)?;
            let splits: serde_json::Map<_, _> =
                summary.splits.into_iter().map(|(name, counts)| (name, json!(counts))).collect();
            Ok(json!({ "out": out, "class_counts": splits }))
        }
        Command::Train { data, out, cfg } => {
            let cfg = resolve_config(&cfg)?;
            let set = load_train(&cfg, &data)?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            cfg.save(&out.join("config.cfg"))?;
            let log_path = out.join("train_log.jsonl");
            let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
            let mut log = BufWriter::new(file);
            let mut write_err = None;
            let mut last: Option<LogRecord> = None;
            let state = train(cfg, &set, exec, &mut |r| {
                last = Some(*r);
                if write_err.is_none() {
                    if let Err(e) = serde_json::to_writer(&mut log, r).map_err(std::io::Error::from).and_then(|_| writeln!(log)) {
                        write_err = Some(e);
                    }
                }
            })?;
            if let Some(e) = write_err {
                return Err(Error::Io { path: log_path, source: e });
            }
            log.flush().map_err(io_err(&log_path))?;
            let ck = out.join("checkpoint.json");
            save_checkpoint(&state, &ck)?;
            Ok(json!({
                "checkpoint": ck,
                "log": log_path,
                "steps": state.step,
                "epochs": state.epoch,
                "final": last,
            }))
        }
        Command::Evaluate { checkpoint, data, split, curves } => {
            let state = load_checkpoint(&checkpoint, exec)?;
            let set = load_eval(&state.config, &data, &split)?;
            let (summary, c) = evaluate(&state, &set)?;
            if let Some(p) = curves {
                fs::write(&p, c.to_csv()).map_err(io_err(&p))?;
            }
            Ok(serde_json::to_value(summary).expect("summary serializes"))
        }
        Command::Visualize { checkpoint, data, split, out, tau, limit } => {
            let state = load_checkpoint(&checkpoint, exec)?;
            let cfg = &state.config;
            let role = SplitRole::for_split(&split);
            let mut manifest = load_manifest(&data, &split, role, cfg.num_classes)?;
            if let Some(n) = limit {
                manifest.entries.truncate(n);
            }
            let (maps, tau) = if role == SplitRole::Eval {
                let set = EvalSet::load(&manifest, cfg.image_size)?;
                let tau = match tau {
                    Some(t) => t,
                    None => evaluate(&state, &set)?.0.best_threshold.unwrap_or(0.5),
                };
                let maps = eval_records(&state.model, &set, exec)?
                    .into_iter()
                    .map(|r| (r.id, r.map))
                    .collect::<Vec<_>>();
                (maps, tau)
            } else {
                // no ground truth: draw the predicted class
                let mut maps = Vec::new();
                for e in &manifest.entries {
                    let im = read_rgb(&e.image_path)?;
                    let t = dawsol::data::to_tensor(&im);
                    let inf = state.model.infer(t.view())?;
                    let (_, h, w) = t.dim();
                    maps.push((e.id.clone(), inf.scores.class_map(inf.predicted_class(), h, w)));
                }
                (maps, tau.unwrap_or(0.5))
            };
            let mut files = Vec::new();
            for (entry, (id, map)) in manifest.entries.iter().zip(maps) {
                let image = read_rgb(&entry.image_path)?;
                let overlay = render_overlay(&image, map.view(), tau)?;
                files.push(save_overlay(&out, &id, &overlay)?);
            }
            Ok(json!({ "tau": tau, "files": files }))
        }
        Command::Ablate { data, split, out, cfg } => {
            let cfg = resolve_config(&cfg)?;
            let train_set = load_train(&cfg, &data)?;
            let eval_set = load_eval(&cfg, &data, &split)?;
            let results = run_ablation(&cfg, &AblationRow::ALL, &train_set, &eval_set, exec)?;
            fs::write(&out, ablation_csv(&results)).map_err(io_err(&out))?;
            let rows: Vec<_> = results
                .iter()
                .map(|r| json!({ "row": r.row.label(), "pxap": r.summary.pxap, "piou": r.summary.piou }))
                .collect();
            Ok(json!({ "csv": out, "rows": rows }))
        }
        Command::DumpCache { checkpoint, out } => {
            let state = load_checkpoint(&checkpoint, exec)?;
            let csv = state.cache.to_csv();
            match out {
                Some(p) => {
                    fs::write(&p, csv).map_err(io_err(&p))?;
                    Ok(json!({ "out": p, "columns": state.cache.m.ncols() }))
                }
                None => {
                    print!("{csv}");
                    Ok(serde_json::Value::Null)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
