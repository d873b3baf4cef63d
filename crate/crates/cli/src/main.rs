mod settings;

use ankleband::baselines::{evaluate, BaselineModel, Classifier, ModelKind};
use ankleband::eval::{
    confusion_report, cross_validate, plot, simulate_e2e, sweep, synthetic_cohort, FoldPlan,
    SweepAxis, SweepSpec,
};
use ankleband::imu::io::{
    labels_path, load_dataset_dir, load_labels, load_recording, save_labels, save_recording,
};
use ankleband::imu::synth::{generate_synthetic, SynthSpec};
use ankleband::labeling::{build_dataset, LabeledRecording, LabeledWindow};
use ankleband::nn::{Model, ModelConfig};
use ankleband::runtime::{
    budget_check, budget_for_config, export_const_arrays, export_weights, import_weights,
};
use ankleband::training::{fit, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use settings::Settings;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "ankleband",
    version,
    about = "Leg-gesture recognition from an ankle IMU"
)]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic recordings and labels.
    GenSynth {
        #[arg(long, default_value_t = 10)]
        subjects: u32,
        /// Single performances per gesture and subject.
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Write double performances instead, `reps` pairs per gesture.
        #[arg(long)]
        doubles: bool,
        /// Write a gesture-free recording of this many seconds instead.
        #[arg(long)]
        noise_seconds: Option<f64>,
    },
    /// Train the network on every subject of a data directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Leave-one-subject-out cross-validation.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "nn")]
        model: ModelKind,
        #[arg(long)]
        parallel: bool,
        /// Fail unless mean macro-F1 reaches this value.
        #[arg(long)]
        min_macro_f1: Option<f64>,
    },
    /// Cross-validation along one parameter axis.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "sigma")]
        axis: SweepAxis,
        #[arg(long, default_value = "nn")]
        model: ModelKind,
        /// Comma-separated grid; defaults to the axis's studied range.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long)]
        max_folds: Option<usize>,
        #[arg(long)]
        parallel: bool,
    },
    /// Confusion matrix of a model (a weight bundle, or a freshly fit
    /// baseline) on a data directory.
    Confusion {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "nn")]
        model: ModelKind,
    },
    /// Replay a recording through the full detection and control chain.
    Simulate {
        #[arg(long)]
        weights: PathBuf,
        /// Recording CSV; a synthetic double-performance recording if absent.
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Fail if any gesture's confirmation rate is below this.
        #[arg(long)]
        min_hit_rate: Option<f64>,
        /// Fail if there are more false activations than this.
        #[arg(long)]
        max_false: Option<usize>,
    },
    /// Render a weight bundle as constant arrays with a manifest.
    ExportWeights {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "ankle")]
        prefix: String,
    },
    /// Memory accounting against the 90 KB limit.
    BudgetCheck {
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Check a config with this hidden width instead of a bundle.
        #[arg(long)]
        hidden: Option<usize>,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn recordings(data: Option<&Path>, s: &Settings, seed: u64) -> Result<Vec<LabeledRecording>> {
    match data {
        Some(d) => {
            let recs = load_dataset_dir(d, s.rate)?;
            if recs.is_empty() {
                bail!("no recordings in {}", d.display());
            }
            Ok(recs)
        }
        None => {
            log::info!("no --data given; using 10 synthetic subjects");
            Ok(synthetic_cohort(10, 10, seed)?)
        }
    }
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    import_weights(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn train_config(s: &Settings) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            k: s.windowing.k,
            ..s.experiment.train.model
        },
        ..s.experiment.train
    }
}

fn run(cli: Cli) -> Result<bool> {
    let s = Settings::load(cli.config.as_deref(), cli.seed)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let out = |name: &str| cli.out_dir.join(name);
    match cli.cmd {
        Command::GenSynth {
            subjects,
            reps,
            doubles,
            noise_seconds,
        } => {
            for id in 0..subjects {
                let spec = match (noise_seconds, doubles) {
                    (Some(secs), _) => SynthSpec::noise_only(id, secs),
                    (None, true) => SynthSpec::doubles(id, reps),
                    (None, false) => SynthSpec::balanced(id, reps),
                };
                let (rec, labels) = generate_synthetic(&spec, cli.seed.wrapping_add(id as u64))?;
                let path = out(&format!("subject_{id:02}.csv"));
                save_recording(&rec, &path)?;
                save_labels(&labels, &labels_path(&path))?;
                println!(
                    "subject {id}: {} samples, {} gestures",
                    rec.len(),
                    labels.len()
                );
            }
            Ok(true)
        }
        Command::Train { data } => {
            let recs = recordings(data.as_deref(), &s, cli.seed)?;
            let ds = build_dataset(&recs, &s.windowing, true)?;
            let windows: Vec<&LabeledWindow> = ds.windows().collect();
            let (model, report) = fit(&windows, &train_config(&s))?;
            write(&out("model.akb"), export_weights(&model).bytes)?;
            write(&out("train_report.json"), report.to_json())?;
            for e in &report.epochs {
                println!(
                    "epoch {:>2}  loss {:>12.3}  accuracy {:.4}",
                    e.epoch, e.loss, e.accuracy
                );
            }
            Ok(true)
        }
        Command::Eval {
            data,
            model,
            parallel,
            min_macro_f1,
        } => {
            let recs = recordings(data.as_deref(), &s, cli.seed)?;
            let ds = build_dataset(&recs, &s.windowing, true)?;
            let plan = FoldPlan::leave_one_out(&ds.subject_ids())?;
            let mut cfg = s.experiment;
            cfg.train = train_config(&s);
            let results = cross_validate(&ds, model, &cfg, &plan, parallel)?;
            write(&out(&format!("folds_{model}.csv")), results.to_csv())?;
            write(&out(&format!("results_{model}.json")), results.to_json())?;
            let f1 = results.summary.macro_f1;
            println!(
                "{model}: macro-F1 {:.4} ± {:.4}, accuracy {:.4} ± {:.4} over {} folds",
                f1.mean,
                f1.std,
                results.summary.accuracy.mean,
                results.summary.accuracy.std,
                results.folds.len()
            );
            Ok(min_macro_f1.is_none_or(|min| {
                let ok = f1.mean >= min;
                println!("macro-F1 >= {min}: {}", if ok { "PASS" } else { "FAIL" });
                ok
            }))
        }
        Command::Sweep {
            data,
            axis,
            model,
            grid,
            max_folds,
            parallel,
        } => {
            let recs = recordings(data.as_deref(), &s, cli.seed)?;
            let mut subjects: Vec<u32> = recs.iter().map(|r| r.recording.subject_id).collect();
            subjects.sort_unstable();
            subjects.dedup();
            let mut spec = SweepSpec::default_for(axis, subjects.len());
            if !grid.is_empty() {
                spec.grid = grid;
            }
            spec.max_folds = max_folds;
            let mut cfg = s.experiment;
            cfg.train = train_config(&s);
            let results = sweep(&spec, &recs, &s.windowing, model, &cfg, parallel)?;
            write(&out(&format!("sweep_{axis}_{model}.csv")), results.to_csv())?;
            write(
                &out(&format!("sweep_{axis}_{model}.svg")),
                plot::sweep_svg(&results),
            )?;
            for p in &results.points {
                println!(
                    "{axis}={:<6} macro-F1 {:.4} ± {:.4}",
                    p.value, p.macro_f1.mean, p.macro_f1.std
                );
            }
            for (v, note) in &results.skipped {
                println!("{axis}={v:<6} skipped: {note}");
            }
            Ok(true)
        }
        Command::Confusion {
            data,
            weights,
            model,
        } => {
            let recs = recordings(data.as_deref(), &s, cli.seed)?;
            let ds = build_dataset(&recs, &s.windowing, true)?;
            let windows: Vec<&LabeledWindow> = ds.windows().collect();
            let classifier: Box<dyn Classifier> = match (weights, model) {
                (Some(w), _) => Box::new(load_model(&w)?),
                (None, ModelKind::Nn) => bail!("--weights is required for the network"),
                (None, kind) => Box::new(BaselineModel::fit(
                    kind,
                    &windows,
                    &s.experiment.baselines,
                    cli.seed,
                )?),
            };
            let report = confusion_report(classifier.as_ref(), &windows);
            write(&out("confusion_raw.csv"), report.raw_csv())?;
            write(&out("confusion_normalized.csv"), report.normalized_csv())?;
            write(&out("confusion.svg"), plot::confusion_svg(&report))?;
            print!("{}", report.raw_csv());
            println!(
                "accuracy {:.4}",
                evaluate(classifier.as_ref(), &windows).accuracy
            );
            Ok(true)
        }
        Command::Simulate {
            weights,
            recording,
            labels,
            min_hit_rate,
            max_false,
        } => {
            let model = Arc::new(load_model(&weights)?);
            let (rec, gt) = match recording {
                Some(p) => {
                    let rec = load_recording(&p, 0, s.rate)?;
                    let gt = match labels {
                        Some(l) => load_labels(&l)?,
                        None => Vec::new(),
                    };
                    (rec, gt)
                }
                None => generate_synthetic(&SynthSpec::doubles(100, 10), cli.seed)?,
            };
            let report = simulate_e2e(&rec, &gt, model, &s.e2e)?;
            write(&out("session_report.json"), report.to_json())?;
            write(&out("hand.log"), report.simulator_log.join("\n") + "\n")?;
            println!(
                "{} events, {} confirmations, {} commands, {} false activations",
                report.events.len(),
                report.confirmations.len(),
                report.commands.len(),
                report.false_activations
            );
            let mut ok = report.controller_state == report.simulator_state || s.e2e.link_loss > 0.0;
            for g in ankleband::Gesture::ALL {
                if let Some(rate) = report.hit_rate(g) {
                    let pass = min_hit_rate.is_none_or(|m| rate >= m);
                    ok &= pass;
                    println!(
                        "{g}: {}/{} confirmed{}",
                        report.hits_per_class[g.class()],
                        report.expected_per_class[g.class()],
                        if pass { "" } else { " FAIL" }
                    );
                }
            }
            if let Some(m) = max_false {
                ok &= report.false_activations <= m;
            }
            Ok(ok)
        }
        Command::ExportWeights { weights, prefix } => {
            let model = load_model(&weights)?;
            let export = export_const_arrays(&model, &prefix);
            write(&out(&format!("{prefix}_weights.h")), &export.source)?;
            write(
                &out(&format!("{prefix}_manifest.csv")),
                export.manifest_csv(),
            )?;
            println!(
                "{} arrays, {} values",
                export.manifest.len(),
                model.param_count()
            );
            Ok(true)
        }
        Command::BudgetCheck { weights, hidden } => {
            let report = match (weights, hidden) {
                (Some(w), _) => {
                    let bytes =
                        std::fs::read(&w).with_context(|| format!("reading {}", w.display()))?;
                    budget_check(&ankleband::runtime::WeightBundle { bytes })
                }
                (None, h) => budget_for_config(&ModelConfig {
                    k: s.windowing.k,
                    hidden: h.unwrap_or(s.experiment.train.model.hidden),
                    ..s.experiment.train.model
                }),
            };
            print!("{}", report.render());
            write(&out("budget.json"), serde_json::to_string_pretty(&report)?)?;
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
