use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use synaudit::counterfactual::{generate_counterfactuals, MCCEConfig};
use synaudit::dataset::{
    build_detection_dataset, load_csv, read_schema_file, train_test_split, DetectionDataset, Provenance, Schema,
    Split, TabularDataset,
};
use synaudit::detector::{evaluate, fit_gbdt, tune_with, Classifier, TrainConfig, TreeEnsembleModel, TunerConfig};
use synaudit::effects::{class_effects, feature_effect, EffectConfig};
use synaudit::generator::{fit_chain, SamplerConfig, SamplerMode};
use synaudit::importance::{
    interaction_importance, permutation_importance, shap_importance, PfiConfig, PfiLoss,
};
use synaudit::report::{
    render_effects, render_figures, render_force, render_importance, render_waterfall, run_audit, AuditConfig,
    AuditInputs, AuditReport, WaterfallSource,
};
use synaudit::rng::derive_seed;
use synaudit::shapley::{
    explain_instance, kernel_shap, tree_shap, tree_shap_interactions, BackgroundSet, ConditionalConfig,
    ConditionalSampler, Engine, ExplainConfig, ValueFunctionSpec, DEFAULT_BACKGROUND_ROWS,
};
use synaudit::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "synaudit", version, about = "Audit synthetic tabular data with an explained detection model")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (a file path for `synthesize`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV of real rows.
    #[arg(long)]
    real: PathBuf,
    /// CSV of synthetic rows.
    #[arg(long)]
    synthetic: PathBuf,
    /// Column schema file; inferred from the data when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Detector written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ImportanceKind {
    Pfi,
    Shap,
    Interactions,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum LossArg {
    LogLoss,
    OneMinusAccuracy,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EngineArg {
    Tree,
    Kernel,
    Exact,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Independent,
    CartChain,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the detector (optionally tuned) and report its metrics.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Search hyperparameters first; `--config` is then a tuner config.
        #[arg(long)]
        tune: bool,
    },
    /// Run the full audit pipeline.
    Audit {
        #[arg(long)]
        real: PathBuf,
        /// One or more synthetic CSVs; several files give one replication each.
        #[arg(long, num_args = 1.., required = true)]
        synthetic: Vec<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Global feature importance on the test split.
    Importance {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "pfi")]
        method: ImportanceKind,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Test rows explained for the SHAP-based methods.
        #[arg(long, default_value_t = 500)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// ICE curves and partial dependence for one feature.
    Effects {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        feature: String,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Shapley attributions for one test row.
    Shapley {
        #[command(flatten)]
        model: ModelArgs,
        /// Row index within the test split.
        #[arg(long)]
        row: usize,
        #[arg(long, value_enum, num_args = 1.., default_values = ["tree", "kernel"])]
        engine: Vec<EngineArg>,
        /// Also compute conditional-value KernelSHAP.
        #[arg(long)]
        conditional: bool,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Counterfactuals turning a detected-synthetic test row real.
    Counterfactual {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        samples: Option<usize>,
        /// Features that must stay fixed.
        #[arg(long, value_delimiter = ',')]
        immutable: Vec<String>,
    },
    /// Baseline synthetic data from the real rows.
    Synthesize {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "cart-chain")]
        mode: ModeArg,
        #[arg(short = 'n', long = "rows")]
        n: usize,
    },
    /// Re-render the figures of an audit report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn out_dir(cli: &Cli, fallback: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_schema(path: Option<&PathBuf>) -> Result<Option<Schema>> {
    path.map(read_schema_file).transpose()
}

fn load_split(args: &DataArgs, seed: u64) -> Result<DetectionDataset> {
    let schema = load_schema(args.schema.as_ref())?;
    let real = load_csv(&args.real, schema.as_ref())?.with_provenance(Provenance::Real);
    let syn = load_csv(&args.synthetic, schema.as_ref())?.with_provenance(Provenance::Synthetic);
    train_test_split(&build_detection_dataset(&real, &syn, seed)?, args.test_fraction, seed)
}

fn load_model(args: &ModelArgs, seed: u64) -> Result<(TreeEnsembleModel, DetectionDataset)> {
    let model = TreeEnsembleModel::load(&args.model)?;
    let d = load_split(&args.data, seed)?;
    model.check_schema(&d.data)?;
    Ok((model, d))
}

fn test_row(test: &DetectionDataset, row: usize) -> Result<Vec<f64>> {
    if row >= test.n_rows() {
        return Err(Error::invalid(format!("row {row} is outside the {}-row test split", test.n_rows())));
    }
    Ok(test.data.row(row).to_vec())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Train { data, tune } => {
            let d = load_split(data, seed)?;
            let train = d.part(Split::Train)?;
            let out = out_dir(cli, "synaudit-train")?;
            let cfg = if *tune {
                let tuner: TunerConfig = read_config(config)?;
                let result = tune_with(&train, &TunerConfig { seed, ..tuner })?;
                write(out.join("tuning.json"), &serde_json::to_string_pretty(&result)?)?;
                result.best
            } else {
                read_config::<TrainConfig>(config)?
            };
            let model = fit_gbdt(&train, &TrainConfig { seed, ..cfg })?;
            let metrics = evaluate(&model, &d)?;
            model.save(out.join("model.json"))?;
            eprintln!("wrote {}", out.join("model.json").display());
            write(out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
            println!(
                "test auc {:.4}, accuracy {:.4}",
                metrics.test.auc.unwrap_or(f64::NAN),
                metrics.test.accuracy
            );
        }
        Command::Audit { real, synthetic, schema } => {
            let mut cfg: AuditConfig = read_config(config)?;
            cfg.seed = seed;
            if schema.is_some() {
                cfg.schema_file = schema.clone();
            }
            let out = out_dir(cli, "synaudit-audit")?;
            let inputs = AuditInputs {
                real: real.clone(),
                synthetic: synthetic.clone(),
            };
            let report = run_audit(&inputs, &cfg, &out)?;
            println!(
                "test auc {:.4} ± {:.4} over {} replications; {} findings; report at {}",
                report.headline.test_auc_mean,
                report.headline.test_auc_sd,
                report.metrics.len(),
                report.findings.len(),
                out.join("report.json").display()
            );
        }
        Command::Importance {
            model,
            method,
            loss,
            repeats,
            rows,
            top_k,
        } => {
            let (m, d) = load_model(model, seed)?;
            let out = out_dir(cli, "synaudit-importance")?;
            let report = match method {
                ImportanceKind::Pfi => {
                    let mut cfg: PfiConfig = read_config(config)?;
                    cfg.seed = derive_seed(seed, &[0x9F1]);
                    if let Some(l) = loss {
                        cfg.loss = match l {
                            LossArg::LogLoss => PfiLoss::LogLoss,
                            LossArg::OneMinusAccuracy => PfiLoss::OneMinusAccuracy,
                        };
                    }
                    if let Some(r) = repeats {
                        cfg.repeats = *r;
                    }
                    permutation_importance(&m, &d, &cfg)?
                }
                ImportanceKind::Shap | ImportanceKind::Interactions => {
                    let test = d.part(Split::Test)?;
                    let idx = synaudit::effects::stratified_rows(&test.labels, *rows, derive_seed(seed, &[0x5A9]));
                    if matches!(method, ImportanceKind::Shap) {
                        let v = idx.iter().map(|&i| tree_shap(&m, test.data.row(i))).collect::<Result<Vec<_>>>()?;
                        shap_importance(&v)?
                    } else {
                        let v = idx
                            .iter()
                            .map(|&i| tree_shap_interactions(&m, test.data.row(i)))
                            .collect::<Result<Vec<_>>>()?;
                        interaction_importance(&v, *top_k)?
                    }
                }
            };
            write(out.join("importance.json"), &report.to_json()?)?;
            write(out.join("importance.svg"), &render_importance(&[&report])?)?;
            for e in report.ranked() {
                println!("{:<32} {:.6}", e.features.join(" × "), e.mean);
            }
        }
        Command::Effects {
            model,
            feature,
            resolution,
        } => {
            let (m, d) = load_model(model, seed)?;
            let mut cfg: EffectConfig = read_config(config)?;
            cfg.seed = seed;
            if let Some(r) = resolution {
                cfg.resolution = *r;
            }
            let test = d.part(Split::Test)?;
            let effect = feature_effect(&m, &test, feature, &cfg)?;
            let out = out_dir(cli, "synaudit-effects")?;
            let stem = file_stem(feature);
            write(out.join(format!("effect_{stem}.json")), &effect.to_json()?)?;
            write(out.join(format!("effect_{stem}.svg")), &render_effects(&effect)?)?;
            if let Ok(classes) = class_effects(&effect) {
                write(out.join(format!("classes_{stem}.json")), &serde_json::to_string_pretty(&classes)?)?;
            }
            println!("{} flagged region(s)", effect.flags.len());
        }
        Command::Shapley {
            model,
            row,
            engine,
            conditional,
            top_k,
        } => {
            let (m, d) = load_model(model, seed)?;
            let mut cfg: ExplainConfig = read_config(config)?;
            cfg.seed = seed;
            cfg.engines = engine
                .iter()
                .map(|e| match e {
                    EngineArg::Tree => Engine::Tree,
                    EngineArg::Kernel => Engine::Kernel,
                    EngineArg::Exact => Engine::Exact,
                })
                .collect();
            let train = d.part(Split::Train)?;
            let test = d.part(Split::Test)?;
            let x = test_row(&test, *row)?;
            let background = BackgroundSet::sample_from(&train.data, DEFAULT_BACKGROUND_ROWS, derive_seed(seed, &[0xB6]))?;
            let spec = ValueFunctionSpec {
                seed: derive_seed(seed, &[0x5E]),
                ..ValueFunctionSpec::default()
            };
            let mut bundle = explain_instance(&m, &x, Some(test.labels[*row]), &background, &spec, &cfg)?;
            if *conditional {
                let sampler = ConditionalSampler::fit(&train.data, ConditionalConfig::default())?;
                let cspec = ValueFunctionSpec {
                    seed: derive_seed(seed, &[0xC0]),
                    ..ValueFunctionSpec::conditional(std::sync::Arc::new(sampler), 50)
                };
                bundle
                    .vectors
                    .push(kernel_shap(&m, &x, &background, &cspec, cfg.n_coalitions, derive_seed(seed, &[0xC1]))?);
            }
            let out = out_dir(cli, "synaudit-shapley")?;
            write(out.join(format!("explanation_{row}.json")), &serde_json::to_string_pretty(&bundle)?)?;
            let mut by_scale: Vec<Vec<synaudit::shapley::ShapleyVector>> = Vec::new();
            for v in &bundle.vectors {
                match by_scale.iter_mut().find(|g| g[0].scale == v.scale) {
                    Some(g) => g.push(v.clone()),
                    None => by_scale.push(vec![v.clone()]),
                }
            }
            for group in &by_scale {
                let tag = match group[0].scale {
                    synaudit::detector::OutputScale::Probability => "probability",
                    synaudit::detector::OutputScale::LogOdds => "log_odds",
                };
                write(out.join(format!("force_{row}_{tag}.svg")), &render_force(group)?)?;
            }
            if let Some(inter) = &bundle.interactions {
                write(
                    out.join(format!("waterfall_{row}.svg")),
                    &render_waterfall(WaterfallSource::Interactions(inter), *top_k, true)?,
                )?;
            }
            println!("score {:.4}; {} tag(s)", bundle.score, bundle.tags.len());
            for t in &bundle.tags {
                println!("{}", t.description);
            }
        }
        Command::Counterfactual {
            model,
            row,
            samples,
            immutable,
        } => {
            let (m, d) = load_model(model, seed)?;
            let mut cfg: MCCEConfig = read_config(config)?;
            cfg.seed = seed;
            if let Some(n) = samples {
                cfg.n_samples = *n;
            }
            if !immutable.is_empty() {
                cfg.immutable = immutable.clone();
            }
            let test = d.part(Split::Test)?;
            let x = test_row(&test, *row)?;
            let real = d.rows_with_label(1);
            let chain = fit_chain(
                &real,
                &SamplerConfig {
                    seed: derive_seed(seed, &[0xC4]),
                    ..SamplerConfig::default()
                },
            )?;
            let set = generate_counterfactuals(&m, &x, &chain, &real.numeric_ranges(), &cfg)?;
            let out = out_dir(cli, "synaudit-counterfactual")?;
            write(out.join(format!("counterfactuals_{row}.json")), &set.to_json()?)?;
            println!("{:?}: {} valid of {} tried", set.status, set.n_valid, set.n_tried);
            for c in &set.candidates {
                println!("changed {:?} gower {:.4} score {:.4}", c.changed_features(&set.features), c.gower, c.score);
            }
        }
        Command::Synthesize { real, schema, mode, n } => {
            let schema = load_schema(schema.as_ref())?;
            let real: TabularDataset = load_csv(real, schema.as_ref())?;
            let mut cfg: SamplerConfig = read_config(config)?;
            cfg.seed = seed;
            cfg.mode = match mode {
                ModeArg::Independent => SamplerMode::Independent,
                ModeArg::CartChain => SamplerMode::CartChain,
            };
            let chain = fit_chain(&real, &cfg)?;
            let rows = chain.sample(*n, derive_seed(seed, &[0x5A]), None)?;
            let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic.csv"));
            rows.save_csv(&path)?;
            eprintln!("wrote {} rows to {}", rows.n_rows(), path.display());
        }
        Command::Report { report } => {
            let report = AuditReport::load(report)?;
            let out = out_dir(cli, "synaudit-report")?;
            for (file, _, svg) in render_figures(&report)? {
                let path = out.join(&file);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                write(path, &svg)?;
            }
        }
    }
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !e.to_string().contains(&s.to_string()) {
                    eprintln!("  caused by: {s}");
                }
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
