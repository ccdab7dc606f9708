use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cfnet::bench::{
    evaluate, run_sweep, train_scheme, verify, NmseVariant, SchemeModel, SchemeName, SweepAxis, SweepSpec,
};
use cfnet::config::RunConfig;
use cfnet::estimator::default_lambda;
use cfnet::io::{
    config_hash, load_checkpoint, load_coarse_stage, load_dataset, save_checkpoint, save_coarse_stage, save_dataset,
    ArtifactIds,
};
use cfnet::simgen::{gen_dataset, Dataset, SystemConfig};
use cfnet::training::{train_stage_coarse, train_stage_fine, LossReport};
use cfnet::Error;

#[derive(Parser)]
#[command(name = "cfnet", version, about = "Two-stage unrolled channel estimation experiments")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the output directory of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the scenario seed (and with it the sensing matrix).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated scheme names; defaults to the configured list.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<SchemeName>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Coarse,
    Fine,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training, validation and test splits.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the learned schemes and write their checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
    },
    /// Evaluate every scheme on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nmse_variant: Option<String>,
    },
    /// Evaluate every scheme along one scenario axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        nmse_variant: Option<String>,
    },
    /// Run a self-check suite (or `all`).
    Verify {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Lib(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::InvalidDimension(_) => 2,
        Error::ArtifactMismatch(_) | Error::IncompleteRecord(_) | Error::Format { .. } => 3,
        _ => 1,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.paths.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.system.seed = seed;
    }
    if let Some(s) = &common.schemes {
        cfg.schemes = s.clone();
    }
    Ok(cfg)
}

fn split_dir(cfg: &RunConfig, split: &str) -> PathBuf {
    cfg.paths.dataset_dir.join(split)
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<Dataset, Error> {
    let ds = load_dataset(&split_dir(cfg, split))?;
    if config_hash(&ds.config) != config_hash(&cfg.system) {
        return Err(Error::ArtifactMismatch(format!(
            "{} split was generated for a different scenario configuration",
            split
        )));
    }
    Ok(ds)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_gen_data(common: Common) -> CmdResult {
    let cfg = load_config(&common)?;
    let splits = [
        ("train", cfg.train.train_count, cfg.splits.train_seed),
        ("val", cfg.train.val_count, cfg.splits.val_seed),
        ("test", cfg.train.test_count, cfg.splits.test_seed),
    ];
    for (name, count, seed) in splits {
        let ds = gen_dataset(&cfg.system, count, seed)?;
        let dir = split_dir(&cfg, name);
        save_dataset(&ds, &dir)?;
        info!("wrote {count} {name} samples to {}", dir.display());
    }
    Ok(())
}

fn lambda_for(cfg: &RunConfig, ds: &Dataset) -> Result<f64, Error> {
    match cfg.lambda {
        Some(l) => Ok(l),
        None => default_lambda(
            ds.phi_lifted.view(),
            ds.samples.iter().take(200).map(|s| s.lifted_obs.mat.view()),
        ),
    }
}

fn cmd_train(common: Common, stage: StageArg) -> CmdResult {
    let cfg = load_config(&common)?;
    let train = load_split(&cfg, "train")?;
    let val = load_split(&cfg, "val")?;
    let ids = ArtifactIds::of(&train);
    let lambda = lambda_for(&cfg, &train)?;
    let ckpt = &cfg.paths.checkpoint_dir;
    for &scheme in &cfg.schemes {
        let mut model = SchemeModel::untrained(scheme, &cfg.system, train.phi_lifted.view(), lambda)?;
        let report = match (&mut model, stage) {
            (_, StageArg::All) => train_scheme(&mut model, &train, &val, &cfg.train)?,
            (SchemeModel::TwoStage { coarse, .. }, StageArg::Coarse) => match coarse {
                Some(c) => LossReport {
                    stages: vec![train_stage_coarse(c, &train, &val, &cfg.train)?],
                },
                None => {
                    info!("{scheme} has no coarse stage");
                    continue;
                }
            },
            (SchemeModel::TwoStage { coarse, fine }, StageArg::Fine) => {
                if coarse.is_some() {
                    match load_coarse_stage(ckpt, scheme, Some(&ids))? {
                        Some(c) => *coarse = Some(c),
                        None => {
                            return Err(Error::ArtifactMismatch(format!(
                                "{scheme}: train the coarse stage before the fine stage"
                            ))
                            .into())
                        }
                    }
                }
                LossReport {
                    stages: vec![train_stage_fine(fine, coarse.as_ref(), &train, &val, &cfg.train)?],
                }
            }
            (_, _) => {
                info!("{scheme} is not staged; use --stage all");
                continue;
            }
        };
        match (&model, stage) {
            (SchemeModel::TwoStage { coarse: Some(c), .. }, StageArg::Coarse) => {
                save_coarse_stage(ckpt, scheme, c, &ids)?;
            }
            _ => {
                save_checkpoint(ckpt, scheme, &model, &ids)?;
            }
        }
        let mut log_text = format!("{{\"config_hash\":\"{}\"}}\n", ids.config_hash);
        log_text.push_str(&report.to_json_lines());
        write_text(&cfg.paths.output_dir.join(format!("train_log.{}.jsonl", scheme.as_str())), &log_text)?;
        info!("trained {scheme}");
    }
    Ok(())
}

fn variant_of(arg: &Option<String>, default: NmseVariant) -> Result<NmseVariant, Error> {
    arg.as_deref().map_or(Ok(default), NmseVariant::parse)
}

fn cmd_evaluate(common: Common, variant: Option<String>) -> CmdResult {
    let cfg = load_config(&common)?;
    let variant = variant_of(&variant, cfg.sweep.variant)?;
    let test = load_split(&cfg, "test")?;
    let ids = ArtifactIds::of(&test);
    let mut rows = Vec::new();
    let mut csv = format!(
        "# config_hash: {}\nscheme,nmse_db,variant,coarse_nmse_db,runtime_ms,mults_per_iter,sample_count\n",
        ids.config_hash
    );
    for &scheme in &cfg.schemes {
        match load_checkpoint(&cfg.paths.checkpoint_dir, scheme, Some(&ids))? {
            Some(model) => {
                let ev = evaluate(scheme, &model, &test, variant)?;
                csv.push_str(&format!(
                    "{},{:.6},{},{},{:.6},{},{}\n",
                    scheme,
                    ev.nmse.nmse_db,
                    variant.as_str(),
                    ev.coarse_nmse.as_ref().map_or("".into(), |c| format!("{:.6}", c.nmse_db)),
                    ev.runtime_ms,
                    ev.mults_per_iter,
                    ev.nmse.sample_count
                ));
                info!("{scheme}: {:.3} dB", ev.nmse.nmse_db);
                rows.push(serde_json::to_value(&ev).expect("serializable"));
            }
            None => {
                warn!("no checkpoint for {scheme}");
                csv.push_str(&format!("{scheme},absent,{},,,,0\n", variant.as_str()));
                rows.push(serde_json::json!({ "scheme": scheme, "absent": true }));
            }
        }
    }
    let json = serde_json::json!({
        "config_hash": ids.config_hash,
        "config": cfg,
        "results": rows,
    });
    write_text(&cfg.paths.output_dir.join("evaluate.csv"), &csv)?;
    write_text(
        &cfg.paths.output_dir.join("evaluate.json"),
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )?;
    Ok(())
}

/// Checkpoints for a sweep point: the shared directory when the sensing
/// matrix is unchanged, otherwise `<checkpoint_dir>/<axis>=<value>`.
fn sweep_models(cfg: &RunConfig, axis: SweepAxis) -> impl Fn(&SystemConfig, SchemeName) -> cfnet::Result<Option<SchemeModel>> + '_ {
    move |point: &SystemConfig, scheme: SchemeName| {
        let dir = match axis {
            SweepAxis::Snr | SweepAxis::SC => cfg.paths.checkpoint_dir.clone(),
            SweepAxis::T => cfg.paths.checkpoint_dir.join(format!("t={}", point.t)),
            SweepAxis::S => cfg.paths.checkpoint_dir.join(format!("s={}", point.s_bar)),
        };
        let calib = gen_dataset(point, 200, cfg.splits.train_seed)?;
        let ids = ArtifactIds::of(&calib);
        match load_checkpoint(&dir, scheme, Some(&ids)) {
            Ok(Some(m)) => Ok(Some(m)),
            Ok(None) if !scheme.spec().learned => {
                let lambda = match cfg.lambda {
                    Some(l) => l,
                    None => default_lambda(calib.phi_lifted.view(), calib.samples.iter().map(|s| s.lifted_obs.mat.view()))?,
                };
                SchemeModel::untrained(scheme, point, calib.phi_lifted.view(), lambda).map(Some)
            }
            Ok(None) => Ok(None),
            Err(Error::ArtifactMismatch(msg)) => {
                warn!("{msg}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn cmd_sweep(common: Common, axis: Option<String>, variant: Option<String>) -> CmdResult {
    let cfg = load_config(&common)?;
    let axis = match axis {
        Some(a) => SweepAxis::parse(&a)?,
        None => cfg.sweep.axis,
    };
    let spec = SweepSpec {
        axis,
        values: cfg.sweep.values.clone(),
        schemes: cfg.schemes.clone(),
        test_count: cfg.train.test_count,
        test_seed: cfg.splits.test_seed,
        variant: variant_of(&variant, cfg.sweep.variant)?,
    };
    let models = sweep_models(&cfg, axis);
    let result = run_sweep(&cfg.system, &spec, &models)?;
    let hash = config_hash(&cfg.system);
    let stem = format!("sweep_{}", axis.as_str());
    write_text(
        &cfg.paths.output_dir.join(format!("{stem}.csv")),
        &format!("# config_hash: {hash}\n{}", result.to_csv()),
    )?;
    let json = serde_json::json!({ "config_hash": hash, "config": cfg, "result": result });
    write_text(
        &cfg.paths.output_dir.join(format!("{stem}.json")),
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )?;
    Ok(())
}

fn cmd_verify(suite: String, seed: u64, out: Option<PathBuf>) -> CmdResult {
    let names: Vec<&str> = if suite == "all" {
        verify::SUITES.to_vec()
    } else {
        vec![suite.as_str()]
    };
    let mut reports = Vec::new();
    for name in names {
        let r = verify::run_suite(name, seed)?;
        for c in &r.checks {
            println!("{} {}/{}: {}", if c.passed { "PASS" } else { "FAIL" }, r.suite, c.name, c.detail);
        }
        reports.push(r);
    }
    let text = serde_json::to_string_pretty(&reports).expect("serializable");
    match out {
        Some(p) => write_text(&p, &text)?,
        None => println!("{text}"),
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.checks.iter().filter(|c| !c.passed).map(move |c| format!("{}/{}", r.suite, c.name)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenData { common } => cmd_gen_data(common),
        Command::Train { common, stage } => cmd_train(common, stage),
        Command::Evaluate { common, nmse_variant } => cmd_evaluate(common, nmse_variant),
        Command::Sweep {
            common,
            axis,
            nmse_variant,
        } => cmd_sweep(common, axis, nmse_variant),
        Command::Verify { suite, seed, out } => cmd_verify(suite, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verification(which)) => {
            eprintln!("verification failed: {which}");
            ExitCode::from(4)
        }
    }
}
