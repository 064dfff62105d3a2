mod manifest;
mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use taugru::config::RunConfig;
use taugru::training::{self, AblationResult, EpochRecord};
use taugru::{dde, io, verify};

use crate::manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "taugru", version, about = "Delay-gated RNN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset file.
    GenData {
        task: DataTask,
        /// Output file, `<task>.csv` by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of samples.
        #[arg(long = "n", default_value_t = 32)]
        n_samples: usize,
        /// Adding-task sequence length.
        #[arg(long = "N", default_value_t = 200)]
        length: usize,
    },
    /// Train one configuration.
    Train {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// Also render the loss curves as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Train every ablation row over the configured seeds.
    Ablate {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// Also render the delay sweep as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Final test error statistics over several seeds.
    SeedSpread {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Run randomized verification batteries.
    Verify {
        /// `all`, a suite name or a battery name.
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataTask {
    MackeyGlass,
    Enso,
    Adding,
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
    Verify,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<taugru::Error>() {
            Some(taugru::Error::Config(_) | taugru::Error::Unknown { .. }) => Failure::Config(format!("{e:#}")),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<taugru::Error> for Failure {
    fn from(e: taugru::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData {
            task,
            out,
            seed,
            n_samples,
            length,
        } => gen_data(task, out, seed, n_samples, length),
        Command::Train { config, out_dir, svg } => train(&config, &out_dir, svg),
        Command::Ablate { config, out_dir, svg } => ablate(&config, &out_dir, svg),
        Command::SeedSpread { config, out_dir } => seed_spread(&config, &out_dir),
        Command::Verify { suite, seed } => run_verify(&suite, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Verify) => ExitCode::from(3),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("TAU_RNN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("TAU_RNN_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn gen_data(task: DataTask, out: Option<PathBuf>, seed: u64, n: usize, length: usize) -> Result<(), Failure> {
    let args = format!("{task:?} seed={seed} n={n} N={length}");
    let mut manifest = RunManifest::start(args.as_bytes(), seed);
    let (default_name, text) = match task {
        DataTask::MackeyGlass => ("mackey-glass.csv", io::series_to_csv(&dde::gen_mackey_glass(seed, n)?)),
        DataTask::Enso => ("enso.csv", io::series_to_csv(&dde::gen_enso(seed, n)?)),
        DataTask::Adding => ("adding.csv", io::adding_to_csv(&training::gen_adding_task(length, n, seed)?)),
    };
    let out = out.unwrap_or_else(|| PathBuf::from(default_name));
    io::write_atomic(&out, text.as_bytes())?;
    manifest.outputs.push(out.clone());
    manifest.finish(&manifest_path(&out))?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

struct Loaded {
    config: RunConfig,
    bytes: Vec<u8>,
    stem: String,
}

fn load_config(path: &Path) -> Result<Loaded, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::Config(format!("{} is not UTF-8", path.display())))?;
    let config: RunConfig = text
        .parse()
        .map_err(|e: taugru::Error| Failure::Config(format!("{}: {e}", path.display())))?;
    let stem = config.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });
    Ok(Loaded { config, bytes, stem })
}

struct Outputs<'a> {
    dir: &'a Path,
    stem: &'a str,
    manifest: RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, suffix: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(format!("{}.{suffix}", self.stem));
        io::write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self) -> anyhow::Result<()> {
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        self.manifest.finish(&path)
    }
}

fn epochs_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_rmse,test_rmse,wall_seconds\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{:.3}",
            r.epoch,
            io::fmt_f64(r.train_loss.sqrt()),
            io::fmt_f64(r.test_loss.sqrt()),
            r.wall_seconds
        );
    }
    out
}

fn results_csv(rows: &[AblationResult]) -> String {
    let mut out = format!("{}\n", AblationResult::CSV_HEADER);
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn train(path: &Path, out_dir: &Path, svg: bool) -> Result<(), Failure> {
    let Loaded { config, bytes, stem } = load_config(path)?;
    let cfg = &config.train;
    let mut outputs = Outputs {
        dir: out_dir,
        stem: &stem,
        manifest: RunManifest::start(&bytes, cfg.seed),
    };
    let outcome = training::train_on_with(cfg, &training::TaskData::generate(cfg)?, |r| {
        if r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == cfg.epochs {
            eprintln!(
                "epoch {:>4}  train mse {:.4e}  test mse {:.4e}",
                r.epoch, r.train_loss, r.test_loss
            );
        }
    })?;
    let epochs = epochs_csv(&outcome.records);
    outputs.write("epochs.csv", epochs.as_bytes())?;
    let result = AblationResult {
        name: cfg.variant.kind.name().to_string(),
        variant: cfg.variant,
        test_metric: outcome.final_test_loss(),
        per_seed: vec![outcome.final_test_loss()],
        param_count: cfg.variant.param_count(cfg.d, cfg.p, cfg.q),
    };
    outputs.write("results.csv", results_csv(&[result]).as_bytes())?;
    outputs.write("params.bin", &io::encode_params(&outcome.params, cfg.variant.kind))?;
    if svg {
        let series = svg::series_from_csv(&epochs, "epoch", &["train_rmse", "test_rmse"]).map_err(anyhow::Error::msg)?;
        let chart = svg::line_chart(&format!("{stem}: RMSE per epoch"), "epoch", "RMSE", &series, true);
        outputs.write("loss.svg", chart.as_bytes())?;
    }
    println!(
        "{stem}: test MSE {:.4e} (baseline {:.4e}), train MSE {:.4e} (initial {:.4e})",
        outcome.final_test_loss(),
        outcome.baseline_test_loss,
        outcome.final_train_loss(),
        outcome.initial_train_loss
    );
    outputs.finish()?;
    Ok(())
}

fn ablate(path: &Path, out_dir: &Path, svg: bool) -> Result<(), Failure> {
    let Loaded { config, bytes, stem } = load_config(path)?;
    let rows = config.ablation_rows();
    if rows.is_empty() {
        return Err(Failure::Config(format!(
            "{}: ablate needs `ablation` rows or a `tau_sweep`",
            path.display()
        )));
    }
    let seeds = config.seed_list();
    let mut outputs = Outputs {
        dir: out_dir,
        stem: &stem,
        manifest: RunManifest::start(&bytes, config.train.seed),
    };
    let results = training::ablate(&config.train, &rows, &seeds)?;
    let table = results_csv(&results);
    outputs.write("results.csv", table.as_bytes())?;
    let mut per_seed = String::from("name,seed,test_mse\n");
    for r in &results {
        for (seed, v) in seeds.iter().zip(&r.per_seed) {
            let _ = writeln!(per_seed, "{},{seed},{}", r.name, io::fmt_f64(*v));
        }
    }
    outputs.write("per_seed.csv", per_seed.as_bytes())?;
    if svg && !config.tau_sweep.is_empty() {
        let mut sweep = String::from("tau,test_mse\n");
        for r in results.iter().filter(|r| r.name.starts_with("tau=")) {
            let _ = writeln!(sweep, "{},{}", r.variant.delay, io::fmt_f64(r.test_metric));
        }
        let series = svg::series_from_csv(&sweep, "tau", &["test_mse"]).map_err(anyhow::Error::msg)?;
        let chart = svg::line_chart(&format!("{stem}: test MSE vs delay"), "tau", "test MSE", &series, true);
        outputs.write("tau_sweep.svg", chart.as_bytes())?;
    }
    print!("{table}");
    outputs.finish()?;
    Ok(())
}

fn seed_spread(path: &Path, out_dir: &Path) -> Result<(), Failure> {
    let Loaded { config, bytes, stem } = load_config(path)?;
    if config.seeds < 2 {
        return Err(Failure::Config("seed-spread needs seeds >= 2".into()));
    }
    let mut outputs = Outputs {
        dir: out_dir,
        stem: &stem,
        manifest: RunManifest::start(&bytes, config.train.seed),
    };
    let spread = training::evaluate_seed_spread(&config.train, config.seeds)?;
    let mut per_seed = String::from("seed,test_mse\n");
    for (s, v) in spread.seeds.iter().zip(&spread.values) {
        let _ = writeln!(per_seed, "{s},{}", io::fmt_f64(*v));
    }
    outputs.write("spread.csv", per_seed.as_bytes())?;
    let summary = format!(
        "n,max,min,mean,std,median\n{},{},{},{},{},{}\n",
        spread.values.len(),
        io::fmt_f64(spread.max),
        io::fmt_f64(spread.min),
        io::fmt_f64(spread.mean),
        io::fmt_f64(spread.std),
        io::fmt_f64(spread.median)
    );
    outputs.write("spread_summary.csv", summary.as_bytes())?;
    print!("{summary}");
    outputs.finish()?;
    Ok(())
}

fn run_verify(suite: &str, seed: u64) -> Result<(), Failure> {
    let chosen = verify::select(suite).map_err(|e| Failure::Config(e.to_string()))?;
    let mut failed = false;
    for battery in chosen {
        let report = battery.run(seed)?;
        failed |= !report.passed();
        println!("{}", report.line());
    }
    if failed {
        Err(Failure::Verify)
    } else {
        Ok(())
    }
}
