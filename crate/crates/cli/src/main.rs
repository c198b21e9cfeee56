mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use flowperf::dataset::{self, generate_dataset, save_dataset, GenConfig};
use flowperf::des::{aggregate, simulate, write_packets_csv, GroundTruth};
use flowperf::model::{load_checkpoint, predict, save_checkpoint, ModelConfig};
use flowperf::scenario::{load_scenario, Scenario};
use flowperf::train::{
    bench_inference, evaluate, scale_traffic, train, write_residuals_csv, LabeledScenario, TrainConfig,
};
use rayon::prelude::*;

use manifest::{write_atomic, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "flowperf",
    version,
    about = "Flow-level delay and jitter prediction with a packet-level oracle"
)]
struct Cli {
    /// Seed for every random choice; required by generate and train
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for scenario-level parallelism
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Only print errors
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample random scenarios into a dataset directory
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the packet-level simulator and write per-window ground truth
    Simulate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump every packet as CSV
        #[arg(long)]
        packets_csv: bool,
    },
    /// Fit the model on a dataset's train split, selecting on its val split
    Train(TrainArgs),
    /// Predict per-window statistics for one scenario
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against ground truth
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Directory for report.json, report.txt and residuals/
        #[arg(long)]
        out: PathBuf,
    },
    /// Time inference
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        scenario: Vec<PathBuf>,
        /// `packets=1x,10x,100x` repeats each scenario at scaled packet volume
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Checkpoint file to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Training config JSON; fields override the preset
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model config JSON; replaces the preset's
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// state 16, 4 rounds, 50 epochs of 200 steps
    Desk,
    /// state 32, 8 rounds, 300 epochs of 500 steps
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let needs_seed = matches!(cli.command, Command::Generate { .. } | Command::Train(_));
    if needs_seed && cli.seed.is_none() {
        Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                "--seed is required for generate and train",
            )
            .exit();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let name = match &cli.command {
        Command::Generate { .. } => "generate",
        Command::Simulate { .. } => "simulate",
        Command::Train(_) => "train",
        Command::Predict { .. } => "predict",
        Command::Evaluate { .. } => "evaluate",
        Command::Bench { .. } => "bench",
    };
    let mut m = RunManifest::new(name, cli.seed, cli.jobs);
    let output = match &cli.command {
        Command::Generate { config, out } => cmd_generate(cli, config, out, &mut m)?,
        Command::Simulate {
            dataset,
            out,
            packets_csv,
        } => cmd_simulate(dataset, out, *packets_csv, &mut m)?,
        Command::Train(args) => cmd_train(cli, args, &mut m)?,
        Command::Predict {
            checkpoint,
            scenario,
            out,
        } => cmd_predict(checkpoint, scenario, out, &mut m)?,
        Command::Evaluate {
            checkpoint,
            dataset,
            truth,
            split,
            out,
        } => cmd_evaluate(checkpoint, dataset, truth, *split, out, &mut m)?,
        Command::Bench {
            checkpoint,
            scenario,
            sweep,
            reps,
            out,
        } => cmd_bench(checkpoint, scenario, sweep.as_deref(), *reps, out.as_deref(), &mut m)?,
    };
    if let Some(out) = output {
        m.wall_time_s = start.elapsed().as_secs_f64();
        m.write(&out)?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_atomic(path, text.as_bytes())
}

fn stem(name: &str) -> &str {
    name.strip_suffix(".json").unwrap_or(name)
}

fn cmd_generate(cli: &Cli, config: &Path, out: &Path, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut cfg: GenConfig = read_json(config)?;
    if let Some(seed) = cli.seed {
        if seed != cfg.seed {
            log::info!("--seed {seed} overrides config seed {}", cfg.seed);
        }
        cfg.seed = seed;
    }
    let scenarios = generate_dataset(&cfg)?;
    let manifest = save_dataset(out, &cfg, &scenarios)?;
    log::info!("wrote {} scenarios to {}", scenarios.len(), out.display());
    m.config = serde_json::to_value(&cfg)?;
    m.inputs.push(config.to_path_buf());
    m.outputs = manifest.scenarios.iter().map(|n| out.join(n)).collect();
    m.outputs.push(out.join(dataset::MANIFEST_FILE));
    Ok(Some(out.to_path_buf()))
}

/// Scenario file names of a dataset directory: the manifest's list if present,
/// otherwise every `*.json` file.
fn scenario_names(dir: &Path) -> Result<Vec<String>> {
    if dir.join(dataset::MANIFEST_FILE).exists() {
        return Ok(dataset::load_manifest(dir)?.scenarios);
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") && !name.contains("manifest") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_simulate(dir: &Path, out: &Path, packets_csv: bool, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let names = scenario_names(dir)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let written: Vec<Vec<PathBuf>> = names
        .par_iter()
        .map(|name| -> Result<Vec<PathBuf>> {
            let s = load_scenario(dir.join(name))?;
            let records = simulate(&s);
            let truth = aggregate(&records, s.window_s, s.n_windows());
            let path = out.join(name);
            write_json(&path, &truth)?;
            let mut files = vec![path];
            if packets_csv {
                let csv = out.join(format!("{}.packets.csv", stem(name)));
                let mut buf = Vec::new();
                write_packets_csv(&records, &mut buf)?;
                write_atomic(&csv, &buf)?;
                files.push(csv);
            }
            Ok(files)
        })
        .collect::<Result<_>>()?;
    log::info!("simulated {} scenarios", names.len());
    m.inputs = names.iter().map(|n| dir.join(n)).collect();
    m.outputs = written.into_iter().flatten().collect();
    Ok(Some(out.to_path_buf()))
}

fn load_labeled(dir: &Path, truth: &Path, names: &[String]) -> Result<Vec<LabeledScenario>> {
    names
        .par_iter()
        .map(|n| {
            let s: Scenario = load_scenario(dir.join(n))?;
            let t: GroundTruth = read_json(&truth.join(n))?;
            Ok(LabeledScenario::with_truth(n.clone(), s, t))
        })
        .collect()
}

fn cmd_train(cli: &Cli, a: &TrainArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let (mut tcfg, mut mcfg) = match a.preset {
        Preset::Desk => (TrainConfig::desk(), ModelConfig::desk()),
        Preset::Full => (TrainConfig::default(), ModelConfig::default()),
    };
    if let Some(path) = &a.config {
        let mut base = serde_json::to_value(&tcfg)?;
        let over: serde_json::Value = read_json(path)?;
        let (Some(b), Some(o)) = (base.as_object_mut(), over.as_object()) else {
            bail!("{}: expected a JSON object", path.display());
        };
        b.extend(o.clone());
        tcfg = serde_json::from_value(base).with_context(|| format!("parsing {}", path.display()))?;
        m.inputs.push(path.clone());
    }
    if let Some(path) = &a.model_config {
        mcfg = read_json(path)?;
        m.inputs.push(path.clone());
    }
    tcfg.seed = cli.seed.expect("checked in main");
    if let Some(e) = a.epochs {
        tcfg.max_epochs = e;
    }
    if let Some(s) = a.steps {
        tcfg.steps_per_epoch = s;
    }
    let manifest = dataset::load_manifest(&a.dataset)?;
    let train_set = load_labeled(&a.dataset, &a.truth, &manifest.train)?;
    let val_set = load_labeled(&a.dataset, &a.truth, &manifest.val)?;
    let outcome = train(&tcfg, &mcfg, &train_set, &val_set)?;
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    let history = history_path(&a.out);
    write_json(&history, &outcome.history)?;
    log::info!(
        "best validation MAPE {:.3}% at epoch {}",
        outcome.history[outcome.best_epoch].val_mape,
        outcome.best_epoch
    );
    m.config = serde_json::json!({ "train": tcfg, "model": mcfg });
    m.inputs.extend([a.dataset.clone(), a.truth.clone()]);
    m.outputs = vec![a.out.clone(), history];
    Ok(Some(a.out.clone()))
}

fn history_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".history.json");
    out.with_file_name(name)
}

fn cmd_predict(ckpt: &Path, scenario: &Path, out: &Path, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let c = load_checkpoint(ckpt)?;
    let s = load_scenario(scenario)?;
    let p = predict(&c, &s).with_context(|| format!("predicting {}", scenario.display()))?;
    write_atomic(out, p.to_json().as_bytes())?;
    m.inputs = vec![ckpt.to_path_buf(), scenario.to_path_buf()];
    m.outputs = vec![out.to_path_buf()];
    Ok(Some(out.to_path_buf()))
}

fn cmd_evaluate(
    ckpt: &Path,
    dir: &Path,
    truth: &Path,
    split: Split,
    out: &Path,
    m: &mut RunManifest,
) -> Result<Option<PathBuf>> {
    let c = load_checkpoint(ckpt)?;
    let names = if dir.join(dataset::MANIFEST_FILE).exists() {
        let man = dataset::load_manifest(dir)?;
        match split {
            Split::Train => man.train,
            Split::Val => man.val,
            Split::Test => man.test,
            Split::All => man.scenarios,
        }
    } else {
        scenario_names(dir)?
    };
    let data = load_labeled(dir, truth, &names)?;
    let ev = evaluate(&c, &data)?;
    let table = ev.report.to_table();
    print!("{table}");

    let res_dir = out.join("residuals");
    fs::create_dir_all(&res_dir).with_context(|| format!("creating {}", res_dir.display()))?;
    write_json(&out.join("report.json"), &ev.report)?;
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    m.outputs = vec![out.join("report.json"), out.join("report.txt")];
    for (name, rows) in &ev.residuals {
        let path = res_dir.join(format!("{}.csv", stem(name)));
        let mut buf = Vec::new();
        write_residuals_csv(rows, &mut buf)?;
        write_atomic(&path, &buf)?;
        m.outputs.push(path);
    }
    m.config = serde_json::json!({ "split": format!("{split:?}").to_lowercase() });
    m.inputs = vec![ckpt.to_path_buf(), dir.to_path_buf(), truth.to_path_buf()];
    Ok(Some(out.to_path_buf()))
}

/// Parses `packets=1x,10x,100x`.
fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    let Some(list) = spec.strip_prefix("packets=") else {
        bail!("unsupported sweep `{spec}` (expected packets=1x,10x,...)");
    };
    list.split(',')
        .map(|f| {
            let f = f.trim();
            f.strip_suffix('x')
                .unwrap_or(f)
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .with_context(|| format!("bad sweep factor `{f}`"))
        })
        .collect()
}

fn cmd_bench(
    ckpt: &Path,
    scenarios: &[PathBuf],
    sweep: Option<&str>,
    reps: usize,
    out: Option<&Path>,
    m: &mut RunManifest,
) -> Result<Option<PathBuf>> {
    let c = load_checkpoint(ckpt)?;
    let factors = sweep.map(parse_sweep).transpose()?.unwrap_or_else(|| vec![1]);
    let mut cases = Vec::new();
    for path in scenarios {
        let s = load_scenario(path)?;
        let label = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for &k in &factors {
            cases.push((format!("{} {k}x", stem(&label)), scale_traffic(&s, k)));
        }
    }
    let rows = bench_inference(&c, &cases, reps)?;
    println!(
        "{:<28} {:>10} {:>8} {:>6} {:>8} {:>12} {:>12}",
        "case", "packets", "devices", "flows", "windows", "median(ms)", "features(ms)"
    );
    for r in &rows {
        println!(
            "{:<28} {:>10} {:>8} {:>6} {:>8} {:>12.3} {:>12.3}",
            r.label,
            r.packets,
            r.devices,
            r.flows,
            r.windows,
            r.median_s * 1e3,
            r.feature_s * 1e3
        );
    }
    m.config = serde_json::json!({ "sweep": factors, "reps": reps });
    m.inputs = std::iter::once(ckpt.to_path_buf())
        .chain(scenarios.iter().cloned())
        .collect();
    match out {
        Some(o) => {
            write_json(o, &rows)?;
            m.outputs = vec![o.to_path_buf()];
            Ok(Some(o.to_path_buf()))
        }
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("packets=1x,10x,100x").unwrap(), vec![1, 10, 100]);
        assert!(parse_sweep("nodes=1x").is_err());
        assert!(parse_sweep("packets=0x").is_err());
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(
            RunManifest::path_for(Path::new("/nonexistent/model.json")),
            PathBuf::from("/nonexistent/model.json.manifest.json")
        );
        assert_eq!(
            history_path(Path::new("a/m.json")),
            PathBuf::from("a/m.json.history.json")
        );
    }
}
