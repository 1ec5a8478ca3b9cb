use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use smoothattn::data::{load_csv, load_dataset, save_dataset, COORD_DECIMALS};
use smoothattn::eval::{
    attention_timeline_csv, attention_timeline_svg, compare_variants, trajectory_svg, TimelineSeries,
};
use smoothattn::model::predict;
use smoothattn::training::{run_experiment_with, ConfigFile, BEST_CHECKPOINT};
use smoothattn::{
    evaluate, Checkpoint, DatasetSpec, MetricReport, ScenarioKind, ScenarioSample, Variant,
};

/// Default output root when `--out` is not given.
const OUT_ENV: &str = "SMOOTHATTN_OUT";
const REPORT_JSON: &str = "report.json";
const REPORT_CSV: &str = "report.csv";
const RUN_INFO: &str = "run.json";

#[derive(Parser)]
#[command(name = "smoothattn", version, about = "Multi-agent trajectory forecasting with smooth attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train one variant for several seeds and score each run on the test split.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Forecast the scenes of a CSV file.
    Predict(PredictArgs),
    /// Trajectory and attention-timeline plots of trained runs.
    Plot(PlotArgs),
    /// Compare the reports of several variants.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "double_merge")]
    scenario: ScenarioKind,
    /// Major-case training samples.
    #[arg(long, default_value_t = 50)]
    major: usize,
    /// Minor-case training samples as a fraction of the major count.
    #[arg(long, default_value_t = 0.3)]
    minor_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    test_per_case: usize,
    /// Fraction of each case's training samples held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML file with optional [train] and [model] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base seed; run `k` uses `seed + k`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Attention mode to evaluate with; defaults to the variant the
    /// checkpoint was trained as, or `ours`.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene CSV; every scene in the file is forecast.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    horizon: usize,
    /// Steps of each scene used as history (default: all of them).
    #[arg(long)]
    observed: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// A run directory, or a train output directory holding several runs.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory (default: the one the run was trained on).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test scene to plot (default: the first test scene of each case).
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Directories holding a report.json each (train or eval outputs).
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// What a run directory was trained as.
#[derive(Serialize, Deserialize)]
struct RunInfo {
    variant: Variant,
    seed: u64,
    data: PathBuf,
    best_epoch: usize,
}

fn out_dir(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
            .join(name)
    })
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut spec = DatasetSpec::new(args.scenario, args.major, args.minor_ratio, args.seed);
    spec.test_per_case = args.test_per_case;
    spec.val_fraction = args.val_fraction;
    let dataset = spec.build()?;
    let out = out_dir(args.out, "data");
    save_dataset(&out, &dataset)?;
    println!(
        "wrote {} train, {} val, {} test scenes to {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let t = &mut config.train;
    if let Some(v) = args.variant {
        t.variant = v;
    }
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(s) = args.seed {
        t.seed = s;
    }
    t.validate()?;
    let variant = t.variant;
    let dataset = load_dataset(&args.data)?;
    let out = out_dir(args.out, &format!("train-{variant}"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.toml"), config.to_toml()?)?;

    let mut failure = None;
    let experiment = run_experiment_with(&dataset, &config.model, &config.train, args.runs, |k, result| {
        let dir = out.join(format!("run-{k:02}"));
        let mut outcome = result.outcome.clone();
        let saved = outcome.save(&dir).map_err(anyhow::Error::from).and_then(|()| {
            let info = RunInfo {
                variant,
                seed: result.seed,
                data: args.data.clone(),
                best_epoch: result.outcome.best_epoch,
            };
            write(&dir.join(RUN_INFO), serde_json::to_string_pretty(&info)? + "\n")
        });
        match saved {
            Ok(()) => eprintln!(
                "run {k} (seed {}): best epoch {}, test ADE {}",
                result.seed,
                result.outcome.best_epoch,
                result
                    .metrics
                    .iter()
                    .map(|(case, m)| format!("{case} {:.4}", m.ade))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            Err(e) if failure.is_none() => failure = Some(e),
            Err(_) => {}
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    write_report(&out, &experiment.report)?;
    print!("{}", experiment.report.to_table());
    Ok(())
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join(REPORT_JSON), report.to_json()? + "\n")?;
    write(&dir.join(REPORT_CSV), report.to_csv())
}

/// `run.json` next to a checkpoint, if present.
fn run_info(checkpoint: &Path) -> Result<Option<RunInfo>> {
    let path = checkpoint.with_file_name(RUN_INFO);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let info = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(info))
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let info = run_info(&args.checkpoint)?;
    let variant = args
        .variant
        .or(info.as_ref().map(|i| i.variant))
        .unwrap_or(Variant::Ours);
    let dataset = load_dataset(&args.data)?;
    if dataset.test.is_empty() {
        bail!("{} has no test scenes", args.data.display());
    }
    let metrics = evaluate(&dataset.test, &checkpoint.params, &checkpoint.config, variant)?;
    let report = MetricReport::new(
        variant,
        vec![info.map_or(0, |i| i.seed)],
        dataset.test.iter().map(|s| s.scene.id().to_string()).collect(),
        vec![metrics],
    )?;
    let out = out_dir(args.out, "eval");
    write_report(&out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let variant = args
        .variant
        .or(run_info(&args.checkpoint)?.map(|i| i.variant))
        .unwrap_or(Variant::Ours);
    let scenes = load_csv(&args.scene)?;
    let mut text = String::from("scene_id,agent_id,step,x,y\n");
    for scene in scenes {
        let scene = match args.observed {
            Some(o) => scene.with_observed(o)?,
            None => scene,
        };
        let sample = ScenarioSample::unlabeled(scene);
        let mode = variant.attention_mode(&sample)?;
        let scene = &sample.scene;
        let forecast = predict(scene, args.horizon, &checkpoint.params, &checkpoint.config, mode)?;
        for (h, frame) in forecast.positions.iter().enumerate() {
            for (agent, s) in scene.agent_ids().iter().zip(frame) {
                text.push_str(&format!(
                    "{},{agent},{},{:.p$},{:.p$}\n",
                    scene.id(),
                    scene.observed() + h,
                    s.x,
                    s.y,
                    p = COORD_DECIMALS
                ));
            }
        }
    }
    match args.out {
        Some(path) => write(&path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Run directories under `dir`: itself if it holds a checkpoint, otherwise
/// its `run-*` children.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(BEST_CHECKPOINT).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut runs = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        if path.join(BEST_CHECKPOINT).exists() {
            runs.push(path);
        }
    }
    runs.sort();
    if runs.is_empty() {
        bail!("no {BEST_CHECKPOINT} in {} or its run directories", dir.display());
    }
    Ok(runs)
}

fn plot_cmd(args: PlotArgs) -> Result<()> {
    let out_root = args.out.clone();
    for run in run_dirs(&args.run)? {
        let checkpoint_path = run.join(BEST_CHECKPOINT);
        let checkpoint = Checkpoint::load(&checkpoint_path)?;
        let info = run_info(&checkpoint_path)?;
        let data = match (&args.data, &info) {
            (Some(d), _) => d.clone(),
            (None, Some(i)) => i.data.clone(),
            (None, None) => bail!("{} has no {RUN_INFO}; pass --data", run.display()),
        };
        let variant = info.map_or(Variant::Ours, |i| i.variant);
        let dataset = load_dataset(&data)?;
        let samples: Vec<&ScenarioSample> = match &args.scene {
            Some(id) => vec![dataset
                .test
                .iter()
                .find(|s| s.scene.id() == id)
                .with_context(|| format!("no test scene {id} in {}", data.display()))?],
            None => {
                let mut seen = Vec::new();
                let mut picked = Vec::new();
                for s in &dataset.test {
                    if !seen.contains(&s.case) {
                        seen.push(s.case);
                        picked.push(s);
                    }
                }
                picked
            }
        };
        let out = match &out_root {
            Some(root) => root.join(run.file_name().unwrap_or_default()),
            None => run.join("plots"),
        };
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        for sample in samples {
            let files = plot_sample(&out, sample, &checkpoint, variant)?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

/// Writes the trajectory overlay and one attention timeline (SVG and CSV)
/// per main vehicle.
fn plot_sample(out: &Path, sample: &ScenarioSample, checkpoint: &Checkpoint, variant: Variant) -> Result<Vec<PathBuf>> {
    let scene = &sample.scene;
    let id = scene.id();
    let forecast = predict(
        scene,
        scene.horizon().max(1),
        &checkpoint.params,
        &checkpoint.config,
        variant.attention_mode(sample)?,
    )?;
    let main: Vec<usize> = sample.main_agents.map(|m| m.to_vec()).unwrap_or_default();
    let mut files = Vec::new();
    let path = out.join(format!("trajectory_{id}.svg"));
    write(&path, trajectory_svg(scene, Some(&forecast.positions), &main))?;
    files.push(path);
    let steps = forecast.attention.steps();
    for (k, &agent) in main.iter().enumerate() {
        let other = main[1 - k];
        let mut series = vec![TimelineSeries {
            label: format!("{variant} on {}", scene.agent_ids()[other]),
            values: (0..steps).map(|t| forecast.attention.weight(t, agent, other)).collect(),
        }];
        if let Some(oracle) = &sample.correct_attention {
            series.push(TimelineSeries {
                label: "oracle".into(),
                values: (0..steps).map(|t| oracle.weight(t, agent, other)).collect(),
            });
        }
        let name = scene.agent_ids()[agent].clone();
        let title = format!("{id}: attention of {name} on {}", scene.agent_ids()[other]);
        let svg = out.join(format!("attention_{id}_{name}.svg"));
        write(&svg, attention_timeline_svg(&title, &series, sample.highlight.clone()))?;
        let csv = out.join(format!("attention_{id}_{name}.csv"));
        write(&csv, attention_timeline_csv(&series))?;
        files.extend([svg, csv]);
    }
    Ok(files)
}

fn compare_cmd(args: CompareArgs) -> Result<()> {
    let reports = args
        .runs
        .iter()
        .map(|dir| MetricReport::load(&dir.join(REPORT_JSON)).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let comparison = compare_variants(&reports)?;
    let out = out_dir(args.out, "compare");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("comparison.csv"), comparison.to_csv())?;
    print!("{}", comparison.to_table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
