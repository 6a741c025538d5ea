use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use imix::io::{decode_ecs_csv, encode_label_pgm, encode_mask_pgm, read_labels, read_ppm, write_ppm};
use imix::mixer::{mix_with_ecs, ClassKind, LabeledImage, MixStrategy, Sampler, SelectOrder};
use imix::report::{reliability_csv, summarize, Manifest};
use imix::schedule::{schedule_csv, ScheduleConfig};
use imix::sim::ablate::{per_seed_csv, run_cells, smoothness_grid, strategy_grid, summary_csv, AblationConfig};
use imix::sim::train::{simulate, SimulationConfig};
use imix::{Error, LabelMap, Result};

#[derive(Parser)]
#[command(name = "imix", version, about = "ECS-guided class mixing, ratio schedules and a synthetic self-training simulator")]
struct Cli {
    /// Seed; overrides any seed in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON configuration file for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mix one source and one target sample and write x_m.ppm, y_m.pgm, mask.pgm.
    Mix(MixArgs),
    /// Write the ratio schedule as schedule.csv.
    Schedule(ScheduleArgs),
    /// Train on the synthetic domain pair and evaluate on held-out target images.
    Simulate(SimulateArgs),
    /// Run the strategy/ratio and smoothness grids over several seeds.
    Ablate(AblateArgs),
    /// Aggregate simulate outputs into reliability and correlation summaries.
    Report(ReportArgs),
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    source_image: PathBuf,
    /// Source ground truth (.pgm or .csv).
    #[arg(long)]
    source_labels: PathBuf,
    #[arg(long)]
    target_image: PathBuf,
    /// Target pseudo-labels (.pgm or .csv).
    #[arg(long)]
    target_labels: PathBuf,
    /// ECS vector of the donor domain (`class,ecs` CSV); required for imix.
    #[arg(long)]
    ecs: Option<PathBuf>,
    /// Class count; inferred from the ECS file or the label maps when omitted.
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long, value_enum, default_value_t = OrderArg::Sstf)]
    order: OrderArg,
    #[arg(long, value_enum, default_value_t = KindArg::Under)]
    kind: KindArg,
    #[arg(long, value_enum, default_value_t = SamplerArg::Imix)]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Sstf,
    Tssf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Well,
    Under,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Classmix,
    Imix,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Overrides `total_iters`.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    eta_min: Option<f64>,
    #[arg(long)]
    eta_max: Option<f64>,
    /// Use the mirrored CDF instead of the reversed CDF for the middle phase.
    #[arg(long)]
    mirrored: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Overrides the iteration count.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    /// Run seeds `seed..seed+N` (default: the configured seed list).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, value_enum, default_value_t = GridArg::Both)]
    grid: GridArg,
    /// Overrides the iteration count of every run.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum GridArg {
    Strategy,
    Tau,
    Both,
}

#[derive(Args)]
struct ReportArgs {
    /// Directories written by `simulate` (each with metrics.csv and iou.csv).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

fn load_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn new<C: Serialize>(dir: &Path, command: &str, seed: u64, config: &C) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), manifest: Manifest::new(command, seed, config)? })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        fs::write(self.dir.join("manifest.json"), self.manifest.to_json()?)?;
        Ok(())
    }
}

fn with_classes(labels: LabelMap, c: usize) -> Result<LabelMap> {
    if labels.num_classes() == c {
        return Ok(labels);
    }
    LabelMap::new(labels.height(), labels.width(), c, labels.data().to_vec())
}

fn run_mix(cli: &Cli, args: &MixArgs) -> Result<()> {
    let source_labels = read_labels(&args.source_labels, args.num_classes)?;
    let target_labels = read_labels(&args.target_labels, args.num_classes)?;
    let ecs = args.ecs.as_ref().map(|p| fs::read_to_string(p).map_err(Error::from).and_then(|t| decode_ecs_csv(&t))).transpose()?;
    let c = args
        .num_classes
        .or(ecs.as_ref().map(Vec::len))
        .unwrap_or_else(|| source_labels.num_classes().max(target_labels.num_classes()));
    let source = LabeledImage::new(read_ppm(&args.source_image)?, with_classes(source_labels, c)?)?;
    let target = LabeledImage::new(read_ppm(&args.target_image)?, with_classes(target_labels, c)?)?;

    let strategy = MixStrategy::new(
        match args.order {
            OrderArg::Sstf => SelectOrder::Sstf,
            OrderArg::Tssf => SelectOrder::Tssf,
        },
        match args.kind {
            KindArg::Well => ClassKind::Well,
            KindArg::Under => ClassKind::Under,
        },
        match args.sampler {
            SamplerArg::Classmix => Sampler::ClassMix,
            SamplerArg::Imix => Sampler::IMix,
        },
    );
    let ecs = match (strategy.sampler, ecs) {
        (_, Some(e)) => e,
        (Sampler::ClassMix, None) => vec![1.0 / c as f64; c],
        (Sampler::IMix, None) => return Err(Error::Config("--ecs is required with --sampler imix".into())),
    };
    let (donor, follower) = match strategy.order {
        SelectOrder::Sstf => (&source, &target),
        SelectOrder::Tssf => (&target, &source),
    };
    let seed = cli.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixed = mix_with_ecs(donor, follower, strategy.sampler, strategy.kind, &ecs, args.eta, &mut rng)?;

    let settings = json!({
        "strategy": strategy, "eta": args.eta, "num_classes": c, "seed": seed,
    });
    let mut out = Output::new(&cli.out, "mix", seed, &settings)?;
    for p in [&args.source_image, &args.source_labels, &args.target_image, &args.target_labels] {
        out.manifest.add_input(p)?;
    }
    if let Some(p) = &args.ecs {
        out.manifest.add_input(p)?;
    }
    write_ppm(out.dir.join("x_m.ppm"), &mixed.image)?;
    out.manifest.outputs.push("x_m.ppm".into());
    out.write("y_m.pgm", &encode_label_pgm(&mixed.label)?)?;
    out.write("mask.pgm", &encode_mask_pgm(&mixed.mask))?;
    let selection = json!({
        "strategy": strategy.to_string(),
        "eta": args.eta,
        "selected_classes": mixed.selected_classes,
        "mask_coverage": mixed.mask.coverage(),
    });
    out.write("selection.json", serde_json::to_string_pretty(&selection)?.as_bytes())?;
    out.finish()?;
    println!("{strategy}: selected {:?}", mixed.selected_classes);
    Ok(())
}

fn run_schedule(cli: &Cli, args: &ScheduleArgs) -> Result<()> {
    let mut cfg: ScheduleConfig = load_json(cli.config.as_deref())?;
    if let Some(v) = args.iters {
        cfg.total_iters = v;
    }
    if let Some(v) = args.a {
        cfg.a = v;
    }
    if let Some(v) = args.b {
        cfg.b = v;
    }
    if let Some(v) = args.eta_min {
        cfg.eta_min = v;
    }
    if let Some(v) = args.eta_max {
        cfg.eta_max = v;
    }
    if args.mirrored {
        cfg.reversed = false;
    }
    cfg.validate()?;
    let mut out = Output::new(&cli.out, "schedule", cli.seed.unwrap_or(0), &cfg)?;
    if let Some(p) = &cli.config {
        out.manifest.add_input(p)?;
    }
    out.write("schedule.csv", schedule_csv(&cfg)?.as_bytes())?;
    out.finish()
}

fn run_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let mut cfg: SimulationConfig = load_json(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(k) = args.iters {
        cfg.train.iterations = k;
    }
    cfg.validate()?;
    let result = simulate(&cfg)?;
    let mut out = Output::new(&cli.out, "simulate", cfg.train.seed, &cfg)?;
    if let Some(p) = &cli.config {
        out.manifest.add_input(p)?;
    }
    out.write("config.json", serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    out.write("metrics.csv", result.run.metrics_csv().as_bytes())?;
    out.write("ecs_history.csv", result.run.ecs_history().to_csv().as_bytes())?;
    out.write("iou.csv", result.iou.to_csv().as_bytes())?;
    out.write("model.bin", &result.run.state.student.to_bytes())?;
    out.finish()?;
    println!("mIoU {:.4}", result.iou.miou);
    Ok(())
}

fn run_ablate(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let mut cfg: AblationConfig = load_json(cli.config.as_deref())?;
    if let Some(n) = args.seeds {
        let start = cli.seed.unwrap_or(0);
        cfg.seeds = (start..start + n).collect();
    } else if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(k) = args.iters {
        cfg.base.train.iterations = k;
    }
    let mut cells = Vec::new();
    if args.grid != GridArg::Tau {
        cells.extend(strategy_grid(&cfg));
    }
    if args.grid != GridArg::Strategy {
        cells.extend(smoothness_grid(&cfg));
    }
    let results = run_cells(&cfg, &cells)?;
    let mut out = Output::new(&cli.out, "ablate", cfg.seeds.first().copied().unwrap_or(0), &cfg)?;
    if let Some(p) = &cli.config {
        out.manifest.add_input(p)?;
    }
    out.write("ablation_summary.csv", summary_csv(&results).as_bytes())?;
    out.write("ablation_runs.csv", per_seed_csv(&results, &cfg.seeds).as_bytes())?;
    out.finish()?;
    print!("{}", summary_csv(&results));
    Ok(())
}

fn run_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let mut inputs = Vec::with_capacity(args.runs.len());
    for dir in &args.runs {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| Error::Data(format!("{}: {e}", dir.join(name).display())))
        };
        inputs.push((dir.display().to_string(), read("metrics.csv")?, read("iou.csv")?));
    }
    let summary = summarize(&inputs, args.bins)?;
    let settings = json!({ "bins": args.bins, "runs": inputs.iter().map(|r| &r.0).collect::<Vec<_>>() });
    let mut out = Output::new(&cli.out, "report", cli.seed.unwrap_or(0), &settings)?;
    for dir in &args.runs {
        out.manifest.add_input(&dir.join("metrics.csv"))?;
        out.manifest.add_input(&dir.join("iou.csv"))?;
    }
    out.write("reliability.csv", reliability_csv(&summary.bins).as_bytes())?;
    out.write("runs.csv", summary.runs_csv().as_bytes())?;
    out.write("report.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    out.finish()?;
    match summary.pooled_correlation {
        Some(r) => println!("pooled ECS/IoU correlation {r:.4} over {} runs", summary.runs.len()),
        None => println!("pooled ECS/IoU correlation undefined (zero variance)"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Mix(a) => run_mix(&cli, a),
        Command::Schedule(a) => run_schedule(&cli, a),
        Command::Simulate(a) => run_simulate(&cli, a),
        Command::Ablate(a) => run_ablate(&cli, a),
        Command::Report(a) => run_report(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
