//! Command-line entry point shared by the `bcdiff` binary and tests.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::boundary;
use crate::checkpoint;
use crate::config::{parse_override, TrainConfig};
use crate::data::{format_grids, format_tokens, generate_dataset, Dataset, SourceKind, SyntheticSource};
use crate::error::Result;
use crate::eval::{self, EvalReport};
use crate::oracle;
use crate::sampling::{self, SampleOutput, SamplerConfig, SamplerMode};
use crate::training::{self, TrainState};

pub const PROBE_HEADER: &str = "element,t0,u_t0,v_t0,j_star,masked";

/// Magic of the continuous-state array file.
pub const ARRAY_MAGIC: &[u8; 8] = b"BCDARR01";

#[derive(Debug, Parser)]
#[command(name = "bcdiff", version, about = "Boundary-conditional diffusion for discrete data")]
struct Cli {
    /// Seed for every random draw of the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a denoiser and write a checkpoint.
    Train(TrainArgs),
    /// Generate items from a checkpoint.
    Sample(SampleArgs),
    /// Print per-element boundary estimates as CSV.
    ProbeBoundary(ProbeArgs),
    /// One-step recovery accuracy and distribution distances.
    Eval(EvalArgs),
    /// Write a synthetic dataset.
    GenData(GenArgs),
    /// Convert a report or metrics CSV to long format.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV destination.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.r=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Gaussian,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Inference confidence factor; defaults to the training value.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Deterministic)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    alteration: OnOff,
    #[arg(long, default_value_t = sampling::DEFAULT_SIGMA_MAX)]
    sigma_max: f64,
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Use the unrescaled sampler.
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the continuous pre-rounding state.
    #[arg(long)]
    continuous: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Append the brute-force stopping time as `t0_oracle`.
    #[arg(long)]
    oracle: bool,
    /// Items drawn from the dataset.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Reference items (token or grid file).
    #[arg(long)]
    dataset: PathBuf,
    /// Generated items to compare against the reference.
    #[arg(long)]
    generated: Option<PathBuf>,
    /// Confidence factors, comma separated; defaults to the training value.
    #[arg(long, value_delimiter = ',')]
    r: Vec<f64>,
    /// Nominal times, comma separated; defaults to 1, T/4, T/2, 3T/4, T.
    #[arg(long, value_delimiter = ',')]
    t: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    limit: usize,
    #[arg(long, default_value_t = 4)]
    draws: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// markov_tokens, categorical_grid or binary_subpixels.
    #[arg(long)]
    source: SourceKind,
    #[arg(long, default_value_t = 16)]
    states: usize,
    /// Sequence length or grid side.
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// `ndim u32`, `dims u64...`, `f32` data, all little-endian, after the magic.
pub fn array_bytes(x: &ndarray::Array3<f64>) -> Vec<u8> {
    let mut out = ARRAY_MAGIC.to_vec();
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in x.shape() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in x.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    let dataset = training::load_dataset(&cfg)?;
    let mut state = TrainState::new(cfg)?;
    let mut file = args.metrics.as_deref().map(fs::File::create).transpose()?;
    let mut warned = false;
    training::train_with(&mut state, &dataset, file.as_mut().map(|f| f as &mut dyn Write), |m| {
        if m.collapsed && !warned {
            eprintln!("warning: embedding rows collapsed at step {}", m.step);
            warned = true;
        }
    })?;
    checkpoint::save(&state, &args.out)
}

fn cmd_sample(args: SampleArgs, seed: Option<u64>) -> Result<()> {
    let state = checkpoint::load(&args.ckpt)?;
    let cfg = &state.config;
    let mut sc = SamplerConfig::equal(state.schedule.steps(), args.steps, args.r.unwrap_or(cfg.r))?;
    sc.alteration = matches!(args.alteration, OnOff::On);
    sc.mode = match args.mode {
        ModeArg::Deterministic => SamplerMode::Deterministic,
        ModeArg::Gaussian => SamplerMode::Gaussian,
    };
    sc.sigma_max = args.sigma_max;
    let symbols = if cfg.data.source.is_grid() { cfg.data.size * cfg.data.size } else { cfg.data.size };
    let len = symbols * cfg.space.repr.elements_per_symbol();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let out: SampleOutput = if args.plain {
        sampling::sample_plain(&state.net, &state.table, &state.schedule, &sc, args.count, len, &mut rng)?
    } else {
        sampling::sample(&state.net, &state.table, &state.schedule, &sc, args.count, len, &mut rng)?
    };
    let items = eval::collapse_states(&out.states, cfg.space.repr);
    let text = if cfg.data.source.is_grid() {
        format_grids(&items, cfg.data.size)?
    } else {
        format_tokens(&items)
    };
    fs::write(&args.out, text)?;
    if let Some(p) = &args.continuous {
        fs::write(p, array_bytes(&out.x0))?;
    }
    Ok(())
}

fn cmd_probe(args: ProbeArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let schedule = cfg.schedule.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.seed));
    let table = cfg.space.build_table(&mut rng)?;
    let dataset = training::load_dataset(&cfg)?;
    let mut header = PROBE_HEADER.to_string();
    if args.oracle {
        header.push_str(",t0_oracle");
    }
    let mut text = header + "\n";
    let mut element = 0;
    for item in dataset.items.iter().cycle().take(args.count) {
        let labels = cfg.space.repr.expand(item)?;
        let x0 = table.embed(&labels)?;
        let eps = ndarray::Array2::from_shape_simple_fn(x0.raw_dim(), || StandardNormal.sample(&mut rng));
        let est = boundary::estimate(x0.view(), &labels, eps.view(), &table, &schedule)?;
        for i in 0..labels.len() {
            text.push_str(&format!(
                "{element},{},{},{},{},{}",
                est.t0[i],
                est.u_t0[i],
                est.v_t0[i],
                est.j_star[i],
                u8::from(est.masked[i])
            ));
            if args.oracle {
                let grid = oracle::DENSE_GRID_PER_STEP * schedule.steps();
                let t = oracle::brute_first_exit(x0.row(i), eps.row(i), labels[i], &table, &schedule, grid);
                text.push_str(&format!(",{t}"));
            }
            text.push('\n');
            element += 1;
        }
    }
    write_out(args.out.as_deref(), &text)
}

fn cmd_eval(args: EvalArgs, seed: Option<u64>) -> Result<()> {
    let state = checkpoint::load(&args.ckpt)?;
    let cfg = &state.config;
    let states = match cfg.data.source {
        SourceKind::BinarySubpixels => 256,
        _ => cfg.space.states,
    };
    let reference = Dataset::read(&args.dataset, cfg.data.source, states)?;
    let horizon = state.schedule.horizon();
    let t_list = if args.t.is_empty() {
        vec![1.0, (horizon / 4.0).floor(), (horizon / 2.0).floor(), (3.0 * horizon / 4.0).floor(), horizon]
    } else {
        args.t.clone()
    };
    let r_list = if args.r.is_empty() { vec![cfg.r] } else { args.r.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let mut report = EvalReport::default();
    for &r in &r_list {
        report.recovery.extend(eval::eval_recovery(
            &state.net,
            &state.table,
            cfg.space.repr,
            &reference,
            &state.schedule,
            r,
            &t_list,
            args.limit,
            args.draws,
            &mut rng,
        )?);
    }
    if let Some(g) = &args.generated {
        let generated = Dataset::read(g, cfg.data.source, states)?;
        let row_len = cfg.data.source.is_grid().then_some(reference.size);
        report.distance = Some(eval::eval_distribution(&generated.items, &reference.items, states, row_len));
    }
    write_out(args.out.as_deref(), &report.to_csv())
}

fn cmd_gen(args: GenArgs, seed: Option<u64>) -> Result<()> {
    let src = SyntheticSource::new(args.source, args.states, args.size, seed.unwrap_or(7))?;
    generate_dataset(&src, args.count).write(&args.out)
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report)?;
    write_out(args.out.as_deref(), &eval::plot_rows(&text)?)
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => cmd_train(a, seed),
        Command::Sample(a) => cmd_sample(a, seed),
        Command::ProbeBoundary(a) => cmd_probe(a, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::GenData(a) => cmd_gen(a, seed),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 1;
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}
