//! Batch command line.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config file,
//! missing paths), 2 on data errors (unreadable or malformed inputs, shapes
//! that do not fit).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::delay::{apply_delay, remove_delay};
use crate::io::{self, ConfigError, GridFile, RunConfig, SynthSpec};
use crate::lmsim::{generate, markov_fit, PenaltyScope};
use crate::ordering::{clip_and_shuffle, prefix_curve, PrefixOptions, ReportMetadata};
use crate::quantizer::{codebook_init, decode_grid, ema_train, encode_matrix, QuantizerKind};
use crate::rng::SeededRng;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Data(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ordq", version, about = "Ordered product quantization and delayed multi-stream generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Seed for every random draw (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input path (repeatable for fit-markov).
    #[arg(long = "in")]
    input: Vec<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    kind: Option<QuantizerKind>,
    /// Total codebook count (RQ: stages).
    #[arg(long)]
    codebooks: Option<usize>,
    #[arg(long)]
    codewords: Option<usize>,
    /// Expected input dimension; defaults to the feature width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    dead_code_threshold: Option<f64>,
    #[arg(long)]
    smoothing_epsilon: Option<f64>,
    /// Update codebooks of streams dropped by nested dropout (OPQ).
    #[arg(long)]
    update_dropped: Option<bool>,
    /// Also write the per-iteration loss as CSV `iteration,loss`.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    codebooks: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    codebooks: PathBuf,
    /// Streams to decode from; defaults to all.
    #[arg(long)]
    prefix: Option<usize>,
}

#[derive(Debug, Args)]
struct PrefixCurveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    codebooks: PathBuf,
    /// Feature file; same as --in.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Treat columns as cepstral coefficients and add MCD.
    #[arg(long)]
    cepstral: bool,
    /// Leave the energy coefficient c0 out of MCD.
    #[arg(long)]
    exclude_c0: bool,
}

#[derive(Debug, Args)]
struct DelayArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    delay: Option<usize>,
}

#[derive(Debug, Args)]
struct CommonOnly {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ClipArgs {
    #[command(flatten)]
    common: Common,
    /// Rows per one-second slice.
    #[arg(long)]
    frame_rate: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    order: Option<usize>,
    /// Add-alpha smoothing constant.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Delay applied to plain input grids.
    #[arg(long)]
    delay: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Content frame cap.
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    repetition_penalty: Option<f64>,
    #[arg(long)]
    penalty_scope: Option<PenaltyScope>,
    /// Fail instead of returning an empty grid on an immediate EOS.
    #[arg(long)]
    strict: bool,
    /// Run log CSV `seed,config_hash,frames_emitted,stop_reason`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write the undelayed grid here.
    #[arg(long)]
    plain_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// `anisotropic-gaussian:DIM:EXP`, `clusters:K:DIM:SPREAD` or `ar1:DIM:COEF`.
    #[arg(long)]
    spec: SynthSpec,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Initialize and EMA-train a codebook set on a feature file.
    Train(TrainArgs),
    /// Quantize features into a token grid.
    Encode(EncodeArgs),
    /// Reconstruct features from a token grid (optionally a stream prefix).
    Decode(DecodeArgs),
    /// Distortion of every stream-prefix reconstruction, as CSV.
    PrefixCurve(PrefixCurveArgs),
    /// Apply the delayed layout to a token grid.
    Delay(DelayArgs),
    /// Remove the delayed layout.
    Undelay(CommonOnly),
    /// Clip a 25-75% segment and shuffle its one-second slices.
    ClipShuffle(ClipArgs),
    /// Fit a count-based Markov model on delayed grids.
    FitMarkov(FitArgs),
    /// Sample a delayed grid from a Markov model.
    Generate(GenerateArgs),
    /// Write synthetic features.
    Synth(SynthArgs),
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

/// Config file values, then flag overrides, then the seed.
fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => io::read_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(first) = common.input.first() {
        cfg.input = Some(first.clone());
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    cfg.sampling.seed = cfg.seed;
    Ok(cfg)
}

fn single_input(common: &Common) -> Result<()> {
    if common.input.len() > 1 {
        return Err(CliError::Usage("this subcommand takes a single --in".into()));
    }
    Ok(())
}

fn input_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.input
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing input path (--in or `in` in the config)".into()))
}

fn output_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.output
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing output path (--out or `out` in the config)".into()))
}

fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

fn write_csv_file(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(data)?;
    for r in rows {
        w.write_record(r).map_err(data)?;
    }
    w.flush().map_err(data)
}

fn read_plain(path: &Path) -> Result<crate::types::TokenGrid> {
    match io::read_grid(path).map_err(data)? {
        GridFile::Plain(g) => Ok(g),
        GridFile::Delayed(_) => Err(CliError::Data(format!(
            "{} holds a delayed grid; run undelay first",
            path.display()
        ))),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Encode(a) => {
            single_input(&a.common)?;
            let cfg = base_config(&a.common)?;
            let cbs = io::read_codebooks(&a.codebooks).map_err(data)?;
            let features = io::read_features(input_path(&cfg)?).map_err(data)?;
            let grid = encode_matrix(&features, &cbs).map_err(data)?;
            io::write_grid(&GridFile::Plain(grid), output_path(&cfg)?).map_err(data)
        }
        Command::Decode(a) => {
            single_input(&a.common)?;
            let mut cfg = base_config(&a.common)?;
            if a.prefix.is_some() {
                cfg.prefix = a.prefix;
            }
            let cbs = io::read_codebooks(&a.codebooks).map_err(data)?;
            let grid = read_plain(input_path(&cfg)?)?;
            let prefix = cfg.prefix.unwrap_or(cbs.stream_count());
            let recon = decode_grid(&grid, &cbs, prefix).map_err(data)?;
            io::write_features(&recon, output_path(&cfg)?).map_err(data)
        }
        Command::PrefixCurve(a) => {
            single_input(&a.common)?;
            let mut cfg = base_config(&a.common)?;
            if let Some(f) = &a.features {
                cfg.input = Some(f.clone());
            }
            let cbs = io::read_codebooks(&a.codebooks).map_err(data)?;
            let path = input_path(&cfg)?;
            let features = io::read_features(path).map_err(data)?;
            let opts = PrefixOptions {
                cepstral: a.cepstral,
                mcd_exclude_c0: a.exclude_c0,
                metadata: ReportMetadata {
                    dataset: path.display().to_string(),
                    seed: Some(cfg.seed),
                    config_hash: Some(cfg.config_hash()),
                },
            };
            let report = prefix_curve(&features, &cbs, &opts).map_err(data)?;
            let file = fs::File::create(output_path(&cfg)?).map_err(data)?;
            report.write_csv(std::io::BufWriter::new(file)).map_err(data)
        }
        Command::Delay(a) => {
            single_input(&a.common)?;
            let mut cfg = base_config(&a.common)?;
            set(&mut cfg.delay, a.delay);
            let grid = read_plain(input_path(&cfg)?)?;
            let delayed = apply_delay(&grid, cfg.delay);
            io::write_grid(&GridFile::Delayed(delayed), output_path(&cfg)?).map_err(data)
        }
        Command::Undelay(a) => {
            single_input(&a.common)?;
            let cfg = base_config(&a.common)?;
            let path = input_path(&cfg)?;
            let delayed = match io::read_grid(path).map_err(data)? {
                GridFile::Delayed(g) => g,
                GridFile::Plain(_) => {
                    return Err(CliError::Data(format!("{} is not a delayed grid", path.display())));
                }
            };
            io::write_grid(&GridFile::Plain(remove_delay(&delayed)), output_path(&cfg)?).map_err(data)
        }
        Command::ClipShuffle(a) => {
            single_input(&a.common)?;
            let mut cfg = base_config(&a.common)?;
            set(&mut cfg.frame_rate, a.frame_rate);
            let features = io::read_features(input_path(&cfg)?).map_err(data)?;
            let mut rng = SeededRng::new(cfg.seed);
            let out = clip_and_shuffle(&features, cfg.frame_rate, &mut rng).map_err(data)?;
            io::write_features(&out, output_path(&cfg)?).map_err(data)
        }
        Command::FitMarkov(a) => fit_markov(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Synth(a) => {
            single_input(&a.common)?;
            let cfg = base_config(&a.common)?;
            let m = io::synth_features(&a.spec, a.rows, cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
            io::write_features(&m, output_path(&cfg)?).map_err(data)
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    single_input(&a.common)?;
    let mut cfg = base_config(&a.common)?;
    set(&mut cfg.kind, a.kind);
    set(&mut cfg.codebooks, a.codebooks);
    set(&mut cfg.codewords, a.codewords);
    if a.dim.is_some() {
        cfg.dim = a.dim;
    }
    if a.group_size.is_some() {
        cfg.group_size = a.group_size;
    }
    set(&mut cfg.train.iterations, a.iterations);
    set(&mut cfg.train.ema_decay, a.ema_decay);
    set(&mut cfg.train.dead_code_threshold, a.dead_code_threshold);
    set(&mut cfg.train.smoothing_epsilon, a.smoothing_epsilon);
    set(&mut cfg.train.update_dropped_streams, a.update_dropped);
    let cfg = validated(cfg)?;

    let features = io::read_features(input_path(&cfg)?).map_err(data)?;
    if let Some(dim) = cfg.dim {
        if dim != features.cols() {
            return Err(CliError::Data(format!(
                "features have {} columns but dim is {dim}",
                features.cols()
            )));
        }
    }
    let mut rng = SeededRng::new(cfg.seed);
    let init = codebook_init(&features, &cfg.codebook_spec(), &mut rng).map_err(data)?;
    let outcome = ema_train(&features, init, &cfg.train, &mut rng).map_err(data)?;
    io::write_codebooks(&outcome.codebooks, output_path(&cfg)?).map_err(data)?;
    if let Some(path) = &a.loss_out {
        let mut rows = vec![vec!["iteration".to_string(), "loss".to_string()]];
        rows.extend(
            outcome
                .loss_trace
                .iter()
                .enumerate()
                .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]),
        );
        write_csv_file(path, &rows)?;
    }
    Ok(())
}

fn fit_markov(a: FitArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    set(&mut cfg.order, a.order);
    set(&mut cfg.smoothing, a.smoothing);
    set(&mut cfg.delay, a.delay);
    let cfg = validated(cfg)?;
    let paths: Vec<PathBuf> = if a.common.input.is_empty() {
        vec![input_path(&cfg)?.to_path_buf()]
    } else {
        a.common.input.clone()
    };
    let mut corpus = Vec::with_capacity(paths.len());
    for p in &paths {
        corpus.push(match io::read_grid(p).map_err(data)? {
            GridFile::Delayed(g) => g,
            GridFile::Plain(g) => apply_delay(&g, cfg.delay),
        });
    }
    let model = markov_fit(&corpus, cfg.order, cfg.smoothing).map_err(data)?;
    io::save_markov(&model, output_path(&cfg)?).map_err(data)
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    single_input(&a.common)?;
    let mut cfg = base_config(&a.common)?;
    set(&mut cfg.max_frames, a.max_frames);
    set(&mut cfg.sampling.temperature, a.temperature);
    set(&mut cfg.sampling.top_p, a.top_p);
    set(&mut cfg.sampling.top_k, a.top_k);
    set(&mut cfg.sampling.repetition_penalty, a.repetition_penalty);
    set(&mut cfg.sampling.penalty_scope, a.penalty_scope);
    if a.strict {
        cfg.sampling.strict = true;
    }
    let cfg = validated(cfg)?;
    let model = io::load_markov(input_path(&cfg)?).map_err(data)?;
    let out = generate(&model, &cfg.sampling, model.streams(), model.delay(), cfg.max_frames).map_err(data)?;
    io::write_grid(&GridFile::Delayed(out.delayed.clone()), output_path(&cfg)?).map_err(data)?;
    if let Some(path) = &a.plain_out {
        io::write_grid(&GridFile::Plain(out.grid.clone()), path).map_err(data)?;
    }
    if let Some(path) = &a.log {
        let rows = vec![
            vec![
                "seed".to_string(),
                "config_hash".to_string(),
                "frames_emitted".to_string(),
                "stop_reason".to_string(),
            ],
            vec![
                cfg.seed.to_string(),
                cfg.config_hash(),
                out.frames_emitted().to_string(),
                out.stop.to_string(),
            ],
        ];
        write_csv_file(path, &rows)?;
    }
    Ok(())
}
