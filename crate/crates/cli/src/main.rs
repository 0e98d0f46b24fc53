//! `nchan`: train toy models, decode, rerank, tune, analyze and serve.

mod commands;
mod config;
mod models;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// A bad invocation: exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(
    name = "nchan",
    version,
    about = "Noisy-channel decoding and n-best reranking"
)]
pub struct Cli {
    /// key=value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Root seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic parallel corpus.
    MakeSynthetic(MakeSyntheticArgs),
    /// Train the toy direct, channel, right-to-left and n-gram models.
    TrainToy(TrainToyArgs),
    /// Beam-decode a source file into an n-best file.
    Decode(DecodeArgs),
    /// Pick one candidate per sentence with fixed weights.
    Rerank(RerankArgs),
    /// Tune reranking weights on a dev n-best list.
    Tune(TuneArgs),
    /// Rerank on truncated sources and targets.
    AnalyzePrefix(AnalyzePrefixArgs),
    /// Corpus BLEU of a hypothesis file.
    Bleu(BleuArgs),
    /// Serve trained models over the scorer protocol.
    ServeScorer(ServeArgs),
    #[command(hide = true)]
    OracleDecode(OracleArgs),
}

#[derive(Args, Debug)]
pub struct MakeSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub target_words: usize,
    #[arg(long, default_value_t = 40)]
    pub source_words: usize,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub dev: usize,
    #[arg(long, default_value_t = 200)]
    pub test: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    #[arg(long, default_value_t = 20)]
    pub successors: usize,
    #[arg(long, default_value_t = 2)]
    pub translations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub insertion_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub reorder_rate: f64,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    /// Training source sentences, one per line.
    #[arg(long)]
    pub src: PathBuf,
    /// Training target sentences aligned with `--src`.
    #[arg(long)]
    pub tgt: PathBuf,
    /// Model directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub em_iterations: usize,
    #[arg(long, default_value_t = 2)]
    pub lm_order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lm_alpha: f64,
    /// Diagonal alignment tension; 0 is plain IBM Model 1.
    #[arg(long, default_value_t = 0.0)]
    pub tension: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Direct,
    NoisyChannel,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChannelKind {
    Full,
    Prefix,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 5)]
    pub k1: usize,
    #[arg(long, default_value_t = 10)]
    pub k2: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub word_reward: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub per_word: bool,
    #[arg(long, default_value_t = 2.0)]
    pub max_len_ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub max_len_slack: usize,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Source sentences, one per line.
    #[arg(long)]
    pub input: PathBuf,
    /// N-best file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::NoisyChannel)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = ChannelKind::Full)]
    pub channel: ChannelKind,
    /// Score with a scorer server (`tcp:host:port`) instead of the local models.
    #[arg(long)]
    pub remote: Option<String>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Args, Debug, Clone)]
pub struct WeightArgs {
    /// Weights file of `name=value` lines; the flags below override it.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_direct: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_channel: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_lm: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_reverse: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_word_reward: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RerankArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    /// Selected translations, one per sentence.
    #[arg(long)]
    pub output: PathBuf,
    /// Reference translations; prints BLEU of the selection when given.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Args, Debug, Clone)]
pub struct TuneSearchArgs {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub weight_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub weight_max: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub reward_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub reward_max: f64,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// Weights file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Features to tune, for example `ch+dir+lm`.
    #[arg(long, default_value = "ch+dir+lm")]
    pub features: String,
    #[command(flatten)]
    pub search: TuneSearchArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzePrefixArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    /// Source sentences the n-best file was decoded from.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// Comma-separated target prefixes: integers are token counts, decimals
    /// are fractions of the candidate length.
    #[arg(long, default_value = "1.0")]
    pub targets: String,
    /// Comma-separated source fractions.
    #[arg(long, default_value = "1.0")]
    pub sources: String,
    /// Comma-separated feature sets.
    #[arg(long, default_value = "ch+dir+lm")]
    pub sets: String,
    #[arg(long, value_enum, default_value_t = ChannelKind::Full)]
    pub channel: ChannelKind,
    /// Tune the weights of every cell instead of using fixed weights.
    #[arg(long)]
    pub tune: bool,
    /// Table to write; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub search: TuneSearchArgs,
}

#[derive(Args, Debug)]
pub struct BleuArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// `tcp:host:port` or `stdio`.
    #[arg(long, default_value = "tcp:127.0.0.1:7878")]
    pub endpoint: String,
    #[arg(long, value_enum, default_value_t = ChannelKind::Full)]
    pub channel: ChannelKind,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub max_len: usize,
    #[command(flatten)]
    pub search: SearchArgs,
}

fn run(argv: Vec<OsString>) -> Result<(), anyhow::Error> {
    let argv = config::merge(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            return Err(Usage(first.trim_start_matches("error: ").to_string()).into());
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| Usage(format!("cannot start {} workers: {e}", cli.jobs)))?;
    commands::dispatch(&cli)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
