//! Command-line surface of the `gesture-relay` binary.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use gesture_relay::frame::Axis;
use gesture_relay::sim::{InitialRanking, ParticipantPolicy};

#[derive(Debug, Parser)]
#[command(name = "gesture-relay", version, about = "Facial-gesture relay for a robot head, with experiment tooling")]
pub struct Cli {
    /// TOML config; `GR_*_PORT` variables override its ports.
    #[arg(long, global = true, env = "GR_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the message bus broker.
    Bus(BusArgs),
    /// Accept capture sources and publish normalized frames.
    Gateway(GatewayArgs),
    /// Turn capture frames into robot frames under the active strategy.
    Behavior(BehaviorArgs),
    /// Play prompts and publish their lipsync frames.
    Playback(PlaybackArgs),
    /// Emit servo and blendshape commands to a robot sink.
    Renderer(RendererArgs),
    /// Serve the wizard console API on the control port.
    Harness(HarnessArgs),
    /// Generate or check a counterbalanced schedule.
    Schedule(ScheduleArgs),
    /// Descriptives and Friedman tests over session logs.
    Analyze(AnalyzeArgs),
    /// Synthetic capture source.
    Synth(SynthArgs),
    /// Record a bus topic into a gesture track.
    Record(RecordArgs),
    /// Publish a gesture track on a bus topic.
    Replay(ReplayArgs),
    /// Write a synthetic prompt library.
    Prompts(PromptsArgs),
    /// Run a scripted session under a simulated clock.
    E2e(E2eArgs),
    /// Measure the copy-condition delay under a simulated clock.
    Delay(DelayArgs),
}

#[derive(Debug, Args)]
pub struct BusTarget {
    /// Bus address; defaults to 127.0.0.1 on the configured bus port.
    #[arg(long)]
    pub bus: Option<String>,
}

#[derive(Debug, Args)]
pub struct BusArgs {
    /// Listen address; defaults to 0.0.0.0 on the configured bus port.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct GatewayArgs {
    #[command(flatten)]
    pub bus: BusTarget,
    /// Capture port; defaults to the configured one.
    #[arg(long)]
    pub listen: Option<u16>,
    /// Two-column channel mapping file.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BehaviorArgs {
    #[command(flatten)]
    pub bus: BusTarget,
    /// Directory of natural-condition gesture tracks (`<id>.jsonl`).
    #[arg(long)]
    pub tracks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlaybackArgs {
    #[command(flatten)]
    pub bus: BusTarget,
    #[arg(long)]
    pub library: PathBuf,
    /// Actor id; defaults to the library directory name.
    #[arg(long)]
    pub actor: Option<String>,
    /// External audio player run as `<player> <file>`; without it audio is
    /// only timed.
    #[arg(long)]
    pub player: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkSpec {
    /// Keep commands in memory and report counts on exit.
    Sim,
    /// Debug-level log lines.
    Log,
    Record(PathBuf),
    Net(String),
}

impl FromStr for SinkSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "sim" => Ok(SinkSpec::Sim),
            None if s == "log" => Ok(SinkSpec::Log),
            Some(("record", p)) if !p.is_empty() => Ok(SinkSpec::Record(p.into())),
            Some(("net", a)) if !a.is_empty() => Ok(SinkSpec::Net(a.to_string())),
            _ => Err(format!("unknown sink `{s}`; use sim, log, record:<file> or net:<addr>")),
        }
    }
}

impl fmt::Display for SinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SinkSpec::Sim => f.write_str("sim"),
            SinkSpec::Log => f.write_str("log"),
            SinkSpec::Record(p) => write!(f, "record:{}", p.display()),
            SinkSpec::Net(a) => write!(f, "net:{a}"),
        }
    }
}

#[derive(Debug, Args)]
pub struct RendererArgs {
    #[command(flatten)]
    pub bus: BusTarget,
    #[arg(long, default_value = "sim")]
    pub sink: SinkSpec,
    /// Stop after this many servo ticks.
    #[arg(long)]
    pub ticks: Option<u64>,
}

#[derive(Debug, Args)]
pub struct HarnessArgs {
    /// Bus address. Without it the harness runs on a private in-process bus.
    #[arg(long)]
    pub bus: Option<String>,
    #[arg(long)]
    pub schedule: PathBuf,
    /// Directory with one prompt library per actor (`<dir>/<actor_id>/`).
    /// Without it synthetic libraries are used.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Where `session_<participant>.jsonl` files go.
    #[arg(long, default_value = "logs")]
    pub logs: PathBuf,
    /// Control port; defaults to the configured one.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, short = 'n', default_value_t = 12)]
    pub participants: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate an existing schedule instead of generating one.
    #[arg(long, conflicts_with = "out")]
    pub check: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of `session_*.jsonl` logs.
    #[arg(long)]
    pub logs: PathBuf,
    /// `.md` or `.csv`; `-` prints markdown.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Bonferroni family size.
    #[arg(long, default_value_t = gesture_relay::stats::DEFAULT_FAMILY_SIZE)]
    pub m: usize,
    /// Add exact permutation p-values where feasible.
    #[arg(long)]
    pub exact: bool,
    /// Questionnaire topic file; the built-in split when absent.
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// Also write one CSV row per interaction.
    #[arg(long)]
    pub rows: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProfileKind {
    Neutral,
    Sinusoid,
    Scripted,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "sinusoid")]
    pub profile: ProfileKind,
    #[arg(long, default_value_t = 0.125)]
    pub freq: f64,
    #[arg(long, default_value = "x", value_parser = parse_axis)]
    pub axis: Axis,
    #[arg(long, default_value_t = 10.0)]
    pub amplitude: f64,
    /// Blendshape driven along with the rotation.
    #[arg(long)]
    pub channel: Option<String>,
    /// Gesture track for `--profile scripted`.
    #[arg(long, required_if_eq("profile", "scripted"))]
    pub track: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub fps: u32,
    /// Seconds; `inf` runs until interrupted.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Stream to a gateway at this address, paced in real time.
    #[arg(long, conflicts_with = "out")]
    pub connect: Option<String>,
    /// Write records to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse::<Axis>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub bus: BusTarget,
    #[arg(long, default_value = gesture_relay::bus::topics::CAPTURE_FRAMES)]
    pub topic: String,
    /// Seconds to record.
    #[arg(long)]
    pub duration: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub bus: BusTarget,
    #[arg(long, default_value = gesture_relay::bus::topics::CAPTURE_FRAMES)]
    pub topic: String,
    #[arg(long)]
    pub track: PathBuf,
    /// Publish as fast as possible instead of at recorded pace.
    #[arg(long)]
    pub burst: bool,
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub actor: String,
    #[arg(long, default_value_t = gesture_relay::playback::PROMPTS_PER_ACTOR)]
    pub count: usize,
    #[arg(long, default_value_t = 2)]
    pub variants: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct E2eArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `accept-all`, `decline-all` or `p=<probability>`.
    #[arg(long, default_value = "accept-all")]
    pub policy: ParticipantPolicy,
    /// `shuffled` or `optimal` initial ranking.
    #[arg(long, default_value = "shuffled")]
    pub ranking: InitialRanking,
    #[arg(long, default_value = "P01")]
    pub participant: String,
    #[arg(long, default_value_t = 12)]
    pub participants: usize,
    #[arg(long, default_value_t = gesture_relay::playback::PROMPTS_PER_ACTOR)]
    pub prompts_per_actor: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DelayArgs {
    #[arg(long, default_value_t = 0.125)]
    pub freq: f64,
    #[arg(long, default_value_t = 4.0)]
    pub delay: f64,
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 60)]
    pub fps: u32,
}
