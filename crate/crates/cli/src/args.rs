//! Flag definitions. Every flag is shorthand for one config key.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::UsageError;

#[derive(Parser, Debug)]
#[command(name = "netscope", version, about = "Receptive-field and preferred-stimulus analysis for ResNets and PlainNets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file (`key = value` lines with `[section]` headers).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory; every file the run writes goes here.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to NETSCOPE_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Single worker thread.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "data-dir")]
    pub data_dir: Option<PathBuf>,
    /// Dataset source: ppm, cifar10 or synthetic.
    #[arg(long)]
    pub source: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network with SGD and step decay.
    Train(TrainArgs),
    /// Loss and top-1 accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Receptive-field geometry table or a single projection.
    Rf(RfArgs),
    /// Top-K preferred stimuli per channel.
    Scan(MineArgs),
    /// Mean preferred stimulus per channel.
    Meanstim(MineArgs),
    /// Virtual filters of a second convolution.
    Vfilter(VfilterArgs),
    /// Activation maximisation per channel.
    Actmax(ActmaxArgs),
    /// Channels that never activate on a dataset.
    Inactive(ProbeArgs),
    /// Validation loss with noise injected into inactive channels.
    Noise(NoiseArgs),
    /// Convert checkpoints to and from the raw interchange format.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// resnet or plain.
    #[arg(long)]
    pub family: Option<String>,
    /// resnet34 or scaled.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RfArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub layer: Option<String>,
    /// Neuron `i,j` to project into the input.
    #[arg(long)]
    pub neuron: Option<String>,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub layer: Option<String>,
    /// center or max_spatial.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated channel list (default: all).
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub topk: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VfilterArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub w1: Option<String>,
    #[arg(long)]
    pub w2: Option<String>,
    #[arg(long)]
    pub channels: Option<String>,
    /// signed or magnitude.
    #[arg(long)]
    pub order: Option<String>,
}

#[derive(Args, Debug)]
pub struct ActmaxArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub channels: Option<String>,
    /// neuron or channel.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "weight-decay")]
    pub weight_decay: Option<f64>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub layer: Option<String>,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub layer: Option<String>,
    /// all or random_one.
    #[arg(long)]
    pub mode: Option<String>,
    /// inactive.json from a previous `inactive` run.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// raw (checkpoint to manifest + blob) or nsck (back).
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub blob: Option<PathBuf>,
}

#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn put(&mut self, key: &str, v: Option<impl ToString>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        self.put(key, v.as_ref().map(|p| p.display()));
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Rf(_) => "rf",
            Command::Scan(_) => "scan",
            Command::Meanstim(_) => "meanstim",
            Command::Vfilter(_) => "vfilter",
            Command::Actmax(_) => "actmax",
            Command::Inactive(_) => "inactive",
            Command::Noise(_) => "noise",
            Command::Export(_) => "export",
        }
    }

    /// Config sections the command reads besides `run`, `model`, `data`.
    pub fn sections(&self) -> &'static [&'static str] {
        match self {
            Command::Train(_) => &["train"],
            Command::Eval(_) => &["eval"],
            Command::Rf(_) => &["rf"],
            Command::Scan(_) | Command::Meanstim(_) => &["mine"],
            Command::Vfilter(_) => &["vfilter"],
            Command::Actmax(_) => &["actmax"],
            Command::Inactive(_) => &["probe"],
            Command::Noise(_) => &["probe", "noise"],
            Command::Export(_) => &["export"],
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Rf(a) => &a.common,
            Command::Scan(a) | Command::Meanstim(a) => &a.common,
            Command::Vfilter(a) => &a.common,
            Command::Actmax(a) => &a.common,
            Command::Inactive(a) => &a.common,
            Command::Noise(a) => &a.common,
            Command::Export(a) => &a.common,
        }
    }

    fn flag_overrides(&self) -> Vec<(String, String)> {
        let mut o = Overrides::default();
        let c = self.common();
        o.put("run.seed", c.seed);
        o.put("run.threads", c.threads);
        if c.deterministic {
            o.put("run.deterministic", Some(true));
        }
        o.path("model.checkpoint", &c.checkpoint);
        o.path("data.dir", &c.data_dir);
        o.put("data.source", c.source.as_ref());
        match self {
            Command::Train(a) => {
                o.put("model.family", a.family.as_ref());
                o.put("model.preset", a.preset.as_ref());
                o.put("train.epochs", a.epochs);
                o.put("train.batch", a.batch);
                o.put("train.lr0", a.lr);
                o.path("train.resume", &a.resume);
            }
            Command::Eval(a) => o.put("eval.batch", a.batch),
            Command::Rf(a) => {
                o.put("model.preset", a.preset.as_ref());
                o.put("rf.layer", a.layer.as_ref());
                o.put("rf.neuron", a.neuron.as_ref());
            }
            Command::Scan(a) | Command::Meanstim(a) => {
                o.put("mine.layer", a.layer.as_ref());
                o.put("mine.mode", a.mode.as_ref());
                o.put("mine.channels", a.channels.as_ref());
                o.put("mine.topk", a.topk);
            }
            Command::Vfilter(a) => {
                o.put("vfilter.w1", a.w1.as_ref());
                o.put("vfilter.w2", a.w2.as_ref());
                o.put("vfilter.channels", a.channels.as_ref());
                o.put("vfilter.order", a.order.as_ref());
            }
            Command::Actmax(a) => {
                o.put("actmax.layer", a.layer.as_ref());
                o.put("actmax.channels", a.channels.as_ref());
                o.put("actmax.mode", a.mode.as_ref());
                o.put("actmax.steps", a.steps);
                o.put("actmax.lr", a.lr);
                o.put("actmax.weight_decay", a.weight_decay);
                o.put("run.precision", a.precision.as_ref());
            }
            Command::Inactive(a) => o.put("probe.layer", a.layer.as_ref()),
            Command::Noise(a) => {
                o.put("probe.layer", a.layer.as_ref());
                o.put("noise.mode", a.mode.as_ref());
                o.path("noise.report", &a.report);
            }
            Command::Export(a) => {
                o.put("export.to", a.to.as_ref());
                o.path("export.manifest", &a.manifest);
                o.path("export.blob", &a.blob);
            }
        }
        o.0
    }

    /// Defaults, then the config file, then `--set`, then flags.
    pub fn run_config(&self) -> Result<RunConfig> {
        let c = self.common();
        let file = match &c.config {
            Some(p) => RunConfig::load_file(p)?,
            None => Vec::new(),
        };
        let mut set = Vec::new();
        for s in &c.set {
            match s.split_once('=') {
                Some((k, v)) => set.push((k.trim().to_string(), v.trim().to_string())),
                None => bail!(UsageError(format!("--set expects KEY=VALUE, got `{s}`"))),
            }
        }
        let out = c
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("netscope-out").join(self.name()));
        RunConfig::build(self.name(), out, &[file, set, self.flag_overrides()])
    }
}
