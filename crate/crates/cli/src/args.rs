use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvcont_core::api::ConfigRequest;
use mvcont_core::harness::{parse_daa, ConfigOverrides, ReportStyle, SweepGrid};

#[derive(Debug, Parser)]
#[command(name = "mvcont", version, about = "Online continual learning experiments over the mvcont service")]
pub struct Cli {
    /// Service URL. Without it an in-process service is started for the command.
    #[arg(long, global = true, env = "MVCONT_SERVER")]
    pub server: Option<String>,
    /// Print full JSON results instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one configuration over its seeds.
    Run(RunArgs),
    /// Run the cross product of a parameter grid.
    Sweep(SweepArgs),
    /// Re-evaluate saved encoder and memory checkpoints.
    Eval(EvalArgs),
    /// Assemble a markdown table from stored metrics records.
    Report(ReportArgs),
    /// Host the HTTP service.
    Serve(ServeArgs),
}

fn daa_arg(s: &str) -> Result<[usize; 3], String> {
    parse_daa(s).map_err(|e| e.to_string())
}

#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML file of config keys; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named starting point: ours-7-1-0-0-0, ours-4-1-1-1-1 or simclr-er.
    #[arg(long)]
    pub preset: Option<String>,
    /// cifar10, cifar100 or image-folder.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// Number of tasks K.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Replay memory capacity M.
    #[arg(long)]
    pub memory_size: Option<usize>,
    #[arg(long)]
    pub stream_batch_size: Option<usize>,
    /// Memory batch size |B_m|.
    #[arg(long)]
    pub mem_batch_size: Option<usize>,
    /// Memory iterations q per stream batch.
    #[arg(long)]
    pub mem_iters: Option<usize>,
    /// Standard views p per source.
    #[arg(long)]
    pub views: Option<usize>,
    /// DAM,DAC,DAS view counts, e.g. 1,1,1.
    #[arg(long, value_parser = daa_arg)]
    pub daa: Option<[usize; 3]>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated seeds.
    #[arg(long, alias = "seed", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Small CNN encoder with a per-class training subsample.
    #[arg(long)]
    pub desk_scale: bool,
    /// Training images kept per class.
    #[arg(long)]
    pub per_class_subsample: Option<usize>,
    /// Pretrained style-transfer weights (safetensors).
    #[arg(long)]
    pub style_model: Option<PathBuf>,
    /// Use channel-statistics transfer for DAS views when no style model is given.
    #[arg(long)]
    pub style_fallback: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            dataset: self.dataset.clone(),
            data_path: self.data_path.clone(),
            tasks: self.tasks,
            memory_size: self.memory_size,
            stream_batch_size: self.stream_batch_size,
            mem_batch_size: self.mem_batch_size,
            mem_iters: self.mem_iters,
            views: self.views,
            daa: self.daa,
            temperature: self.temperature,
            lr: self.lr,
            seeds: self.seeds.clone(),
            out: self.out.as_ref().map(absolute),
            desk_scale: self.desk_scale.then_some(true),
            per_class_subsample: self.per_class_subsample,
            style_model: self.style_model.as_ref().map(absolute),
            style_fallback: self.style_fallback.then_some(true),
            ..ConfigOverrides::default()
        }
    }

    pub fn request(&self) -> anyhow::Result<ConfigRequest> {
        let toml = match &self.config {
            Some(path) => Some(
                std::fs::read_to_string(path)
                    .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?,
            ),
            None => None,
        };
        let mut overrides = self.overrides();
        overrides.data_path = overrides.data_path.map(|p| absolute(&p));
        Ok(ConfigRequest {
            preset: self.preset.clone(),
            toml,
            overrides,
        })
    }
}

/// Paths go to a service that may run elsewhere on this host.
pub fn absolute(path: &PathBuf) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.clone())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// TOML grid with any of mem_batch_size, mem_iters, views, daa, memory_size.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_mem_batch_size: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_mem_iters: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_views: Vec<usize>,
    /// Repeatable DAM,DAC,DAS triples.
    #[arg(long, value_parser = daa_arg)]
    pub sweep_daa: Vec<[usize; 3]>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_memory_size: Vec<usize>,
}

impl SweepArgs {
    pub fn grid(&self) -> anyhow::Result<SweepGrid> {
        let mut grid: SweepGrid = match &self.grid {
            Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
            None => SweepGrid::default(),
        };
        let replace = |axis: &mut Vec<usize>, flag: &[usize]| {
            if !flag.is_empty() {
                *axis = flag.to_vec();
            }
        };
        replace(&mut grid.mem_batch_size, &self.sweep_mem_batch_size);
        replace(&mut grid.mem_iters, &self.sweep_mem_iters);
        replace(&mut grid.views, &self.sweep_views);
        replace(&mut grid.memory_size, &self.sweep_memory_size);
        if !self.sweep_daa.is_empty() {
            grid.daa = self.sweep_daa.clone();
        }
        Ok(grid)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub memory: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StyleArg {
    /// Final AA against |B_m|, q and p.
    MemoryUsage,
    /// Method rows against dataset and memory-size columns.
    Methods,
}

impl From<StyleArg> for ReportStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::MemoryUsage => ReportStyle::MemoryUsage,
            StyleArg::Methods => ReportStyle::Methods,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.jsonl, or the output directory holding it.
    #[arg(long, default_value = "runs")]
    pub metrics: PathBuf,
    #[arg(long, value_enum, default_value = "memory-usage")]
    pub style: StyleArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub bind: String,
    /// Jobs allowed to run at once.
    #[arg(long, default_value_t = 1)]
    pub max_jobs: usize,
}
