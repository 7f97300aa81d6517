use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use objcomp::diffusion::{DEFAULT_CFG_SCALE, DEFAULT_STEPS};

#[derive(Debug, Parser)]
#[command(name = "objcomp", version, about = "Generative object compositing: data, training, sampling and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic multi-view and scene dataset to a directory.
    Datagen(DatagenArgs),
    /// Identity pretraining of the encoder on view pairs.
    TrainStage1(Stage1Args),
    /// Compositing training from a stage-1 encoder checkpoint.
    TrainStage2(Stage2Args),
    /// Composite one object into one background.
    Compose(ComposeArgs),
    /// Score composites against held-out targets (similarity and FID).
    Evaluate(EvaluateArgs),
    /// Silhouette and 2-D layout of encoder embeddings per object.
    Cluster(ClusterArgs),
    /// Serve compositing over HTTP under /v1.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub objects: usize,
    /// Views per object in the multi-view set.
    #[arg(long, default_value_t = 12)]
    pub views: usize,
    /// Frames per scene sequence; 0 skips scenes.
    #[arg(long, default_value_t = 12)]
    pub frames: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Stage1Args {
    /// Experiment TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Stage2Args {
    /// Experiment TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this stage-2 checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stage-1 checkpoint providing the encoder (required unless resuming).
    #[arg(long)]
    pub encoder_ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Trained stage-2 checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub background: PathBuf,
    /// Segmented object; black pixels count as empty unless --object-mask is set.
    #[arg(long)]
    pub object: PathBuf,
    #[arg(long)]
    pub object_mask: Option<PathBuf>,
    /// Placement mask at background resolution.
    #[arg(long)]
    pub mask: PathBuf,
    /// Coarsen the mask to this level (1..4) before sampling.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub mask_level: Option<u8>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_CFG_SCALE)]
    pub cfg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; a synthetic set at the model resolution when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the synthesized set when --data is absent.
    #[arg(long, default_value_t = 1000)]
    pub data_seed: u64,
    /// Number of test tuples.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_CFG_SCALE)]
    pub cfg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 15.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `label x y` projection output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}
