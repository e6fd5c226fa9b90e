use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sirlab::diffops::ForwardKind;
use sirlab::sirloop::{Backend, SirConfig, Space};
use sirlab::tasks::TaskShape;

#[derive(Debug, Parser)]
#[command(name = "sirlab", version = crate::manifest::VERSION, about = "Score-based iterative reconstruction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct a hidden task object and write renders, traces and metrics.
    Gen(RunArgs),
    /// Run the score-distillation baseline with per-phase timings.
    Sds(SdsArgs),
    /// Sweep one config axis over several seeds.
    Ablate(AblateArgs),
    /// Extract an OBJ mesh from a saved voxel scene.
    Mesh(MeshArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForwardArg {
    Noise,
    Inversion,
    Hybrid,
}

impl From<ForwardArg> for ForwardKind {
    fn from(f: ForwardArg) -> Self {
        match f {
            ForwardArg::Noise => ForwardKind::NoiseOnly,
            ForwardArg::Inversion => ForwardKind::InversionOnly,
            ForwardArg::Hybrid => ForwardKind::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Pixel,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Flatland,
    Voxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ImageFormat {
    #[default]
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Ppm => "ppm",
        }
    }
}

/// Flags shared by the run commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub i: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub cfg: Option<f64>,
    #[arg(long, value_enum)]
    pub forward: Option<ForwardArg>,
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    #[arg(long)]
    pub mc_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Hidden task object: sphere, cross, ring or letter-block.
    #[arg(long)]
    pub shape: Option<TaskShape>,
    #[arg(long)]
    pub side: Option<usize>,
    /// Use the ascending square anneal formula as written.
    #[arg(long)]
    pub literal_square: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SirConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.i {
            cfg.i = v;
        }
        if let Some(v) = self.views {
            cfg.n_views = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.cfg {
            cfg.cfg_scale = v;
        }
        if let Some(v) = self.forward {
            cfg.forward_kind = v.into();
        }
        if let Some(v) = self.space {
            cfg.space = match v {
                SpaceArg::Pixel => Space::Pixel,
                SpaceArg::Latent => Space::Latent,
            };
        }
        if let Some(v) = self.mc_threshold {
            cfg.mc_threshold = v;
        }
        if let Some(v) = self.backend {
            cfg.task.backend = match v {
                BackendArg::Flatland => Backend::Flatland,
                BackendArg::Voxel => Backend::Voxel,
            };
        }
        if let Some(v) = self.shape {
            cfg.task.shape = v;
        }
        if let Some(v) = self.side {
            cfg.task.side = v;
        }
        if self.literal_square {
            cfg.anneal.literal_square = true;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parent of the per-run output directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub image_format: ImageFormat,
    /// Also write an OBJ mesh (voxel backend only).
    #[arg(long)]
    pub mesh: bool,
    /// Color-only refinement steps after the run.
    #[arg(long)]
    pub texture_steps: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct SdsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub updates: Option<usize>,
    /// Stop once the evaluation MSE drops to this value.
    #[arg(long)]
    pub target_mse: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Sweep file: base config, axis, values and seeds.
    pub sweep: PathBuf,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MeshArgs {
    /// Scene file written by `gen`.
    pub scene: PathBuf,
    #[arg(long)]
    pub mc_threshold: Option<f64>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}
