use serde::{Deserialize, Serialize};

use crate::diffops::ForwardKind;
use crate::error::{invalid, Result};
use crate::schedule::{AnnealKind, AnnealPlan, T1Rule};
use crate::scoremodel::JitterSpec;
use crate::tasks::TaskShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LossNorm {
    L1,
    L2,
}

/// Where the reconstruction loss (or the SDS residual) is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Space {
    Pixel,
    Latent,
}

impl std::str::FromStr for Space {
    type Err = crate::SirError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "latent" => Ok(Self::Latent),
            other => Err(invalid(format!("unknown space '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Backend {
    Flatland,
    Voxel,
}

impl std::str::FromStr for Backend {
    type Err = crate::SirError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatland" => Ok(Self::Flatland),
            "voxel" => Ok(Self::Voxel),
            other => Err(invalid(format!("unknown backend '{other}'"))),
        }
    }
}

/// The hidden object and the oracle model built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct TaskConfig {
    pub backend: Backend,
    pub shape: TaskShape,
    pub side: usize,
    /// Size of the condition-view table the score model knows.
    pub condition_views: usize,
    pub jitter: JitterSpec,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Flatland,
            shape: TaskShape::LetterBlock,
            side: 32,
            condition_views: 24,
            jitter: JitterSpec::default(),
        }
    }
}

/// Baseline score-distillation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SdsConfig {
    pub updates: usize,
    /// Timestep range as fractions of `T`.
    pub t_min: f64,
    pub t_max: f64,
    pub views_per_update: usize,
    pub learning_rate: Option<f64>,
    /// Stop once the evaluation MSE drops to this value.
    pub target_mse: Option<f64>,
    /// Evaluate every this many updates (0: only at the end).
    pub eval_every: usize,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self {
            updates: 2000,
            t_min: 0.2,
            t_max: 0.8,
            views_per_update: 1,
            learning_rate: None,
            target_mse: None,
            eval_every: 50,
        }
    }
}

/// Everything a run needs; JSON keys are camelCase and every field has a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SirConfig {
    /// Outer iterations `K`.
    pub k: usize,
    /// Reconstruction steps per outer iteration `I`.
    pub i: usize,
    pub n_views: usize,
    pub anneal: AnnealPlan,
    pub eta: f64,
    pub ladder_steps: usize,
    pub cfg_scale: f64,
    pub forward_kind: ForwardKind,
    pub loss_norm: LossNorm,
    pub ref_color_weight: f64,
    pub ref_opacity_weight: f64,
    pub init_steps: usize,
    /// Adam step size; `None` picks the backend default.
    pub learning_rate: Option<f64>,
    /// Step size at the last outer iteration relative to the first; the
    /// rate is interpolated linearly in between.
    pub lr_final_ratio: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub space: Space,
    /// Run the diffusion model on codec latents. Implied by latent space.
    pub codec: bool,
    pub codec_compression: usize,
    pub seed: u64,
    pub task: TaskConfig,
    pub sds: SdsConfig,
    /// Grid sides of a coarse-to-fine run, ascending, each dividing the
    /// next and ending at `task.side`. Empty runs at `task.side` only.
    pub coarse_to_fine: Vec<usize>,
    /// Color-only refinement steps after the last outer iteration.
    pub texture_refine_steps: usize,
    /// Write an OBJ of the voxel result.
    pub export_mesh: bool,
    pub mc_threshold: f64,
}

impl Default for SirConfig {
    fn default() -> Self {
        Self {
            k: 30,
            i: 15,
            n_views: 4,
            anneal: AnnealPlan::linear(0.8, 0.2, T1Rule::Ratio(0.6)),
            eta: 0.5,
            ladder_steps: 20,
            cfg_scale: 3.0,
            forward_kind: ForwardKind::Hybrid,
            loss_norm: LossNorm::L1,
            ref_color_weight: 0.0,
            ref_opacity_weight: 0.0,
            init_steps: 15,
            learning_rate: None,
            lr_final_ratio: 1.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            space: Space::Pixel,
            codec: false,
            codec_compression: 4,
            seed: 0,
            task: TaskConfig::default(),
            sds: SdsConfig::default(),
            coarse_to_fine: Vec::new(),
            texture_refine_steps: 0,
            export_mesh: false,
            mc_threshold: crate::meshx::DEFAULT_THRESHOLD,
        }
    }
}

impl SirConfig {
    /// Image-to-3D settings of the Stable Zero123 NeRF track.
    pub fn stable123_like() -> Self {
        Self {
            ref_color_weight: 0.1,
            ref_opacity_weight: 0.001,
            ..Self::default()
        }
    }

    /// Text-to-3D settings of the MVDream track.
    pub fn mvdream_like() -> Self {
        Self {
            k: 50,
            anneal: AnnealPlan::linear(0.8, 0.5, T1Rule::SquareOverT),
            eta: 0.0,
            ladder_steps: 50,
            cfg_scale: 7.5,
            init_steps: 50,
            ..Self::default()
        }
    }

    /// Image-to-3D settings of the ImageDream NeRF track.
    pub fn imagedream_like() -> Self {
        Self {
            anneal: AnnealPlan::linear(0.8, 0.6, T1Rule::SquareOverT),
            eta: 1.0,
            ladder_steps: 10,
            init_steps: 50,
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| crate::SirError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn uses_codec(&self) -> bool {
        self.codec || self.space == Space::Latent
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.task.backend {
            Backend::Flatland => 0.1,
            Backend::Voxel => 0.03,
        })
    }

    /// Step size used during outer iteration `k`.
    pub fn lr_at(&self, k: usize) -> f64 {
        let base = self.learning_rate();
        if self.k <= 1 {
            return base;
        }
        let frac = k as f64 / (self.k - 1) as f64;
        base * (1.0 + (self.lr_final_ratio - 1.0) * frac)
    }

    /// Predictor calls per evaluation under the configured guidance.
    pub fn nfe_per_call(&self) -> u64 {
        if self.cfg_scale == 1.0 {
            1
        } else {
            2
        }
    }

    /// Grid sides the run visits, coarsest first.
    pub fn stage_sides(&self) -> Vec<usize> {
        if self.coarse_to_fine.is_empty() {
            vec![self.task.side]
        } else {
            self.coarse_to_fine.clone()
        }
    }

    /// First outer iteration of each stage; stages split `K` evenly.
    pub fn stage_starts(&self) -> Vec<usize> {
        let n = self.stage_sides().len();
        (0..n).map(|s| s * self.k / n).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == 0 {
            return Err(invalid("reconstruction steps I must be >= 1"));
        }
        if self.n_views == 0 {
            return Err(invalid("n_views must be >= 1"));
        }
        if self.ladder_steps == 0 {
            return Err(invalid("ladder_steps must be >= 1"));
        }
        self.anneal.validate()?;
        if self.anneal.kind == AnnealKind::Square && self.anneal.literal_square && self.k > 0 {
            log::warn!("literal square schedule ascends with k");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.cfg_scale >= 0.0) {
            return Err(invalid(format!("cfg scale must be >= 0, got {}", self.cfg_scale)));
        }
        if !(self.ref_color_weight >= 0.0 && self.ref_opacity_weight >= 0.0) {
            return Err(invalid("reference loss weights must be >= 0"));
        }
        if !(self.learning_rate() > 0.0) || !(self.lr_final_ratio > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.adam_eps > 0.0) {
            return Err(invalid("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if self.task.side < 2 {
            return Err(invalid("scene side must be >= 2"));
        }
        if self.task.condition_views == 0 {
            return Err(invalid("condition table must not be empty"));
        }
        let s = &self.sds;
        if !(0.0 < s.t_min && s.t_min <= s.t_max && s.t_max <= 1.0) {
            return Err(invalid(format!(
                "sds time range must satisfy 0 < min <= max <= 1, got [{}, {}]",
                s.t_min, s.t_max
            )));
        }
        if s.views_per_update == 0 {
            return Err(invalid("sds needs at least one view per update"));
        }
        if !self.coarse_to_fine.is_empty() {
            let sides = &self.coarse_to_fine;
            if sides.last() != Some(&self.task.side) {
                return Err(invalid("coarse-to-fine sides must end at the task side"));
            }
            if sides[0] < 2 || sides.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
                return Err(invalid("coarse-to-fine sides must ascend and divide each other"));
            }
        }
        if !self.mc_threshold.is_finite() {
            return Err(invalid("marching cubes threshold must be finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = SirConfig::stable123_like();
        let back = SirConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg = SirConfig::from_json(r#"{"k": 5, "nViews": 6, "forwardKind": "noise"}"#).unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.n_views, 6);
        assert_eq!(cfg.forward_kind, ForwardKind::NoiseOnly);
        assert_eq!(cfg.i, 15);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(SirConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(SirConfig::from_json(r#"{"i": 0}"#).is_err());
        assert!(SirConfig::from_json(r#"{"nViews": 0}"#).is_err());
    }

    #[test]
    fn coarse_to_fine_stages() {
        let mut cfg = SirConfig::default();
        assert_eq!(cfg.stage_sides(), vec![32]);
        assert_eq!(cfg.stage_starts(), vec![0]);
        cfg.coarse_to_fine = vec![8, 16, 32];
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_starts(), vec![0, 10, 20]);
        cfg.coarse_to_fine = vec![12, 32];
        assert!(cfg.validate().is_err());
        cfg.coarse_to_fine = vec![8, 16];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn backend_learning_rates() {
        let mut cfg = SirConfig::default();
        assert_eq!(cfg.learning_rate(), 0.1);
        cfg.task.backend = Backend::Voxel;
        assert_eq!(cfg.learning_rate(), 0.03);
        cfg.lr_final_ratio = 0.5;
        assert!((cfg.lr_at(cfg.k - 1) - 0.015).abs() < 1e-15);
    }
}
