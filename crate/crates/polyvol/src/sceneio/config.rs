//! Structured text configuration: one `section.key = value` assignment per
//! line, `#` comments. CLI flags override file values with the same keys.
//! Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::population::PopulationConfig;
use crate::primitives::PrimitiveKind;
use crate::trainer::{Background, ExtentMode, TrainConfig};

/// Parsed key/value assignments in deterministic order.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

/// Scene-level settings that sit outside [`TrainConfig`].
#[derive(Clone, Debug)]
pub struct SceneSettings {
    pub kind: PrimitiveKind,
    pub znear: f64,
    pub resolution_divisor: usize,
}

impl Default for SceneSettings {
    fn default() -> Self {
        Self {
            kind: PrimitiveKind::Octahedron,
            znear: 0.01,
            resolution_divisor: 1,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "train.iterations",
    "train.lr_color",
    "train.lr_sh",
    "train.lr_opacity",
    "train.lr_rotation",
    "train.lr_distance",
    "train.lr_position_init",
    "train.lr_position_final",
    "train.ssim_weight",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.seed",
    "train.sh_ramp_interval",
    "train.extent_mode",
    "train.log_interval",
    "train.checkpoint_iterations",
    "render.background",
    "render.aa_2d",
    "render.kernel_2d",
    "render.aa_3d",
    "render.ray_space",
    "population.densify_interval",
    "population.densify_start",
    "population.densify_stop",
    "population.grad_threshold",
    "population.prune_opacity",
    "population.prune_world_frac",
    "population.prune_screen_px",
    "population.clone_vs_split_frac",
    "population.split_shrink",
    "population.opacity_reset_interval",
    "population.mcmc_enabled",
    "population.mcmc_cap",
    "population.mcmc_scale_align",
    "population.mcmc_dead_opacity",
    "population.mcmc_noise_lr",
    "population.smoothing_kappa",
    "scene.kind",
    "scene.znear",
    "scene.resolution_divisor",
];

impl ConfigMap {
    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected 'section.key = value', found '{line}'"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("unknown configuration key '{key}'"),
                });
            }
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }

    /// Applies `key=value` overrides (from CLI flags). Unknown keys error.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (key, value) in overrides {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown configuration key '{key}'")));
            }
            self.values.insert(key.clone(), value.clone());
        }
        Ok(())
    }

    fn get_parsed<F: std::str::FromStr>(&self, key: &str, out: &mut F) -> Result<()> {
        if let Some(v) = self.values.get(key) {
            *out = v
                .parse::<F>()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))?;
        }
        Ok(())
    }

    fn get_bool(&self, key: &str, out: &mut bool) -> Result<()> {
        if let Some(v) = self.values.get(key) {
            *out = match v.as_str() {
                "true" | "1" | "on" => true,
                "false" | "0" | "off" => false,
                other => {
                    return Err(Error::Config(format!(
                        "invalid boolean '{other}' for '{key}'"
                    )))
                }
            };
        }
        Ok(())
    }

    /// Builds the training configuration and scene settings, starting from
    /// defaults and applying every assignment.
    pub fn build(&self) -> Result<(TrainConfig, SceneSettings)> {
        let mut c = TrainConfig::default();
        let mut s = SceneSettings::default();
        self.get_parsed("train.iterations", &mut c.iterations)?;
        self.get_parsed("train.lr_color", &mut c.lr_color)?;
        self.get_parsed("train.lr_sh", &mut c.lr_sh)?;
        self.get_parsed("train.lr_opacity", &mut c.lr_opacity)?;
        self.get_parsed("train.lr_rotation", &mut c.lr_rotation)?;
        self.get_parsed("train.lr_distance", &mut c.lr_distance)?;
        self.get_parsed("train.lr_position_init", &mut c.lr_position_init)?;
        self.get_parsed("train.lr_position_final", &mut c.lr_position_final)?;
        self.get_parsed("train.ssim_weight", &mut c.ssim_weight)?;
        self.get_parsed("train.adam_beta1", &mut c.adam_beta1)?;
        self.get_parsed("train.adam_beta2", &mut c.adam_beta2)?;
        self.get_parsed("train.adam_eps", &mut c.adam_eps)?;
        self.get_parsed("train.seed", &mut c.seed)?;
        self.get_parsed("train.sh_ramp_interval", &mut c.sh_ramp_interval)?;
        self.get_parsed("train.log_interval", &mut c.log_interval)?;
        if let Some(v) = self.values.get("train.extent_mode") {
            c.extent_mode = match v.as_str() {
                "camera_to_mean" => ExtentMode::CameraToMean,
                "max_pairwise" => ExtentMode::MaxPairwise,
                other => {
                    return Err(Error::Config(format!("unknown extent mode '{other}'")))
                }
            };
        }
        if let Some(v) = self.values.get("train.checkpoint_iterations") {
            c.checkpoint_iterations = v
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("invalid iteration list '{v}'")))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(v) = self.values.get("render.background") {
            c.background = match v.as_str() {
                "black" => Background::Black,
                "white" => Background::White,
                other => return Err(Error::Config(format!("unknown background '{other}'"))),
            };
        }
        self.get_bool("render.aa_2d", &mut c.aa_2d)?;
        self.get_parsed("render.kernel_2d", &mut c.kernel_2d)?;
        self.get_bool("render.aa_3d", &mut c.aa_3d)?;
        self.get_bool("render.ray_space", &mut c.ray_space)?;

        let p: &mut PopulationConfig = &mut c.population;
        self.get_parsed("population.densify_interval", &mut p.densify_interval)?;
        self.get_parsed("population.densify_start", &mut p.densify_start)?;
        self.get_parsed("population.densify_stop", &mut p.densify_stop)?;
        self.get_parsed("population.grad_threshold", &mut p.grad_threshold)?;
        self.get_parsed("population.prune_opacity", &mut p.prune_opacity)?;
        self.get_parsed("population.prune_world_frac", &mut p.prune_world_frac)?;
        self.get_parsed("population.prune_screen_px", &mut p.prune_screen_px)?;
        self.get_parsed("population.clone_vs_split_frac", &mut p.clone_vs_split_frac)?;
        self.get_parsed("population.split_shrink", &mut p.split_shrink)?;
        self.get_parsed(
            "population.opacity_reset_interval",
            &mut p.opacity_reset_interval,
        )?;
        self.get_bool("population.mcmc_enabled", &mut p.mcmc_enabled)?;
        self.get_parsed("population.mcmc_cap", &mut p.mcmc_cap)?;
        self.get_parsed("population.mcmc_scale_align", &mut p.mcmc_scale_align)?;
        self.get_parsed("population.mcmc_dead_opacity", &mut p.mcmc_dead_opacity)?;
        self.get_parsed("population.mcmc_noise_lr", &mut p.mcmc_noise_lr)?;
        self.get_parsed("population.smoothing_kappa", &mut p.smoothing_kappa)?;

        if let Some(v) = self.values.get("scene.kind") {
            s.kind = PrimitiveKind::from_name(v)
                .ok_or_else(|| Error::Config(format!("unknown primitive kind '{v}'")))?;
        }
        self.get_parsed("scene.znear", &mut s.znear)?;
        self.get_parsed("scene.resolution_divisor", &mut s.resolution_divisor)?;
        Ok((c, s))
    }

    /// Canonical text: sorted `key = value` lines. Identical settings hash
    /// identically across runs.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Short hex digest of the canonical text, embedded in checkpoints.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        hex_prefix(&digest, 8)
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes
        .iter()
        .take(n)
        .map(|b| format!("{b:02x}"))
        .collect::<Vec<_>>()
        .join("")
}
