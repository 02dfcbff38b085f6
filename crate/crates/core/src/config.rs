//! Pipeline configuration: TOML files layered under dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::addition::AdditionConfig;
use crate::error::{Error, Result};
use crate::ntc::{HashGridConfig, NtcConfig};
use crate::optim::{AdamConfig, GaussianLrs};
use crate::train::RenderSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Frame0Config {
    pub iterations: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    /// Average view-space gradient above which a Gaussian is cloned or split.
    pub densify_grad_threshold: f64,
    /// Clone below, split above this fraction of the scene extent.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
    /// Initial opacity of Gaussians created from the point set.
    pub init_opacity: f64,
    /// Mean learning rate is `lrs.mean × extent`, decaying log-linearly to
    /// `lrs.mean × extent × mean_lr_final_ratio`.
    pub mean_lr_final_ratio: f64,
    pub lrs: GaussianLrs,
}

impl Default for Frame0Config {
    fn default() -> Self {
        Frame0Config {
            iterations: 1500,
            densify_from: 100,
            densify_until: 1000,
            densify_interval: 100,
            densify_grad_threshold: 0.0002,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 20_000,
            init_opacity: 0.1,
            mean_lr_final_ratio: 0.01,
            lrs: GaussianLrs {
                mean: 0.00016,
                sh: 0.0025,
                opacity: 0.05,
                scale: 0.005,
                rotation: 0.001,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NtcSettings {
    pub levels: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
    pub base_resolution: usize,
    pub finest_resolution: usize,
    pub hidden: Vec<usize>,
    /// Explicit bounding box; otherwise taken from the dataset or fitted to
    /// the frame-0 cloud.
    pub aabb_min: Option<[f64; 3]>,
    pub aabb_max: Option<[f64; 3]>,
    /// Padding added on each side of a fitted box, as a fraction of its size.
    pub aabb_margin: f64,
}

impl Default for NtcSettings {
    fn default() -> Self {
        NtcSettings {
            levels: 16,
            features_per_level: 4,
            table_size_log2: 15,
            base_resolution: 16,
            finest_resolution: 512,
            hidden: vec![64, 64],
            aabb_min: None,
            aabb_max: None,
            aabb_margin: 0.25,
        }
    }
}

impl NtcSettings {
    /// Reduced grid for desk-scale runs: 8 levels of 2 features, 2¹² slots.
    pub fn desk() -> Self {
        NtcSettings {
            levels: 8,
            features_per_level: 2,
            table_size_log2: 12,
            ..Self::default()
        }
    }

    pub fn build(&self, aabb_min: [f64; 3], aabb_max: [f64; 3]) -> Result<NtcConfig> {
        let cfg = NtcConfig {
            grid: HashGridConfig::with_finest_resolution(
                self.levels,
                self.features_per_level,
                self.table_size_log2,
                self.base_resolution,
                self.finest_resolution,
                aabb_min,
                aabb_max,
            ),
            hidden: self.hidden.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub warmup_iterations: usize,
    pub ntc_lr: f64,
    pub rotate_sh: bool,
    pub adam: AdamConfig,
    pub frame0: Frame0Config,
    pub ntc: NtcSettings,
    pub addition: AdditionConfig,
    pub render: RenderSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            stage1_iterations: 150,
            stage2_iterations: 100,
            warmup_iterations: 500,
            ntc_lr: 0.002,
            rotate_sh: true,
            adam: AdamConfig::default(),
            frame0: Frame0Config::default(),
            ntc: NtcSettings::default(),
            addition: AdditionConfig::default(),
            render: RenderSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Settings for small synthetic scenes: the reduced hash grid, and a
    /// frame-0 densification threshold raised to offset the larger gradient
    /// noise of low-resolution images.
    pub fn desk() -> Self {
        let mut c = PipelineConfig {
            ntc: NtcSettings::desk(),
            ..Default::default()
        };
        c.frame0.densify_grad_threshold = 0.0006;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.addition.validate()?;
        self.render.loss.validate()?;
        let r = &self.render.raster;
        if r.tile_size == 0 || !(r.alpha_max > 0.0 && r.alpha_max <= 1.0) || !(r.sigma_extent > 0.0) {
            return Err(Error::Config("render.raster values out of range".into()));
        }
        if !(self.ntc_lr > 0.0) {
            return Err(Error::Config("ntc_lr must be positive".into()));
        }
        if self.ntc.aabb_min.is_some() != self.ntc.aabb_max.is_some() {
            return Err(Error::Config(
                "ntc.aabb_min and ntc.aabb_max must be given together".into(),
            ));
        }
        if self.frame0.densify_interval == 0 {
            return Err(Error::Config("frame0.densify_interval must be positive".into()));
        }
        self.ntc.build([-1.0; 3], [1.0; 3])?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every settable dotted key.
    pub fn keys() -> Vec<String> {
        let v = toml::Value::try_from(PipelineConfig::default()).expect("config serializes");
        let mut out = Vec::new();
        collect_keys(&v, String::new(), &mut out);
        // optional keys are absent from the serialized default
        out.push("ntc.aabb_min".into());
        out.push("ntc.aabb_max".into());
        out.sort();
        out
    }

    /// Applies `key=value` overrides. Values are parsed as TOML (`0.5`,
    /// `true`, `[1, 2]`) and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let keys = Self::keys();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            if !keys.iter().any(|k| k == key) {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; valid keys: {}",
                    keys.join(", ")
                )));
            }
            let value = parse_value(raw.trim());
            let mut node = &mut root;
            let parts: Vec<&str> = key.split('.').collect();
            for p in &parts[..parts.len() - 1] {
                node = node
                    .as_table_mut()
                    .and_then(|t| t.get_mut(*p))
                    .ok_or_else(|| Error::Config(format!("bad key {key}")))?;
            }
            node.as_table_mut()
                .ok_or_else(|| Error::Config(format!("bad key {key}")))?
                .insert(parts[parts.len() - 1].to_string(), value);
        }
        let cfg: PipelineConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn collect_keys(v: &toml::Value, prefix: String, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_keys(v, p, out);
            }
        }
        _ => out.push(prefix),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = PipelineConfig::default();
        let s = c.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&s).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_apply_and_unknown_keys_list_valid_ones() {
        let c = PipelineConfig::default()
            .with_overrides(&[
                "stage1_iterations=250",
                "addition.tau_grad = 2e-4",
                "ntc.aabb_min=[-1, -1, -1]",
                "ntc.hidden=[32]",
            ])
            .unwrap();
        assert_eq!(c.stage1_iterations, 250);
        assert_eq!(c.addition.tau_grad, 2e-4);
        assert_eq!(c.ntc.aabb_min, Some([-1.0; 3]));
        assert_eq!(c.ntc.hidden, vec![32]);
        let e = PipelineConfig::default()
            .with_overrides(&["stage3_iterations=1"])
            .unwrap_err();
        let msg = e.to_string();
        assert!(
            msg.contains("stage3_iterations")
                && msg.contains("stage1_iterations")
                && msg.contains("addition.tau_alpha")
        );
        assert!(PipelineConfig::default().with_overrides(&["seed"]).is_err());
        assert!(PipelineConfig::default().with_overrides(&["seed=abc"]).is_err());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("stage1_iterations = 3\nbogus = 1\n").is_err());
        let partial = PipelineConfig::from_toml_str("[addition]\ntau_alpha = 0.02\n").unwrap();
        assert_eq!(partial.addition.tau_alpha, 0.02);
        assert_eq!(partial.stage2_iterations, 100);
    }
}
