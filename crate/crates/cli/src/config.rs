//! Detector configuration layering: base values, then `--config`, then
//! `WSOD_*` environment variables, then command-line flags.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use wsod::pipeline::TrainConfig;

pub const ENV_PREFIX: &str = "WSOD_";

#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` file; every config field is addressable.
    #[arg(long = "config")]
    pub file: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of refinement heads.
    #[arg(long, short = 'k')]
    pub refinements: Option<usize>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub oicr_iou: Option<f64>,
    /// Comma-separated shorter-side sizes.
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub max_proposals: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    #[arg(long)]
    pub flip: Option<bool>,
    #[arg(long)]
    pub confidence_floor: Option<f64>,
    /// `mean` over refinement heads or `last` head only.
    #[arg(long)]
    pub inference: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("lr", self.lr.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("refinements", self.refinements.map(|v| v.to_string()));
        push("nms_iou", self.nms_iou.map(|v| v.to_string()));
        push("oicr_iou", self.oicr_iou.map(|v| v.to_string()));
        push("scales", self.scales.clone());
        push("max_proposals", self.max_proposals.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("steps", self.steps.map(|v| v.to_string()));
        push("eval_interval", self.eval_interval.map(|v| v.to_string()));
        push("flip", self.flip.map(|v| v.to_string()));
        push("confidence_floor", self.confidence_floor.map(|v| v.to_string()));
        push("inference", self.inference.clone());
        out
    }
}

pub fn layered_config(base: TrainConfig, args: &ConfigArgs) -> Result<TrainConfig> {
    layered_config_with_env(base, args, std::env::vars())
}

pub fn layered_config_with_env(
    mut config: TrainConfig,
    args: &ConfigArgs,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<TrainConfig> {
    if let Some(p) = &args.file {
        config.apply_file(p).with_context(|| format!("reading config {}", p.display()))?;
    }
    config.apply_env(ENV_PREFIX, env).context("applying environment overrides")?;
    for (k, v) in args.flags() {
        config.set(k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_layers_win() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("d.cfg");
        std::fs::write(&file, "lr = 0.2\nsteps = 7\nrefinements = 1\n").unwrap();
        let args = ConfigArgs {
            file: Some(file),
            steps: Some(9),
            ..Default::default()
        };
        let env = [("WSOD_STEPS".to_owned(), "8".to_owned()), ("WSOD_REFINEMENTS".to_owned(), "2".to_owned())];
        let c = layered_config_with_env(TrainConfig::default(), &args, env).unwrap();
        assert_eq!(c.lr, 0.2);
        assert_eq!(c.refinements, 2);
        assert_eq!(c.steps, 9);
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unrelated_environment_is_ignored() {
        let env = [("WSOD_COCO_DIR".to_owned(), "/data".to_owned())];
        let c = layered_config_with_env(TrainConfig::default(), &ConfigArgs::default(), env).unwrap();
        assert_eq!(c, TrainConfig::default());
    }

    #[test]
    fn bad_values_are_rejected() {
        let args = ConfigArgs {
            scales: Some(String::new()),
            ..Default::default()
        };
        assert!(layered_config_with_env(TrainConfig::default(), &args, []).is_err());
    }
}
