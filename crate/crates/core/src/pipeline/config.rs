use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineIssue, Result};
use crate::oicr::{InferenceMode, DEFAULT_OICR_IOU, DEFAULT_REFINEMENTS};

/// Prefix for environment overrides, e.g. `WSOD_LR=0.05`.
pub const ENV_PREFIX: &str = "WSOD_";

/// Detector training and inference settings.
///
/// Every field can be set from a flat `key = value` file, from `WSOD_<KEY>`
/// environment variables and from command-line flags of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Number of refinement heads; 0 trains the multiple-instance head alone.
    pub refinements: usize,
    pub nms_iou: f64,
    pub oicr_iou: f64,
    /// Shorter-side lengths sampled at training time and averaged at test time.
    pub scales: Vec<u32>,
    pub max_proposals: usize,
    pub seed: u64,
    pub steps: u64,
    /// Steps between checkpoints / validation runs; 0 disables both.
    pub eval_interval: u64,
    pub flip: bool,
    /// Detections at or below this score are not emitted.
    pub confidence_floor: f64,
    pub inference: InferenceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 2,
            refinements: DEFAULT_REFINEMENTS,
            nms_iou: 0.4,
            oicr_iou: DEFAULT_OICR_IOU,
            scales: vec![400, 600, 800, 1200],
            max_proposals: crate::mil::MAX_PROPOSALS,
            seed: 0,
            steps: 2000,
            eval_interval: 0,
            flip: true,
            confidence_floor: 0.05,
            inference: InferenceMode::Mean,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "lr",
    "batch_size",
    "refinements",
    "nms_iou",
    "oicr_iou",
    "scales",
    "max_proposals",
    "seed",
    "steps",
    "eval_interval",
    "flip",
    "confidence_floor",
    "inference",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Sets one field from its textual form. `refinements` also accepts `k`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "refinements" | "k" => self.refinements = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "oicr_iou" => self.oicr_iou = parse(key, value)?,
            "scales" => {
                self.scales = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "max_proposals" => self.max_proposals = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "flip" => self.flip = parse(key, value)?,
            "confidence_floor" => self.confidence_floor = parse(key, value)?,
            "inference" => {
                self.inference = match value.trim() {
                    "mean" => InferenceMode::Mean,
                    "last" | "last-head" => InferenceMode::LastHead,
                    other => return Err(Error::InvalidConfig(format!("unknown inference mode `{other}`"))),
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut issues = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let res = match line.split_once('=') {
                Some((k, v)) => self.set(k, v),
                None => Err(Error::InvalidConfig("expected `key = value`".into())),
            };
            if let Err(e) = res {
                issues.push(LineIssue {
                    line: n + 1,
                    message: e.to_string(),
                });
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Parse {
                path: "<config>".into(),
                issues,
            })
        }
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.apply_text(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Parse { issues, .. } => Error::Parse {
                path: path.into(),
                issues,
            },
            e => e,
        })
    }

    /// Applies every `<prefix><KEY>` variable whose key names a field.
    pub fn apply_env(&mut self, prefix: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (k, v) in vars {
            if let Some(key) = k.strip_prefix(prefix) {
                let key = key.to_ascii_lowercase();
                if CONFIG_KEYS.contains(&key.as_str()) {
                    self.set(&key, &v)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "refinements = {}", self.refinements);
        let _ = writeln!(s, "nms_iou = {}", self.nms_iou);
        let _ = writeln!(s, "oicr_iou = {}", self.oicr_iou);
        let scales: Vec<String> = self.scales.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "scales = {}", scales.join(","));
        let _ = writeln!(s, "max_proposals = {}", self.max_proposals);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "eval_interval = {}", self.eval_interval);
        let _ = writeln!(s, "flip = {}", self.flip);
        let _ = writeln!(s, "confidence_floor = {}", self.confidence_floor);
        let mode = match self.inference {
            InferenceMode::Mean => "mean",
            InferenceMode::LastHead => "last",
        };
        let _ = writeln!(s, "inference = {mode}");
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) || !(self.oicr_iou > 0.0 && self.oicr_iou <= 1.0) {
            return fail("IoU thresholds must lie in (0, 1]");
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return fail("scales must be a non-empty list of positive sizes");
        }
        if self.max_proposals == 0 || self.max_proposals > crate::mil::MAX_PROPOSALS {
            return fail("max_proposals must be in 1..=500");
        }
        if self.steps == 0 {
            return fail("steps must be positive");
        }
        if !(0.0..1.0).contains(&self.confidence_floor) {
            return fail("confidence_floor must lie in [0, 1)");
        }
        Ok(())
    }
}
