//! Plain-text `key = value` run configuration covering graph
//! hyperparameters, fusion, training, the synthetic generator, and
//! evaluation thresholds. Unknown keys are rejected, and every run echoes
//! the effective configuration into its output directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::enhance::{Combine, FusionMode};
use crate::error::{Error, Result};
use crate::graph::AcgHyperparams;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub z: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// None selects the per-video default rule (50 at T=750, else T/10).
    pub k: Option<usize>,
    pub fusion: FusionMode,
    pub train: TrainConfig,
    pub act_threshold: f64,
    pub synth: SynthConfig,
    pub iou_thresholds: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            z: 10,
            alpha: 1.0,
            lambda: 0.85,
            k: None,
            fusion: FusionMode::default(),
            train: TrainConfig::default(),
            act_threshold: 0.5,
            synth: SynthConfig::default(),
            iou_thresholds: crate::pipeline::default_iou_thresholds(),
        }
    }
}

impl RunConfig {
    /// Graph hyperparameters for a video of `t` segments.
    pub fn hyperparams_for(&self, t: usize) -> AcgHyperparams {
        AcgHyperparams {
            z: self.z,
            alpha: self.alpha,
            lambda: self.lambda,
            k: self.k.unwrap_or_else(|| AcgHyperparams::default_k(t)),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "z" => self.z = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "k" => {
                self.k = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "fusion" => {
                self.fusion.combine = match value {
                    "sum" => Combine::Sum,
                    "concat" => Combine::Concat,
                    _ => return Err(Error::Config(format!("fusion must be sum or concat, got {value:?}"))),
                }
            }
            "fusion_features" => {
                let (mut orig, mut avg, mut gcn) = (false, false, false);
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    match part {
                        "original" => orig = true,
                        "avg" => avg = true,
                        "gcn" => gcn = true,
                        _ => {
                            return Err(Error::Config(format!(
                                "fusion_features entries must be original, avg, or gcn; got {part:?}"
                            )))
                        }
                    }
                }
                self.fusion.include_original = orig;
                self.fusion.include_avg = avg;
                self.fusion.include_gcn = gcn;
            }
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "seed" => {
                self.train.seed = num(key, value)?;
                self.synth.seed = self.train.seed;
            }
            "epm_weight" => self.train.epm_weight = num(key, value)?,
            "act_threshold" => self.act_threshold = num(key, value)?,
            "num_videos" => self.synth.num_videos = num(key, value)?,
            "segments" => self.synth.segments = num(key, value)?,
            "feature_dim" => self.synth.feature_dim = num(key, value)?,
            "num_classes" => self.synth.num_classes = num(key, value)?,
            "instances_min" => self.synth.instances_per_video.0 = num(key, value)?,
            "instances_max" => self.synth.instances_per_video.1 = num(key, value)?,
            "instance_len_min" => self.synth.instance_len.0 = num(key, value)?,
            "instance_len_max" => self.synth.instance_len.1 = num(key, value)?,
            "occlusion_rate" => self.synth.occlusion_rate = num(key, value)?,
            "occlusion_frac" => self.synth.occlusion_frac = num(key, value)?,
            "noise_sigma" => self.synth.noise_sigma = num(key, value)?,
            "background_sigma" => self.synth.background_sigma = num(key, value)?,
            "proto_max_cos" => self.synth.proto_max_cos = num(key, value)?,
            "iou_thresholds" => {
                self.iou_thresholds = value
                    .split(',')
                    .map(|p| num("iou_thresholds", p.trim()))
                    .collect::<Result<Vec<f64>>>()?;
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams_for(self.synth.segments).validate()?;
        self.fusion.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if !(0.0 < self.act_threshold && self.act_threshold < 1.0) {
            return Err(Error::Config(format!(
                "act_threshold must lie in (0, 1), got {}",
                self.act_threshold
            )));
        }
        if self.iou_thresholds.is_empty() {
            return Err(Error::Config("iou_thresholds must not be empty".into()));
        }
        Ok(())
    }

    /// Renders every effective value, in fixed order, for the echo file.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "z = {}", self.z);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        match self.k {
            Some(k) => {
                let _ = writeln!(s, "k = {k}");
            }
            None => {
                let _ = writeln!(s, "k = auto");
            }
        }
        let _ = writeln!(
            s,
            "fusion = {}",
            match self.fusion.combine {
                Combine::Sum => "sum",
                Combine::Concat => "concat",
            }
        );
        let mut features = Vec::new();
        if self.fusion.include_original {
            features.push("original");
        }
        if self.fusion.include_avg {
            features.push("avg");
        }
        if self.fusion.include_gcn {
            features.push("gcn");
        }
        let _ = writeln!(s, "fusion_features = {}", features.join(","));
        let _ = writeln!(s, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "epm_weight = {}", self.train.epm_weight);
        let _ = writeln!(s, "act_threshold = {}", self.act_threshold);
        let _ = writeln!(s, "num_videos = {}", self.synth.num_videos);
        let _ = writeln!(s, "segments = {}", self.synth.segments);
        let _ = writeln!(s, "feature_dim = {}", self.synth.feature_dim);
        let _ = writeln!(s, "num_classes = {}", self.synth.num_classes);
        let _ = writeln!(s, "instances_min = {}", self.synth.instances_per_video.0);
        let _ = writeln!(s, "instances_max = {}", self.synth.instances_per_video.1);
        let _ = writeln!(s, "instance_len_min = {}", self.synth.instance_len.0);
        let _ = writeln!(s, "instance_len_max = {}", self.synth.instance_len.1);
        let _ = writeln!(s, "occlusion_rate = {}", self.synth.occlusion_rate);
        let _ = writeln!(s, "occlusion_frac = {}", self.synth.occlusion_frac);
        let _ = writeln!(s, "noise_sigma = {}", self.synth.noise_sigma);
        let _ = writeln!(s, "background_sigma = {}", self.synth.background_sigma);
        let _ = writeln!(s, "proto_max_cos = {}", self.synth.proto_max_cos);
        let _ = writeln!(
            s,
            "iou_thresholds = {}",
            self.iou_thresholds
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        s
    }

    /// Writes the effective configuration into a run's output directory.
    pub fn echo_into(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("config_used.cfg"), self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.z, 10);
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.lambda, 0.85);
        assert_eq!(cfg.hyperparams_for(750).k, 50);
        assert_eq!(cfg.hyperparams_for(64).k, 6);
        assert_eq!(cfg.hyperparams_for(5).k, 1);
        assert_eq!(cfg.iou_thresholds, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
    }

    #[test]
    fn parses_keys_comments_and_auto_k() {
        let cfg = RunConfig::parse(
            "# a comment\n\
             lambda = 0.5\n\
             k = 12\n\
             fusion = concat\n\
             fusion_features = original,gcn\n\
             iou_thresholds = 0.3, 0.5\n\
             seed = 99\n",
        )
        .unwrap();
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.k, Some(12));
        assert_eq!(cfg.fusion.combine, Combine::Concat);
        assert!(cfg.fusion.include_original && !cfg.fusion.include_avg);
        assert_eq!(cfg.iou_thresholds, vec![0.3, 0.5]);
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.synth.seed, 99);

        let auto = RunConfig::parse("k = auto\n").unwrap();
        assert_eq!(auto.k, None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("mystery = 1\n").is_err());
        assert!(RunConfig::parse("lambda = high\n").is_err());
        assert!(RunConfig::parse("lambda = 1.0\n").is_err());
        assert!(RunConfig::parse("fusion = mean\n").is_err());
        assert!(RunConfig::parse("fusion_features = original,bogus\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.lambda = 0.35;
        cfg.k = Some(9);
        cfg.train.epochs = 17;
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
