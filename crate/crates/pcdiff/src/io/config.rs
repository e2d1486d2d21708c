//! Flat key=value run configuration. One file carries every tunable; CLI
//! flags override whatever the file set.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::tensor::Activation;
use crate::model::train::TrainConfig;
use crate::model::ModelConfig;
use crate::refine::RefineConfig;
use crate::sampler::{SamplerConfig, SigmaMode};
use crate::schedule::{make_linear_schedule, NoiseSchedule};

/// Every tunable of the pipeline, with working defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    /// K copies of the scan seed the reverse chain.
    pub replicate: usize,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            replicate: 10,
            t_max: 1000,
            beta_start: 3.5e-5,
            beta_end: 0.007,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::InvalidParameter(format!("config key {key}: cannot parse value {value:?}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::InvalidParameter(format!(
            "config key {key}: expected true/false, got {value:?}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|tok| parse(key, tok.trim())).collect()
}

impl RunConfig {
    /// Apply one key=value setting. Unknown keys are an error that names the
    /// key; they are never ignored.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            // sampling
            "steps" => self.sampler.steps = parse(key, value)?,
            "guidance" => self.sampler.s = parse(key, value)?,
            "stochastic" => self.sampler.stochastic = parse_bool(key, value)?,
            "sigma_mode" => {
                self.sampler.sigma_mode = match value {
                    "std" => SigmaMode::Std,
                    "verbatim" => SigmaMode::Verbatim,
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "config key {key}: expected std or verbatim, got {value:?}"
                        )))
                    }
                }
            }
            "replicate" => self.replicate = parse(key, value)?,
            // schedule
            "t_max" => self.t_max = parse(key, value)?,
            "beta_start" => self.beta_start = parse(key, value)?,
            "beta_end" => self.beta_end = parse(key, value)?,
            // training
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" | "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "lr_halving_period" => self.train.lr_halving_period = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "reg_weight" => self.train.r = parse(key, value)?,
            "null_prob" => self.train.p_null = parse(key, value)?,
            // one seed drives training, sampling, and refinement alike
            "seed" => {
                let seed: u64 = parse(key, value)?;
                self.train.seed = seed;
                self.sampler.seed = seed;
                self.refine.seed = seed;
            }
            // model architecture
            "d_t" => self.model.d_t = parse(key, value)?,
            "d_c" => self.model.d_c = parse(key, value)?,
            "layer_dims" => self.model.layer_dims = parse_list(key, value)?,
            "n_condition_points" => self.model.n_condition_points = parse(key, value)?,
            "activation" => {
                let act = Activation::from_name(value)?;
                self.model.activation = act;
                self.refine.activation = act;
            }
            // refinement
            "kappa" => self.refine.kappa = parse(key, value)?,
            "max_offset" => self.refine.max_offset = parse(key, value)?,
            "jitter_sigma" => self.refine.jitter_sigma = parse(key, value)?,
            "refine_hidden" => self.refine.hidden = parse_list(key, value)?,
            "refine_lr" => self.refine.learning_rate = parse(key, value)?,
            "refine_epochs" => self.refine.epochs = parse(key, value)?,
            "refine_batch_size" => self.refine.batch_size = parse(key, value)?,
            // dataset pipeline
            "range" => self.pipeline.range_m = parse(key, value)?,
            "n_input" => self.pipeline.n_input = parse(key, value)?,
            "n_gt" => self.pipeline.n_gt = parse(key, value)?,
            "moving_labels" => {
                self.pipeline.moving_label_ids = parse_list::<u32>(key, value)?
                    .into_iter()
                    .collect::<BTreeSet<u32>>()
            }
            // 0 disables deduplication
            "dedup" => {
                let res: f64 = parse(key, value)?;
                self.pipeline.dedup_resolution = if res == 0.0 { None } else { Some(res) };
            }
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// Load key=value lines over the defaults. Blank lines and lines starting
    /// with '#' are skipped.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "{}: line {}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(self.beta_start, self.beta_end, self.t_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_mirror_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.sampler.steps, 50);
        assert_eq!(c.sampler.s, 6.0);
        assert_eq!(c.replicate, 10);
        assert_eq!(c.train.r, 5.0);
        assert_eq!(c.train.p_null, 0.1);
        assert_eq!(c.refine.kappa, 6);
        assert_eq!(c.pipeline.range_m, 50.0);
        assert_eq!(c.t_max, 1000);
        assert_eq!(c.beta_start, 3.5e-5);
        assert_eq!(c.beta_end, 0.007);
        assert_eq!(c.schedule().unwrap().t_max(), 1000);
    }

    #[test]
    fn file_overrides_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(
            b"# desk-scale run\n\
              steps = 25\n\
              guidance=2.5\n\
              layer_dims = 16, 16\n\
              seed = 7\n\
              dedup = 0.05\n\
              moving_labels = 252, 253\n\
              sigma_mode = verbatim\n\
              stochastic = true\n",
        )
        .unwrap();
        let c = RunConfig::from_file(f.path()).unwrap();
        assert_eq!(c.sampler.steps, 25);
        assert_eq!(c.sampler.s, 2.5);
        assert_eq!(c.model.layer_dims, vec![16, 16]);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.sampler.seed, 7);
        assert_eq!(c.refine.seed, 7);
        assert_eq!(c.pipeline.dedup_resolution, Some(0.05));
        assert_eq!(
            c.pipeline.moving_label_ids,
            BTreeSet::from([252u32, 253u32])
        );
        assert_eq!(c.sampler.sigma_mode, SigmaMode::Verbatim);
        assert!(c.sampler.stochastic);
        // untouched keys keep defaults
        assert_eq!(c.train.r, 5.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = RunConfig::default();
        let err = c.apply("guidnce", "6").unwrap_err();
        match err {
            Error::UnknownConfigKey(k) => assert_eq!(k, "guidnce"),
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut c = RunConfig::default();
        let msg = c.apply("steps", "fifty").unwrap_err().to_string();
        assert!(msg.contains("steps"), "{msg}");
        assert!(msg.contains("fifty"), "{msg}");
        assert!(c.apply("stochastic", "maybe").is_err());
        assert!(c.apply("sigma_mode", "posterior").is_err());
        assert!(c.apply("activation", "gelu").is_err());
    }

    #[test]
    fn dedup_zero_means_off() {
        let mut c = RunConfig::default();
        c.apply("dedup", "0").unwrap();
        assert_eq!(c.pipeline.dedup_resolution, None);
    }

    #[test]
    fn malformed_line_is_positioned() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"steps = 10\nnot a setting\n").unwrap();
        let msg = RunConfig::from_file(f.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn activation_applies_to_both_networks() {
        let mut c = RunConfig::default();
        c.apply("activation", "relu").unwrap();
        assert_eq!(c.model.activation, Activation::Relu);
        assert_eq!(c.refine.activation, Activation::Relu);
    }
}
