//! Flat `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the
//! snake_case names listed by [`Settings::entries`]; later occurrences win.
//! Command-line flags are applied after the file, so flags win.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use amu_core::eval::DEFAULT_BUCKETS;
use amu_core::predictors::DEFAULT_CACHE_SHARPNESS;
use amu_core::synth::SynthSpec;
use amu_core::training::{LrSchedule, ProbeInit, SearchGrid};
use amu_core::{FusionConfig, KappaMethod, SplitTag, TrainConfig, TrainMode};

use crate::amuf::read_bytes;
use crate::error::{AmuError, Result};

pub type Pairs = Vec<(String, String)>;

/// Parses config text into ordered key/value pairs.
pub fn parse(text: &str) -> Result<Pairs> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AmuError::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(AmuError::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads a config file, returning its pairs and the exact bytes read.
pub fn load(path: &Path) -> Result<(Pairs, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let text =
        std::str::from_utf8(&bytes).map_err(|e| AmuError::Config(format!("{}: not UTF-8: {e}", path.display())))?;
    Ok((parse(text)?, bytes))
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse().map_err(|e| AmuError::Config(format!("{key} = {raw:?}: {e}")))
}

fn list(key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',').map(|x| value(key, x.trim())).collect()
}

fn render_list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Every tunable of every subcommand, resolved from defaults, then the
/// config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub synth: SynthSpec,
    pub shots: usize,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub grid: SearchGrid,
    /// Run the grid search before the final training in `train`.
    pub search: bool,
    pub split: SplitTag,
    pub cmy_split: SplitTag,
    pub buckets: usize,
    pub cache_sharpness: f64,
    pub top_k: usize,
    pub top_m: usize,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_rhos: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        let tenths: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        Self {
            seed: 0,
            synth: SynthSpec::default(),
            shots: 16,
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            grid: SearchGrid::default(),
            search: false,
            split: SplitTag::Test,
            cmy_split: SplitTag::Val,
            buckets: DEFAULT_BUCKETS,
            cache_sharpness: DEFAULT_CACHE_SHARPNESS,
            top_k: 3,
            top_m: 3,
            sweep_lambdas: tenths.clone(),
            sweep_rhos: tenths,
        }
    }
}

impl Settings {
    /// Sets one key. Unknown keys are an error.
    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        let s = &mut self.synth;
        let t = &mut self.train;
        let f = &mut self.fusion;
        match key {
            "seed" => self.seed = value(key, raw)?,
            "classes" => s.classes = value(key, raw)?,
            "dim_clip" => s.dim_clip = value(key, raw)?,
            "dim_aux" => s.dim_aux = value(key, raw)?,
            "train_per_class" => s.train_per_class = value(key, raw)?,
            "val_per_class" => s.val_per_class = value(key, raw)?,
            "test_per_class" => s.test_per_class = value(key, raw)?,
            "view_correlation" => s.view_correlation = value(key, raw)?,
            "clip_noise" => s.clip_noise = value(key, raw)?,
            "aux_noise" => s.aux_noise = value(key, raw)?,
            "head_noise" => s.head_noise = value(key, raw)?,
            "confidence_link" => s.confidence_link = value(key, raw)?,
            "logit_scale" => s.logit_scale = value(key, raw)?,
            "shots" => self.shots = value(key, raw)?,
            "epochs" => t.epochs = value(key, raw)?,
            "lr" => t.learning_rate = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "lambda" => t.lambda = value(key, raw)?,
            "mode" => t.mode = value::<TrainMode>(key, raw)?,
            "init" => {
                t.init = match raw {
                    "auto" => None,
                    other => Some(value::<ProbeInit>(key, other)?),
                }
            }
            "schedule" => t.schedule = value::<LrSchedule>(key, raw)?,
            "adam_beta1" => t.adamw.beta1 = value(key, raw)?,
            "adam_beta2" => t.adamw.beta2 = value(key, raw)?,
            "adam_eps" => t.adamw.eps = value(key, raw)?,
            "weight_decay" => t.adamw.weight_decay = value(key, raw)?,
            "beta" => f.beta = value(key, raw)?,
            "rho" => f.rho = value(key, raw)?,
            "kappa" => f.kappa_method = value::<KappaMethod>(key, raw)?,
            "kappa_epsilon" => f.epsilon = value(key, raw)?,
            "degenerate_fallback" => f.degenerate_fallback = value(key, raw)?,
            "grid_lambdas" => self.grid.lambdas = list(key, raw)?,
            "grid_rhos" => self.grid.rhos = list(key, raw)?,
            "grid_betas" => self.grid.betas = list(key, raw)?,
            "search" => self.search = value(key, raw)?,
            "split" => self.split = value::<SplitTag>(key, raw)?,
            "cmy_split" => self.cmy_split = value::<SplitTag>(key, raw)?,
            "buckets" => self.buckets = value(key, raw)?,
            "cache_sharpness" => self.cache_sharpness = value(key, raw)?,
            "top_k" => self.top_k = value(key, raw)?,
            "top_m" => self.top_m = value(key, raw)?,
            "sweep_lambdas" => self.sweep_lambdas = list(key, raw)?,
            "sweep_rhos" => self.sweep_rhos = list(key, raw)?,
            other => return Err(AmuError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_all<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.apply(k, v)?;
        }
        Ok(())
    }

    /// The seed drives both task sampling and training.
    pub fn finish(&mut self) {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    /// Every key with its resolved value, in a fixed order. Feeding these
    /// back through [`Settings::apply`] reproduces `self`.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let s = &self.synth;
        let t = &self.train;
        let f = &self.fusion;
        let mut m = BTreeMap::new();
        m.insert("seed", self.seed.to_string());
        m.insert("classes", s.classes.to_string());
        m.insert("dim_clip", s.dim_clip.to_string());
        m.insert("dim_aux", s.dim_aux.to_string());
        m.insert("train_per_class", s.train_per_class.to_string());
        m.insert("val_per_class", s.val_per_class.to_string());
        m.insert("test_per_class", s.test_per_class.to_string());
        m.insert("view_correlation", s.view_correlation.to_string());
        m.insert("clip_noise", s.clip_noise.to_string());
        m.insert("aux_noise", s.aux_noise.to_string());
        m.insert("head_noise", s.head_noise.to_string());
        m.insert("confidence_link", s.confidence_link.to_string());
        m.insert("logit_scale", s.logit_scale.to_string());
        m.insert("shots", self.shots.to_string());
        m.insert("epochs", t.epochs.to_string());
        m.insert("lr", t.learning_rate.to_string());
        m.insert("batch_size", t.batch_size.to_string());
        m.insert("lambda", t.lambda.to_string());
        m.insert("mode", t.mode.name().to_string());
        m.insert("init", t.init.map_or("auto", ProbeInit::name).to_string());
        m.insert("schedule", t.schedule.name().to_string());
        m.insert("adam_beta1", t.adamw.beta1.to_string());
        m.insert("adam_beta2", t.adamw.beta2.to_string());
        m.insert("adam_eps", t.adamw.eps.to_string());
        m.insert("weight_decay", t.adamw.weight_decay.to_string());
        m.insert("beta", f.beta.to_string());
        m.insert("rho", f.rho.to_string());
        m.insert("kappa", f.kappa_method.name().to_string());
        m.insert("kappa_epsilon", f.epsilon.to_string());
        m.insert("degenerate_fallback", f.degenerate_fallback.to_string());
        m.insert("grid_lambdas", render_list(&self.grid.lambdas));
        m.insert("grid_rhos", render_list(&self.grid.rhos));
        m.insert("grid_betas", render_list(&self.grid.betas));
        m.insert("search", self.search.to_string());
        m.insert("split", self.split.name().to_string());
        m.insert("cmy_split", self.cmy_split.name().to_string());
        m.insert("buckets", self.buckets.to_string());
        m.insert("cache_sharpness", self.cache_sharpness.to_string());
        m.insert("top_k", self.top_k.to_string());
        m.insert("top_m", self.top_m.to_string());
        m.insert("sweep_lambdas", render_list(&self.sweep_lambdas));
        m.insert("sweep_rhos", render_list(&self.sweep_rhos));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blank_lines_and_spacing() {
        let pairs = parse("# header\n\nseed = 7\n  lambda=0.25  \n# lr = 9\nkappa = top2\n").unwrap();
        assert_eq!(
            pairs,
            vec![("seed".into(), "7".into()), ("lambda".into(), "0.25".into()), ("kappa".into(), "top2".into())]
        );
        assert!(parse("no equals sign").is_err());
        assert!(parse(" = 3").is_err());
    }

    #[test]
    fn apply_sets_typed_fields_and_rejects_unknown_keys() {
        let mut s = Settings::default();
        s.apply_all([("lambda", "0.7"), ("kappa", "energy"), ("grid_betas", "0.5, 2"), ("mode", "joint")]).unwrap();
        assert_eq!(s.train.lambda, 0.7);
        assert_eq!(s.fusion.kappa_method, KappaMethod::Energy);
        assert_eq!(s.grid.betas, vec![0.5, 2.0]);
        assert_eq!(s.train.mode, TrainMode::Joint);
        assert!(matches!(s.apply("lamda", "1"), Err(AmuError::Config(_))));
        assert!(matches!(s.apply("epochs", "-1"), Err(AmuError::Config(_))));
        assert!(matches!(s.apply("kappa", "median"), Err(AmuError::Config(_))));
    }

    #[test]
    fn entries_round_trip() {
        let mut s = Settings::default();
        s.apply_all([("init", "zero"), ("rho", "0.3"), ("split", "val"), ("sweep_rhos", "0,1")]).unwrap();
        let mut back = Settings::default();
        let entries = s.entries();
        back.apply_all(entries.iter().map(|(k, v)| (*k, v.as_str()))).unwrap();
        assert_eq!(back, s);
    }
}
