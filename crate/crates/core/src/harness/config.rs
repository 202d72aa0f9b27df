//! Run configuration and its `key = value` file format.
//!
//! ```ini
//! [run]
//! method = m3i
//! seed = 0
//! epochs = 10
//! batch_size = 32
//! output_dir = runs/m3i
//!
//! [data]
//! num_classes = 4
//! train_size = 2000
//!
//! [optim]
//! lr = 0.001
//!
//! [model]
//! dim = 64
//!
//! [method]
//! gamma = 1.0
//! ```
//!
//! Sections and keys are listed in the repository README. Unknown keys are
//! rejected.

use super::data::SyntheticShapesSpec;
use super::optim::OptimizerConfig;
use crate::error::{Error, Result};
use crate::heads::{Mechanism, RegularizerSpec};
use crate::methods::{get_method, validate_method, MethodConfig, TargetEncoderKind, TargetLayout};
use crate::transforms::AugmentSpec;
use ini::Ini;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const OUTPUT_DIR_ENV: &str = "M3I_OUTPUT_DIR";

/// Optional architecture changes applied on top of a catalog method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOverrides {
    pub patch_size: Option<usize>,
    pub dim: Option<usize>,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub decoder_depth: Option<usize>,
    pub decoder_dim: Option<usize>,
    pub decoder_heads: Option<usize>,
    pub embed_dim: Option<usize>,
}

/// Optional method-level changes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodOverrides {
    pub regularizer: Option<Mechanism>,
    pub mask_ratio: Option<f64>,
    pub loss_on_masked_only: Option<bool>,
    pub gamma: Option<f64>,
    pub layout: Option<TargetLayout>,
    pub grad_ema: Option<f64>,
    pub ema_coeff: Option<f64>,
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: String,
    /// Dataset directory; generated in memory from `data` when absent.
    pub data_dir: Option<PathBuf>,
    pub data: SyntheticShapesSpec,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Probe cadence in steps; 0 disables.
    pub eval_every: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub model: ModelOverrides,
    pub overrides: MethodOverrides,
    /// Replaces the loss at this step with NaN.
    pub nan_inject_step: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: "m3i".into(),
            data_dir: None,
            data: SyntheticShapesSpec::default(),
            optimizer: OptimizerConfig::default(),
            augment: AugmentSpec::default(),
            epochs: 10,
            batch_size: 32,
            max_steps: None,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            eval_every: 0,
            checkpoint_every: 0,
            model: ModelOverrides::default(),
            overrides: MethodOverrides::default(),
            nan_inject_step: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.augment.validate()?;
        self.data.validate()?;
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be at least 1".into()));
        }
        if self.batch_size > self.data.train_size {
            return Err(Error::ConfigInvalid(format!(
                "batch_size {} exceeds the {} training samples",
                self.batch_size, self.data.train_size
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.data.train_size / self.batch_size.max(1)) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.steps_per_epoch() * self.epochs as u64;
        self.max_steps.map_or(full, |m| m.min(full))
    }

    /// The catalog method with every override applied, validated.
    pub fn method_config(&self) -> Result<MethodConfig> {
        let mut m = get_method(&self.method)?;
        let res = self.data.resolution;
        m.encoder.view_resolution = (res, res);
        let o = &self.model;
        if let Some(v) = o.patch_size {
            m.encoder.patch_size = v;
        }
        if let Some(v) = o.dim {
            m.encoder.dim = v;
        }
        if let Some(v) = o.depth {
            m.encoder.depth = v;
        }
        if let Some(v) = o.heads {
            m.encoder.heads = v;
        }
        if m.decoder.kind == crate::nn::DecoderKind::DenseDecoder {
            if let Some(v) = o.decoder_depth {
                m.decoder.depth = v;
            }
            if let Some(v) = o.decoder_dim {
                m.decoder.dim = v;
            }
        }
        if let Some(v) = o.decoder_heads {
            m.decoder.heads = v;
        }
        if let Some(v) = o.embed_dim {
            m.embed_dim = v;
        }
        m.target_encoder.num_classes = self.data.num_classes;
        let mo = &self.overrides;
        if let Some(mech) = mo.regularizer {
            m.regularizer = RegularizerSpec::new(mech);
            // a momentum copy already blocks the gradient
            if mech == Mechanism::None && m.target_encoder.kind == TargetEncoderKind::Momentum {
                m.target_encoder.kind = TargetEncoderKind::Shared;
            }
        }
        if let Some(v) = mo.mask_ratio {
            m.mask_ratio = v;
        }
        if let Some(v) = mo.loss_on_masked_only {
            m.loss_on_masked_only = v;
        }
        if let Some(v) = mo.ema_coeff {
            m.target_encoder.ema_coeff = v;
            m.regularizer.ema_coeff = v;
        }
        if let Some(v) = mo.tau {
            m.head.tau = v;
        }
        if let Some(v) = mo.sigma {
            m.head.sigma = v;
        }
        if let Some(s) = m.m3i.as_mut() {
            s.semantic_encoder.num_classes = self.data.num_classes;
            if let Some(v) = mo.gamma {
                s.gamma = v;
            }
            if let Some(v) = mo.layout {
                s.layout = v;
            }
            if let Some(v) = mo.grad_ema {
                s.grad_ema = v;
            }
        } else if mo.gamma.is_some() || mo.layout.is_some() || mo.grad_ema.is_some() {
            return Err(Error::ConfigInvalid(format!(
                "gamma, layout and grad_ema only apply to the combined method, not {}",
                self.method
            )));
        }
        let errors: Vec<String> = validate_method(&m).into_iter().filter(|e| !e.starts_with("warning:")).collect();
        if !errors.is_empty() {
            return Err(Error::ConfigInvalid(errors.join("; ")));
        }
        Ok(m)
    }

    /// Applies the output-directory environment override when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_ini_str(&text)
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        let mut sections = Sections::from_ini(&ini)?;
        let mut c = RunConfig::default();

        let mut s = sections.take("run");
        s.set(&mut c.method, "method")?;
        s.set(&mut c.seed, "seed")?;
        s.set(&mut c.epochs, "epochs")?;
        s.set(&mut c.batch_size, "batch_size")?;
        s.set_opt(&mut c.max_steps, "max_steps")?;
        s.set(&mut c.output_dir, "output_dir")?;
        s.set(&mut c.eval_every, "eval_every")?;
        s.set(&mut c.checkpoint_every, "checkpoint_every")?;
        s.set_opt(&mut c.nan_inject_step, "nan_inject_step")?;
        s.finish("run")?;

        let mut s = sections.take("data");
        s.set_opt(&mut c.data_dir, "dir")?;
        apply_data(&mut s, &mut c.data)?;
        s.finish("data")?;

        let mut s = sections.take("optim");
        let o = &mut c.optimizer;
        s.set(&mut o.lr, "lr")?;
        s.set(&mut o.beta1, "beta1")?;
        s.set(&mut o.beta2, "beta2")?;
        s.set(&mut o.eps, "eps")?;
        s.set(&mut o.weight_decay, "weight_decay")?;
        s.set(&mut o.warmup_frac, "warmup_frac")?;
        s.set(&mut o.cosine, "cosine")?;
        s.finish("optim")?;

        let mut s = sections.take("augment");
        let a = &mut c.augment;
        if let Some(lo) = s.take_parsed::<f64>("crop_scale_min")? {
            a.crop_scale_range.0 = lo;
        }
        if let Some(hi) = s.take_parsed::<f64>("crop_scale_max")? {
            a.crop_scale_range.1 = hi;
        }
        s.set(&mut a.flip_prob, "flip_prob")?;
        s.set(&mut a.jitter_strength, "jitter_strength")?;
        s.set(&mut a.grayscale_prob, "grayscale_prob")?;
        s.set(&mut a.blur_prob, "blur_prob")?;
        s.set(&mut a.solarize_prob, "solarize_prob")?;
        s.finish("augment")?;

        let mut s = sections.take("model");
        let m = &mut c.model;
        s.set_opt(&mut m.patch_size, "patch_size")?;
        s.set_opt(&mut m.dim, "dim")?;
        s.set_opt(&mut m.depth, "depth")?;
        s.set_opt(&mut m.heads, "heads")?;
        s.set_opt(&mut m.decoder_depth, "decoder_depth")?;
        s.set_opt(&mut m.decoder_dim, "decoder_dim")?;
        s.set_opt(&mut m.decoder_heads, "decoder_heads")?;
        s.set_opt(&mut m.embed_dim, "embed_dim")?;
        s.finish("model")?;

        let mut s = sections.take("method");
        let mo = &mut c.overrides;
        if let Some(r) = s.take_raw("regularizer") {
            mo.regularizer = Some(parse_mechanism(&r)?);
        }
        if let Some(r) = s.take_raw("layout") {
            mo.layout = Some(parse_layout(&r)?);
        }
        s.set_opt(&mut mo.mask_ratio, "mask_ratio")?;
        s.set_opt(&mut mo.loss_on_masked_only, "loss_on_masked_only")?;
        s.set_opt(&mut mo.gamma, "gamma")?;
        s.set_opt(&mut mo.grad_ema, "grad_ema")?;
        s.set_opt(&mut mo.ema_coeff, "ema_coeff")?;
        s.set_opt(&mut mo.tau, "tau")?;
        s.set_opt(&mut mo.sigma, "sigma")?;
        s.finish("method")?;

        sections.finish()?;
        c.augment.out_resolution = (c.data.resolution, c.data.resolution);
        c.validate()?;
        Ok(c)
    }
}

/// Reads a dataset spec from the `[data]` section of a `key = value` file.
pub fn shapes_spec_from_ini_str(text: &str) -> Result<(SyntheticShapesSpec, Option<PathBuf>)> {
    let ini = Ini::load_from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut sections = Sections::from_ini(&ini)?;
    let mut s = sections.take("data");
    let mut spec = SyntheticShapesSpec::default();
    let mut dir = None;
    s.set_opt(&mut dir, "dir")?;
    apply_data(&mut s, &mut spec)?;
    s.finish("data")?;
    sections.finish()?;
    spec.validate()?;
    Ok((spec, dir))
}

fn apply_data(s: &mut Section, d: &mut SyntheticShapesSpec) -> Result<()> {
    s.set(&mut d.num_classes, "num_classes")?;
    s.set(&mut d.resolution, "resolution")?;
    s.set(&mut d.train_size, "train_size")?;
    s.set(&mut d.val_size, "val_size")?;
    s.set(&mut d.seed, "seed")?;
    s.set(&mut d.caption_template, "caption_template")?;
    if let Some(colors) = s.take_raw("colors") {
        d.colors = colors.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    }
    Ok(())
}

pub fn parse_mechanism(s: &str) -> Result<Mechanism> {
    Ok(match s {
        "negatives" => Mechanism::Negatives,
        "stop_gradient" => Mechanism::StopGradient,
        "ema_target" => Mechanism::EmaTarget,
        "decorrelation" => Mechanism::Decorrelation,
        "none" => Mechanism::None,
        other => return Err(Error::ConfigInvalid(format!("unknown regularizer `{other}`"))),
    })
}

pub fn parse_layout(s: &str) -> Result<TargetLayout> {
    Ok(match s {
        "default" => TargetLayout::Default,
        "a" => TargetLayout::A,
        "b" => TargetLayout::B,
        "c" => TargetLayout::C,
        other => return Err(Error::ConfigInvalid(format!("unknown layout `{other}`"))),
    })
}

struct Sections {
    map: BTreeMap<String, BTreeMap<String, String>>,
}

impl Sections {
    fn from_ini(ini: &Ini) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (name, props) in ini.iter() {
            let name = match name {
                Some(n) => n.to_string(),
                None if props.is_empty() => continue,
                None => return Err(Error::ConfigInvalid("keys outside any [section]".into())),
            };
            let entry: &mut BTreeMap<String, String> = map.entry(name).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.to_string(), v.to_string());
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, name: &str) -> Section {
        Section {
            keys: self.map.remove(name).unwrap_or_default(),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::ConfigInvalid(format!("unknown section [{k}]"))),
            None => Ok(()),
        }
    }
}

struct Section {
    keys: BTreeMap<String, String>,
}

impl Section {
    fn take_raw(&mut self, key: &str) -> Option<String> {
        self.keys.remove(key).map(|v| v.trim().to_string())
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_raw(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::ConfigInvalid(format!("`{key}` has an invalid value `{v}`"))),
        }
    }

    fn set<T: FromStr>(&mut self, slot: &mut T, key: &str) -> Result<()> {
        if let Some(v) = self.take_parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_opt<T: FromStr>(&mut self, slot: &mut Option<T>, key: &str) -> Result<()> {
        if let Some(v) = self.take_parsed(key)? {
            *slot = Some(v);
        }
        Ok(())
    }

    fn finish(self, section: &str) -> Result<()> {
        match self.keys.keys().next() {
            Some(k) => Err(Error::ConfigInvalid(format!("unknown key `{k}` in [{section}]"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let c = RunConfig::from_ini_str(
            "[run]\nmethod = mim_pixel\nseed = 7\nbatch_size = 8\n[data]\ntrain_size = 64\n[model]\ndim = 32\n[method]\nmask_ratio = 0.6\n",
        )
        .unwrap();
        assert_eq!(c.method, "mim_pixel");
        assert_eq!(c.seed, 7);
        let m = c.method_config().unwrap();
        assert_eq!(m.encoder.dim, 32);
        assert_eq!(m.mask_ratio, 0.6);
        assert_eq!(c.total_steps(), 80);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_ini_str("[run]\nmethdo = m3i\n").is_err());
        assert!(RunConfig::from_ini_str("[runn]\nmethod = m3i\n").is_err());
        assert!(RunConfig::from_ini_str("[optim]\nlr = -1\n").is_err());
    }

    #[test]
    fn gamma_needs_combined_method() {
        let c = RunConfig::from_ini_str("[run]\nmethod = clip\n[method]\ngamma = 2\n").unwrap();
        assert!(c.method_config().is_err());
    }
}
