//! The catalog of pre-training methods, each a single-input single-target
//! instance of the framework (plus the combined multi-input method).

use crate::error::{Error, Result};
use crate::heads::{HeadFamily, Mechanism, PredictionHead, RegularizerSpec, DEFAULT_SIGMA, DEFAULT_TAU};
use crate::model::ReprKind;
use crate::nn::{DecoderConfig, DecoderKind, EncoderConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    View1,
    MaskedView1,
    View2,
    MaskedView2,
}

impl InputTransform {
    pub fn is_masked(self) -> bool {
        matches!(self, InputTransform::MaskedView1 | InputTransform::MaskedView2)
    }

    /// Whether the input view is the target view itself.
    pub fn is_intra_view(self) -> bool {
        matches!(self, InputTransform::View1 | InputTransform::MaskedView1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputTransform::View1 => "view1",
            InputTransform::MaskedView1 => "masked_view1",
            InputTransform::View2 => "view2",
            InputTransform::MaskedView2 => "masked_view2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    View1,
    Category,
    Text,
}

impl TargetTransform {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetTransform::View1 => "view1",
            TargetTransform::Category => "category",
            TargetTransform::Text => "text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetEncoderKind {
    IdentityPixels,
    Shared,
    Momentum,
    CategoryTable,
    TextEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoderConfig {
    pub kind: TargetEncoderKind,
    pub ema_coeff: f64,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub text_depth: usize,
    pub text_dim: usize,
}

impl TargetEncoderConfig {
    pub fn of(kind: TargetEncoderKind) -> Self {
        Self {
            kind,
            ema_coeff: 0.995,
            num_classes: 4,
            vocab_size: crate::harness::vocab::VOCAB.len(),
            text_depth: 2,
            text_dim: 32,
        }
    }
}

/// Relative placement of the two image targets of the combined method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLayout {
    /// first target same as input view, second different
    Default,
    /// same / same
    A,
    /// different / different
    B,
    /// different / same
    C,
}

impl TargetLayout {
    /// `(first target is the input view, second target is the input view)`
    pub fn same_views(self) -> (bool, bool) {
        match self {
            TargetLayout::Default => (true, false),
            TargetLayout::A => (true, true),
            TargetLayout::B => (false, false),
            TargetLayout::C => (false, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M3iSettings {
    pub semantic_target: TargetTransform,
    pub semantic_head: PredictionHead,
    pub semantic_encoder: TargetEncoderConfig,
    pub layout: TargetLayout,
    pub gamma: f64,
    pub grad_ema: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub input_transform: InputTransform,
    pub target_transform: TargetTransform,
    pub target_repr: ReprKind,
    pub head: PredictionHead,
    pub regularizer: RegularizerSpec,
    pub target_encoder: TargetEncoderConfig,
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
    pub embed_dim: usize,
    pub mask_ratio: f64,
    pub loss_on_masked_only: bool,
    pub experimental: bool,
    pub m3i: Option<M3iSettings>,
}

pub const CATALOG: [&str; 15] = [
    "auto_encoder",
    "dense_distillation",
    "global_distillation",
    "mim_pixel",
    "mim_feature",
    "mim_global",
    "novel_view_synthesis",
    "dense_instance_discrimination",
    "instance_discrimination",
    "sim_pixel",
    "sim_feature",
    "sim_global",
    "image_classification",
    "clip",
    "m3i",
];

pub const INSTANCE_DISCRIMINATION_MECHANISMS: [Mechanism; 3] =
    [Mechanism::Negatives, Mechanism::StopGradient, Mechanism::Decorrelation];

fn base(
    name: &str,
    input: InputTransform,
    target: TargetTransform,
    repr: ReprKind,
    head: PredictionHead,
    mech: Mechanism,
    enc: TargetEncoderKind,
) -> MethodConfig {
    let decoder = if repr.is_dense() {
        DecoderConfig::dense(2, 32, 4)
    } else {
        DecoderConfig::pool(4)
    };
    MethodConfig {
        name: name.to_string(),
        input_transform: input,
        target_transform: target,
        target_repr: repr,
        head,
        regularizer: RegularizerSpec::new(mech),
        target_encoder: TargetEncoderConfig::of(enc),
        decoder,
        encoder: EncoderConfig::default(),
        embed_dim: 64,
        mask_ratio: if input.is_masked() { 0.5 } else { 0.0 },
        loss_on_masked_only: input.is_masked(),
        experimental: false,
        m3i: None,
    }
}

fn instance_discrimination(mech: Mechanism) -> Result<MethodConfig> {
    use InputTransform::*;
    let (head, enc) = match mech {
        Mechanism::Negatives => (PredictionHead::boltzmann(DEFAULT_TAU), TargetEncoderKind::Momentum),
        Mechanism::StopGradient => (PredictionHead::gaussian(DEFAULT_SIGMA), TargetEncoderKind::Momentum),
        Mechanism::Decorrelation => (PredictionHead::gaussian(DEFAULT_SIGMA), TargetEncoderKind::Shared),
        other => {
            return Err(Error::UnknownMethod(format!(
                "instance_discrimination[mech={}]",
                other.as_str()
            )))
        }
    };
    let name = if mech == Mechanism::Negatives {
        "instance_discrimination".to_string()
    } else {
        format!("instance_discrimination[mech={}]", mech.as_str())
    };
    Ok(base(&name, View2, TargetTransform::View1, ReprKind::GlobalFeature, head, mech, enc))
}

fn parse_mechanism(s: &str) -> Option<Mechanism> {
    Some(match s {
        "negatives" => Mechanism::Negatives,
        "stop_gradient" => Mechanism::StopGradient,
        "ema_target" => Mechanism::EmaTarget,
        "decorrelation" => Mechanism::Decorrelation,
        "none" => Mechanism::None,
        _ => return None,
    })
}

/// Canonical configuration of a catalog method. Instance discrimination
/// accepts `instance_discrimination[mech=negatives|stop_gradient|decorrelation]`.
pub fn get_method(name: &str) -> Result<MethodConfig> {
    use InputTransform::*;
    use ReprKind::*;
    use TargetEncoderKind as E;
    let gauss = PredictionHead::gaussian(DEFAULT_SIGMA);
    let boltz = PredictionHead::boltzmann(DEFAULT_TAU);
    let sp_boltz = boltz.with_label_smoothing(0.1);
    let t = TargetTransform::View1;
    let cfg = match name {
        "auto_encoder" => base(name, View1, t, DensePixels, gauss, Mechanism::None, E::IdentityPixels),
        "dense_distillation" => base(name, View1, t, DenseFeature, gauss, Mechanism::StopGradient, E::Momentum),
        "global_distillation" => {
            let mut c = base(name, View1, t, GlobalFeature, boltz, Mechanism::StopGradient, E::Momentum);
            c.experimental = true;
            c
        }
        "mim_pixel" => base(name, MaskedView1, t, DensePixels, gauss, Mechanism::None, E::IdentityPixels),
        "mim_feature" => base(name, MaskedView1, t, DenseFeature, gauss, Mechanism::StopGradient, E::Momentum),
        "mim_global" => base(name, MaskedView1, t, GlobalFeature, gauss, Mechanism::StopGradient, E::Momentum),
        "novel_view_synthesis" => {
            let mut c = base(name, View2, t, DensePixels, gauss, Mechanism::None, E::IdentityPixels);
            c.experimental = true;
            c
        }
        "dense_instance_discrimination" => {
            base(name, View2, t, DenseFeature, boltz, Mechanism::Negatives, E::Momentum)
        }
        "instance_discrimination" => instance_discrimination(Mechanism::Negatives)?,
        "sim_pixel" => base(name, MaskedView2, t, DensePixels, gauss, Mechanism::None, E::IdentityPixels),
        "sim_feature" => base(name, MaskedView2, t, DenseFeature, gauss, Mechanism::StopGradient, E::Momentum),
        "sim_global" => base(name, MaskedView2, t, GlobalFeature, boltz, Mechanism::Negatives, E::Momentum),
        "image_classification" => base(
            name,
            View1,
            TargetTransform::Category,
            CategoryEmbedding,
            sp_boltz,
            Mechanism::Negatives,
            E::CategoryTable,
        ),
        "clip" => base(name, View1, TargetTransform::Text, TextEmbedding, sp_boltz, Mechanism::Negatives, E::TextEncoder),
        "m3i" => {
            let mut c = base(name, MaskedView1, t, DenseFeature, gauss, Mechanism::StopGradient, E::Momentum);
            c.m3i = Some(M3iSettings {
                semantic_target: TargetTransform::Category,
                semantic_head: sp_boltz,
                semantic_encoder: TargetEncoderConfig::of(E::CategoryTable),
                layout: TargetLayout::Default,
                gamma: 1.0,
                grad_ema: 0.99,
            });
            c
        }
        other => {
            if let Some(mech) = other
                .strip_prefix("instance_discrimination[mech=")
                .and_then(|r| r.strip_suffix(']'))
            {
                let m = parse_mechanism(mech).ok_or_else(|| Error::UnknownMethod(other.to_string()))?;
                return instance_discrimination(m);
            }
            return Err(Error::UnknownMethod(other.to_string()));
        }
    };
    Ok(cfg)
}

/// Every catalog entry plus the non-default instance-discrimination variants.
pub fn all_variants() -> Vec<MethodConfig> {
    let mut out: Vec<MethodConfig> = CATALOG.iter().map(|n| get_method(n).expect("catalog")).collect();
    for m in &INSTANCE_DISCRIMINATION_MECHANISMS[1..] {
        out.push(instance_discrimination(*m).expect("variant"));
    }
    out
}

/// One row of the taxonomy of single-input single-target methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaxonomyRow {
    pub input: InputTransform,
    pub target: TargetTransform,
    pub repr: ReprKind,
    pub family: HeadFamily,
    pub mechanism: Mechanism,
}

/// Legal (input, target, representation, distribution, regularizer) cells.
pub fn taxonomy() -> Vec<TaxonomyRow> {
    use HeadFamily::*;
    use InputTransform::*;
    use ReprKind::*;
    let v = TargetTransform::View1;
    let row = |input, target, repr, family, mechanism| TaxonomyRow {
        input,
        target,
        repr,
        family,
        mechanism,
    };
    vec![
        row(View1, TargetTransform::Category, CategoryEmbedding, Boltzmann, Mechanism::Negatives),
        row(View1, TargetTransform::Text, TextEmbedding, Boltzmann, Mechanism::Negatives),
        row(View1, v, DensePixels, Gaussian, Mechanism::None),
        row(View1, v, DenseFeature, Gaussian, Mechanism::StopGradient),
        row(View1, v, GlobalFeature, Boltzmann, Mechanism::StopGradient),
        row(MaskedView1, v, DensePixels, Gaussian, Mechanism::None),
        row(MaskedView1, v, DenseFeature, Gaussian, Mechanism::StopGradient),
        row(MaskedView1, v, GlobalFeature, Gaussian, Mechanism::StopGradient),
        row(View2, v, DensePixels, Gaussian, Mechanism::None),
        row(View2, v, DenseFeature, Boltzmann, Mechanism::Negatives),
        row(View2, v, GlobalFeature, Boltzmann, Mechanism::Negatives),
        row(View2, v, GlobalFeature, Gaussian, Mechanism::StopGradient),
        row(View2, v, GlobalFeature, Gaussian, Mechanism::Decorrelation),
        row(MaskedView2, v, DensePixels, Gaussian, Mechanism::None),
        row(MaskedView2, v, DenseFeature, Gaussian, Mechanism::StopGradient),
        row(MaskedView2, v, GlobalFeature, Boltzmann, Mechanism::Negatives),
    ]
}

impl MethodConfig {
    pub fn taxonomy_row(&self) -> TaxonomyRow {
        TaxonomyRow {
            input: self.input_transform,
            target: self.target_transform,
            repr: self.target_repr,
            family: self.head.family,
            mechanism: self.regularizer.mechanism,
        }
    }

    /// Output dimension of the target representation.
    pub fn target_dim(&self) -> usize {
        match self.target_repr {
            ReprKind::DensePixels => self.encoder.patch_dim(),
            ReprKind::DenseFeature => self.encoder.dim,
            _ => self.embed_dim,
        }
    }

    /// `(name, input, target, repr, head, regularizer)` for listings.
    pub fn describe(&self) -> [String; 6] {
        let (input, target, repr, head) = match &self.m3i {
            Some(m) => (
                "mix(view1,view2)".to_string(),
                format!("view1,view1,{0},{0}", m.semantic_target.as_str()),
                format!("{},{}", self.target_repr.as_str(), semantic_repr(m.semantic_target).as_str()),
                format!("{},{}", self.head.name(), m.semantic_head.name()),
            ),
            None => (
                self.input_transform.as_str().to_string(),
                self.target_transform.as_str().to_string(),
                self.target_repr.as_str().to_string(),
                self.head.name().to_string(),
            ),
        };
        [
            self.name.clone(),
            input,
            target,
            repr,
            head,
            self.regularizer.mechanism.as_str().to_string(),
        ]
    }
}

pub fn semantic_repr(t: TargetTransform) -> ReprKind {
    match t {
        TargetTransform::Category => ReprKind::CategoryEmbedding,
        TargetTransform::Text => ReprKind::TextEmbedding,
        TargetTransform::View1 => ReprKind::GlobalFeature,
    }
}

fn target_encoder_for(repr: ReprKind, target: TargetTransform) -> &'static [TargetEncoderKind] {
    use TargetEncoderKind::*;
    match (repr, target) {
        (ReprKind::DensePixels, TargetTransform::View1) => &[IdentityPixels],
        (ReprKind::DenseFeature | ReprKind::GlobalFeature, TargetTransform::View1) => &[Shared, Momentum],
        (ReprKind::CategoryEmbedding, TargetTransform::Category) => &[CategoryTable],
        (ReprKind::TextEmbedding, TargetTransform::Text) => &[TextEncoder],
        _ => &[],
    }
}

/// Rule check of a configuration. An empty list means valid; entries
/// starting with `warning:` are advisory.
pub fn validate_method(cfg: &MethodConfig) -> Vec<String> {
    let mut v = Vec::new();
    if let Err(e) = cfg.encoder.validate() {
        v.push(e.to_string());
    }
    if let Err(e) = cfg.head.validate() {
        v.push(e.to_string());
    }
    let mech = cfg.regularizer.mechanism;
    if mech == Mechanism::Negatives && cfg.head.family == HeadFamily::Gaussian {
        v.push("negatives require Boltzmann".into());
    }
    if mech == Mechanism::Decorrelation && cfg.head.family != HeadFamily::Gaussian {
        v.push("decorrelation is paired with a Gaussian head".into());
    }
    let repr_ok = match cfg.target_transform {
        TargetTransform::View1 => matches!(
            cfg.target_repr,
            ReprKind::DensePixels | ReprKind::DenseFeature | ReprKind::GlobalFeature
        ),
        TargetTransform::Category => cfg.target_repr == ReprKind::CategoryEmbedding,
        TargetTransform::Text => cfg.target_repr == ReprKind::TextEmbedding,
    };
    if !repr_ok {
        v.push(format!(
            "target representation {} cannot come from target {}",
            cfg.target_repr.as_str(),
            cfg.target_transform.as_str()
        ));
    }
    if cfg.target_repr == ReprKind::DensePixels && matches!(mech, Mechanism::StopGradient | Mechanism::EmaTarget) {
        v.push("stop-gradient on raw pixel targets is meaningless".into());
    }
    if !target_encoder_for(cfg.target_repr, cfg.target_transform).contains(&cfg.target_encoder.kind) {
        v.push(format!(
            "target encoder {:?} cannot produce {}",
            cfg.target_encoder.kind,
            cfg.target_repr.as_str()
        ));
    }
    if cfg.target_encoder.kind == TargetEncoderKind::Momentum && !(0.0..1.0).contains(&cfg.target_encoder.ema_coeff) {
        v.push("momentum target encoder needs ema_coeff in (0,1)".into());
    }
    let want = if cfg.target_repr.is_dense() {
        DecoderKind::DenseDecoder
    } else {
        DecoderKind::AttentionPool
    };
    if cfg.decoder.kind != want {
        v.push(format!("{} targets need a {:?} decoder", cfg.target_repr.as_str(), want));
    }
    if cfg.decoder.kind == DecoderKind::DenseDecoder
        && (cfg.decoder.heads == 0 || !cfg.decoder.dim.is_multiple_of(cfg.decoder.heads) || !cfg.decoder.dim.is_multiple_of(4))
    {
        v.push("decoder dim must be divisible by heads and by 4".into());
    }
    if !(0.0..=1.0).contains(&cfg.mask_ratio) {
        v.push("mask ratio must lie in [0,1]".into());
    }
    if cfg.input_transform.is_masked() && !cfg.loss_on_masked_only && cfg.m3i.is_none() {
        v.push("warning: masked input with loss on every position".into());
    }
    match &cfg.m3i {
        Some(m) => {
            if m.semantic_target == TargetTransform::View1 {
                v.push("combined method needs a category or text semantic target".into());
            }
            if m.semantic_head.family != HeadFamily::Boltzmann {
                v.push("semantic targets use a Boltzmann head".into());
            }
            if !(m.gamma > 0.0) {
                v.push("gamma must be positive".into());
            }
            if !(0.0..1.0).contains(&m.grad_ema) {
                v.push("gradient EMA coefficient must lie in (0,1)".into());
            }
            let kinds = target_encoder_for(semantic_repr(m.semantic_target), m.semantic_target);
            if !kinds.contains(&m.semantic_encoder.kind) {
                v.push("semantic target encoder does not match the semantic target".into());
            }
            if cfg.target_repr != ReprKind::DenseFeature || cfg.target_encoder.kind != TargetEncoderKind::Momentum {
                v.push("combined method predicts momentum dense features for image targets".into());
            }
        }
        None => {
            if !cfg.experimental && !taxonomy().contains(&cfg.taxonomy_row()) {
                v.push("combination matches no taxonomy row and is not marked experimental".into());
            }
        }
    }
    v
}
