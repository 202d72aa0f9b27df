//! Shared domain types: samples, transform descriptors, views and
//! representations.

use crate::error::{Error, Result};
use crate::methods::{MethodConfig, TargetTransform};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// H x W x C image with values in `[0, 1]`, channel-last.
pub type Image = Array3<f64>;

/// One training record: an image with optional category and caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: Image,
    pub category: Option<usize>,
    pub caption: Option<Vec<u32>>,
}

impl Sample {
    pub fn new(id: u64, image: Image) -> Self {
        Self {
            id,
            image,
            category: None,
            caption: None,
        }
    }

    pub fn with_category(mut self, c: usize) -> Self {
        self.category = Some(c);
        self
    }

    pub fn with_caption(mut self, tokens: Vec<u32>) -> Self {
        self.caption = Some(tokens);
        self
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.image.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Augment,
    AugmentMasked,
    IdentityView,
    GetCategory,
    GetCaption,
}

impl TransformKind {
    pub fn is_image(self) -> bool {
        matches!(
            self,
            TransformKind::Augment | TransformKind::AugmentMasked | TransformKind::IdentityView
        )
    }
}

/// Crop rectangle in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height: h,
            width: w,
        }
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= h && self.left + self.width <= w
    }

    /// Overlap area with another box, in source pixels.
    pub fn intersection_area(&self, other: &CropBox) -> usize {
        let top = self.top.max(other.top);
        let left = self.left.max(other.left);
        let bottom = (self.top + self.height).min(other.top + other.height);
        let right = (self.left + self.width).min(other.left + other.width);
        bottom.saturating_sub(top) * right.saturating_sub(left)
    }
}

/// Photometric operations realized from a photometric seed. Stored with the
/// descriptor so that replay needs nothing but the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricOps {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
    pub solarize: bool,
}

impl PhotometricOps {
    pub const IDENTITY: PhotometricOps = PhotometricOps {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        grayscale: false,
        blur_sigma: None,
        solarize: false,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Everything needed to reproduce a view from its source sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDescriptor {
    pub kind: TransformKind,
    pub crop_box: Option<CropBox>,
    pub flip: bool,
    pub photometric_seed: u64,
    pub photometric: PhotometricOps,
    pub out_resolution: (usize, usize),
    pub mask_ref: Option<u64>,
}

impl TransformDescriptor {
    /// Whole-image view resized to `out_resolution` with no augmentation.
    pub fn identity(src_h: usize, src_w: usize, out_resolution: (usize, usize)) -> Self {
        Self {
            kind: TransformKind::IdentityView,
            crop_box: Some(CropBox::full(src_h, src_w)),
            flip: false,
            photometric_seed: 0,
            photometric: PhotometricOps::IDENTITY,
            out_resolution,
            mask_ref: None,
        }
    }

    pub fn semantic(kind: TransformKind) -> Self {
        debug_assert!(!kind.is_image());
        Self {
            kind,
            crop_box: None,
            flip: false,
            photometric_seed: 0,
            photometric: PhotometricOps::IDENTITY,
            out_resolution: (0, 0),
            mask_ref: None,
        }
    }

    /// Geometry equality: same crop, flip and resolution.
    pub fn same_geometry(&self, other: &TransformDescriptor) -> bool {
        self.crop_box == other.crop_box && self.flip == other.flip && self.out_resolution == other.out_resolution
    }
}

/// An augmented view together with the descriptor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub pixels: Image,
    pub descriptor: TransformDescriptor,
    pub source_sample_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprKind {
    DensePixels,
    DenseFeature,
    GlobalFeature,
    CategoryEmbedding,
    TextEmbedding,
}

impl ReprKind {
    pub fn is_dense(self) -> bool {
        matches!(self, ReprKind::DensePixels | ReprKind::DenseFeature)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReprKind::DensePixels => "dense_pixels",
            ReprKind::DenseFeature => "dense_feature",
            ReprKind::GlobalFeature => "global_feature",
            ReprKind::CategoryEmbedding => "category_embedding",
            ReprKind::TextEmbedding => "text_embedding",
        }
    }
}

/// A representation of one input or target. Dense kinds hold one row per
/// patch (`positions` lists the grid index of every row when only a subset of
/// the grid is present); global kinds hold a single `1 x dim` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub kind: ReprKind,
    pub values: Array2<f64>,
    pub grid: Option<(usize, usize)>,
    pub positions: Option<Vec<usize>>,
}

impl Representation {
    pub fn dense(kind: ReprKind, values: Array2<f64>, grid: (usize, usize)) -> Result<Self> {
        if !kind.is_dense() {
            return Err(Error::KindMismatch(format!("{} is not a dense kind", kind.as_str())));
        }
        if values.nrows() != grid.0 * grid.1 {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for a {}x{} grid",
                values.nrows(),
                grid.0,
                grid.1
            )));
        }
        Ok(Self {
            kind,
            values,
            grid: Some(grid),
            positions: None,
        })
    }

    pub fn global(kind: ReprKind, vector: Vec<f64>) -> Result<Self> {
        if kind.is_dense() {
            return Err(Error::KindMismatch(format!("{} is not a global kind", kind.as_str())));
        }
        let n = vector.len();
        Ok(Self {
            kind,
            values: Array2::from_shape_vec((1, n), vector).expect("row shape"),
            grid: None,
            positions: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRole {
    Ssp,
    Sp,
}

/// One group of targets predicted jointly by a single head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGroupSpec {
    pub index: usize,
    pub member_targets: Vec<usize>,
    pub head: usize,
    pub role: LossRole,
}

/// Checks that `groups` are non-overlapping and together cover `targets`.
pub fn check_partition(groups: &[TargetGroupSpec], targets: &[usize]) -> Result<()> {
    let universe: BTreeSet<usize> = targets.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.member_targets.is_empty() {
            return Err(Error::PartitionViolation(format!("group {} is empty", g.index)));
        }
        for &t in &g.member_targets {
            if !universe.contains(&t) {
                return Err(Error::PartitionViolation(format!(
                    "group {} names unknown target {t}",
                    g.index
                )));
            }
            if !seen.insert(t) {
                return Err(Error::PartitionViolation(format!("target {t} appears in two groups")));
            }
        }
    }
    if seen != universe {
        let missing: Vec<_> = universe.difference(&seen).collect();
        return Err(Error::PartitionViolation(format!("targets {missing:?} not covered")));
    }
    Ok(())
}

/// Checks that every sample carries what `config` needs and that image
/// shapes agree. Returns the batch unchanged.
pub fn validate_batch<'a>(batch: &'a [Sample], config: &MethodConfig) -> Result<&'a [Sample]> {
    let first = batch
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let dims = first.dims();
    let p = config.encoder.patch_size;
    if p == 0 || dims.0 % p != 0 || dims.1 % p != 0 {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} not divisible by patch size {p}",
            dims.0, dims.1
        )));
    }
    let (need_category, need_caption) = config.required_fields();
    for s in batch {
        if s.dims() != dims {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has shape {:?}, expected {:?}",
                s.id,
                s.dims(),
                dims
            )));
        }
        if need_category && s.category.is_none() {
            return Err(Error::MissingTargetField {
                sample_id: s.id,
                field: "category",
                method: config.name.clone(),
            });
        }
        if need_caption && s.caption.is_none() {
            return Err(Error::MissingTargetField {
                sample_id: s.id,
                field: "caption",
                method: config.name.clone(),
            });
        }
    }
    Ok(batch)
}

impl MethodConfig {
    /// `(needs category, needs caption)`
    pub fn required_fields(&self) -> (bool, bool) {
        let semantic = self.m3i.as_ref().map(|m| m.semantic_target);
        let cat = self.target_transform == TargetTransform::Category || semantic == Some(TargetTransform::Category);
        let cap = self.target_transform == TargetTransform::Text || semantic == Some(TargetTransform::Text);
        (cat, cap)
    }
}

/// Reproduces a view from its source sample. Pure: identical inputs give
/// bit-identical pixels.
pub fn replay_transform(sample: &Sample, descriptor: &TransformDescriptor) -> Result<ViewRecord> {
    if !descriptor.kind.is_image() {
        return Err(Error::KindMismatch(format!(
            "{:?} descriptors carry no image geometry",
            descriptor.kind
        )));
    }
    let (h, w, _) = sample.dims();
    let crop = descriptor
        .crop_box
        .ok_or_else(|| Error::GeometryOutOfBounds("image descriptor without crop box".into()))?;
    if !crop.fits(h, w) {
        return Err(Error::GeometryOutOfBounds(format!(
            "crop {crop:?} does not fit a {h}x{w} image"
        )));
    }
    let (oh, ow) = descriptor.out_resolution;
    if oh == 0 || ow == 0 {
        return Err(Error::GeometryOutOfBounds("zero output resolution".into()));
    }
    let mut pixels = crate::image_ops::crop_resize(&sample.image, &crop, oh, ow);
    if descriptor.flip {
        crate::image_ops::flip_horizontal(&mut pixels);
    }
    crate::image_ops::apply_photometric(&mut pixels, &descriptor.photometric);
    Ok(ViewRecord {
        pixels,
        descriptor: descriptor.clone(),
        source_sample_id: sample.id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::get_method;
    use proptest::prelude::*;

    fn image(h: usize, w: usize, seed: u64) -> Image {
        Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
            (((i * 31 + j * 17 + c * 7) as u64 ^ seed) % 256) as f64 / 255.0
        })
    }

    fn labelled(id: u64) -> Sample {
        Sample::new(id, image(32, 32, id))
            .with_category(1)
            .with_caption(vec![1, 2, 8])
    }

    #[test]
    fn validate_passes_valid_batches_through() {
        let batch: Vec<_> = (0..4).map(|i| Sample::new(i, image(32, 32, i)).with_category(0)).collect();
        let cfg = get_method("image_classification").unwrap();
        assert_eq!(validate_batch(&batch, &cfg).unwrap(), &batch[..]);

        let full: Vec<_> = (0..8).map(labelled).collect();
        let m3i = get_method("m3i").unwrap();
        assert_eq!(validate_batch(&full, &m3i).unwrap().len(), 8);
    }

    #[test]
    fn validate_rejects_missing_caption_and_shape_mismatch() {
        let mut batch: Vec<_> = (0..4).map(labelled).collect();
        batch[2].caption = None;
        let clip = get_method("clip").unwrap();
        assert!(matches!(
            validate_batch(&batch, &clip),
            Err(Error::MissingTargetField { sample_id: 2, field: "caption", .. })
        ));

        let mut batch: Vec<_> = (0..3).map(labelled).collect();
        batch[1].image = image(16, 16, 0);
        assert!(matches!(validate_batch(&batch, &clip), Err(Error::ShapeMismatch(_))));
        assert!(matches!(validate_batch(&[], &clip), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn identity_view_reproduces_source() {
        let s = labelled(3);
        let d = TransformDescriptor::identity(32, 32, (32, 32));
        let v = replay_transform(&s, &d).unwrap();
        assert_eq!(v.pixels, s.image);
        assert_eq!(v.source_sample_id, 3);
    }

    #[test]
    fn replay_rejects_out_of_bounds_crop() {
        let s = labelled(0);
        let mut d = TransformDescriptor::identity(32, 32, (32, 32));
        d.crop_box = Some(CropBox {
            top: 10,
            left: 0,
            height: 30,
            width: 8,
        });
        assert!(matches!(replay_transform(&s, &d), Err(Error::GeometryOutOfBounds(_))));
        let sem = TransformDescriptor::semantic(TransformKind::GetCategory);
        assert!(replay_transform(&s, &sem).is_err());
    }

    #[test]
    fn partition_checks() {
        let g = |i, m: Vec<usize>| TargetGroupSpec {
            index: i,
            member_targets: m,
            head: i,
            role: LossRole::Ssp,
        };
        assert!(check_partition(&[g(0, vec![0, 1]), g(1, vec![2, 3])], &[0, 1, 2, 3]).is_ok());
        assert!(check_partition(&[g(0, vec![0, 1]), g(1, vec![1, 2, 3])], &[0, 1, 2, 3]).is_err());
        assert!(check_partition(&[g(0, vec![0, 1])], &[0, 1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn replay_is_pure(top in 0usize..16, left in 0usize..16, hh in 1usize..16, ww in 1usize..16,
                          flip: bool, seed: u64) {
            let s = Sample::new(0, image(32, 32, seed));
            let mut d = TransformDescriptor::identity(32, 32, (16, 16));
            d.kind = TransformKind::Augment;
            d.crop_box = Some(CropBox { top, left, height: hh, width: ww });
            d.flip = flip;
            d.photometric = PhotometricOps { brightness: 1.1, contrast: 0.9, saturation: 0.8,
                grayscale: seed % 2 == 0, blur_sigma: Some(0.7), solarize: seed % 3 == 0 };
            let a = replay_transform(&s, &d).unwrap();
            let b = replay_transform(&s, &d).unwrap();
            prop_assert_eq!(a.pixels.as_slice().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.pixels.as_slice().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn partition_of_random_split(n in 1usize..12, cut in 0usize..12) {
            let targets: Vec<usize> = (0..n).collect();
            let cut = cut.min(n);
            let mut groups = vec![];
            if cut > 0 { groups.push(TargetGroupSpec { index: 0, member_targets: targets[..cut].to_vec(), head: 0, role: LossRole::Ssp }); }
            if cut < n { groups.push(TargetGroupSpec { index: 1, member_targets: targets[cut..].to_vec(), head: 1, role: LossRole::Sp }); }
            prop_assert!(check_partition(&groups, &targets).is_ok());
        }
    }
}
