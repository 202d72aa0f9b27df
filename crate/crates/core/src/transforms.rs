//! View augmentation, blockwise patch masks, patch-aligned two-image mixing
//! and token dropping.

use crate::error::{Error, Result};
use crate::image_ops;
use crate::model::{CropBox, Image, PhotometricOps, Sample, TransformDescriptor, TransformKind, ViewRecord};
use crate::rng::rng_from;
use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Patch-grid binary mask. `1` marks the first image / visible cells, `0`
/// marks the second image / masked cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPattern {
    pub gh: usize,
    pub gw: usize,
    pub patch_size: usize,
    pub ratio: RatioBits,
    cells: Vec<u8>,
}

/// `f64` ratio stored by bit pattern so masks can derive `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioBits(u64);

impl RatioBits {
    pub fn new(r: f64) -> Self {
        Self(r.to_bits())
    }
    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl MaskPattern {
    pub fn from_cells(gh: usize, gw: usize, patch_size: usize, ratio: f64, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != gh * gw || cells.iter().any(|&c| c > 1) {
            return Err(Error::ShapeMismatch(format!(
                "mask needs {} binary cells, got {}",
                gh * gw,
                cells.len()
            )));
        }
        Ok(Self {
            gh,
            gw,
            patch_size,
            ratio: RatioBits::new(ratio),
            cells,
        })
    }

    pub fn all_visible(gh: usize, gw: usize, patch_size: usize) -> Self {
        Self::from_cells(gh, gw, patch_size, 0.0, vec![1; gh * gw]).expect("valid")
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.gw + c]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn zero_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 0).count()
    }

    /// Grid indices with the given cell value, ascending.
    pub fn positions(&self, value: u8) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i] == value).collect()
    }

    pub fn visible_positions(&self) -> Vec<usize> {
        self.positions(1)
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        self.positions(0)
    }

    /// Pixel mask by `p x p` nearest replication.
    pub fn expand(&self) -> Array2<f64> {
        let p = self.patch_size;
        Array2::from_shape_fn((self.gh * p, self.gw * p), |(y, x)| self.get(y / p, x / p) as f64)
    }

    /// Complementary mask (second image's view of the grid).
    pub fn inverted(&self) -> Self {
        let cells = self.cells.iter().map(|&c| 1 - c).collect();
        Self {
            cells,
            ratio: RatioBits::new(1.0 - self.ratio.get()),
            ..*self
        }
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {};", self.gh, self.gw, self.patch_size, self.ratio.get())?;
        for r in 0..self.gh {
            writeln!(f)?;
            for c in 0..self.gw {
                write!(f, "{}", self.get(r, c))?;
            }
        }
        Ok(())
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::ShapeMismatch(format!("mask text: {m}"));
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let header = header.strip_suffix(';').ok_or_else(|| bad("header must end with ';'"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("header needs `gh gw p ratio`"));
        }
        let gh: usize = fields[0].parse().map_err(|_| bad("gh"))?;
        let gw: usize = fields[1].parse().map_err(|_| bad("gw"))?;
        let p: usize = fields[2].parse().map_err(|_| bad("p"))?;
        let ratio: f64 = fields[3].parse().map_err(|_| bad("ratio"))?;
        let mut cells = Vec::with_capacity(gh * gw);
        for _ in 0..gh {
            let row = lines.next().ok_or_else(|| bad("missing row"))?;
            if row.len() != gw {
                return Err(bad("row width"));
            }
            for ch in row.chars() {
                match ch {
                    '0' => cells.push(0),
                    '1' => cells.push(1),
                    _ => return Err(bad("cells must be 0/1")),
                }
            }
        }
        MaskPattern::from_cells(gh, gw, p, ratio, cells)
    }
}

/// Augmentation recipe: random resized crop, flip, color jitter, grayscale,
/// blur and solarize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub crop_scale_range: (f64, f64),
    pub flip_prob: f64,
    pub jitter_strength: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub solarize_prob: f64,
    pub out_resolution: (usize, usize),
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            crop_scale_range: (0.35, 1.0),
            flip_prob: 0.5,
            jitter_strength: 0.3,
            grayscale_prob: 0.1,
            blur_prob: 0.2,
            solarize_prob: 0.1,
            out_resolution: (32, 32),
        }
    }
}

impl AugmentSpec {
    /// Spec that leaves the (resized) source untouched.
    pub fn none(out_resolution: (usize, usize)) -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_strength: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            solarize_prob: 0.0,
            out_resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.flip_prob, self.grayscale_prob, self.blur_prob, self.solarize_prob];
        let (lo, hi) = self.crop_scale_range;
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::ConfigInvalid("augmentation probabilities must lie in [0,1]".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::ConfigInvalid(format!("crop scale range ({lo}, {hi}) invalid")));
        }
        if !(0.0..1.0).contains(&self.jitter_strength) {
            return Err(Error::ConfigInvalid("jitter strength must lie in [0,1)".into()));
        }
        Ok(())
    }

    fn realize_photometric(&self, photometric_seed: u64) -> PhotometricOps {
        let mut rng = rng_from(&[photometric_seed]);
        let s = self.jitter_strength;
        let jitter = |rng: &mut rand_chacha::ChaCha8Rng| {
            if s > 0.0 {
                rng.random_range(1.0 - s..=1.0 + s)
            } else {
                1.0
            }
        };
        let brightness = jitter(&mut rng);
        let contrast = jitter(&mut rng);
        let saturation = jitter(&mut rng);
        let grayscale = rng.random::<f64>() < self.grayscale_prob;
        let blur_sigma = if rng.random::<f64>() < self.blur_prob {
            Some(rng.random_range(0.1..=1.5))
        } else {
            None
        };
        let solarize = rng.random::<f64>() < self.solarize_prob;
        PhotometricOps {
            brightness,
            contrast,
            saturation,
            grayscale,
            blur_sigma,
            solarize,
        }
    }
}

fn sample_crop(rng: &mut impl Rng, h: usize, w: usize, (lo, hi): (f64, f64)) -> CropBox {
    let area = (h * w) as f64;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return CropBox {
                top,
                left,
                height: ch,
                width: cw,
            };
        }
    }
    // central fallback
    let side = ((area * hi).sqrt().round() as usize).clamp(1, h.min(w));
    CropBox {
        top: (h - side) / 2,
        left: (w - side) / 2,
        height: side,
        width: side,
    }
}

/// Draws one augmented view. The returned descriptor replays to the same
/// pixels through [`crate::model::replay_transform`].
pub fn sample_augmentation(sample: &Sample, spec: &AugmentSpec, rng_seed: u64) -> Result<ViewRecord> {
    let (h, w, _) = sample.dims();
    let min_area = (h * w) as f64 * spec.crop_scale_range.0;
    if h == 0 || w == 0 || min_area < 1.0 {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: 1,
        });
    }
    let mut rng = rng_from(&[rng_seed, 0xA46]);
    let crop = sample_crop(&mut rng, h, w, spec.crop_scale_range);
    let flip = rng.random::<f64>() < spec.flip_prob;
    let photometric_seed: u64 = rng.random();
    let descriptor = TransformDescriptor {
        kind: TransformKind::Augment,
        crop_box: Some(crop),
        flip,
        photometric_seed,
        photometric: spec.realize_photometric(photometric_seed),
        out_resolution: spec.out_resolution,
        mask_ref: None,
    };
    crate::model::replay_transform(sample, &descriptor)
}

/// Blockwise mask with exactly `round(ratio * gh * gw)` masked cells.
///
/// Rectangles with aspect ratio in `[0.3, 1/0.3]` and area at most a quarter
/// of the remaining budget (never below 4 cells) are placed until no further
/// progress is made; the remainder is filled by growing the masked region
/// into adjacent cells.
pub fn generate_blockwise_mask(gh: usize, gw: usize, ratio: f64, p: usize, rng_seed: u64) -> MaskPattern {
    let total = gh * gw;
    let ratio = ratio.clamp(0.0, 1.0);
    let target = (ratio * total as f64).round() as usize;
    let mut cells = vec![1u8; total];
    let mut masked = 0usize;
    let mut rng = rng_from(&[rng_seed, 0xB10C]);
    let (log_lo, log_hi) = (0.3f64.ln(), (1.0f64 / 0.3).ln());
    let mut failures = 0;
    while masked < target && failures < 20 {
        let remaining = target - masked;
        let max_area = (remaining / 4).max(4.min(remaining));
        let min_area = 4.min(max_area);
        let area = rng.random_range(min_area..=max_area) as f64;
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let bh = ((area * aspect).sqrt().round() as usize).max(1);
        let bw = ((area / aspect).sqrt().round() as usize).max(1);
        if bh > gh || bw > gw {
            failures += 1;
            continue;
        }
        let top = rng.random_range(0..=gh - bh);
        let left = rng.random_range(0..=gw - bw);
        let fresh = (top..top + bh)
            .flat_map(|r| (left..left + bw).map(move |c| r * gw + c))
            .filter(|&i| cells[i] == 1)
            .count();
        if fresh == 0 || fresh > remaining {
            failures += 1;
            continue;
        }
        for r in top..top + bh {
            for c in left..left + bw {
                cells[r * gw + c] = 0;
            }
        }
        masked += fresh;
        failures = 0;
    }
    while masked < target {
        let frontier: Vec<usize> = (0..total)
            .filter(|&i| cells[i] == 1)
            .filter(|&i| {
                let (r, c) = (i / gw, i % gw);
                (r > 0 && cells[i - gw] == 0)
                    || (r + 1 < gh && cells[i + gw] == 0)
                    || (c > 0 && cells[i - 1] == 0)
                    || (c + 1 < gw && cells[i + 1] == 0)
            })
            .collect();
        let pool: Vec<usize> = if frontier.is_empty() {
            (0..total).filter(|&i| cells[i] == 1).collect()
        } else {
            frontier
        };
        let pick = pool[rng.random_range(0..pool.len())];
        cells[pick] = 0;
        masked += 1;
    }
    MaskPattern::from_cells(gh, gw, p, ratio, cells).expect("valid cells")
}

/// `m * a + (1 - m) * b` with the mask expanded to pixels.
pub fn mix_views(view_a: &ViewRecord, view_b: &ViewRecord, mask: &MaskPattern) -> Result<Image> {
    mix_pixels(&view_a.pixels, &view_b.pixels, mask)
}

pub fn mix_pixels(a: &Image, b: &Image, mask: &MaskPattern) -> Result<Image> {
    let (h, w, c) = a.dim();
    if b.dim() != (h, w, c) || h != mask.gh * mask.patch_size || w != mask.gw * mask.patch_size {
        return Err(Error::ShapeMismatch(format!(
            "cannot mix {:?} and {:?} with a {}x{} mask of patch {}",
            a.dim(),
            b.dim(),
            mask.gh,
            mask.gw,
            mask.patch_size
        )));
    }
    let m = mask.expand();
    Ok(Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        let mv = m[[y, x]];
        mv * a[[y, x, ch]] + (1.0 - mv) * b[[y, x, ch]]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    Drop,
    MaskToken,
}

/// Tokens surviving a mask, each tagged with its original grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub values: Array2<f64>,
    pub positions: Vec<usize>,
}

/// Removes masked tokens (`Drop`) or overwrites them with `mask_embedding`
/// keeping every position (`MaskToken`).
pub fn apply_token_drop(
    patch_tokens: &Array2<f64>,
    mask: &MaskPattern,
    mode: TokenMode,
    mask_embedding: Option<&[f64]>,
) -> Result<TokenSet> {
    if patch_tokens.nrows() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tokens for a {}-cell mask",
            patch_tokens.nrows(),
            mask.len()
        )));
    }
    match mode {
        TokenMode::Drop => {
            let positions = mask.visible_positions();
            Ok(TokenSet {
                values: patch_tokens.select(ndarray::Axis(0), &positions),
                positions,
            })
        }
        TokenMode::MaskToken => {
            let d = patch_tokens.ncols();
            let emb = mask_embedding.ok_or_else(|| Error::ShapeMismatch("mask_token mode needs an embedding".into()))?;
            if emb.len() != d {
                return Err(Error::ShapeMismatch(format!("mask embedding of dim {} for tokens of dim {d}", emb.len())));
            }
            let mut values = patch_tokens.clone();
            for i in mask.masked_positions() {
                values.row_mut(i).assign(&ndarray::ArrayView1::from(emb));
            }
            Ok(TokenSet {
                values,
                positions: (0..mask.len()).collect(),
            })
        }
    }
}

/// Patchified pixels of a view (`grid x p*p*C`).
pub fn view_patches(view: &ViewRecord, p: usize) -> Array2<f64> {
    image_ops::patchify(&view.pixels, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::replay_transform;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn sample(seed: u64) -> Sample {
        Sample::new(
            seed,
            Array3::from_shape_fn((32, 32, 3), |(y, x, c)| ((y * 13 + x * 7 + c * 3 + seed as usize) % 17) as f64 / 16.0),
        )
    }

    fn view(pixels: Image) -> ViewRecord {
        let (h, w, _) = pixels.dim();
        ViewRecord {
            pixels,
            descriptor: TransformDescriptor::identity(h, w, (h, w)),
            source_sample_id: 0,
        }
    }

    #[test]
    fn no_op_augmentation_equals_source() {
        let s = sample(1);
        let v = sample_augmentation(&s, &AugmentSpec::none((32, 32)), 99).unwrap();
        assert_eq!(v.pixels, s.image);
        assert!(!v.descriptor.flip);
    }

    #[test]
    fn augmentation_is_deterministic_per_seed() {
        let s = sample(2);
        let spec = AugmentSpec::default();
        assert_eq!(sample_augmentation(&s, &spec, 5).unwrap(), sample_augmentation(&s, &spec, 5).unwrap());
    }

    #[test]
    fn distinct_seeds_rarely_collide() {
        // Crop geometry alone takes thousands of values on a 32x32 source;
        // with the flip bit the birthday bound for 1000 draws allows a
        // handful of geometric collisions, while full descriptors (carrying
        // a 64-bit photometric seed) must never collide.
        let s = sample(3);
        let spec = AugmentSpec::default();
        let mut full = HashSet::new();
        let mut geometry = HashSet::new();
        let mut cardinality = HashSet::new();
        for seed in 0..1000u64 {
            let d = sample_augmentation(&s, &spec, seed).unwrap().descriptor;
            full.insert(format!("{d:?}"));
            geometry.insert((d.crop_box, d.flip));
            cardinality.insert(d.crop_box.map(|c| (c.height, c.width)));
        }
        assert_eq!(full.len(), 1000);
        // distinct crop sizes observed times positions per size bounds the space
        assert!(cardinality.len() > 20);
        assert!(geometry.len() > 900, "only {} distinct geometries", geometry.len());
    }

    #[test]
    fn image_too_small() {
        let s = Sample::new(0, Array3::zeros((0, 0, 3)));
        assert!(matches!(
            sample_augmentation(&s, &AugmentSpec::default(), 0),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn mask_extremes_and_half() {
        assert!(generate_blockwise_mask(14, 14, 0.0, 16, 1).cells().iter().all(|&c| c == 1));
        assert!(generate_blockwise_mask(14, 14, 1.0, 16, 1).cells().iter().all(|&c| c == 0));
        assert_eq!(generate_blockwise_mask(14, 14, 0.5, 16, 7).zero_count(), 98);
    }

    #[test]
    fn blockwise_masks_are_clumped() {
        // Fraction of masked cells' 4-neighbours that are also masked. For
        // i.i.d. masking at ratio 0.5 this is about 0.5.
        let mut same = 0usize;
        let mut total = 0usize;
        for seed in 0..50 {
            let m = generate_blockwise_mask(14, 14, 0.5, 16, seed);
            for r in 0..14 {
                for c in 0..14 {
                    if m.get(r, c) != 0 {
                        continue;
                    }
                    for (dr, dc) in [(0i32, 1i32), (1, 0), (0, -1), (-1, 0)] {
                        let (rr, cc) = (r as i32 + dr, c as i32 + dc);
                        if (0..14).contains(&rr) && (0..14).contains(&cc) {
                            total += 1;
                            same += (m.get(rr as usize, cc as usize) == 0) as usize;
                        }
                    }
                }
            }
        }
        let frac = same as f64 / total as f64;
        assert!(frac > 0.7, "masked-neighbour fraction {frac}");
    }

    #[test]
    fn mix_hand_example() {
        let mask = MaskPattern::from_cells(2, 2, 2, 0.5, vec![1, 0, 0, 1]).unwrap();
        let a = view(Array3::from_elem((4, 4, 1), 1.0));
        let b = view(Array3::zeros((4, 4, 1)));
        let out = mix_views(&a, &b, &mask).unwrap();
        let expected = [
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
        ];
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out[[y, x, 0]], expected[y][x]);
            }
        }
        let small = view(Array3::zeros((2, 2, 1)));
        assert!(matches!(mix_views(&a, &small, &mask), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn token_drop_modes() {
        let tokens = Array2::from_shape_fn((196, 8), |(i, j)| (i * 8 + j) as f64);
        let ones = MaskPattern::all_visible(14, 14, 16);
        let kept = apply_token_drop(&tokens, &ones, TokenMode::Drop, None).unwrap();
        assert_eq!(kept.values, tokens);

        let m = generate_blockwise_mask(14, 14, 0.5, 16, 3);
        let kept = apply_token_drop(&tokens, &m, TokenMode::Drop, None).unwrap();
        assert_eq!(kept.values.nrows(), 98);
        assert_eq!(kept.positions, m.visible_positions());
        for (row, &pos) in kept.positions.iter().enumerate() {
            assert_eq!(kept.values.row(row), tokens.row(pos));
        }

        let emb = vec![-1.0; 8];
        let full = apply_token_drop(&tokens, &m, TokenMode::MaskToken, Some(&emb)).unwrap();
        assert_eq!(full.values.nrows(), 196);
        for i in m.masked_positions() {
            assert!(full.values.row(i).iter().all(|&v| v == -1.0));
        }
        assert!(apply_token_drop(&tokens.slice(ndarray::s![..10, ..]).to_owned(), &m, TokenMode::Drop, None).is_err());
    }

    #[test]
    fn mask_text_form() {
        let m = MaskPattern::from_cells(2, 3, 4, 0.5, vec![1, 0, 0, 1, 1, 0]).unwrap();
        let text = m.to_string();
        assert_eq!(text, "2 3 4 0.5;\n100\n110");
        assert_eq!(text.parse::<MaskPattern>().unwrap(), m);
        assert!("2 3 4 0.5\n100\n110".parse::<MaskPattern>().is_err());
    }

    proptest! {
        #[test]
        fn zero_count_is_exact(gh in 1usize..16, gw in 1usize..16, ratio in 0.0f64..=1.0, seed: u64) {
            let m = generate_blockwise_mask(gh, gw, ratio, 4, seed);
            prop_assert_eq!(m.zero_count(), (ratio * (gh * gw) as f64).round() as usize);
        }

        #[test]
        fn expanded_mask_is_block_constant(gh in 1usize..8, gw in 1usize..8, p in 1usize..5, seed: u64) {
            let m = generate_blockwise_mask(gh, gw, 0.5, p, seed);
            let px = m.expand();
            for y in 0..gh * p {
                for x in 0..gw * p {
                    prop_assert_eq!(px[[y, x]], px[[y - y % p, x - x % p]]);
                }
            }
        }

        #[test]
        fn augmentation_replays_bit_exactly(seed: u64, sid in 0u64..50) {
            let s = sample(sid);
            let v = sample_augmentation(&s, &AugmentSpec::default(), seed).unwrap();
            let r = replay_transform(&s, &v.descriptor).unwrap();
            prop_assert_eq!(v, r);
        }

        #[test]
        fn mask_text_round_trips(gh in 1usize..10, gw in 1usize..10, ratio in 0.0f64..=1.0, seed: u64) {
            let m = generate_blockwise_mask(gh, gw, ratio, 4, seed);
            prop_assert_eq!(m.to_string().parse::<MaskPattern>().unwrap(), m);
        }
    }
}
