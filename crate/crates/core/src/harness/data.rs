//! Synthetic shapes dataset: one colored shape on a textured background,
//! with a category label and a templated caption per image.
//!
//! On disk a dataset is a directory holding `spec.json`, a tab-separated
//! `index.tsv` (`id split category caption file`) and one binary PPM per
//! sample under `records/`.

use super::vocab::{tokenize, COLORS, PALETTE, SHAPES};
use crate::error::{Error, Result};
use crate::model::{Image, Sample};
use crate::rng::rng_from;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShapesSpec {
    pub num_classes: usize,
    pub resolution: usize,
    pub colors: Vec<String>,
    pub caption_template: String,
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl Default for SyntheticShapesSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            resolution: 32,
            colors: COLORS[..4].iter().map(|s| s.to_string()).collect(),
            caption_template: "a {color} {shape}".into(),
            train_size: 2000,
            val_size: 500,
            seed: 0,
        }
    }
}

impl SyntheticShapesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > SHAPES.len() {
            return Err(Error::ConfigInvalid(format!(
                "num_classes must be in 1..={}, got {}",
                SHAPES.len(),
                self.num_classes
            )));
        }
        if self.resolution < 8 {
            return Err(Error::ConfigInvalid(format!("resolution {} below 8", self.resolution)));
        }
        if self.colors.is_empty() {
            return Err(Error::ConfigInvalid("empty color palette".into()));
        }
        for c in &self.colors {
            if !COLORS.contains(&c.as_str()) {
                return Err(Error::ConfigInvalid(format!("unknown color `{c}`")));
            }
        }
        if self.train_size == 0 {
            return Err(Error::ConfigInvalid("train split is empty".into()));
        }
        tokenize(&self.caption(0, 0))?;
        Ok(())
    }

    pub fn caption(&self, color: usize, shape: usize) -> String {
        self.caption_template
            .replace("{color}", &self.colors[color])
            .replace("{shape}", SHAPES[shape])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticShapesSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        0 => dx.hypot(dy) <= r,
        1 => dx.abs().max(dy.abs()) <= 0.85 * r,
        2 => {
            let t = (dy + r) / (1.7 * r);
            (0.0..=1.0).contains(&t) && dx.abs() <= t * r
        }
        3 => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        4 => {
            let d = dx.hypot(dy);
            (0.55 * r..=r).contains(&d)
        }
        _ => dx.abs() + dy.abs() <= r,
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders sample `id`. Returns the image and its color index.
pub fn render_sample(spec: &SyntheticShapesSpec, id: u64, shape: usize) -> (Image, usize) {
    let mut rng = rng_from(&[spec.seed, id, 0x5A4E]);
    let n = spec.resolution;
    let color = rng.random_range(0..spec.colors.len());
    let rgb = PALETTE[COLORS.iter().position(|c| *c == spec.colors[color]).expect("validated color")];
    let base: f64 = rng.random_range(0.25..0.55);
    let tint: [f64; 3] = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    let freq: f64 = rng.random_range(0.3..0.9);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let nf = n as f64;
    let r = rng.random_range(0.22..0.38) * nf;
    let cy = rng.random_range(r + 1.0..nf - r - 1.0);
    let cx = rng.random_range(r + 1.0..nf - r - 1.0);
    let jitter: [f64; 3] = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    let mut img = Array3::zeros((n, n, 3));
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let stripe = 0.05 * (freq * (fx * angle.cos() + fy * angle.sin()) + phase).sin();
            let on = inside(shape, fx - cx, fy - cy, r);
            for c in 0..3 {
                let noise: f64 = rng.random_range(-0.04..0.04);
                let v = if on {
                    rgb[c] + jitter[c] + noise
                } else {
                    base + tint[c] + stripe + noise
                };
                img[[y, x, c]] = quantize(v);
            }
        }
    }
    (img, color)
}

/// Builds the dataset in memory. Sample `k` (train first, then val) has
/// class `k % num_classes`.
pub fn generate_shapes(spec: &SyntheticShapesSpec) -> Result<Dataset> {
    spec.validate()?;
    let total = spec.train_size + spec.val_size;
    let mut samples = Vec::with_capacity(total);
    for id in 0..total as u64 {
        let class = (id % spec.num_classes as u64) as usize;
        let (img, color) = render_sample(spec, id, class);
        let caption = tokenize(&spec.caption(color, class))?;
        samples.push(Sample::new(id, img).with_category(class).with_caption(caption));
    }
    let val = samples.split_off(spec.train_size);
    Ok(Dataset {
        spec: spec.clone(),
        train: samples,
        val,
    })
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::DiskWriteError {
        path: path.display().to_string(),
        source,
    }
}

fn ppm_bytes(img: &Image) -> Vec<u8> {
    let (h, w, _) = img.dim();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.iter().map(|&v| (v * 255.0).round() as u8));
    out
}

fn parse_ppm(bytes: &[u8], name: &str) -> Result<Image> {
    let bad = |d: &str| Error::ConfigInvalid(format!("record {name}: {d}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P6 image"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let data = &bytes[pos + 1..];
    if data.len() != h * w * 3 {
        return Err(bad("pixel payload has the wrong length"));
    }
    Ok(Array3::from_shape_vec((h, w, 3), data.iter().map(|&b| b as f64 / 255.0).collect()).expect("length checked"))
}

/// Writes the dataset container into `dir`, creating it if needed.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let records = dir.join("records");
    fs::create_dir_all(&records).map_err(write_err(&records))?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&ds.spec).expect("spec serializes")).map_err(write_err(&spec_path))?;
    let index_path = dir.join("index.tsv");
    let mut index = String::from("id\tsplit\tcategory\tcaption\tfile\n");
    for (split, samples) in [("train", &ds.train), ("val", &ds.val)] {
        for s in samples.iter() {
            let file = format!("records/{:06}.ppm", s.id);
            let path = dir.join(&file);
            fs::write(&path, ppm_bytes(&s.image)).map_err(write_err(&path))?;
            let caption = super::vocab::detokenize(s.caption.as_deref().unwrap_or(&[]));
            index.push_str(&format!("{}\t{split}\t{}\t{caption}\t{file}\n", s.id, s.category.unwrap_or(0)));
        }
    }
    let mut f = fs::File::create(&index_path).map_err(write_err(&index_path))?;
    f.write_all(index.as_bytes()).map_err(write_err(&index_path))?;
    Ok(())
}

/// Reads a dataset container written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let spec: SyntheticShapesSpec = serde_json::from_str(&fs::read_to_string(dir.join("spec.json"))?)
        .map_err(|e| Error::ConfigInvalid(format!("spec.json: {e}")))?;
    let index = fs::read_to_string(dir.join("index.tsv"))?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (n, line) in index.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::ConfigInvalid(format!("index.tsv line {}: malformed", n + 1));
        if cols.len() != 5 {
            return Err(bad());
        }
        let id: u64 = cols[0].parse().map_err(|_| bad())?;
        let category: usize = cols[2].parse().map_err(|_| bad())?;
        let image = parse_ppm(&fs::read(dir.join(cols[4]))?, cols[4])?;
        let s = Sample::new(id, image).with_category(category).with_caption(tokenize(cols[3])?);
        match cols[1] {
            "train" => train.push(s),
            "val" => val.push(s),
            _ => return Err(bad()),
        }
    }
    Ok(Dataset { spec, train, val })
}

/// SHA-256 over the index and every record, in index order.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let index = fs::read(dir.join("index.tsv"))?;
    h.update(&index);
    for line in String::from_utf8_lossy(&index).lines().skip(1) {
        if let Some(file) = line.split('\t').nth(4) {
            h.update(fs::read(dir.join(file))?);
        }
    }
    h.update(fs::read(dir.join("spec.json"))?);
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_labels() {
        let spec = SyntheticShapesSpec {
            train_size: 40,
            val_size: 8,
            ..Default::default()
        };
        let ds = generate_shapes(&spec).unwrap();
        let mut counts = [0; 4];
        for s in &ds.train {
            counts[s.category.unwrap()] += 1;
        }
        assert_eq!(counts, [10; 4]);
        assert_eq!(ds.val[0].id, 40);
    }

    #[test]
    fn ppm_round_trip_is_exact() {
        let spec = SyntheticShapesSpec::default();
        let (img, _) = render_sample(&spec, 3, 1);
        assert_eq!(parse_ppm(&ppm_bytes(&img), "x").unwrap(), img);
    }
}
