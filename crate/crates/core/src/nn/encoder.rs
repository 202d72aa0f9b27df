use super::layers::{grid_coords, posemb_1d, posemb_2d, segments_for, Block, LayerNorm, Linear};
use super::params::{ParamStore, Weights};
use crate::autograd::{Graph, NodeId, ParamId};
use crate::error::{Error, Result};
use crate::image_ops::patchify;
use crate::model::Image;
use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fixed input standardization applied to pixels before patch embedding.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub view_resolution: (usize, usize),
    pub channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            dim: 64,
            depth: 4,
            heads: 4,
            view_resolution: (32, 32),
            channels: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.view_resolution;
        let p = self.patch_size;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::ConfigInvalid(format!("view {h}x{w} not divisible by patch size {p}")));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::ConfigInvalid(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if !self.dim.is_multiple_of(4) {
            return Err(Error::ConfigInvalid("encoder dim must be divisible by 4".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.view_resolution.0 / self.patch_size, self.view_resolution.1 / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Dense encoder output for a batch: rows of all samples stacked, sample `b`
/// occupying `offsets[b]..offsets[b+1]` with grid indices `positions[b]`.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub out: NodeId,
    pub offsets: Vec<usize>,
    pub positions: Vec<Vec<usize>>,
    pub grid: (usize, usize),
}

impl Encoded {
    pub fn len(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }

    pub fn batch(&self) -> usize {
        self.positions.len()
    }

    pub fn rows(&self, g: &mut Graph, b: usize) -> NodeId {
        g.slice_rows(self.out, self.offsets[b], self.len(b))
    }
}

/// Patch-token vision transformer.
#[derive(Debug, Clone)]
pub struct VitEncoder {
    pub cfg: EncoderConfig,
    patch_embed: Linear,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl VitEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &EncoderConfig, name: &str) -> Self {
        let d = cfg.dim;
        Self {
            patch_embed: Linear::new(store, rng, &format!("{name}.patch_embed"), cfg.patch_dim(), d),
            blocks: (0..cfg.depth)
                .map(|i| Block::new(store, rng, &format!("{name}.block{i}"), d, cfg.heads))
                .collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            cfg: cfg.clone(),
        }
    }

    /// Encodes images keeping only the listed grid cells of each
    /// (`None` keeps all).
    pub fn forward(&self, g: &mut Graph, w: &Weights, images: &[&Image], keep: Option<&[Vec<usize>]>) -> Result<Encoded> {
        let (gh, gw) = self.cfg.grid();
        let p = self.cfg.patch_size;
        let mut rows = Vec::with_capacity(images.len());
        let mut positions = Vec::with_capacity(images.len());
        let mut offsets = vec![0];
        for (b, img) in images.iter().enumerate() {
            let (h, wd, c) = img.dim();
            if (h, wd) != self.cfg.view_resolution || c != self.cfg.channels {
                return Err(Error::ShapeMismatch(format!(
                    "encoder expects {:?}x{}, got {h}x{wd}x{c}",
                    self.cfg.view_resolution, self.cfg.channels
                )));
            }
            let patches = patchify(img, p).mapv(|v| (v - PIXEL_MEAN) / PIXEL_STD);
            let pos: Vec<usize> = match keep {
                Some(k) => k[b].clone(),
                None => (0..gh * gw).collect(),
            };
            rows.push(patches.select(Axis(0), &pos));
            offsets.push(offsets[b] + pos.len());
            positions.push(pos);
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let lengths: Vec<usize> = positions.iter().map(|p| p.len()).collect();
        let pos_all: Vec<usize> = positions.iter().flatten().copied().collect();
        let pe = posemb_2d(&grid_coords(&pos_all, gw), self.cfg.dim);
        let xn = g.constant(x);
        let mut h = self.patch_embed.forward(g, w, xn);
        let pen = g.constant(pe);
        h = g.add(h, pen);
        let segs = segments_for(&lengths);
        for blk in &self.blocks {
            h = blk.forward(g, w, h, &segs);
        }
        let out = self.norm.forward(g, w, h);
        Ok(Encoded {
            out,
            offsets,
            positions,
            grid: (gh, gw),
        })
    }
}

/// Token-embedding transformer with mean pooling and an output projection.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    embed: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    proj: Linear,
    dim: usize,
    vocab: usize,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        vocab: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            embed: store.add(
                format!("{name}.embed"),
                super::params::trunc_normal(rng, vocab, dim, 0.5),
                true,
            ),
            blocks: (0..depth)
                .map(|i| Block::new(store, rng, &format!("{name}.block{i}"), dim, heads))
                .collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, out_dim),
            dim,
            vocab,
        }
    }

    /// One pooled embedding row per caption.
    pub fn forward(&self, g: &mut Graph, w: &Weights, captions: &[&[u32]]) -> Result<NodeId> {
        let mut ids = Vec::new();
        let mut lengths = Vec::new();
        let mut pe_rows = Vec::new();
        for cap in captions {
            if cap.is_empty() {
                return Err(Error::ShapeMismatch("empty caption".into()));
            }
            for &t in cap.iter() {
                if t as usize >= self.vocab {
                    return Err(Error::ShapeMismatch(format!("token {t} outside vocabulary of {}", self.vocab)));
                }
                ids.push(t as usize);
            }
            lengths.push(cap.len());
            pe_rows.push(posemb_1d(cap.len(), self.dim));
        }
        let table = w.node(g, self.embed);
        let mut h = g.gather_rows(table, &ids);
        let views: Vec<_> = pe_rows.iter().map(|r| r.view()).collect();
        let pe = g.constant(ndarray::concatenate(Axis(0), &views).expect("same dim"));
        h = g.add(h, pe);
        let segs = segments_for(&lengths);
        for blk in &self.blocks {
            h = blk.forward(g, w, h, &segs);
        }
        h = self.norm.forward(g, w, h);
        let mut pooled = Vec::with_capacity(captions.len());
        let mut start = 0;
        for &n in &lengths {
            let rows = g.slice_rows(h, start, n);
            pooled.push(g.mean_rows(rows));
            start += n;
        }
        let pooled = g.concat_rows(&pooled);
        Ok(self.proj.forward(g, w, pooled))
    }
}

/// Learned class-embedding matrix (`num_classes x dim`).
#[derive(Debug, Clone)]
pub struct CategoryTable {
    pub table: ParamId,
    pub num_classes: usize,
}

impl CategoryTable {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, num_classes: usize, dim: usize) -> Self {
        Self {
            table: store.add(format!("{name}.table"), super::params::trunc_normal(rng, num_classes, dim, 1.0), true),
            num_classes,
        }
    }

    /// Table initialized to the first `num_classes` standard basis vectors.
    pub fn one_hot(store: &mut ParamStore, name: &str, num_classes: usize, dim: usize) -> Self {
        let t = Array2::from_shape_fn((num_classes, dim), |(i, j)| (i == j) as u8 as f64);
        Self {
            table: store.add(format!("{name}.table"), t, true),
            num_classes,
        }
    }

    pub fn all(&self, g: &mut Graph, w: &Weights) -> NodeId {
        w.node(g, self.table)
    }

    pub fn lookup(&self, g: &mut Graph, w: &Weights, classes: &[usize]) -> Result<NodeId> {
        if let Some(&c) = classes.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::KindMismatch(format!("class {c} outside table of {}", self.num_classes)));
        }
        let t = self.all(g, w);
        Ok(g.gather_rows(t, classes))
    }
}
