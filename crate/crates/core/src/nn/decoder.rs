use super::layers::{posemb_2d, Block, LayerNorm, Linear};
use super::params::{trunc_normal, ParamStore, Weights};
use crate::autograd::{AttnSegment, Graph, NodeId, ParamId};
use crate::error::{Error, Result};
use crate::model::TransformDescriptor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    DenseDecoder,
    AttentionPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionOrigin {
    InputViewTopLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub position_origin: PositionOrigin,
}

impl DecoderConfig {
    pub fn dense(depth: usize, dim: usize, heads: usize) -> Self {
        Self {
            kind: DecoderKind::DenseDecoder,
            depth,
            dim,
            heads,
            position_origin: PositionOrigin::InputViewTopLeft,
        }
    }

    pub fn pool(heads: usize) -> Self {
        Self {
            kind: DecoderKind::AttentionPool,
            depth: 0,
            dim: 0,
            heads,
            position_origin: PositionOrigin::InputViewTopLeft,
        }
    }
}

/// Coordinates (row, col, in patch units) of every target-view patch center
/// expressed in the input view's frame, whose top-left patch center is
/// `(0, 0)`. Errors if the two crops do not overlap.
pub fn target_coords_in_input_frame(
    input: &TransformDescriptor,
    target: &TransformDescriptor,
    patch_size: usize,
) -> Result<Vec<(f64, f64)>> {
    let (ci, ct) = match (input.crop_box, target.crop_box) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::GeometryMismatch("both views need crop geometry".into())),
    };
    if ci.intersection_area(&ct) == 0 {
        return Err(Error::GeometryMismatch(format!("crops {ci:?} and {ct:?} do not overlap")));
    }
    let p = patch_size as f64;
    let (th, tw) = target.out_resolution;
    let (ih, iw) = input.out_resolution;
    let (gh, gw) = (th / patch_size, tw / patch_size);
    let mut coords = Vec::with_capacity(gh * gw);
    for r in 0..gh {
        for c in 0..gw {
            let ty = (r as f64 + 0.5) * p;
            let mut tx = (c as f64 + 0.5) * p;
            if target.flip {
                tx = tw as f64 - tx;
            }
            let sy = ct.top as f64 + ty * ct.height as f64 / th as f64;
            let sx = ct.left as f64 + tx * ct.width as f64 / tw as f64;
            let iy = (sy - ci.top as f64) * ih as f64 / ci.height as f64;
            let mut ix = (sx - ci.left as f64) * iw as f64 / ci.width as f64;
            if input.flip {
                ix = iw as f64 - ix;
            }
            coords.push((iy / p - 0.5, ix / p - 0.5));
        }
    }
    Ok(coords)
}

/// Where a decoder must produce predictions for one sample.
#[derive(Debug, Clone)]
pub enum DecodePlan {
    /// Target grid equals the input grid: context tokens are decoded in
    /// place and every missing cell receives a mask-token query.
    Aligned { grid_len: usize, gw: usize },
    /// Target grid differs: one mask-token query per target cell at the
    /// given input-frame coordinates.
    Cross { coords: Vec<(f64, f64)> },
}

impl DecodePlan {
    pub fn output_len(&self) -> usize {
        match self {
            DecodePlan::Aligned { grid_len, .. } => *grid_len,
            DecodePlan::Cross { coords } => coords.len(),
        }
    }
}

/// One sample's decoder input: context rows of the encoder output and
/// their grid cells.
#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub context: NodeId,
    pub context_positions: Vec<usize>,
    pub plan: DecodePlan,
}

/// Transformer decoder from dense input features to a dense target grid.
#[derive(Debug, Clone)]
pub struct DenseDecoder {
    embed: Linear,
    mask_token: ParamId,
    blocks: Vec<Block>,
    norm: Option<LayerNorm>,
    head: Linear,
    dim: usize,
}

impl DenseDecoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cfg: &DecoderConfig,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let d = cfg.dim;
        Self {
            embed: Linear::new(store, rng, &format!("{name}.embed"), in_dim, d),
            mask_token: store.add(format!("{name}.mask_token"), trunc_normal(rng, 1, d, 0.02), false),
            blocks: (0..cfg.depth)
                .map(|i| Block::new(store, rng, &format!("{name}.block{i}"), d, cfg.heads))
                .collect(),
            norm: (cfg.depth > 0).then(|| LayerNorm::new(store, &format!("{name}.norm"), d)),
            head: Linear::new(store, rng, &format!("{name}.head"), d, out_dim),
            dim: d,
        }
    }

    /// Zero-depth decoder whose embedding and head are identities.
    pub fn identity(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            embed: Linear::identity(store, &format!("{name}.embed"), d),
            mask_token: store.add(format!("{name}.mask_token"), ndarray::Array2::zeros((1, d)), false),
            blocks: vec![],
            norm: None,
            head: Linear::identity(store, &format!("{name}.head"), d),
            dim: d,
        }
    }

    /// Decodes every request; sample `b`'s predictions occupy a contiguous
    /// block of rows in target-grid order. Returns the node and the row
    /// offset of each sample.
    pub fn forward(&self, g: &mut Graph, w: &Weights, requests: &[DecodeRequest]) -> (NodeId, Vec<usize>) {
        let mut pieces = Vec::new();
        let mut segments = Vec::new();
        let mut gather = Vec::new();
        let mut out_offsets = vec![0];
        let mut row = 0;
        for req in requests {
            let ctx = self.embed.forward(g, w, req.context);
            let n_ctx = req.context_positions.len();
            let (coords, slots): (Vec<(f64, f64)>, Vec<usize>) = match &req.plan {
                DecodePlan::Aligned { grid_len, gw } => {
                    let mut have = vec![usize::MAX; *grid_len];
                    for (i, &p) in req.context_positions.iter().enumerate() {
                        have[p] = i;
                    }
                    let missing: Vec<usize> = (0..*grid_len).filter(|&p| have[p] == usize::MAX).collect();
                    for (q, &p) in missing.iter().enumerate() {
                        have[p] = n_ctx + q;
                    }
                    let coords = missing.iter().map(|&p| ((p / gw) as f64, (p % gw) as f64)).collect();
                    (coords, have)
                }
                DecodePlan::Cross { coords } => (coords.clone(), (n_ctx..n_ctx + coords.len()).collect()),
            };
            pieces.push(ctx);
            if !coords.is_empty() {
                let mt = w.node(g, self.mask_token);
                let q = g.gather_rows(mt, &vec![0; coords.len()]);
                let pe = g.constant(posemb_2d(&coords, self.dim));
                pieces.push(g.add(q, pe));
            }
            let len = n_ctx + coords.len();
            segments.push(AttnSegment::square(row, len));
            gather.extend(slots.iter().map(|s| row + s));
            out_offsets.push(out_offsets.last().unwrap() + slots.len());
            row += len;
        }
        let mut h = g.concat_rows(&pieces);
        for blk in &self.blocks {
            h = blk.forward(g, w, h, &segments);
        }
        if let Some(n) = &self.norm {
            h = n.forward(g, w, h);
        }
        let h = g.gather_rows(h, &gather);
        (self.head.forward(g, w, h), out_offsets)
    }
}

/// Learned-query attention pooling followed by a linear projection.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    query: ParamId,
    k: Linear,
    v: Linear,
    out: Linear,
    proj: Linear,
    heads: usize,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, heads: usize, out_dim: usize) -> Self {
        Self {
            query: store.add(format!("{name}.query"), trunc_normal(rng, 1, d, 0.02), false),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            out: Linear::new(store, rng, &format!("{name}.out"), d, d),
            proj: Linear::new(store, rng, &format!("{name}.proj"), d, out_dim),
            heads,
        }
    }

    /// Pool with identity value, output and projection maps.
    pub fn identity(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, heads: usize) -> Self {
        Self {
            query: store.add(format!("{name}.query"), trunc_normal(rng, 1, d, 0.02), false),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::identity(store, &format!("{name}.v"), d),
            out: Linear::identity(store, &format!("{name}.out"), d),
            proj: Linear::identity(store, &format!("{name}.proj"), d),
            heads,
        }
    }

    /// One pooled row per `(start, len)` row range of `tokens`.
    pub fn forward(&self, g: &mut Graph, w: &Weights, tokens: NodeId, ranges: &[(usize, usize)]) -> NodeId {
        let qp = w.node(g, self.query);
        let q = g.gather_rows(qp, &vec![0; ranges.len()]);
        let k = self.k.forward(g, w, tokens);
        let v = self.v.forward(g, w, tokens);
        let segments = ranges
            .iter()
            .enumerate()
            .map(|(i, &(start, len))| AttnSegment {
                q_start: i,
                q_len: 1,
                kv_start: start,
                kv_len: len,
            })
            .collect();
        let a = g.attention(q, k, v, self.heads, segments);
        let a = self.out.forward(g, w, a);
        self.proj.forward(g, w, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CropBox;
    use crate::rng::rng_from;
    use ndarray::Array2;

    fn desc(top: usize, left: usize, size: usize, flip: bool) -> TransformDescriptor {
        let mut d = TransformDescriptor::identity(64, 64, (32, 32));
        d.crop_box = Some(CropBox {
            top,
            left,
            height: size,
            width: size,
        });
        d.flip = flip;
        d
    }

    #[test]
    fn identical_views_map_to_integer_grid() {
        let d = desc(4, 8, 32, false);
        let coords = target_coords_in_input_frame(&d, &d, 4).unwrap();
        assert_eq!(coords.len(), 64);
        for (i, &(r, c)) in coords.iter().enumerate() {
            assert!((r - (i / 8) as f64).abs() < 1e-12 && (c - (i % 8) as f64).abs() < 1e-12);
        }
        let f = desc(4, 8, 32, true);
        let coords = target_coords_in_input_frame(&f, &f, 4).unwrap();
        assert!((coords[3].1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_patch_shift_shifts_coordinates_by_one() {
        let input = desc(8, 8, 32, false);
        let target = desc(8, 12, 32, false);
        let coords = target_coords_in_input_frame(&input, &target, 4).unwrap();
        for (i, &(r, c)) in coords.iter().enumerate() {
            assert!((r - (i / 8) as f64).abs() < 1e-12);
            assert!((c - (i % 8) as f64 - 1.0).abs() < 1e-12);
        }
        let far = desc(32, 32, 32, false);
        let near = desc(0, 0, 16, false);
        assert!(matches!(
            target_coords_in_input_frame(&near, &far, 4),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn zero_depth_identity_decoder_returns_context() {
        let mut store = ParamStore::new();
        let dec = DenseDecoder::identity(&mut store, "dec", 8);
        let z = Array2::from_shape_fn((16, 8), |(i, j)| (i as f64 - j as f64) * 0.1);
        let mut g = Graph::new();
        let zn = g.constant(z.clone());
        let req = DecodeRequest {
            context: zn,
            context_positions: (0..16).collect(),
            plan: DecodePlan::Aligned { grid_len: 16, gw: 4 },
        };
        let (out, offs) = dec.forward(&mut g, &Weights::Frozen(&store), &[req]);
        assert_eq!(g.value(out), &z);
        assert_eq!(offs, vec![0, 16]);
    }

    #[test]
    fn fully_masked_still_emits_full_grid() {
        let cfg = DecoderConfig::dense(1, 8, 2);
        let mut store = ParamStore::new();
        let dec = DenseDecoder::new(&mut store, &mut rng_from(&[3]), "dec", &cfg, 8, 5);
        let mut g = Graph::new();
        let empty = g.constant(Array2::zeros((0, 8)));
        let req = DecodeRequest {
            context: empty,
            context_positions: vec![],
            plan: DecodePlan::Aligned { grid_len: 16, gw: 4 },
        };
        let (out, _) = dec.forward(&mut g, &Weights::Frozen(&store), &[req]);
        assert_eq!(g.value(out).dim(), (16, 5));
    }

    #[test]
    fn pooling_identical_tokens_is_collinear() {
        let mut store = ParamStore::new();
        let pool = AttentionPool::identity(&mut store, &mut rng_from(&[4]), "pool", 8, 2);
        let v: Vec<f64> = (0..8).map(|j| j as f64 - 3.5).collect();
        let tokens = Array2::from_shape_fn((10, 8), |(_, j)| v[j]);
        let mut g = Graph::new();
        let t = g.constant(tokens);
        let out = pool.forward(&mut g, &Weights::Frozen(&store), t, &[(0, 10)]);
        let o = g.value(out).row(0).to_vec();
        for j in 0..8 {
            assert!((o[j] - v[j]).abs() < 1e-12);
        }
    }
}
