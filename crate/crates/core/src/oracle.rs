//! Brute-force mutual-information oracle on small discrete distributions.
//!
//! All quantities are in nats and computed by full enumeration.

use crate::error::{Error, Result};
use rand::Rng;

pub const MAX_SUPPORT: usize = 16;
pub const MAX_ENTRIES: usize = 1_000_000;

/// Dense joint probability table over named axes, row-major in axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    pub names: Vec<String>,
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
}

fn strides(sizes: &[usize]) -> Vec<usize> {
    let mut s = vec![1; sizes.len()];
    for i in (0..sizes.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * sizes[i + 1];
    }
    s
}

fn plogq(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * q.ln()
    }
}

impl DiscreteJoint {
    pub fn new(names: &[&str], sizes: &[usize], probs: Vec<f64>) -> Result<Self> {
        if names.len() != sizes.len() {
            return Err(Error::ShapeMismatch(format!("{} names for {} axes", names.len(), sizes.len())));
        }
        if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > MAX_SUPPORT) {
            return Err(Error::ConfigInvalid(format!("axis support {s} outside 1..={MAX_SUPPORT}")));
        }
        let n: usize = sizes.iter().product();
        if n > MAX_ENTRIES || probs.len() != n {
            return Err(Error::ShapeMismatch(format!("{} probabilities for {n} cells", probs.len())));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::ConfigInvalid("negative or NaN probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::ConfigInvalid(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            sizes: sizes.to_vec(),
            probs,
        })
    }

    /// Random joint with cubed-uniform weights, which gives a spread of
    /// peaked and flat tables.
    pub fn random(rng: &mut impl Rng, names: &[&str], sizes: &[usize]) -> Self {
        let n: usize = sizes.iter().product();
        let mut probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        normalize(&mut probs);
        Self::new(names, sizes, probs).expect("valid random joint")
    }

    pub fn axis(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Multi-index of flat cell `i`.
    pub fn unravel(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.sizes.len()];
        for a in (0..self.sizes.len()).rev() {
            idx[a] = i % self.sizes[a];
            i /= self.sizes[a];
        }
        idx
    }

    /// Flat index over `axes` (row-major in the order given) of a full
    /// multi-index.
    pub fn sub_index(&self, idx: &[usize], axes: &[usize]) -> usize {
        axes.iter().fold(0, |acc, &a| acc * self.sizes[a] + idx[a])
    }

    pub fn support(&self, axes: &[usize]) -> usize {
        axes.iter().map(|&a| self.sizes[a]).product()
    }

    /// Marginal table over `axes`, row-major in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.support(axes)];
        for (i, &p) in self.probs.iter().enumerate() {
            let idx = self.unravel(i);
            out[self.sub_index(&idx, axes)] += p;
        }
        out
    }

    /// Merges states of `axis` through `map` (old state to new state).
    pub fn coarsen(&self, axis: usize, map: &[usize]) -> Result<Self> {
        if map.len() != self.sizes[axis] {
            return Err(Error::ShapeMismatch(format!("map of {} for axis of {}", map.len(), self.sizes[axis])));
        }
        let new_size = map.iter().max().map_or(0, |m| m + 1);
        let mut sizes = self.sizes.clone();
        sizes[axis] = new_size;
        let st = strides(&sizes);
        let mut probs = vec![0.0; sizes.iter().product()];
        for (i, &p) in self.probs.iter().enumerate() {
            let mut idx = self.unravel(i);
            idx[axis] = map[idx[axis]];
            probs[idx.iter().zip(&st).map(|(a, b)| a * b).sum::<usize>()] += p;
        }
        let names: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        Self::new(&names, &sizes, probs)
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn concat(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

fn check_disjoint(parts: &[&[usize]], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    for &a in parts.iter().flat_map(|p| p.iter()) {
        if a >= rank {
            return Err(Error::ShapeMismatch(format!("axis {a} outside a rank-{rank} joint")));
        }
        if seen[a] {
            return Err(Error::PartitionViolation(format!("axis {a} used twice")));
        }
        seen[a] = true;
    }
    Ok(())
}

/// `I(X; Y | C) = Σ p(x,y,c)·log(p(y|x,c) / p(y|c))`.
pub fn exact_mi(joint: &DiscreteJoint, x: &[usize], y: &[usize], cond: &[usize]) -> f64 {
    let xyc = concat(&concat(x, y), cond);
    let xc = concat(x, cond);
    let yc = concat(y, cond);
    let p_xyc = joint.marginal(&xyc);
    let p_xc = joint.marginal(&xc);
    let p_yc = joint.marginal(&yc);
    let p_c = joint.marginal(cond);
    let sizes: Vec<usize> = xyc.iter().map(|&a| joint.sizes[a]).collect();
    let mut idx = vec![0; joint.sizes.len()];
    let mut total = 0.0;
    for (i, &p) in p_xyc.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut r = i;
        for (k, &a) in xyc.iter().enumerate().rev() {
            idx[a] = r % sizes[k];
            r /= sizes[k];
        }
        let pxc = p_xc[joint.sub_index(&idx, &xc)];
        let pyc = p_yc[joint.sub_index(&idx, &yc)];
        let pc = p_c[joint.sub_index(&idx, cond)];
        total += p * ((p / pxc) / (pyc / pc)).ln();
    }
    total
}

/// `H(Y | C)`
pub fn conditional_entropy(joint: &DiscreteJoint, y: &[usize], cond: &[usize]) -> f64 {
    let yc = concat(y, cond);
    let p_yc = joint.marginal(&yc);
    let p_c = joint.marginal(cond);
    let nc = p_c.len();
    -p_yc
        .iter()
        .enumerate()
        .map(|(i, &p)| plogq(p, p / p_c[i % nc]))
        .sum::<f64>()
}

/// Row-stochastic table `q(target | given)`; rows are indexed by the
/// `given` axes and columns by the `target` axes, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxPosterior {
    pub given: Vec<usize>,
    pub target: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub table: Vec<f64>,
}

impl ApproxPosterior {
    pub fn new(joint: &DiscreteJoint, given: &[usize], target: &[usize], table: Vec<f64>) -> Result<Self> {
        check_disjoint(&[given, target], joint.sizes.len())?;
        let rows = joint.support(given);
        let cols = joint.support(target);
        if table.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} entries for {rows}x{cols}", table.len())));
        }
        for r in 0..rows {
            let row = &table[r * cols..(r + 1) * cols];
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::ConfigInvalid(format!("row {r} is not a distribution (sum {s})")));
            }
        }
        Ok(Self {
            given: given.to_vec(),
            target: target.to_vec(),
            rows,
            cols,
            table,
        })
    }

    pub fn uniform(joint: &DiscreteJoint, given: &[usize], target: &[usize]) -> Result<Self> {
        let cols = joint.support(target);
        let rows = joint.support(given);
        Self::new(joint, given, target, vec![1.0 / cols as f64; rows * cols])
    }

    pub fn random(rng: &mut impl Rng, joint: &DiscreteJoint, given: &[usize], target: &[usize]) -> Result<Self> {
        let cols = joint.support(target);
        let rows = joint.support(given);
        let mut table: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>().powi(2) + 1e-9).collect();
        for r in 0..rows {
            normalize(&mut table[r * cols..(r + 1) * cols]);
        }
        Self::new(joint, given, target, table)
    }

    /// Bayes posterior `p(target | given)` by enumeration; rows with zero
    /// mass are uniform.
    pub fn bayes(joint: &DiscreteJoint, given: &[usize], target: &[usize]) -> Result<Self> {
        let rows = joint.support(given);
        let cols = joint.support(target);
        let p = joint.marginal(&concat(given, target));
        let mut table = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &p[r * cols..(r + 1) * cols];
            let s: f64 = row.iter().sum();
            for c in 0..cols {
                table[r * cols + c] = if s > 0.0 { row[c] / s } else { 1.0 / cols as f64 };
            }
            let s: f64 = table[r * cols..(r + 1) * cols].iter().sum();
            table[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v /= s);
        }
        Self::new(joint, given, target, table)
    }

    fn at(&self, joint: &DiscreteJoint, idx: &[usize]) -> f64 {
        self.table[joint.sub_index(idx, &self.given) * self.cols + joint.sub_index(idx, &self.target)]
    }
}

/// `E_p[log q(target | given)]`; `-inf` if `q` misses mass that `p` has.
pub fn expected_log_q(joint: &DiscreteJoint, q: &ApproxPosterior) -> f64 {
    joint
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| p * q.at(joint, &joint.unravel(i)).ln())
        .sum()
}

/// The three roles of the Eq.-style decomposition for a joint over
/// `(z_x, z_y, cond...)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub entropy_term: f64,
    pub cross_entropy_term: f64,
    pub mi: f64,
}

/// Generative model `p(s, t_x, t_y)·p(z_x | s, t_x)·p(z_y | s, t_y)` over
/// axes `(s, t_x, t_y, z_x, z_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedModel {
    pub n_s: usize,
    pub n_tx: usize,
    pub n_ty: usize,
    pub n_zx: usize,
    pub n_zy: usize,
    /// `p(s, t_x, t_y)`, row-major
    pub p_views: Vec<f64>,
    /// `p(z_x | s, t_x)`, rows indexed by `(s, t_x)`
    pub p_zx: Vec<f64>,
    /// `p(z_y | s, t_y)`, rows indexed by `(s, t_y)`
    pub p_zy: Vec<f64>,
}

fn random_rows(rng: &mut impl Rng, rows: usize, cols: usize, sharpness: i32) -> Vec<f64> {
    let mut t: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>().powi(sharpness)).collect();
    for r in 0..rows {
        let row = &mut t[r * cols..(r + 1) * cols];
        if row.iter().sum::<f64>() == 0.0 {
            row[0] = 1.0;
        }
        normalize(row);
    }
    t
}

impl FactorizedModel {
    pub const AXES: [&'static str; 5] = ["s", "t_x", "t_y", "z_x", "z_y"];

    pub fn random(rng: &mut impl Rng, max_support: usize) -> Self {
        let mut draw = || rng.random_range(1..=max_support);
        let (n_s, n_tx, n_ty, n_zx, n_zy) = (draw(), draw(), draw(), draw(), draw());
        Self {
            n_s,
            n_tx,
            n_ty,
            n_zx,
            n_zy,
            p_views: random_rows(rng, 1, n_s * n_tx * n_ty, 2),
            p_zx: random_rows(rng, n_s * n_tx, n_zx, 4),
            p_zy: random_rows(rng, n_s * n_ty, n_zy, 4),
        }
    }

    pub fn joint(&self) -> DiscreteJoint {
        let sizes = [self.n_s, self.n_tx, self.n_ty, self.n_zx, self.n_zy];
        let mut probs = Vec::with_capacity(sizes.iter().product());
        for s in 0..self.n_s {
            for tx in 0..self.n_tx {
                for ty in 0..self.n_ty {
                    let pv = self.p_views[(s * self.n_tx + tx) * self.n_ty + ty];
                    for zx in 0..self.n_zx {
                        let px = self.p_zx[(s * self.n_tx + tx) * self.n_zx + zx];
                        for zy in 0..self.n_zy {
                            probs.push(pv * px * self.p_zy[(s * self.n_ty + ty) * self.n_zy + zy]);
                        }
                    }
                }
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        DiscreteJoint::new(&Self::AXES, &sizes, probs).expect("valid factorized joint")
    }
}

/// Splits `I(z_x; z_y | t_x, t_y)` of a factorized model into the entropy
/// term `H(z_y | t_x, t_y)` and the cross-entropy term
/// `E[H(p(z_y | s, t_y), p(z_y | z_x, t_x, t_y))]`. The MI is computed
/// separately by [`exact_mi`].
pub fn decompose_mi(model: &FactorizedModel) -> Decomposition {
    let joint = model.joint();
    let (s, tx, ty, zx, zy) = (0, 1, 2, 3, 4);
    let entropy_term = conditional_entropy(&joint, &[zy], &[tx, ty]);
    let post = ApproxPosterior::bayes(&joint, &[zx, tx, ty], &[zy]).expect("bayes posterior");
    let p_sxz = joint.marginal(&[s, tx, ty, zx]);
    let mut cross = 0.0;
    let mut idx = vec![0; 5];
    for (i, &w) in p_sxz.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        idx[zx] = i % model.n_zx;
        idx[ty] = (i / model.n_zx) % model.n_ty;
        idx[tx] = (i / (model.n_zx * model.n_ty)) % model.n_tx;
        idx[s] = i / (model.n_zx * model.n_ty * model.n_tx);
        let mut h = 0.0;
        for v in 0..model.n_zy {
            idx[zy] = v;
            let p = model.p_zy[(idx[s] * model.n_ty + idx[ty]) * model.n_zy + v];
            h -= plogq(p, post.at(&joint, &idx));
        }
        cross += w * h;
    }
    Decomposition {
        entropy_term,
        cross_entropy_term: cross,
        mi: exact_mi(&joint, &[zx], &[zy], &[tx, ty]),
    }
}

/// `H(Y | C) + E[log q(Y | X, C)]`. `q` must condition on `x` then `cond`.
pub fn variational_bound(
    joint: &DiscreteJoint,
    x: &[usize],
    y: &[usize],
    cond: &[usize],
    q: &ApproxPosterior,
) -> Result<f64> {
    check_disjoint(&[x, y, cond], joint.sizes.len())?;
    if q.given != concat(x, cond) || q.target != y {
        return Err(Error::ShapeMismatch("posterior axes do not match (x, cond) -> y".into()));
    }
    Ok(conditional_entropy(joint, y, cond) + expected_log_q(joint, q))
}

/// `H(Y_1..Y_K | C) + Σ_k E[log q_k(Y_k | X, C)]` where each `q_k`
/// conditions on `x` then `cond` only.
pub fn grouped_bound(
    joint: &DiscreteJoint,
    x: &[usize],
    groups: &[Vec<usize>],
    cond: &[usize],
    qs: &[ApproxPosterior],
) -> Result<f64> {
    grouped_bound_impl(joint, x, groups, cond, qs, false)
}

/// As [`grouped_bound`] but `q_k` additionally conditions on the earlier
/// groups `Y_1..Y_{k-1}` (appended after `cond`).
pub fn chained_grouped_bound(
    joint: &DiscreteJoint,
    x: &[usize],
    groups: &[Vec<usize>],
    cond: &[usize],
    qs: &[ApproxPosterior],
) -> Result<f64> {
    grouped_bound_impl(joint, x, groups, cond, qs, true)
}

/// Conditioning axes of group `k`'s posterior.
pub fn group_given(x: &[usize], groups: &[Vec<usize>], cond: &[usize], k: usize, chained: bool) -> Vec<usize> {
    let mut given = concat(x, cond);
    if chained {
        for g in &groups[..k] {
            given.extend_from_slice(g);
        }
    }
    given
}

fn grouped_bound_impl(
    joint: &DiscreteJoint,
    x: &[usize],
    groups: &[Vec<usize>],
    cond: &[usize],
    qs: &[ApproxPosterior],
    chained: bool,
) -> Result<f64> {
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::PartitionViolation("empty target group".into()));
    }
    let mut parts: Vec<&[usize]> = vec![x, cond];
    parts.extend(groups.iter().map(|g| g.as_slice()));
    check_disjoint(&parts, joint.sizes.len())?;
    if qs.len() != groups.len() {
        return Err(Error::ShapeMismatch(format!("{} posteriors for {} groups", qs.len(), groups.len())));
    }
    let all: Vec<usize> = groups.iter().flatten().copied().collect();
    let mut bound = conditional_entropy(joint, &all, cond);
    for (k, q) in qs.iter().enumerate() {
        if q.given != group_given(x, groups, cond, k, chained) || q.target != groups[k] {
            return Err(Error::ShapeMismatch(format!("posterior {k} has the wrong axes")));
        }
        bound += expected_log_q(joint, q);
    }
    Ok(bound)
}

/// Result of numerically maximizing the variational bound over `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Supremum {
    pub mi: f64,
    pub best_bound: f64,
    pub gap: f64,
}

pub const SUPREMUM_STEPS: usize = 500;
pub const SUPREMUM_STEP_SIZE: f64 = 0.5;
pub const SUPREMUM_RESTARTS: usize = 3;
pub const SUPREMUM_TOLERANCE: f64 = 1e-4;

/// Maximizes the bound over softmax-parameterized rows of `q(y | x, cond)`.
/// Each step adds `η·ln(p(y|r)/q(y|r))` to the logits of row `r`: a
/// mirror-ascent step on the row's expected log-likelihood whose fixed point
/// is the Bayes posterior. Zero-probability cells are floored at 1e-300.
pub fn check_supremum(
    joint: &DiscreteJoint,
    x: &[usize],
    y: &[usize],
    cond: &[usize],
    rng: &mut impl Rng,
) -> Result<Supremum> {
    check_disjoint(&[x, y, cond], joint.sizes.len())?;
    let mi = exact_mi(joint, x, y, cond);
    let given = concat(x, cond);
    let rows = joint.support(&given);
    let cols = joint.support(y);
    let target = ApproxPosterior::bayes(joint, &given, y)?;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..SUPREMUM_RESTARTS {
        let mut logits: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut q = vec![0.0; rows * cols];
        for _ in 0..=SUPREMUM_STEPS {
            for r in 0..rows {
                let l = &logits[r * cols..(r + 1) * cols];
                let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
                for c in 0..cols {
                    q[r * cols + c] = (l[c] - m).exp() / z;
                }
            }
            for i in 0..rows * cols {
                logits[i] += SUPREMUM_STEP_SIZE * (target.table[i].max(1e-300).ln() - q[i].max(1e-300).ln());
            }
        }
        let post = ApproxPosterior::new(joint, &given, y, renormalized(&q, rows, cols))?;
        best = best.max(variational_bound(joint, x, y, cond, &post)?);
    }
    let gap = mi - best;
    if !(gap <= SUPREMUM_TOLERANCE) {
        return Err(Error::OptimizationBudgetExceeded {
            gap,
            steps: SUPREMUM_STEPS * SUPREMUM_RESTARTS,
        });
    }
    Ok(Supremum {
        mi,
        best_bound: best,
        gap,
    })
}

fn renormalized(q: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = q.to_vec();
    for r in 0..rows {
        normalize(&mut out[r * cols..(r + 1) * cols]);
    }
    out
}

/// Joint over `(c, x, y1, y2)` with `y1` and `y2` independent given
/// `(x, c)`.
pub fn conditionally_independent_joint(rng: &mut impl Rng, sizes: [usize; 4]) -> DiscreteJoint {
    let [nc, nx, n1, n2] = sizes;
    let pc = random_rows(rng, 1, nc, 1);
    let px = random_rows(rng, nc, nx, 2);
    let p1 = random_rows(rng, nc * nx, n1, 3);
    let p2 = random_rows(rng, nc * nx, n2, 3);
    let mut probs = Vec::with_capacity(nc * nx * n1 * n2);
    for c in 0..nc {
        for x in 0..nx {
            let r = c * nx + x;
            for a in 0..n1 {
                for b in 0..n2 {
                    probs.push(pc[c] * px[r] * p1[r * n1 + a] * p2[r * n2 + b]);
                }
            }
        }
    }
    normalize(&mut probs);
    DiscreteJoint::new(&["c", "x", "y1", "y2"], &sizes, probs).expect("valid joint")
}

/// One row of the oracle suite report.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> SuiteCheck {
    SuiteCheck { name, passed, detail }
}

/// Runs every oracle property on `trials` random instances per check.
pub fn run_suite(seed: u64, trials: usize) -> Vec<SuiteCheck> {
    let mut rng = crate::rng::rng_from(&[seed, 0x0AC1E]);
    let mut out = Vec::new();
    let (x, y, c) = ([3usize], [4usize], [1usize, 2]);

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let d = decompose_mi(&FactorizedModel::random(&mut rng, 8));
        worst = worst.max((d.mi - (d.entropy_term - d.cross_entropy_term)).abs());
    }
    out.push(check("decomposition", worst < 1e-9, format!("max |mi - (H - CE)| = {worst:.3e}")));

    let (mut excess, mut tight) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..trials {
        let j = FactorizedModel::random(&mut rng, 6).joint();
        let mi = exact_mi(&j, &x, &y, &c);
        let given = concat(&x, &c);
        let q = ApproxPosterior::random(&mut rng, &j, &given, &y).expect("posterior");
        excess = excess.max(variational_bound(&j, &x, &y, &c, &q).expect("bound") - mi);
        let b = ApproxPosterior::bayes(&j, &given, &y).expect("posterior");
        tight = tight.max((variational_bound(&j, &x, &y, &c, &b).expect("bound") - mi).abs());
    }
    out.push(check("bound below mi", excess <= 1e-10, format!("max bound - mi = {excess:.3e}")));
    out.push(check("bayes posterior tight", tight < 1e-9, format!("max |bound - mi| = {tight:.3e}")));

    let mut gaps = Vec::new();
    let mut failure = None;
    for _ in 0..trials.min(20) {
        let j = FactorizedModel::random(&mut rng, 4).joint();
        match check_supremum(&j, &x, &y, &c, &mut rng) {
            Ok(s) => gaps.push(s.gap),
            Err(e) => failure = Some(e.to_string()),
        }
    }
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    out.push(check(
        "supremum attained",
        failure.is_none() && min_gap >= -1e-9,
        failure.unwrap_or_else(|| format!("gaps in [{min_gap:.3e}, {max_gap:.3e}]")),
    ));

    let (mut excess, mut k1, mut indep) = (f64::NEG_INFINITY, true, 0.0f64);
    let groups = vec![vec![2usize], vec![3usize]];
    for _ in 0..trials {
        let sizes = [rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4)];
        let j = DiscreteJoint::random(&mut rng, &["c", "x", "y1", "y2"], &sizes);
        let mi = exact_mi(&j, &[1], &[2, 3], &[0]);
        let qs: Vec<ApproxPosterior> = groups
            .iter()
            .map(|g| ApproxPosterior::random(&mut rng, &j, &[1, 0], g).expect("posterior"))
            .collect();
        excess = excess.max(grouped_bound(&j, &[1], &groups, &[0], &qs).expect("bound") - mi);
        let whole = vec![vec![2usize, 3]];
        let q = ApproxPosterior::random(&mut rng, &j, &[1, 0], &whole[0]).expect("posterior");
        k1 &= grouped_bound(&j, &[1], &whole, &[0], std::slice::from_ref(&q)).expect("bound")
            == variational_bound(&j, &[1], &[2, 3], &[0], &q).expect("bound");
        let ji = conditionally_independent_joint(&mut rng, sizes);
        let qs: Vec<ApproxPosterior> = groups
            .iter()
            .map(|g| ApproxPosterior::bayes(&ji, &[1, 0], g).expect("posterior"))
            .collect();
        let b = grouped_bound(&ji, &[1], &groups, &[0], &qs).expect("bound");
        indep = indep.max((b - exact_mi(&ji, &[1], &[2, 3], &[0])).abs());
    }
    out.push(check("grouped bound below mi", excess <= 1e-10, format!("max bound - mi = {excess:.3e}")));
    out.push(check("single group reduces", k1, "K=1 equals the variational bound".into()));
    out.push(check("independent groups tight", indep < 1e-9, format!("max |bound - mi| = {indep:.3e}")));

    let (mut asym, mut neg, mut dpi) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..trials {
        let j = FactorizedModel::random(&mut rng, 6).joint();
        let a = exact_mi(&j, &x, &y, &c);
        asym = asym.max((a - exact_mi(&j, &y, &x, &c)).abs());
        neg = neg.min(a);
        let n = j.sizes[4];
        let map: Vec<usize> = (0..n).map(|s| s / 2).collect();
        let coarse = j.coarsen(4, &map).expect("coarsen");
        dpi = dpi.max(exact_mi(&coarse, &x, &y, &c) - a);
    }
    out.push(check("symmetry", asym < 1e-12, format!("max |I(A;B|C) - I(B;A|C)| = {asym:.3e}")));
    out.push(check("non-negativity", neg >= -1e-12, format!("min mi = {neg:.3e}")));
    out.push(check("data processing", dpi <= 1e-12, format!("max coarse - fine = {dpi:.3e}")));
    out
}
