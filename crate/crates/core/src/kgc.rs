//! Translation scoring and margin loss for knowledge-graph completion.
//!
//! Derivatives (L1 distance, subgradient 0 at a kink). With `x = a - b`,
//! `n = w / |w|`, `P = I - n n^T` and `d = P x + t`, `s = sum |d_j|`:
//!
//! ```text
//! ds/dt = sign(d)
//! ds/da = P sign(d) = -ds/db
//! ds/dn = -((sign(d) . n) x + (n . x) sign(d))
//! ds/dw = (I - n n^T) ds/dn / |w|
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::Triple;
use crate::embedding::{EmbeddingSpace, Scalar, Table};
use crate::error::{Error, Result};
use crate::grad::Gradients;
use crate::linalg::{self, dot, sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgcVariant {
    TransE,
    #[default]
    TransH,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgcConfig {
    pub variant: KgcVariant,
    pub margin: f64,
}

impl KgcConfig {
    pub fn new(variant: KgcVariant, margin: f64) -> Result<Self> {
        if !(margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {margin}")));
        }
        Ok(KgcConfig { variant, margin })
    }
}

impl Default for KgcConfig {
    fn default() -> Self {
        KgcConfig {
            variant: KgcVariant::TransH,
            margin: 1.0,
        }
    }
}

/// `v - (w . v) w`; `w` must be unit length.
pub fn project(v: &[f64], w: &[f64]) -> Vec<f64> {
    let c = dot(w, v);
    v.iter().zip(w).map(|(vi, wi)| vi - c * wi).collect()
}

/// Returns `v / |v|` and `|v|`. Norms below `1e-12` are clamped.
pub fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let n = linalg::norm2(v).max(1e-12);
    (v.iter().map(|x| x / n).collect(), n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneGrad {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub translation: Vec<f64>,
    /// Gradient w.r.t. the unnormalised normal; empty when no hyperplane is used.
    pub normal: Vec<f64>,
}

/// L1 distance `|P from + translation - P to|`. `normal = None` skips the
/// projection (TransE); otherwise the normal is normalised before use.
pub fn hyperplane_distance(from: &[f64], to: &[f64], translation: &[f64], normal: Option<&[f64]>) -> f64 {
    match normal {
        None => distance_with_unit_normal(from, to, translation, None),
        Some(w) => {
            let (n, _) = normalize(w);
            distance_with_unit_normal(from, to, translation, Some(&n))
        }
    }
}

/// Same as [`hyperplane_distance`] with an already normalised normal.
pub fn distance_with_unit_normal(from: &[f64], to: &[f64], translation: &[f64], n: Option<&[f64]>) -> f64 {
    let nx = match n {
        None => 0.0,
        Some(n) => n.iter().zip(from).zip(to).map(|((ni, a), b)| ni * (a - b)).sum(),
    };
    let mut s = 0.0;
    for j in 0..from.len() {
        let proj = n.map_or(0.0, |n| nx * n[j]);
        s += ((from[j] - to[j]) - proj + translation[j]).abs();
    }
    s
}

pub fn hyperplane_distance_grad(
    from: &[f64],
    to: &[f64],
    translation: &[f64],
    normal: Option<&[f64]>,
) -> (f64, HyperplaneGrad) {
    let x = linalg::sub(from, to);
    match normal {
        None => {
            let d = linalg::add(&x, translation);
            let s: Vec<f64> = d.iter().map(|&v| sign(v)).collect();
            let grad = HyperplaneGrad {
                from: s.clone(),
                to: linalg::scale(&s, -1.0),
                translation: s,
                normal: Vec::new(),
            };
            (linalg::l1(&d), grad)
        }
        Some(w) => {
            let (n, w_norm) = normalize(w);
            let nx = dot(&n, &x);
            let d: Vec<f64> = x
                .iter()
                .zip(&n)
                .zip(translation)
                .map(|((xi, ni), ti)| (xi - nx * ni) + ti)
                .collect();
            let s: Vec<f64> = d.iter().map(|&v| sign(v)).collect();
            let ns = dot(&n, &s);
            let g_from: Vec<f64> = s.iter().zip(&n).map(|(si, ni)| si - ns * ni).collect();
            let g_n: Vec<f64> = x
                .iter()
                .zip(&s)
                .map(|(xi, si)| -(ns * xi + nx * si))
                .collect();
            let gn_n = dot(&g_n, &n);
            let g_w: Vec<f64> = g_n
                .iter()
                .zip(&n)
                .map(|(gi, ni)| (gi - gn_n * ni) / w_norm)
                .collect();
            let grad = HyperplaneGrad {
                to: linalg::scale(&g_from, -1.0),
                from: g_from,
                translation: s,
                normal: g_w,
            };
            (linalg::l1(&d), grad)
        }
    }
}

struct TripleRows {
    head: Vec<f64>,
    tail: Vec<f64>,
    rel: Vec<f64>,
    normal: Option<Vec<f64>>,
}

fn gather<S: Scalar>(space: &EmbeddingSpace<S>, t: &Triple, variant: KgcVariant) -> TripleRows {
    TripleRows {
        head: space.row_f64(Table::Entity, t.head),
        tail: space.row_f64(Table::Entity, t.tail),
        rel: space.row_f64(Table::Relation, t.relation),
        normal: match variant {
            KgcVariant::TransE => None,
            KgcVariant::TransH => Some(space.row_f64(Table::RelationNorm, t.relation)),
        },
    }
}

/// Energy of a fact; lower means more plausible.
pub fn score_triple<S: Scalar>(space: &EmbeddingSpace<S>, t: &Triple, config: &KgcConfig) -> f64 {
    let rows = gather(space, t, config.variant);
    hyperplane_distance(&rows.head, &rows.tail, &rows.rel, rows.normal.as_deref())
}

fn accumulate_triple(
    grads: &mut Gradients,
    t: &Triple,
    scale: f64,
    g: &HyperplaneGrad,
) {
    grads.add(Table::Entity, t.head, scale, &g.from);
    grads.add(Table::Entity, t.tail, scale, &g.to);
    grads.add(Table::Relation, t.relation, scale, &g.translation);
    if !g.normal.is_empty() {
        grads.add(Table::RelationNorm, t.relation, scale, &g.normal);
    }
}

/// `[f(pos) + margin - f(neg)]_+`. When the hinge is active, adds
/// `scale * d loss / d theta` for every touched row into `grads`.
pub fn kgc_loss_into<S: Scalar>(
    space: &EmbeddingSpace<S>,
    pos: &Triple,
    neg: &Triple,
    config: &KgcConfig,
    scale: f64,
    grads: &mut Gradients,
) -> f64 {
    let p = gather(space, pos, config.variant);
    let n = gather(space, neg, config.variant);
    let (fp, gp) = hyperplane_distance_grad(&p.head, &p.tail, &p.rel, p.normal.as_deref());
    let (fn_, gn) = hyperplane_distance_grad(&n.head, &n.tail, &n.rel, n.normal.as_deref());
    let loss = fp + config.margin - fn_;
    if loss <= 0.0 {
        return 0.0;
    }
    accumulate_triple(grads, pos, scale, &gp);
    accumulate_triple(grads, neg, -scale, &gn);
    loss
}

pub fn kgc_loss<S: Scalar>(
    space: &EmbeddingSpace<S>,
    pos: &Triple,
    neg: &Triple,
    config: &KgcConfig,
) -> (f64, Gradients) {
    let mut g = Gradients::new();
    let loss = kgc_loss_into(space, pos, neg, config, 1.0, &mut g);
    (loss, g)
}
