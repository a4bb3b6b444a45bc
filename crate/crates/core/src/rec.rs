//! Preference induction and hyperplane-translation scoring for recommendation.
//!
//! A user-item pair is scored as `|P u + p - P i|_1` where the translation `p`
//! and hyperplane normal `w` come from a set of latent preferences. Preferences
//! are weighted by attention over the logits `(u + i) . p_k` (soft) or picked
//! by a straight-through Gumbel sample (hard). In the knowledge-enhanced
//! variant the item is `i + e` for its aligned entity and each preference is
//! paired with relation `k`: `p_k + r_k`, `w_pk + w_rk`.
//!
//! Backward pass through the attention, with `y` the surrogate distribution
//! (`y = alpha` in soft mode), `tau` its temperature and `ga_k` the gradient
//! w.r.t. the weight of preference `k`:
//!
//! ```text
//! d/d logit_k = y_k (ga_k - sum_j y_j ga_j) / tau
//! ```

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSpace, Scalar, Table};
use crate::error::{Error, Result};
use crate::grad::Gradients;
use crate::kgc::{hyperplane_distance, hyperplane_distance_grad};
use crate::linalg::{self, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Hard,
    Soft,
}

/// Distribution fed through `-ln(-ln(u))` to make Gumbel noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `u ~ Uniform(0, 1)`, the standard construction.
    Uniform,
    /// `u ~ N(0, 1)` truncated to `(0, 1)`.
    Normal,
    /// No noise: the hard strategy degenerates to argmax.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceInduction {
    pub strategy: Strategy,
    pub tau: f64,
    pub noise: NoiseKind,
}

impl PreferenceInduction {
    pub fn new(strategy: Strategy, tau: f64, noise: NoiseKind) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        Ok(PreferenceInduction {
            strategy,
            tau,
            noise,
        })
    }

    pub fn soft() -> Self {
        PreferenceInduction {
            strategy: Strategy::Soft,
            tau: 1.0,
            noise: NoiseKind::Uniform,
        }
    }
}

/// Translation and (unnormalised) normal vector of every preference.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBasis {
    pub translation: Vec<Vec<f64>>,
    pub normal: Vec<Vec<f64>>,
}

impl PreferenceBasis {
    /// Plain preferences, or preferences enhanced with their paired relation.
    pub fn from_space<S: Scalar>(space: &EmbeddingSpace<S>, enhanced: bool) -> Self {
        let n = space.table(Table::Pref).rows();
        let mut translation = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        for k in 0..n {
            let mut p = space.row_f64(Table::Pref, k);
            let mut w = space.row_f64(Table::PrefNorm, k);
            if enhanced {
                linalg::axpy(&mut p, 1.0, &space.table(Table::Relation).row_f64(k));
                linalg::axpy(&mut w, 1.0, &space.table(Table::RelationNorm).row_f64(k));
            }
            translation.push(p);
            normal.push(w);
        }
        PreferenceBasis { translation, normal }
    }

    pub fn len(&self) -> usize {
        self.translation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.translation.is_empty()
    }
}

/// Dot-product similarity of `u + i` with each preference translation.
pub fn preference_logits(user: &[f64], item: &[f64], basis: &PreferenceBasis) -> Vec<f64> {
    let ui = linalg::add(user, item);
    basis.translation.iter().map(|p| dot(&ui, p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InducedPreference {
    /// Forward weights; one-hot for the hard strategy.
    pub weights: Vec<f64>,
    /// Distribution whose gradient the backward pass follows.
    pub surrogate: Vec<f64>,
    pub tau: f64,
    pub translation: Vec<f64>,
    /// Combined normal before normalisation.
    pub normal: Vec<f64>,
    pub selected: Option<usize>,
}

fn combine(weights: &[f64], basis: &PreferenceBasis) -> (Vec<f64>, Vec<f64>) {
    let dim = basis.translation.first().map_or(0, Vec::len);
    let mut p = vec![0.0; dim];
    let mut w = vec![0.0; dim];
    for (k, &a) in weights.iter().enumerate() {
        if a != 0.0 {
            linalg::axpy(&mut p, a, &basis.translation[k]);
            linalg::axpy(&mut w, a, &basis.normal[k]);
        }
    }
    (p, w)
}

/// Attention over all preferences.
pub fn induce_soft(logits: &[f64], basis: &PreferenceBasis) -> InducedPreference {
    let alpha = linalg::softmax(logits, 1.0);
    let (translation, normal) = combine(&alpha, basis);
    InducedPreference {
        surrogate: alpha.clone(),
        weights: alpha,
        tau: 1.0,
        translation,
        normal,
        selected: None,
    }
}

/// Draws one Gumbel variate per class.
pub fn gumbel_noise(n: usize, kind: NoiseKind, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u = match kind {
                NoiseKind::Off => return 0.0,
                NoiseKind::Uniform => loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                },
                NoiseKind::Normal => loop {
                    let u: f64 = StandardNormal.sample(rng);
                    if u > 0.0 && u < 1.0 {
                        break u;
                    }
                },
            };
            -(-u.ln()).ln()
        })
        .collect()
}

/// Straight-through Gumbel-softmax: the forward pass uses the one-hot argmax of
/// `log_softmax(logits) + noise`, the backward pass follows
/// `softmax((log_softmax(logits) + noise) / tau)`.
pub fn induce_hard(logits: &[f64], tau: f64, noise: &[f64], basis: &PreferenceBasis) -> InducedPreference {
    let perturbed: Vec<f64> = linalg::log_softmax(logits)
        .iter()
        .zip(noise)
        .map(|(l, g)| l + g)
        .collect();
    let k = linalg::argmax(&perturbed);
    let mut one_hot = vec![0.0; logits.len()];
    one_hot[k] = 1.0;
    let (translation, normal) = combine(&one_hot, basis);
    InducedPreference {
        weights: one_hot,
        surrogate: linalg::softmax(&perturbed, tau),
        tau,
        translation,
        normal,
        selected: Some(k),
    }
}

pub fn induce(
    logits: &[f64],
    basis: &PreferenceBasis,
    induction: &PreferenceInduction,
    rng: &mut impl Rng,
) -> InducedPreference {
    match induction.strategy {
        Strategy::Soft => induce_soft(logits, basis),
        Strategy::Hard => {
            let noise = gumbel_noise(logits.len(), induction.noise, rng);
            induce_hard(logits, induction.tau, &noise, basis)
        }
    }
}

/// Gradient w.r.t. the logits given the gradient w.r.t. the weights.
pub fn attention_backward(surrogate: &[f64], tau: f64, grad_weights: &[f64]) -> Vec<f64> {
    let mean = dot(surrogate, grad_weights);
    surrogate
        .iter()
        .zip(grad_weights)
        .map(|(y, g)| y * (g - mean) / tau)
        .collect()
}

/// `|P u + p - P i|_1` for an induced preference.
pub fn score_tup(user: &[f64], item: &[f64], pref: &InducedPreference) -> f64 {
    hyperplane_distance(user, item, &pref.translation, Some(&pref.normal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    /// Per-preference gradient of the translation rows.
    pub translation: Vec<Vec<f64>>,
    /// Per-preference gradient of the normal rows.
    pub normal: Vec<Vec<f64>>,
}

/// Score of the pair and its gradient through the induced preference and the
/// attention logits.
pub fn score_pair_grad(
    user: &[f64],
    item: &[f64],
    basis: &PreferenceBasis,
    pref: &InducedPreference,
) -> (f64, PairGrad) {
    let (score, h) = hyperplane_distance_grad(user, item, &pref.translation, Some(&pref.normal));
    let grad_weights: Vec<f64> = (0..basis.len())
        .map(|k| dot(&h.translation, &basis.translation[k]) + dot(&h.normal, &basis.normal[k]))
        .collect();
    let grad_logits = attention_backward(&pref.surrogate, pref.tau, &grad_weights);
    let ui = linalg::add(user, item);
    let mut g_user = h.from;
    let mut g_item = h.to;
    let mut translation = Vec::with_capacity(basis.len());
    let mut normal = Vec::with_capacity(basis.len());
    for k in 0..basis.len() {
        let a = pref.weights[k];
        let gl = grad_logits[k];
        linalg::axpy(&mut g_user, gl, &basis.translation[k]);
        linalg::axpy(&mut g_item, gl, &basis.translation[k]);
        let mut gt = linalg::scale(&h.translation, a);
        linalg::axpy(&mut gt, gl, &ui);
        translation.push(gt);
        normal.push(linalg::scale(&h.normal, a));
    }
    (
        score,
        PairGrad {
            user: g_user,
            item: g_item,
            translation,
            normal,
        },
    )
}

/// Which recommendation scorer a space is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecKind {
    /// Dot-product matrix factorisation, used only to pretrain users and items.
    Bprmf,
    Tup,
    Ktup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecConfig {
    pub kind: RecKind,
    pub induction: PreferenceInduction,
}

impl RecConfig {
    fn enhanced(&self) -> bool {
        self.kind == RecKind::Ktup
    }
}

/// Item vector as seen by the recommender: `i + e` when enhanced and aligned.
pub fn item_vector<S: Scalar>(
    space: &EmbeddingSpace<S>,
    item: usize,
    entity: Option<usize>,
    enhanced: bool,
) -> Vec<f64> {
    let mut v = space.row_f64(Table::Item, item);
    if enhanced {
        if let Some(e) = entity {
            linalg::axpy(&mut v, 1.0, &space.table(Table::Entity).row_f64(e));
        }
    }
    v
}

/// Knowledge-enhanced score of one pair, with the preference it induced.
/// `item_entity` maps items to aligned entities.
pub fn score_ktup<S: Scalar>(
    space: &EmbeddingSpace<S>,
    user: usize,
    item: usize,
    item_entity: &[Option<usize>],
    induction: &PreferenceInduction,
    rng: &mut impl Rng,
) -> (f64, InducedPreference) {
    let basis = PreferenceBasis::from_space(space, true);
    let u = space.row_f64(Table::User, user);
    let i = item_vector(space, item, item_entity.get(item).copied().flatten(), true);
    let logits = preference_logits(&u, &i, &basis);
    let pref = induce(&logits, &basis, induction, rng);
    (score_tup(&u, &i, &pref), pref)
}

/// Precomputed view for scoring many pairs against one space.
pub struct RecScorer<'a, S: Scalar> {
    space: &'a EmbeddingSpace<S>,
    config: RecConfig,
    basis: PreferenceBasis,
    items: Vec<Vec<f64>>,
}

impl<'a, S: Scalar> RecScorer<'a, S> {
    pub fn new(space: &'a EmbeddingSpace<S>, config: RecConfig, item_entity: &[Option<usize>]) -> Self {
        let enhanced = config.enhanced();
        let basis = if config.kind == RecKind::Bprmf {
            PreferenceBasis {
                translation: Vec::new(),
                normal: Vec::new(),
            }
        } else {
            PreferenceBasis::from_space(space, enhanced)
        };
        let items = (0..space.table(Table::Item).rows())
            .map(|i| item_vector(space, i, item_entity.get(i).copied().flatten(), enhanced))
            .collect();
        RecScorer {
            space,
            config,
            basis,
            items,
        }
    }

    pub fn basis(&self) -> &PreferenceBasis {
        &self.basis
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i]
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Deterministic induction used at evaluation time (hard = noise-free argmax).
    pub fn induce_eval(&self, user: &[f64], item: &[f64]) -> InducedPreference {
        let logits = preference_logits(user, item, &self.basis);
        match self.config.induction.strategy {
            Strategy::Soft => induce_soft(&logits, &self.basis),
            Strategy::Hard => {
                let zeros = vec![0.0; logits.len()];
                induce_hard(&logits, self.config.induction.tau, &zeros, &self.basis)
            }
        }
    }

    /// Ranking key for every item: lower ranks first. Distances for the
    /// translation models, negated dot products for matrix factorisation.
    pub fn rank_keys(&self, user: usize) -> Vec<f64> {
        let u = self.space.row_f64(Table::User, user);
        self.items
            .iter()
            .map(|i| match self.config.kind {
                RecKind::Bprmf => -dot(&u, i),
                _ => score_tup(&u, i, &self.induce_eval(&u, i)),
            })
            .collect()
    }
}

/// BPR loss `-ln sigmoid(g(u, neg) - g(u, pos))` for the distance models, or
/// `-ln sigmoid(s(u, pos) - s(u, neg))` for dot-product factorisation. Adds
/// `scale * gradient` into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn bpr_loss_into<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: &RecConfig,
    item_entity: &[Option<usize>],
    user: usize,
    pos: usize,
    neg: usize,
    scale: f64,
    grads: &mut Gradients,
    rng: &mut impl Rng,
) -> f64 {
    let u = space.row_f64(Table::User, user);
    if config.kind == RecKind::Bprmf {
        let ip = space.row_f64(Table::Item, pos);
        let ineg = space.row_f64(Table::Item, neg);
        let diff = dot(&u, &ip) - dot(&u, &ineg);
        let loss = linalg::softplus(-diff);
        let g = -linalg::sigmoid(-diff) * scale;
        grads.add(Table::User, user, g, &linalg::sub(&ip, &ineg));
        grads.add(Table::Item, pos, g, &u);
        grads.add(Table::Item, neg, -g, &u);
        return loss;
    }
    let enhanced = config.enhanced();
    let basis = PreferenceBasis::from_space(space, enhanced);
    let ent = |i: usize| item_entity.get(i).copied().flatten();
    let mut pair = |item: usize| {
        let iv = item_vector(space, item, ent(item), enhanced);
        let logits = preference_logits(&u, &iv, &basis);
        let pref = induce(&logits, &basis, &config.induction, &mut *rng);
        score_pair_grad(&u, &iv, &basis, &pref)
    };
    let (g_pos, grad_pos) = pair(pos);
    let (g_neg, grad_neg) = pair(neg);
    let diff = g_pos - g_neg;
    let loss = linalg::softplus(diff);
    let d = linalg::sigmoid(diff) * scale;
    for (item, grad, sgn) in [(pos, &grad_pos, d), (neg, &grad_neg, -d)] {
        grads.add(Table::User, user, sgn, &grad.user);
        grads.add(Table::Item, item, sgn, &grad.item);
        if enhanced {
            if let Some(e) = ent(item) {
                grads.add(Table::Entity, e, sgn, &grad.item);
            }
        }
        for k in 0..basis.len() {
            grads.add(Table::Pref, k, sgn, &grad.translation[k]);
            grads.add(Table::PrefNorm, k, sgn, &grad.normal[k]);
            if enhanced {
                grads.add(Table::Relation, k, sgn, &grad.translation[k]);
                grads.add(Table::RelationNorm, k, sgn, &grad.normal[k]);
            }
        }
    }
    loss
}
