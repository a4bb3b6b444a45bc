//! Negative sampling for both tasks.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{relation_categories, Triple, DEFAULT_CATEGORY_CUTOFF};
use crate::error::{Error, Result};

pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecNegative {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgcNegative {
    pub pos: Triple,
    pub neg: Triple,
    pub side: Side,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeBatch {
    pub rec: Vec<RecNegative>,
    pub kgc: Vec<KgcNegative>,
}

/// Training positives per user.
#[derive(Debug, Clone)]
pub struct UserItemIndex {
    items: Vec<HashSet<usize>>,
    num_items: usize,
}

impl UserItemIndex {
    pub fn new(items_by_user: &[Vec<usize>], num_items: usize) -> Self {
        UserItemIndex {
            items: items_by_user.iter().map(|v| v.iter().copied().collect()).collect(),
            num_items,
        }
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.items.get(user).is_some_and(|s| s.contains(&item))
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }
}

fn draw_rec_negative(user: usize, index: &UserItemIndex, rng: &mut impl Rng) -> Result<usize> {
    let n = index.num_items;
    let owned = index.items.get(user).map_or(0, HashSet::len);
    if owned >= n {
        return Err(Error::Sampling(format!("user {user} has interacted with every item")));
    }
    for _ in 0..MAX_RETRIES {
        let i = rng.random_range(0..n);
        if !index.contains(user, i) {
            return Ok(i);
        }
    }
    // Dense users: draw uniformly from the complement directly.
    let k = rng.random_range(0..n - owned);
    Ok((0..n).filter(|&i| !index.contains(user, i)).nth(k).unwrap())
}

/// One uniform non-interacted item per positive pair.
pub fn sample_rec_negatives(
    batch: &[(usize, usize)],
    index: &UserItemIndex,
    rng: &mut impl Rng,
) -> Result<Vec<RecNegative>> {
    batch
        .iter()
        .map(|&(user, pos)| {
            Ok(RecNegative {
                user,
                pos,
                neg: draw_rec_negative(user, index, rng)?,
            })
        })
        .collect()
}

/// How the corrupted side is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// Head or tail with probability 1/2.
    Uniform,
    /// Head with probability `tph / (tph + hpt)` of the relation.
    Bernoulli,
}

/// Known facts used to reject false negatives.
#[derive(Debug, Clone)]
pub struct TripleIndex {
    known: HashSet<Triple>,
    num_entities: usize,
    head_prob: Vec<f64>,
}

impl TripleIndex {
    pub fn new(triples: &[Triple], num_entities: usize, num_relations: usize) -> Self {
        let profile = relation_categories(triples, num_relations, DEFAULT_CATEGORY_CUTOFF);
        let head_prob = profile
            .relations
            .iter()
            .map(|s| s.map_or(0.5, |s| s.tails_per_head / (s.tails_per_head + s.heads_per_tail)))
            .collect();
        TripleIndex {
            known: triples.iter().copied().collect(),
            num_entities,
            head_prob,
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }
}

pub fn corrupt(
    pos: &Triple,
    index: &TripleIndex,
    corruption: Corruption,
    rng: &mut impl Rng,
) -> Result<KgcNegative> {
    if index.num_entities < 2 {
        return Err(Error::Sampling("negative sampling needs at least two entities".into()));
    }
    for _ in 0..MAX_RETRIES {
        let p_head = match corruption {
            Corruption::Uniform => 0.5,
            Corruption::Bernoulli => index.head_prob.get(pos.relation).copied().unwrap_or(0.5),
        };
        let side = if rng.random::<f64>() < p_head { Side::Head } else { Side::Tail };
        let e = rng.random_range(0..index.num_entities);
        let neg = match side {
            Side::Head => Triple::new(e, pos.tail, pos.relation),
            Side::Tail => Triple::new(pos.head, e, pos.relation),
        };
        if !index.contains(&neg) {
            return Ok(KgcNegative { pos: *pos, neg, side });
        }
    }
    Err(Error::Sampling(format!(
        "no corruption of {pos:?} outside the graph after {MAX_RETRIES} draws"
    )))
}

/// One corrupted triple per positive; the corruption is never a known fact.
pub fn sample_kgc_negatives(
    batch: &[Triple],
    index: &TripleIndex,
    corruption: Corruption,
    rng: &mut impl Rng,
) -> Result<Vec<KgcNegative>> {
    batch.iter().map(|t| corrupt(t, index, corruption, rng)).collect()
}
