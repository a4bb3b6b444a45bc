//! Ranking evaluation for both tasks.
//!
//! Per-query values are computed independently (in parallel when the rayon
//! pool has more than one thread), collected in query order and then summed
//! sequentially, so reports do not depend on the thread count.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationCategory, RelationProfile, Role, SparsityBuckets, Triple};
use crate::dataset::Dataset;
use crate::embedding::{EmbeddingSpace, Scalar, Table};
use crate::kgc::{distance_with_unit_normal, normalize, KgcConfig, KgcVariant};
use crate::rec::{RecConfig, RecScorer};
use crate::sampler::Side;

pub const DEFAULT_CUTOFF: usize = 10;

fn key_order(keys: &[f64], a: usize, b: usize) -> Ordering {
    keys[a].total_cmp(&keys[b]).then(a.cmp(&b))
}

/// The `n` best candidates by ascending key (ties by index), skipping
/// excluded indices.
pub fn top_n(keys: &[f64], excluded: impl Fn(usize) -> bool, n: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..keys.len()).filter(|&i| !excluded(i)).collect();
    if cand.len() > n && n > 0 {
        cand.select_nth_unstable_by(n - 1, |&a, &b| key_order(keys, a, b));
        cand.truncate(n);
    }
    cand.sort_by(|&a, &b| key_order(keys, a, b));
    cand.truncate(n);
    cand
}

/// 1-based position of `target` among the non-excluded candidates.
pub fn rank_of(keys: &[f64], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    1 + (0..keys.len())
        .filter(|&c| c != target && !excluded(c) && key_order(keys, c, target) == Ordering::Less)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hit: f64,
    pub ndcg: f64,
}

/// Metrics at cutoff `n` for one user's ranked list. Gains are binary; the
/// ideal DCG fills `min(|relevant|, n)` slots.
pub fn user_metrics(ranked: &[usize], relevant: &HashSet<usize>, n: usize) -> UserMetrics {
    let top = &ranked[..ranked.len().min(n)];
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in top.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..relevant.len().min(n)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    let precision = hits as f64 / n as f64;
    let recall = if relevant.is_empty() { 0.0 } else { hits as f64 / relevant.len() as f64 };
    let f1 = if hits == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    UserMetrics {
        precision,
        recall,
        f1,
        hit: if hits > 0 { 1.0 } else { 0.0 },
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecMetrics {
    pub n: usize,
    pub users: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hit: f64,
    pub ndcg: f64,
}

impl RecMetrics {
    pub fn mean<'a>(per_user: impl IntoIterator<Item = &'a UserMetrics>, n: usize) -> Self {
        let mut m = RecMetrics {
            n,
            ..Default::default()
        };
        for u in per_user {
            m.users += 1;
            m.precision += u.precision;
            m.recall += u.recall;
            m.f1 += u.f1;
            m.hit += u.hit;
            m.ndcg += u.ndcg;
        }
        if m.users > 0 {
            let k = m.users as f64;
            m.precision /= k;
            m.recall /= k;
            m.f1 /= k;
            m.hit /= k;
            m.ndcg /= k;
        }
        m
    }
}

/// Known positives and held-out targets per user for one evaluation split.
pub struct RecTargets {
    pub excluded: Vec<HashSet<usize>>,
    pub relevant: Vec<HashSet<usize>>,
}

impl RecTargets {
    /// Validation excludes train positives; test excludes train and validation
    /// positives.
    pub fn new(dataset: &Dataset, split: Role) -> Self {
        let set = &dataset.interactions;
        let mut excluded: Vec<HashSet<usize>> = set
            .items_by_user(Role::Train)
            .into_iter()
            .map(|v| v.into_iter().collect())
            .collect();
        if split == Role::Test {
            for (u, items) in set.items_by_user(Role::Valid).into_iter().enumerate() {
                excluded[u].extend(items);
            }
        }
        let relevant = set
            .items_by_user(split)
            .into_iter()
            .map(|v| v.into_iter().collect())
            .collect();
        RecTargets { excluded, relevant }
    }
}

/// Per-user metrics; `None` for users without held-out items in the split.
pub fn eval_rec_per_user<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: RecConfig,
    dataset: &Dataset,
    split: Role,
    n: usize,
) -> Vec<Option<UserMetrics>> {
    let scorer = RecScorer::new(space, config, &dataset.item_entity());
    let targets = RecTargets::new(dataset, split);
    (0..dataset.interactions.num_users())
        .into_par_iter()
        .map(|u| {
            if targets.relevant[u].is_empty() {
                return None;
            }
            let keys = scorer.rank_keys(u);
            let top = top_n(&keys, |i| targets.excluded[u].contains(&i), n);
            Some(user_metrics(&top, &targets.relevant[u], n))
        })
        .collect()
}

pub fn eval_rec<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: RecConfig,
    dataset: &Dataset,
    split: Role,
    n: usize,
) -> RecMetrics {
    let per_user = eval_rec_per_user(space, config, dataset, split, n);
    RecMetrics::mean(per_user.iter().flatten(), n)
}

/// Metrics restricted to each user group.
pub fn eval_by_sparsity(per_user: &[Option<UserMetrics>], buckets: &SparsityBuckets, n: usize) -> Vec<RecMetrics> {
    buckets
        .groups
        .iter()
        .map(|g| RecMetrics::mean(g.iter().filter_map(|&u| per_user[u].as_ref()), n))
        .collect()
}

/// Top-`n` unseen items for a user (train and validation positives removed),
/// best first, with their ranking keys.
pub fn recommend<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: RecConfig,
    dataset: &Dataset,
    user: usize,
    n: usize,
) -> Vec<(usize, f64)> {
    let scorer = RecScorer::new(space, config, &dataset.item_entity());
    let targets = RecTargets::new(dataset, Role::Test);
    let keys = scorer.rank_keys(user);
    top_n(&keys, |i| targets.excluded[user].contains(&i), n)
        .into_iter()
        .map(|i| (i, keys[i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecRank {
    pub user: usize,
    pub item: usize,
    pub rank: usize,
}

/// Rank of every held-out positive among its user's candidates.
pub fn rec_ranks<S: Scalar>(space: &EmbeddingSpace<S>, config: RecConfig, dataset: &Dataset, split: Role) -> Vec<RecRank> {
    let scorer = RecScorer::new(space, config, &dataset.item_entity());
    let targets = RecTargets::new(dataset, split);
    (0..dataset.interactions.num_users())
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rel: Vec<usize> = targets.relevant[u].iter().copied().collect();
            rel.sort_unstable();
            let keys = if rel.is_empty() { Vec::new() } else { scorer.rank_keys(u) };
            let excluded = &targets.excluded[u];
            rel.into_iter()
                .map(|item| RecRank {
                    user: u,
                    item,
                    rank: rank_of(&keys, item, |c| excluded.contains(&c)),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgcRank {
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub side: Side,
    pub raw: usize,
    pub filtered: usize,
}

/// Raw and filtered rank of the missing entity, head side then tail side,
/// for every query triple.
pub fn kgc_ranks<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: &KgcConfig,
    queries: &[Triple],
    known: &HashSet<Triple>,
) -> Vec<KgcRank> {
    let entities: Vec<Vec<f64>> = (0..space.table(Table::Entity).rows())
        .map(|e| space.row_f64(Table::Entity, e))
        .collect();
    queries
        .par_iter()
        .flat_map_iter(|q| {
            let rel = space.row_f64(Table::Relation, q.relation);
            let normal = match config.variant {
                KgcVariant::TransE => None,
                KgcVariant::TransH => Some(normalize(&space.row_f64(Table::RelationNorm, q.relation)).0),
            };
            [Side::Head, Side::Tail].map(|side| {
                let keys: Vec<f64> = entities
                    .iter()
                    .map(|c| match side {
                        Side::Head => distance_with_unit_normal(c, &entities[q.tail], &rel, normal.as_deref()),
                        Side::Tail => distance_with_unit_normal(&entities[q.head], c, &rel, normal.as_deref()),
                    })
                    .collect();
                let corrupt = |c: usize| match side {
                    Side::Head => Triple::new(c, q.tail, q.relation),
                    Side::Tail => Triple::new(q.head, c, q.relation),
                };
                let gold = match side {
                    Side::Head => q.head,
                    Side::Tail => q.tail,
                };
                KgcRank {
                    head: q.head,
                    tail: q.tail,
                    relation: q.relation,
                    side,
                    raw: rank_of(&keys, gold, |_| false),
                    filtered: rank_of(&keys, gold, |c| known.contains(&corrupt(c))),
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankStats {
    pub queries: usize,
    pub hits_raw: f64,
    pub hits_filtered: f64,
    pub mean_rank_raw: f64,
    pub mean_rank_filtered: f64,
}

impl RankStats {
    pub fn from_ranks<'a>(ranks: impl IntoIterator<Item = &'a KgcRank>, hits_at: usize) -> Self {
        let mut s = RankStats::default();
        for r in ranks {
            s.queries += 1;
            s.hits_raw += (r.raw <= hits_at) as u8 as f64;
            s.hits_filtered += (r.filtered <= hits_at) as u8 as f64;
            s.mean_rank_raw += r.raw as f64;
            s.mean_rank_filtered += r.filtered as f64;
        }
        if s.queries > 0 {
            let k = s.queries as f64;
            s.hits_raw /= k;
            s.hits_filtered /= k;
            s.mean_rank_raw /= k;
            s.mean_rank_filtered /= k;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: RelationCategory,
    pub head: RankStats,
    pub tail: RankStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgcMetrics {
    pub hits_at: usize,
    pub head: RankStats,
    pub tail: RankStats,
    pub overall: RankStats,
    pub by_category: Vec<CategoryRow>,
}

pub fn summarize_kgc(ranks: &[KgcRank], profile: Option<&RelationProfile>, hits_at: usize) -> KgcMetrics {
    let side = |s: Side| RankStats::from_ranks(ranks.iter().filter(|r| r.side == s), hits_at);
    let by_category = match profile {
        None => Vec::new(),
        Some(p) => RelationCategory::ALL
            .iter()
            .map(|&cat| {
                let of = |s: Side| {
                    RankStats::from_ranks(
                        ranks
                            .iter()
                            .filter(|r| r.side == s && p.category(r.relation) == Some(cat)),
                        hits_at,
                    )
                };
                CategoryRow {
                    category: cat,
                    head: of(Side::Head),
                    tail: of(Side::Tail),
                }
            })
            .collect(),
    };
    KgcMetrics {
        hits_at,
        head: side(Side::Head),
        tail: side(Side::Tail),
        overall: RankStats::from_ranks(ranks, hits_at),
        by_category,
    }
}

pub fn eval_kgc<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: &KgcConfig,
    test: &[Triple],
    known: &HashSet<Triple>,
    profile: Option<&RelationProfile>,
) -> KgcMetrics {
    summarize_kgc(&kgc_ranks(space, config, test, known), profile, DEFAULT_CUTOFF)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> HashSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn single_relevant_ranked_first() {
        let m = user_metrics(&[7, 1, 2, 3, 4, 5, 6, 8, 9, 10], &set(&[7]), 10);
        assert_eq!(m.precision, 0.1);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 * 0.1 / 1.1).abs() < 1e-15);
        assert!((m.f1 - 0.1818).abs() < 1e-4);
        assert_eq!(m.hit, 1.0);
        assert_eq!(m.ndcg, 1.0);
    }

    #[test]
    fn miss_gives_all_zero() {
        let m = user_metrics(&[0, 1, 2], &set(&[9]), 10);
        assert_eq!(m, UserMetrics::default());
    }

    #[test]
    fn relevant_at_rank_three() {
        let m = user_metrics(&[0, 1, 5, 2], &set(&[5]), 10);
        assert!((m.ndcg - 0.5).abs() < 1e-15);
    }

    #[test]
    fn top_n_breaks_ties_by_index() {
        let keys = [0.5, 0.1, 0.5, 0.1, 0.9];
        assert_eq!(top_n(&keys, |_| false, 3), vec![1, 3, 0]);
        assert_eq!(top_n(&keys, |i| i == 1, 2), vec![3, 0]);
        assert_eq!(rank_of(&keys, 2, |_| false), 4);
    }

    #[test]
    fn mean_rank_of_fixed_ranks() {
        let ranks: Vec<KgcRank> = [1, 3, 5]
            .iter()
            .map(|&r| KgcRank {
                head: 0,
                tail: 0,
                relation: 0,
                side: Side::Tail,
                raw: r,
                filtered: r,
            })
            .collect();
        let s = RankStats::from_ranks(&ranks, 10);
        assert_eq!(s.mean_rank_filtered, 3.0);
        assert_eq!(s.hits_filtered, 1.0);
    }
}
