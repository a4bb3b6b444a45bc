//! Recommendation rationales: which preferences a user's history leans on,
//! named by their paired relation, and which history items connect to each
//! recommendation through a shared neighbour under those relations.

use std::collections::{BTreeSet, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Role;
use crate::dataset::Dataset;
use crate::embedding::{EmbeddingSpace, Scalar, Table};
use crate::error::{Error, Result};
use crate::eval::recommend;
use crate::linalg::softmax;
use crate::rec::{preference_logits, RecConfig, RecKind, RecScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceWeight {
    pub index: usize,
    /// Relation name for the knowledge-enhanced model, `pref-<k>` otherwise.
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub history_item: String,
    pub entity: String,
    pub relation: String,
    pub neighbor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub user: String,
    pub item: String,
    pub rank: usize,
    pub score: f64,
    pub preferences: Vec<PreferenceWeight>,
    pub support: Vec<Support>,
}

/// Mean soft attention over preferences across the user's training items.
pub fn aggregate_attention<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: RecConfig,
    dataset: &Dataset,
    user: usize,
) -> Result<Vec<f64>> {
    if config.kind == RecKind::Bprmf {
        return Err(Error::Config("bprmf has no preferences to explain".into()));
    }
    let history = &dataset.interactions.items_by_user(Role::Train)[user];
    if history.is_empty() {
        return Err(Error::Data(format!(
            "user `{}` has no train interactions",
            dataset.interactions.users().name(user)
        )));
    }
    let scorer = RecScorer::new(space, config, &dataset.item_entity());
    let u = space.row_f64(Table::User, user);
    let mut agg = vec![0.0; scorer.basis().len()];
    for &i in history {
        let alpha = softmax(&preference_logits(&u, scorer.item(i), scorer.basis()), 1.0);
        for (a, x) in agg.iter_mut().zip(alpha) {
            *a += x;
        }
    }
    for a in &mut agg {
        *a /= history.len() as f64;
    }
    Ok(agg)
}

/// Top `top_prefs` preferences by weight, heaviest first (ties by index).
pub fn top_preferences(weights: &[f64], names: &[String], top_prefs: usize) -> Vec<PreferenceWeight> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(top_prefs)
        .map(|k| PreferenceWeight {
            index: k,
            name: names[k].clone(),
            weight: weights[k],
        })
        .collect()
}

/// Rationales for the user's top `top_items` recommendations, in ranking order.
pub fn explain_user<S: Scalar>(
    space: &EmbeddingSpace<S>,
    config: RecConfig,
    dataset: &Dataset,
    user: usize,
    top_prefs: usize,
    top_items: usize,
    max_support: usize,
) -> Result<Vec<Rationale>> {
    let weights = aggregate_attention(space, config, dataset, user)?;
    let relations = dataset.relation_vocab().filter(|_| config.kind == RecKind::Ktup);
    let names: Vec<String> = match relations {
        Some(v) => v.names().to_vec(),
        None => {
            warn!("preferences are not tied to relations; using anonymous ids");
            (0..weights.len()).map(|k| format!("pref-{k}")).collect()
        }
    };
    let prefs = top_preferences(&weights, &names, top_prefs);

    // entity -> relation -> neighbours in either direction
    let mut adjacency: HashMap<(usize, usize), BTreeSet<usize>> = HashMap::new();
    if relations.is_some() {
        for t in dataset.all_triples() {
            adjacency.entry((t.head, t.relation)).or_default().insert(t.tail);
            adjacency.entry((t.tail, t.relation)).or_default().insert(t.head);
        }
    }
    let entities = dataset.entity_vocab();
    let items = dataset.interactions.items();
    let history = &dataset.interactions.items_by_user(Role::Train)[user];
    let empty = BTreeSet::new();

    let recs = recommend(space, config, dataset, user, top_items);
    Ok(recs
        .into_iter()
        .enumerate()
        .map(|(pos, (item, score))| {
            let mut support = Vec::new();
            if let (Some(ents), Some(target)) = (entities, dataset.alignments.entity_of(item)) {
                'outer: for p in &prefs {
                    let near_target = adjacency.get(&(target, p.index)).unwrap_or(&empty);
                    for &h in history {
                        let Some(he) = dataset.alignments.entity_of(h) else { continue };
                        let near_h = adjacency.get(&(he, p.index)).unwrap_or(&empty);
                        for &x in near_h.intersection(near_target) {
                            if support.len() >= max_support {
                                break 'outer;
                            }
                            support.push(Support {
                                history_item: items.name(h).to_string(),
                                entity: ents.name(he).to_string(),
                                relation: p.name.clone(),
                                neighbor: ents.name(x).to_string(),
                            });
                        }
                    }
                }
            }
            Rationale {
                user: dataset.interactions.users().name(user).to_string(),
                item: items.name(item).to_string(),
                rank: pos + 1,
                score,
                preferences: prefs.clone(),
                support,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preferences_sorted_heaviest_first() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let top = top_preferences(&[0.2, 0.5, 0.3], &names, 2);
        assert_eq!(top.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        let tied = top_preferences(&[0.5, 0.5], &names[..2], 5);
        assert_eq!(tied[0].index, 0);
        assert_eq!(tied.len(), 2);
    }
}
