//! Interaction, triple and alignment ingestion.
//!
//! Raw files are tab separated and UTF-8. Lines starting with `#` and blank
//! lines are skipped. Raw string ids are mapped to dense indices in
//! lexicographic order so the assignment is reproducible without a seed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bijection between raw string ids and `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from raw ids, sorted and deduplicated.
    pub fn from_unsorted<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        Self::from_ordered(set.into_iter().collect())
    }

    /// Uses `names` as-is; position is the dense index.
    pub fn from_ordered(names: Vec<String>) -> Self {
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Vocab { names, lookup }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, raw: &str) -> Option<usize> {
        self.lookup.get(raw).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub role: Option<Role>,
}

/// Implicit-feedback interactions with dense user and item indices.
#[derive(Debug, Clone)]
pub struct InteractionSet {
    records: Vec<Interaction>,
    users: Vocab,
    items: Vocab,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(n, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((n + 1, line))
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Removes users and items below the frequency thresholds until nothing changes.
/// Input pairs must already be deduplicated.
pub fn filter_to_fixpoint(
    mut pairs: Vec<(String, String)>,
    min_user_freq: usize,
    min_item_freq: usize,
) -> Vec<(String, String)> {
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &pairs {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(i).or_default() += 1;
        }
        let keep: Vec<bool> = pairs
            .iter()
            .map(|(u, i)| user_count[u.as_str()] >= min_user_freq && item_count[i.as_str()] >= min_item_freq)
            .collect();
        if keep.iter().all(|&k| k) {
            return pairs;
        }
        let mut it = keep.into_iter();
        pairs.retain(|_| it.next().unwrap_or(true));
    }
}

impl InteractionSet {
    /// Reads `user \t item [\t rating ...]` lines. Ratings are discarded: every
    /// line counts as one positive interaction.
    pub fn load(path: &Path, min_user_freq: usize, min_item_freq: usize) -> Result<Self> {
        let text = read_text(path)?;
        let mut pairs = Vec::new();
        for (line_no, line) in content_lines(&text) {
            let mut fields = line.split('\t');
            let user = fields.next().map(str::trim).unwrap_or("");
            let item = fields.next().map(str::trim).unwrap_or("");
            if user.is_empty() || item.is_empty() {
                return Err(parse_err(path, line_no, "expected `user<TAB>item[<TAB>rating]`"));
            }
            pairs.push((user.to_string(), item.to_string()));
        }
        Self::from_raw_pairs(pairs, min_user_freq, min_item_freq)
    }

    /// Deduplicates, filters to the frequency fixpoint and assigns dense ids.
    pub fn from_raw_pairs(
        pairs: Vec<(String, String)>,
        min_user_freq: usize,
        min_item_freq: usize,
    ) -> Result<Self> {
        let unique: BTreeSet<(String, String)> = pairs.into_iter().collect();
        let raw_total = unique.len();
        let kept = filter_to_fixpoint(unique.into_iter().collect(), min_user_freq, min_item_freq);
        if kept.is_empty() {
            return Err(Error::DatasetExhausted(format!(
                "no interactions survive min_user_freq={min_user_freq}, min_item_freq={min_item_freq} \
                 ({raw_total} distinct pairs before filtering)"
            )));
        }
        let users = Vocab::from_unsorted(kept.iter().map(|(u, _)| u.as_str()));
        let items = Vocab::from_unsorted(kept.iter().map(|(_, i)| i.as_str()));
        let mut records: Vec<Interaction> = kept
            .iter()
            .map(|(u, i)| Interaction {
                user: users.index(u).unwrap(),
                item: items.index(i).unwrap(),
                role: None,
            })
            .collect();
        records.sort_by_key(|r| (r.user, r.item));
        Ok(InteractionSet {
            records,
            users,
            items,
        })
    }

    /// Assembles an already indexed set. Used when reading preprocessed data.
    pub fn from_parts(records: Vec<Interaction>, users: Vocab, items: Vocab) -> Result<Self> {
        for r in &records {
            if r.user >= users.len() || r.item >= items.len() {
                return Err(Error::Data(format!(
                    "interaction ({}, {}) out of range for {} users / {} items",
                    r.user,
                    r.item,
                    users.len(),
                    items.len()
                )));
            }
        }
        let mut records = records;
        records.sort_by_key(|r| (r.user, r.item));
        Ok(InteractionSet {
            records,
            users,
            items,
        })
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &Vocab {
        &self.users
    }

    pub fn items(&self) -> &Vocab {
        &self.items
    }

    pub fn is_split(&self) -> bool {
        self.records.iter().all(|r| r.role.is_some())
    }

    /// Per-user random partition into train/valid/test.
    ///
    /// Shares are `floor(n * a / s)` train and `floor(n * b / s)` valid with the
    /// rest going to test, so every user keeps at least one test record.
    pub fn split(mut self, ratios: (u32, u32, u32), seed: u64) -> Result<Self> {
        let (a, b, c) = ratios;
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::Config(format!("split ratios must be positive, got {a}:{b}:{c}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = 0;
        while start < self.records.len() {
            let user = self.records[start].user;
            let end = start
                + self.records[start..]
                    .iter()
                    .take_while(|r| r.user == user)
                    .count();
            let n = end - start;
            let (n_train, n_valid, _) = split_counts(n, ratios);
            let mut order: Vec<usize> = (start..end).collect();
            order.shuffle(&mut rng);
            for (k, &idx) in order.iter().enumerate() {
                self.records[idx].role = Some(if k < n_train {
                    Role::Train
                } else if k < n_train + n_valid {
                    Role::Valid
                } else {
                    Role::Test
                });
            }
            start = end;
        }
        Ok(self)
    }

    /// Items per user for the given role.
    pub fn items_by_user(&self, role: Role) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for r in &self.records {
            if r.role == Some(role) {
                out[r.user].push(r.item);
            }
        }
        out
    }

    pub fn pairs(&self, role: Role) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .filter(|r| r.role == Some(role))
            .map(|r| (r.user, r.item))
            .collect()
    }
}

/// Train/valid/test record counts for a user with `n` records.
pub fn split_counts(n: usize, ratios: (u32, u32, u32)) -> (usize, usize, usize) {
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    let train = n * ratios.0 as usize / total;
    let valid = n * ratios.1 as usize / total;
    (train, valid, n - train - valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
}

impl Triple {
    pub fn new(head: usize, tail: usize, relation: usize) -> Self {
        Triple {
            head,
            tail,
            relation,
        }
    }
}

/// Knowledge-graph facts with dense entity and relation indices.
#[derive(Debug, Clone)]
pub struct TripleSet {
    triples: Vec<Triple>,
    roles: Vec<Option<Role>>,
    entities: Vocab,
    relations: Vocab,
}

impl TripleSet {
    /// Reads `head \t tail \t relation` lines; duplicate facts are dropped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut raw = Vec::new();
        for (line_no, line) in content_lines(&text) {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(parse_err(path, line_no, "expected `head<TAB>tail<TAB>relation`"));
            }
            raw.push((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()));
        }
        Ok(Self::from_raw(raw))
    }

    pub fn from_raw(raw: Vec<(String, String, String)>) -> Self {
        let unique: BTreeSet<(String, String, String)> = raw.into_iter().collect();
        let entities = Vocab::from_unsorted(
            unique
                .iter()
                .flat_map(|(h, t, _)| [h.as_str(), t.as_str()]),
        );
        let relations = Vocab::from_unsorted(unique.iter().map(|(_, _, r)| r.as_str()));
        let mut triples: Vec<Triple> = unique
            .iter()
            .map(|(h, t, r)| {
                Triple::new(
                    entities.index(h).unwrap(),
                    entities.index(t).unwrap(),
                    relations.index(r).unwrap(),
                )
            })
            .collect();
        triples.sort();
        let roles = vec![None; triples.len()];
        TripleSet {
            triples,
            roles,
            entities,
            relations,
        }
    }

    pub fn from_parts(
        triples: Vec<(Triple, Option<Role>)>,
        entities: Vocab,
        relations: Vocab,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(triples.len());
        for (t, role) in triples {
            if t.head >= entities.len() || t.tail >= entities.len() || t.relation >= relations.len() {
                return Err(Error::Data(format!("triple {t:?} out of range")));
            }
            if seen.insert(t) {
                kept.push((t, role));
            }
        }
        kept.sort();
        let (triples, roles) = kept.into_iter().unzip();
        Ok(TripleSet {
            triples,
            roles,
            entities,
            relations,
        })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn roles(&self) -> &[Option<Role>] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    /// Global random split of the facts with the same rounding rule as
    /// [`InteractionSet::split`].
    pub fn split(mut self, ratios: (u32, u32, u32), seed: u64) -> Result<Self> {
        if ratios.0 == 0 || ratios.1 == 0 || ratios.2 == 0 {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..self.triples.len()).collect();
        order.shuffle(&mut rng);
        let (n_train, n_valid, _) = split_counts(order.len(), ratios);
        for (k, &idx) in order.iter().enumerate() {
            self.roles[idx] = Some(if k < n_train {
                Role::Train
            } else if k < n_train + n_valid {
                Role::Valid
            } else {
                Role::Test
            });
        }
        Ok(self)
    }

    pub fn with_role(&self, role: Role) -> Vec<Triple> {
        self.triples
            .iter()
            .zip(&self.roles)
            .filter(|(_, r)| **r == Some(role))
            .map(|(t, _)| *t)
            .collect()
    }
}

/// One-to-one partial map between items and entities.
#[derive(Debug, Clone, Default)]
pub struct AlignmentMap {
    pairs: Vec<(usize, usize)>,
    item_to_entity: HashMap<usize, usize>,
    entity_to_item: HashMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentStats {
    /// Pairs whose item or entity is unknown after filtering.
    pub dropped: usize,
    /// Lines that would break the one-to-one property.
    pub rejected: usize,
}

impl AlignmentMap {
    /// Reads `item \t entity` lines with raw ids and resolves them against the
    /// indexed interactions and triples.
    pub fn load(
        path: &Path,
        items: &Vocab,
        entities: &Vocab,
    ) -> Result<(Self, AlignmentStats)> {
        let text = read_text(path)?;
        let mut raw = Vec::new();
        for (line_no, line) in content_lines(&text) {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(parse_err(path, line_no, "expected `item<TAB>entity`"));
            }
            raw.push((fields[0].to_string(), fields[1].to_string()));
        }
        let (map, stats) = Self::from_raw(&raw, items, entities);
        if stats.dropped > 0 {
            warn!("{}: {} alignment(s) reference filtered items or entities", path.display(), stats.dropped);
        }
        if stats.rejected > 0 {
            warn!("{}: {} alignment line(s) rejected as duplicates", path.display(), stats.rejected);
        }
        Ok((map, stats))
    }

    pub fn from_raw(raw: &[(String, String)], items: &Vocab, entities: &Vocab) -> (Self, AlignmentStats) {
        let mut map = AlignmentMap::default();
        let mut stats = AlignmentStats::default();
        let mut seen_items = HashSet::new();
        let mut seen_entities = HashSet::new();
        for (item, entity) in raw {
            // Duplicates are judged on raw ids, before filtering.
            if seen_items.contains(item.as_str()) || seen_entities.contains(entity.as_str()) {
                stats.rejected += 1;
                continue;
            }
            seen_items.insert(item.as_str());
            seen_entities.insert(entity.as_str());
            match (items.index(item), entities.index(entity)) {
                (Some(i), Some(e)) => map.insert_unchecked(i, e),
                _ => stats.dropped += 1,
            }
        }
        (map, stats)
    }

    /// Builds a map from dense pairs, rejecting anything that breaks one-to-one.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut map = AlignmentMap::default();
        for (i, e) in pairs {
            if map.item_to_entity.contains_key(&i) || map.entity_to_item.contains_key(&e) {
                return Err(Error::Data(format!("alignment ({i}, {e}) is not one-to-one")));
            }
            map.insert_unchecked(i, e);
        }
        Ok(map)
    }

    fn insert_unchecked(&mut self, item: usize, entity: usize) {
        self.pairs.push((item, entity));
        self.item_to_entity.insert(item, entity);
        self.entity_to_item.insert(entity, item);
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn entity_of(&self, item: usize) -> Option<usize> {
        self.item_to_entity.get(&item).copied()
    }

    pub fn item_of(&self, entity: usize) -> Option<usize> {
        self.entity_to_item.get(&entity).copied()
    }

    /// Fraction of the catalog that has an aligned entity.
    pub fn coverage(&self, num_items: usize) -> f64 {
        if num_items == 0 {
            0.0
        } else {
            self.pairs.len() as f64 / num_items as f64
        }
    }

    /// Dense lookup table `item -> entity`.
    pub fn item_table(&self, num_items: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_items];
        for &(i, e) in &self.pairs {
            if i < num_items {
                out[i] = Some(e);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "1-N")]
    OneToMany,
    #[serde(rename = "N-1")]
    ManyToOne,
    #[serde(rename = "N-N")]
    ManyToMany,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToMany,
        RelationCategory::ManyToOne,
        RelationCategory::ManyToMany,
    ];

    pub fn classify(tails_per_head: f64, heads_per_tail: f64, cutoff: f64) -> Self {
        match (tails_per_head < cutoff, heads_per_tail < cutoff) {
            (true, true) => RelationCategory::OneToOne,
            (false, true) => RelationCategory::OneToMany,
            (true, false) => RelationCategory::ManyToOne,
            (false, false) => RelationCategory::ManyToMany,
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationCategory::OneToOne => "1-1",
            RelationCategory::OneToMany => "1-N",
            RelationCategory::ManyToOne => "N-1",
            RelationCategory::ManyToMany => "N-N",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub tails_per_head: f64,
    pub heads_per_tail: f64,
    pub category: RelationCategory,
}

/// Cardinality statistics per relation index. Relations with no facts get `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationProfile {
    pub relations: Vec<Option<RelationStats>>,
    pub cutoff: f64,
}

impl RelationProfile {
    pub fn category(&self, relation: usize) -> Option<RelationCategory> {
        self.relations.get(relation).copied().flatten().map(|s| s.category)
    }
}

pub const DEFAULT_CATEGORY_CUTOFF: f64 = 1.5;

pub fn relation_categories(triples: &[Triple], num_relations: usize, cutoff: f64) -> RelationProfile {
    let mut tails: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); num_relations];
    let mut heads: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); num_relations];
    for t in triples {
        tails[t.relation].entry(t.head).or_default().insert(t.tail);
        heads[t.relation].entry(t.tail).or_default().insert(t.head);
    }
    let mean = |m: &BTreeMap<usize, BTreeSet<usize>>| {
        m.values().map(|s| s.len()).sum::<usize>() as f64 / m.len() as f64
    };
    let relations = (0..num_relations)
        .map(|r| {
            if tails[r].is_empty() {
                return None;
            }
            let tph = mean(&tails[r]);
            let hpt = mean(&heads[r]);
            Some(RelationStats {
                tails_per_head: tph,
                heads_per_tail: hpt,
                category: RelationCategory::classify(tph, hpt, cutoff),
            })
        })
        .collect();
    RelationProfile { relations, cutoff }
}

/// Users grouped by training-set activity.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityBuckets {
    /// Users per group, heaviest group first.
    pub groups: Vec<Vec<usize>>,
    /// Mean number of training records per user in each group.
    pub mean_train: Vec<f64>,
}

/// Orders users by training-record count (descending, ties by index) and cuts
/// the sequence into contiguous groups whose rating totals are as even as
/// possible (minimum sum of squared group totals).
pub fn sparsity_buckets(set: &InteractionSet, num_buckets: usize) -> Result<SparsityBuckets> {
    if !set.is_split() {
        return Err(Error::Data("sparsity buckets need a split interaction set".into()));
    }
    let train = set.items_by_user(Role::Train);
    let mut users: Vec<(usize, usize)> = train.iter().enumerate().map(|(u, it)| (u, it.len())).collect();
    users.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let counts: Vec<u64> = users.iter().map(|&(_, c)| c as u64).collect();
    let mut k = num_buckets.max(1);
    if users.len() < k {
        warn!("{} users for {} buckets; using {} groups", users.len(), k, users.len());
        k = users.len();
    }
    let cuts = balanced_cuts(&counts, k);
    let mut groups = Vec::with_capacity(k);
    let mut mean_train = Vec::with_capacity(k);
    let mut lo = 0;
    for &hi in cuts.iter().chain(std::iter::once(&users.len())) {
        let g: Vec<usize> = users[lo..hi].iter().map(|&(u, _)| u).collect();
        let total: u64 = counts[lo..hi].iter().sum();
        mean_train.push(total as f64 / g.len() as f64);
        groups.push(g);
        lo = hi;
    }
    Ok(SparsityBuckets { groups, mean_train })
}

/// Cut positions splitting `counts` into `k` non-empty contiguous groups that
/// minimise the sum of squared group totals. Returns the `k - 1` interior cuts.
pub fn balanced_cuts(counts: &[u64], k: usize) -> Vec<usize> {
    let n = counts.len();
    if k <= 1 || n == 0 {
        return Vec::new();
    }
    let mut prefix = vec![0u64; n + 1];
    for (i, c) in counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    let seg = |a: usize, b: usize| {
        let s = (prefix[b] - prefix[a]) as u128;
        s * s
    };
    // cost[j][i]: best cost of splitting the first i values into j+1 groups.
    let mut cost = vec![vec![u128::MAX; n + 1]; k];
    let mut back = vec![vec![0usize; n + 1]; k];
    for i in 1..=n {
        cost[0][i] = seg(0, i);
    }
    for j in 1..k {
        for i in (j + 1)..=n {
            let mut best = u128::MAX;
            let mut arg = j;
            for m in j..i {
                let prev = cost[j - 1][m];
                if prev == u128::MAX {
                    continue;
                }
                let c = prev + seg(m, i);
                if c < best {
                    best = c;
                    arg = m;
                }
            }
            cost[j][i] = best;
            back[j][i] = arg;
        }
    }
    let mut cuts = vec![0; k - 1];
    let mut i = n;
    for j in (1..k).rev() {
        let m = back[j][i];
        cuts[j - 1] = m;
        i = m;
    }
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(raw: &[(&str, &str)]) -> Vec<(String, String)> {
        raw.iter().map(|(u, i)| (u.to_string(), i.to_string())).collect()
    }

    #[test]
    fn split_counts_examples() {
        assert_eq!(split_counts(10, (7, 1, 2)), (7, 1, 2));
        assert_eq!(split_counts(1, (7, 1, 2)), (0, 0, 1));
        assert_eq!(split_counts(4, (7, 1, 2)), (2, 0, 2));
    }

    #[test]
    fn split_counts_enumeration() {
        // Frozen from enumerating the rounding rule on 1..=10.
        let expected = [
            (0, 0, 1),
            (1, 0, 1),
            (2, 0, 1),
            (2, 0, 2),
            (3, 0, 2),
            (4, 0, 2),
            (4, 0, 3),
            (5, 0, 3),
            (6, 0, 3),
            (7, 1, 2),
        ];
        let mut prev = (0, 0);
        for n in 1..=10 {
            let got = split_counts(n, (7, 1, 2));
            assert_eq!(got, expected[n - 1], "n={n}");
            assert_eq!(got.0 + got.1 + got.2, n);
            assert!(got.2 >= 1);
            assert!(got.0 >= prev.0 && got.1 >= prev.1, "train/valid shares must not shrink");
            prev = (got.0, got.1);
        }
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let raw = pairs(&[("a", "x"), ("b", "y"), ("c", "z")]);
        let set = InteractionSet::from_raw_pairs(raw, 0, 0).unwrap();
        assert_eq!(set.records().len(), 3);
        assert_eq!(set.num_users(), 3);
    }

    #[test]
    fn exhausted_dataset_is_an_error() {
        let raw = pairs(&[("a", "x")]);
        let err = InteractionSet::from_raw_pairs(raw, 5, 0).unwrap_err();
        assert!(matches!(err, Error::DatasetExhausted(_)));
    }

    #[test]
    fn dense_ids_follow_sorted_raw_ids() {
        let raw = pairs(&[("zed", "i2"), ("amy", "i1"), ("bob", "i2")]);
        let set = InteractionSet::from_raw_pairs(raw, 0, 0).unwrap();
        assert_eq!(set.users().names(), &["amy", "bob", "zed"]);
        assert_eq!(set.items().index("i2"), Some(1));
    }

    #[test]
    fn relation_with_fan_out_is_one_to_many() {
        // (a,x),(a,y),(b,z): tph = (2+1)/2 = 1.5, hpt = 1.
        let triples = vec![Triple::new(0, 2, 0), Triple::new(0, 3, 0), Triple::new(1, 4, 0)];
        let prof = relation_categories(&triples, 1, 1.5);
        let s = prof.relations[0].unwrap();
        assert_eq!(s.tails_per_head, 1.5);
        assert_eq!(s.heads_per_tail, 1.0);
        assert_eq!(s.category, RelationCategory::OneToMany);
    }

    #[test]
    fn bijective_relation_is_one_to_one() {
        let triples = vec![Triple::new(0, 1, 0), Triple::new(2, 3, 0)];
        assert_eq!(
            relation_categories(&triples, 1, 1.5).category(0),
            Some(RelationCategory::OneToOne)
        );
    }

    #[test]
    fn balanced_cuts_single_group() {
        assert!(balanced_cuts(&[3, 2, 1], 1).is_empty());
    }

    #[test]
    fn alignment_duplicate_item_keeps_first() {
        let items = Vocab::from_unsorted(["i1", "i2"]);
        let ents = Vocab::from_unsorted(["e1", "e2", "e3"]);
        let raw = pairs(&[("i1", "e1"), ("i1", "e2"), ("i2", "e3")]);
        let (map, stats) = AlignmentMap::from_raw(&raw, &items, &ents);
        assert_eq!(stats.rejected, 1);
        assert_eq!(map.entity_of(0), Some(0));
        assert_eq!(map.entity_of(1), Some(2));
    }
}
