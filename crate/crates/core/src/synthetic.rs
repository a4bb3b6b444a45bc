//! Planted dataset with a known answer, used by the acceptance checks and
//! for smoke runs of the command-line tool.
//!
//! Users fall into groups. Every item of group `g`'s pool is linked through
//! relation `g` to one shared hub entity; under every other relation the
//! same items are scattered over unrelated hubs. A group's users consume
//! items only from their pool, so relation `g` is the one structure their
//! histories have in common.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AlignmentMap, Interaction, InteractionSet, TripleSet, Vocab};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpec {
    pub groups: usize,
    pub users_per_group: usize,
    /// Items in each group's pool. Pools occupy the first `groups * pool` items.
    pub pool: usize,
    /// Catalogue size; items outside every pool are never consumed.
    pub items: usize,
    /// Items each user consumes from their pool.
    pub per_user: usize,
    /// Hub entities per relation. Hub 0 of relation `g` holds group `g`'s pool.
    pub hubs: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            groups: 3,
            users_per_group: 20,
            pool: 30,
            items: 300,
            per_user: 20,
            hubs: 10,
            seed: 7,
        }
    }
}

/// Raw-id records of a planted instance.
#[derive(Debug, Clone)]
pub struct Planted {
    pub spec: PlantedSpec,
    pub interactions: Vec<(String, String)>,
    pub triples: Vec<(String, String, String)>,
    pub alignments: Vec<(String, String)>,
    /// Planted relation name for each raw user id.
    pub user_relation: Vec<(String, String)>,
}

pub fn user_name(u: usize) -> String {
    format!("u{u:04}")
}

pub fn item_name(i: usize) -> String {
    format!("i{i:04}")
}

pub fn item_entity_name(i: usize) -> String {
    format!("e{i:04}")
}

pub fn relation_name(r: usize) -> String {
    format!("rel{r}")
}

pub fn hub_name(r: usize, h: usize) -> String {
    format!("hub-{r}-{h:02}")
}

pub fn planted(spec: PlantedSpec) -> Result<Planted> {
    let PlantedSpec {
        groups,
        users_per_group,
        pool,
        items: num_items,
        per_user,
        hubs,
        seed,
    } = spec;
    if groups == 0 || per_user == 0 || per_user > pool || hubs < 2 || groups * pool > num_items {
        return Err(Error::Config(format!("unusable planted layout {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut triples = Vec::new();
    for r in 0..groups {
        let mut others: Vec<usize> = (0..num_items).filter(|i| !(r * pool..(r + 1) * pool).contains(i)).collect();
        others.shuffle(&mut rng);
        for i in r * pool..(r + 1) * pool {
            triples.push((item_entity_name(i), hub_name(r, 0), relation_name(r)));
        }
        for (k, &i) in others.iter().enumerate() {
            let hub = 1 + k % (hubs - 1);
            triples.push((item_entity_name(i), hub_name(r, hub), relation_name(r)));
        }
    }

    let mut interactions = Vec::new();
    let mut user_relation = Vec::new();
    for g in 0..groups {
        let pool_items: Vec<usize> = (g * pool..(g + 1) * pool).collect();
        for k in 0..users_per_group {
            let u = g * users_per_group + k;
            for &i in pool_items.choose_multiple(&mut rng, per_user) {
                interactions.push((user_name(u), item_name(i)));
            }
            user_relation.push((user_name(u), relation_name(g)));
        }
    }

    let alignments = (0..num_items).map(|i| (item_name(i), item_entity_name(i))).collect();
    Ok(Planted {
        spec,
        interactions,
        triples,
        alignments,
        user_relation,
    })
}

impl Planted {
    /// Indexed and split dataset (7:1:2 for both interactions and facts).
    /// Unlike preprocessing raw files, never-consumed items stay in the
    /// catalogue as ranking candidates.
    pub fn dataset(&self) -> Result<Dataset> {
        let ratios = (7, 1, 2);
        let users = Vocab::from_ordered((0..self.spec.groups * self.spec.users_per_group).map(user_name).collect());
        let items = Vocab::from_ordered((0..self.spec.items).map(item_name).collect());
        let records = self
            .interactions
            .iter()
            .map(|(u, i)| Interaction {
                user: users.index(u).unwrap(),
                item: items.index(i).unwrap(),
                role: None,
            })
            .collect();
        let interactions = InteractionSet::from_parts(records, users, items)?.split(ratios, self.spec.seed)?;
        let triples = TripleSet::from_raw(self.triples.clone()).split(ratios, self.spec.seed)?;
        let (alignments, _) = AlignmentMap::from_raw(&self.alignments, interactions.items(), triples.entities());
        Ok(Dataset {
            interactions,
            triples: Some(triples),
            alignments,
        })
    }

    /// Writes `interactions.tsv`, `triples.tsv` and `alignments.tsv` with raw ids.
    pub fn write_raw(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut rec = String::new();
        for (u, i) in &self.interactions {
            writeln!(rec, "{u}\t{i}").unwrap();
        }
        let mut kg = String::new();
        for (h, t, r) in &self.triples {
            writeln!(kg, "{h}\t{t}\t{r}").unwrap();
        }
        let mut al = String::new();
        for (i, e) in &self.alignments {
            writeln!(al, "{i}\t{e}").unwrap();
        }
        for (name, body) in [("interactions.tsv", rec), ("triples.tsv", kg), ("alignments.tsv", al)] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
        }
        Ok(())
    }
}
