//! A preprocessed dataset: split interactions, split triples and alignments,
//! plus its on-disk directory layout.
//!
//! ```text
//! index.json                 raw-id tables and preprocessing settings
//! train.tsv valid.tsv test.tsv           user<TAB>item (dense ids)
//! kg_train.tsv kg_valid.tsv kg_test.tsv  head<TAB>tail<TAB>relation (dense ids)
//! alignments.tsv             item<TAB>entity (raw ids, surviving pairs only)
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    relation_categories, AlignmentMap, AlignmentStats, Interaction, InteractionSet, RelationProfile, Role,
    Triple, TripleSet, Vocab,
};
use crate::error::{Error, Result};
use crate::model::Counts;

pub const INDEX_FILE: &str = "index.json";
pub const ALIGNMENTS_FILE: &str = "alignments.tsv";
pub const DATASET_FORMAT: &str = "ktup-dataset/1";

const ROLES: [(Role, &str, &str); 3] = [
    (Role::Train, "train.tsv", "kg_train.tsv"),
    (Role::Valid, "valid.tsv", "kg_valid.tsv"),
    (Role::Test, "test.tsv", "kg_test.tsv"),
];

#[derive(Debug, Clone)]
pub struct Dataset {
    pub interactions: InteractionSet,
    pub triples: Option<TripleSet>,
    pub alignments: AlignmentMap,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitSettings {
    pub ratios: (u32, u32, u32),
    pub seed: u64,
    pub min_user_freq: usize,
    pub min_item_freq: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlignmentSummary {
    pub pairs: usize,
    pub coverage: f64,
    #[serde(flatten)]
    pub stats: AlignmentStats,
}

/// Contents of `index.json`. Position in each id list is the dense index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub settings: SplitSettings,
    pub counts: Counts,
    pub interactions: usize,
    pub triples: usize,
    pub alignments: Option<AlignmentSummary>,
}

impl Dataset {
    pub fn counts(&self) -> Counts {
        Counts {
            users: self.interactions.num_users(),
            items: self.interactions.num_items(),
            entities: self.triples.as_ref().map_or(0, TripleSet::num_entities),
            relations: self.triples.as_ref().map_or(0, TripleSet::num_relations),
        }
    }

    pub fn item_entity(&self) -> Vec<Option<usize>> {
        self.alignments.item_table(self.interactions.num_items())
    }

    pub fn triples_with(&self, role: Role) -> Vec<Triple> {
        self.triples.as_ref().map_or_else(Vec::new, |t| t.with_role(role))
    }

    /// Every fact regardless of role; the filter set for ranking.
    pub fn all_triples(&self) -> HashSet<Triple> {
        self.triples
            .as_ref()
            .map_or_else(HashSet::new, |t| t.triples().iter().copied().collect())
    }

    pub fn relation_profile(&self, cutoff: f64) -> Option<RelationProfile> {
        self.triples
            .as_ref()
            .map(|t| relation_categories(t.triples(), t.num_relations(), cutoff))
    }

    pub fn entity_vocab(&self) -> Option<&Vocab> {
        self.triples.as_ref().map(TripleSet::entities)
    }

    pub fn relation_vocab(&self) -> Option<&Vocab> {
        self.triples.as_ref().map(TripleSet::relations)
    }

    /// Writes the directory layout described in the module docs.
    pub fn write_dir(&self, dir: &Path, settings: &SplitSettings, alignment_stats: Option<AlignmentStats>) -> Result<DatasetIndex> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (role, rec_file, kg_file) in ROLES {
            let mut out = String::new();
            for (u, i) in self.interactions.pairs(role) {
                out.push_str(&format!("{u}\t{i}\n"));
            }
            write_file(&dir.join(rec_file), &out)?;
            if let Some(t) = &self.triples {
                let mut out = String::new();
                for tr in t.with_role(role) {
                    out.push_str(&format!("{}\t{}\t{}\n", tr.head, tr.tail, tr.relation));
                }
                write_file(&dir.join(kg_file), &out)?;
            }
        }
        let alignments = alignment_stats.map(|stats| {
            let mut out = String::new();
            if let Some(ents) = self.entity_vocab() {
                for &(i, e) in self.alignments.pairs() {
                    out.push_str(&format!("{}\t{}\n", self.interactions.items().name(i), ents.name(e)));
                }
            }
            (out, stats)
        });
        let summary = match &alignments {
            Some((out, stats)) => {
                write_file(&dir.join(ALIGNMENTS_FILE), out)?;
                Some(AlignmentSummary {
                    pairs: self.alignments.len(),
                    coverage: self.alignments.coverage(self.interactions.num_items()),
                    stats: *stats,
                })
            }
            None => None,
        };
        let index = DatasetIndex {
            format: DATASET_FORMAT.to_string(),
            users: self.interactions.users().names().to_vec(),
            items: self.interactions.items().names().to_vec(),
            entities: self.entity_vocab().map_or_else(Vec::new, |v| v.names().to_vec()),
            relations: self.relation_vocab().map_or_else(Vec::new, |v| v.names().to_vec()),
            settings: settings.clone(),
            counts: self.counts(),
            interactions: self.interactions.records().len(),
            triples: self.triples.as_ref().map_or(0, TripleSet::len),
            alignments: summary,
        };
        write_file(&dir.join(INDEX_FILE), &serde_json::to_string_pretty(&index)?)?;
        Ok(index)
    }

    /// Reads a directory written by [`Dataset::write_dir`]. Alignments are
    /// not loaded here; see [`Dataset::with_alignments`].
    pub fn read_dir(dir: &Path) -> Result<(Self, DatasetIndex)> {
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path)
            .map_err(|e| Error::io(format!("reading {}", index_path.display()), e))?;
        let index: DatasetIndex = serde_json::from_str(&text)?;
        if index.format != DATASET_FORMAT {
            return Err(Error::Data(format!(
                "{}: format `{}`, expected `{DATASET_FORMAT}`",
                index_path.display(),
                index.format
            )));
        }
        let users = Vocab::from_ordered(index.users.clone());
        let items = Vocab::from_ordered(index.items.clone());
        let mut records = Vec::new();
        let mut triples = Vec::new();
        for (role, rec_file, kg_file) in ROLES {
            for (_, fields) in read_dense(&dir.join(rec_file), 2)? {
                records.push(Interaction {
                    user: fields[0],
                    item: fields[1],
                    role: Some(role),
                });
            }
            let kg_path = dir.join(kg_file);
            if !index.entities.is_empty() && kg_path.exists() {
                for (_, f) in read_dense(&kg_path, 3)? {
                    triples.push((Triple::new(f[0], f[1], f[2]), Some(role)));
                }
            }
        }
        let interactions = InteractionSet::from_parts(records, users, items)?;
        let triples = if index.entities.is_empty() {
            None
        } else {
            Some(TripleSet::from_parts(
                triples,
                Vocab::from_ordered(index.entities.clone()),
                Vocab::from_ordered(index.relations.clone()),
            )?)
        };
        Ok((
            Dataset {
                interactions,
                triples,
                alignments: AlignmentMap::default(),
            },
            index,
        ))
    }

    /// Resolves a raw-id alignment file against this dataset.
    pub fn with_alignments(mut self, path: &Path) -> Result<(Self, AlignmentStats)> {
        let entities = self
            .entity_vocab()
            .cloned()
            .ok_or_else(|| Error::Config("alignments need a dataset with a knowledge graph".into()))?;
        let (map, stats) = AlignmentMap::load(path, self.interactions.items(), &entities)?;
        self.alignments = map;
        Ok((self, stats))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_dense(path: &Path, width: usize) -> Result<Vec<(usize, Vec<usize>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: std::result::Result<Vec<usize>, _> = line.split('\t').map(|f| f.trim().parse()).collect();
        match fields {
            Ok(f) if f.len() == width => out.push((n + 1, f)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: format!("expected {width} tab-separated indices"),
                })
            }
        }
    }
    Ok(out)
}
