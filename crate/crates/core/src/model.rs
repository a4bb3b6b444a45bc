use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{ConstraintPolicy, Shape, Table};
use crate::error::{Error, Result};
use crate::kgc::KgcVariant;
use crate::rec::RecKind;

/// Which model a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Dot-product pretrainer for users and items.
    Bprmf,
    TransE,
    TransH,
    Tup,
    Ktup,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Bprmf,
        ModelKind::TransE,
        ModelKind::TransH,
        ModelKind::Tup,
        ModelKind::Ktup,
    ];

    pub fn rec_kind(self) -> Option<RecKind> {
        match self {
            ModelKind::Bprmf => Some(RecKind::Bprmf),
            ModelKind::Tup => Some(RecKind::Tup),
            ModelKind::Ktup => Some(RecKind::Ktup),
            _ => None,
        }
    }

    pub fn kgc_variant(self) -> Option<KgcVariant> {
        match self {
            ModelKind::TransE => Some(KgcVariant::TransE),
            ModelKind::TransH | ModelKind::Ktup => Some(KgcVariant::TransH),
            _ => None,
        }
    }

    pub fn has_rec(self) -> bool {
        self.rec_kind().is_some()
    }

    pub fn has_kgc(self) -> bool {
        self.kgc_variant().is_some()
    }

    /// Table shapes for this model. `num_prefs` is only read by TUP; the
    /// knowledge-enhanced model pairs one preference with each relation.
    pub fn shape(self, dim: usize, counts: &Counts, num_prefs: usize) -> Result<Shape> {
        let s = Shape::new(dim);
        let shape = match self {
            ModelKind::Bprmf => s.with(Table::User, counts.users).with(Table::Item, counts.items),
            ModelKind::TransE => s
                .with(Table::Entity, counts.entities)
                .with(Table::Relation, counts.relations),
            ModelKind::TransH => s
                .with(Table::Entity, counts.entities)
                .with(Table::Relation, counts.relations)
                .with(Table::RelationNorm, counts.relations),
            ModelKind::Tup => {
                if num_prefs == 0 {
                    return Err(Error::Config("tup needs --num-prefs > 0".into()));
                }
                s.with(Table::User, counts.users)
                    .with(Table::Item, counts.items)
                    .with(Table::Pref, num_prefs)
                    .with(Table::PrefNorm, num_prefs)
            }
            ModelKind::Ktup => s
                .with(Table::User, counts.users)
                .with(Table::Item, counts.items)
                .with(Table::Entity, counts.entities)
                .with(Table::Pref, counts.relations)
                .with(Table::PrefNorm, counts.relations)
                .with(Table::Relation, counts.relations)
                .with(Table::RelationNorm, counts.relations),
        };
        if self.has_kgc() && (counts.entities < 2 || counts.relations == 0) {
            return Err(Error::Config(format!("{self} needs a knowledge graph with at least two entities")));
        }
        if self.has_rec() && (counts.users == 0 || counts.items == 0) {
            return Err(Error::Config(format!("{self} needs user-item interactions")));
        }
        Ok(shape)
    }

    /// Norm constraints applied after each step. The dot-product pretrainer is
    /// left unconstrained.
    pub fn constraint_policy(self, enabled: bool) -> ConstraintPolicy {
        if !enabled {
            return ConstraintPolicy::NONE;
        }
        match self {
            ModelKind::Bprmf => ConstraintPolicy::NONE,
            _ => ConstraintPolicy::FULL,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Bprmf => "bprmf",
            ModelKind::TransE => "transe",
            ModelKind::TransH => "transh",
            ModelKind::Tup => "tup",
            ModelKind::Ktup => "ktup",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Entity counts of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub users: usize,
    pub items: usize,
    pub entities: usize,
    pub relations: usize,
}
