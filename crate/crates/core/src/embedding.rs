//! Trainable parameters, initialisation, norm constraints and persistence.
//!
//! Parameters are stored as `f32` (the on-disk width) and widened to `f64`
//! whenever a model reads them. The store is generic over the scalar so that
//! gradient checks can run against an all-`f64` copy.

use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub trait Scalar: Copy + Default + Debug + PartialEq + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Parameter tables, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// u
    User,
    /// i
    Item,
    /// e
    Entity,
    /// p, preference translation
    Pref,
    /// w_p, preference hyperplane normal
    PrefNorm,
    /// r, relation translation
    Relation,
    /// w_r, relation hyperplane normal
    RelationNorm,
}

impl Table {
    pub const ALL: [Table; 7] = [
        Table::User,
        Table::Item,
        Table::Entity,
        Table::Pref,
        Table::PrefNorm,
        Table::Relation,
        Table::RelationNorm,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_projection(self) -> bool {
        matches!(self, Table::PrefNorm | Table::RelationNorm)
    }

    /// Rows held inside the unit ball by constraint enforcement.
    pub fn is_bounded(self) -> bool {
        matches!(self, Table::User | Table::Item | Table::Entity)
    }
}

/// Row counts of the seven tables plus the shared dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub dim: usize,
    pub rows: [usize; 7],
}

impl Shape {
    pub fn new(dim: usize) -> Self {
        Shape { dim, rows: [0; 7] }
    }

    pub fn with(mut self, table: Table, rows: usize) -> Self {
        self.rows[table.index()] = rows;
        self
    }

    pub fn rows(&self, table: Table) -> usize {
        self.rows[table.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Matrix {
            rows,
            dim,
            data: vec![S::default(); rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_f64(&self, r: usize) -> Vec<f64> {
        self.row(r).iter().map(|v| v.to_f64()).collect()
    }

    pub fn set_row_f64(&mut self, r: usize, values: &[f64]) {
        for (dst, &v) in self.row_mut(r).iter_mut().zip(values) {
            *dst = S::from_f64(v);
        }
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }
}

/// What constraint enforcement does to touched rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintPolicy {
    /// Rescale projection normals to unit length.
    pub unit_projections: bool,
    /// Shrink user/item/entity rows with norm above 1.
    pub clip_norms: bool,
}

impl ConstraintPolicy {
    pub const NONE: ConstraintPolicy = ConstraintPolicy {
        unit_projections: false,
        clip_norms: false,
    };
    pub const FULL: ConstraintPolicy = ConstraintPolicy {
        unit_projections: true,
        clip_norms: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace<S = f32> {
    dim: usize,
    tables: [Matrix<S>; 7],
}

/// Read-only shared handle used while evaluating.
pub type Snapshot<S = f32> = Arc<EmbeddingSpace<S>>;

impl<S: Scalar> EmbeddingSpace<S> {
    pub fn zeros(shape: &Shape) -> Result<Self> {
        if shape.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let tables = Table::ALL.map(|t| Matrix::zeros(shape.rows(t), shape.dim));
        Ok(EmbeddingSpace {
            dim: shape.dim,
            tables,
        })
    }

    /// Uniform entries in `[-6/sqrt(dim), 6/sqrt(dim)]`, projection rows then
    /// rescaled to unit norm.
    pub fn init(shape: &Shape, seed: u64) -> Result<Self> {
        let mut space = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = init_bound(shape.dim);
        for table in Table::ALL {
            let m = &mut space.tables[table.index()];
            for v in m.data.iter_mut() {
                *v = S::from_f64(rng.random_range(-bound..bound));
            }
            if table.is_projection() {
                for r in 0..m.rows {
                    normalize_row(m, r, &mut rng);
                }
            }
        }
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Shape {
        Shape {
            dim: self.dim,
            rows: Table::ALL.map(|t| self.table(t).rows()),
        }
    }

    pub fn table(&self, t: Table) -> &Matrix<S> {
        &self.tables[t.index()]
    }

    pub fn table_mut(&mut self, t: Table) -> &mut Matrix<S> {
        &mut self.tables[t.index()]
    }

    pub fn row_f64(&self, t: Table, r: usize) -> Vec<f64> {
        self.table(t).row_f64(r)
    }

    pub fn snapshot(&self) -> Snapshot<S> {
        Arc::new(self.clone())
    }

    /// Applies the policy to every row.
    pub fn enforce_constraints(&mut self, policy: ConstraintPolicy, rng: &mut impl Rng) {
        for table in Table::ALL {
            for r in 0..self.table(table).rows() {
                self.enforce_row(table, r, policy, rng);
            }
        }
    }

    /// Applies the policy to one row. A zero-norm projection row is redrawn.
    pub fn enforce_row(&mut self, table: Table, row: usize, policy: ConstraintPolicy, rng: &mut impl Rng) {
        let m = &mut self.tables[table.index()];
        if table.is_projection() && policy.unit_projections {
            normalize_row(m, row, rng);
        } else if table.is_bounded() && policy.clip_norms {
            let v = m.row_f64(row);
            let n = linalg::norm2(&v);
            if n > 1.0 {
                let scaled: Vec<f64> = v.iter().map(|x| x / n).collect();
                m.set_row_f64(row, &scaled);
            }
        }
    }

    /// Copies every table of `other` whose shape matches and that is non-empty.
    /// Returns the tables that were taken.
    pub fn copy_matching_from(&mut self, other: &EmbeddingSpace<S>) -> Vec<Table> {
        let mut taken = Vec::new();
        if other.dim != self.dim {
            return taken;
        }
        for t in Table::ALL {
            let src = other.table(t);
            if src.rows() > 0 && src.rows() == self.table(t).rows() {
                self.tables[t.index()] = src.clone();
                taken.push(t);
            }
        }
        taken
    }

    /// Widens every entry to `f64`.
    pub fn to_f64(&self) -> EmbeddingSpace<f64> {
        EmbeddingSpace {
            dim: self.dim,
            tables: Table::ALL.map(|t| {
                let m = self.table(t);
                Matrix {
                    rows: m.rows,
                    dim: m.dim,
                    data: m.data.iter().map(|v| v.to_f64()).collect(),
                }
            }),
        }
    }

    /// Rejects a space whose table shapes differ from `expected`.
    pub fn check_shape(&self, expected: &Shape) -> Result<()> {
        let got = self.shape();
        if &got != expected {
            return Err(Error::Format(format!(
                "shape mismatch: file has dim {} rows {:?}, corpus expects dim {} rows {:?}",
                got.dim, got.rows, expected.dim, expected.rows
            )));
        }
        Ok(())
    }
}

pub fn init_bound(dim: usize) -> f64 {
    6.0 / (dim as f64).sqrt()
}

fn normalize_row<S: Scalar>(m: &mut Matrix<S>, row: usize, rng: &mut impl Rng) {
    let mut v = m.row_f64(row);
    let mut n = linalg::norm2(&v);
    while n < 1e-12 {
        warn!("zero-norm projection row {row}; re-drawing it");
        let bound = init_bound(m.dim);
        for x in v.iter_mut() {
            *x = rng.random_range(-bound..bound);
        }
        n = linalg::norm2(&v);
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    m.set_row_f64(row, &v);
}

const MAGIC: &[u8; 8] = b"KTUPEMB\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 7 * 8;

impl EmbeddingSpace<f32> {
    /// Little-endian layout: magic, version, dim, then `(rows, cols)` as u32 for
    /// each table, then the tables row-major as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.tables.iter().map(|m| m.data.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for m in &self.tables {
            out.extend_from_slice(&(m.rows as u32).to_le_bytes());
            out.extend_from_slice(&(m.dim as u32).to_le_bytes());
        }
        for m in &self.tables {
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic; not a parameter file".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let version = word(8) as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let dim = word(12);
        if dim == 0 {
            return Err(Error::Format("zero dimension in header".into()));
        }
        let mut shape = Shape::new(dim);
        for (k, t) in Table::ALL.iter().enumerate() {
            let rows = word(16 + 8 * k);
            let cols = word(20 + 8 * k);
            if cols != dim {
                return Err(Error::Format(format!("table {t:?} has {cols} columns, header dim is {dim}")));
            }
            shape.rows[t.index()] = rows;
        }
        let total: usize = shape.rows.iter().map(|r| r * dim).sum();
        let expected = HEADER_LEN + 4 * total;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{} file: expected {expected} bytes, found {}",
                if bytes.len() < expected { "truncated" } else { "oversized" },
                bytes.len()
            )));
        }
        let mut space = EmbeddingSpace::zeros(&shape)?;
        let mut at = HEADER_LEN;
        for m in space.tables.iter_mut() {
            for v in m.data.iter_mut() {
                *v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                at += 4;
            }
        }
        Ok(space)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
