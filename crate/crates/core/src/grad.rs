use std::collections::BTreeMap;

use crate::embedding::Table;
use crate::linalg;

/// Sparse per-row gradient accumulator. Rows are kept in a `BTreeMap` so the
/// update order, and therefore float rounding, is reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    rows: BTreeMap<(Table, usize), Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `scale * g` into the row.
    pub fn add(&mut self, table: Table, row: usize, scale: f64, g: &[f64]) {
        let slot = self
            .rows
            .entry((table, row))
            .or_insert_with(|| vec![0.0; g.len()]);
        linalg::axpy(slot, scale, g);
    }

    pub fn get(&self, table: Table, row: usize) -> Option<&[f64]> {
        self.rows.get(&(table, row)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Table, usize, &[f64])> {
        self.rows.iter().map(|(&(t, r), g)| (t, r, g.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Table, usize, &mut Vec<f64>)> {
        self.rows.iter_mut().map(|(&(t, r), g)| (t, r, g))
    }

    pub fn touched(&self) -> impl Iterator<Item = (Table, usize)> + '_ {
        self.rows.keys().copied()
    }

    pub fn merge(&mut self, other: &Gradients, scale: f64) {
        for (t, r, g) in other.iter() {
            self.add(t, r, scale, g);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}
