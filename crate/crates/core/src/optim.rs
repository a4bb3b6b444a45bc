//! Sparse first-order optimizers. Only rows present in the gradient are read
//! or written; state is allocated per table on first use.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSpace, Scalar, Table};
use crate::grad::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

pub const ADAGRAD_EPS: f64 = 1e-10;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Default, Clone)]
struct TableState {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    state: HashMap<Table, TableState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every row in `grads`.
    pub fn step<S: Scalar>(&mut self, space: &mut EmbeddingSpace<S>, grads: &Gradients) {
        self.step += 1;
        let dim = space.dim();
        for (table, row, g) in grads.iter() {
            let m = space.table_mut(table);
            let rows = m.rows();
            let mut theta = m.row_f64(row);
            let st = self.state.entry(table).or_default();
            let needs_second = self.kind != OptimizerKind::Sgd;
            let needs_first = self.kind == OptimizerKind::Adam;
            if needs_second && st.second.is_empty() {
                st.second = vec![0.0; rows * dim];
            }
            if needs_first && st.first.is_empty() {
                st.first = vec![0.0; rows * dim];
            }
            let off = row * dim;
            update(
                self.kind,
                self.lr,
                self.step,
                &mut theta,
                g,
                st.first.get_mut(off..off + dim).unwrap_or(&mut []),
                st.second.get_mut(off..off + dim).unwrap_or(&mut []),
            );
            m.set_row_f64(row, &theta);
        }
    }
}

/// One update of `theta` given `grad` and the row's optimizer state.
/// `step` is the 1-based global step count used for Adam's bias correction.
pub fn update(
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    theta: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
) {
    match kind {
        OptimizerKind::Sgd => {
            for (t, g) in theta.iter_mut().zip(grad) {
                *t -= lr * g;
            }
        }
        OptimizerKind::Adagrad => {
            for ((t, g), acc) in theta.iter_mut().zip(grad).zip(second.iter_mut()) {
                *acc += g * g;
                *t -= lr * g / (*acc + ADAGRAD_EPS).sqrt();
            }
        }
        OptimizerKind::Adam => {
            let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for (((t, g), m), v) in theta
                .iter_mut()
                .zip(grad)
                .zip(first.iter_mut())
                .zip(second.iter_mut())
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *t -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Shape;

    #[test]
    fn sgd_single_step() {
        let mut theta = [1.0];
        update(OptimizerKind::Sgd, 0.1, 1, &mut theta, &[1.0], &mut [], &mut []);
        assert!((theta[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adagrad_first_step_closed_form() {
        let g = 0.3;
        let mut theta = [0.5];
        let mut acc = [0.0];
        update(OptimizerKind::Adagrad, 0.05, 1, &mut theta, &[g], &mut [], &mut acc);
        let expected = 0.5 - 0.05 / (g * g + ADAGRAD_EPS).sqrt() * g;
        assert_eq!(theta[0], expected);
    }

    #[test]
    fn adam_three_step_trace() {
        // Hand-rolled reference: lr 0.1, grads 1, -2, 0.5 from theta = 0.
        let grads = [1.0, -2.0, 0.5];
        let (mut m, mut v, mut th) = (0.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            th -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            expected.push(th);
        }
        // First step of Adam moves by ~lr regardless of gradient scale.
        assert!((expected[0] + 0.1).abs() < 1e-7);

        let mut theta = [0.0];
        let (mut first, mut second) = ([0.0], [0.0]);
        for (k, g) in grads.iter().enumerate() {
            update(OptimizerKind::Adam, 0.1, k as u64 + 1, &mut theta, &[*g], &mut first, &mut second);
            assert!((theta[0] - expected[k]).abs() < 1e-15, "step {}", k + 1);
        }
    }

    #[test]
    fn untouched_rows_stay_bitwise_identical() {
        let shape = Shape::new(3).with(Table::Item, 4);
        let mut space = EmbeddingSpace::<f32>::init(&shape, 5).unwrap();
        let before = space.clone();
        let mut g = Gradients::new();
        g.add(Table::Item, 2, 1.0, &[0.1, -0.2, 0.3]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        opt.step(&mut space, &g);
        opt.step(&mut space, &g);
        for r in [0, 1, 3] {
            assert_eq!(space.table(Table::Item).row(r), before.table(Table::Item).row(r));
        }
        assert_ne!(space.table(Table::Item).row(2), before.table(Table::Item).row(2));
    }
}
