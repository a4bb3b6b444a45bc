//! Joint objective, optimizer steps and the epoch loop.
//!
//! Each epoch walks a shuffled schedule holding `ceil(|train pairs| / B)`
//! recommendation batches and `ceil(|train triples| / B)` completion batches.
//! A step sees one batch; its loss is the batch mean weighted by `lambda`
//! (recommendation) or `1 - lambda` (completion). A task whose weight is zero
//! gets no steps at all, so its exclusive rows keep their values exactly.

use std::io::Write;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Role, Triple};
use crate::dataset::Dataset;
use crate::embedding::{ConstraintPolicy, EmbeddingSpace, Scalar};
use crate::error::{Error, Result};
use crate::eval::{eval_rec, kgc_ranks, summarize_kgc, DEFAULT_CUTOFF};
use crate::grad::Gradients;
use crate::kgc::{kgc_loss_into, KgcConfig};
use crate::model::ModelKind;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rec::{bpr_loss_into, NoiseKind, PreferenceInduction, RecConfig, Strategy};
use crate::sampler::{
    sample_kgc_negatives, sample_rec_negatives, Corruption, KgcNegative, RecNegative, TripleIndex, UserItemIndex,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    /// Weight of the recommendation loss in the joint objective.
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub margin: f64,
    pub induction: PreferenceInduction,
    /// Preference count for TUP; the joint model uses one per relation.
    pub num_prefs: usize,
    pub corruption: Corruption,
    pub constraints: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults_for(model: ModelKind) -> Self {
        let rec_only = matches!(model, ModelKind::Bprmf | ModelKind::Tup);
        TrainConfig {
            model,
            dim: 100,
            lambda: 0.5,
            batch_size: 256,
            lr: if rec_only { 0.005 } else { 0.001 },
            l2: if rec_only { 1e-5 } else { 0.0 },
            optimizer: if rec_only { OptimizerKind::Adagrad } else { OptimizerKind::Adam },
            max_epochs: 500,
            patience: 5,
            eval_every: 5,
            margin: 1.0,
            induction: PreferenceInduction {
                strategy: Strategy::Soft,
                tau: 1.0,
                noise: NoiseKind::Uniform,
            },
            num_prefs: 10,
            corruption: Corruption::Uniform,
            constraints: true,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.eval_every == 0 {
            return bad("eval-every must be positive".into());
        }
        PreferenceInduction::new(self.induction.strategy, self.induction.tau, self.induction.noise)?;
        KgcConfig::new(self.model.kgc_variant().unwrap_or_default(), self.margin)?;
        if self.model == ModelKind::Tup && self.num_prefs == 0 {
            return bad("tup needs --num-prefs > 0".into());
        }
        Ok(())
    }

    pub fn objective(&self, item_entity: Vec<Option<usize>>) -> Result<Objective> {
        self.validate()?;
        Ok(Objective {
            rec: self.model.rec_kind().map(|kind| RecConfig {
                kind,
                induction: self.induction,
            }),
            kgc: match self.model.kgc_variant() {
                Some(v) => Some(KgcConfig::new(v, self.margin)?),
                None => None,
            },
            lambda: self.lambda,
            l2: self.l2,
            item_entity,
        })
    }
}

/// Mean losses of one step or one epoch. Task losses are unweighted; `joint`
/// is the weighted sum plus the L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLoss {
    pub rec: f64,
    pub kgc: f64,
    pub joint: f64,
}

/// The training objective of one model.
#[derive(Debug, Clone)]
pub struct Objective {
    pub rec: Option<RecConfig>,
    pub kgc: Option<KgcConfig>,
    pub lambda: f64,
    pub l2: f64,
    pub item_entity: Vec<Option<usize>>,
}

impl Objective {
    pub fn rec_weight(&self) -> f64 {
        match (self.rec, self.kgc) {
            (Some(_), Some(_)) => self.lambda,
            (Some(_), None) => 1.0,
            _ => 0.0,
        }
    }

    pub fn kgc_weight(&self) -> f64 {
        match (self.rec, self.kgc) {
            (Some(_), Some(_)) => 1.0 - self.lambda,
            (None, Some(_)) => 1.0,
            _ => 0.0,
        }
    }

    /// Loss and gradient of the weighted batch means plus the L2 penalty on
    /// every touched row.
    pub fn gradients<S: Scalar>(
        &self,
        space: &EmbeddingSpace<S>,
        rec: &[RecNegative],
        kgc: &[KgcNegative],
        rng: &mut impl Rng,
    ) -> Result<(StepLoss, Gradients)> {
        let mut grads = Gradients::new();
        let mut loss = StepLoss::default();
        if let (Some(cfg), false) = (self.rec, rec.is_empty()) {
            let w = self.rec_weight();
            let scale = w / rec.len() as f64;
            let mut sum = 0.0;
            for n in rec {
                sum += bpr_loss_into(space, &cfg, &self.item_entity, n.user, n.pos, n.neg, scale, &mut grads, rng);
            }
            loss.rec = sum / rec.len() as f64;
            if !loss.rec.is_finite() {
                return Err(Error::NonFinite {
                    task: "rec",
                    ids: rec.iter().map(|n| n.user).collect(),
                });
            }
            loss.joint += w * loss.rec;
        }
        if let (Some(cfg), false) = (self.kgc, kgc.is_empty()) {
            let w = self.kgc_weight();
            let scale = w / kgc.len() as f64;
            let mut sum = 0.0;
            for n in kgc {
                sum += kgc_loss_into(space, &n.pos, &n.neg, &cfg, scale, &mut grads);
            }
            loss.kgc = sum / kgc.len() as f64;
            if !loss.kgc.is_finite() {
                return Err(Error::NonFinite {
                    task: "kgc",
                    ids: kgc.iter().map(|n| n.pos.head).collect(),
                });
            }
            loss.joint += w * loss.kgc;
        }
        if self.l2 > 0.0 {
            for (table, row, g) in grads.iter_mut() {
                let theta = space.row_f64(table, row);
                for (gi, t) in g.iter_mut().zip(&theta) {
                    *gi += 2.0 * self.l2 * t;
                    loss.joint += self.l2 * t * t;
                }
            }
        }
        if grads.iter().any(|(_, _, g)| g.iter().any(|v| !v.is_finite())) {
            let (task, ids) = if rec.is_empty() {
                ("kgc", kgc.iter().map(|n| n.pos.head).collect())
            } else {
                ("rec", rec.iter().map(|n| n.user).collect())
            };
            return Err(Error::NonFinite { task, ids });
        }
        Ok((loss, grads))
    }
}

/// One optimizer step on a batch, followed by constraint enforcement on the
/// rows the batch touched.
#[allow(clippy::too_many_arguments)]
pub fn joint_step<S: Scalar>(
    space: &mut EmbeddingSpace<S>,
    optimizer: &mut Optimizer,
    objective: &Objective,
    policy: ConstraintPolicy,
    rec: &[RecNegative],
    kgc: &[KgcNegative],
    rng: &mut impl Rng,
) -> Result<StepLoss> {
    let (loss, grads) = objective.gradients(space, rec, kgc, rng)?;
    optimizer.step(space, &grads);
    for (table, row) in grads.touched() {
        space.enforce_row(table, row, policy, rng);
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_rec: f64,
    pub loss_kgc: f64,
    pub loss: f64,
    /// Validation metric, on epochs where it was computed.
    pub validation: Option<f64>,
    pub seconds: f64,
}

pub struct FitResult {
    /// Parameters at the best validation point.
    pub space: EmbeddingSpace<f32>,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Validation score used for early stopping: F1@10 for recommendation,
/// filtered hit@10 for completion, the `lambda`-weighted sum for the joint model.
pub fn validation_metric<S: Scalar>(space: &EmbeddingSpace<S>, dataset: &Dataset, objective: &Objective) -> f64 {
    let mut metric = 0.0;
    if let Some(cfg) = objective.rec {
        metric += objective.rec_weight() * eval_rec(space, cfg, dataset, Role::Valid, DEFAULT_CUTOFF).f1;
    }
    if let Some(cfg) = objective.kgc {
        let valid = dataset.triples_with(Role::Valid);
        let ranks = kgc_ranks(space, &cfg, &valid, &dataset.all_triples());
        metric += objective.kgc_weight() * summarize_kgc(&ranks, None, DEFAULT_CUTOFF).overall.hits_filtered;
    }
    metric
}

enum Batch {
    Rec(usize),
    Kgc(usize),
}

/// Trains `space` in place and returns the best-validation parameters.
/// Epoch records are written as JSON lines to `log_sink` when given.
pub fn fit(
    dataset: &Dataset,
    mut space: EmbeddingSpace<f32>,
    config: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<FitResult> {
    let objective = config.objective(dataset.item_entity())?;
    if config.model == ModelKind::Ktup && dataset.alignments.is_empty() {
        return Err(Error::Config("ktup needs item-entity alignments".into()));
    }
    let counts = dataset.counts();
    let expected = config.model.shape(config.dim, &counts, config.num_prefs)?;
    space.check_shape(&expected)?;

    let policy = config.model.constraint_policy(config.constraints);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut optimizer = Optimizer::new(config.optimizer, config.lr);

    let use_rec = objective.rec.is_some() && objective.rec_weight() > 0.0;
    let use_kgc = objective.kgc.is_some() && objective.kgc_weight() > 0.0;
    let mut pairs = if use_rec { dataset.interactions.pairs(Role::Train) } else { Vec::new() };
    let mut triples: Vec<Triple> = if use_kgc { dataset.triples_with(Role::Train) } else { Vec::new() };
    let user_index = UserItemIndex::new(&dataset.interactions.items_by_user(Role::Train), counts.items);
    let triple_index = TripleIndex::new(&dataset.triples_with(Role::Train), counts.entities, counts.relations);
    let b = config.batch_size;
    let rec_batches = pairs.len().div_ceil(b);
    let kgc_batches = triples.len().div_ceil(b);
    if rec_batches + kgc_batches == 0 {
        return Err(Error::Data("no training data for the selected model".into()));
    }
    info!(
        "training {} for up to {} epochs: {} rec and {} kgc batches per epoch",
        config.model, config.max_epochs, rec_batches, kgc_batches
    );

    let mut logs = Vec::new();
    let mut best = (space.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0usize;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        pairs.shuffle(&mut rng);
        triples.shuffle(&mut rng);
        let mut schedule: Vec<Batch> = (0..rec_batches)
            .map(Batch::Rec)
            .chain((0..kgc_batches).map(Batch::Kgc))
            .collect();
        schedule.shuffle(&mut rng);

        let (mut rec_sum, mut kgc_sum, mut joint_sum) = (0.0, 0.0, 0.0);
        for batch in &schedule {
            let loss = match *batch {
                Batch::Rec(k) => {
                    let chunk = &pairs[k * b..((k + 1) * b).min(pairs.len())];
                    let negs = sample_rec_negatives(chunk, &user_index, &mut rng)?;
                    joint_step(&mut space, &mut optimizer, &objective, policy, &negs, &[], &mut rng)?
                }
                Batch::Kgc(k) => {
                    let chunk = &triples[k * b..((k + 1) * b).min(triples.len())];
                    let negs = sample_kgc_negatives(chunk, &triple_index, config.corruption, &mut rng)?;
                    joint_step(&mut space, &mut optimizer, &objective, policy, &[], &negs, &mut rng)?
                }
            };
            rec_sum += loss.rec;
            kgc_sum += loss.kgc;
            joint_sum += loss.joint;
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let mut log = EpochLog {
            epoch,
            loss_rec: mean(rec_sum, rec_batches),
            loss_kgc: mean(kgc_sum, kgc_batches),
            loss: mean(joint_sum, schedule.len()),
            validation: None,
            seconds: 0.0,
        };

        let last = epoch == config.max_epochs;
        let mut stop = false;
        if epoch % config.eval_every == 0 || last {
            let metric = validation_metric(&space, dataset, &objective);
            log.validation = Some(metric);
            if metric > best.2 {
                best = (space.clone(), epoch, metric);
                since_best = 0;
            } else {
                since_best += 1;
            }
            stop = since_best >= config.patience;
        }
        log.seconds = start.elapsed().as_secs_f64();
        debug!("{}", serde_json::to_string(&log)?);
        if let Some(sink) = log_sink.as_deref_mut() {
            writeln!(sink, "{}", serde_json::to_string(&log)?).map_err(|e| Error::io("writing epoch log", e))?;
        }
        logs.push(log);
        if stop {
            info!("early stop at epoch {epoch}; best epoch {}", best.1);
            break;
        }
    }
    Ok(FitResult {
        space: best.0,
        logs,
        best_epoch: best.1,
        best_metric: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_outside_unit_interval_is_rejected() {
        let mut c = TrainConfig::defaults_for(ModelKind::Ktup);
        c.lambda = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.lambda = -0.1;
        assert!(c.validate().is_err());
        c.lambda = 1.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn defaults_by_task() {
        let r = TrainConfig::defaults_for(ModelKind::Tup);
        assert_eq!((r.lr, r.optimizer, r.l2), (0.005, OptimizerKind::Adagrad, 1e-5));
        for m in [ModelKind::TransH, ModelKind::Ktup] {
            let k = TrainConfig::defaults_for(m);
            assert_eq!((k.lr, k.optimizer, k.l2), (0.001, OptimizerKind::Adam, 0.0));
        }
        assert_eq!((r.dim, r.batch_size, r.patience, r.eval_every), (100, 256, 5, 5));
    }

    #[test]
    fn weights_for_single_and_joint_models() {
        let c = TrainConfig {
            lambda: 0.3,
            ..TrainConfig::defaults_for(ModelKind::Ktup)
        };
        let o = c.objective(Vec::new()).unwrap();
        assert_eq!((o.rec_weight(), o.kgc_weight()), (0.3, 0.7));
        let o = TrainConfig::defaults_for(ModelKind::TransH).objective(Vec::new()).unwrap();
        assert_eq!((o.rec_weight(), o.kgc_weight()), (0.0, 1.0));
    }
}
