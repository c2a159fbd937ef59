//! The training loop.
//!
//! Each batch samples `K` soft social graphs from the generators, propagates
//! the embeddings over every one of them, computes one recommendation loss per
//! environment and takes a single Adam descent step on `mean + β · Var` for
//! all parameters. Every `T`-th batch the same forward pass is rebuilt with
//! the updated parameters and a second, separate Adam instance takes one
//! ascent step on the generator parameters alone, maximizing the raw variance.

mod checkpoint;
mod config;
mod log;

pub use checkpoint::{Checkpoint, TrainState};
pub use config::{Ablation, GeneratorInput, Objective, RecLoss, TrainConfig};
pub use log::{LossCsv, NoopObserver, TrainObserver};

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::data::{EvalSplit, InteractionStore, ItemId, SocialGraph, SparsityBuckets, UserId};
use crate::encoder::{propagate, EmbeddingTables, HeteroGraph};
use crate::environments::{logistic_noise, sample_environment_on_tape, EnvGenerators};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalReport};
use crate::numerics::{
    symmetric_normalize, AdamConfig, AdamState, CsrMatrix, DenseMatrix, Mlp2, Mlp2Vars,
    NamedTensor, ParamSet, Tape, Var,
};
use crate::objectives::{
    bpr_loss, erm_softmax_loss, invariance_on_tape, pointwise_loss, sample_negatives, Batch,
    LossBreakdown,
};
use crate::rng;

pub const USER_EMBEDDING: &str = "user_embedding";
pub const ITEM_EMBEDDING: &str = "item_embedding";
const GEN_PARTS: [&str; 4] = ["w1", "b1", "w2", "b2"];

type EpochBatches = Arc<Vec<Vec<(UserId, ItemId)>>>;

pub fn generator_param_name(k: usize, part: &str) -> String {
    format!("gen{k}.{part}")
}

/// Fresh parameters: embedding tables from `(seed, init-embed)`, then the
/// four tensors of each generator (none under `no_env_gen`).
pub fn init_params(config: &TrainConfig, num_users: usize, num_items: usize) -> ParamSet {
    let tables = EmbeddingTables::init(
        num_users,
        num_items,
        config.dim,
        &mut rng::stream(config.seed, rng::tag::INIT_EMBED, &[]),
    );
    let mut set = ParamSet::new(vec![
        NamedTensor::new(USER_EMBEDDING, tables.users),
        NamedTensor::new(ITEM_EMBEDDING, tables.items),
    ]);
    if !config.no_env_gen {
        let gens = EnvGenerators::init(
            config.effective_k(),
            config.dim,
            config.effective_hidden(),
            config.seed,
        );
        for (k, g) in gens.mlps.into_iter().enumerate() {
            for (part, value) in GEN_PARTS.iter().zip([g.w1, g.b1, g.w2, g.b2]) {
                set.push(NamedTensor::new(generator_param_name(k, part), value));
            }
        }
    }
    set
}

fn generator_indices(set: &ParamSet) -> Vec<usize> {
    (2..set.len()).collect()
}

fn generator_from(set: &ParamSet, k: usize) -> Mlp2 {
    let t = |part: usize| set.get(2 + 4 * k + part).value.clone();
    Mlp2 {
        w1: t(0),
        b1: t(1),
        w2: t(2),
        b2: t(3),
    }
}

/// Outcome of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub losses: LossBreakdown,
    /// Variance after the ascent step's re-forward, when one happened.
    pub ascent_variance: Option<f64>,
}

/// Outcome of one epoch, including its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub metric: f64,
    pub report: EvalReport,
    pub improved: bool,
    pub best_metric: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub epochs: usize,
    pub steps: u64,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
}

struct Forward {
    leaves: Vec<Var>,
    losses: Vec<Var>,
    mean: Var,
    variance: Var,
    total: Var,
}

/// Trainer state bound to one dataset.
pub struct Trainer {
    config: TrainConfig,
    store: InteractionStore,
    social: SocialGraph,
    graph: HeteroGraph,
    known: Vec<Vec<ItemId>>,
    params: ParamSet,
    adam: AdamState,
    ascent: Option<AdamState>,
    state: TrainState,
    best: Option<ParamSet>,
    epoch_batches: Option<(usize, EpochBatches)>,
}

impl Trainer {
    pub fn new(config: TrainConfig, store: InteractionStore, social: SocialGraph) -> Result<Self> {
        let params = init_params(&config, store.num_users, store.num_items);
        Self::assemble(config, store, social, params, None)
    }

    /// Continues from a checkpoint. The dataset must match the one it was taken on.
    pub fn from_checkpoint(
        ckpt: Checkpoint,
        store: InteractionStore,
        social: SocialGraph,
    ) -> Result<Self> {
        let Checkpoint {
            config,
            params,
            adam,
            ascent,
            state,
            best,
        } = ckpt;
        let fresh = init_params(&config, store.num_users, store.num_items);
        if fresh.len() != params.len()
            || fresh
                .iter()
                .zip(params.iter())
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::Config(
                "checkpoint parameters do not match this configuration and dataset".into(),
            ));
        }
        let mut t = Self::assemble(config, store, social, params, Some((adam, ascent)))?;
        t.state = state;
        t.best = best;
        Ok(t)
    }

    fn assemble(
        config: TrainConfig,
        store: InteractionStore,
        social: SocialGraph,
        params: ParamSet,
        optim: Option<(AdamState, Option<AdamState>)>,
    ) -> Result<Self> {
        config.validate()?;
        if store.train.is_empty() {
            return Err(Error::EmptyDataset("no training interactions".into()));
        }
        if config.monitor_split == EvalSplit::Validation && store.validation.is_empty() {
            return Err(Error::Config(
                "monitor_split = validation but the dataset has no validation pairs".into(),
            ));
        }
        let graph = HeteroGraph::new(&social, &store.train, store.num_users, store.num_items)?;
        let known = store.train_items();
        let (adam, ascent) = match optim {
            Some(o) => o,
            None => {
                let descent = AdamConfig {
                    lr: config.lr,
                    ..AdamConfig::default()
                };
                let adam = AdamState::new(descent, &params, (0..params.len()).collect());
                let ascent = config.explores().then(|| {
                    let cfg = AdamConfig {
                        lr: config.effective_ascent_lr(),
                        ..AdamConfig::default()
                    };
                    AdamState::new(cfg, &params, generator_indices(&params))
                });
                (adam, ascent)
            }
        };
        Ok(Self {
            config,
            store,
            social,
            graph,
            known,
            params,
            adam,
            ascent,
            state: TrainState::default(),
            best: None,
            epoch_batches: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn store(&self) -> &InteractionStore {
        &self.store
    }

    pub fn social(&self) -> &SocialGraph {
        &self.social
    }

    /// Parameters of the best epoch so far, or the current ones before any evaluation.
    pub fn best_params(&self) -> &ParamSet {
        self.best.as_ref().unwrap_or(&self.params)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            ascent: self.ascent.clone(),
            state: self.state.clone(),
            best: self.best.clone(),
        }
    }

    /// Shuffled train pairs of `epoch`, cut into batches.
    fn batches(&mut self, epoch: usize) -> Arc<Vec<Vec<(UserId, ItemId)>>> {
        if let Some((e, b)) = &self.epoch_batches {
            if *e == epoch {
                return Arc::clone(b);
            }
        }
        let mut order = self.store.train.clone();
        order.shuffle(&mut rng::stream(
            self.config.seed,
            rng::tag::SHUFFLE,
            &[epoch as u64],
        ));
        let batches: Arc<Vec<_>> = Arc::new(
            order
                .chunks(self.config.batch_size)
                .map(<[_]>::to_vec)
                .collect(),
        );
        self.epoch_batches = Some((epoch, Arc::clone(&batches)));
        batches
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.store.train.len().div_ceil(self.config.batch_size)
    }

    fn forward(&self, tape: &mut Tape, batch: &Batch, step: u64) -> Result<Forward> {
        self.forward_with(&self.params, tape, batch, step)
    }

    fn forward_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        batch: &Batch,
        step: u64,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let leaves: Vec<Var> = params.iter().map(|t| tape.leaf(t.value.clone())).collect();
        let (users, items) = (leaves[0], leaves[1]);
        let num_social = self.social.len();

        let gen_input = match (cfg.no_env_gen, cfg.generator_input) {
            (false, GeneratorInput::Propagated) => {
                let ones = tape.leaf(DenseMatrix::column(vec![1.0; num_social]));
                self.graph
                    .encode_on_tape(tape, ones, users, items, cfg.layers)?
                    .0
            }
            _ => users,
        };

        let triples = match cfg.rec_loss {
            RecLoss::Softmax => None,
            RecLoss::Bpr | RecLoss::Pointwise => Some(sample_negatives(
                &batch.pairs,
                &self.known,
                self.store.num_items,
                &mut rng::stream(cfg.seed, rng::tag::NEGATIVES, &[step]),
            )?),
        };
        let lambda = cfg.effective_reg_lambda();

        let mut losses = Vec::with_capacity(cfg.effective_k());
        for k in 0..cfg.effective_k() {
            let weights = if cfg.no_env_gen {
                tape.leaf(DenseMatrix::column(vec![1.0; num_social]))
            } else {
                let base = 2 + 4 * k;
                let gen = Mlp2Vars {
                    w1: leaves[base],
                    b1: leaves[base + 1],
                    w2: leaves[base + 2],
                    b2: leaves[base + 3],
                };
                let noise = logistic_noise(
                    num_social,
                    &mut rng::stream(cfg.seed, rng::tag::EDGE_NOISE, &[step, k as u64]),
                );
                sample_environment_on_tape(
                    tape,
                    &gen,
                    cfg.activation,
                    gen_input,
                    &self.social,
                    &noise,
                    cfg.temperature,
                    cfg.bias,
                )?
            };
            let (p, q) = self
                .graph
                .encode_on_tape(tape, weights, users, items, cfg.layers)?;
            let loss = match (cfg.rec_loss, &triples) {
                (RecLoss::Bpr, Some(t)) => {
                    bpr_loss(tape, p, q, t, Some((lambda, &[users, items])))?
                }
                (RecLoss::Pointwise, Some(t)) => {
                    let l = pointwise_loss(tape, p, q, t)?;
                    regularize(tape, l, lambda, users, items)?
                }
                _ => {
                    let mask = cfg.mask_in_batch.then_some(self.known.as_slice());
                    let l = erm_softmax_loss(tape, p, q, batch, cfg.tau, mask)?;
                    regularize(tape, l, lambda, users, items)?
                }
            };
            losses.push(loss);
        }

        let (total, mean, variance) = match cfg.objective {
            Objective::Invariance => invariance_on_tape(tape, &losses, cfg.effective_beta())?,
            Objective::Erm => {
                let zero = tape.leaf(DenseMatrix::scalar(0.0));
                (losses[0], losses[0], zero)
            }
        };
        Ok(Forward {
            leaves,
            losses,
            mean,
            variance,
            total,
        })
    }

    fn gradients(
        &self,
        tape: &Tape,
        forward: &Forward,
        output: Var,
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let mut grads = tape.backward(output)?;
        Ok(forward.leaves.iter().map(|&v| grads.take(v)).collect())
    }

    /// The training objective at `params` with the environment noise of
    /// `step`, and its gradient for every parameter tensor (in set order).
    pub fn objective(
        &self,
        params: &ParamSet,
        batch: &Batch,
        step: u64,
    ) -> Result<(LossBreakdown, Vec<Option<DenseMatrix>>)> {
        let mut tape = Tape::new();
        let fwd = self.forward_with(params, &mut tape, batch, step)?;
        let losses = LossBreakdown {
            per_env: fwd.losses.iter().map(|&l| tape.scalar(l)).collect(),
            mean: tape.scalar(fwd.mean),
            variance: tape.scalar(fwd.variance),
            total: tape.scalar(fwd.total),
        };
        let grads = self.gradients(&tape, &fwd, fwd.total)?;
        Ok((losses, grads))
    }

    /// One descent step on `batch`, plus the ascent step when it is due.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let step = self.state.step + 1;
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, step)?;
        let per_env: Vec<f64> = fwd.losses.iter().map(|&l| tape.scalar(l)).collect();
        let losses = LossBreakdown {
            mean: tape.scalar(fwd.mean),
            variance: tape.scalar(fwd.variance),
            total: tape.scalar(fwd.total),
            per_env,
        };
        if let Some(k) = losses.per_env.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("loss of environment {}", k + 1),
                step,
            });
        }
        if !losses.total.is_finite() {
            return Err(Error::NonFinite {
                what: "total loss".into(),
                step,
            });
        }
        let grads = self.gradients(&tape, &fwd, fwd.total)?;
        drop(tape);
        let mut next = self.params.clone();
        self.adam.step(&mut next, &grads, false)?;

        let mut ascent_variance = None;
        if self.ascent.is_some() && step.is_multiple_of(self.config.adversarial_period) {
            let current = std::mem::replace(&mut self.params, next);
            match self.ascend(batch, step) {
                Ok(v) => ascent_variance = Some(v),
                Err(e) => {
                    self.params = current;
                    return Err(e);
                }
            }
        } else {
            self.params = next;
        }
        self.state.step = step;
        Ok(StepRecord {
            step,
            epoch: self.state.epoch,
            losses,
            ascent_variance,
        })
    }

    /// Rebuilds the forward pass with the same noise and takes one ascent
    /// step on the generators along the variance gradient.
    fn ascend(&mut self, batch: &Batch, step: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, step)?;
        let variance = tape.scalar(fwd.variance);
        let grads = self.gradients(&tape, &fwd, fwd.variance)?;
        drop(tape);
        let mut next = self.params.clone();
        self.ascent
            .as_mut()
            .expect("ascent state")
            .step(&mut next, &grads, true)?;
        self.params = next;
        Ok(variance)
    }

    /// Runs up to `n` batches of the current epoch without evaluating.
    /// Returns fewer records when the epoch ends first.
    pub fn train_batches(
        &mut self,
        n: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<Vec<StepRecord>> {
        let batches = self.batches(self.state.epoch);
        let mut out = Vec::new();
        while out.len() < n && self.state.batch_cursor < batches.len() {
            let batch = Batch::new(batches[self.state.batch_cursor].clone());
            let rec = self.train_step(&batch)?;
            self.state.batch_cursor += 1;
            observer.on_step(&rec)?;
            out.push(rec);
        }
        Ok(out)
    }

    /// Finishes the current epoch, evaluates and updates the best snapshot.
    pub fn run_epoch(&mut self, observer: &mut dyn TrainObserver) -> Result<EpochRecord> {
        let records = self.train_batches(usize::MAX, observer)?;
        let mean_total =
            records.iter().map(|r| r.losses.total).sum::<f64>() / records.len().max(1) as f64;
        let report = self.evaluate_params(&self.params, self.config.monitor_split, None)?;
        let metric = report
            .ndcg_at(self.config.monitor_cutoff)
            .expect("monitor cutoff evaluated");
        let improved = self.state.best_metric.is_none_or(|b| metric > b);
        let epoch = self.state.epoch;
        if improved {
            self.state.best_metric = Some(metric);
            self.state.best_epoch = Some(epoch);
            self.state.epochs_since_best = 0;
            self.best = Some(self.params.clone());
        } else {
            self.state.epochs_since_best += 1;
        }
        self.state.history.push(metric);
        self.state.epoch += 1;
        self.state.batch_cursor = 0;
        let rec = EpochRecord {
            epoch,
            steps: records.len(),
            mean_total,
            metric,
            report,
            improved,
            best_metric: self.state.best_metric.expect("set above"),
            best_epoch: self.state.best_epoch.expect("set above"),
        };
        observer.on_epoch(&rec, self)?;
        Ok(rec)
    }

    pub fn should_stop(&self) -> bool {
        self.state.epoch >= self.config.max_epochs
            || (self.config.patience > 0 && self.state.epochs_since_best >= self.config.patience)
    }

    /// Trains until `max_epochs` or until `patience` epochs pass without a
    /// better monitored NDCG.
    pub fn fit(&mut self, observer: &mut dyn TrainObserver) -> Result<FitSummary> {
        while !self.should_stop() {
            self.run_epoch(observer)?;
        }
        Ok(FitSummary {
            epochs: self.state.epoch,
            steps: self.state.step,
            best_epoch: self.state.best_epoch.unwrap_or(0),
            best_metric: self.state.best_metric.unwrap_or(0.0),
            stopped_early: self.state.epoch < self.config.max_epochs,
        })
    }

    /// Inference embeddings `(U, V)` for a parameter set of this trainer.
    pub fn embeddings(&self, params: &ParamSet) -> Result<(DenseMatrix, DenseMatrix)> {
        infer_embeddings(&self.config, params, &self.graph, &self.social)
    }

    pub fn evaluate_params(
        &self,
        params: &ParamSet,
        split: EvalSplit,
        buckets: Option<&SparsityBuckets>,
    ) -> Result<EvalReport> {
        let (u, v) = self.embeddings(params)?;
        evaluate(&u, &v, &self.store, split, &self.config.cutoffs, buckets)
    }

    pub fn evaluate_best(
        &self,
        split: EvalSplit,
        buckets: Option<&SparsityBuckets>,
    ) -> Result<EvalReport> {
        self.evaluate_params(self.best_params(), split, buckets)
    }

    /// The `K` environments used at inference time.
    pub fn inference_environments(&self, params: &ParamSet) -> Result<Vec<Vec<f64>>> {
        inference_social_weights(&self.config, params, &self.graph, &self.social)
    }
}

fn regularize(tape: &mut Tape, loss: Var, lambda: f64, users: Var, items: Var) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(loss);
    }
    let su = tape.sum_squares(users);
    let si = tape.sum_squares(items);
    tape.combine(vec![(loss, 1.0), (su, lambda), (si, lambda)])
}

fn layer0(params: &ParamSet) -> EmbeddingTables {
    EmbeddingTables {
        users: params.get(0).value.clone(),
        items: params.get(1).value.clone(),
    }
}

fn normalized(graph: &HeteroGraph, social_weights: &[f64]) -> Result<CsrMatrix> {
    Ok(symmetric_normalize(&graph.adjacency(social_weights)?))
}

/// Social weights of the `K` inference environments, re-sampled once from
/// the `(seed, eval-noise, k)` streams.
pub fn inference_social_weights(
    config: &TrainConfig,
    params: &ParamSet,
    graph: &HeteroGraph,
    social: &SocialGraph,
) -> Result<Vec<Vec<f64>>> {
    if config.no_env_gen {
        return Ok(vec![vec![1.0; social.len()]]);
    }
    let tables = layer0(params);
    let gen_input = match config.generator_input {
        GeneratorInput::Layer0 => tables.users.clone(),
        GeneratorInput::Propagated => {
            propagate(
                &normalized(graph, &vec![1.0; social.len()])?,
                &tables,
                config.layers,
                false,
            )?
            .users
        }
    };
    (0..config.effective_k())
        .map(|k| {
            let mut r = rng::stream(config.seed, rng::tag::EVAL_NOISE, &[k as u64]);
            let env = crate::environments::sample_environment(
                &generator_from(params, k),
                config.activation,
                &gen_input,
                social,
                config.temperature,
                config.bias,
                &mut r,
            )?;
            Ok(env.weights)
        })
        .collect()
}

/// `U = mean_k P^k`, `V = mean_k Q^k` over the inference environments.
pub fn infer_embeddings(
    config: &TrainConfig,
    params: &ParamSet,
    graph: &HeteroGraph,
    social: &SocialGraph,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let tables = layer0(params);
    let envs = inference_social_weights(config, params, graph, social)?;
    let k = envs.len() as f64;
    let mut acc: Option<(DenseMatrix, DenseMatrix)> = None;
    for w in &envs {
        let out = propagate(&normalized(graph, w)?, &tables, config.layers, false)?;
        match acc.as_mut() {
            None => acc = Some((out.users, out.items)),
            Some((u, v)) => {
                u.add_scaled(&out.users, 1.0);
                v.add_scaled(&out.items, 1.0);
            }
        }
    }
    let (u, v) = acc.expect("at least one environment");
    Ok((u.map(|x| x / k), v.map(|x| x / k)))
}

/// Score rows `⟨u_a, v_i⟩` for the given users, train items set to `−∞`.
pub fn infer_scores(
    users: &DenseMatrix,
    items: &DenseMatrix,
    store: &InteractionStore,
    query: &[UserId],
) -> Vec<Vec<f64>> {
    let known = store.train_items();
    query
        .iter()
        .map(|&a| {
            let mut s = items.mat_vec(users.row(a as usize));
            for &i in &known[a as usize] {
                s[i as usize] = f64::NEG_INFINITY;
            }
            s
        })
        .collect()
}

/// Trains from scratch and returns the trainer (holding the best snapshot) with its summary.
pub fn train(
    config: TrainConfig,
    store: InteractionStore,
    social: SocialGraph,
    observer: &mut dyn TrainObserver,
) -> Result<(Trainer, FitSummary)> {
    let mut t = Trainer::new(config, store, social)?;
    let summary = t.fit(observer)?;
    Ok((t, summary))
}
