//! First-order retrieval-augmented MAML.
//!
//! Each outer iteration draws a batch of training examples, pools their
//! retrieved supports, takes a plain gradient step on the pooled supports
//! and then applies the batch gradient, evaluated at the adapted weights,
//! to the original weights through Adam.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::error::{Error, Result};
use crate::eval::edit_distance;
use crate::grammar::Action;
use crate::numerics::{adam_step, AdamState, Gradients, ModelParams};
use crate::parser::{ParseResult, Parser};

/// Anything that yields a mean loss and gradient over a batch.
pub trait Learner {
    type Example;

    fn loss_and_grad(
        &self,
        theta: &ModelParams,
        batch: &[&Self::Example],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)>;
}

impl Learner for Parser {
    type Example = Example;

    fn loss_and_grad(
        &self,
        theta: &ModelParams,
        batch: &[&Example],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        self.batch_loss_and_grad(theta, batch, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner (task) step size.
    pub alpha: f64,
    /// Outer Adam learning rate.
    pub beta: f64,
    /// Supports retrieved per example.
    pub k: usize,
    pub test_batch: usize,
    pub inner_steps: usize,
    pub epochs: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta: 0.0002,
            k: 4,
            test_batch: 10,
            inner_steps: 1,
            epochs: 10,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha {} must be non-negative",
                self.alpha
            )));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config(format!(
                "beta {} must be positive",
                self.beta
            )));
        }
        if self.k == 0 || self.test_batch == 0 {
            return Err(Error::Config("k and test_batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaLogEntry {
    pub iteration: usize,
    /// Loss on the pooled supports; `None` when the inner step was skipped.
    pub inner_loss: Option<f64>,
    pub outer_loss: f64,
    pub wall_ms: u128,
}

impl fmt::Display for MetaLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self
            .inner_loss
            .map(|l| format!("{l:.6}"))
            .unwrap_or_else(|| "skipped".into());
        write!(
            f,
            "iter={}\tinner={}\touter={:.6}\twall_ms={}",
            self.iteration, inner, self.outer_loss, self.wall_ms
        )
    }
}

/// `theta - alpha * grad` repeated `steps` times on the support loss.
/// `theta` itself is never modified.
pub fn inner_adapt<L: Learner>(
    learner: &L,
    theta: &ModelParams,
    support: &[&L::Example],
    alpha: f64,
    steps: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(ModelParams, f64)> {
    if support.is_empty() {
        return Err(Error::Empty("support set"));
    }
    let mut adapted = theta.clone();
    let mut first_loss = f64::NAN;
    for step in 0..steps.max(1) {
        let (loss, grads) = learner.loss_and_grad(&adapted, support, rng.as_deref_mut())?;
        if !grads.is_finite() || !loss.is_finite() {
            return Err(Error::Diverged("non-finite inner gradient".into()));
        }
        if step == 0 {
            first_loss = loss;
        }
        adapted.axpy(-alpha, &grads)?;
    }
    Ok((adapted, first_loss))
}

/// Shuffled mini-batches of example indices, reshuffled every epoch.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Pooled supports of a batch: distinct indices in first-seen order.
fn pooled_support(batch: &[usize], supports: &[Vec<usize>]) -> Vec<usize> {
    let mut pooled = Vec::new();
    for &i in batch {
        for &s in &supports[i] {
            if !pooled.contains(&s) {
                pooled.push(s);
            }
        }
    }
    pooled
}

struct Schedule<'a> {
    supports: Option<&'a [Vec<usize>]>,
    alpha: f64,
    inner_steps: usize,
    lr: f64,
    batch: usize,
    epochs: usize,
}

fn run<L: Learner>(
    learner: &L,
    mut theta: ModelParams,
    train: &[L::Example],
    s: Schedule<'_>,
    rng: &mut ChaCha8Rng,
    log: &mut dyn FnMut(&MetaLogEntry),
) -> Result<ModelParams> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut adam = AdamState::new(&theta);
    // inner-step dropout draws come from their own stream so the batch
    // order does not depend on whether an inner step ran
    let mut inner_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let start = Instant::now();
    let mut iteration = 0;
    for _ in 0..s.epochs {
        for batch in epoch_batches(train.len(), s.batch, rng) {
            let mut inner_loss = None;
            let adapted = match s.supports {
                Some(sup) => {
                    let pooled = pooled_support(&batch, sup);
                    if pooled.is_empty() {
                        None
                    } else {
                        let support: Vec<&L::Example> = pooled.iter().map(|&i| &train[i]).collect();
                        let (a, l) = inner_adapt(
                            learner,
                            &theta,
                            &support,
                            s.alpha,
                            s.inner_steps,
                            Some(&mut inner_rng),
                        )?;
                        inner_loss = Some(l);
                        Some(a)
                    }
                }
                None => None,
            };
            let examples: Vec<&L::Example> = batch.iter().map(|&i| &train[i]).collect();
            let at = adapted.as_ref().unwrap_or(&theta);
            let (outer_loss, grads) = learner.loss_and_grad(at, &examples, Some(rng))?;
            if !outer_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "outer loss {outer_loss} at iteration {iteration}"
                )));
            }
            adam_step(&mut theta, &grads, &mut adam, s.lr)?;
            log(&MetaLogEntry {
                iteration,
                inner_loss,
                outer_loss,
                wall_ms: start.elapsed().as_millis(),
            });
            iteration += 1;
        }
    }
    Ok(theta)
}

/// First-order meta-training. `supports[i]` lists indices into `train` of
/// the examples retrieved for `train[i]`.
pub fn meta_train<L: Learner>(
    learner: &L,
    theta: ModelParams,
    train: &[L::Example],
    supports: &[Vec<usize>],
    cfg: &MetaConfig,
    rng: &mut ChaCha8Rng,
    log: &mut dyn FnMut(&MetaLogEntry),
) -> Result<ModelParams> {
    cfg.validate()?;
    if supports.len() != train.len() {
        return Err(Error::InvalidArgument(format!(
            "{} support lists for {} examples",
            supports.len(),
            train.len()
        )));
    }
    if supports.iter().flatten().any(|&i| i >= train.len()) {
        return Err(Error::InvalidArgument("support index out of range".into()));
    }
    run(
        learner,
        theta,
        train,
        Schedule {
            supports: Some(supports),
            alpha: cfg.alpha,
            inner_steps: cfg.inner_steps,
            lr: cfg.beta,
            batch: cfg.test_batch,
            epochs: cfg.epochs,
        },
        rng,
        log,
    )
}

/// Plain mini-batch Adam training with the same batch sampler as
/// [`meta_train`].
pub fn train_plain<L: Learner>(
    learner: &L,
    theta: ModelParams,
    train: &[L::Example],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut dyn FnMut(&MetaLogEntry),
) -> Result<ModelParams> {
    if cfg.lr <= 0.0 {
        return Err(Error::Config(format!(
            "learning rate {} must be positive",
            cfg.lr
        )));
    }
    run(
        learner,
        theta,
        train,
        Schedule {
            supports: None,
            alpha: 0.0,
            inner_steps: 0,
            lr: cfg.lr,
            batch: cfg.batch_size,
            epochs: cfg.epochs,
        },
        rng,
        log,
    )
}

/// Parses `query` after adapting to its retrieved `supports`. With
/// `finetune` off, or no supports, the unadapted weights are used.
pub fn adapted_predict(
    parser: &Parser,
    theta: &ModelParams,
    query: &Example,
    supports: &[&Example],
    cfg: &MetaConfig,
    finetune: bool,
    max_actions: usize,
) -> Result<ParseResult> {
    if !finetune || supports.is_empty() || cfg.alpha == 0.0 {
        return parser.parse_greedy(theta, query, max_actions);
    }
    let (adapted, _) = inner_adapt(parser, theta, supports, cfg.alpha, cfg.inner_steps, None)?;
    parser.parse_greedy(&adapted, query, max_actions)
}

/// Picks the candidate closest in edit distance to any retrieved
/// sequence; ties go to the shorter candidate, then the lexicographically
/// smaller one.
pub fn filter_spurious(
    candidates: &[Vec<Action>],
    retrieved: &[Vec<Action>],
) -> Result<Vec<Action>> {
    let best = candidates
        .iter()
        .min_by(|a, b| {
            let da = retrieved.iter().map(|r| edit_distance(a, r)).min();
            let db = retrieved.iter().map(|r| edit_distance(b, r)).min();
            da.cmp(&db)
                .then(a.len().cmp(&b.len()))
                .then_with(|| a.cmp(b))
        })
        .ok_or(Error::Empty("candidate set"))?;
    Ok(best.clone())
}
