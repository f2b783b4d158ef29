//! Scalar quadratic tasks with a hand-rolled first-order meta-learning oracle.

use ctxparse::metalearn::{meta_train, train_plain, Learner, MetaConfig, TrainConfig};
use ctxparse::numerics::{Gradients, ModelParams, Tensor};
use ctxparse::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-example loss `½ a (θ − c)²`, averaged over the batch.
pub struct Quadratic;

impl Learner for Quadratic {
    type Example = (f64, f64);

    fn loss_and_grad(
        &self,
        theta: &ModelParams,
        batch: &[&(f64, f64)],
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        let id = theta.ids().next().unwrap();
        let t = theta.get(id).data()[0];
        let n = batch.len() as f64;
        let loss = batch
            .iter()
            .map(|(a, c)| 0.5 * a * (t - c).powi(2))
            .sum::<f64>()
            / n;
        let g = batch.iter().map(|(a, c)| a * (t - c)).sum::<f64>() / n;
        let mut grads = theta.zero_grads();
        grads.get_mut(id).data_mut()[0] = g;
        Ok((loss, grads))
    }
}

pub fn scalar(v: f64) -> ModelParams {
    let mut p = ModelParams::new();
    p.insert("theta", Tensor::vector(vec![v]));
    p
}

pub fn tasks() -> Vec<(f64, f64)> {
    vec![(1.0, 0.5), (2.0, -1.0), (0.5, 3.0), (1.5, 0.0), (3.0, 1.2)]
}

pub fn supports() -> Vec<Vec<usize>> {
    vec![vec![1, 2], vec![0], vec![3, 4], vec![2], vec![0, 1]]
}

fn mean_grad(theta: f64, tasks: &[(f64, f64)], idx: impl Iterator<Item = usize>) -> f64 {
    let idx: Vec<usize> = idx.collect();
    idx.iter()
        .map(|&i| tasks[i].0 * (theta - tasks[i].1))
        .sum::<f64>()
        / idx.len() as f64
}

/// Full-batch iterations written out by hand: inner step on the union of
/// supports, outer gradient at the adapted point, bias-corrected Adam on θ.
pub fn oracle(theta0: f64, alpha: f64, beta: f64, iterations: usize) -> f64 {
    let tasks = tasks();
    let mut pooled: Vec<usize> = supports().concat();
    pooled.sort_unstable();
    pooled.dedup();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    for t in 1..=iterations {
        let adapted = theta - alpha * mean_grad(theta, &tasks, pooled.iter().copied());
        let g = mean_grad(adapted, &tasks, 0..tasks.len());
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= beta * m_hat / (v_hat.sqrt() + eps);
    }
    theta
}

pub fn meta_scalar(
    theta0: f64,
    alpha: f64,
    beta: f64,
    test_batch: usize,
    epochs: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let cfg = MetaConfig {
        alpha,
        beta,
        k: 2,
        test_batch,
        inner_steps: 1,
        epochs,
    };
    let mut losses = Vec::new();
    let out = meta_train(
        &Quadratic,
        scalar(theta0),
        &tasks(),
        &supports(),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(seed),
        &mut |e| losses.push(e.outer_loss),
    )
    .unwrap();
    (out.flat()[0], losses)
}

pub fn plain_scalar(
    theta0: f64,
    lr: f64,
    batch: usize,
    epochs: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size: batch,
    };
    let mut losses = Vec::new();
    let out = train_plain(
        &Quadratic,
        scalar(theta0),
        &tasks(),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(seed),
        &mut |e| losses.push(e.outer_loss),
    )
    .unwrap();
    (out.flat()[0], losses)
}

/// Worst deviation of one and two full-batch meta iterations from [`oracle`].
pub fn oracle_error() -> f64 {
    let mut worst: f64 = 0.0;
    for &(theta0, alpha, beta) in &[(1.0, 0.1, 0.01), (-2.0, 0.3, 0.05), (0.7, 0.0, 0.02)] {
        for iterations in [1, 2] {
            let (got, _) = meta_scalar(theta0, alpha, beta, tasks().len(), iterations, 9);
            worst = worst.max((got - oracle(theta0, alpha, beta, iterations)).abs());
        }
    }
    worst
}

/// Largest gap between α = 0 meta-training and plain training over 50
/// mini-batch steps: θ after every epoch and the loss at every step.
pub fn alpha_zero_gap() -> f64 {
    let (beta, batch) = (0.05, 1);
    let mut worst: f64 = 0.0;
    for epochs in 1..=10 {
        let (meta, meta_losses) = meta_scalar(1.5, 0.0, beta, batch, epochs, 4);
        let (plain, plain_losses) = plain_scalar(1.5, beta, batch, epochs, 4);
        assert_eq!(meta_losses.len(), 5 * epochs);
        worst = worst.max((meta - plain).abs());
        for (a, b) in meta_losses.iter().zip(&plain_losses) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
