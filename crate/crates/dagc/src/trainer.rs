//! K-means initialization, DAE pretraining, and the joint training loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::losses::{
    pseudo_supervision_loss, reconstruction_loss, total_loss, triplet_kl_loss, Hyperparams,
    LossBreakdown,
};
use crate::metrics::{evaluate_all, MetricSet};
use crate::model::{self, ModelConfig, ModelParams};

/// Everything one training run needs to be reproducible.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dims: Vec<usize>,
    pub k: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub joint_iterations: usize,
    pub joint_lr: f64,
    /// Mini-batch size for DAE pretraining; the joint phase is full-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
    /// Exclude Q from the gradient path of the soft loss.
    pub detach_q: bool,
    pub attention_fusion: bool,
    pub use_dwf: bool,
}

impl TrainConfig {
    pub fn new(k: usize) -> Self {
        TrainConfig {
            dims: model::DEFAULT_DIMS.to_vec(),
            k,
            pretrain_epochs: 30,
            pretrain_lr: 0.001,
            joint_iterations: 200,
            joint_lr: 0.001,
            batch_size: 256,
            seed: 0,
            hyper: Hyperparams::default(),
            detach_q: false,
            attention_fusion: true,
            use_dwf: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pretrain_epochs < 1
            || self.joint_iterations < 1
            || self.batch_size < 1
            || self.k < 1
        {
            return Err(Error::InvalidParameter(
                "epochs, iterations, batch size, and k must be at least 1".into(),
            ));
        }
        if self.pretrain_lr <= 0.0 || self.joint_lr <= 0.0 {
            return Err(Error::InvalidParameter(
                "learning rates must be positive".into(),
            ));
        }
        self.hyper.validate()
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(input_dim, self.dims.clone(), self.k);
        cfg.alpha = self.hyper.alpha;
        cfg.attention_fusion = self.attention_fusion;
        cfg.use_dwf = self.use_dwf;
        cfg
    }
}

// ---- k-means ---------------------------------------------------------------

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Detailed k-means result, including the inertia after each Lloyd
/// iteration.
pub struct KmeansOutcome {
    pub centroids: Tensor,
    pub labels: Vec<usize>,
    pub inertia_trace: Vec<f64>,
}

impl KmeansOutcome {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("at least one iteration")
    }
}

/// Lloyd's algorithm with k-means++ seeding. Ties in assignment go to the
/// lower centroid index; empty clusters are re-seeded from the farthest
/// point; convergence when the largest centroid movement drops below 1e-4,
/// capped at 300 iterations. Deterministic for a fixed seed.
pub fn kmeans(points: &Tensor, k: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    let out = kmeans_detailed(points, k, seed)?;
    Ok((out.centroids, out.labels))
}

pub fn kmeans_detailed(points: &Tensor, k: usize, seed: u64) -> Result<KmeansOutcome> {
    let (n, d) = points.shape();
    if k < 1 || n < k {
        return Err(Error::InvalidParameter(format!(
            "kmeans needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(points.row(first).to_vec());
    let mut best_d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in best_d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all points coincide with existing centroids; take the first
            // index not yet duplicated as a centroid
            let mut pick = 0;
            while pick + 1 < n
                && centroids.iter().any(|c| c.as_slice() == points.row(pick))
            {
                pick += 1;
            }
            pick
        };
        centroids.push(points.row(chosen).to_vec());
        for (i, slot) in best_d2.iter_mut().enumerate() {
            let d2 = sq_dist(points.row(i), centroids.last().unwrap());
            if d2 < *slot {
                *slot = d2;
            }
        }
    }

    // labels plus the inertia of that assignment
    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let labels = (0..n)
            .map(|i| {
                let p = points.row(i);
                let mut best = 0usize;
                let mut best_d = sq_dist(p, &centroids[0]);
                for (c, cent) in centroids.iter().enumerate().skip(1) {
                    let d2 = sq_dist(p, cent);
                    if d2 < best_d {
                        best_d = d2;
                        best = c;
                    }
                }
                inertia += best_d;
                best
            })
            .collect();
        (labels, inertia)
    };

    let (mut labels, mut inertia) = assign(&centroids);
    let mut inertia_trace = vec![inertia];
    for _ in 0..300 {
        // means per cluster
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (slot, &s) in new_centroids[c].iter_mut().zip(&sums[c]) {
                    *slot = s / counts[c] as f64;
                }
            }
        }
        // empty clusters grab the current farthest points, one each
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut dist: Vec<(f64, usize)> = (0..n)
                .map(|i| (sq_dist(points.row(i), &new_centroids[labels[i]]), i))
                .collect();
            dist.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for (slot, &(_, point)) in empties.iter().zip(dist.iter()) {
                new_centroids[*slot] = points.row(point).to_vec();
            }
        }

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        (labels, inertia) = assign(&centroids);
        inertia_trace.push(inertia);
        if shift < 1e-4 {
            break;
        }
    }

    let mut flat = Vec::with_capacity(k * d);
    for c in centroids {
        flat.extend(c);
    }
    Ok(KmeansOutcome {
        centroids: Tensor::new(k, d, flat)?,
        labels,
        inertia_trace,
    })
}

// ---- optimizer -------------------------------------------------------------

/// Adaptive-moment estimation with the usual constants (0.9 / 0.999 /
/// 1e-8) and bias correction.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn for_tensors(tensors: &[&Tensor]) -> Self {
        AdamState {
            m: tensors.iter().map(|t| vec![0.0; t.values().len()]).collect(),
            v: tensors.iter().map(|t| vec![0.0; t.values().len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over a parameter list; `grads` aligns with `params`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract {
                op: "optimizer_step",
                msg: format!(
                    "parameter count mismatch: state={}, params={}, grads={}",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (idx, param) in params.iter_mut().enumerate() {
            let g = grads[idx].values();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    iteration: self.step as usize,
                    msg: format!("non-finite gradient for parameter {idx}"),
                });
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut values = param.values().to_vec();
            for (((value, &grad), mi), vi) in
                values.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * grad;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            **param = Tensor::new(param.rows(), param.cols(), values)?;
        }
        Ok(())
    }
}

// ---- pretraining -----------------------------------------------------------

/// Initialize parameters from the seed and minimize the reconstruction
/// loss with shuffled mini-batches. Only the encoder/decoder subset is
/// updated. Returns the parameters plus the full-data loss before and
/// after.
pub fn pretrain_dae(cfg: &TrainConfig, x: &Tensor) -> Result<(ModelParams, f64, f64)> {
    cfg.validate()?;
    let mut params = ModelParams::init(cfg.model_config(x.cols()), cfg.seed)?;

    let full_loss = |params: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let (_, x_hat) = model::dae_forward(&mut tape, params, x)?;
        reconstruction_loss(&mut tape, x, &x_hat)?.scalar()
    };
    let initial = full_loss(&params)?;

    let n = x.rows();
    let dae = params.dae_indices();
    let mut adam = {
        let tensors = params.tensors();
        AdamState::for_tensors(&tensors[dae.clone()])
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    for _ in 0..cfg.pretrain_epochs {
        // Fisher-Yates with the run's generator
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| x.row(i).to_vec()).collect();
            let xb = Tensor::from_rows(&rows)?;

            let mut tape = Tape::new();
            let mut live = params.clone();
            for t in live.tensors_mut().into_iter().take(dae.end) {
                *t = tape.leaf(t);
            }
            let (_, x_hat) = model::dae_forward(&mut tape, &live, &xb)?;
            let loss = reconstruction_loss(&mut tape, &xb, &x_hat)?;
            let grads = tape.backward(&loss)?;

            let grad_tensors: Vec<Tensor> = live.tensors()[dae.clone()]
                .iter()
                .map(|t| grads.wrt(t))
                .collect::<Result<_>>()?;
            let mut tensors = params.tensors_mut();
            adam.step(&mut tensors[dae.clone()], &grad_tensors, cfg.pretrain_lr)?;
        }
    }
    let final_loss = full_loss(&params)?;
    Ok((params, initial, final_loss))
}

// ---- joint training --------------------------------------------------------

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub losses: LossBreakdown,
    pub metrics: Option<MetricSet>,
}

/// Final artifact of a training run.
#[derive(Debug, Clone)]
pub struct ClusteringReport {
    pub labels: Vec<usize>,
    pub metrics: Option<MetricSet>,
    pub trajectory: Vec<IterationRecord>,
    pub pretrain_initial_loss: f64,
    pub pretrain_final_loss: f64,
}

/// The joint loop: full-graph forward, combined loss, backward, Adam.
/// Centroids are initialized once by k-means on the pretrained bottleneck
/// features and trained by gradient afterwards.
pub fn train_joint(
    cfg: &TrainConfig,
    x: &Tensor,
    op: &Arc<PropagationOperator>,
    mut params: ModelParams,
    truth: Option<&[i64]>,
) -> Result<(ModelParams, Vec<IterationRecord>, Vec<usize>)> {
    cfg.validate()?;
    if let Some(t) = truth {
        if t.len() != x.rows() {
            return Err(Error::Contract {
                op: "train_joint",
                msg: format!("{} labels for {} samples", t.len(), x.rows()),
            });
        }
    }

    // centroid initialization from the pretrained bottleneck
    let h_init = {
        let mut tape = Tape::new();
        let (h, _) = model::dae_forward(&mut tape, &params, x)?;
        h.last().expect("at least one layer").detached()
    };
    let (centroids, _) = kmeans(&h_init, cfg.k, cfg.seed)?;
    params.centroids = centroids;

    let mut adam = AdamState::for_tensors(&params.tensors());
    let mut trajectory = Vec::with_capacity(cfg.joint_iterations);

    for iteration in 0..cfg.joint_iterations {
        let mut tape = Tape::new();
        let mut live = params.clone();
        for t in live.tensors_mut() {
            *t = tape.leaf(t);
        }

        let state = model::forward(&mut tape, &live, x, op)?;
        let p = model::target_distribution_p(&state.z);

        let recon = reconstruction_loss(&mut tape, x, &state.x_hat)?;
        let q_for_soft = if cfg.detach_q {
            tape.constant(&state.q.detached())
        } else {
            state.q.clone()
        };
        let soft = triplet_kl_loss(
            &mut tape,
            &p,
            &state.z,
            &q_for_soft,
            cfg.hyper.lambda1,
            cfg.hyper.lambda2,
        )?;
        let hard = pseudo_supervision_loss(&mut tape, &state.z, cfg.hyper.r, cfg.hyper.lambda3)?;
        let (total, breakdown) =
            total_loss(&mut tape, &recon, &soft, &hard.loss, hard.selected_count)?;

        if !breakdown.total.is_finite() {
            return Err(Error::Diverged {
                iteration,
                msg: format!(
                    "loss components recon={} soft={} hard={}",
                    breakdown.recon, breakdown.soft, breakdown.hard
                ),
            });
        }

        let metrics = match truth {
            Some(t) => {
                let pred: Vec<i64> = model::predict_labels(&state.f)
                    .into_iter()
                    .map(|l| l as i64)
                    .collect();
                Some(evaluate_all(t, &pred)?)
            }
            None => None,
        };
        trajectory.push(IterationRecord {
            iteration,
            losses: breakdown,
            metrics,
        });

        let grads = tape.backward(&total)?;
        let grad_tensors: Vec<Tensor> = live
            .tensors()
            .iter()
            .map(|t| grads.wrt(t))
            .collect::<Result<_>>()?;
        let mut tensors = params.tensors_mut();
        adam.step(&mut tensors, &grad_tensors, cfg.joint_lr)?;
    }

    // labels from a final forward pass with the trained parameters
    let mut tape = Tape::new();
    let state = model::forward(&mut tape, &params, x, op)?;
    let labels = model::predict_labels(&state.f);
    Ok((params, trajectory, labels))
}

/// Pretrain, then run the joint phase; the standard end-to-end pipeline.
pub fn run_pipeline(
    cfg: &TrainConfig,
    x: &Tensor,
    op: &Arc<PropagationOperator>,
    truth: Option<&[i64]>,
) -> Result<(ModelParams, ClusteringReport)> {
    let (params, pre_initial, pre_final) = pretrain_dae(cfg, x)?;
    let (params, trajectory, labels) = train_joint(cfg, x, op, params, truth)?;
    let metrics = match truth {
        Some(t) => {
            let pred: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
            Some(evaluate_all(t, &pred)?)
        }
        None => None,
    };
    Ok((
        params,
        ClusteringReport {
            labels,
            metrics,
            trajectory,
            pretrain_initial_loss: pre_initial,
            pretrain_final_loss: pre_final,
        },
    ))
}
