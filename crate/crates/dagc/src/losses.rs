//! The three training losses and their combination: reconstruction,
//! soft self-supervision (triplet KL), and hard self-supervision
//! (thresholded pseudo-labels).

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::predict_labels;

/// Probabilities are clamped to this floor before any log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Trade-off weights and thresholds for the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Pseudo-label confidence threshold, in (0, 1].
    pub r: f64,
    /// Student's-t degrees of freedom in the soft assignment.
    pub alpha: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.1,
            r: 0.8,
            alpha: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::InvalidParameter(
                "lambda weights must be nonnegative".into(),
            ));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold r must lie in (0,1], got {}",
                self.r
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss values of one forward pass, plus how many samples the pseudo-label
/// mask selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub soft: f64,
    pub hard: f64,
    pub total: f64,
    pub selected_count: usize,
}

/// Squared Frobenius norm of the reconstruction error, as a plain sum.
pub fn reconstruction_loss(tape: &mut Tape, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("reconstruction_loss", x.shape(), x_hat.shape()));
    }
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.square(&diff);
    Ok(tape.sum_all(&sq))
}

fn check_row_stochastic(op: &'static str, name: &str, t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let sum: f64 = t.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract {
                op,
                msg: format!("{name} row {i} sums to {sum}, expected 1"),
            });
        }
    }
    Ok(())
}

/// λ1·(KL(P‖Z) + KL(P‖Q)) + λ2·KL(Z‖Q), with P treated as a constant.
///
/// Evaluated through the clamped-log path as
/// λ1·Σ p·(log p² − log z − log q) + λ2·Σ z·(log z − log q).
pub fn triplet_kl_loss(
    tape: &mut Tape,
    p: &Tensor,
    z: &Tensor,
    q: &Tensor,
    lambda1: f64,
    lambda2: f64,
) -> Result<Tensor> {
    if p.shape() != z.shape() || z.shape() != q.shape() {
        return Err(Error::shape("triplet_kl_loss", p.shape(), q.shape()));
    }
    check_row_stochastic("triplet_kl_loss", "p", p)?;
    check_row_stochastic("triplet_kl_loss", "z", z)?;
    check_row_stochastic("triplet_kl_loss", "q", q)?;

    let p_const = tape.constant(&p.detached());
    let two_log_p = Tensor::new(
        p.rows(),
        p.cols(),
        p.values().iter().map(|v| 2.0 * v.max(LOG_FLOOR).ln()).collect(),
    )?;

    let zc = tape.clamp_min(z, LOG_FLOOR);
    let log_z = tape.log(&zc);
    let qc = tape.clamp_min(q, LOG_FLOOR);
    let log_q = tape.log(&qc);

    // λ1 · Σ p (2·log p − log z − log q)
    let minus_z = tape.sub(&two_log_p, &log_z)?;
    let ratio = tape.sub(&minus_z, &log_q)?;
    let weighted = tape.hadamard(&p_const, &ratio)?;
    let sum1 = tape.sum_all(&weighted);
    let term1 = tape.scale(&sum1, lambda1);

    // λ2 · Σ z (log z − log q)
    let log_ratio = tape.sub(&log_z, &log_q)?;
    let weighted2 = tape.hadamard(z, &log_ratio)?;
    let sum2 = tape.sum_all(&weighted2);
    let term2 = tape.scale(&sum2, lambda2);

    tape.add(&term1, &term2)
}

/// Pseudo-labels, their confidence mask, and the masked cross-entropy.
pub struct PseudoSupervision {
    pub loss: Tensor,
    /// g_ij = 1 iff z_ij >= r.
    pub mask: Vec<Vec<bool>>,
    /// Rowwise argmax of z.
    pub labels: Vec<usize>,
    /// Rows with at least one selected entry.
    pub selected_count: usize,
}

/// Hard self-supervision: every selected entry of a row contributes the
/// cross-entropy of that row against the one-hot of its argmax, i.e.
/// −log z_{i,ŷ_i}, scaled by λ3. For r > 0.5 at most one entry per row can
/// pass the threshold.
pub fn pseudo_supervision_loss(
    tape: &mut Tape,
    z: &Tensor,
    r: f64,
    lambda3: f64,
) -> Result<PseudoSupervision> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold r must lie in (0,1], got {r}"
        )));
    }
    let (n, k) = z.shape();
    let labels = predict_labels(z);
    let mut mask = vec![vec![false; k]; n];
    let mut weights = vec![0.0; n * k];
    let mut selected_count = 0usize;
    for i in 0..n {
        let mut row_selected = 0usize;
        for (j, &v) in z.row(i).iter().enumerate() {
            if v >= r {
                mask[i][j] = true;
                row_selected += 1;
            }
        }
        if row_selected > 0 {
            selected_count += 1;
            weights[i * k + labels[i]] = row_selected as f64;
        }
    }

    let weight_const = tape.constant(&Tensor::new(n, k, weights)?);
    let zc = tape.clamp_min(z, LOG_FLOOR);
    let log_z = tape.log(&zc);
    let picked = tape.hadamard(&weight_const, &log_z)?;
    let sum = tape.sum_all(&picked);
    let loss = tape.scale(&sum, -lambda3);

    Ok(PseudoSupervision {
        loss,
        mask,
        labels,
        selected_count,
    })
}

/// Compose the overall objective L_R + L_S + L_H on the tape and report the
/// component values.
pub fn total_loss(
    tape: &mut Tape,
    recon: &Tensor,
    soft: &Tensor,
    hard: &Tensor,
    selected_count: usize,
) -> Result<(Tensor, LossBreakdown)> {
    let partial = tape.add(recon, soft)?;
    let total = tape.add(&partial, hard)?;
    let breakdown = LossBreakdown {
        recon: recon.scalar()?,
        soft: soft.scalar()?,
        hard: hard.scalar()?,
        total: total.scalar()?,
        selected_count,
    };
    Ok((total, breakdown))
}
