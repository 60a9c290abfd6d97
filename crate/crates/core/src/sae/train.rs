use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Regime, SaeConfig};
use super::model::{LossBreakdown, SaeModel};
use super::optim::Optimizer;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::stats::{spearman, CorrelationResult};

/// Inputs whose column statistics drift further than this from (0, 1) get a
/// warning in the report.
const NORMALISATION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample total loss over the training steps of this epoch.
    pub train_loss: f64,
    /// Mean total loss on the validation split after the epoch (split
    /// regime only).
    pub val_loss: Option<f64>,
    /// Spearman(reconstruction loss, memorability) on the evaluation set:
    /// the validation split, or everything in the single regime.
    pub eval_correlation: Option<CorrelationResult>,
    /// The same correlation over the whole dataset.
    pub all_correlation: Option<CorrelationResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub regime: Regime,
    pub seed: u64,
    /// Mean total loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean total loss over the training set after the last epoch.
    pub final_loss: f64,
    pub epochs: Vec<EpochReport>,
    /// Row indices used for training, in the shuffled order.
    pub train_indices: Vec<usize>,
    /// Row indices of the evaluation set, ascending.
    pub eval_indices: Vec<usize>,
    /// Per-image reconstruction loss after the last epoch, input order.
    pub final_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

fn check_dims(model: &SaeModel, reps: &Matrix) -> Result<()> {
    if reps.cols() != model.input_dim() {
        return Err(Error::LengthMismatch {
            expected: model.input_dim(),
            actual: reps.cols(),
        });
    }
    Ok(())
}

fn evaluate(model: &SaeModel, reps: &Matrix, sparsity_weight: f64) -> Result<Vec<LossBreakdown>> {
    check_dims(model, reps)?;
    reps.iter_rows().map(|x| model.loss(x, sparsity_weight)).collect()
}

fn mean_total(losses: &[LossBreakdown], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| losses[i].total).sum::<f64>() / idx.len() as f64
}

fn normalisation_warnings(reps: &Matrix) -> Vec<String> {
    let n = reps.rows() as f64;
    let mut out = Vec::new();
    for c in 0..reps.cols() {
        let col = reps.column(c);
        let mean = col.iter().sum::<f64>() / n;
        let std = libm::sqrt(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        if mean.abs() > NORMALISATION_TOL || (std - 1.0).abs() > NORMALISATION_TOL {
            out.push(format!(
                "input dimension {c} is not z-scored (mean {mean:.3e}, std {std:.3e})"
            ));
            // one line is enough to flag the problem
            break;
        }
    }
    out
}

/// Trains an autoencoder on z-scored `representations` (one row per image)
/// and tracks how its per-image reconstruction loss correlates with
/// `memorability` after every epoch.
///
/// Deterministic for a fixed seed: initialisation, the split shuffle and the
/// per-epoch minibatch order all draw from one ChaCha8 stream.
pub fn train(config: &SaeConfig, representations: &Matrix, memorability: &[f64]) -> Result<(SaeModel, TrainReport)> {
    config.validate()?;
    let n = representations.rows();
    if representations.cols() != config.input_dim {
        return Err(Error::LengthMismatch {
            expected: config.input_dim,
            actual: representations.cols(),
        });
    }
    if memorability.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: memorability.len(),
        });
    }
    if representations.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representations"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SaeModel::init(config.input_dim, config.hidden_dim, &mut rng);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (mut train_idx, mut eval_idx) = match config.regime {
        Regime::Split => {
            let cut = n * 4 / 5;
            (order[..cut].to_vec(), order[cut..].to_vec())
        }
        Regime::Single => (order, (0..n).collect()),
    };
    eval_idx.sort_unstable();
    if train_idx.len() < config.batch_size || train_idx.is_empty() {
        return Err(Error::TooFewSamples {
            min: config.batch_size.max(1),
            actual: train_idx.len(),
        });
    }

    let warnings = normalisation_warnings(representations);
    let initial_loss = mean_total(&evaluate(&model, representations, config.sparsity_weight)?, &train_idx);

    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.params().len());
    let mut grad = vec![0.0; model.params().len()];
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut losses = Vec::new();

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut running = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let l = model.accumulate_gradient(representations.row(i), config.sparsity_weight, scale, &mut grad)?;
                running += l.total;
            }
            optimizer.step(model.params_mut(), &grad);
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("autoencoder parameters after update"));
        }

        losses = evaluate(&model, representations, config.sparsity_weight)?;
        let recon: Vec<f64> = losses.iter().map(|l| l.recon).collect();
        let eval_recon: Vec<f64> = eval_idx.iter().map(|&i| recon[i]).collect();
        let eval_mem: Vec<f64> = eval_idx.iter().map(|&i| memorability[i]).collect();
        epochs.push(EpochReport {
            epoch,
            train_loss: running / train_idx.len() as f64,
            val_loss: (config.regime == Regime::Split && !eval_idx.is_empty())
                .then(|| mean_total(&losses, &eval_idx)),
            eval_correlation: spearman(&eval_recon, &eval_mem).ok(),
            all_correlation: spearman(&recon, memorability).ok(),
        });
    }

    let final_loss = mean_total(&losses, &train_idx);
    let report = TrainReport {
        regime: config.regime,
        seed: config.seed,
        initial_loss,
        final_loss,
        epochs,
        train_indices: train_idx,
        eval_indices: eval_idx,
        final_losses: losses.iter().map(|l| l.recon).collect(),
        warnings,
    };
    Ok((model, report))
}

/// Per-image reconstruction loss (sum of squared errors), input order.
pub fn score(model: &SaeModel, representations: &Matrix) -> Result<Vec<f64>> {
    Ok(evaluate(model, representations, 0.0)?.into_iter().map(|l| l.recon).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    /// Bottleneck activations, one row per image.
    pub latents: Matrix,
    /// Per-image mean of `|z_h|`.
    pub mean_abs: Vec<f64>,
}

pub fn latent_stats(model: &SaeModel, representations: &Matrix) -> Result<LatentStats> {
    check_dims(model, representations)?;
    let h = model.hidden_dim();
    let mut latents = Vec::with_capacity(representations.rows() * h);
    let mut mean_abs = Vec::with_capacity(representations.rows());
    for x in representations.iter_rows() {
        let z = model.encode(x)?;
        mean_abs.push(z.iter().map(|v| v.abs()).sum::<f64>() / h as f64);
        latents.extend(z);
    }
    Ok(LatentStats {
        latents: Matrix::from_vec(representations.rows(), h, latents)?,
        mean_abs,
    })
}
