//! Joint optimisation of the embedding and the prior.
//!
//! The prior is fitted to the posterior sample `z` *after* it has been
//! detached from the tape, so the prior's loss never moves the VAE.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{standard_normal_nll, SegmentBatch, SkillConfig, SkillError, SkillModel};
use crate::autodiff::{clip_grad_norm, Adam, AdamConfig, Tape, Tensor};
use crate::dataset::{SkillDataset, SkillSegment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm cap per network; `0` disables clipping.
    pub grad_clip: f64,
    /// Fraction of trajectories (not segments) held out for evaluation.
    pub held_out_fraction: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            batch_size: 128,
            lr: 1e-3,
            grad_clip: 0.0,
            held_out_fraction: 0.1,
            log_every: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step: usize,
    /// Embedding loss (reconstruction + β·KL).
    pub embed: f64,
    pub recon: f64,
    pub kl: f64,
    /// Prior negative log-likelihood.
    pub prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub segments: usize,
    /// Mean per-step squared action error when decoding `μ_z`.
    pub recon_mse: f64,
    pub prior_nll: f64,
    /// NLL of the same latents under `N(0, I)`.
    pub normal_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<TrainLog>,
    pub held_out: Option<HeldOutReport>,
}

pub struct SkillGradients {
    pub vae: Vec<Tensor>,
    pub flow: Vec<Tensor>,
    pub log: TrainLog,
}

/// Gradients of `ℒ_embed (+ ℒ_prior)` for one batch. With `include_prior =
/// false` the flow gradients are all zero.
pub fn skill_gradients(
    model: &SkillModel,
    batch: &SegmentBatch,
    eps: &Tensor,
    include_prior: bool,
) -> Result<SkillGradients, SkillError> {
    let mut tape = Tape::new();
    let vp = model.vae.params.bind(&mut tape);
    let fp = model.flow.params.bind(&mut tape);
    let terms = model.vae.loss_tape(&mut tape, &vp, batch, eps, model.config.beta)?;
    let z = tape.detach(terms.z);
    let s0 = tape.constant_ref(batch.s0());
    let prior = model.flow.nll_tape(&mut tape, &fp, z, s0)?;
    let total = if include_prior { tape.add(terms.loss, prior)? } else { terms.loss };
    let log = TrainLog {
        step: 0,
        embed: tape.value(terms.loss).item(),
        recon: tape.value(terms.recon).item(),
        kl: tape.value(terms.kl).item(),
        prior: tape.value(prior).item(),
    };
    let grads = tape.backward(total)?;
    Ok(SkillGradients {
        vae: vp.grads(&grads),
        flow: fp.grads(&grads),
        log,
    })
}

/// Splits segment indices into `(train, held_out)` by trajectory id.
pub fn split_held_out(segments: &[SkillSegment], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let ids: BTreeSet<u64> = segments.iter().map(|s| s.trajectory).collect();
    let mut ids: Vec<u64> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x4e1d));
    let k = ((ids.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    // always keep at least one trajectory for training
    let k = k.min(ids.len().saturating_sub(1));
    let held: BTreeSet<u64> = ids[..k].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in segments.iter().enumerate() {
        if held.contains(&s.trajectory) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

fn normal_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(rows, cols, data).expect("shape")
}

/// Evaluates reconstruction and prior likelihood on `indices`.
pub fn evaluate(model: &SkillModel, segments: &[SkillSegment], indices: &[usize]) -> Result<HeldOutReport, SkillError> {
    let mut sq = 0.0;
    let mut prior = 0.0;
    let mut normal = 0.0;
    let mut steps = 0usize;
    for chunk in indices.chunks(256) {
        let segs: Vec<&SkillSegment> = chunk.iter().map(|&i| &segments[i]).collect();
        let batch = SegmentBatch::new(&segs, &model.stats, model.horizon())?;
        let (mu, _) = model.vae.encode_batch(&batch)?;
        for (s, a) in batch.states.iter().zip(&batch.actions) {
            let pred = model.vae.decode_batch(&mu, s)?;
            sq += pred.data().iter().zip(a.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
            steps += a.rows();
        }
        prior += model.flow.nll_rows(&mu, batch.s0())?.iter().sum::<f64>();
        normal += standard_normal_nll(&mu).iter().sum::<f64>();
    }
    let n = indices.len().max(1) as f64;
    Ok(HeldOutReport {
        segments: indices.len(),
        recon_mse: sq / (steps.max(1) * model.vae.decoder.output_dim()) as f64,
        prior_nll: prior / n,
        normal_nll: normal / n,
    })
}

/// Trains embedding and prior together from step 0.
pub fn joint_train(
    dataset: &SkillDataset,
    config: &SkillConfig,
    train: &TrainConfig,
) -> Result<(SkillModel, TrainReport), SkillError> {
    joint_train_with(dataset, config, train, |_| {})
}

/// [`joint_train`] with a callback invoked on every logged step.
pub fn joint_train_with<F: FnMut(&TrainLog)>(
    dataset: &SkillDataset,
    config: &SkillConfig,
    train: &TrainConfig,
    mut on_log: F,
) -> Result<(SkillModel, TrainReport), SkillError> {
    if dataset.is_empty() {
        return Err(SkillError::EmptyDataset);
    }
    if dataset.horizon != config.horizon {
        return Err(SkillError::Horizon {
            found: dataset.horizon,
            expected: config.horizon,
        });
    }
    if train.batch_size == 0 {
        return Err(SkillError::Config("batch_size must be >= 1".into()));
    }
    let mut model = SkillModel::new(config.clone(), dataset.stats.clone(), dataset.content_hash())?;
    let (train_idx, held_idx) = split_held_out(&dataset.segments, train.held_out_fraction, train.seed);
    let adam = AdamConfig::with_lr(train.lr);
    let mut opt_vae = Adam::new(&model.vae.params, adam);
    let mut opt_flow = Adam::new(&model.flow.params, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut history = Vec::new();
    for step in 0..train.steps {
        let picks: Vec<usize> = (0..train.batch_size)
            .map(|_| train_idx[rng.random_range(0..train_idx.len())])
            .collect();
        let segs: Vec<&SkillSegment> = picks.iter().map(|&i| &dataset.segments[i]).collect();
        let batch = SegmentBatch::new(&segs, &model.stats, config.horizon)?;
        let eps = normal_tensor(&mut rng, picks.len(), config.z_dim);
        let mut g = skill_gradients(&model, &batch, &eps, true)?;
        let finite = [g.log.embed, g.log.prior, g.log.kl].iter().all(|v| v.is_finite());
        if !finite {
            return Err(SkillError::NonFiniteLoss {
                step,
                embed: g.log.embed,
                prior: g.log.prior,
                kl: g.log.kl,
                segments: picks.into_iter().take(16).collect(),
            });
        }
        if train.grad_clip > 0.0 {
            clip_grad_norm(&mut g.vae, train.grad_clip);
            clip_grad_norm(&mut g.flow, train.grad_clip);
        }
        opt_vae.step(&mut model.vae.params, &g.vae)?;
        opt_flow.step(&mut model.flow.params, &g.flow)?;
        if train.log_every > 0 && (step % train.log_every == 0 || step + 1 == train.steps) {
            let log = TrainLog { step, ..g.log };
            on_log(&log);
            history.push(log);
        }
    }
    let held_out = if held_idx.is_empty() {
        None
    } else {
        Some(evaluate(&model, &dataset.segments, &held_idx)?)
    };
    Ok((model, TrainReport { history, held_out }))
}

/// Fits only the flow to explicit `(z, s)` pairs; used for density-estimation
/// checks independent of the VAE.
pub fn fit_flow(
    model: &mut SkillModel,
    z: &Tensor,
    s: &Tensor,
    train: &TrainConfig,
) -> Result<Vec<f64>, SkillError> {
    let n = z.rows();
    if n == 0 {
        return Err(SkillError::EmptyDataset);
    }
    let mut opt = Adam::new(&model.flow.params, AdamConfig::with_lr(train.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut losses = Vec::new();
    for step in 0..train.steps {
        let picks: Vec<usize> = (0..train.batch_size).map(|_| rng.random_range(0..n)).collect();
        let zb = Tensor::from_rows(&picks.iter().map(|&i| z.row_slice(i)).collect::<Vec<_>>())?;
        let sb = Tensor::from_rows(&picks.iter().map(|&i| s.row_slice(i)).collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let fp = model.flow.params.bind(&mut tape);
        let zv = tape.constant_ref(&zb);
        let sv = tape.constant_ref(&sb);
        let nll = model.flow.nll_tape(&mut tape, &fp, zv, sv)?;
        let loss = tape.value(nll).item();
        if !loss.is_finite() {
            return Err(SkillError::NonFiniteLoss {
                step,
                embed: 0.0,
                prior: loss,
                kl: 0.0,
                segments: picks.into_iter().take(16).collect(),
            });
        }
        let grads = tape.backward(nll)?;
        let mut g = fp.grads(&grads);
        drop(tape);
        if train.grad_clip > 0.0 {
            clip_grad_norm(&mut g, train.grad_clip);
        }
        opt.step(&mut model.flow.params, &g)?;
        if train.log_every > 0 && step % train.log_every == 0 {
            losses.push(loss);
        }
    }
    Ok(losses)
}
