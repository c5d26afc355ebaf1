//! Deterministic mini-batch training of probe heads on frozen feature
//! maps: AdamW with decoupled weight decay (skipped for biases), a
//! separate prototype learning rate, global gradient clipping, per-step
//! cosine annealing to zero, and a non-negativity projection on the
//! prototype head weights after every step.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::sample_rng;
use crate::featmap::FeatureMap;
use crate::metrics::{evaluate_all, EvalReport, ScoreMatrix};
use crate::ndgrad::{Tape, Tensor};
use crate::probes::{
    asymmetric_loss, orthogonality_loss, probe_batch_logits, probe_leaves, Probe, DEFAULT_CLIP,
    DEFAULT_GAMMA_NEG, DEFAULT_GAMMA_POS,
};
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub prototype_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global L2 gradient-norm ceiling.
    pub grad_clip: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub clip: f64,
    pub orthogonality_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            prototype_lr: 4e-2,
            weight_decay: 3e-4,
            epochs: 30,
            batch_size: 128,
            grad_clip: 2.0,
            gamma_pos: DEFAULT_GAMMA_POS,
            gamma_neg: DEFAULT_GAMMA_NEG,
            clip: DEFAULT_CLIP,
            orthogonality_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Few-shot recipe: higher learning rate, more epochs.
    pub fn fewshot() -> Self {
        Self {
            lr: 4e-4,
            epochs: 50,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.prototype_lr <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".to_string(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Stable hash of every field, used to tie run records to configs.
    pub fn hash(&self) -> String {
        let repr = format!(
            "lr={:e} proto_lr={:e} wd={:e} epochs={} batch={} clip={:e} gp={:e} gn={:e} shift={:e} orth={:e} seed={}",
            self.lr,
            self.prototype_lr,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.grad_clip,
            self.gamma_pos,
            self.gamma_neg,
            self.clip,
            self.orthogonality_weight,
            self.seed
        );
        format!("{:016x}", fnv1a(repr.as_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One training sample: a frozen feature map and its multi-hot labels.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub fm: FeatureMap,
    pub labels: Vec<u8>,
}

/// Per-run provenance: losses, optional validation mAP per epoch, timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub epoch_loss: Vec<f64>,
    pub val_map: Vec<Option<f64>>,
    pub wall_time_s: f64,
}

/// Cosine annealing from `lr` at step 0 to exactly 0 at the last step.
pub fn cosine_lr(lr: f64, step: usize, total_steps: usize) -> f64 {
    let denom = total_steps.saturating_sub(1).max(1) as f64;
    lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / denom).cos())
}

/// Scales gradients in place so their global L2 norm is at most `clip`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Tensor], clip: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let s = clip / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Trains `probe` in place. Deterministic: the (seed, config, data order)
/// triple fixes the entire parameter trajectory.
pub fn train_probe(
    probe: &mut Probe,
    data: &[TrainSample],
    val: Option<&[TrainSample]>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".to_string()));
    }
    let c = probe.classes();
    for s in data {
        if s.fm.d != probe.input_dim() || s.labels.len() != c {
            return Err(Error::ShapeMismatch {
                op: "train_probe",
                lhs: vec![s.fm.d, s.labels.len()],
                rhs: vec![probe.input_dim(), c],
            });
        }
    }
    let started = Instant::now();
    let meta = probe.param_meta();
    let mut m: Vec<Tensor> = probe.param_tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut v = m.clone();

    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut step = 0usize;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut val_map = Vec::with_capacity(cfg.epochs);

    let (proto_c, proto_j) = match probe {
        Probe::Proto(b) => (b.c, b.j),
        _ => (0, 0),
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, epoch as u64));
        let mut loss_sum = 0.0;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&FeatureMap> = chunk.iter().map(|&i| &data[i].fm).collect();
            let mut label_data = Vec::with_capacity(chunk.len() * c);
            for &i in chunk {
                label_data.extend(data[i].labels.iter().map(|&l| l as f64));
            }
            let labels = Tensor::new(&[chunk.len(), c], label_data)?;

            let tape = Tape::new();
            let vars = probe_leaves(&tape, probe);
            let logits = probe_batch_logits(&tape, probe, &vars, &batch)?;
            let mut loss = asymmetric_loss(&tape, logits, &labels, cfg.gamma_pos, cfg.gamma_neg, cfg.clip)?;
            if matches!(probe, Probe::Proto(_)) && cfg.orthogonality_weight != 0.0 {
                let orth = orthogonality_loss(&tape, vars.params[0], proto_c, proto_j)?;
                loss = loss.add(&orth.scale(cfg.orthogonality_weight))?;
            }
            let loss_val = loss.value().item();
            if !loss_val.is_finite() {
                return Err(Error::NanLoss { batch: epoch * batches_per_epoch + batch_idx });
            }
            loss_sum += loss_val * chunk.len() as f64;
            tape.backward(loss)?;

            let mut grads: Vec<Tensor> = vars
                .params
                .iter()
                .zip(probe.param_tensors())
                .map(|(var, t)| var.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            clip_gradients(&mut grads, cfg.grad_clip);

            let t = (step + 1) as f64;
            let bc1 = 1.0 - BETA1.powf(t);
            let bc2 = 1.0 - BETA2.powf(t);
            for (((param, grad), meta), (m_t, v_t)) in probe
                .param_tensors_mut()
                .into_iter()
                .zip(&grads)
                .zip(&meta)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let base = if meta.prototype { cfg.prototype_lr } else { cfg.lr };
                let lr_t = cosine_lr(base, step, total_steps);
                for (((p, &g), mi), vi) in param
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(m_t.data_mut())
                    .zip(v_t.data_mut())
                {
                    *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                    *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                    if meta.decay {
                        *p -= lr_t * cfg.weight_decay * *p;
                    }
                    *p -= lr_t * (*mi / bc1) / ((*vi / bc2).sqrt() + EPS);
                    if meta.nonneg && *p < 0.0 {
                        *p = 0.0;
                    }
                }
            }
            step += 1;
        }

        epoch_loss.push(loss_sum / data.len() as f64);
        val_map.push(match val {
            Some(vs) if !vs.is_empty() => Some(evaluate(probe, vs)?.map),
            _ => None,
        });
    }

    Ok(RunRecord {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        epoch_loss,
        val_map,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Scores every sample with the frozen head and computes the full report.
pub fn evaluate(probe: &Probe, data: &[TrainSample]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".to_string()));
    }
    let c = probe.classes();
    let mut scores = Vec::with_capacity(data.len() * c);
    let mut labels = Vec::with_capacity(data.len() * c);
    for s in data {
        let logits = probe.logits(&s.fm)?;
        scores.extend(logits.iter().map(|&z| 1.0 / (1.0 + (-z).exp())));
        labels.extend_from_slice(&s.labels);
    }
    Ok(evaluate_all(&ScoreMatrix::new(data.len(), c, scores, labels)?))
}
