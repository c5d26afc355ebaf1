//! Probe heads over frozen feature maps: linear, MLP, attentive, and
//! prototypical, plus the asymmetric multi-label loss and the prototype
//! orthogonality regularizer.
//!
//! Each head exists in two forms: a pure forward pass on plain slices
//! (inference, oracles) and a tape-recorded forward (training, gradient
//! checks). Parameter declaration order is fixed and shared by the runtime
//! enumeration, the optimizer, and the BMPH checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::featmap::{global_average, FeatureMap};
use crate::ndgrad::{concat, Tape, Tensor, Var};
use crate::{Error, Result};

const BMPH_MAGIC: &[u8; 4] = b"BMPH";
pub const DEFAULT_HEADS: usize = 12;
pub const DEFAULT_J: usize = 20;

/// Asymmetric-loss defaults: the cited method's published values; the
/// source text for this pipeline does not fix them.
pub const DEFAULT_GAMMA_NEG: f64 = 4.0;
pub const DEFAULT_GAMMA_POS: f64 = 0.0;
pub const DEFAULT_CLIP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Linear,
    Mlp,
    Attentive,
    Proto,
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "mlp" => Ok(Self::Mlp),
            "attentive" => Ok(Self::Attentive),
            "proto" | "prototypical" => Ok(Self::Proto),
            other => Err(Error::InvalidArgument(format!("unknown probe kind {other:?}"))),
        }
    }
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Mlp => "mlp",
            Self::Attentive => "attentive",
            Self::Proto => "proto",
        }
    }
}

/// Closed-form learnable-parameter count per head kind.
pub fn param_count(kind: ProbeKind, d: u64, c: u64, h: u64, j: u64) -> u64 {
    match kind {
        ProbeKind::Linear => c * (d + 1),
        ProbeKind::Mlp => h * (d + 1) + c * (h + 1),
        ProbeKind::Attentive => 2 * d * d + (c + 1) * d + c,
        ProbeKind::Proto => c * (j * (d + 1) + 1),
    }
}

/// Classifier over global-average features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub c: usize,
    pub d: usize,
    pub weights: Tensor, // [C, D]
    pub bias: Tensor,    // [C]
}

/// One-hidden-layer GELU classifier over global-average features.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub hidden_w: Tensor, // [H, D]
    pub hidden_b: Tensor, // [H]
    pub out_w: Tensor,    // [C, H]
    pub out_b: Tensor,    // [C]
}

/// Learned-query attention pooling over patch tokens, then a linear
/// classifier. Key/value projections are stored as per-head row blocks;
/// concatenated they form the full D×D matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveHead {
    pub c: usize,
    pub d: usize,
    pub heads: usize,
    pub query: Vec<Tensor>,      // heads × [dh]
    pub key_proj: Vec<Tensor>,   // heads × [dh, D]
    pub value_proj: Vec<Tensor>, // heads × [dh, D]
    pub cls_w: Tensor,           // [C, D]
    pub cls_b: Tensor,           // [C]
}

/// Per-class learnable prototypes scored by max-pooled cosine similarity
/// against every patch, combined by a per-class linear layer whose weights
/// stay non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub c: usize,
    pub d: usize,
    pub j: usize,
    pub focal: bool,
    pub prototypes: Tensor,   // [C·J, D]
    pub head_weights: Tensor, // [C, J]
    pub head_bias: Tensor,    // [C]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Linear(LinearHead),
    Mlp(MlpHead),
    Attentive(AttentiveHead),
    Proto(PrototypeBank),
}

/// Optimizer-facing attributes of one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct ParamMeta {
    /// Weight decay applies (false for all biases).
    pub decay: bool,
    /// Uses the prototype learning rate.
    pub prototype: bool,
    /// Clamped to >= 0 after every optimizer step.
    pub nonneg: bool,
}

const WEIGHT: ParamMeta = ParamMeta { decay: true, prototype: false, nonneg: false };
const BIAS: ParamMeta = ParamMeta { decay: false, prototype: false, nonneg: false };
const PROTOTYPES: ParamMeta = ParamMeta { decay: true, prototype: true, nonneg: false };
const PROTO_WEIGHTS: ParamMeta = ParamMeta { decay: true, prototype: false, nonneg: true };

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * std)
        .collect();
    Tensor::new(shape, data).expect("count matches shape")
}

impl Probe {
    pub fn new_linear(c: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::Linear(LinearHead {
            c,
            d,
            weights: gaussian(&mut rng, &[c, d], 1.0 / (d as f64).sqrt()),
            bias: Tensor::zeros(&[c]),
        })
    }

    pub fn new_mlp(c: usize, d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::Mlp(MlpHead {
            c,
            d,
            h,
            hidden_w: gaussian(&mut rng, &[h, d], 1.0 / (d as f64).sqrt()),
            hidden_b: Tensor::zeros(&[h]),
            out_w: gaussian(&mut rng, &[c, h], 1.0 / (h as f64).sqrt()),
            out_b: Tensor::zeros(&[c]),
        })
    }

    pub fn new_attentive(c: usize, d: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding dim {d} is not divisible into {heads} heads"
            )));
        }
        let dh = d / heads;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (d as f64).sqrt();
        let query = (0..heads).map(|_| gaussian(&mut rng, &[dh], std)).collect();
        let key_proj = (0..heads).map(|_| gaussian(&mut rng, &[dh, d], std)).collect();
        let value_proj = (0..heads).map(|_| gaussian(&mut rng, &[dh, d], std)).collect();
        Ok(Self::Attentive(AttentiveHead {
            c,
            d,
            heads,
            query,
            key_proj,
            value_proj,
            cls_w: gaussian(&mut rng, &[c, d], std),
            cls_b: Tensor::zeros(&[c]),
        }))
    }

    /// Prototypes start random; the per-class linear layer starts with
    /// weights 1 and bias -2, so zero similarity maps to sigmoid(-2).
    pub fn new_proto(c: usize, d: usize, j: usize, focal: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::Proto(PrototypeBank {
            c,
            d,
            j,
            focal,
            prototypes: gaussian(&mut rng, &[c * j, d], 1.0),
            head_weights: Tensor::filled(&[c, j], 1.0),
            head_bias: Tensor::filled(&[c], -2.0),
        })
    }

    pub fn kind(&self) -> ProbeKind {
        match self {
            Self::Linear(_) => ProbeKind::Linear,
            Self::Mlp(_) => ProbeKind::Mlp,
            Self::Attentive(_) => ProbeKind::Attentive,
            Self::Proto(_) => ProbeKind::Proto,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Self::Linear(h) => h.c,
            Self::Mlp(h) => h.c,
            Self::Attentive(h) => h.c,
            Self::Proto(h) => h.c,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Linear(h) => h.d,
            Self::Mlp(h) => h.d,
            Self::Attentive(h) => h.d,
            Self::Proto(h) => h.d,
        }
    }

    /// Parameter tensors in declaration order.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        match self {
            Self::Linear(h) => vec![&h.weights, &h.bias],
            Self::Mlp(h) => vec![&h.hidden_w, &h.hidden_b, &h.out_w, &h.out_b],
            Self::Attentive(h) => {
                let mut out: Vec<&Tensor> = h.query.iter().collect();
                out.extend(h.key_proj.iter());
                out.extend(h.value_proj.iter());
                out.push(&h.cls_w);
                out.push(&h.cls_b);
                out
            }
            Self::Proto(h) => vec![&h.prototypes, &h.head_weights, &h.head_bias],
        }
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Self::Linear(h) => vec![&mut h.weights, &mut h.bias],
            Self::Mlp(h) => vec![&mut h.hidden_w, &mut h.hidden_b, &mut h.out_w, &mut h.out_b],
            Self::Attentive(h) => {
                let mut out: Vec<&mut Tensor> = h.query.iter_mut().collect();
                out.extend(h.key_proj.iter_mut());
                out.extend(h.value_proj.iter_mut());
                out.push(&mut h.cls_w);
                out.push(&mut h.cls_b);
                out
            }
            Self::Proto(h) => vec![&mut h.prototypes, &mut h.head_weights, &mut h.head_bias],
        }
    }

    /// Optimizer metadata, aligned with [`Probe::param_tensors`].
    pub fn param_meta(&self) -> Vec<ParamMeta> {
        match self {
            Self::Linear(_) => vec![WEIGHT, BIAS],
            Self::Mlp(_) => vec![WEIGHT, BIAS, WEIGHT, BIAS],
            Self::Attentive(h) => {
                let mut out = vec![WEIGHT; 3 * h.heads + 1];
                out.push(BIAS);
                out
            }
            Self::Proto(_) => vec![PROTOTYPES, PROTO_WEIGHTS, BIAS],
        }
    }

    /// Runtime enumeration of learnable scalars.
    pub fn num_params(&self) -> u64 {
        self.param_tensors().iter().map(|t| t.len() as u64).sum()
    }

    /// Pure inference forward: logits for one feature map.
    pub fn logits(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        if fm.d != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "probe logits",
                lhs: vec![fm.d],
                rhs: vec![self.input_dim()],
            });
        }
        Ok(match self {
            Self::Linear(h) => linear_forward(&global_average(fm), h),
            Self::Mlp(h) => mlp_forward(&global_average(fm), h),
            Self::Attentive(h) => attentive_forward(fm, h),
            Self::Proto(h) => proto_logits(&proto_similarities(fm, h)?, h),
        })
    }
}

pub fn linear_forward(vec: &[f64], head: &LinearHead) -> Vec<f64> {
    (0..head.c)
        .map(|c| {
            let row = &head.weights.data()[c * head.d..(c + 1) * head.d];
            row.iter().zip(vec).map(|(w, x)| w * x).sum::<f64>() + head.bias.data()[c]
        })
        .collect()
}

fn gelu_scalar(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    0.5 * x * (1.0 + (K * (x + A * x * x * x)).tanh())
}

pub fn mlp_forward(vec: &[f64], head: &MlpHead) -> Vec<f64> {
    let hidden: Vec<f64> = (0..head.h)
        .map(|i| {
            let row = &head.hidden_w.data()[i * head.d..(i + 1) * head.d];
            let z = row.iter().zip(vec).map(|(w, x)| w * x).sum::<f64>() + head.hidden_b.data()[i];
            gelu_scalar(z)
        })
        .collect();
    (0..head.c)
        .map(|c| {
            let row = &head.out_w.data()[c * head.h..(c + 1) * head.h];
            row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + head.out_b.data()[c]
        })
        .collect()
}

pub fn attentive_forward(fm: &FeatureMap, head: &AttentiveHead) -> Vec<f64> {
    let p = fm.n_patches();
    let dh = head.d / head.heads;
    let mut pooled = vec![0.0; head.d];
    for h in 0..head.heads {
        let q = head.query[h].data();
        let kp = head.key_proj[h].data();
        let vp = head.value_proj[h].data();
        let scale = 1.0 / (dh as f64).sqrt();
        let scores: Vec<f64> = (0..p)
            .map(|t| {
                let tok = fm.values[t * fm.d..(t + 1) * fm.d].iter();
                // q . (K_h tok), accumulated column-wise
                let mut acc = 0.0;
                for (col, &x) in tok.enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for r in 0..dh {
                        acc += q[r] * kp[r * head.d + col] * x;
                    }
                }
                acc * scale
            })
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (t, &e) in exps.iter().enumerate() {
            let w = e / z;
            let tok = &fm.values[t * fm.d..(t + 1) * fm.d];
            for r in 0..dh {
                let v: f64 = vp[r * head.d..(r + 1) * head.d]
                    .iter()
                    .zip(tok)
                    .map(|(a, b)| a * b)
                    .sum();
                pooled[h * dh + r] += w * v;
            }
        }
    }
    (0..head.c)
        .map(|c| {
            let row = &head.cls_w.data()[c * head.d..(c + 1) * head.d];
            row.iter().zip(&pooled).map(|(w, x)| w * x).sum::<f64>() + head.cls_b.data()[c]
        })
        .collect()
}

/// Unit-normalizes each patch embedding; exactly-zero vectors stay zero so
/// cosine against them is 0 and positive rescaling cancels exactly.
pub fn normalized_patches(fm: &FeatureMap) -> Vec<f64> {
    let mut out = fm.values.clone();
    for t in 0..fm.n_patches() {
        let row = &mut out[t * fm.d..(t + 1) * fm.d];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm != 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

/// Cosine-similarity scores per (class, prototype): max over all patch
/// positions, minus the mean over positions when focal similarity is on.
/// Row-major C×J.
pub fn proto_similarities(fm: &FeatureMap, bank: &PrototypeBank) -> Result<Vec<f64>> {
    if fm.d != bank.d {
        return Err(Error::ShapeMismatch {
            op: "proto_similarities",
            lhs: vec![fm.d],
            rhs: vec![bank.d],
        });
    }
    let patches = normalized_patches(fm);
    let p = fm.n_patches();
    let mut scores = Vec::with_capacity(bank.c * bank.j);
    for cj in 0..bank.c * bank.j {
        let proto = &bank.prototypes.data()[cj * bank.d..(cj + 1) * bank.d];
        let pnorm = proto.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut best = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for t in 0..p {
            let patch = &patches[t * fm.d..(t + 1) * fm.d];
            let dot: f64 = proto.iter().zip(patch).map(|(a, b)| a * b).sum();
            let cos = if pnorm == 0.0 { 0.0 } else { dot / pnorm };
            best = best.max(cos);
            sum += cos;
        }
        scores.push(if bank.focal { best - sum / p as f64 } else { best });
    }
    Ok(scores)
}

/// Per-class linear layer over that class's prototype scores only.
pub fn proto_logits(scores: &[f64], bank: &PrototypeBank) -> Vec<f64> {
    (0..bank.c)
        .map(|c| {
            let w = &bank.head_weights.data()[c * bank.j..(c + 1) * bank.j];
            let s = &scores[c * bank.j..(c + 1) * bank.j];
            w.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + bank.head_bias.data()[c]
        })
        .collect()
}

/// Parameter leaves recorded on a tape, declaration order.
pub struct ProbeVars<'t> {
    pub params: Vec<Var<'t>>,
}

pub fn probe_leaves<'t>(tape: &'t Tape, probe: &Probe) -> ProbeVars<'t> {
    ProbeVars {
        params: probe
            .param_tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect(),
    }
}

fn transposed_const<'t>(tape: &'t Tape, rows: usize, cols: usize, data: &[f64]) -> Var<'t> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    tape.constant(Tensor::new(&[cols, rows], out).expect("count"))
}

/// Recorded batch forward; returns [B, C] logits differentiable in the
/// probe parameters. Inputs are constants (the encoder is frozen).
pub fn probe_batch_logits<'t>(
    tape: &'t Tape,
    probe: &Probe,
    vars: &ProbeVars<'t>,
    batch: &[&FeatureMap],
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".to_string()));
    }
    let b = batch.len();
    match probe {
        Probe::Linear(h) => {
            let x = pooled_const(tape, batch);
            let logits = x.matmul(&vars.params[0].transpose()?)?;
            logits.add(&vars.params[1].broadcast(&[b, h.c], 1)?)
        }
        Probe::Mlp(h) => {
            let x = pooled_const(tape, batch);
            let hidden = x
                .matmul(&vars.params[0].transpose()?)?
                .add(&vars.params[1].broadcast(&[b, h.h], 1)?)?
                .gelu();
            let logits = hidden.matmul(&vars.params[2].transpose()?)?;
            logits.add(&vars.params[3].broadcast(&[b, h.c], 1)?)
        }
        Probe::Attentive(h) => {
            let nh = h.heads;
            let dh = h.d / nh;
            let cls_wt = vars.params[3 * nh].transpose()?;
            let cls_b = vars.params[3 * nh + 1].reshape(&[1, h.c])?;
            let mut rows = Vec::with_capacity(b);
            for fm in batch {
                let tokens = tape.constant(Tensor::new(&[fm.n_patches(), fm.d], fm.values.clone())?);
                let mut parts = Vec::with_capacity(nh);
                for head in 0..nh {
                    let q = vars.params[head].reshape(&[dh, 1])?;
                    let k = tokens.matmul(&vars.params[nh + head].transpose()?)?;
                    let weights = k
                        .matmul(&q)?
                        .scale(1.0 / (dh as f64).sqrt())
                        .softmax(0)?;
                    let v = tokens.matmul(&vars.params[2 * nh + head].transpose()?)?;
                    parts.push(weights.transpose()?.matmul(&v)?); // [1, dh]
                }
                let pooled = concat(1, &parts)?;
                rows.push(pooled.matmul(&cls_wt)?.add(&cls_b)?);
            }
            concat(0, &rows)
        }
        Probe::Proto(h) => {
            let protos = vars.params[0];
            let norms = protos.l2_norm_last()?;
            let phat = protos.div(&norms.broadcast(&[h.c * h.j, h.d], 0)?)?;
            let w = vars.params[1];
            let bias = vars.params[2];
            let mut rows = Vec::with_capacity(b);
            for fm in batch {
                let p = fm.n_patches();
                let fhat_t = transposed_const(tape, p, fm.d, &normalized_patches(fm));
                let cos = phat.matmul(&fhat_t)?; // [C·J, P]
                let (mx, _) = cos.max_axis(1)?;
                let scores = if h.focal { mx.sub(&cos.mean_axis(1)?)? } else { mx };
                let z = scores
                    .reshape(&[h.c, h.j])?
                    .mul(&w)?
                    .sum_axis(1)?
                    .add(&bias)?;
                rows.push(z.reshape(&[1, h.c])?);
            }
            concat(0, &rows)
        }
    }
}

fn pooled_const<'t>(tape: &'t Tape, batch: &[&FeatureMap]) -> Var<'t> {
    let d = batch[0].d;
    let mut data = Vec::with_capacity(batch.len() * d);
    for fm in batch {
        data.extend(global_average(fm));
    }
    tape.constant(Tensor::new(&[batch.len(), d], data).expect("count"))
}

/// Asymmetric multi-label loss on recorded logits:
/// `-mean[ y (1-p)^g+ log p + (1-y) p_m^g- log(1-p_m) ]` with
/// `p_m = max(p - clip, 0)`, averaged over every (sample, class) entry.
pub fn asymmetric_loss<'t>(
    tape: &'t Tape,
    logits: Var<'t>,
    labels: &Tensor,
    gamma_pos: f64,
    gamma_neg: f64,
    clip: f64,
) -> Result<Var<'t>> {
    if logits.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "asymmetric_loss",
            lhs: logits.shape(),
            rhs: labels.shape().to_vec(),
        });
    }
    let n = labels.len() as f64;
    let y = tape.constant(labels.clone());
    let one_minus_y = y.scale(-1.0).add_scalar(1.0);
    let p = logits.sigmoid();
    let one_minus_p = p.scale(-1.0).add_scalar(1.0);
    let pos = y.mul(&one_minus_p.powf(gamma_pos))?.mul(&p.log())?;
    let pm = p.add_scalar(-clip).relu();
    let one_minus_pm = pm.scale(-1.0).add_scalar(1.0);
    let neg = one_minus_y.mul(&pm.powf(gamma_neg))?.mul(&one_minus_pm.log())?;
    Ok(pos.add(&neg)?.sum_all()?.scale(-1.0 / n))
}

/// Mean over classes of the squared Frobenius distance between each
/// class's row-normalized prototype Gram matrix and the identity.
pub fn orthogonality_loss<'t>(
    tape: &'t Tape,
    protos: Var<'t>,
    c: usize,
    j: usize,
) -> Result<Var<'t>> {
    let norms = protos.l2_norm_last()?;
    let phat = protos.div(&norms.broadcast(&[c * j, protos.shape()[1]], 0)?)?;
    let gram = phat.matmul(&phat.transpose()?)?; // [C·J, C·J]
    let n = c * j;
    let mut identity = vec![0.0; n * n];
    let mut mask = vec![0.0; n * n];
    for a in 0..n {
        identity[a * n + a] = 1.0;
        for b in 0..n {
            if a / j == b / j {
                mask[a * n + b] = 1.0;
            }
        }
    }
    let eye = tape.constant(Tensor::new(&[n, n], identity)?);
    let block = tape.constant(Tensor::new(&[n, n], mask)?);
    Ok(gram
        .sub(&eye)?
        .mul(&block)?
        .square()
        .sum_all()?
        .scale(1.0 / c as f64))
}

/// Writes a head checkpoint: magic, kind byte, dims, then every parameter
/// as little-endian f64 in declaration order.
pub fn write_head<P: AsRef<Path>>(path: P, probe: &Probe) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BMPH_MAGIC)?;
    match probe {
        Probe::Linear(h) => {
            w.write_u8(0)?;
            w.write_u32::<LittleEndian>(h.c as u32)?;
            w.write_u32::<LittleEndian>(h.d as u32)?;
        }
        Probe::Mlp(h) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(h.c as u32)?;
            w.write_u32::<LittleEndian>(h.d as u32)?;
            w.write_u32::<LittleEndian>(h.h as u32)?;
        }
        Probe::Attentive(h) => {
            w.write_u8(2)?;
            w.write_u32::<LittleEndian>(h.c as u32)?;
            w.write_u32::<LittleEndian>(h.d as u32)?;
            w.write_u32::<LittleEndian>(h.heads as u32)?;
        }
        Probe::Proto(h) => {
            w.write_u8(3)?;
            w.write_u32::<LittleEndian>(h.c as u32)?;
            w.write_u32::<LittleEndian>(h.d as u32)?;
            w.write_u32::<LittleEndian>(h.j as u32)?;
            w.write_u8(h.focal as u8)?;
        }
    }
    for t in probe.param_tensors() {
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_head<P: AsRef<Path>>(path: P) -> Result<Probe> {
    let mut r = BufReader::new(File::open(path)?);
    let trunc = || Error::Format("truncated head checkpoint".to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| trunc())?;
    if &magic != BMPH_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected BMPH")));
    }
    let kind = r.read_u8().map_err(|_| trunc())?;
    let dim = |r: &mut BufReader<File>| -> Result<usize> {
        Ok(r.read_u32::<LittleEndian>().map_err(|_| trunc())? as usize)
    };
    let mut probe = match kind {
        0 => {
            let (c, d) = (dim(&mut r)?, dim(&mut r)?);
            Probe::new_linear(c, d, 0)
        }
        1 => {
            let (c, d, h) = (dim(&mut r)?, dim(&mut r)?, dim(&mut r)?);
            Probe::new_mlp(c, d, h, 0)
        }
        2 => {
            let (c, d, heads) = (dim(&mut r)?, dim(&mut r)?, dim(&mut r)?);
            Probe::new_attentive(c, d, heads, 0)?
        }
        3 => {
            let (c, d, j) = (dim(&mut r)?, dim(&mut r)?, dim(&mut r)?);
            let focal = r.read_u8().map_err(|_| trunc())? != 0;
            Probe::new_proto(c, d, j, focal, 0)
        }
        other => return Err(Error::Format(format!("unknown head kind byte {other}"))),
    };
    for t in probe.param_tensors_mut() {
        for v in t.data_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(|_| trunc())?;
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after head checkpoint".to_string()));
    }
    Ok(probe)
}
