//! Stochastic waveform- and spectrogram-level training augmentations.
//!
//! Pipeline order is fixed: cyclic roll, multi-label mixup, background
//! noise, colored noise, gain, no-call substitution, then (post-frontend)
//! frequency and time masks. Labels only change via union (mixup) or
//! zeroing (no-call). Every draw comes from a per-sample RNG stream seeded
//! by (global seed, sample index), so the pipeline is reproducible and
//! parallel across samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::frontend::{Spectrogram, Waveform};
use crate::{Error, Result};

/// Waveform or spectrogram sample with a multi-hot label vector.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub waveform: Waveform,
    /// Multi-hot over C classes; all-zero only for no-call clips.
    pub labels: Vec<u8>,
    pub source_id: String,
}

/// Per-augmentation probabilities and parameter ranges.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub mixup_prob: f64,
    pub mixup_min_snr: f64,
    pub mixup_max_snr: f64,
    pub mixup_max_samples: usize,
    pub background_prob: f64,
    pub background_min_snr: f64,
    pub background_max_snr: f64,
    pub colored_prob: f64,
    pub colored_min_snr: f64,
    pub colored_max_snr: f64,
    pub colored_min_decay: f64,
    pub colored_max_decay: f64,
    pub gain_prob: f64,
    pub min_gain_db: f64,
    pub max_gain_db: f64,
    pub no_call_prob: f64,
    pub freq_mask_prob: f64,
    pub freq_mask_param: usize,
    pub time_mask_prob: f64,
    pub time_mask_param: usize,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mixup_prob: 0.9,
            mixup_min_snr: 2.0,
            mixup_max_snr: 30.0,
            mixup_max_samples: 3,
            background_prob: 0.5,
            background_min_snr: 3.0,
            background_max_snr: 30.0,
            colored_prob: 0.2,
            colored_min_snr: 3.0,
            colored_max_snr: 30.0,
            colored_min_decay: -2.0,
            colored_max_decay: 2.0,
            gain_prob: 0.2,
            min_gain_db: -18.0,
            max_gain_db: 6.0,
            no_call_prob: 0.075,
            freq_mask_prob: 0.3,
            freq_mask_param: 50,
            time_mask_prob: 0.3,
            time_mask_param: 100,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.mixup_prob,
            self.background_prob,
            self.colored_prob,
            self.gain_prob,
            self.no_call_prob,
            self.freq_mask_prob,
            self.time_mask_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "augmentation probabilities must lie in [0,1]".to_string(),
            ));
        }
        for (lo, hi) in [
            (self.mixup_min_snr, self.mixup_max_snr),
            (self.background_min_snr, self.background_max_snr),
            (self.colored_min_snr, self.colored_max_snr),
        ] {
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "min-snr {lo} exceeds max-snr {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic per-sample RNG stream from (global seed, sample index).
pub fn sample_rng(global_seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&global_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&sample_index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn rms(samples: &[f32]) -> f64 {
    let s: f64 = samples.iter().map(|&v| v as f64 * v as f64).sum();
    (s / samples.len() as f64).sqrt()
}

/// Tiles or crops `src` to exactly `len` samples.
fn fit_length(src: &[f32], len: usize) -> Vec<f32> {
    src.iter().cycle().take(len).copied().collect()
}

/// Adds `added` to `base` at the given SNR (dB, base relative to added).
/// Returns false (no-op) when the added signal is silent.
fn add_at_snr(base: &mut [f32], added: &[f32], snr_db: f64) -> bool {
    let rms_added = rms(added);
    if rms_added == 0.0 {
        return false;
    }
    let rms_base = rms(base);
    let scale = rms_base / (rms_added * 10f64.powf(snr_db / 20.0));
    let fitted = fit_length(added, base.len());
    for (b, a) in base.iter_mut().zip(fitted) {
        *b += (a as f64 * scale) as f32;
    }
    true
}

/// Rotates the waveform start by a uniform random offset.
pub fn cyclic_roll(clip: &mut LabeledClip, rng: &mut impl Rng) {
    let n = clip.waveform.samples.len();
    let offset = rng.random_range(0..n);
    clip.waveform.samples.rotate_right(offset);
}

/// Waveform mixup: with the configured probability, mixes one or two extra
/// clips from the pool at a random SNR and unions the labels.
pub fn mixup_multilabel(
    clip: &mut LabeledClip,
    pool: &[LabeledClip],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) {
    if pool.is_empty() || rng.random::<f64>() >= cfg.mixup_prob {
        return;
    }
    // max-samples=3 bounds the total; uniform over {2, 3} constituents.
    let extra = if rng.random::<f64>() < 0.5 { 1 } else { 2 };
    let extra = extra.min(cfg.mixup_max_samples.saturating_sub(1));
    for _ in 0..extra {
        let other = &pool[rng.random_range(0..pool.len())];
        let snr = rng.random_range(cfg.mixup_min_snr..=cfg.mixup_max_snr);
        if add_at_snr(&mut clip.waveform.samples, &other.waveform.samples, snr) {
            for (l, o) in clip.labels.iter_mut().zip(&other.labels) {
                *l |= o;
            }
        }
    }
}

/// Adds a clip from the noise pool at a random SNR; labels unchanged.
pub fn add_background_noise(
    clip: &mut LabeledClip,
    noise_pool: &[Waveform],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) {
    if noise_pool.is_empty() || rng.random::<f64>() >= cfg.background_prob {
        return;
    }
    let noise = &noise_pool[rng.random_range(0..noise_pool.len())];
    let snr = rng.random_range(cfg.background_min_snr..=cfg.background_max_snr);
    add_at_snr(&mut clip.waveform.samples, &noise.samples, snr);
}

/// Synthesizes noise with power spectral density proportional to f^decay.
pub fn colored_noise(n: usize, decay: f64, rng: &mut impl Rng) -> Vec<f32> {
    let mut spectrum = vec![Complex::new(0.0f64, 0.0); n];
    for k in 1..=n / 2 {
        let amp = (k as f64).powf(decay / 2.0);
        let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        let c = Complex::from_polar(amp, phase);
        spectrum[k] = c;
        if k != n - k {
            spectrum[n - k] = c.conj();
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / n as f64;
    spectrum.iter().map(|c| (c.re * scale) as f32).collect()
}

/// Adds synthesized colored noise at a random SNR; labels unchanged.
pub fn add_colored_noise(clip: &mut LabeledClip, cfg: &AugmentConfig, rng: &mut impl Rng) {
    if rng.random::<f64>() >= cfg.colored_prob {
        return;
    }
    let decay = rng.random_range(cfg.colored_min_decay..=cfg.colored_max_decay);
    let snr = rng.random_range(cfg.colored_min_snr..=cfg.colored_max_snr);
    let noise = colored_noise(clip.waveform.samples.len(), decay, rng);
    add_at_snr(&mut clip.waveform.samples, &noise, snr);
}

/// Random gain in dB; labels unchanged.
pub fn gain(clip: &mut LabeledClip, cfg: &AugmentConfig, rng: &mut impl Rng) {
    if rng.random::<f64>() >= cfg.gain_prob {
        return;
    }
    let g_db = rng.random_range(cfg.min_gain_db..=cfg.max_gain_db);
    let g = 10f64.powf(g_db / 20.0);
    for v in &mut clip.waveform.samples {
        *v = (*v as f64 * g) as f32;
    }
}

/// With the configured probability, substitutes the clip with a
/// background-only clip and zeroes the labels.
pub fn no_call_mix(
    clip: &mut LabeledClip,
    nocall_pool: &[Waveform],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) {
    if nocall_pool.is_empty() || rng.random::<f64>() >= cfg.no_call_prob {
        return;
    }
    let src = &nocall_pool[rng.random_range(0..nocall_pool.len())];
    let len = clip.waveform.samples.len();
    clip.waveform.samples = fit_length(&src.samples, len);
    clip.labels.iter_mut().for_each(|l| *l = 0);
}

/// SpecAugment-style masks: independently with p each, zeroes a band of up
/// to `freq_mask_param` mel rows and up to `time_mask_param` frame columns.
pub fn spec_mask(spec: &mut Spectrogram, cfg: &AugmentConfig, rng: &mut impl Rng) {
    if rng.random::<f64>() < cfg.freq_mask_prob {
        let max_w = cfg.freq_mask_param.min(spec.n_mels);
        let width = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=spec.n_mels - width);
        for m in start..start + width {
            for t in 0..spec.frames {
                spec.values[m * spec.frames + t] = 0.0;
            }
        }
    }
    if rng.random::<f64>() < cfg.time_mask_prob {
        let max_w = cfg.time_mask_param.min(spec.frames);
        let width = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=spec.frames - width);
        for m in 0..spec.n_mels {
            for t in start..start + width {
                spec.values[m * spec.frames + t] = 0.0;
            }
        }
    }
}

/// Pools of auxiliary audio for the waveform-level stages.
#[derive(Debug, Clone, Default)]
pub struct AugmentPools {
    pub mixup: Vec<LabeledClip>,
    pub background: Vec<Waveform>,
    pub nocall: Vec<Waveform>,
}

/// Full waveform-level pipeline in the fixed stage order.
pub fn augment_waveform(
    clip: &mut LabeledClip,
    pools: &AugmentPools,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) {
    cyclic_roll(clip, rng);
    mixup_multilabel(clip, &pools.mixup, cfg, rng);
    add_background_noise(clip, &pools.background, cfg, rng);
    add_colored_noise(clip, cfg, rng);
    gain(clip, cfg, rng);
    no_call_mix(clip, &pools.nocall, cfg, rng);
}
