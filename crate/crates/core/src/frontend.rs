//! Waveform-to-spectrogram frontend.
//!
//! Converts PCM WAV audio into normalized 128x512 log-mel spectrograms:
//! windowed-sinc resampling to 32 kHz, Hanning-windowed log filterbank
//! frames (25 ms / 10 ms, 1024-point FFT), right-pad or front-crop to 512
//! frames, then mean/std normalization.

use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::{Error, Result};

/// Model sample rate in Hz.
pub const SAMPLE_RATE: u32 = 32_000;
/// Mel bins of the model input.
pub const N_MELS: usize = 128;
/// Frame count of the model input.
pub const TARGET_FRAMES: usize = 512;
/// Floor on mel energies before the natural log, so silence stays finite.
pub const LOG_FLOOR_EPS: f64 = 1e-10;
/// Default normalization mean.
pub const NORM_MEAN: f64 = -7.2;
/// Default normalization std.
pub const NORM_STD: f64 = 4.43;
/// Default frame length in milliseconds (800 samples at 32 kHz).
pub const FRAME_LEN_MS: f64 = 25.0;
/// Default frame shift in milliseconds.
pub const FRAME_SHIFT_MS: f64 = 10.0;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("zero-length audio".to_string()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".to_string()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel matrix, `n_mels` rows by `frames` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_mels: usize,
    pub frames: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Spectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.frames + frame]
    }
}

/// Loads a PCM WAV file (16-bit int or 32-bit float), downmixes to mono
/// by channel mean and resamples to `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Audio(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Audio(e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "unsupported encoding: {fmt:?} {bits}-bit (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Audio(format!("{}: zero-length audio", path.display())));
    }

    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();

    let wave = Waveform::new(mono, spec.sample_rate)?;
    resample(&wave, target_rate)
}

/// Windowed-sinc polyphase resampling; duration preserved within one sample.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Audio("target rate must be positive".to_string()));
    }
    if wave.sample_rate == target_rate {
        return Ok(wave.clone());
    }
    let from = wave.sample_rate as f64;
    let to = target_rate as f64;
    let n = wave.samples.len();
    let out_len = ((n as u64 * target_rate as u64 + wave.sample_rate as u64 / 2)
        / wave.sample_rate as u64) as usize;

    // Lowpass cutoff at the smaller Nyquist, expressed in input cycles/sample.
    let fc = 0.5 * (to / from).min(1.0);
    const HALF_TAPS: isize = 32;

    let sinc = |x: f64| {
        if x.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    };
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 * from / to;
        let center = t.floor() as isize;
        let mut acc = 0.0;
        for j in (center - HALF_TAPS + 1)..=(center + HALF_TAPS) {
            if j < 0 || j as usize >= n {
                continue;
            }
            let d = t - j as f64;
            let u = d / HALF_TAPS as f64;
            // Hann-windowed sinc kernel.
            let w = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
            acc += wave.samples[j as usize] as f64 * 2.0 * fc * sinc(2.0 * fc * d) * w;
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_rate)
}

/// HTK mel scale.
fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over [0, nyquist]; `n_fft_bins` = nfft/2 + 1.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<(usize, f64)>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate / 2.0;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(nyquist);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
            let mut taps = Vec::new();
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let w = if f > lo && f < mid {
                    (f - lo) / (mid - lo)
                } else if (f - mid).abs() < 1e-12 {
                    1.0
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    taps.push((b, w));
                }
            }
            taps
        })
        .collect()
}

/// Log-mel filterbank features; unnormalized, un-padded.
///
/// `frames = floor((N - frame_len) / frame_shift) + 1`; each frame is
/// Hanning-windowed, power-spectrum'd with a next-power-of-two FFT, run
/// through the triangular mel filterbank over the full band, and floored
/// at [`LOG_FLOOR_EPS`] before the natural log.
pub fn fbank(
    wave: &Waveform,
    n_mels: usize,
    frame_len_ms: f64,
    frame_shift_ms: f64,
) -> Result<Spectrogram> {
    let rate = wave.sample_rate as f64;
    let frame_len = (frame_len_ms * rate / 1000.0).round() as usize;
    let frame_shift = (frame_shift_ms * rate / 1000.0).round() as usize;
    let n = wave.samples.len();
    if n < frame_len {
        return Err(Error::Audio(format!(
            "waveform of {n} samples is shorter than one {frame_len}-sample frame"
        )));
    }
    let frames = (n - frame_len) / frame_shift + 1;
    let n_fft = frame_len.next_power_of_two();

    let window: Vec<f64> = (0..frame_len)
        .map(|i| {
            0.5 - 0.5
                * (2.0 * std::f64::consts::PI * i as f64 / (frame_len - 1) as f64).cos()
        })
        .collect();
    let filters = mel_filterbank(n_mels, n_fft, rate);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);

    let mut values = vec![0.0; n_mels * frames];
    let mut buf = vec![Complex::new(0.0f64, 0.0); n_fft];
    for t in 0..frames {
        let start = t * frame_shift;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < frame_len {
                Complex::new(wave.samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for (m, taps) in filters.iter().enumerate() {
            let e: f64 = taps.iter().map(|&(b, w)| w * power[b]).sum();
            values[m * frames + t] = e.max(LOG_FLOOR_EPS).ln();
        }
    }

    Ok(Spectrogram {
        n_mels,
        frames,
        values,
        normalized: false,
    })
}

/// Right-pads with the pre-normalization log floor, or crops from frame 0.
pub fn pad_or_crop(spec: &Spectrogram, target_frames: usize) -> Spectrogram {
    let pad_value = LOG_FLOOR_EPS.ln();
    let mut values = vec![pad_value; spec.n_mels * target_frames];
    let keep = spec.frames.min(target_frames);
    for m in 0..spec.n_mels {
        values[m * target_frames..m * target_frames + keep]
            .copy_from_slice(&spec.values[m * spec.frames..m * spec.frames + keep]);
    }
    Spectrogram {
        n_mels: spec.n_mels,
        frames: target_frames,
        values,
        normalized: spec.normalized,
    }
}

/// `(values - mean) / std`, setting the normalized flag.
pub fn normalize(spec: &Spectrogram, mean: f64, std: f64) -> Result<Spectrogram> {
    if spec.normalized {
        return Err(Error::InvalidArgument(
            "spectrogram is already normalized".to_string(),
        ));
    }
    if std <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "normalization std must be positive, got {std}"
        )));
    }
    Ok(Spectrogram {
        n_mels: spec.n_mels,
        frames: spec.frames,
        values: spec.values.iter().map(|v| (v - mean) / std).collect(),
        normalized: true,
    })
}

/// Full pipeline: fbank at defaults, pad/crop to 128x512, normalize.
pub fn pipeline(wave: &Waveform) -> Result<Spectrogram> {
    let raw = fbank(wave, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS)?;
    let fixed = pad_or_crop(&raw, TARGET_FRAMES);
    normalize(&fixed, NORM_MEAN, NORM_STD)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| {
                    (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32
                })
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn resample_preserves_duration() {
        let w = sine(440.0, 16_000, 5.0);
        let r = resample(&w, 32_000).unwrap();
        assert_eq!(r.samples.len(), 160_000);
    }

    #[test]
    fn fbank_frame_count() {
        let w = sine(1000.0, 32_000, 5.0);
        assert_eq!(w.samples.len(), 160_000);
        let s = fbank(&w, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS).unwrap();
        assert_eq!(s.frames, 498);
        assert_eq!(s.n_mels, 128);
    }

    #[test]
    fn silence_hits_log_floor() {
        let w = Waveform::new(vec![0.0; 32_000], 32_000).unwrap();
        let s = fbank(&w, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS).unwrap();
        let floor = LOG_FLOOR_EPS.ln();
        assert!(s.values.iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn pad_and_crop() {
        let w = sine(2000.0, 32_000, 5.0);
        let s = fbank(&w, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS).unwrap();
        let p = pad_or_crop(&s, 512);
        assert_eq!(p.frames, 512);
        let floor = LOG_FLOOR_EPS.ln();
        for m in 0..p.n_mels {
            for t in 498..512 {
                assert_eq!(p.get(m, t), floor);
            }
        }
        // crop keeps the first frames
        let c = pad_or_crop(&p, 100);
        for m in 0..c.n_mels {
            for t in 0..100 {
                assert_eq!(c.get(m, t), p.get(m, t));
            }
        }
        // identity
        let same = pad_or_crop(&p, 512);
        assert_eq!(same, p);
    }

    #[test]
    fn normalize_contract() {
        let spec = Spectrogram {
            n_mels: 1,
            frames: 2,
            values: vec![-7.2, -2.77],
            normalized: false,
        };
        let n = normalize(&spec, NORM_MEAN, NORM_STD).unwrap();
        assert!(n.values[0].abs() < 1e-12);
        assert!((n.values[1] - 1.0).abs() < 1e-12);
        assert!(normalize(&n, NORM_MEAN, NORM_STD).is_err());
        assert!(normalize(&spec, 0.0, 0.0).is_err());
    }

    #[test]
    fn resampled_sine_keeps_spectral_peak() {
        // FFT-peak oracle: a 1 kHz tone must stay at 1 kHz within one bin.
        let w = sine(1000.0, 16_000, 2.0);
        let r = resample(&w, 32_000).unwrap();
        let n_fft = 8192;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_fft);
        let mut buf: Vec<Complex<f64>> = r.samples[..n_fft]
            .iter()
            .map(|&v| Complex::new(v as f64, 0.0))
            .collect();
        fft.process(&mut buf);
        let peak = (1..n_fft / 2)
            .max_by(|&a, &b| {
                buf[a].norm_sqr().partial_cmp(&buf[b].norm_sqr()).unwrap()
            })
            .unwrap();
        let peak_hz = peak as f64 * 32_000.0 / n_fft as f64;
        let bin_hz = 32_000.0 / n_fft as f64;
        assert!(
            (peak_hz - 1000.0).abs() <= bin_hz,
            "peak at {peak_hz} Hz, bin width {bin_hz}"
        );
    }

    #[test]
    fn pipeline_geometry_any_duration() {
        for secs in [0.2, 1.0, 5.0, 7.3, 20.0] {
            let w = sine(3000.0, 32_000, secs);
            let s = pipeline(&w).unwrap();
            assert_eq!((s.n_mels, s.frames), (128, 512), "secs = {secs}");
            assert!(s.normalized);
        }
    }

    #[test]
    fn energy_monotone_in_gain() {
        let w = sine(500.0, 32_000, 1.0);
        let louder = Waveform::new(
            w.samples.iter().map(|&v| v * 3.0).collect(),
            w.sample_rate,
        )
        .unwrap();
        let a = fbank(&w, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS).unwrap();
        let b = fbank(&louder, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(y >= x);
        }
    }

    #[test]
    fn white_noise_is_spectrally_flat() {
        // statistical oracle: column-to-column mean varies < 3 dB over trials
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let trials = 100;
        let mut col_means: Vec<f64> = Vec::new();
        for _ in 0..trials {
            let w = Waveform::new(
                (0..16_000).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                32_000,
            )
            .unwrap();
            let s = fbank(&w, N_MELS, FRAME_LEN_MS, FRAME_SHIFT_MS).unwrap();
            if col_means.is_empty() {
                col_means = vec![0.0; s.frames];
            }
            for (t, acc) in col_means.iter_mut().enumerate() {
                *acc += (0..s.n_mels).map(|r| s.get(r, t)).sum::<f64>()
                    / (s.n_mels * trials) as f64;
            }
        }
        let lo = col_means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread_db = (hi - lo) * 10.0 / std::f64::consts::LN_10;
        assert!(spread_db < 3.0, "column mean spread {spread_db} dB");
    }
}
