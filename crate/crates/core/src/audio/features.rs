//! Log-mel filterbank features (optionally DCT-13 cepstra).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::framing::WINDOW;
use crate::audio::SAMPLE_RATE;
use crate::error::{Result, SanasError};
use crate::numcore::Tensor;

pub const N_MELS: usize = 40;
pub const N_FRAMES: usize = 98;
pub const N_DCT: usize = 13;
const FRAME_LEN: usize = 480;
const FRAME_STEP: usize = 160;
const N_FFT: usize = 512;
const F_MIN: f64 = 20.0;
const F_MAX: f64 = 7600.0;
const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    #[default]
    LogMel,
    Dct13,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default)]
    pub kind: FeatureKind,
}

impl FeatureConfig {
    pub fn num_coefficients(&self) -> usize {
        match self.kind {
            FeatureKind::LogMel => N_MELS,
            FeatureKind::Dct13 => N_DCT,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies of the triangular filters: `N_MELS + 2` points evenly
/// spaced on the mel scale. Filter `m` peaks at `edges[m + 1]`.
pub fn mel_edges() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Centre frequency of every mel filter.
pub fn mel_centers() -> Vec<f64> {
    mel_edges()[1..=N_MELS].to_vec()
}

#[derive(Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per filter: first FFT bin and weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("config", &self.config).finish()
    }
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..FRAME_LEN)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (FRAME_LEN - 1) as f64).cos())
            .collect();
        let edges = mel_edges();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let filters = (0..N_MELS)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..=N_FFT / 2 {
                    let f = k as f64 * bin_hz;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        FeatureExtractor {
            config,
            fft,
            window,
            filters,
        }
    }

    pub fn config(&self) -> FeatureConfig {
        self.config
    }

    pub fn num_coefficients(&self) -> usize {
        self.config.num_coefficients()
    }

    fn analyse(&self, frame: &[f64], buf: &mut [Complex<f64>], out: &mut Vec<f64>) {
        for (i, b) in buf.iter_mut().enumerate() {
            let v = if i < FRAME_LEN { frame[i] * self.window[i] } else { 0.0 };
            *b = Complex::new(v, 0.0);
        }
        self.fft.process(buf);
        let mags: Vec<f64> = buf[..=N_FFT / 2].iter().map(|c| c.norm()).collect();
        let logmel: Vec<f64> = self
            .filters
            .iter()
            .map(|(first, w)| {
                let e: f64 = w.iter().zip(&mags[*first..]).map(|(a, b)| a * b).sum();
                (e + LOG_FLOOR).ln()
            })
            .collect();
        match self.config.kind {
            FeatureKind::LogMel => out.extend_from_slice(&logmel),
            FeatureKind::Dct13 => out.extend(dct_ii(&logmel, N_DCT)),
        }
    }

    /// Features of every 30 ms analysis frame (10 ms hop) of `samples`,
    /// frame-major: `frames[k]` starts at sample `160 k`.
    pub fn analysis_frames(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        if samples.len() < FRAME_LEN {
            return Vec::new();
        }
        let n = (samples.len() - FRAME_LEN) / FRAME_STEP + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        (0..n)
            .map(|k| {
                let mut out = Vec::with_capacity(self.num_coefficients());
                self.analyse(&samples[k * FRAME_STEP..k * FRAME_STEP + FRAME_LEN], &mut buf, &mut out);
                out
            })
            .collect()
    }

    /// `[coefficients, 98]` map of one 1 s window.
    pub fn mfcc(&self, window: &[f64]) -> Result<Tensor> {
        if window.len() != WINDOW {
            return Err(SanasError::Input(format!(
                "feature window needs exactly {WINDOW} samples, got {}",
                window.len()
            )));
        }
        let frames = self.analysis_frames(window);
        window_map(&frames, 0, self.num_coefficients())
    }
}

/// Coefficient-major `[c, 98]` map from analysis frames `first..first + 98`.
pub(crate) fn window_map(frames: &[Vec<f64>], first: usize, c: usize) -> Result<Tensor> {
    if first + N_FRAMES > frames.len() {
        return Err(SanasError::Input(format!(
            "window at analysis frame {first} runs past {} frames",
            frames.len()
        )));
    }
    let mut data = vec![0.0; c * N_FRAMES];
    for t in 0..N_FRAMES {
        for (i, v) in frames[first + t].iter().enumerate() {
            data[i * N_FRAMES + t] = *v;
        }
    }
    Tensor::new(vec![c, N_FRAMES], data)
}

/// Orthonormal DCT-II, first `k` coefficients.
fn dct_ii(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..k)
        .map(|j| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if j == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect()
    }

    #[test]
    fn shape_is_40_by_98() {
        let ex = FeatureExtractor::new(FeatureConfig::default());
        let m = ex.mfcc(&tone(440.0, 16_000)).unwrap();
        assert_eq!(m.shape(), &[40, 98]);
        assert_eq!((16_000 - 480) / 160 + 1, 98);
        assert!(matches!(ex.mfcc(&[0.0; 100]), Err(SanasError::Input(_))));
    }

    #[test]
    fn silence_hits_the_floor() {
        let ex = FeatureExtractor::new(FeatureConfig::default());
        let m = ex.mfcc(&vec![0.0; 16_000]).unwrap();
        assert!(m.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_at_nearest_centre() {
        let centers = mel_centers();
        let nearest = (0..N_MELS)
            .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
            .unwrap();
        let ex = FeatureExtractor::new(FeatureConfig::default());
        let frames = ex.analysis_frames(&tone(1000.0, 16_000));
        for f in &frames {
            let arg = (0..N_MELS).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn shifting_by_one_hop_shifts_one_column() {
        let ex = FeatureExtractor::new(FeatureConfig::default());
        let sig: Vec<f64> = (0..16_160).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let a = ex.mfcc(&sig[..16_000]).unwrap();
        let b = ex.mfcc(&sig[160..]).unwrap();
        for c in 0..N_MELS {
            for t in 0..N_FRAMES - 1 {
                let (x, y) = (a.data()[c * N_FRAMES + t + 1], b.data()[c * N_FRAMES + t]);
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn dct_variant_has_13_rows() {
        let ex = FeatureExtractor::new(FeatureConfig { kind: FeatureKind::Dct13 });
        assert_eq!(ex.mfcc(&tone(300.0, 16_000)).unwrap().shape(), &[13, 98]);
        // orthonormal: constant input lands entirely in c0
        let c = dct_ii(&[2.0; 40], 13);
        assert!((c[0] - 2.0 * 40f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
