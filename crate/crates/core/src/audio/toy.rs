//! Synthetic keyword task: class-specific tonal patterns in white noise.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{synthesize_stream, StreamRecord, SynthConfig, Waveform, SAMPLE_RATE, UNKNOWN};
use crate::error::{Result, SanasError};

const RUN: usize = 10;

/// Largest class count: the ten target words plus "unknown".
pub const MAX_TOY_CLASSES: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub classes: usize,
    pub streams_per_class: usize,
    pub synth: SynthConfig,
    pub noise_rms: f64,
    pub min_pattern: f64,
    pub max_pattern: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            classes: 5,
            streams_per_class: 200,
            synth: SynthConfig {
                min_dur: 3.0,
                max_dur: 3.0,
                ..SynthConfig::default()
            },
            noise_rms: 0.05,
            min_pattern: 0.5,
            max_pattern: 0.8,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.classes == 0 || self.classes > MAX_TOY_CLASSES {
            return Err(SanasError::Config(format!(
                "toy class count must be in 1..={MAX_TOY_CLASSES}, got {}",
                self.classes
            )));
        }
        if !(self.noise_rms > 0.0 && self.noise_rms.is_finite()) {
            return Err(SanasError::Config("noise_rms must be positive".into()));
        }
        if !(self.min_pattern > 0.0 && self.min_pattern <= self.max_pattern && self.max_pattern <= self.synth.min_dur) {
            return Err(SanasError::Config(format!(
                "pattern length range [{}, {}] must be positive and fit the shortest stream",
                self.min_pattern, self.max_pattern
            )));
        }
        Ok(())
    }

    /// Label id of toy class `c`: targets first, the last slot is "unknown".
    pub fn label_of(&self, c: usize) -> usize {
        if c < 10 {
            c
        } else {
            UNKNOWN
        }
    }
}

const LO: f64 = 800.0;
const HI: f64 = 3200.0;
const MID: f64 = 2000.0;

/// Instantaneous frequencies of class `c` at normalised time `u` in [0, 1].
fn trajectory(c: usize, u: f64) -> Vec<f64> {
    let tri = 1.0 - (2.0 * u - 1.0).abs();
    match c {
        0 => vec![LO + (HI - LO) * u],
        1 => vec![HI - (HI - LO) * u],
        2 => vec![MID],
        3 => vec![LO + (HI - LO) * tri],
        4 => vec![HI - (HI - LO) * tri],
        5 => vec![MID],
        6 => vec![LO, HI],
        7 => vec![LO + (HI - LO) * (2.0 * u).fract()],
        8 => vec![HI - (HI - LO) * (2.0 * u).fract()],
        9 => vec![MID + 300.0 * (2.0 * std::f64::consts::PI * 6.0 * u).sin()],
        _ => vec![LO + 0.5 * (HI - LO) * u, HI - 0.5 * (HI - LO) * u],
    }
}

/// The pattern of class `c` lasting `n` samples (peak amplitude about 1).
pub fn toy_pattern(c: usize, n: usize) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    let tones = trajectory(c, 0.0).len();
    let mut phase = vec![0.0f64; tones];
    let ramp = (0.01 * sr) as usize;
    let samples = (0..n)
        .map(|i| {
            let u = i as f64 / n.max(2).saturating_sub(1) as f64;
            let freqs = trajectory(c, u);
            let mut v = 0.0;
            for (p, f) in phase.iter_mut().zip(&freqs) {
                v += p.sin();
                *p += 2.0 * std::f64::consts::PI * f / sr;
            }
            let gate = if c == 5 && (u * 8.0).floor() as usize % 2 == 1 { 0.0 } else { 1.0 };
            let edge = ((i.min(n - 1 - i)) as f64 / ramp as f64).min(1.0);
            v / tones as f64 * gate * edge
        })
        .collect();
    Waveform::new(samples).expect("finite synthetic pattern")
}

/// One stream per (class, repetition), each with its own seed.
///
/// Streams come in runs of ten per class, so the index-based 8:1:1 split of
/// [`Dataset::from_streams`](crate::audio::Dataset::from_streams) is stratified
/// whenever `streams_per_class` is a multiple of ten.
pub fn make_toy_dataset(cfg: &ToyConfig, rng: &mut dyn RngCore) -> Result<Vec<StreamRecord>> {
    cfg.validate()?;
    let sr = SAMPLE_RATE as f64;
    let noise_len = (cfg.synth.max_dur * sr).round() as usize;
    let mut out = Vec::with_capacity(cfg.classes * cfg.streams_per_class);
    let order = (0..cfg.streams_per_class.div_ceil(RUN)).flat_map(|block| {
        let n = RUN.min(cfg.streams_per_class - block * RUN);
        (0..cfg.classes).flat_map(move |c| std::iter::repeat_n(c, n))
    });
    for c in order {
        {
            let seed = rng.next_u64();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let noise: Vec<f64> = (0..noise_len)
                .map(|_| cfg.noise_rms * r.sample::<f64, _>(StandardNormal))
                .collect();
            let noise = Waveform::new(noise)?;
            let len = if cfg.max_pattern > cfg.min_pattern {
                r.gen_range(cfg.min_pattern..=cfg.max_pattern)
            } else {
                cfg.min_pattern
            };
            let word = toy_pattern(c, (len * sr).round() as usize);
            let s = synthesize_stream(&noise, &word, cfg.label_of(c), &mut r, &cfg.synth)?;
            out.push(StreamRecord {
                wave: s.wave,
                spans: vec![s.span],
                snr_db: s.snr_db,
                seed,
            });
        }
    }
    Ok(out)
}
