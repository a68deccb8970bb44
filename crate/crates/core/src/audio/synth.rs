use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, WordSpan, SAMPLE_RATE};
use crate::error::{Result, SanasError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub min_snr_db: f64,
    pub max_snr_db: f64,
    pub min_dur: f64,
    pub max_dur: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_snr_db: 5.0,
            max_snr_db: 20.0,
            min_dur: 1.0,
            max_dur: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_snr_db, self.max_snr_db, self.min_dur, self.max_dur]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.min_snr_db > self.max_snr_db {
            return Err(SanasError::Config("SNR range must be finite with min <= max".into()));
        }
        if self.min_dur < 1.0 || self.min_dur > self.max_dur {
            return Err(SanasError::Config(format!(
                "duration range [{}, {}] must satisfy 1 <= min <= max",
                self.min_dur, self.max_dur
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesizedStream {
    pub wave: Waveform,
    pub span: WordSpan,
    /// Target SNR the word was scaled to.
    pub snr_db: f64,
    /// Offset of the crop inside the noise clip, in samples.
    pub noise_offset: usize,
    /// Factor applied to the word clip.
    pub gain: f64,
    pub clipped_fraction: f64,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// `10 log10(P_word / P_noise)` with both powers taken over the span only.
pub fn measure_snr_db(word_component: &[f64], noise: &[f64], span: &WordSpan) -> f64 {
    let w = power(&word_component[span.start..span.end]);
    let n = power(&noise[span.start..span.end]);
    10.0 * (w / n).log10()
}

/// Mixes `word` into a random crop of `noise` at a random position and SNR.
pub fn synthesize_stream(
    noise: &Waveform,
    word: &Waveform,
    label: usize,
    rng: &mut dyn RngCore,
    cfg: &SynthConfig,
) -> Result<SynthesizedStream> {
    cfg.validate()?;
    let sr = SAMPLE_RATE as f64;
    let dur = if cfg.max_dur > cfg.min_dur {
        rng.gen_range(cfg.min_dur..=cfg.max_dur)
    } else {
        cfg.min_dur
    };
    let n = (dur * sr).round() as usize;
    let len = word.len();
    if len == 0 {
        return Err(SanasError::Input("empty word clip".into()));
    }
    if len > n {
        return Err(SanasError::Input(format!(
            "word of {len} samples is longer than the {n}-sample stream"
        )));
    }
    if noise.len() < n {
        return Err(SanasError::Input(format!(
            "noise clip of {} samples cannot cover a {n}-sample stream",
            noise.len()
        )));
    }
    let offset = rng.gen_range(0..=noise.len() - n);
    let start = rng.gen_range(0..=n - len);
    let snr_db = if cfg.max_snr_db > cfg.min_snr_db {
        rng.gen_range(cfg.min_snr_db..=cfg.max_snr_db)
    } else {
        cfg.min_snr_db
    };
    let crop = &noise.samples()[offset..offset + n];
    let span = WordSpan {
        label,
        start,
        end: start + len,
    };
    let p_word = power(word.samples());
    if p_word == 0.0 {
        return Err(SanasError::Input("word clip is silent".into()));
    }
    let p_noise = power(&crop[span.start..span.end]);
    let gain = if p_noise > 0.0 {
        (p_noise * 10f64.powf(snr_db / 10.0) / p_word).sqrt()
    } else {
        0.1 / p_word.sqrt()
    };
    let mut out = crop.to_vec();
    for (o, w) in out[start..start + len].iter_mut().zip(word.samples()) {
        *o += gain * w;
    }
    let mut clipped = 0usize;
    for o in out.iter_mut() {
        if o.abs() > 1.0 {
            *o = o.clamp(-1.0, 1.0);
            clipped += 1;
        }
    }
    let clipped_fraction = clipped as f64 / n as f64;
    if clipped > 0 {
        log::debug!("clipped {clipped} of {n} samples ({:.4}%)", 100.0 * clipped_fraction);
    }
    Ok(SynthesizedStream {
        wave: Waveform::new(out)?,
        span,
        snr_db,
        noise_offset: offset,
        gain,
        clipped_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> Waveform {
        Waveform::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
    }

    #[test]
    fn snr_and_span_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = noise(16_000 * 4, 0.05, &mut rng);
        let word = Waveform::new((0..8000).map(|i| (i as f64 * 0.2).sin() * 0.3).collect()).unwrap();
        for _ in 0..50 {
            let s = synthesize_stream(&pool, &word, 2, &mut rng, &SynthConfig::default()).unwrap();
            let d = s.wave.duration();
            assert!((1.0..=3.0).contains(&d));
            assert!(s.span.end <= s.wave.len());
            assert!(s.snr_db >= 5.0);
            let n = s.wave.len();
            let nz = &pool.samples()[s.noise_offset..s.noise_offset + n];
            let mut comp = vec![0.0; n];
            for (c, w) in comp[s.span.start..s.span.end].iter_mut().zip(word.samples()) {
                *c = s.gain * w;
            }
            for i in 0..n {
                assert_eq!(s.wave.samples()[i], (nz[i] + comp[i]).clamp(-1.0, 1.0));
            }
            let measured = measure_snr_db(&comp, nz, &s.span);
            assert!((measured - s.snr_db).abs() <= 0.1);
        }
    }

    #[test]
    fn zero_noise_gives_scaled_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let silent = Waveform::new(vec![0.0; 16_000 * 3]).unwrap();
        let word = Waveform::new((0..4000).map(|i| (i as f64 * 0.05).cos() * 0.5).collect()).unwrap();
        let s = synthesize_stream(&silent, &word, 0, &mut rng, &SynthConfig::default()).unwrap();
        let g = 0.1 / power(word.samples()).sqrt();
        let seg = &s.wave.samples()[s.span.start..s.span.end];
        for (a, w) in seg.iter().zip(word.samples()) {
            assert_eq!(*a, g * w);
        }
    }

    #[test]
    fn word_longer_than_stream_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = Waveform::new(vec![0.01; 16_000 * 3]).unwrap();
        let word = Waveform::new(vec![0.1; 17_000]).unwrap();
        let cfg = SynthConfig { max_dur: 1.0, ..SynthConfig::default() };
        assert!(matches!(
            synthesize_stream(&pool, &word, 0, &mut rng, &cfg),
            Err(SanasError::Input(_))
        ));
    }
}
