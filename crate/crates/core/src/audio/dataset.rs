//! Stream collections, splits, on-disk layout and frame extraction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::features::window_map;
use crate::audio::{
    frame_starts, label_window, read_wav, write_wav, FeatureExtractor, Frame, SpanRecord, Waveform, WordSpan,
    LABELS, SAMPLE_RATE,
};
use crate::error::{Result, SanasError};

/// Window hop expressed in 10 ms analysis frames.
const ANALYSIS_PER_HOP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(SanasError::Usage(format!("unknown split {other:?}"))),
        }
    }
}

/// A stream with its word spans and generation metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamRecord {
    pub wave: Waveform,
    pub spans: Vec<WordSpan>,
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    spans: Vec<SpanRecord>,
    snr_db: f64,
    seed: u64,
}

impl StreamRecord {
    /// Every 1 s window as a `[1, c, 98]` feature frame, normalised if `norm` is given.
    pub fn frames(&self, extractor: &FeatureExtractor, norm: Option<&FeatureNorm>) -> Result<Vec<Frame>> {
        let starts = frame_starts(self.wave.len())?;
        let analysis = extractor.analysis_frames(self.wave.samples());
        let c = extractor.num_coefficients();
        starts
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut map = window_map(&analysis, i * ANALYSIS_PER_HOP, c)?;
                if let Some(n) = norm {
                    n.apply(&mut map)?;
                }
                Ok(Frame {
                    start: s as f64 / SAMPLE_RATE as f64,
                    features: map.reshape(&[1, c, crate::audio::N_FRAMES])?,
                    label: label_window(&self.spans, s),
                })
            })
            .collect()
    }

    pub fn write(&self, wav_path: &Path) -> Result<()> {
        write_wav(wav_path, &self.wave)?;
        let side = Sidecar {
            spans: self.spans.iter().map(SpanRecord::from_span).collect(),
            snr_db: self.snr_db,
            seed: self.seed,
        };
        let json_path = wav_path.with_extension("json");
        let text = serde_json::to_string_pretty(&side).expect("sidecar serialises");
        fs::write(&json_path, text).map_err(|e| SanasError::io(&json_path, e))
    }

    pub fn read(wav_path: &Path) -> Result<Self> {
        let wave = read_wav(wav_path)?;
        let json_path = wav_path.with_extension("json");
        let text = fs::read_to_string(&json_path).map_err(|e| SanasError::io(&json_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)
            .map_err(|e| SanasError::Format(format!("{}: {e}", json_path.display())))?;
        let spans = side.spans.iter().map(SpanRecord::to_span).collect::<Result<Vec<_>>>()?;
        if let Some(s) = spans.iter().find(|s| s.end > wave.len()) {
            return Err(SanasError::Format(format!(
                "{}: span ends at {:.3} s past the stream end",
                json_path.display(),
                s.end_secs()
            )));
        }
        Ok(StreamRecord {
            wave,
            spans,
            snr_db: side.snr_db,
            seed: side.seed,
        })
    }
}

/// Per-coefficient mean and standard deviation, fitted on training streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(c: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        }
    }

    pub fn fit(streams: &[StreamRecord], extractor: &FeatureExtractor) -> Result<Self> {
        let c = extractor.num_coefficients();
        // (count, sum, sum of squares) per stream, reduced in stream order
        let parts: Vec<(usize, Vec<f64>, Vec<f64>)> = streams
            .par_iter()
            .map(|s| {
                let frames = extractor.analysis_frames(s.wave.samples());
                let mut sum = vec![0.0; c];
                let mut sq = vec![0.0; c];
                for f in &frames {
                    for i in 0..c {
                        sum[i] += f[i];
                        sq[i] += f[i] * f[i];
                    }
                }
                (frames.len(), sum, sq)
            })
            .collect();
        let mut n = 0usize;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (k, s, q) in parts {
            n += k;
            for i in 0..c {
                sum[i] += s[i];
                sq[i] += q[i];
            }
        }
        if n == 0 {
            return Err(SanasError::Input("cannot fit feature statistics on zero frames".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n as f64 - m * m).max(0.0).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureNorm { mean, std })
    }

    /// Normalises a `[c, T]` map in place.
    pub fn apply(&self, map: &mut crate::numcore::Tensor) -> Result<()> {
        let c = self.mean.len();
        if map.shape().first() != Some(&c) {
            return Err(SanasError::Format(format!(
                "feature statistics cover {c} coefficients, map has shape {:?}",
                map.shape()
            )));
        }
        let t = map.len() / c;
        for (i, row) in map.data_mut().chunks_mut(t).enumerate() {
            for v in row {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
        Ok(())
    }
}

/// Streams grouped by split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<StreamRecord>,
    pub val: Vec<StreamRecord>,
    pub test: Vec<StreamRecord>,
}

impl Dataset {
    /// Deals streams into 80:10:10 splits by index (positions 8 and 9 of every ten).
    pub fn from_streams(streams: Vec<StreamRecord>) -> Self {
        let mut d = Dataset::default();
        for (i, s) in streams.into_iter().enumerate() {
            match i % 10 {
                8 => d.val.push(s),
                9 => d.test.push(s),
                _ => d.train.push(s),
            }
        }
        d
    }

    pub fn split(&self, name: SplitName) -> &[StreamRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, name: SplitName) -> &mut Vec<StreamRecord> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Val => &mut self.val,
            SplitName::Test => &mut self.test,
        }
    }

    /// Feature frames of every stream of a split, one sequence per stream.
    pub fn sequences(
        &self,
        name: SplitName,
        extractor: &FeatureExtractor,
        norm: Option<&FeatureNorm>,
    ) -> Result<Vec<Vec<Frame>>> {
        self.split(name)
            .par_iter()
            .map(|s| s.frames(extractor, norm))
            .collect()
    }

    /// Word-label histogram per split (streams without a word count as bg-noise).
    pub fn label_counts(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        let mut out = BTreeMap::new();
        for name in SplitName::ALL {
            let mut h: BTreeMap<String, usize> = BTreeMap::new();
            for s in self.split(name) {
                let label = s.spans.first().map_or(crate::audio::BG_NOISE, |w| w.label);
                *h.entry(LABELS[label].to_string()).or_default() += 1;
            }
            out.insert(name.as_str().to_string(), h);
        }
        out
    }

    /// Writes `<dir>/<split>/<index>.wav` + sidecar JSON and `<dir>/manifest.json`.
    pub fn save(&self, dir: &Path, manifest: &PreparedManifest) -> Result<()> {
        for name in SplitName::ALL {
            let sub = dir.join(name.as_str());
            fs::create_dir_all(&sub).map_err(|e| SanasError::io(&sub, e))?;
            self.split(name)
                .par_iter()
                .enumerate()
                .try_for_each(|(i, s)| s.write(&sub.join(format!("{i:06}.wav"))))?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
        fs::write(&path, text + "\n").map_err(|e| SanasError::io(&path, e))
    }

    /// Reads a directory written by [`Dataset::save`].
    pub fn load(dir: &Path) -> Result<(Self, PreparedManifest)> {
        let manifest = PreparedManifest::read(&dir.join("manifest.json"))?;
        let mut d = Dataset::default();
        for name in SplitName::ALL {
            let sub = dir.join(name.as_str());
            let mut paths: Vec<PathBuf> = fs::read_dir(&sub)
                .map_err(|e| SanasError::io(&sub, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "wav"))
                .collect();
            paths.sort();
            let expected = manifest.streams.get(name.as_str()).copied().unwrap_or(0);
            if paths.len() != expected {
                return Err(SanasError::Format(format!(
                    "{}: manifest lists {expected} streams, found {}",
                    sub.display(),
                    paths.len()
                )));
            }
            *d.split_mut(name) = paths.par_iter().map(|p| StreamRecord::read(p)).collect::<Result<_>>()?;
        }
        Ok((d, manifest))
    }
}

/// Summary written next to a prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedManifest {
    pub source: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    pub streams: BTreeMap<String, usize>,
    pub labels: BTreeMap<String, BTreeMap<String, usize>>,
}

impl PreparedManifest {
    pub fn new(source: &str, seed: u64, parameters: serde_json::Value, data: &Dataset) -> Self {
        PreparedManifest {
            source: source.to_string(),
            seed,
            parameters,
            streams: SplitName::ALL
                .iter()
                .map(|n| (n.as_str().to_string(), data.split(*n).len()))
                .collect(),
            labels: data.label_counts(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SanasError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SanasError::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{make_toy_dataset, FeatureConfig, ToyConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Dataset {
        let cfg = ToyConfig {
            classes: 3,
            streams_per_class: 4,
            ..ToyConfig::default()
        };
        Dataset::from_streams(make_toy_dataset(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap())
    }

    #[test]
    fn splits_are_disjoint_and_complete() {
        let d = small();
        assert_eq!(d.train.len() + d.val.len() + d.test.len(), 12);
        let mut seeds: Vec<u64> = SplitName::ALL.iter().flat_map(|n| d.split(*n).iter().map(|s| s.seed)).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
    }

    #[test]
    fn stream_frames_match_direct_features() {
        let d = small();
        let ex = FeatureExtractor::new(FeatureConfig::default());
        let s = &d.train[0];
        let frames = s.frames(&ex, None).unwrap();
        assert_eq!(frames.len(), frame_starts(s.wave.len()).unwrap().len());
        for (i, f) in frames.iter().enumerate() {
            let direct = ex.mfcc(&s.wave.samples()[i * 3200..i * 3200 + 16_000]).unwrap();
            assert_eq!(f.features.data(), direct.data());
            assert_eq!(f.features.shape(), &[1, 40, 98]);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        let m = PreparedManifest::new("toy", 2, serde_json::json!({}), &d);
        d.save(dir.path(), &m).unwrap();
        let (back, m2) = Dataset::load(dir.path()).unwrap();
        assert_eq!(m, m2);
        for name in SplitName::ALL {
            let (a, b) = (d.split(name), back.split(name));
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.wave.quantized(), y.wave);
                assert_eq!(x.seed, y.seed);
                // spans survive up to sample rounding
                assert_eq!(x.spans, y.spans);
            }
        }
        let total: usize = m.labels.values().flat_map(|h| h.values()).sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn normalisation_centres_training_features() {
        let d = small();
        let ex = FeatureExtractor::new(FeatureConfig::default());
        let norm = FeatureNorm::fit(&d.train, &ex).unwrap();
        let mut acc = vec![0.0; 40];
        let mut n = 0.0;
        for s in &d.train {
            for f in ex.analysis_frames(s.wave.samples()) {
                for i in 0..40 {
                    acc[i] += (f[i] - norm.mean[i]) / norm.std[i];
                }
                n += 1.0;
            }
        }
        assert!(acc.iter().all(|a| (a / n).abs() < 1e-9));
    }
}
