//! Audio streams, framing, features and datasets.

mod dataset;
mod features;
mod framing;
mod speech_commands;
mod synth;
mod toy;
mod wav;

pub use dataset::{Dataset, FeatureNorm, PreparedManifest, SplitName, StreamRecord};
pub use features::{mel_centers, mel_edges, FeatureConfig, FeatureExtractor, FeatureKind, N_FRAMES, N_MELS};
pub use framing::{frame_starts, frame_stream, label_frame, label_window, FRAME_HOP, WINDOW};
pub use speech_commands::{load_speech_commands, split_for_path, Clip, SpeechCommands};
pub use synth::{measure_snr_db, synthesize_stream, SynthConfig, SynthesizedStream};
pub use toy::{make_toy_dataset, toy_pattern, ToyConfig, MAX_TOY_CLASSES};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SanasError};
use crate::numcore::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

/// Class names in label-index order.
pub const LABELS: [&str; 12] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go", "bg-noise", "unknown",
];
pub const NUM_CLASSES: usize = 12;
pub const BG_NOISE: usize = 10;
pub const UNKNOWN: usize = 11;

pub fn label_index(name: &str) -> Option<usize> {
    LABELS.iter().position(|&l| l == name)
}

pub fn label_name(index: usize) -> Result<&'static str> {
    LABELS
        .get(index)
        .copied()
        .ok_or_else(|| SanasError::Input(format!("label index {index} out of range")))
}

/// Mono 16 kHz samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SanasError::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Round-trips the samples through 16-bit PCM.
    pub fn quantized(&self) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|&s| wav::dequantize(wav::quantize(s))).collect(),
        }
    }
}

/// Location of the keyword inside a stream, in samples (`end` exclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordSpan {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    pub fn start_secs(&self) -> f64 {
        self.start as f64 / SAMPLE_RATE as f64
    }

    pub fn end_secs(&self) -> f64 {
        self.end as f64 / SAMPLE_RATE as f64
    }

    pub fn center_secs(&self) -> f64 {
        (self.start + self.end) as f64 / (2.0 * SAMPLE_RATE as f64)
    }
}

/// JSON form of a span: label name and seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl SpanRecord {
    pub fn from_span(span: &WordSpan) -> Self {
        SpanRecord {
            label: LABELS[span.label].to_string(),
            start: span.start_secs(),
            end: span.end_secs(),
        }
    }

    pub fn to_span(&self) -> Result<WordSpan> {
        let label = label_index(&self.label)
            .ok_or_else(|| SanasError::Format(format!("unknown label {:?}", self.label)))?;
        if !(self.start >= 0.0 && self.end > self.start) {
            return Err(SanasError::Format(format!(
                "bad span [{}, {}) for {:?}",
                self.start, self.end, self.label
            )));
        }
        let sr = SAMPLE_RATE as f64;
        Ok(WordSpan {
            label,
            start: (self.start * sr).round() as usize,
            end: (self.end * sr).round() as usize,
        })
    }
}

/// One 1 s analysis window: start time, `[1, 40, 98]` features and label.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub start: f64,
    pub features: Tensor,
    pub label: usize,
}
