use std::path::Path;

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Result, SanasError};

pub(crate) fn quantize(s: f64) -> i16 {
    (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

pub(crate) fn dequantize(q: i16) -> f64 {
    q as f64 / 32767.0
}

fn format_err(path: &Path, e: hound::Error) -> SanasError {
    match e {
        hound::Error::IoError(io) => SanasError::io(path, io),
        other => SanasError::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono 16 kHz 16-bit PCM WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| format_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
        return Err(SanasError::Input(format!(
            "{}: expected mono {} Hz audio, got {} channel(s) at {} Hz",
            path.display(),
            SAMPLE_RATE,
            spec.channels,
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(SanasError::Input(format!(
            "{}: expected 16-bit PCM samples",
            path.display()
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(dequantize))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err(path, e))?;
    Waveform::new(samples)
}

/// Writes 16-bit PCM; samples outside [-1, 1] are clipped.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| format_err(path, e))?;
    for &s in wave.samples() {
        writer.write_sample(quantize(s)).map_err(|e| format_err(path, e))?;
    }
    writer.finalize().map_err(|e| format_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_matches_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = Waveform::new((0..1600).map(|i| (i as f64 * 0.01).sin() * 0.7).collect()).unwrap();
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, wave.quantized());
        for (a, b) in back.samples().iter().zip(wave.samples()) {
            assert!((a - b).abs() <= 0.5 / 32767.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(SanasError::Input(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert!(matches!(err, SanasError::Io { .. }));
    }
}
