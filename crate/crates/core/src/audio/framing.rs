use crate::audio::{Waveform, WordSpan, BG_NOISE};
use crate::error::{Result, SanasError};

/// Window length in samples (1 s).
pub const WINDOW: usize = 16_000;
/// Hop between consecutive windows in samples (200 ms).
pub const FRAME_HOP: usize = 3_200;

/// Window start positions in samples for a stream of `n_samples`.
pub fn frame_starts(n_samples: usize) -> Result<Vec<usize>> {
    if n_samples < WINDOW {
        return Err(SanasError::Input(format!(
            "stream of {n_samples} samples is shorter than the 1 s window"
        )));
    }
    let count = (n_samples - WINDOW) / FRAME_HOP + 1;
    Ok((0..count).map(|i| i * FRAME_HOP).collect())
}

/// Window start times in seconds.
pub fn frame_stream(wave: &Waveform) -> Result<Vec<f64>> {
    Ok(frame_starts(wave.len())?
        .into_iter()
        .map(|s| s as f64 / crate::audio::SAMPLE_RATE as f64)
        .collect())
}

/// Label of the window starting at sample `window_start`: the word when the
/// window holds at least half of it, otherwise bg-noise. Integer arithmetic.
pub fn label_frame(span: &WordSpan, window_start: usize) -> usize {
    let lo = window_start.max(span.start);
    let hi = (window_start + WINDOW).min(span.end);
    let overlap = hi.saturating_sub(lo);
    let len = span.end - span.start;
    if len > 0 && 2 * overlap >= len {
        span.label
    } else {
        BG_NOISE
    }
}

/// [`label_frame`] over several spans: the first qualifying span wins.
pub fn label_window(spans: &[WordSpan], window_start: usize) -> usize {
    spans
        .iter()
        .map(|s| label_frame(s, window_start))
        .find(|&l| l != BG_NOISE)
        .unwrap_or(BG_NOISE)
}
