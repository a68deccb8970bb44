//! Post-processing of per-window posteriors into keyword detections.

use serde::{Deserialize, Serialize};

use crate::audio::{WordSpan, BG_NOISE, UNKNOWN};
use crate::error::{Result, SanasError};

/// Seconds between consecutive windows.
const HOP_SECS: f64 = 0.2;
/// Offset of a window's centre from its start.
const HALF_WINDOW: f64 = 0.5;
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamingParams {
    /// Trailing smoothing window, seconds.
    pub smoothing: f64,
    pub threshold: f64,
    /// Minimum spacing between two detections, seconds.
    pub suppression: f64,
    /// Maximum distance between a detection and a word centre, seconds.
    pub tolerance: f64,
}

impl Default for StreamingParams {
    fn default() -> Self {
        StreamingParams {
            smoothing: 0.8,
            threshold: 0.5,
            suppression: 1.5,
            tolerance: 0.75,
        }
    }
}

impl StreamingParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.smoothing, self.threshold, self.suppression, self.tolerance];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SanasError::Config("streaming parameters must all be positive".into()));
        }
        Ok(())
    }

    /// Number of windows averaged, at least one.
    pub fn smoothing_frames(&self) -> usize {
        ((self.smoothing / HOP_SECS + TIME_EPS).floor() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time: f64,
    pub label: usize,
    pub score: f64,
}

/// Detections from per-window class posteriors at a 200 ms hop.
pub fn streaming_decode(posteriors: &[Vec<f64>], params: &StreamingParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let n = params.smoothing_frames();
    let mut out: Vec<Detection> = Vec::new();
    let mut last: Option<f64> = None;
    for t in 0..posteriors.len() {
        let lo = (t + 1).saturating_sub(n);
        let k = posteriors[t].len();
        let mut avg = vec![0.0; k];
        for p in &posteriors[lo..=t] {
            if p.len() != k {
                return Err(SanasError::Input("posterior vectors differ in length".into()));
            }
            for (a, v) in avg.iter_mut().zip(p) {
                *a += v;
            }
        }
        let count = (t + 1 - lo) as f64;
        let best = (0..k)
            .filter(|&c| c != BG_NOISE && c != UNKNOWN)
            .map(|c| (c, avg[c] / count))
            .fold(None, |acc: Option<(usize, f64)>, (c, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((c, s)),
            });
        let Some((label, score)) = best else { continue };
        let time = t as f64 * HOP_SECS + HALF_WINDOW;
        let free = last.is_none_or(|l| time - l >= params.suppression - TIME_EPS);
        if score >= params.threshold && free {
            out.push(Detection { time, label, score });
            last = Some(time);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamingReport {
    pub words: usize,
    pub detections: usize,
    pub matched: usize,
    pub correct: usize,
    pub wrong: usize,
    pub false_alarms: usize,
    pub matched_pct: f64,
    pub correct_pct: f64,
    pub wrong_pct: f64,
    pub fa_pct: f64,
    pub params: StreamingParams,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Greedy time-ordered one-to-one matching of detections to word centres.
pub fn streaming_metrics(
    detections: &[Detection],
    spans: &[WordSpan],
    params: &StreamingParams,
) -> Result<StreamingReport> {
    params.validate()?;
    let mut words: Vec<&WordSpan> = spans.iter().collect();
    words.sort_by_key(|s| (s.start, s.end));
    for w in words.windows(2) {
        if w[1].start < w[0].end {
            return Err(SanasError::Input(format!(
                "word spans overlap at {:.3} s",
                w[1].start_secs()
            )));
        }
    }
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut used = vec![false; words.len()];
    let (mut correct, mut wrong, mut fa) = (0, 0, 0);
    for d in order {
        let hit = (0..words.len())
            .filter(|&i| !used[i] && (d.time - words[i].center_secs()).abs() <= params.tolerance + TIME_EPS)
            .min_by(|&a, &b| {
                let da = (d.time - words[a].center_secs()).abs();
                let db = (d.time - words[b].center_secs()).abs();
                da.total_cmp(&db)
            });
        match hit {
            Some(i) => {
                used[i] = true;
                if words[i].label == d.label {
                    correct += 1;
                } else {
                    wrong += 1;
                }
            }
            None => fa += 1,
        }
    }
    let matched = correct + wrong;
    Ok(StreamingReport {
        words: words.len(),
        detections: detections.len(),
        matched,
        correct,
        wrong,
        false_alarms: fa,
        matched_pct: pct(matched, words.len()),
        correct_pct: pct(correct, words.len()),
        wrong_pct: pct(wrong, words.len()),
        fa_pct: pct(fa, detections.len()),
        params: *params,
    })
}
