//! Catalog of a Speech Commands style directory tree.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audio::{
    label_index, read_wav, synthesize_stream, Dataset, SplitName, StreamRecord, SynthConfig, Waveform, SAMPLE_RATE,
    UNKNOWN,
};
use crate::error::{Result, SanasError};

const NOISE_DIR: &str = "_background_noise_";

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    /// Path relative to the root, `/`-separated.
    pub relative: String,
    pub path: PathBuf,
    pub label: usize,
    pub split: SplitName,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeechCommands {
    pub root: PathBuf,
    pub clips: Vec<Clip>,
    pub noise: Vec<PathBuf>,
    /// Files that could not be parsed as 16 kHz mono 16-bit WAV.
    pub skipped: usize,
}

/// 80:10:10 bucket from the SHA-256 of the relative path.
pub fn split_for_path(relative: &str) -> SplitName {
    let digest = Sha256::digest(relative.as_bytes());
    let bucket = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) % 100;
    match bucket {
        0..=79 => SplitName::Train,
        80..=89 => SplitName::Val,
        _ => SplitName::Test,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SanasError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| SanasError::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"))
}

fn header_ok(path: &Path) -> bool {
    match hound::WavReader::open(path) {
        Ok(r) => {
            let s = r.spec();
            s.channels == 1
                && s.sample_rate == SAMPLE_RATE
                && s.bits_per_sample == 16
                && s.sample_format == hound::SampleFormat::Int
        }
        Err(_) => false,
    }
}

/// Scans `<root>/<word>/*.wav` and `<root>/_background_noise_/*.wav`.
pub fn load_speech_commands(root: &Path) -> Result<SpeechCommands> {
    let mut clips = Vec::new();
    let mut noise = Vec::new();
    let mut skipped = 0;
    let mut per_label = [0usize; crate::audio::NUM_CLASSES];
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let is_noise = name == NOISE_DIR;
        if name.starts_with('_') && !is_noise {
            continue;
        }
        for file in sorted_entries(&dir)?.into_iter().filter(|p| is_wav(p)) {
            if !header_ok(&file) {
                log::warn!("skipping unreadable or malformed WAV {}", file.display());
                skipped += 1;
                continue;
            }
            if is_noise {
                noise.push(file);
                continue;
            }
            let label = match label_index(&name) {
                Some(l) if l < 10 => l,
                _ => UNKNOWN,
            };
            let relative = format!("{name}/{}", file.file_name().and_then(|n| n.to_str()).unwrap_or_default());
            per_label[label] += 1;
            clips.push(Clip {
                split: split_for_path(&relative),
                relative,
                path: file,
                label,
            });
        }
    }
    if noise.is_empty() {
        return Err(SanasError::Input(format!(
            "{}: no usable background noise under {NOISE_DIR}",
            root.display()
        )));
    }
    for (l, n) in per_label.iter().enumerate() {
        if *n == 0 && (l < 10 || l == UNKNOWN) {
            return Err(SanasError::Input(format!(
                "{}: category {:?} has no usable clips",
                root.display(),
                crate::audio::LABELS[l]
            )));
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed files");
    }
    Ok(SpeechCommands {
        root: root.to_path_buf(),
        clips,
        noise,
        skipped,
    })
}

impl SpeechCommands {
    /// One stream per clip, mixed into a random crop of a random noise file.
    /// Every clip gets its own seed drawn in catalog order from `seed`.
    pub fn synthesize(&self, cfg: &SynthConfig, seed: u64, limit: Option<usize>) -> Result<Dataset> {
        cfg.validate()?;
        let noise: Vec<Waveform> = self.noise.iter().map(|p| read_wav(p)).collect::<Result<_>>()?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let clips: Vec<&Clip> = match limit {
            Some(n) => self.clips.iter().take(n).collect(),
            None => self.clips.iter().collect(),
        };
        let seeds: Vec<u64> = clips.iter().map(|_| master.next_u64()).collect();
        let streams: Vec<(SplitName, StreamRecord)> = clips
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(clip, &s)| {
                let mut word = read_wav(&clip.path)?;
                if word.len() > SAMPLE_RATE as usize {
                    word = Waveform::new(word.samples()[..SAMPLE_RATE as usize].to_vec())?;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let pool = &noise[rng.gen_range(0..noise.len())];
                let out = synthesize_stream(pool, &word, clip.label, &mut rng, cfg)
                    .map_err(|e| SanasError::Input(format!("{}: {e}", clip.relative)))?;
                Ok((
                    clip.split,
                    StreamRecord {
                        wave: out.wave,
                        spans: vec![out.span],
                        snr_db: out.snr_db,
                        seed: s,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        let mut d = Dataset::default();
        for (split, s) in streams {
            d.split_mut(split).push(s);
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, LABELS};

    fn tree(words: &[&str]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let clip = Waveform::new((0..8000).map(|i| (i as f64 * 0.1).sin() * 0.2).collect()).unwrap();
        for w in words {
            fs::create_dir_all(dir.path().join(w)).unwrap();
            for k in 0..3 {
                write_wav(&dir.path().join(w).join(format!("c{k}.wav")), &clip).unwrap();
            }
        }
        fs::create_dir_all(dir.path().join(NOISE_DIR)).unwrap();
        let n = Waveform::new((0..16_000 * 4).map(|i| ((i * 31) % 17) as f64 / 170.0 - 0.05).collect()).unwrap();
        write_wav(&dir.path().join(NOISE_DIR).join("white.wav"), &n).unwrap();
        dir
    }

    #[test]
    fn labels_and_unknown() {
        let mut words: Vec<&str> = LABELS[..10].to_vec();
        words.push("marvin");
        let dir = tree(&words);
        fs::write(dir.path().join("yes").join("broken.wav"), b"not a wav").unwrap();
        let cat = load_speech_commands(dir.path()).unwrap();
        assert_eq!(cat.skipped, 1);
        assert!(cat.clips.iter().any(|c| c.relative == "yes/c0.wav" && c.label == 0));
        assert!(cat.clips.iter().any(|c| c.relative == "marvin/c1.wav" && c.label == UNKNOWN));
        let again = load_speech_commands(dir.path()).unwrap();
        assert_eq!(cat, again);
        let d = cat.synthesize(&SynthConfig::default(), 4, Some(6)).unwrap();
        assert_eq!(d.train.len() + d.val.len() + d.test.len(), 6);
    }

    #[test]
    fn missing_category_is_an_error() {
        let dir = tree(&["yes", "no"]);
        assert!(matches!(load_speech_commands(dir.path()), Err(SanasError::Input(_))));
    }

    #[test]
    fn split_is_deterministic_and_roughly_80_10_10() {
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            let p = format!("w/{i}.wav");
            let s = split_for_path(&p);
            assert_eq!(s, split_for_path(&p));
            counts[s as usize] += 1;
        }
        assert!((7700..8300).contains(&counts[0]));
        assert!((800..1200).contains(&counts[1]));
    }
}
