//! Two-stem audio ingestion and the train/test split manifest.
//!
//! Clips follow the MIR-1K stereo layout: the accompaniment lives in the left
//! channel and the vocal in the right (swappable via [`ChannelConvention`]).

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{sum_sq, Scalar};

/// Working sample rate; files at any other rate are rejected rather than
/// resampled.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(n: usize, sample_rate: u32) -> Self {
        Waveform {
            samples: vec![T::zero(); n],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Signal energy Σx², accumulated in f64.
    pub fn energy(&self) -> f64 {
        sum_sq(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn all_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }
}

/// Which stereo channel carries which stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelConvention {
    /// MIR-1K layout: left = accompaniment, right = vocal.
    #[default]
    AccompLeftVocalRight,
    VocalLeftAccompRight,
}

impl ChannelConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelConvention::AccompLeftVocalRight => "accomp_left_vocal_right",
            ChannelConvention::VocalLeftAccompRight => "vocal_left_accomp_right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accomp_left_vocal_right" => Some(ChannelConvention::AccompLeftVocalRight),
            "vocal_left_accomp_right" => Some(ChannelConvention::VocalLeftAccompRight),
            _ => None,
        }
    }
}

impl fmt::Display for ChannelConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair<T> {
    pub vocal: Waveform<T>,
    pub accompaniment: Waveform<T>,
    pub clip_id: String,
}

impl<T: Scalar> ClipPair<T> {
    pub fn new(
        vocal: Waveform<T>,
        accompaniment: Waveform<T>,
        clip_id: impl Into<String>,
    ) -> Result<Self> {
        if vocal.len() != accompaniment.len() || vocal.sample_rate != accompaniment.sample_rate {
            return Err(Error::shape(
                "clip pair stems",
                format!("equal length/rate ({} @ {})", vocal.len(), vocal.sample_rate),
                format!(
                    "{} @ {} vs {} @ {}",
                    vocal.len(),
                    vocal.sample_rate,
                    accompaniment.len(),
                    accompaniment.sample_rate
                ),
            ));
        }
        Ok(ClipPair {
            vocal,
            accompaniment,
            clip_id: clip_id.into(),
        })
    }

    /// Cut both stems to exactly `duration_s` seconds from the clip start.
    pub fn truncate(&self, duration_s: f64) -> Result<ClipPair<T>> {
        let n = (duration_s * self.vocal.sample_rate as f64).round() as usize;
        if self.vocal.len() < n {
            return Err(Error::Data(format!(
                "clip `{}` is {} samples, shorter than the requested {} ({duration_s} s)",
                self.clip_id,
                self.vocal.len(),
                n
            )));
        }
        Ok(ClipPair {
            vocal: Waveform::new(self.vocal.samples[..n].to_vec(), self.vocal.sample_rate),
            accompaniment: Waveform::new(
                self.accompaniment.samples[..n].to_vec(),
                self.accompaniment.sample_rate,
            ),
            clip_id: self.clip_id.clone(),
        })
    }
}

/// Equal mixture of the two stems: `0.5·vocal + 0.5·accompaniment`.
///
/// The average (rather than the raw sum) keeps mixtures inside [-1, 1]; a
/// common gain on both stems cancels in every ratio-based metric downstream.
pub fn mix_equal<T: Scalar>(clip: &ClipPair<T>) -> Result<Waveform<T>> {
    if clip.vocal.len() != clip.accompaniment.len() {
        return Err(Error::shape(
            "mix_equal stems",
            clip.vocal.len(),
            clip.accompaniment.len(),
        ));
    }
    let half = T::of_f64(0.5);
    let samples = clip
        .vocal
        .samples
        .iter()
        .zip(&clip.accompaniment.samples)
        .map(|(&v, &a)| half * v + half * a)
        .collect();
    Ok(Waveform::new(samples, clip.vocal.sample_rate))
}

/// Load a two-stem stereo WAV (16-bit PCM or 32-bit float, 16 kHz).
pub fn load_clip_pair<T: Scalar>(path: &Path, convention: ChannelConvention) -> Result<ClipPair<T>> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(Error::format(
            path,
            format!("expected 2 channels, file has {}", spec.channels),
        ));
    }
    if spec.sample_rate != TARGET_SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!(
                "expected {TARGET_SAMPLE_RATE} Hz, file has {} Hz (resampling unsupported)",
                spec.sample_rate
            ),
        ));
    }
    let interleaved: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| T::of_f64(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(T::of_f32))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e))?,
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported sample format {fmt:?}/{bits}-bit (want 16-bit PCM or 32-bit float)"),
            ))
        }
    };
    let n = interleaved.len() / 2;
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for frame in interleaved.chunks_exact(2) {
        left.push(frame[0]);
        right.push(frame[1]);
    }
    if left.iter().chain(&right).any(|x| !x.is_finite()) {
        return Err(Error::format(path, "non-finite sample values"));
    }
    let (accomp, vocal) = match convention {
        ChannelConvention::AccompLeftVocalRight => (left, right),
        ChannelConvention::VocalLeftAccompRight => (right, left),
    };
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ClipPair::new(
        Waveform::new(vocal, TARGET_SAMPLE_RATE),
        Waveform::new(accomp, TARGET_SAMPLE_RATE),
        clip_id,
    )
}

/// Write a mono waveform as 16-bit PCM, clamping to [-1, 1] and scaling by
/// 32767.
pub fn write_wav_mono_i16<T: Scalar>(path: &Path, w: &Waveform<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for &x in &w.samples {
        writer
            .write_sample(quantize_i16(x.as_f64()))
            .map_err(|e| Error::wav(path, e))?;
    }
    writer.finalize().map_err(|e| Error::wav(path, e))
}

/// Write a mono waveform as 32-bit float (lossless for f32 pipelines).
pub fn write_wav_mono_f32<T: Scalar>(path: &Path, w: &Waveform<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for &x in &w.samples {
        writer
            .write_sample(x.as_f32())
            .map_err(|e| Error::wav(path, e))?;
    }
    writer.finalize().map_err(|e| Error::wav(path, e))
}

/// Read a mono WAV written by either writer above.
pub fn read_wav_mono<T: Scalar>(path: &Path) -> Result<Waveform<T>> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono, file has {} channels", spec.channels),
        ));
    }
    let samples: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| T::of_f64(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(T::of_f32))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e))?,
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported sample format {fmt:?}/{bits}-bit"),
            ))
        }
    };
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Write a two-stem clip as a stereo 16-bit PCM WAV under `convention`.
pub fn write_clip_pair<T: Scalar>(
    path: &Path,
    clip: &ClipPair<T>,
    convention: ChannelConvention,
) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: clip.vocal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for i in 0..clip.vocal.len() {
        let v = quantize_i16(clip.vocal.samples[i].as_f64());
        let a = quantize_i16(clip.accompaniment.samples[i].as_f64());
        let (l, r) = match convention {
            ChannelConvention::AccompLeftVocalRight => (a, v),
            ChannelConvention::VocalLeftAccompRight => (v, a),
        };
        writer.write_sample(l).map_err(|e| Error::wav(path, e))?;
        writer.write_sample(r).map_err(|e| Error::wav(path, e))?;
    }
    writer.finalize().map_err(|e| Error::wav(path, e))
}

fn quantize_i16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Reproducible train/test split over clip ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub shuffle_seed: u64,
    pub convention: ChannelConvention,
}

/// Uniformly shuffle `clip_ids` under `seed`; the first `n_train` become the
/// training set, the remainder the test set.
pub fn make_split(clip_ids: &[String], n_train: usize, seed: u64) -> Result<DatasetManifest> {
    if n_train >= clip_ids.len() {
        return Err(Error::param(
            "n_train",
            format!(
                "must be < number of clips ({} requested of {})",
                n_train,
                clip_ids.len()
            ),
        ));
    }
    let mut ids = clip_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test_ids = ids.split_off(n_train);
    Ok(DatasetManifest {
        train_ids: ids,
        test_ids,
        shuffle_seed: seed,
        convention: ChannelConvention::default(),
    })
}

impl DatasetManifest {
    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_ids.len()
    }

    /// Serialize as a line-oriented text file: a `#`-header recording the
    /// seed, split size and channel convention, then `clip_id<TAB>split`
    /// lines in split order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "# seed={} n_train={} channels={}\n",
            self.shuffle_seed,
            self.train_ids.len(),
            self.convention
        ));
        for id in &self.train_ids {
            out.push_str(&format!("{id}\ttrain\n"));
        }
        for id in &self.test_ids {
            out.push_str(&format!("{id}\ttest\n"));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut train_ids = Vec::new();
        let mut test_ids = Vec::new();
        let mut shuffle_seed = None;
        let mut convention = ChannelConvention::default();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    match field.split_once('=') {
                        Some(("seed", v)) => {
                            shuffle_seed = Some(v.parse().map_err(|_| {
                                Error::format(path, format!("bad seed value `{v}`"))
                            })?)
                        }
                        Some(("n_train", _)) => {} // implied by the line count
                        Some(("channels", v)) => {
                            convention = ChannelConvention::parse(v).ok_or_else(|| {
                                Error::format(path, format!("unknown channel convention `{v}`"))
                            })?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            match line.split_once('\t') {
                Some((id, "train")) => train_ids.push(id.to_string()),
                Some((id, "test")) => test_ids.push(id.to_string()),
                _ => {
                    return Err(Error::format(
                        path,
                        format!("unparsable manifest line `{line}`"),
                    ))
                }
            }
        }
        let shuffle_seed =
            shuffle_seed.ok_or_else(|| Error::format(path, "missing `# seed=` header"))?;
        if train_ids.is_empty() && test_ids.is_empty() {
            return Err(Error::format(path, "manifest lists no clips"));
        }
        Ok(DatasetManifest {
            train_ids,
            test_ids,
            shuffle_seed,
            convention,
        })
    }
}
