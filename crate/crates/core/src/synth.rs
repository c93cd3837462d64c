//! Deterministic synthetic two-stem clips: a harmonic "vocal" melody over a
//! chord-pad-plus-bass "accompaniment". Stands in for a karaoke-style corpus
//! when none is on disk; every sample is a pure function of the seed.
//!
//! All partials sit on the 31.25 Hz analysis grid (bin centers of a 512-point
//! transform at 16 kHz), keep a constant phase within each note, and note
//! boundaries land on the 256-sample frame grid, so the spectra are
//! frame-stationary between note changes and a pitch is the same sound image
//! wherever it occurs. Vocal and accompaniment harmonics share many bins by
//! construction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_clip_pair, ChannelConvention, ClipPair, Waveform, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const CLIP_SECONDS: f64 = 2.0;
const STEM_RMS: f64 = 0.0325;
const PEAK_LIMIT: f64 = 0.97;

/// Grid spacing all partials snap to: 16000 / 512.
const GRID_HZ: f64 = 31.25;

/// Pentatonic-style ladder over two octaves, in grid multiples: a
/// just-intonation 1 : 9/8 : 5/4 : 3/2 : 7/4 ladder starting at 250 Hz.
const SCALE: [u32; 10] = [8, 9, 10, 12, 14, 16, 18, 20, 24, 28];

/// Gated note envelope: flat sustain with short raised-cosine edges.
fn note_env(i: usize, len: usize, ramp: usize) -> f64 {
    if i < ramp {
        0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
    } else if i + ramp >= len {
        let k = len - i;
        0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

/// Normalize by the RMS of the sounding portion, so rests do not inflate
/// the loudness of what remains.
fn normalize(samples: &mut [f64], target_rms: f64) {
    let sounding = samples.iter().filter(|x| x.abs() > 0.0).count().max(samples.len() / 4);
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / sounding as f64).sqrt();
    if rms > 0.0 {
        let mut gain = target_rms / rms;
        let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak * gain > PEAK_LIMIT {
            gain = PEAK_LIMIT / peak;
        }
        for x in samples.iter_mut() {
            *x *= gain;
        }
    }
}

/// Add one gated partial at `bin` to `out[start..start+len]`, with the phase
/// tied to absolute clip time so repeated notes repeat exactly.
fn add_partial(
    out: &mut [f64],
    start: usize,
    len: usize,
    bin: f64,
    gain: f64,
    phase0: f64,
    ramp: usize,
    sr: f64,
) {
    let omega = std::f64::consts::TAU * bin * GRID_HZ / sr;
    for i in 0..len {
        let t = (start + i) as f64;
        out[start + i] += gain * note_env(i, len, ramp) * (omega * t + phase0).sin();
    }
}

/// Golden-angle phase for partial `k` of a voice: fixed across the whole
/// corpus so a given pitch is the same sound image in every clip.
fn fixed_phase(voice: u32, k: u32) -> f64 {
    (2.399963229728653 * (voice * 16 + k) as f64) % std::f64::consts::TAU
}

fn synth_vocal(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let note_len = 4096;
    let ramp = (0.004 * sr) as usize;
    let mut degree = rng.gen_range(2..6usize);
    let mut out = vec![0.0; n];
    for note_start in (0..n).step_by(note_len) {
        let len = note_len.min(n - note_start);
        let step = rng.gen_range(-2i32..=2);
        degree = (degree as i32 + step).clamp(0, SCALE.len() as i32 - 1) as usize;
        let silent = rng.gen_bool(0.15);
        let amp = rng.gen_range(0.7..1.0);
        if silent {
            continue;
        }
        let f0_bin = SCALE[degree] as f64;
        for h in 0..5u32 {
            let gain = (h as f64 + 1.0).powf(-1.2);
            add_partial(
                &mut out,
                note_start,
                len,
                (h as f64 + 1.0) * f0_bin,
                amp * gain,
                fixed_phase(0, h),
                ramp,
                sr,
            );
        }
    }
    out
}

fn synth_accomp(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let chord_len = 8192;
    let ramp = (0.004 * sr) as usize;
    // Fixed pad timbre: root + octave + twelfth, each with four harmonics
    // whose upper partials land on the vocal's bins.
    const TONE_GAINS: [f64; 3] = [0.35, 0.18, 0.12];
    for chord_start in (0..n).step_by(chord_len) {
        let len = chord_len.min(n - chord_start);
        let root = rng.gen_range(4..=6u32);
        let amp = rng.gen_range(0.7..1.0);
        for (tone, &mult) in [1u32, 2, 3].iter().enumerate() {
            for h in 1..=4u32 {
                add_partial(
                    &mut out,
                    chord_start,
                    len,
                    (root * mult * h) as f64,
                    amp * TONE_GAINS[tone] * (h as f64).powf(-1.5),
                    fixed_phase(1 + tone as u32, h),
                    ramp,
                    sr,
                );
            }
        }
    }
    // Bass: gated quarter notes two octaves under the pad register.
    let beat = 4096;
    for (k, beat_start) in (0..n).step_by(beat).enumerate() {
        if k % 2 == 1 {
            continue;
        }
        let len = beat.min(n - beat_start);
        add_partial(&mut out, beat_start, len, 2.0, 0.45, fixed_phase(4, 0), ramp, sr);
    }
    out
}

/// Generate one two-stem clip from the given stream.
pub fn synth_clip_pair<T: Scalar>(clip_id: &str, rng: &mut ChaCha8Rng) -> ClipPair<T> {
    let sr = TARGET_SAMPLE_RATE as f64;
    let n = (CLIP_SECONDS * sr) as usize;
    let mut vocal = synth_vocal(rng, n, sr);
    let mut accomp = synth_accomp(rng, n, sr);
    normalize(&mut vocal, STEM_RMS);
    normalize(&mut accomp, STEM_RMS);
    let cast = |v: Vec<f64>| {
        Waveform::new(
            v.into_iter().map(T::of_f64).collect(),
            TARGET_SAMPLE_RATE,
        )
    };
    ClipPair::new(cast(vocal), cast(accomp), clip_id.to_owned())
        .expect("generated stems share length and rate")
}

/// Write `n_clips` stereo clips under `root` and return their ids in order.
pub fn write_synth_dataset(
    root: &Path,
    n_clips: usize,
    seed: u64,
    convention: ChannelConvention,
) -> Result<Vec<String>> {
    if n_clips == 0 {
        return Err(Error::param("n_clips", "must be >= 1"));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let clip_id = format!("synth_{i:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let pair = synth_clip_pair::<f64>(&clip_id, &mut rng);
        write_clip_pair(&root.join(format!("{clip_id}.wav")), &pair, convention)?;
        ids.push(clip_id);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{load_clip_pair, mix_equal};

    fn clip(seed: u64) -> ClipPair<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synth_clip_pair("c", &mut rng)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = clip(3);
        let b = clip(3);
        assert_eq!(a.vocal.samples, b.vocal.samples);
        assert_eq!(a.accompaniment.samples, b.accompaniment.samples);
        assert_ne!(clip(4).vocal.samples, a.vocal.samples);
    }

    #[test]
    fn stems_are_two_seconds_bounded_and_energetic() {
        let c = clip(0);
        assert_eq!(c.vocal.len(), 32000);
        assert_eq!(c.vocal.sample_rate, 16000);
        for stem in [&c.vocal, &c.accompaniment] {
            let peak = stem.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(peak <= PEAK_LIMIT + 1e-12);
            assert!(stem.rms() > 0.01, "rms {}", stem.rms());
        }
        let mix = mix_equal(&c).unwrap();
        assert!(mix.samples.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn dataset_round_trips_through_wav_files() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write_synth_dataset(dir.path(), 3, 9, ChannelConvention::AccompLeftVocalRight)
            .unwrap();
        assert_eq!(ids, vec!["synth_0000", "synth_0001", "synth_0002"]);
        for id in &ids {
            let pair =
                load_clip_pair::<f32>(&dir.path().join(format!("{id}.wav")), ChannelConvention::AccompLeftVocalRight)
                    .unwrap();
            assert_eq!(pair.clip_id, *id);
            assert_eq!(pair.vocal.len(), 32000);
            assert!(pair.vocal.rms() > 0.01);
            assert!(pair.accompaniment.rms() > 0.01);
        }
        // Same seed, same bytes.
        let dir2 = tempfile::tempdir().unwrap();
        write_synth_dataset(dir2.path(), 3, 9, ChannelConvention::AccompLeftVocalRight).unwrap();
        for id in &ids {
            let a = std::fs::read(dir.path().join(format!("{id}.wav"))).unwrap();
            let b = std::fs::read(dir2.path().join(format!("{id}.wav"))).unwrap();
            assert_eq!(a, b);
        }
    }
}
