//! Linear readout from a mixture's sparse code to vocal and accompaniment
//! spectral estimates, plus the second decode-again pass that re-encodes the
//! estimated stems to strip residual artifacts.

use std::path::Path;

use ndarray::{Array3, Array4};
use rayon::prelude::*;

use crate::audio::Waveform;
use crate::dictionary::{load_atoms, save_atoms, AtomFileMeta, AtomRole, Dictionary};
use crate::error::{Error, Result};
use crate::lca::{self, Encoder, LcaParams, SparseCode};
use crate::provenance::Hash32;
use crate::scalar::Scalar;
use crate::spectral::{image_to_waveform, stft, to_sound_image, ImageKind, SoundImage, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Single,
    Denoised,
}

impl Pass {
    pub fn as_str(self) -> &'static str {
        match self {
            Pass::Single => "single",
            Pass::Denoised => "denoised",
        }
    }

    pub fn parse(s: &str) -> Option<Pass> {
        match s {
            "single" => Some(Pass::Single),
            "denoised" => Some(Pass::Denoised),
            _ => None,
        }
    }
}

/// Two unconstrained atom tensors, shaped like the coding dictionary, mapping
/// a mixture's code to the two source spectrograms. Unlike dictionary atoms
/// they are never renormalized — they must absorb source amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutPair<T> {
    pub vocal: Array4<T>,
    pub accomp: Array4<T>,
    pub stride: usize,
    pub kind: ImageKind,
    pub trained: bool,
}

impl<T: Scalar> ReadoutPair<T> {
    /// Both readouts start as copies of the coding dictionary.
    pub fn init(dict: &Dictionary<T>) -> ReadoutPair<T> {
        ReadoutPair {
            vocal: dict.atoms.clone(),
            accomp: dict.atoms.clone(),
            stride: dict.stride,
            kind: dict.kind,
            trained: false,
        }
    }

    pub fn check_against(&self, dict: &Dictionary<T>) -> Result<()> {
        if self.kind != dict.kind
            || self.stride != dict.stride
            || self.vocal.dim() != dict.atoms.dim()
            || self.accomp.dim() != dict.atoms.dim()
        {
            return Err(Error::shape(
                "readouts vs dictionary",
                format!("{} stride {} {:?}", dict.kind, dict.stride, dict.atoms.dim()),
                format!("{} stride {} {:?}", self.kind, self.stride, self.vocal.dim()),
            ));
        }
        Ok(())
    }

    pub fn save(
        &self,
        vocal_path: &Path,
        accomp_path: &Path,
        seed: u64,
        config_hash: Hash32,
    ) -> Result<()> {
        let meta = |role| AtomFileMeta {
            role,
            seed,
            config_hash,
        };
        save_atoms(
            vocal_path,
            &self.vocal,
            self.stride,
            self.kind,
            &meta(AtomRole::VocalReadout),
        )?;
        save_atoms(
            accomp_path,
            &self.accomp,
            self.stride,
            self.kind,
            &meta(AtomRole::AccompReadout),
        )
    }

    /// Load a trained pair; the two files must agree on geometry and
    /// provenance and carry the expected roles.
    pub fn load(vocal_path: &Path, accomp_path: &Path) -> Result<(ReadoutPair<T>, AtomFileMeta)> {
        let (vocal, v_stride, v_kind, v_meta) = load_atoms::<T>(vocal_path)?;
        let (accomp, a_stride, a_kind, a_meta) = load_atoms::<T>(accomp_path)?;
        if v_meta.role != AtomRole::VocalReadout {
            return Err(Error::format(vocal_path, "expected a vocal readout file"));
        }
        if a_meta.role != AtomRole::AccompReadout {
            return Err(Error::format(
                accomp_path,
                "expected an accompaniment readout file",
            ));
        }
        if (v_stride, v_kind, vocal.dim()) != (a_stride, a_kind, accomp.dim()) {
            return Err(Error::shape(
                "readout pair geometry",
                format!("{v_kind} stride {v_stride} {:?}", vocal.dim()),
                format!("{a_kind} stride {a_stride} {:?}", accomp.dim()),
            ));
        }
        if v_meta.config_hash != a_meta.config_hash || v_meta.seed != a_meta.seed {
            return Err(Error::Provenance(format!(
                "readout files {} and {} come from different runs",
                vocal_path.display(),
                accomp_path.display()
            )));
        }
        Ok((
            ReadoutPair {
                vocal,
                accomp,
                stride: v_stride,
                kind: v_kind,
                trained: true,
            },
            v_meta,
        ))
    }
}

/// One training clip, all three images in the same representation.
#[derive(Debug, Clone)]
pub struct TrainingTriple<T> {
    pub mixture: SoundImage<T>,
    pub vocal: SoundImage<T>,
    pub accomp: SoundImage<T>,
    pub clip_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct ReadoutReport {
    /// Mean ½‖V − Φᵥa‖² + ½‖N − Φₙa‖² per epoch, measured before each
    /// clip's update.
    pub per_epoch_loss: Vec<f64>,
}

/// One SGD-with-momentum step on a readout tensor toward `target`; returns
/// the pre-update loss ½‖target − Φa‖².
fn sgdm_step<T: Scalar>(
    atoms: &mut Array4<T>,
    velocity: &mut Array4<T>,
    target: &SoundImage<T>,
    code: &SparseCode<T>,
    stride: usize,
    lr: f64,
    momentum: f64,
    scratch: &mut Array3<T>,
) -> f64 {
    lca::place_atoms(atoms, stride, code, scratch);
    let frames = scratch.dim().2;
    {
        let res = scratch.as_slice_mut().expect("scratch is contiguous");
        for (r, t) in res.iter_mut().zip(target.data.iter()) {
            *r = *t - *r;
        }
    }
    let res = scratch.as_slice().unwrap();
    let loss = 0.5 * res.iter().map(|r| r.as_f64().powi(2)).sum::<f64>();

    let (n_features, channels, bins, patch) = atoms.dim();
    let patch_len = channels * bins * patch;
    let vel = velocity.as_slice_mut().expect("velocity is contiguous");
    let mom = T::of_f64(momentum);
    for v in vel.iter_mut() {
        *v = mom * *v;
    }
    for f in 0..n_features {
        let vf = &mut vel[f * patch_len..(f + 1) * patch_len];
        for (p, &av) in code.a.row(f).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let t0 = p * stride;
            for ck in 0..channels * bins {
                let src = &res[ck * frames + t0..ck * frames + t0 + patch];
                let dst = &mut vf[ck * patch..(ck + 1) * patch];
                for j in 0..patch {
                    dst[j] += av * src[j];
                }
            }
        }
    }
    let rate = T::of_f64(lr);
    let atoms_flat = atoms.as_slice_mut().expect("atoms are contiguous");
    for (a, &v) in atoms_flat.iter_mut().zip(vel.iter()) {
        *a += rate * v;
    }
    loss
}

/// Adapt both readouts over the training set. Each mixture's code is
/// computed once against the frozen dictionary and reused every epoch; clips
/// are visited in the given order, with a constant learning rate.
pub fn train_readouts<T: Scalar>(
    triples: &[TrainingTriple<T>],
    dict: &Dictionary<T>,
    lca_params: &LcaParams,
    epochs: usize,
    learning_rate: f64,
    momentum: f64,
) -> Result<(ReadoutPair<T>, ReadoutReport)> {
    if epochs == 0 {
        return Err(Error::param("epochs", "must be >= 1"));
    }
    if !(learning_rate > 0.0) {
        return Err(Error::param("learning_rate", "must be > 0"));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::param("momentum", "must be in [0, 1)"));
    }
    let first = triples
        .first()
        .ok_or_else(|| Error::Data("readout training needs at least one clip".into()))?;
    for t in triples {
        for img in [&t.mixture, &t.vocal, &t.accomp] {
            if img.kind != first.mixture.kind || img.data.dim() != first.mixture.data.dim() {
                return Err(Error::shape(
                    "readout training images",
                    format!("{} {:?}", first.mixture.kind, first.mixture.data.dim()),
                    format!("{} {:?} (clip {})", img.kind, img.data.dim(), t.clip_id),
                ));
            }
        }
    }
    let encoder = Encoder::new(dict, lca_params)?;
    dict.geometry_for(&first.mixture)?;
    let codes: Vec<SparseCode<T>> = triples
        .par_iter()
        .map(|t| encoder.encode(&t.mixture).map(|out| out.code))
        .collect::<Result<_>>()?;

    let mut readouts = ReadoutPair::init(dict);
    let mut vel_v: Array4<T> = Array4::zeros(dict.atoms.dim());
    let mut vel_a: Array4<T> = Array4::zeros(dict.atoms.dim());
    let mut scratch: Array3<T> = Array3::zeros(first.mixture.data.dim());
    let mut report = ReadoutReport::default();
    for _ in 0..epochs {
        let mut loss_sum = 0.0;
        for (t, code) in triples.iter().zip(&codes) {
            loss_sum += sgdm_step(
                &mut readouts.vocal,
                &mut vel_v,
                &t.vocal,
                code,
                dict.stride,
                learning_rate,
                momentum,
                &mut scratch,
            );
            loss_sum += sgdm_step(
                &mut readouts.accomp,
                &mut vel_a,
                &t.accomp,
                code,
                dict.stride,
                learning_rate,
                momentum,
                &mut scratch,
            );
        }
        report.per_epoch_loss.push(loss_sum / triples.len() as f64);
    }
    if readouts.vocal.iter().chain(readouts.accomp.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "readout training diverged to non-finite atoms; lower the learning rate".into(),
        ));
    }
    readouts.trained = true;
    Ok((readouts, report))
}

/// Place both readouts with one code; shapes follow `reference`.
pub fn readout_images<T: Scalar>(
    code: &SparseCode<T>,
    readouts: &ReadoutPair<T>,
    reference: &SoundImage<T>,
) -> Result<(SoundImage<T>, SoundImage<T>)> {
    let (_, channels, bins, patch) = readouts.vocal.dim();
    let (rc, rk, rt) = reference.data.dim();
    if (rc, rk) != (channels, bins) || reference.kind != readouts.kind || rt < patch {
        return Err(Error::shape(
            "readout vs reference image",
            format!("{} {channels}x{bins}x(>={patch})", readouts.kind),
            format!("{} {rc}x{rk}x{rt}", reference.kind),
        ));
    }
    let mut vocal = SoundImage::zeros_like(reference);
    let mut accomp = SoundImage::zeros_like(reference);
    lca::place_atoms(&readouts.vocal, readouts.stride, code, &mut vocal.data);
    lca::place_atoms(&readouts.accomp, readouts.stride, code, &mut accomp.data);
    Ok((vocal, accomp))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StemDiagnostics {
    /// Negative magnitude cells clamped during inversion, per stem.
    pub clamped_vocal: usize,
    pub clamped_accomp: usize,
    /// ‖(V̂+N̂) − reference‖/‖reference‖ in image space, where the reference
    /// is the mixture image (single pass) or the incoming stem-image sum
    /// (decode-again pass). The model does not constrain this sum.
    pub image_sum_mismatch: f64,
}

#[derive(Debug, Clone)]
pub struct StemEstimate<T> {
    pub vocal: Waveform<T>,
    pub accompaniment: Waveform<T>,
    pub clip_id: String,
    pub kind: ImageKind,
    pub pass: Pass,
    pub diagnostics: StemDiagnostics,
}

fn sum_mismatch<T: Scalar>(
    vocal: &SoundImage<T>,
    accomp: &SoundImage<T>,
    reference: &SoundImage<T>,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((v, a), m) in vocal
        .data
        .iter()
        .zip(accomp.data.iter())
        .zip(reference.data.iter())
    {
        let m = m.as_f64();
        num += (v.as_f64() + a.as_f64() - m).powi(2);
        den += m * m;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

fn check_separable<T: Scalar>(
    readouts: &ReadoutPair<T>,
    dict: &Dictionary<T>,
    cfg: &StftConfig,
) -> Result<()> {
    readouts.check_against(dict)?;
    if !readouts.trained {
        return Err(Error::Usage(
            "readouts are untrained (still copies of the coding dictionary); run readout training first".into(),
        ));
    }
    if cfg.n_freq_bins != dict.n_freq_bins() || !readouts.kind.consistent_with(cfg) {
        return Err(Error::shape(
            "transform config vs dictionary",
            format!("{} bins for {}", dict.n_freq_bins(), dict.kind),
            format!("{} bins", cfg.n_freq_bins),
        ));
    }
    Ok(())
}

/// Separate one mixture with a prebuilt encoder (cheap to call per clip).
pub fn separate_with<T: Scalar>(
    encoder: &Encoder<'_, T>,
    readouts: &ReadoutPair<T>,
    cfg: &StftConfig,
    mix: &Waveform<T>,
    clip_id: &str,
) -> Result<StemEstimate<T>> {
    let dict = encoder.dictionary();
    check_separable(readouts, dict, cfg)?;
    let spec = stft(mix, cfg)?;
    let img = to_sound_image(&spec, readouts.kind)?;
    let out = encoder.encode(&img)?;
    let (v_img, a_img) = readout_images(&out.code, readouts, &img)?;
    let mismatch = sum_mismatch(&v_img, &a_img, &img);
    let phase = match readouts.kind {
        ImageKind::PhaseRich => None,
        ImageKind::Magnitude | ImageKind::MagnitudeDouble => Some(&spec),
    };
    let (vocal, stats_v) = image_to_waveform(&v_img, phase)?;
    let (accomp, stats_a) = image_to_waveform(&a_img, phase)?;
    Ok(StemEstimate {
        vocal,
        accompaniment: accomp,
        clip_id: clip_id.to_owned(),
        kind: readouts.kind,
        pass: Pass::Single,
        diagnostics: StemDiagnostics {
            clamped_vocal: stats_v.clamped_cells,
            clamped_accomp: stats_a.clamped_cells,
            image_sum_mismatch: mismatch,
        },
    })
}

pub fn separate<T: Scalar>(
    mix: &Waveform<T>,
    clip_id: &str,
    cfg: &StftConfig,
    dict: &Dictionary<T>,
    readouts: &ReadoutPair<T>,
    lca_params: &LcaParams,
) -> Result<StemEstimate<T>> {
    let encoder = Encoder::new(dict, lca_params)?;
    separate_with(&encoder, readouts, cfg, mix, clip_id)
}

/// Run each estimated stem through the code-and-read-out loop once more:
/// vocal through the vocal readout only, accompaniment through the
/// accompaniment readout only.
pub fn denoise_with<T: Scalar>(
    encoder: &Encoder<'_, T>,
    readouts: &ReadoutPair<T>,
    cfg: &StftConfig,
    est: &StemEstimate<T>,
) -> Result<StemEstimate<T>> {
    if est.pass == Pass::Denoised {
        return Err(Error::Usage(format!(
            "stems for clip {} have already been through the decode-again pass",
            est.clip_id
        )));
    }
    let dict = encoder.dictionary();
    check_separable(readouts, dict, cfg)?;
    if est.kind != readouts.kind {
        return Err(Error::shape("stem representation", readouts.kind, est.kind));
    }
    let mut in_sum: Option<SoundImage<T>> = None;
    let mut outputs: Vec<(Waveform<T>, usize)> = Vec::with_capacity(2);
    let mut out_images: Vec<SoundImage<T>> = Vec::with_capacity(2);
    for (stem, atoms) in [(&est.vocal, &readouts.vocal), (&est.accompaniment, &readouts.accomp)] {
        let spec = stft(stem, cfg)?;
        let img = to_sound_image(&spec, readouts.kind)?;
        match &mut in_sum {
            None => in_sum = Some(img.clone()),
            Some(acc) => acc.data += &img.data,
        }
        let out = encoder.encode(&img)?;
        let mut decoded = SoundImage::zeros_like(&img);
        lca::place_atoms(atoms, readouts.stride, &out.code, &mut decoded.data);
        let phase = match readouts.kind {
            ImageKind::PhaseRich => None,
            ImageKind::Magnitude | ImageKind::MagnitudeDouble => Some(&spec),
        };
        let (wav, stats) = image_to_waveform(&decoded, phase)?;
        outputs.push((wav, stats.clamped_cells));
        out_images.push(decoded);
    }
    let mismatch = sum_mismatch(&out_images[0], &out_images[1], &in_sum.unwrap());
    let (accomp, clamped_a) = outputs.pop().unwrap();
    let (vocal, clamped_v) = outputs.pop().unwrap();
    Ok(StemEstimate {
        vocal,
        accompaniment: accomp,
        clip_id: est.clip_id.clone(),
        kind: est.kind,
        pass: Pass::Denoised,
        diagnostics: StemDiagnostics {
            clamped_vocal: clamped_v,
            clamped_accomp: clamped_a,
            image_sum_mismatch: mismatch,
        },
    })
}

pub fn denoise_pass<T: Scalar>(
    est: &StemEstimate<T>,
    cfg: &StftConfig,
    dict: &Dictionary<T>,
    readouts: &ReadoutPair<T>,
    lca_params: &LcaParams,
) -> Result<StemEstimate<T>> {
    let encoder = Encoder::new(dict, lca_params)?;
    denoise_with(&encoder, readouts, cfg, est)
}

/// `(vocal, accomp)` stem file names: `<clip>.<stem>.<condition>.<pass>.wav`.
pub fn stem_filenames(clip_id: &str, condition_label: &str, pass: Pass) -> (String, String) {
    (
        format!("{clip_id}.vocal.{condition_label}.{}.wav", pass.as_str()),
        format!("{clip_id}.accomp.{condition_label}.{}.wav", pass.as_str()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::init_dictionary;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> StftConfig {
        StftConfig::custom(8, 64, 18, 16000).unwrap()
    }

    fn toy_image(seed: u64, cfg: &StftConfig, kind: ImageKind) -> SoundImage<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = ndarray::Array3::from_shape_fn(
            (kind.channels(), cfg.n_freq_bins, cfg.n_time_frames),
            |_| rng.gen_range(0.01..1.0),
        );
        SoundImage::from_parts(kind, data, *cfg).unwrap()
    }

    fn toy_wave(seed: u64, cfg: &StftConfig) -> Waveform<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..cfg.n_samples).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            cfg.sample_rate,
        )
    }

    #[test]
    fn init_copies_dictionary_and_is_untrained() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(5, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 2).unwrap();
        let ro = ReadoutPair::init(&dict);
        assert_eq!(ro.vocal, dict.atoms);
        assert_eq!(ro.accomp, dict.atoms);
        assert!(!ro.trained);
        let lca_params = LcaParams::default().with_lambda(0.2).with_steps(10);
        let err = separate(&toy_wave(0, &cfg), "c", &cfg, &dict, &ro, &lca_params).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn readout_placement_is_linear_in_the_code() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(4, 2, cfg.n_freq_bins, 3, 2, ImageKind::PhaseRich, 7).unwrap();
        let mut ro = ReadoutPair::init(&dict);
        ro.vocal.mapv_inplace(|v| 1.5 * v + 0.1);
        let reference = toy_image(3, &cfg, ImageKind::PhaseRich);
        let geom = dict.geometry_for(&reference).unwrap();
        let mut a = Array2::zeros((geom.n_features, geom.n_positions));
        a[(0, 1)] = 0.6;
        a[(3, 4)] = -1.2;
        let code = SparseCode { a: a.clone(), geometry: geom };
        let scaled = SparseCode { a: a.mapv(|v| 2.5 * v), geometry: geom };
        let (v1, a1) = readout_images(&code, &ro, &reference).unwrap();
        let (v2, a2) = readout_images(&scaled, &ro, &reference).unwrap();
        for (x1, x2) in v1.data.iter().zip(v2.data.iter()) {
            assert!((2.5 * x1 - x2).abs() < 1e-12);
        }
        for (x1, x2) in a1.data.iter().zip(a2.data.iter()) {
            assert!((2.5 * x1 - x2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mixture_separates_to_zero_stems() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(4, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 1).unwrap();
        let mut ro = ReadoutPair::init(&dict);
        ro.trained = true;
        let lca_params = LcaParams::default().with_lambda(0.3).with_steps(15);
        let est = separate(
            &Waveform::zeros(cfg.n_samples, cfg.sample_rate),
            "silence",
            &cfg,
            &dict,
            &ro,
            &lca_params,
        )
        .unwrap();
        assert!(est.vocal.samples.iter().all(|&x| x == 0.0));
        assert!(est.accompaniment.samples.iter().all(|&x| x == 0.0));
        assert_eq!(est.vocal.len(), cfg.n_samples);
        assert_eq!(est.pass, Pass::Single);

        let denoised = denoise_pass(&est, &cfg, &dict, &ro, &lca_params).unwrap();
        assert!(denoised.vocal.samples.iter().all(|&x| x == 0.0));
        assert_eq!(denoised.pass, Pass::Denoised);
        assert!(matches!(
            denoise_pass(&denoised, &cfg, &dict, &ro, &lca_params),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_vocal_residual_freezes_the_vocal_readout() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(1, 2, cfg.n_freq_bins, 3, 2, ImageKind::PhaseRich, 4).unwrap();
        let mixture = toy_image(5, &cfg, ImageKind::PhaseRich);
        let lca_params = LcaParams::default().with_lambda(0.1).with_steps(60);
        let out = lca::lca_encode(&mixture, &dict, &lca_params).unwrap();
        assert!(out.code.nnz() > 0);
        // Vocal target equals the dictionary's own decode of the mixture code,
        // so the vocal gradient vanishes at initialization and stays zero.
        let vocal = lca::reconstruct(&dict, &out.code, &mixture).unwrap();
        let accomp = SoundImage::zeros_like(&mixture);
        let triples = vec![TrainingTriple {
            mixture,
            vocal,
            accomp,
            clip_id: "t".into(),
        }];
        let (ro, report) = train_readouts(&triples, &dict, &lca_params, 3, 0.05, 0.9).unwrap();
        assert!(ro.trained);
        assert_eq!(ro.vocal, dict.atoms);
        assert_ne!(ro.accomp, dict.atoms);
        assert_eq!(report.per_epoch_loss.len(), 3);
    }

    #[test]
    fn training_reduces_loss_on_planted_targets() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(6, 2, cfg.n_freq_bins, 3, 2, ImageKind::PhaseRich, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let planted_v = dict.atoms.mapv(|v| v * rng.gen_range(0.5..2.0));
        let planted_a = dict.atoms.mapv(|v| v * rng.gen_range(0.5..2.0));
        let lca_params = LcaParams::default().with_lambda(0.15).with_steps(50);
        let encoder = Encoder::new(&dict, &lca_params).unwrap();
        let triples: Vec<TrainingTriple<f64>> = (0..4)
            .map(|s| {
                let mixture = toy_image(100 + s, &cfg, ImageKind::PhaseRich);
                let code = encoder.encode(&mixture).unwrap().code;
                let mut vocal = SoundImage::zeros_like(&mixture);
                let mut accomp = SoundImage::zeros_like(&mixture);
                lca::place_atoms(&planted_v, dict.stride, &code, &mut vocal.data);
                lca::place_atoms(&planted_a, dict.stride, &code, &mut accomp.data);
                TrainingTriple {
                    mixture,
                    vocal,
                    accomp,
                    clip_id: format!("t{s}"),
                }
            })
            .collect();
        let (_, report) = train_readouts(&triples, &dict, &lca_params, 60, 0.05, 0.9).unwrap();
        let first = report.per_epoch_loss[0];
        let last = *report.per_epoch_loss.last().unwrap();
        assert!(last < 0.05 * first, "loss {first} -> {last}");
    }

    #[test]
    fn magnitude_stems_borrow_mixture_phase() {
        let cfg = StftConfig::base();
        let dict = init_dictionary::<f32>(8, 1, cfg.n_freq_bins, 4, 2, ImageKind::Magnitude, 3).unwrap();
        let mut ro = ReadoutPair::init(&dict);
        ro.trained = true;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mix = Waveform::new(
            (0..cfg.n_samples).map(|_| rng.gen_range(-0.3..0.3)).collect(),
            cfg.sample_rate,
        );
        let lca_params = LcaParams::default().with_lambda(0.5).with_steps(10);
        let est = separate(&mix, "m", &cfg, &dict, &ro, &lca_params).unwrap();
        assert_eq!(est.vocal.len(), cfg.n_samples);
        assert!(est.vocal.all_finite() && est.accompaniment.all_finite());
    }

    #[test]
    fn stem_filenames_follow_the_convention() {
        let (v, a) = stem_filenames("clip_007", "phase", Pass::Single);
        assert_eq!(v, "clip_007.vocal.phase.single.wav");
        assert_eq!(a, "clip_007.accomp.phase.single.wav");
        let (v, _) = stem_filenames("x", "no_phase_x2", Pass::Denoised);
        assert_eq!(v, "x.vocal.no_phase_x2.denoised.wav");
    }

    #[test]
    fn readout_files_round_trip_with_roles() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f32>(3, 2, cfg.n_freq_bins, 2, 1, ImageKind::PhaseRich, 6).unwrap();
        let mut ro = ReadoutPair::init(&dict);
        ro.vocal.mapv_inplace(|v| v * 2.0);
        ro.trained = true;
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("v.ro");
        let ap = dir.path().join("a.ro");
        ro.save(&vp, &ap, 11, [3u8; 32]).unwrap();
        let (back, meta) = ReadoutPair::<f32>::load(&vp, &ap).unwrap();
        assert_eq!(back.vocal, ro.vocal);
        assert_eq!(back.accomp, ro.accomp);
        assert!(back.trained);
        assert_eq!(meta.seed, 11);
        // Swapped paths put the wrong roles first.
        assert!(ReadoutPair::<f32>::load(&ap, &vp).is_err());
    }
}
