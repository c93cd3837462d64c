//! Experiment orchestration: the threshold-selection sweep and the
//! four-condition comparison (phase-rich, magnitude, double-resolution
//! magnitude, and the decode-again pass over the phase-rich stems), with the
//! CSV/report emitters.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{load_clip_pair, mix_equal, ClipPair, DatasetManifest};
use crate::bss::{self, AggregateScores, ClipScores};
use crate::dictionary::{train_dictionary, DictShape, Dictionary, LearnParams, TrainReport};
use crate::error::{Error, Result};
use crate::lca::{Encoder, LcaParams};
use crate::scalar::Scalar;
use crate::separation::{
    denoise_with, separate_with, train_readouts, ReadoutPair, ReadoutReport, StemEstimate,
    TrainingTriple,
};
use crate::spectral::{stft, to_sound_image, ImageKind, SoundImage, StftConfig};

pub const CLIP_SECONDS: f64 = 2.0;
pub const DEFAULT_SWEEP_LAMBDAS: [f64; 6] = [0.3, 0.4, 0.5, 0.625, 0.75, 1.0];
/// Noise level for the sweep, as a fraction of each input's RMS.
pub const DEFAULT_NOISE_FACTOR: f64 = 0.1;

/// The four experimental conditions compared on the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Phase,
    NoPhase,
    NoPhaseX2,
    Denoised,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Phase,
        Condition::NoPhase,
        Condition::NoPhaseX2,
        Condition::Denoised,
    ];

    pub fn kind(self) -> ImageKind {
        match self {
            Condition::Phase | Condition::Denoised => ImageKind::PhaseRich,
            Condition::NoPhase => ImageKind::Magnitude,
            Condition::NoPhaseX2 => ImageKind::MagnitudeDouble,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::Phase => "phase",
            Condition::NoPhase => "no_phase",
            Condition::NoPhaseX2 => "no_phase_x2",
            Condition::Denoised => "denoised",
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.label() == s)
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Every pipeline hyperparameter, resolvable from the two scale presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub n_train: usize,
    pub n_test: usize,
    pub n_atoms: usize,
    /// Temporal atom extent for the 512-point representations.
    pub patch_frames: usize,
    /// Temporal atom extent for the 1024-point representation (same 128 ms).
    pub patch_frames_double: usize,
    pub stride: usize,
    pub lambda: f64,
    pub lca_steps: usize,
    pub dt_over_tau: f64,
    pub dict_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub readout_epochs: usize,
    pub seed: u64,
}

impl RunParams {
    /// Small preset sized for CI and laptops.
    pub fn desk() -> RunParams {
        RunParams {
            n_train: 40,
            n_test: 10,
            n_atoms: 512,
            patch_frames: 8,
            patch_frames_double: 4,
            stride: 2,
            lambda: 0.625,
            lca_steps: 200,
            dt_over_tau: 0.05,
            dict_epochs: 1,
            learning_rate: 2.5e-4,
            momentum: 0.9,
            readout_epochs: 40,
            seed: 0,
        }
    }

    /// Full-size preset (2× overcomplete dictionary, long inference).
    pub fn paper() -> RunParams {
        RunParams {
            n_train: 950,
            n_test: 50,
            n_atoms: 8192,
            lca_steps: 1000,
            dict_epochs: 4,
            ..RunParams::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_atoms", self.n_atoms),
            ("patch_frames", self.patch_frames),
            ("patch_frames_double", self.patch_frames_double),
            ("stride", self.stride),
            ("dict_epochs", self.dict_epochs),
            ("readout_epochs", self.readout_epochs),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        self.lca().validate()?;
        self.learn().validate()
    }

    pub fn lca(&self) -> LcaParams {
        LcaParams {
            lambda: self.lambda,
            n_steps: self.lca_steps,
            dt_over_tau: self.dt_over_tau,
            history: false,
        }
    }

    pub fn learn(&self) -> LearnParams {
        LearnParams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.dict_epochs,
            display_period: self.lca_steps,
            rng_seed: self.seed,
        }
    }

    pub fn dict_shape(&self, kind: ImageKind) -> DictShape {
        DictShape {
            n_features: self.n_atoms,
            patch_frames: match kind {
                ImageKind::MagnitudeDouble => self.patch_frames_double,
                _ => self.patch_frames,
            },
            stride: self.stride,
        }
    }
}

/// Load and truncate the manifest's clips from `<root>/<id>.wav`.
pub fn load_dataset<T: Scalar>(
    root: &Path,
    manifest: &DatasetManifest,
) -> Result<(Vec<ClipPair<T>>, Vec<ClipPair<T>>)> {
    let load = |ids: &[String]| -> Result<Vec<ClipPair<T>>> {
        ids.iter()
            .map(|id| {
                load_clip_pair::<T>(&root.join(format!("{id}.wav")), manifest.convention)?
                    .truncate(CLIP_SECONDS)
            })
            .collect()
    };
    Ok((load(&manifest.train_ids)?, load(&manifest.test_ids)?))
}

/// Equal-gain mixture images for a set of clips.
pub fn mixture_images<T: Scalar>(
    pairs: &[ClipPair<T>],
    kind: ImageKind,
) -> Result<Vec<SoundImage<T>>> {
    let cfg = StftConfig::for_kind(kind);
    pairs
        .par_iter()
        .map(|p| to_sound_image(&stft(&mix_equal(p)?, &cfg)?, kind))
        .collect()
}

/// Mixture/vocal/accompaniment image triples for readout training.
pub fn training_triples<T: Scalar>(
    pairs: &[ClipPair<T>],
    kind: ImageKind,
) -> Result<Vec<TrainingTriple<T>>> {
    let cfg = StftConfig::for_kind(kind);
    pairs
        .par_iter()
        .map(|p| {
            let image = |w| -> Result<SoundImage<T>> { to_sound_image(&stft(w, &cfg)?, kind) };
            Ok(TrainingTriple {
                mixture: image(&mix_equal(p)?)?,
                vocal: image(&p.vocal)?,
                accomp: image(&p.accompaniment)?,
                clip_id: p.clip_id.clone(),
            })
        })
        .collect()
}

/// One row of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub mean_sparsity: f64,
    /// ‖clean − reconstruction-from-noisy‖ / ‖clean‖, averaged over inputs.
    pub denoise_error: f64,
}

/// For each λ: train a dictionary on the clean images, corrupt the images
/// with Gaussian noise (σ = `noise_factor` × each image's RMS), encode the
/// noisy versions, and measure sparsity plus reconstruction error against
/// the clean originals. The same noise draw is reused across λ.
pub fn threshold_sweep<T: Scalar>(
    images: &[SoundImage<T>],
    shape: DictShape,
    learn: &LearnParams,
    lca_params: &LcaParams,
    lambdas: &[f64],
    noise_factor: f64,
    noise_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() {
        return Err(Error::param("lambdas", "grid must be non-empty"));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::param("lambdas", format!("{bad} is not positive")));
    }
    if images.is_empty() {
        return Err(Error::Data("sweep needs at least one image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noisy: Vec<SoundImage<T>> = images
        .iter()
        .map(|img| {
            let sigma = noise_factor * img.rms();
            let mut n = img.clone();
            for v in n.data.iter_mut() {
                *v += T::of_f64(sigma) * T::standard_normal(&mut rng);
            }
            n
        })
        .collect();

    lambdas
        .iter()
        .map(|&lambda| {
            let lca_l = lca_params.with_lambda(lambda);
            let (dict, _) = train_dictionary(images, shape, learn, &lca_l)?;
            let encoder = Encoder::new(&dict, &lca_l)?;
            let stats: Vec<(f64, f64)> = noisy
                .par_iter()
                .zip(images.par_iter())
                .map(|(noisy_img, clean)| {
                    let out = encoder.encode(noisy_img)?;
                    let recon = crate::lca::reconstruct(&dict, &out.code, noisy_img)?;
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (c, r) in clean.data.iter().zip(recon.data.iter()) {
                        num += (c.as_f64() - r.as_f64()).powi(2);
                        den += c.as_f64().powi(2);
                    }
                    let err = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
                    Ok((crate::lca::sparsity(&out.code), err))
                })
                .collect::<Result<_>>()?;
            let n = stats.len() as f64;
            Ok(SweepPoint {
                lambda,
                mean_sparsity: stats.iter().map(|s| s.0).sum::<f64>() / n,
                denoise_error: stats.iter().map(|s| s.1).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Scores for one condition over the test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub per_clip: Vec<ClipScores>,
    pub aggregate: AggregateScores,
    /// Mean image-space ‖(V̂+N̂) − mixture‖/‖mixture‖ diagnostic.
    pub mean_sum_mismatch: f64,
    /// Total negative-magnitude cells clamped during inversion.
    pub clamped_cells: usize,
}

pub fn train_condition_dictionary<T: Scalar>(
    train: &[ClipPair<T>],
    condition: Condition,
    params: &RunParams,
) -> Result<(Dictionary<T>, TrainReport)> {
    let kind = condition.kind();
    let images = mixture_images(train, kind)?;
    train_dictionary(&images, params.dict_shape(kind), &params.learn(), &params.lca())
}

pub fn train_condition_readouts<T: Scalar>(
    train: &[ClipPair<T>],
    condition: Condition,
    dict: &Dictionary<T>,
    params: &RunParams,
) -> Result<(ReadoutPair<T>, ReadoutReport)> {
    let triples = training_triples(train, condition.kind())?;
    train_readouts(
        &triples,
        dict,
        &params.lca(),
        params.readout_epochs,
        params.learning_rate,
        params.momentum,
    )
}

/// Separate every test clip; for the decode-again condition the stems are
/// passed through the readout loop a second time.
pub fn separate_test_set<T: Scalar>(
    test: &[ClipPair<T>],
    condition: Condition,
    dict: &Dictionary<T>,
    readouts: &ReadoutPair<T>,
    params: &RunParams,
) -> Result<Vec<StemEstimate<T>>> {
    let cfg = StftConfig::for_kind(condition.kind());
    let lca_params = params.lca();
    let encoder = Encoder::new(dict, &lca_params)?;
    let singles: Vec<StemEstimate<T>> = test
        .par_iter()
        .map(|pair| separate_with(&encoder, readouts, &cfg, &mix_equal(pair)?, &pair.clip_id))
        .collect::<Result<_>>()?;
    if condition == Condition::Denoised {
        singles
            .par_iter()
            .map(|est| denoise_with(&encoder, readouts, &cfg, est))
            .collect()
    } else {
        Ok(singles)
    }
}

/// Second-pass decode of already-separated stems.
pub fn denoise_stems<T: Scalar>(
    stems: &[StemEstimate<T>],
    dict: &Dictionary<T>,
    readouts: &ReadoutPair<T>,
    params: &RunParams,
) -> Result<Vec<StemEstimate<T>>> {
    let cfg = StftConfig::for_kind(readouts.kind);
    let lca_params = params.lca();
    let encoder = Encoder::new(dict, &lca_params)?;
    stems
        .par_iter()
        .map(|est| denoise_with(&encoder, readouts, &cfg, est))
        .collect()
}

/// Score estimated stems against the matching reference clips.
pub fn score_stems<T: Scalar>(
    stems: &[StemEstimate<T>],
    test: &[ClipPair<T>],
    condition: Condition,
) -> Result<ConditionResult> {
    if stems.is_empty() {
        return Err(Error::Data("no stems to score".into()));
    }
    let by_id: HashMap<&str, &ClipPair<T>> =
        test.iter().map(|p| (p.clip_id.as_str(), p)).collect();
    let mut per_clip = Vec::with_capacity(stems.len());
    let mut mismatch = 0.0;
    let mut clamped = 0;
    for est in stems {
        let truth = by_id.get(est.clip_id.as_str()).ok_or_else(|| {
            Error::Data(format!("no reference clip for estimated stems {}", est.clip_id))
        })?;
        per_clip.push(bss::score_separation(
            &est.clip_id,
            &est.vocal,
            &est.accompaniment,
            truth,
        )?);
        mismatch += est.diagnostics.image_sum_mismatch;
        clamped += est.diagnostics.clamped_vocal + est.diagnostics.clamped_accomp;
    }
    let aggregate = bss::aggregate(&per_clip)?;
    Ok(ConditionResult {
        condition,
        per_clip,
        aggregate,
        mean_sum_mismatch: mismatch / stems.len() as f64,
        clamped_cells: clamped,
    })
}

/// Train, separate, and score the requested conditions. The decode-again
/// condition reuses the phase-rich condition's model and first-pass stems
/// rather than retraining.
pub fn run_conditions<T: Scalar>(
    train: &[ClipPair<T>],
    test: &[ClipPair<T>],
    conditions: &[Condition],
    params: &RunParams,
) -> Result<Vec<ConditionResult>> {
    params.validate()?;
    let mut phase_artifacts: Option<(Dictionary<T>, ReadoutPair<T>, Vec<StemEstimate<T>>)> = None;
    let mut results = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let result = match condition {
            Condition::Phase | Condition::Denoised => {
                if phase_artifacts.is_none() {
                    let (dict, _) = train_condition_dictionary(train, Condition::Phase, params)?;
                    let (readouts, _) =
                        train_condition_readouts(train, Condition::Phase, &dict, params)?;
                    let stems =
                        separate_test_set(test, Condition::Phase, &dict, &readouts, params)?;
                    phase_artifacts = Some((dict, readouts, stems));
                }
                let (dict, readouts, stems) = phase_artifacts.as_ref().unwrap();
                if condition == Condition::Phase {
                    score_stems(stems, test, Condition::Phase)?
                } else {
                    let denoised = denoise_stems(stems, dict, readouts, params)?;
                    score_stems(&denoised, test, Condition::Denoised)?
                }
            }
            Condition::NoPhase | Condition::NoPhaseX2 => {
                let (dict, _) = train_condition_dictionary(train, condition, params)?;
                let (readouts, _) = train_condition_readouts(train, condition, &dict, params)?;
                let stems = separate_test_set(test, condition, &dict, &readouts, params)?;
                score_stems(&stems, test, condition)?
            }
        };
        results.push(result);
    }
    Ok(results)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("lambda,mean_sparsity,denoise_error\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.lambda, p.mean_sparsity, p.denoise_error));
    }
    out
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    write_text(path, &sweep_csv(points))
}

pub fn scores_csv(results: &[ConditionResult]) -> String {
    let mut out =
        String::from("condition,clip_id,sdr_v,sir_v,sar_v,nsdr_v,sdr_a,sir_a,sar_a,nsdr_a\n");
    for r in results {
        for c in &r.per_clip {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.condition,
                c.clip_id,
                c.vocal.sdr,
                c.vocal.sir,
                c.vocal.sar,
                c.vocal.nsdr,
                c.accomp.sdr,
                c.accomp.sir,
                c.accomp.sar,
                c.accomp.nsdr,
            ));
        }
        let a = &r.aggregate;
        out.push_str(&format!(
            "{},aggregate,{},{},{},{},{},{},{},{}\n",
            r.condition,
            a.vocal.sdr.mean,
            a.vocal.sir.mean,
            a.vocal.sar.mean,
            a.vocal.nsdr.mean,
            a.accomp.sdr.mean,
            a.accomp.sir.mean,
            a.accomp.sar.mean,
            a.accomp.nsdr.mean,
        ));
    }
    out
}

pub fn write_scores_csv(path: &Path, results: &[ConditionResult]) -> Result<()> {
    write_text(path, &scores_csv(results))
}

/// One key/value line per (condition, source, metric) with mean and spread.
pub fn aggregate_report(results: &[ConditionResult]) -> String {
    let mut out = String::new();
    for r in results {
        let a = &r.aggregate;
        for (source, agg) in [("vocal", &a.vocal), ("accomp", &a.accomp)] {
            for (metric, stat) in [
                ("gsdr", agg.sdr),
                ("gsir", agg.sir),
                ("gsar", agg.sar),
                ("gnsdr", agg.nsdr),
            ] {
                out.push_str(&format!(
                    "{{\"condition\": \"{}\", \"source\": \"{source}\", \"metric\": \"{metric}\", \"value\": {}, \"spread\": {}}}\n",
                    r.condition, stat.mean, stat.std,
                ));
            }
        }
    }
    out
}

pub fn write_aggregate_report(path: &Path, results: &[ConditionResult]) -> Result<()> {
    write_text(path, &aggregate_report(results))
}

/// Human-readable aggregate table, one block per source.
pub fn format_table(results: &[ConditionResult]) -> String {
    let mut out = String::new();
    let picks: [(&str, fn(&AggregateScores) -> crate::bss::SourceAggregate); 2] = [
        ("vocal", |a| a.vocal),
        ("accompaniment", |a| a.accomp),
    ];
    for (source, pick) in picks {
        out.push_str(&format!("Test-set aggregates ({source}), dB:\n"));
        out.push_str(&format!(
            "{:<12} {:>16} {:>16} {:>16}\n",
            "condition", "GSIR", "GSAR", "GNSDR"
        ));
        for r in results {
            let agg = pick(&r.aggregate);
            let cell = |s: crate::bss::AggregateStat| format!("{:.2} ± {:.2}", s.mean, s.std);
            out.push_str(&format!(
                "{:<12} {:>16} {:>16} {:>16}\n",
                r.condition.label(),
                cell(agg.sir),
                cell(agg.sar),
                cell(agg.nsdr),
            ));
        }
        out.push('\n');
    }
    out
}
