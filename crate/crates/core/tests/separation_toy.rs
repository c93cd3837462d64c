//! End-to-end behavior of readout training and the separation passes on toy
//! problems with known answers.

use ndarray::Array4;
use phasesep_core::audio::Waveform;
use phasesep_core::dictionary::Dictionary;
use phasesep_core::lca::{lca_encode, LcaParams};
use phasesep_core::separation::{
    denoise_pass, readout_images, separate, stem_filenames, Pass, ReadoutPair, TrainingTriple,
};
use phasesep_core::spectral::{stft, to_sound_image, ImageKind, SoundImage, StftConfig};
use phasesep_core::Error;
use phasesep_testkit::{naive_place, planted_dictionary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_cfg() -> StftConfig {
    StftConfig::custom(8, 60, 17, 16000).unwrap()
}

fn toy_lca() -> LcaParams {
    LcaParams {
        lambda: 0.3,
        n_steps: 400,
        dt_over_tau: 0.1,
        history: false,
    }
}

fn toy_dictionary(seed: u64) -> Dictionary<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dictionary {
        atoms: planted_dictionary(&mut rng, 10, 2, 4, 4, 0.5),
        stride: 2,
        kind: ImageKind::PhaseRich,
    }
}

fn random_wave(seed: u64, n: usize) -> Waveform<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16000)
}

fn mixture_image(seed: u64, cfg: &StftConfig) -> SoundImage<f64> {
    let spec = stft(&random_wave(seed, cfg.n_samples), cfg).unwrap();
    to_sound_image(&spec, ImageKind::PhaseRich).unwrap()
}

#[test]
fn readout_training_fits_realizable_linear_targets() {
    let cfg = toy_cfg();
    let dict = toy_dictionary(1);
    let lca = toy_lca();
    let frames = cfg.n_time_frames;

    // Plant a pair of readout tensors and build targets exactly in their
    // span: vocal = R_v a, accomp = R_a a for the mixture's own code a.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = dict.atoms.dim();
    let planted_vocal = Array4::from_shape_fn(shape, |_| 0.4 * rng.gen_range(-1.0..1.0f64));
    let planted_accomp = Array4::from_shape_fn(shape, |_| 0.4 * rng.gen_range(-1.0..1.0f64));

    let triples: Vec<TrainingTriple<f64>> = (0..6)
        .map(|i| {
            let mixture = mixture_image(100 + i, &cfg);
            let code = lca_encode(&mixture, &dict, &lca).unwrap().code;
            let vocal = SoundImage::from_parts(
                ImageKind::PhaseRich,
                naive_place(&planted_vocal, dict.stride, &code.a, frames),
                cfg,
            )
            .unwrap();
            let accomp = SoundImage::from_parts(
                ImageKind::PhaseRich,
                naive_place(&planted_accomp, dict.stride, &code.a, frames),
                cfg,
            )
            .unwrap();
            TrainingTriple {
                mixture,
                vocal,
                accomp,
                clip_id: format!("toy_{i}"),
            }
        })
        .collect();

    let (readouts, report) =
        phasesep_core::separation::train_readouts(&triples, &dict, &lca, 400, 0.02, 0.9).unwrap();
    assert!(readouts.trained);

    let first = report.per_epoch_loss[0];
    let last = *report.per_epoch_loss.last().unwrap();
    assert!(
        last < 1e-3 * first,
        "readout loss stalled: {first:.6e} -> {last:.6e}"
    );

    // The trained readouts reproduce the planted targets on every clip.
    for t in &triples {
        let code = lca_encode(&t.mixture, &dict, &lca).unwrap().code;
        let (v, a) = readout_images(&code, &readouts, &t.mixture).unwrap();
        for (got, want) in [(&v, &t.vocal), (&a, &t.accomp)] {
            let err: f64 = got
                .data
                .iter()
                .zip(want.data.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = want.data.iter().map(|y| y * y).sum::<f64>().sqrt();
            assert!(
                err < 0.05 * norm.max(1e-12),
                "readout output misses target: ‖err‖ {err:.4e} vs ‖target‖ {norm:.4e}"
            );
        }
    }
}

#[test]
fn untrained_readouts_refuse_to_separate() {
    let cfg = toy_cfg();
    let dict = toy_dictionary(3);
    let readouts = ReadoutPair::init(&dict);
    let mix = random_wave(7, cfg.n_samples);
    let err = separate(&mix, "clip", &cfg, &dict, &readouts, &toy_lca()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "expected a usage error, got {err:?}");
}

#[test]
fn separation_routes_energy_where_training_sent_it() {
    let cfg = toy_cfg();
    let dict = toy_dictionary(4);
    let lca = toy_lca();

    // Train on triples whose vocal target is the whole mixture and whose
    // accompaniment target is silence: everything should route to vocal.
    let triples: Vec<TrainingTriple<f64>> = (0..6)
        .map(|i| {
            let mixture = mixture_image(300 + i, &cfg);
            let vocal = mixture.clone();
            let accomp = SoundImage::zeros_like(&mixture);
            TrainingTriple {
                mixture,
                vocal,
                accomp,
                clip_id: format!("toy_{i}"),
            }
        })
        .collect();
    let (readouts, _) =
        phasesep_core::separation::train_readouts(&triples, &dict, &lca, 300, 0.02, 0.9).unwrap();

    let mix = random_wave(999, cfg.n_samples);
    let est = separate(&mix, "held_out", &cfg, &dict, &readouts, &lca).unwrap();
    assert_eq!(est.pass, Pass::Single);
    assert_eq!(est.kind, ImageKind::PhaseRich);
    assert_eq!(est.clip_id, "held_out");
    let ev = est.vocal.energy();
    let ea = est.accompaniment.energy();
    assert!(
        ea < 0.05 * ev,
        "accompaniment kept {ea:.4e} of the energy vs vocal {ev:.4e}"
    );

    // The decode-again pass keeps the routing and flags itself as such.
    let denoised = denoise_pass(&est, &cfg, &dict, &readouts, &lca).unwrap();
    assert_eq!(denoised.pass, Pass::Denoised);
    assert_eq!(denoised.clip_id, "held_out");
    let dv = denoised.vocal.energy();
    let da = denoised.accompaniment.energy();
    assert!(
        da < 0.1 * dv.max(1e-12),
        "decode-again pass lost the routing: accomp {da:.4e} vs vocal {dv:.4e}"
    );

    // A second decode-again pass is an error, not a silent no-op.
    let err = denoise_pass(&denoised, &cfg, &dict, &readouts, &lca).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "expected a usage error, got {err:?}");
}

#[test]
fn stem_filenames_follow_the_layout() {
    let (v, a) = stem_filenames("abc_01", "phase", Pass::Single);
    assert_eq!(v, "abc_01.vocal.phase.single.wav");
    assert_eq!(a, "abc_01.accomp.phase.single.wav");
    let (v, a) = stem_filenames("abc_01", "no_phase_x2", Pass::Denoised);
    assert_eq!(v, "abc_01.vocal.no_phase_x2.denoised.wav");
    assert_eq!(a, "abc_01.accomp.no_phase_x2.denoised.wav");
}
