//! Monaural singing-voice separation by convolutional sparse coding:
//! spectrogram "sound images" are encoded with a locally competitive
//! L1 solver over a Hebbian-learned dictionary, and two linear readouts
//! decode each mixture code into vocal and accompaniment estimates.
//!
//! Everything is generic over the working float type via [`Scalar`];
//! experiment artifacts store `f32`, while norms, energies, and metrics
//! always accumulate in `f64`.

pub mod audio;
pub mod bss;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod lca;
pub mod provenance;
pub mod scalar;
pub mod separation;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Waveform32 = audio::Waveform<f32>;
pub type Waveform64 = audio::Waveform<f64>;
pub type ClipPair32 = audio::ClipPair<f32>;
pub type SoundImage32 = spectral::SoundImage<f32>;
pub type SoundImage64 = spectral::SoundImage<f64>;
pub type Dictionary32 = dictionary::Dictionary<f32>;
pub type Dictionary64 = dictionary::Dictionary<f64>;
pub type SparseCode32 = lca::SparseCode<f32>;
pub type SparseCode64 = lca::SparseCode<f64>;
