//! STFT analysis/synthesis and the three spectral input representations.
//!
//! A waveform becomes a "sound image": a (channels × freq × time) tensor that
//! downstream sparse coding treats as its input. Three representations exist:
//!
//! * `PhaseRich` — real and imaginary STFT parts as two channels (keeps phase)
//! * `Magnitude` — single channel of moduli at the same resolution
//! * `MagnitudeDouble` — moduli at doubled frequency resolution (1024-point)
//!
//! Analysis drops the Nyquist bin from the image (a 512-point transform keeps
//! bins 0..255); the spectrogram retains it internally so that a plain
//! `istft(stft(w))` round trip is exact to float precision.

use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of the analysis transform. `hop` is always half the transform
/// size (50% overlap) and `n_freq_bins` half as well (Nyquist dropped).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub n_freq_bins: usize,
    pub n_time_frames: usize,
    pub n_samples: usize,
    pub sample_rate: u32,
}

/// Working clip length: 2 s at 16 kHz.
pub const CLIP_SAMPLES: usize = 32_000;

impl StftConfig {
    /// 512-point transform over a 2 s clip: 256 bins × 128 frames.
    pub fn base() -> StftConfig {
        StftConfig {
            fft_size: 512,
            hop: 256,
            n_freq_bins: 256,
            n_time_frames: 128,
            n_samples: CLIP_SAMPLES,
            sample_rate: 16_000,
        }
    }

    /// 1024-point transform over the same clip: 512 bins × 64 frames.
    pub fn double() -> StftConfig {
        StftConfig {
            fft_size: 1024,
            hop: 512,
            n_freq_bins: 512,
            n_time_frames: 64,
            n_samples: CLIP_SAMPLES,
            sample_rate: 16_000,
        }
    }

    pub fn for_kind(kind: ImageKind) -> StftConfig {
        match kind {
            ImageKind::PhaseRich | ImageKind::Magnitude => StftConfig::base(),
            ImageKind::MagnitudeDouble => StftConfig::double(),
        }
    }

    /// Arbitrary geometry for small-scale tests. `n_time_frames` must give at
    /// least one spare hop of coverage past the signal on each side, and the
    /// implied padding must stay shorter than the signal (single reflection).
    pub fn custom(
        fft_size: usize,
        n_samples: usize,
        n_time_frames: usize,
        sample_rate: u32,
    ) -> Result<StftConfig> {
        if fft_size < 4 || fft_size % 2 != 0 {
            return Err(Error::param("fft_size", "must be even and >= 4"));
        }
        let hop = fft_size / 2;
        if hop >= n_samples {
            return Err(Error::param(
                "n_samples",
                format!("must exceed the hop ({hop})"),
            ));
        }
        let min_frames = n_samples.div_ceil(hop) + 1;
        if n_time_frames < min_frames {
            return Err(Error::param(
                "n_time_frames",
                format!("need at least {min_frames} frames to cover {n_samples} samples"),
            ));
        }
        let pad_right = n_time_frames * hop - n_samples;
        if pad_right >= n_samples {
            return Err(Error::param(
                "n_time_frames",
                "implied right padding exceeds the signal length",
            ));
        }
        Ok(StftConfig {
            fft_size,
            hop,
            n_freq_bins: fft_size / 2,
            n_time_frames,
            n_samples,
            sample_rate,
        })
    }

    /// Frequency of bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    fn pad_left(&self) -> usize {
        self.hop
    }

    fn padded_len(&self) -> usize {
        (self.n_time_frames + 1) * self.hop
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let c = (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            T::of_f64(0.5 * (1.0 - c))
        })
        .collect()
}

/// Mirror an out-of-range sample index back into `[0, n)` (single bounce).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&j));
    j as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    /// (n_freq_bins × n_time_frames), Nyquist excluded.
    pub values: Array2<Complex<T>>,
    /// Per-frame Nyquist coefficients, kept so the round trip is lossless.
    /// Zeroed when a spectrogram is assembled from a sound image.
    pub nyquist: Vec<Complex<T>>,
    pub config: StftConfig,
}

fn plan<T: Scalar>(n: usize, forward: bool) -> Arc<dyn rustfft::Fft<T>> {
    let mut planner = FftPlanner::new();
    if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    }
}

/// Windowed transform of `w` under `cfg`. Frame `t` covers padded samples
/// `[t·hop − hop, t·hop − hop + fft_size)` relative to the signal start;
/// boundaries are reflection-padded.
pub fn stft<T: Scalar>(w: &Waveform<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    if w.len() != cfg.n_samples {
        return Err(Error::shape("stft input length", cfg.n_samples, w.len()));
    }
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::shape(
            "stft sample rate",
            cfg.sample_rate,
            w.sample_rate,
        ));
    }
    if !w.all_finite() {
        return Err(Error::Data("stft input contains non-finite samples".into()));
    }
    let window: Vec<T> = hann_window(cfg.fft_size);
    let fft = plan::<T>(cfg.fft_size, true);
    let pad_left = cfg.pad_left() as isize;
    let n = w.len();

    let mut values = Array2::zeros((cfg.n_freq_bins, cfg.n_time_frames));
    let mut nyquist = vec![Complex::new(T::zero(), T::zero()); cfg.n_time_frames];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    for t in 0..cfg.n_time_frames {
        let start = t as isize * cfg.hop as isize - pad_left;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = w.samples[reflect(start + i as isize, n)];
            *slot = Complex::new(x * window[i], T::zero());
        }
        fft.process(&mut buf);
        for k in 0..cfg.n_freq_bins {
            values[(k, t)] = buf[k];
        }
        nyquist[t] = buf[cfg.n_freq_bins];
    }
    Ok(ComplexSpectrogram {
        values,
        nyquist,
        config: *cfg,
    })
}

/// Weighted overlap-add inversion: each frame is inverse-transformed,
/// windowed again, accumulated, and divided by the accumulated squared
/// window. Exact inverse of [`stft`] for unmodified spectra.
pub fn istft<T: Scalar>(s: &ComplexSpectrogram<T>) -> Result<Waveform<T>> {
    let cfg = &s.config;
    let (bins, frames) = (s.values.nrows(), s.values.ncols());
    if bins != cfg.n_freq_bins || frames != cfg.n_time_frames || s.nyquist.len() != frames {
        return Err(Error::shape(
            "istft spectrogram",
            format!("{}x{} (+nyquist)", cfg.n_freq_bins, cfg.n_time_frames),
            format!("{}x{} (+{})", bins, frames, s.nyquist.len()),
        ));
    }
    let window: Vec<T> = hann_window(cfg.fft_size);
    let ifft = plan::<T>(cfg.fft_size, false);
    let padded = cfg.padded_len();
    let mut acc = vec![0.0f64; padded];
    let mut wsq = vec![0.0f64; padded];
    let inv_n = 1.0 / cfg.fft_size as f64;

    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    for t in 0..frames {
        buf[0] = s.values[(0, t)];
        for k in 1..cfg.n_freq_bins {
            buf[k] = s.values[(k, t)];
            buf[cfg.fft_size - k] = s.values[(k, t)].conj();
        }
        buf[cfg.n_freq_bins] = s.nyquist[t];
        ifft.process(&mut buf);
        let base = t * cfg.hop;
        for i in 0..cfg.fft_size {
            let y = buf[i].re.as_f64() * inv_n;
            let w = window[i].as_f64();
            acc[base + i] += w * y;
            wsq[base + i] += w * w;
        }
    }
    let pad_left = cfg.pad_left();
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let j = i + pad_left;
            debug_assert!(wsq[j] > 0.25);
            T::of_f64(acc[j] / wsq[j])
        })
        .collect();
    Ok(Waveform::new(samples, cfg.sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageKind {
    PhaseRich,
    Magnitude,
    MagnitudeDouble,
}

impl ImageKind {
    pub fn channels(self) -> usize {
        match self {
            ImageKind::PhaseRich => 2,
            ImageKind::Magnitude | ImageKind::MagnitudeDouble => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImageKind::PhaseRich => "phase_rich",
            ImageKind::Magnitude => "magnitude",
            ImageKind::MagnitudeDouble => "magnitude_double",
        }
    }

    pub fn parse(s: &str) -> Option<ImageKind> {
        match s {
            "phase_rich" => Some(ImageKind::PhaseRich),
            "magnitude" => Some(ImageKind::Magnitude),
            "magnitude_double" => Some(ImageKind::MagnitudeDouble),
            _ => None,
        }
    }

    fn code(self) -> u32 {
        match self {
            ImageKind::PhaseRich => 0,
            ImageKind::Magnitude => 1,
            ImageKind::MagnitudeDouble => 2,
        }
    }

    fn from_code(c: u32) -> Option<ImageKind> {
        match c {
            0 => Some(ImageKind::PhaseRich),
            1 => Some(ImageKind::Magnitude),
            2 => Some(ImageKind::MagnitudeDouble),
            _ => None,
        }
    }

    /// `MagnitudeDouble` is reserved for the doubled-resolution transform;
    /// the other kinds may use any other geometry.
    pub fn consistent_with(self, cfg: &StftConfig) -> bool {
        match self {
            ImageKind::MagnitudeDouble => *cfg == StftConfig::double(),
            ImageKind::PhaseRich | ImageKind::Magnitude => *cfg != StftConfig::double(),
        }
    }
}

impl std::fmt::Display for ImageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Real-valued spectro-temporal input tensor, `(channels × freq × time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundImage<T> {
    pub kind: ImageKind,
    pub data: Array3<T>,
    pub config: StftConfig,
}

impl<T: Scalar> SoundImage<T> {
    /// Assemble an image from raw parts, checking kind/shape consistency.
    pub fn from_parts(kind: ImageKind, data: Array3<T>, config: StftConfig) -> Result<Self> {
        let (c, k, t) = data.dim();
        if c != kind.channels() || k != config.n_freq_bins || t != config.n_time_frames {
            return Err(Error::shape(
                "sound image tensor",
                format!(
                    "{}x{}x{}",
                    kind.channels(),
                    config.n_freq_bins,
                    config.n_time_frames
                ),
                format!("{c}x{k}x{t}"),
            ));
        }
        if !kind.consistent_with(&config) {
            return Err(Error::param(
                "kind",
                format!("{kind} is inconsistent with a {}-point transform", config.fft_size),
            ));
        }
        Ok(SoundImage { kind, data, config })
    }

    pub fn zeros_like(other: &SoundImage<T>) -> SoundImage<T> {
        SoundImage {
            kind: other.kind,
            data: Array3::zeros(other.data.dim()),
            config: other.config,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    /// Mean square root of per-cell energy, over all channels.
    pub fn rms(&self) -> f64 {
        let n = self.data.len();
        if n == 0 {
            return 0.0;
        }
        let ss: f64 = self.data.iter().map(|&x| x.as_f64() * x.as_f64()).sum();
        (ss / n as f64).sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(44 + self.data.len() * 4);
        bytes.extend_from_slice(IMAGE_MAGIC);
        for v in [
            1u32, // format version
            self.kind.code(),
            self.channels() as u32,
            self.config.n_freq_bins as u32,
            self.config.n_time_frames as u32,
            self.config.fft_size as u32,
            self.config.hop as u32,
            self.config.n_samples as u32,
            self.config.sample_rate,
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &x in self.data.iter() {
            bytes.extend_from_slice(&x.as_f32().to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SoundImage<T>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 44 || &bytes[..8] != IMAGE_MAGIC {
            return Err(Error::format(path, "not a sound image file (bad magic)"));
        }
        let mut fields = [0u32; 9];
        for (i, f) in fields.iter_mut().enumerate() {
            let off = 8 + 4 * i;
            *f = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        }
        let [version, kind_code, channels, bins, frames, fft_size, hop, n_samples, rate] = fields;
        if version != 1 {
            return Err(Error::format(path, format!("unknown format version {version}")));
        }
        let kind = ImageKind::from_code(kind_code)
            .ok_or_else(|| Error::format(path, format!("unknown image kind {kind_code}")))?;
        let config = StftConfig {
            fft_size: fft_size as usize,
            hop: hop as usize,
            n_freq_bins: bins as usize,
            n_time_frames: frames as usize,
            n_samples: n_samples as usize,
            sample_rate: rate,
        };
        let expected = 44 + (channels * bins * frames) as usize * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, header implies {expected}", bytes.len()),
            ));
        }
        let data_vec: Vec<T> = bytes[44..]
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let data = Array3::from_shape_vec(
            (channels as usize, bins as usize, frames as usize),
            data_vec,
        )
        .expect("size checked above");
        SoundImage::from_parts(kind, data, config)
    }
}

const IMAGE_MAGIC: &[u8; 8] = b"PHSEPIMG";

/// Project a spectrogram into the requested representation.
pub fn to_sound_image<T: Scalar>(
    s: &ComplexSpectrogram<T>,
    kind: ImageKind,
) -> Result<SoundImage<T>> {
    if !kind.consistent_with(&s.config) {
        return Err(Error::param(
            "kind",
            format!(
                "{kind} is inconsistent with a {}-point transform",
                s.config.fft_size
            ),
        ));
    }
    let (bins, frames) = (s.config.n_freq_bins, s.config.n_time_frames);
    let data = match kind {
        ImageKind::PhaseRich => {
            let mut d = Array3::zeros((2, bins, frames));
            for ((k, t), v) in s.values.indexed_iter() {
                d[(0, k, t)] = v.re;
                d[(1, k, t)] = v.im;
            }
            d
        }
        ImageKind::Magnitude | ImageKind::MagnitudeDouble => {
            let mut d = Array3::zeros((1, bins, frames));
            for ((k, t), v) in s.values.indexed_iter() {
                d[(0, k, t)] = v.norm();
            }
            d
        }
    };
    SoundImage::from_parts(kind, data, s.config)
}

/// Counters reported by [`image_to_waveform`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InversionStats {
    /// Negative magnitude cells clamped to zero before inversion.
    pub clamped_cells: usize,
}

/// Invert a sound image back to audio.
///
/// Phase-rich images carry their own phase. Magnitude images borrow the
/// phase angles of `mixture_phase` (the usual masking convention); their
/// negative cells — possible since readouts are unconstrained — are clamped
/// to zero and counted.
pub fn image_to_waveform<T: Scalar>(
    img: &SoundImage<T>,
    mixture_phase: Option<&ComplexSpectrogram<T>>,
) -> Result<(Waveform<T>, InversionStats)> {
    let cfg = img.config;
    let (bins, frames) = (cfg.n_freq_bins, cfg.n_time_frames);
    let mut stats = InversionStats::default();
    let values = match img.kind {
        ImageKind::PhaseRich => {
            Array2::from_shape_fn((bins, frames), |(k, t)| {
                Complex::new(img.data[(0, k, t)], img.data[(1, k, t)])
            })
        }
        ImageKind::Magnitude | ImageKind::MagnitudeDouble => {
            let phase = mixture_phase.ok_or_else(|| {
                Error::param(
                    "mixture_phase",
                    format!("required to invert a {} image", img.kind),
                )
            })?;
            if phase.config != cfg {
                return Err(Error::shape(
                    "mixture phase config",
                    format!("{cfg:?}"),
                    format!("{:?}", phase.config),
                ));
            }
            let mut clamped = 0usize;
            let vals = Array2::from_shape_fn((bins, frames), |(k, t)| {
                let mut m = img.data[(0, k, t)];
                if m < T::zero() {
                    m = T::zero();
                    clamped += 1;
                }
                let p = phase.values[(k, t)];
                let pn = p.norm();
                if pn > T::zero() {
                    p * (m / pn)
                } else {
                    Complex::new(m, T::zero())
                }
            });
            stats.clamped_cells = clamped;
            vals
        }
    };
    let spec = ComplexSpectrogram {
        values,
        nyquist: vec![Complex::new(T::zero(), T::zero()); frames],
        config: cfg,
    };
    istft(&spec).map(|w| (w, stats))
}
