//! Convolutional dictionary learning: residual-driven Hebbian updates with
//! momentum, interleaved with LCA inference, atoms renormalized to unit L2
//! after every step.

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lca::{self, CodeGeometry, LcaParams, SparseCode};
use crate::provenance::Hash32;
use crate::scalar::Scalar;
use crate::spectral::{ImageKind, SoundImage};

/// Atoms span the full frequency axis and a short temporal patch; every atom
/// has unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T> {
    /// `(n_features × channels × n_freq_bins × patch_frames)`
    pub atoms: Array4<T>,
    /// Temporal stride between successive placement positions, in frames.
    pub stride: usize,
    /// Representation the dictionary was trained for.
    pub kind: ImageKind,
}

impl<T: Scalar> Dictionary<T> {
    pub fn n_features(&self) -> usize {
        self.atoms.dim().0
    }

    pub fn channels(&self) -> usize {
        self.atoms.dim().1
    }

    pub fn n_freq_bins(&self) -> usize {
        self.atoms.dim().2
    }

    pub fn patch_frames(&self) -> usize {
        self.atoms.dim().3
    }

    /// Flattened `(n_features × channels·bins·patch)` view of the atoms.
    pub fn atom_matrix(&self) -> ndarray::ArrayView2<'_, T> {
        let (f, c, k, j) = self.atoms.dim();
        self.atoms
            .view()
            .into_shape_with_order((f, c * k * j))
            .expect("atoms are contiguous")
    }

    /// Code geometry induced by placing this dictionary over `img` (valid
    /// placements only).
    pub fn geometry_for(&self, img: &SoundImage<T>) -> Result<CodeGeometry> {
        let (_, channels, bins, patch) = self.atoms.dim();
        let (ic, ik, it) = img.data.dim();
        if ic != channels || ik != bins {
            return Err(Error::shape(
                "dictionary vs image",
                format!("{channels} channels x {bins} bins"),
                format!("{ic} channels x {ik} bins"),
            ));
        }
        if img.kind != self.kind {
            return Err(Error::shape(
                "image representation",
                self.kind,
                img.kind,
            ));
        }
        if it < patch {
            return Err(Error::shape(
                "image frames",
                format!(">= {patch}"),
                it,
            ));
        }
        Ok(CodeGeometry {
            n_features: self.n_features(),
            n_positions: (it - patch) / self.stride + 1,
            patch_frames: patch,
            stride: self.stride,
        })
    }

    pub fn atom_norm(&self, f: usize) -> f64 {
        self.atoms
            .index_axis(ndarray::Axis(0), f)
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Every atom must have unit L2 norm within 1e-6.
    pub fn check_unit_norms(&self) -> Result<()> {
        for f in 0..self.n_features() {
            let norm = self.atom_norm(f);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::param(
                    "dictionary",
                    format!("atom {f} has norm {norm}, expected 1 within 1e-6"),
                ));
            }
        }
        Ok(())
    }

    fn normalize_atom(&mut self, f: usize) -> Result<()> {
        let norm = self.atom_norm(f);
        if norm < 1e-12 {
            return Err(Error::Data(format!(
                "atom {f} collapsed to zero norm during an update"
            )));
        }
        for v in self.atoms.index_axis_mut(ndarray::Axis(0), f).iter_mut() {
            *v = T::of_f64(v.as_f64() / norm);
        }
        Ok(())
    }
}

/// Atoms drawn i.i.d. standard normal, then normalized to unit L2.
pub fn init_dictionary<T: Scalar>(
    n_features: usize,
    channels: usize,
    n_freq_bins: usize,
    patch_frames: usize,
    stride: usize,
    kind: ImageKind,
    seed: u64,
) -> Result<Dictionary<T>> {
    for (name, v) in [
        ("n_features", n_features),
        ("channels", channels),
        ("n_freq_bins", n_freq_bins),
        ("patch_frames", patch_frames),
        ("stride", stride),
    ] {
        if v == 0 {
            return Err(Error::param(name, "must be >= 1"));
        }
    }
    if channels != kind.channels() {
        return Err(Error::param(
            "channels",
            format!("{kind} images have {} channel(s), got {channels}", kind.channels()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = Array4::zeros((n_features, channels, n_freq_bins, patch_frames));
    for v in atoms.iter_mut() {
        *v = T::standard_normal(&mut rng);
    }
    let mut dict = Dictionary {
        atoms,
        stride,
        kind,
    };
    for f in 0..n_features {
        dict.normalize_atom(f)?;
    }
    Ok(dict)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// LCA steps per input; must equal `LcaParams::n_steps`.
    pub display_period: usize,
    pub rng_seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 4,
            display_period: 1000,
            rng_seed: 0,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must be in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        Ok(())
    }

    /// Learning rate for `epoch` (0-based): halved every epoch.
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi(epoch as i32)
    }
}

/// One Hebbian step: `g_f = Σ_p a[f,p]·(I − Φa)[patch at p]`, velocity
/// `v_f ← momentum·v_f + g_f`, `φ_f ← normalize(φ_f + lr·v_f)`.
///
/// Only atoms with at least one nonzero activation are touched — inactive
/// atoms (and their velocity) stay bitwise identical, as does any atom whose
/// resulting velocity is exactly zero.
pub fn hebbian_update<T: Scalar>(
    dict: &mut Dictionary<T>,
    img: &SoundImage<T>,
    code: &SparseCode<T>,
    learning_rate: f64,
    momentum: f64,
    velocity: &mut Array4<T>,
) -> Result<()> {
    let geom = dict.geometry_for(img)?;
    if code.geometry != geom {
        return Err(Error::shape(
            "code geometry",
            format!("{geom:?}"),
            format!("{:?}", code.geometry),
        ));
    }
    if velocity.dim() != dict.atoms.dim() {
        return Err(Error::shape(
            "velocity tensor",
            format!("{:?}", dict.atoms.dim()),
            format!("{:?}", velocity.dim()),
        ));
    }
    let (n_features, channels, bins, patch) = dict.atoms.dim();
    let frames = img.data.dim().2;
    let mut residual: Array3<T> = img.data.clone();
    {
        let mut recon = Array3::zeros(img.data.dim());
        lca::place_atoms(&dict.atoms, dict.stride, code, &mut recon);
        residual -= &recon;
    }
    let res_flat = residual.as_slice().expect("residual is contiguous");
    let vel_flat = velocity.as_slice_mut().expect("velocity is contiguous");
    let patch_len = channels * bins * patch;
    let lr = T::of_f64(learning_rate);
    let mom = T::of_f64(momentum);

    for f in 0..n_features {
        let row = code.a.row(f);
        if row.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let vel = &mut vel_flat[f * patch_len..(f + 1) * patch_len];
        for v in vel.iter_mut() {
            *v = mom * *v;
        }
        for (p, &av) in row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let t0 = p * dict.stride;
            for ck in 0..channels * bins {
                let src = &res_flat[ck * frames + t0..ck * frames + t0 + patch];
                let dst = &mut vel[ck * patch..(ck + 1) * patch];
                for j in 0..patch {
                    dst[j] += av * src[j];
                }
            }
        }
        if vel.iter().all(|&v| v == T::zero()) {
            continue;
        }
        {
            let mut atom = dict.atoms.index_axis_mut(ndarray::Axis(0), f);
            let atom_flat = atom.as_slice_mut().expect("atom is contiguous");
            for (a, &v) in atom_flat.iter_mut().zip(vel.iter()) {
                *a += lr * v;
            }
        }
        dict.normalize_atom(f)?;
    }
    Ok(())
}

/// Geometry of a dictionary to be learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictShape {
    pub n_features: usize,
    pub patch_frames: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Relative reconstruction error ‖I − Φa‖/‖I‖ per processed input.
    pub per_input_error: Vec<f64>,
    /// Activation sparsity per processed input.
    pub per_input_sparsity: Vec<f64>,
    pub epoch_mean_error: Vec<f64>,
    pub epoch_mean_sparsity: Vec<f64>,
}

/// Train a dictionary over in-memory images: per epoch, visit the inputs in
/// a freshly shuffled order (seeded), encode each with LCA, then apply one
/// Hebbian step. The learning rate halves every epoch.
pub fn train_dictionary<T: Scalar>(
    images: &[SoundImage<T>],
    shape: DictShape,
    learn: &LearnParams,
    lca_params: &LcaParams,
) -> Result<(Dictionary<T>, TrainReport)> {
    learn.validate()?;
    lca_params.validate()?;
    if learn.display_period != lca_params.n_steps {
        return Err(Error::param(
            "display_period",
            format!(
                "must equal LcaParams::n_steps ({} vs {})",
                learn.display_period, lca_params.n_steps
            ),
        ));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::Data("dictionary training needs at least one image".into()))?;
    for img in images {
        if img.kind != first.kind || img.data.dim() != first.data.dim() {
            return Err(Error::shape(
                "training image set",
                format!("{} {:?}", first.kind, first.data.dim()),
                format!("{} {:?}", img.kind, img.data.dim()),
            ));
        }
    }
    let (channels, bins, _) = first.data.dim();
    let mut dict = init_dictionary::<T>(
        shape.n_features,
        channels,
        bins,
        shape.patch_frames,
        shape.stride,
        first.kind,
        learn.rng_seed,
    )?;
    let mut velocity = Array4::zeros(dict.atoms.dim());
    // Separate stream from atom initialization.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(learn.rng_seed.wrapping_add(1));
    let mut report = TrainReport::default();

    for epoch in 0..learn.epochs {
        let lr = learn.epoch_lr(epoch);
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut err_sum = 0.0;
        let mut sp_sum = 0.0;
        for &idx in &order {
            let img = &images[idx];
            let out = lca::lca_encode(img, &dict, lca_params)?;
            let recon = lca::reconstruct(&dict, &out.code, img)?;
            let img_energy: f64 = img.data.iter().map(|v| v.as_f64().powi(2)).sum();
            let res_energy: f64 = img
                .data
                .iter()
                .zip(recon.data.iter())
                .map(|(&x, &r)| (x.as_f64() - r.as_f64()).powi(2))
                .sum();
            let rel_err = if img_energy > 0.0 {
                (res_energy / img_energy).sqrt()
            } else {
                0.0
            };
            let sp = lca::sparsity(&out.code);
            report.per_input_error.push(rel_err);
            report.per_input_sparsity.push(sp);
            err_sum += rel_err;
            sp_sum += sp;
            hebbian_update(&mut dict, img, &out.code, lr, learn.momentum, &mut velocity)?;
        }
        report.epoch_mean_error.push(err_sum / images.len() as f64);
        report.epoch_mean_sparsity.push(sp_sum / images.len() as f64);
    }
    Ok((dict, report))
}

/// Role of an atom tensor in the persisted format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomRole {
    Coding,
    VocalReadout,
    AccompReadout,
}

impl AtomRole {
    fn code(self) -> u32 {
        match self {
            AtomRole::Coding => 0,
            AtomRole::VocalReadout => 1,
            AtomRole::AccompReadout => 2,
        }
    }

    fn from_code(c: u32) -> Option<AtomRole> {
        match c {
            0 => Some(AtomRole::Coding),
            1 => Some(AtomRole::VocalReadout),
            2 => Some(AtomRole::AccompReadout),
            _ => None,
        }
    }
}

/// Provenance carried in the atom-tensor file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomFileMeta {
    pub role: AtomRole,
    pub seed: u64,
    pub config_hash: Hash32,
}

const DICT_MAGIC: &[u8; 8] = b"PHSEPDIC";
const DICT_VERSION: u32 = 1;
const DICT_HEADER_LEN: usize = 8 + 4 * 8 + 8 + 32;

fn kind_code(kind: ImageKind) -> u32 {
    match kind {
        ImageKind::PhaseRich => 0,
        ImageKind::Magnitude => 1,
        ImageKind::MagnitudeDouble => 2,
    }
}

fn kind_from_code(c: u32) -> Option<ImageKind> {
    match c {
        0 => Some(ImageKind::PhaseRich),
        1 => Some(ImageKind::Magnitude),
        2 => Some(ImageKind::MagnitudeDouble),
        _ => None,
    }
}

/// Write an atom tensor (dictionary or readout) with its geometry header.
pub fn save_atoms<T: Scalar>(
    path: &Path,
    atoms: &Array4<T>,
    stride: usize,
    kind: ImageKind,
    meta: &AtomFileMeta,
) -> Result<()> {
    let (f, c, k, j) = atoms.dim();
    let mut bytes = Vec::with_capacity(DICT_HEADER_LEN + atoms.len() * 4);
    bytes.extend_from_slice(DICT_MAGIC);
    for v in [
        DICT_VERSION,
        meta.role.code(),
        kind_code(kind),
        f as u32,
        c as u32,
        k as u32,
        j as u32,
        stride as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&meta.seed.to_le_bytes());
    bytes.extend_from_slice(&meta.config_hash);
    for &x in atoms.iter() {
        bytes.extend_from_slice(&x.as_f32().to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_atoms<T: Scalar>(path: &Path) -> Result<(Array4<T>, usize, ImageKind, AtomFileMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < DICT_HEADER_LEN || &bytes[..8] != DICT_MAGIC {
        return Err(Error::format(path, "not an atom tensor file (bad magic)"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if u32_at(8) != DICT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {}", u32_at(8)),
        ));
    }
    let role = AtomRole::from_code(u32_at(12))
        .ok_or_else(|| Error::format(path, "unknown role field"))?;
    let kind =
        kind_from_code(u32_at(16)).ok_or_else(|| Error::format(path, "unknown kind field"))?;
    let (f, c, k, j) = (
        u32_at(20) as usize,
        u32_at(24) as usize,
        u32_at(28) as usize,
        u32_at(32) as usize,
    );
    let stride = u32_at(36) as usize;
    let seed = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
    let config_hash: Hash32 = bytes[48..80].try_into().unwrap();
    let expected = DICT_HEADER_LEN + f * c * k * j * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let data: Vec<T> = bytes[DICT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| T::of_f32(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let atoms = Array4::from_shape_vec((f, c, k, j), data).expect("size checked above");
    Ok((
        atoms,
        stride,
        kind,
        AtomFileMeta {
            role,
            seed,
            config_hash,
        },
    ))
}

impl<T: Scalar> Dictionary<T> {
    pub fn save(&self, path: &Path, meta: &AtomFileMeta) -> Result<()> {
        save_atoms(path, &self.atoms, self.stride, self.kind, meta)
    }

    pub fn load(path: &Path) -> Result<(Dictionary<T>, AtomFileMeta)> {
        let (atoms, stride, kind, meta) = load_atoms(path)?;
        Ok((
            Dictionary {
                atoms,
                stride,
                kind,
            },
            meta,
        ))
    }
}
