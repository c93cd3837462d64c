//! Sparse inference with Locally Competitive Algorithm (LCA) dynamics over a
//! convolutional dictionary.
//!
//! The code `a` for an input image `I` approximately minimizes
//! `E = ½‖I − Φa‖² + λ‖a‖₁`, where `Φa` places each atom at its
//! stride-spaced temporal position and sums overlaps. Membrane potentials
//! `u` evolve as `u ← u + (dt/τ)·(b − u − (G − I)a)` with `b = Φᵀ∗I`,
//! `a = T_λ(u)` (two-sided soft threshold) and `G` the atom Gram operator.
//!
//! The lateral term `Ga` is computed either by correlate-reconstruct
//! (`Φᵀ∗(Φa)`, no Gram ever materialized — required at large atom counts
//! where the Gram would not fit in memory) or from a banded Gram table over
//! the few overlapping position offsets (much faster at small atom counts).
//! Both routes are algebraically identical; selection is by memory footprint
//! and therefore a pure function of the dictionary geometry.

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{linalg::general_mat_mul, Array2, Array3, Axis};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::SoundImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcaParams {
    /// Soft-threshold level λ (also the L1 weight in the energy).
    pub lambda: f64,
    /// Integration steps per input (the display period).
    pub n_steps: usize,
    /// Dimensionless integration step dt/τ.
    pub dt_over_tau: f64,
    /// Record the per-step energy trace (costly; for diagnostics/tests).
    pub history: bool,
}

impl Default for LcaParams {
    fn default() -> Self {
        LcaParams {
            lambda: 0.625,
            n_steps: 1000,
            dt_over_tau: 0.05,
            history: false,
        }
    }
}

impl LcaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::param("lambda", "must be > 0"));
        }
        if self.n_steps == 0 {
            return Err(Error::param("n_steps", "must be >= 1"));
        }
        if !(self.dt_over_tau > 0.0 && self.dt_over_tau <= 1.0) {
            return Err(Error::param("dt_over_tau", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn with_history(mut self, history: bool) -> Self {
        self.history = history;
        self
    }
}

/// Convolutional layout of a code: `n_features` atoms over `n_positions`
/// stride-spaced temporal placements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeGeometry {
    pub n_features: usize,
    pub n_positions: usize,
    pub patch_frames: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T> {
    /// Activations, `(n_features × n_positions)`.
    pub a: Array2<T>,
    pub geometry: CodeGeometry,
}

impl<T: Scalar> SparseCode<T> {
    pub fn nnz(&self) -> usize {
        self.a.iter().filter(|&&v| v != T::zero()).count()
    }

    /// L1 norm of the activations, accumulated in f64.
    pub fn l1(&self) -> f64 {
        self.a.iter().map(|v| v.as_f64().abs()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut triplets: Vec<(u32, u32, f32)> = Vec::with_capacity(self.nnz());
        for p in 0..self.geometry.n_positions {
            for f in 0..self.geometry.n_features {
                let v = self.a[(f, p)];
                if v != T::zero() {
                    triplets.push((f as u32, p as u32, v.as_f32()));
                }
            }
        }
        let mut bytes = Vec::with_capacity(44 + triplets.len() * 12);
        bytes.extend_from_slice(CODE_MAGIC);
        for v in [
            1u32,
            self.geometry.n_features as u32,
            self.geometry.n_positions as u32,
            self.geometry.patch_frames as u32,
            self.geometry.stride as u32,
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&(triplets.len() as u64).to_le_bytes());
        for (f, p, v) in triplets {
            bytes.extend_from_slice(&f.to_le_bytes());
            bytes.extend_from_slice(&p.to_le_bytes());
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SparseCode<T>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 36 || &bytes[..8] != CODE_MAGIC {
            return Err(Error::format(path, "not a sparse code file (bad magic)"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if u32_at(8) != 1 {
            return Err(Error::format(path, "unknown format version"));
        }
        let geometry = CodeGeometry {
            n_features: u32_at(12) as usize,
            n_positions: u32_at(16) as usize,
            patch_frames: u32_at(20) as usize,
            stride: u32_at(24) as usize,
        };
        let nnz = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        if bytes.len() != 36 + nnz * 12 {
            return Err(Error::format(path, "truncated sparse code payload"));
        }
        let mut a = Array2::zeros((geometry.n_features, geometry.n_positions));
        for i in 0..nnz {
            let off = 36 + i * 12;
            let f = u32_at(off) as usize;
            let p = u32_at(off + 4) as usize;
            if f >= geometry.n_features || p >= geometry.n_positions {
                return Err(Error::format(path, "triplet index out of range"));
            }
            let v = f32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap());
            a[(f, p)] = T::of_f32(v);
        }
        Ok(SparseCode { a, geometry })
    }
}

const CODE_MAGIC: &[u8; 8] = b"PHSEPCOD";

/// Fraction of nonzero activation slots.
pub fn sparsity<T: Scalar>(code: &SparseCode<T>) -> f64 {
    if code.a.is_empty() {
        0.0
    } else {
        code.nnz() as f64 / code.a.len() as f64
    }
}

/// Two-sided shrinkage: `0` for `|u| ≤ λ`, else `sign(u)·(|u| − λ)`.
#[inline]
pub fn soft_threshold<T: Scalar>(u: T, lambda: T) -> T {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        T::zero()
    }
}

/// Sum each active atom into an image-shaped buffer at its temporal
/// position (the transpose convolution Φa).
pub(crate) fn place_atoms<T: Scalar>(
    atoms: &ndarray::Array4<T>,
    stride: usize,
    code: &SparseCode<T>,
    out: &mut Array3<T>,
) {
    let (n_features, channels, bins, patch) = atoms.dim();
    debug_assert_eq!(code.geometry.n_features, n_features);
    let frames = out.dim().2;
    debug_assert_eq!(out.dim().0, channels);
    debug_assert_eq!(out.dim().1, bins);
    out.fill(T::zero());
    let atom_flat = atoms.as_slice().expect("atoms are contiguous");
    let out_flat = out.as_slice_mut().expect("image buffer is contiguous");
    let patch_len = channels * bins * patch;
    for p in 0..code.geometry.n_positions {
        let t0 = p * stride;
        for f in 0..n_features {
            let v = code.a[(f, p)];
            if v == T::zero() {
                continue;
            }
            let atom = &atom_flat[f * patch_len..(f + 1) * patch_len];
            for ck in 0..channels * bins {
                let src = &atom[ck * patch..(ck + 1) * patch];
                let dst = &mut out_flat[ck * frames + t0..ck * frames + t0 + patch];
                for j in 0..patch {
                    dst[j] += v * src[j];
                }
            }
        }
    }
}

/// Reconstruction Φa as a sound image shaped like `reference`.
pub fn reconstruct<T: Scalar>(
    dict: &Dictionary<T>,
    code: &SparseCode<T>,
    reference: &SoundImage<T>,
) -> Result<SoundImage<T>> {
    let geom = dict.geometry_for(reference)?;
    if code.geometry != geom {
        return Err(Error::shape(
            "code geometry",
            format!("{geom:?}"),
            format!("{:?}", code.geometry),
        ));
    }
    let mut out = SoundImage::zeros_like(reference);
    place_atoms(&dict.atoms, dict.stride, code, &mut out.data);
    Ok(out)
}

/// `½‖I − Φa‖² + λ‖a‖₁`, accumulated in f64.
pub fn energy<T: Scalar>(
    img: &SoundImage<T>,
    dict: &Dictionary<T>,
    code: &SparseCode<T>,
    lambda: f64,
) -> Result<f64> {
    let geom = dict.geometry_for(img)?;
    if code.geometry != geom {
        return Err(Error::shape(
            "code geometry",
            format!("{geom:?}"),
            format!("{:?}", code.geometry),
        ));
    }
    let mut residual: Vec<f64> = img.data.iter().map(|v| v.as_f64()).collect();
    subtract_placement_f64(&dict.atoms, dict.stride, code, &mut residual, img.data.dim().2);
    let fit: f64 = residual.iter().map(|r| r * r).sum();
    Ok(0.5 * fit + lambda * code.l1())
}

fn subtract_placement_f64<T: Scalar>(
    atoms: &ndarray::Array4<T>,
    stride: usize,
    code: &SparseCode<T>,
    residual: &mut [f64],
    frames: usize,
) {
    let (n_features, channels, bins, patch) = atoms.dim();
    let atom_flat = atoms.as_slice().expect("atoms are contiguous");
    let patch_len = channels * bins * patch;
    for p in 0..code.geometry.n_positions {
        let t0 = p * stride;
        for f in 0..n_features {
            let v = code.a[(f, p)].as_f64();
            if v == 0.0 {
                continue;
            }
            let atom = &atom_flat[f * patch_len..(f + 1) * patch_len];
            for ck in 0..channels * bins {
                let dst = &mut residual[ck * frames + t0..ck * frames + t0 + patch];
                let src = &atom[ck * patch..(ck + 1) * patch];
                for j in 0..patch {
                    dst[j] -= v * src[j].as_f64();
                }
            }
        }
    }
}

/// Extract the stride-spaced patch matrix of an image:
/// column `p` is the flattened `(channels × bins × patch)` patch at
/// temporal offset `p·stride`.
fn im2col<T: Scalar>(data: &Array3<T>, patch: usize, stride: usize, n_positions: usize) -> Array2<T> {
    let (channels, bins, frames) = data.dim();
    let flat = data.as_slice().expect("image is contiguous");
    let mut out = Array2::zeros((channels * bins * patch, n_positions));
    let out_flat = out.as_slice_mut().unwrap();
    for ck in 0..channels * bins {
        let row = &flat[ck * frames..(ck + 1) * frames];
        for j in 0..patch {
            let r = ck * patch + j;
            let dst = &mut out_flat[r * n_positions..(r + 1) * n_positions];
            for (p, slot) in dst.iter_mut().enumerate() {
                *slot = row[p * stride + j];
            }
        }
    }
    out
}

/// Correlation of an image with every atom at every position: `(Φᵀ∗I)`,
/// shape `(n_features × n_positions)`.
pub fn correlate<T: Scalar>(dict: &Dictionary<T>, img: &SoundImage<T>) -> Result<Array2<T>> {
    let geom = dict.geometry_for(img)?;
    let cols = im2col(&img.data, geom.patch_frames, geom.stride, geom.n_positions);
    let mut out = Array2::zeros((geom.n_features, geom.n_positions));
    general_mat_mul(T::one(), &dict.atom_matrix(), &cols, T::zero(), &mut out);
    Ok(out)
}

/// How the lateral interaction `Ga` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateralStrategy {
    /// Pick by Gram memory footprint (the default).
    Auto,
    /// Correlate-reconstruct `Φᵀ∗(Φa)`; never materializes the Gram.
    Direct,
    /// Banded Gram table over overlapping offsets.
    Gram,
}

/// Gram budget for `Auto`: beyond this the table is not materialized.
const GRAM_BUDGET_BYTES: usize = 128 << 20;

/// Banded Gram table: `g[(d, f_active, f)] = <φ_f at p, φ_f' at p + (d − max_offset)>`,
/// independent of `p` by shift invariance.
struct GramTable<T> {
    g: Array3<T>,
    max_offset: usize,
}

impl<T: Scalar> GramTable<T> {
    fn build(dict: &Dictionary<T>) -> GramTable<T> {
        let (n_features, channels, bins, patch) = dict.atoms.dim();
        let stride = dict.stride;
        let max_offset = (patch - 1) / stride;
        let n_off = 2 * max_offset + 1;
        let mut g = Array3::zeros((n_off, n_features, n_features));
        for dp in 0..=max_offset {
            let shift = dp * stride;
            let keep = patch - shift;
            // m[f, f'] = <φ_f shifted right by `shift`, φ_f'>
            let left = dict
                .atoms
                .slice(ndarray::s![.., .., .., shift..])
                .to_owned()
                .into_shape_with_order((n_features, channels * bins * keep))
                .unwrap();
            let right = dict
                .atoms
                .slice(ndarray::s![.., .., .., ..keep])
                .to_owned()
                .into_shape_with_order((n_features, channels * bins * keep))
                .unwrap();
            let mut m = Array2::zeros((n_features, n_features));
            general_mat_mul(T::one(), &left, &right.t(), T::zero(), &mut m);
            // m[f, f'] = G[f, f', +dp]; the table stores columns over `f`
            // for a fixed active feature, at both signs of the offset.
            g.index_axis_mut(Axis(0), max_offset - dp).assign(&m);
            g.index_axis_mut(Axis(0), max_offset + dp).assign(&m.t());
        }
        GramTable { g, max_offset }
    }
}

/// Reusable encoder: validates the dictionary once and keeps the Gram table
/// (when small enough) across many inputs against the same frozen atoms.
pub struct Encoder<'a, T: Scalar> {
    dict: &'a Dictionary<T>,
    params: LcaParams,
    gram: Option<GramTable<T>>,
}

impl<'a, T: Scalar> Encoder<'a, T> {
    pub fn new(dict: &'a Dictionary<T>, params: &LcaParams) -> Result<Self> {
        Encoder::with_strategy(dict, params, LateralStrategy::Auto)
    }

    pub fn with_strategy(
        dict: &'a Dictionary<T>,
        params: &LcaParams,
        strategy: LateralStrategy,
    ) -> Result<Self> {
        params.validate()?;
        dict.check_unit_norms()?;
        let (n_features, _, _, patch) = dict.atoms.dim();
        let n_off = 2 * ((patch - 1) / dict.stride) + 1;
        let gram_bytes = n_off
            .saturating_mul(n_features)
            .saturating_mul(n_features)
            .saturating_mul(std::mem::size_of::<T>());
        let use_gram = match strategy {
            LateralStrategy::Auto => gram_bytes <= GRAM_BUDGET_BYTES,
            LateralStrategy::Direct => false,
            LateralStrategy::Gram => true,
        };
        let gram = use_gram.then(|| GramTable::build(dict));
        Ok(Encoder {
            dict,
            params: *params,
            gram,
        })
    }

    pub fn params(&self) -> &LcaParams {
        &self.params
    }

    pub fn dictionary(&self) -> &'a Dictionary<T> {
        self.dict
    }

    pub fn encode(&self, img: &SoundImage<T>) -> Result<LcaOutput<T>> {
        let geom = self.dict.geometry_for(img)?;
        if !img.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("encode input contains non-finite values".into()));
        }
        let (n_features, n_positions) = (geom.n_features, geom.n_positions);
        let n = n_features * n_positions;
        let lambda = T::of_f64(self.params.lambda);
        let dt = T::of_f64(self.params.dt_over_tau);

        // Position-major layout (index p·F + f) keeps the Gram scatter row
        // contiguous; transposed back on exit.
        let mut b = Array2::zeros((n_positions, n_features));
        {
            let cols = im2col(&img.data, geom.patch_frames, geom.stride, n_positions);
            general_mat_mul(
                T::one(),
                &cols.t(),
                &self.dict.atom_matrix().t(),
                T::zero(),
                &mut b,
            );
        }
        let b = b.as_slice().unwrap();

        let img_f64: Option<Vec<f64>> = self
            .params
            .history
            .then(|| img.data.iter().map(|v| v.as_f64()).collect());
        let mut trace: Vec<f64> = Vec::new();

        let mut u = vec![T::zero(); n];
        let mut a = vec![T::zero(); n];
        let mut lat = vec![T::zero(); n];
        let mut actives: Vec<(u32, u32, T)> = Vec::new();
        let (_, channels, bins, patch) = self.dict.atoms.dim();
        let frames = img.data.dim().2;
        let mut recon_buf = vec![T::zero(); channels * bins * frames];

        for step in 0..self.params.n_steps {
            actives.clear();
            for (i, (&ui, ai)) in u.iter().zip(a.iter_mut()).enumerate() {
                let v = soft_threshold(ui, lambda);
                *ai = v;
                if v != T::zero() {
                    actives.push(((i / n_features) as u32, (i % n_features) as u32, v));
                }
            }
            if let Some(ref clean) = img_f64 {
                trace.push(energy_at(clean, self.dict, &actives, frames, self.params.lambda));
            }
            match self.gram {
                Some(ref gram) => {
                    lat.iter_mut().for_each(|x| *x = T::zero());
                    let g_flat = gram.g.as_slice().unwrap();
                    let d_max = gram.max_offset as isize;
                    for &(p, f, v) in &actives {
                        for d in -d_max..=d_max {
                            let pt = p as isize - d;
                            if pt < 0 || pt >= n_positions as isize {
                                continue;
                            }
                            let g_row = ((d + d_max) as usize * n_features + f as usize)
                                * n_features;
                            let g_row = &g_flat[g_row..g_row + n_features];
                            let dst =
                                &mut lat[pt as usize * n_features..(pt as usize + 1) * n_features];
                            for (x, &gv) in dst.iter_mut().zip(g_row) {
                                *x += v * gv;
                            }
                        }
                    }
                }
                None => {
                    // Φᵀ∗(Φa): reconstruct from the current activations,
                    // then correlate with every atom.
                    recon_buf.iter_mut().for_each(|x| *x = T::zero());
                    scatter_actives(
                        &self.dict.atoms,
                        self.dict.stride,
                        &actives,
                        &mut recon_buf,
                        frames,
                    );
                    let recon_view =
                        ndarray::ArrayView3::from_shape((channels, bins, frames), &recon_buf)
                            .unwrap();
                    let cols = im2col_view(recon_view, patch, geom.stride, n_positions);
                    let mut lat_pm = Array2::zeros((n_positions, n_features));
                    general_mat_mul(
                        T::one(),
                        &cols.t(),
                        &self.dict.atom_matrix().t(),
                        T::zero(),
                        &mut lat_pm,
                    );
                    lat.copy_from_slice(lat_pm.as_slice().unwrap());
                }
            }
            let mut finite = true;
            for i in 0..n {
                let du = b[i] + a[i] - u[i] - lat[i];
                u[i] += dt * du;
                finite &= u[i].is_finite();
            }
            if !finite {
                return Err(Error::Diverged { step });
            }
        }

        actives.clear();
        let mut a_mat = Array2::zeros((n_features, n_positions));
        let mut u_mat = Array2::zeros((n_features, n_positions));
        for i in 0..n {
            let (p, f) = (i / n_features, i % n_features);
            let v = soft_threshold(u[i], lambda);
            a_mat[(f, p)] = v;
            u_mat[(f, p)] = u[i];
            if v != T::zero() {
                actives.push((p as u32, f as u32, v));
            }
        }
        if let Some(ref clean) = img_f64 {
            trace.push(energy_at(clean, self.dict, &actives, frames, self.params.lambda));
        }
        Ok(LcaOutput {
            code: SparseCode {
                a: a_mat,
                geometry: geom,
            },
            u: u_mat,
            energy_trace: self.params.history.then_some(trace),
        })
    }
}

fn scatter_actives<T: Scalar>(
    atoms: &ndarray::Array4<T>,
    stride: usize,
    actives: &[(u32, u32, T)],
    out: &mut [T],
    frames: usize,
) {
    let (_, channels, bins, patch) = atoms.dim();
    let atom_flat = atoms.as_slice().expect("atoms are contiguous");
    let patch_len = channels * bins * patch;
    for &(p, f, v) in actives {
        let t0 = p as usize * stride;
        let atom = &atom_flat[f as usize * patch_len..(f as usize + 1) * patch_len];
        for ck in 0..channels * bins {
            let dst = &mut out[ck * frames + t0..ck * frames + t0 + patch];
            let src = &atom[ck * patch..(ck + 1) * patch];
            for j in 0..patch {
                dst[j] += v * src[j];
            }
        }
    }
}

fn im2col_view<T: Scalar>(
    data: ndarray::ArrayView3<'_, T>,
    patch: usize,
    stride: usize,
    n_positions: usize,
) -> Array2<T> {
    let (channels, bins, frames) = data.dim();
    let flat = data.to_slice().expect("view is contiguous");
    let mut out = Array2::zeros((channels * bins * patch, n_positions));
    let out_flat = out.as_slice_mut().unwrap();
    for ck in 0..channels * bins {
        let row = &flat[ck * frames..(ck + 1) * frames];
        for j in 0..patch {
            let r = ck * patch + j;
            let dst = &mut out_flat[r * n_positions..(r + 1) * n_positions];
            for (p, slot) in dst.iter_mut().enumerate() {
                *slot = row[p * stride + j];
            }
        }
    }
    out
}

/// Energy at the given active set, with the residual accumulated in f64.
fn energy_at<T: Scalar>(
    img_f64: &[f64],
    dict: &Dictionary<T>,
    actives: &[(u32, u32, T)],
    frames: usize,
    lambda: f64,
) -> f64 {
    let (_, channels, bins, patch) = dict.atoms.dim();
    let atom_flat = dict.atoms.as_slice().expect("atoms are contiguous");
    let patch_len = channels * bins * patch;
    let mut residual = img_f64.to_vec();
    let mut l1 = 0.0f64;
    for &(p, f, v) in actives {
        let vv = v.as_f64();
        l1 += vv.abs();
        let t0 = p as usize * dict.stride;
        let atom = &atom_flat[f as usize * patch_len..(f as usize + 1) * patch_len];
        for ck in 0..channels * bins {
            let dst = &mut residual[ck * frames + t0..ck * frames + t0 + patch];
            let src = &atom[ck * patch..(ck + 1) * patch];
            for j in 0..patch {
                dst[j] -= vv * src[j].as_f64();
            }
        }
    }
    let fit: f64 = residual.iter().map(|r| r * r).sum();
    0.5 * fit + lambda * l1
}

#[derive(Debug, Clone)]
pub struct LcaOutput<T> {
    pub code: SparseCode<T>,
    /// Final membrane potentials, same shape as the activations.
    pub u: Array2<T>,
    /// `½‖I‖²` first, then the energy after each integration step
    /// (present when `params.history`).
    pub energy_trace: Option<Vec<f64>>,
}

/// One-shot encode; use [`Encoder`] to amortize setup across many inputs
/// against the same dictionary.
pub fn lca_encode<T: Scalar>(
    img: &SoundImage<T>,
    dict: &Dictionary<T>,
    params: &LcaParams,
) -> Result<LcaOutput<T>> {
    Encoder::new(dict, params)?.encode(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::init_dictionary;
    use crate::spectral::{ImageKind, StftConfig};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.5f64, 0.625), 0.0);
        assert!((soft_threshold(1.625f64, 0.625) - 1.0).abs() < 1e-15);
        assert!((soft_threshold(-1.0f64, 0.625) + 0.375).abs() < 1e-15);
        // |u| == λ sits exactly at the dead zone edge and maps to 0.
        assert_eq!(soft_threshold(0.625f64, 0.625), 0.0);
        assert_eq!(soft_threshold(-0.625f64, 0.625), 0.0);
    }

    fn toy_image(seed: u64, cfg: &StftConfig) -> SoundImage<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((2, cfg.n_freq_bins, cfg.n_time_frames), |_| {
            rng.gen_range(-1.0..1.0)
        });
        SoundImage::from_parts(ImageKind::PhaseRich, data, *cfg).unwrap()
    }

    fn toy_cfg() -> StftConfig {
        StftConfig::custom(8, 60, 17, 16000).unwrap()
    }

    #[test]
    fn zero_image_encodes_to_zero_code_with_flat_trace() {
        let cfg = toy_cfg();
        let img = SoundImage::from_parts(
            ImageKind::PhaseRich,
            Array3::zeros((2, cfg.n_freq_bins, cfg.n_time_frames)),
            cfg,
        )
        .unwrap();
        let dict = init_dictionary::<f64>(6, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 1)
            .unwrap();
        let params = LcaParams::default().with_steps(40).with_history(true);
        let out = lca_encode(&img, &dict, &params).unwrap();
        assert_eq!(out.code.nnz(), 0);
        let trace = out.energy_trace.unwrap();
        assert_eq!(trace.len(), 41);
        assert!(trace.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn energy_of_empty_code_is_half_input_energy() {
        let cfg = toy_cfg();
        let img = toy_image(3, &cfg);
        let dict = init_dictionary::<f64>(5, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 2)
            .unwrap();
        let geom = dict.geometry_for(&img).unwrap();
        let code = SparseCode {
            a: Array2::zeros((geom.n_features, geom.n_positions)),
            geometry: geom,
        };
        let e = energy(&img, &dict, &code, 0.625).unwrap();
        let half_sq: f64 = 0.5 * img.data.iter().map(|v| v * v).sum::<f64>();
        assert!((e - half_sq).abs() < 1e-9);
    }

    #[test]
    fn energy_of_exactly_placed_atom_is_lambda() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(4, 2, cfg.n_freq_bins, 3, 2, ImageKind::PhaseRich, 5)
            .unwrap();
        let ref_img = toy_image(0, &cfg);
        let geom = dict.geometry_for(&ref_img).unwrap();
        let mut a = Array2::zeros((geom.n_features, geom.n_positions));
        a[(2, 4)] = 1.0;
        let code = SparseCode { a, geometry: geom };
        let img = reconstruct(&dict, &code, &ref_img).unwrap();
        let e = energy(&img, &dict, &code, 0.625).unwrap();
        assert!((e - 0.625).abs() < 1e-12, "e = {e}");
    }

    #[test]
    fn reconstruct_places_a_single_atom_at_its_offset() {
        let cfg = toy_cfg();
        let dict = init_dictionary::<f64>(4, 2, cfg.n_freq_bins, 3, 2, ImageKind::PhaseRich, 7)
            .unwrap();
        let ref_img = toy_image(0, &cfg);
        let geom = dict.geometry_for(&ref_img).unwrap();
        let mut a = Array2::zeros((geom.n_features, geom.n_positions));
        let (feat, pos, val) = (1usize, 3usize, 2.5f64);
        a[(feat, pos)] = val;
        let code = SparseCode { a, geometry: geom };
        let out = reconstruct(&dict, &code, &ref_img).unwrap();
        let t0 = pos * dict.stride;
        for c in 0..2 {
            for k in 0..cfg.n_freq_bins {
                for t in 0..cfg.n_time_frames {
                    let expect = if (t0..t0 + 3).contains(&t) {
                        val * dict.atoms[(feat, c, k, t - t0)]
                    } else {
                        0.0
                    };
                    assert!((out.data[(c, k, t)] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn threshold_consistency_on_final_state() {
        let cfg = toy_cfg();
        let img = toy_image(11, &cfg);
        let dict = init_dictionary::<f64>(10, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 3)
            .unwrap();
        let params = LcaParams {
            lambda: 0.4,
            n_steps: 150,
            dt_over_tau: 0.05,
            history: false,
        };
        let out = lca_encode(&img, &dict, &params).unwrap();
        let lambda = params.lambda;
        for (au, (&a, &u)) in out.code.a.iter().zip(out.u.iter()).enumerate() {
            let _ = au;
            if a != 0.0 {
                assert!(u.abs() > lambda);
                assert!((a - (u - lambda * u.signum())).abs() < 1e-15);
            } else {
                assert!(u.abs() <= lambda);
            }
        }
        assert!(out.code.nnz() > 0, "toy encode should activate something");
    }

    #[test]
    fn gram_and_direct_paths_agree() {
        let cfg = toy_cfg();
        let img = toy_image(13, &cfg);
        let dict = init_dictionary::<f64>(12, 2, cfg.n_freq_bins, 4, 2, ImageKind::PhaseRich, 9)
            .unwrap();
        let params = LcaParams {
            lambda: 0.3,
            n_steps: 80,
            dt_over_tau: 0.05,
            history: false,
        };
        let on_gram = Encoder::with_strategy(&dict, &params, LateralStrategy::Gram)
            .unwrap()
            .encode(&img)
            .unwrap();
        let direct = Encoder::with_strategy(&dict, &params, LateralStrategy::Direct)
            .unwrap()
            .encode(&img)
            .unwrap();
        let max_diff = on_gram
            .code
            .a
            .iter()
            .zip(direct.code.a.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-10, "paths diverged by {max_diff}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let cfg = toy_cfg();
        let mut img = toy_image(1, &cfg);
        img.data[(0, 0, 0)] = f64::NAN;
        let dict = init_dictionary::<f64>(4, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 1)
            .unwrap();
        assert!(lca_encode(&img, &dict, &LcaParams::default().with_steps(5)).is_err());
    }

    #[test]
    fn denormalized_dictionary_is_rejected() {
        let cfg = toy_cfg();
        let img = toy_image(1, &cfg);
        let mut dict =
            init_dictionary::<f64>(4, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 1).unwrap();
        dict.atoms[(0, 0, 0, 0)] += 0.5;
        assert!(matches!(
            lca_encode(&img, &dict, &LcaParams::default().with_steps(5)),
            Err(Error::Param { .. })
        ));
    }

    #[test]
    fn params_are_validated() {
        assert!(LcaParams::default().with_lambda(0.0).validate().is_err());
        assert!(LcaParams::default().with_steps(0).validate().is_err());
        assert!(LcaParams {
            dt_over_tau: 1.5,
            ..LcaParams::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sparsity_counts_nonzeros() {
        let geometry = CodeGeometry {
            n_features: 4,
            n_positions: 5,
            patch_frames: 2,
            stride: 1,
        };
        let mut a = Array2::<f32>::zeros((4, 5));
        assert_eq!(sparsity(&SparseCode { a: a.clone(), geometry }), 0.0);
        a.fill(1.0);
        assert_eq!(sparsity(&SparseCode { a: a.clone(), geometry }), 1.0);
        a.fill(0.0);
        a[(1, 2)] = -0.5;
        a[(3, 4)] = 0.25;
        assert!((sparsity(&SparseCode { a, geometry }) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn code_file_round_trip() {
        let cfg = toy_cfg();
        let img = toy_image(17, &cfg);
        let dict = init_dictionary::<f32>(8, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 21)
            .unwrap();
        let img32 = SoundImage::from_parts(
            ImageKind::PhaseRich,
            img.data.mapv(|v| v as f32),
            cfg,
        )
        .unwrap();
        let out = lca_encode(&img32, &dict, &LcaParams::default().with_lambda(0.3).with_steps(60))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.code");
        out.code.save(&path).unwrap();
        let back = SparseCode::<f32>::load(&path).unwrap();
        assert_eq!(out.code, back);
    }

    #[test]
    fn shrinkage_monotonicity_in_lambda() {
        let cfg = toy_cfg();
        let img = toy_image(23, &cfg);
        let dict = init_dictionary::<f64>(10, 2, cfg.n_freq_bins, 3, 1, ImageKind::PhaseRich, 31)
            .unwrap();
        let mut last = usize::MAX;
        for lambda in [0.2, 0.3, 0.5, 0.8, 1.2] {
            let out = lca_encode(
                &img,
                &dict,
                &LcaParams::default().with_lambda(lambda).with_steps(120),
            )
            .unwrap();
            let nnz = out.code.nnz();
            assert!(nnz <= last, "λ={lambda}: {nnz} > {last}");
            last = nnz;
        }
    }
}
