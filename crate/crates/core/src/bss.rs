//! Source-separation quality metrics: project an estimate onto the true
//! sources, split it into target / interference / artifact components, and
//! report SDR, SIR, SAR, and the mixture-relative NSDR, plus length-weighted
//! dataset aggregates.
//!
//! This is the time-invariant-gain decomposition (no distortion filter is
//! fitted); all arithmetic runs in f64.

use crate::audio::{mix_equal, ClipPair, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative tolerance below which a source is treated as linearly dependent
/// on the ones before it.
const RANK_TOL: f64 = 1e-10;

/// dB cap keeping perfect / silent cases finite.
pub const DB_CAP: f64 = 200.0;

/// Split of an estimate: `estimate = s_target + e_interf + e_artif`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Projection onto the target source.
    pub s_target: Vec<f64>,
    /// Remainder of the projection onto the span of all sources.
    pub e_interf: Vec<f64>,
    /// Part outside the span of every source.
    pub e_artif: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Orthonormal basis of the span of `vecs` by modified Gram–Schmidt with one
/// reorthogonalization pass; near-dependent vectors are dropped.
fn orthonormal_basis(vecs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vecs.len());
    for v in vecs {
        let scale = energy(v).sqrt();
        if scale == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= c * qi;
                }
            }
        }
        let rn = energy(&r).sqrt();
        if rn > RANK_TOL * scale {
            for x in r.iter_mut() {
                *x /= rn;
            }
            basis.push(r);
        }
    }
    basis
}

/// Decompose `estimate` against the true `sources`.
///
/// `s_target` is the orthogonal projection onto `sources[target_index]`
/// alone; `e_interf` is the rest of the projection onto the span of all
/// sources; `e_artif` is what remains.
pub fn decompose<T: Scalar>(
    estimate: &Waveform<T>,
    sources: &[Waveform<T>],
    target_index: usize,
) -> Result<Decomposition> {
    if sources.is_empty() {
        return Err(Error::Data("decompose needs at least one source".into()));
    }
    if target_index >= sources.len() {
        return Err(Error::param(
            "target_index",
            format!("{target_index} out of range for {} sources", sources.len()),
        ));
    }
    for s in sources {
        if s.len() != estimate.len() {
            return Err(Error::shape("source length", estimate.len(), s.len()));
        }
    }
    let e: Vec<f64> = estimate.samples.iter().map(|x| x.as_f64()).collect();
    let srcs: Vec<Vec<f64>> = sources
        .iter()
        .map(|s| s.samples.iter().map(|x| x.as_f64()).collect())
        .collect();
    let target = &srcs[target_index];
    let t_energy = energy(target);
    if t_energy == 0.0 {
        return Err(Error::Data(format!(
            "target source {target_index} has zero energy"
        )));
    }
    let coeff = dot(&e, target) / t_energy;
    let s_target: Vec<f64> = target.iter().map(|x| coeff * x).collect();

    let basis = orthonormal_basis(&srcs);
    let mut p_span = vec![0.0; e.len()];
    for q in &basis {
        let c = dot(&e, q);
        for (pi, qi) in p_span.iter_mut().zip(q) {
            *pi += c * qi;
        }
    }
    let e_interf: Vec<f64> = p_span.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artif: Vec<f64> = e.iter().zip(&p_span).map(|(x, p)| x - p).collect();
    Ok(Decomposition {
        s_target,
        e_interf,
        e_artif,
    })
}

/// `10·log₁₀(num/den)` clamped to ±[`DB_CAP`]; zero numerator wins over zero
/// denominator.
fn db_ratio(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        -DB_CAP
    } else if den <= 0.0 {
        DB_CAP
    } else {
        (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
    }
}

/// (SDR, SIR, SAR) in dB from a decomposition.
pub fn sdr_sir_sar(d: &Decomposition) -> (f64, f64, f64) {
    let t = energy(&d.s_target);
    let distortion: Vec<f64> = d
        .e_interf
        .iter()
        .zip(&d.e_artif)
        .map(|(i, a)| i + a)
        .collect();
    let wanted: Vec<f64> = d
        .s_target
        .iter()
        .zip(&d.e_interf)
        .map(|(s, i)| s + i)
        .collect();
    (
        db_ratio(t, energy(&distortion)),
        db_ratio(t, energy(&d.e_interf)),
        db_ratio(energy(&wanted), energy(&d.e_artif)),
    )
}

/// SDR of `estimate` against `sources[target_index]`.
pub fn sdr<T: Scalar>(
    estimate: &Waveform<T>,
    sources: &[Waveform<T>],
    target_index: usize,
) -> Result<f64> {
    Ok(sdr_sir_sar(&decompose(estimate, sources, target_index)?).0)
}

/// SDR improvement of the estimate over the unprocessed mixture.
pub fn nsdr<T: Scalar>(
    estimate: &Waveform<T>,
    mixture: &Waveform<T>,
    sources: &[Waveform<T>],
    target_index: usize,
) -> Result<f64> {
    Ok(sdr(estimate, sources, target_index)? - sdr(mixture, sources, target_index)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub nsdr: f64,
}

/// Per-clip metrics for both stems.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub clip_id: String,
    /// Aggregation weight.
    pub n_samples: usize,
    pub vocal: SourceScores,
    pub accomp: SourceScores,
}

fn score_one<T: Scalar>(
    estimate: &Waveform<T>,
    mixture: &Waveform<T>,
    sources: &[Waveform<T>],
    target_index: usize,
) -> Result<SourceScores> {
    let d = decompose(estimate, sources, target_index)?;
    let (sdr_db, sir, sar) = sdr_sir_sar(&d);
    Ok(SourceScores {
        sdr: sdr_db,
        sir,
        sar,
        nsdr: sdr_db - sdr(mixture, sources, target_index)?,
    })
}

/// Score a pair of estimated stems against the true pair; the reference
/// mixture for NSDR is the equal-gain mix of the truth.
pub fn score_separation<T: Scalar>(
    clip_id: &str,
    est_vocal: &Waveform<T>,
    est_accomp: &Waveform<T>,
    truth: &ClipPair<T>,
) -> Result<ClipScores> {
    let mixture = mix_equal(truth)?;
    let sources = [truth.vocal.clone(), truth.accompaniment.clone()];
    Ok(ClipScores {
        clip_id: clip_id.to_owned(),
        n_samples: mixture.len(),
        vocal: score_one(est_vocal, &mixture, &sources, 0)?,
        accomp: score_one(est_accomp, &mixture, &sources, 1)?,
    })
}

/// Length-weighted mean plus the unweighted sample spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceAggregate {
    pub sdr: AggregateStat,
    pub sir: AggregateStat,
    pub sar: AggregateStat,
    pub nsdr: AggregateStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateScores {
    pub n_clips: usize,
    /// Total sample count across clips (the weight denominator).
    pub total_samples: usize,
    pub vocal: SourceAggregate,
    pub accomp: SourceAggregate,
}

fn aggregate_stat(values: &[f64], weights: &[f64]) -> AggregateStat {
    let wsum: f64 = weights.iter().sum();
    let mean = values
        .iter()
        .zip(weights)
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / wsum;
    let n = values.len();
    let std = if n < 2 {
        0.0
    } else {
        let plain_mean = values.iter().sum::<f64>() / n as f64;
        (values
            .iter()
            .map(|v| (v - plain_mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt()
    };
    AggregateStat { mean, std }
}

/// Length-weighted aggregates over clips (the G-prefixed dataset metrics).
pub fn aggregate(per_clip: &[ClipScores]) -> Result<AggregateScores> {
    if per_clip.is_empty() {
        return Err(Error::Data("cannot aggregate zero clips".into()));
    }
    let weights: Vec<f64> = per_clip.iter().map(|c| c.n_samples as f64).collect();
    let agg = |get: &dyn Fn(&ClipScores) -> f64| {
        let values: Vec<f64> = per_clip.iter().map(get).collect();
        aggregate_stat(&values, &weights)
    };
    Ok(AggregateScores {
        n_clips: per_clip.len(),
        total_samples: per_clip.iter().map(|c| c.n_samples).sum(),
        vocal: SourceAggregate {
            sdr: agg(&|c| c.vocal.sdr),
            sir: agg(&|c| c.vocal.sir),
            sar: agg(&|c| c.vocal.sar),
            nsdr: agg(&|c| c.vocal.nsdr),
        },
        accomp: SourceAggregate {
            sdr: agg(&|c| c.accomp.sdr),
            sir: agg(&|c| c.accomp.sir),
            sar: agg(&|c| c.accomp.sar),
            nsdr: agg(&|c| c.accomp.nsdr),
        },
    })
}
