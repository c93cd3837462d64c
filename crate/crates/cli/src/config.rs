//! Declarative run configuration: a sectioned `key = value` file resolved
//! against the scale presets, plus the content hash that stamps artifacts.

use std::path::{Path, PathBuf};

use phasesep_core::audio::ChannelConvention;
use phasesep_core::experiments::{Condition, RunParams, DEFAULT_NOISE_FACTOR, DEFAULT_SWEEP_LAMBDAS};
use phasesep_core::provenance::{sha256_bytes, Hash32};
use phasesep_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    run: Option<RunSection>,
    dataset: Option<DatasetSection>,
    model: Option<ModelSection>,
    lca: Option<LcaSection>,
    learning: Option<LearningSection>,
    sweep: Option<SweepSection>,
    synth: Option<SynthSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    scale: Option<String>,
    output_dir: Option<PathBuf>,
    conditions: Option<Vec<String>>,
    workers: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    root: Option<PathBuf>,
    convention: Option<String>,
    n_train: Option<usize>,
    n_test: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    n_atoms: Option<usize>,
    patch_frames: Option<usize>,
    patch_frames_double: Option<usize>,
    stride: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LcaSection {
    lambda: Option<f64>,
    steps: Option<usize>,
    dt_over_tau: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearningSection {
    dict_epochs: Option<usize>,
    readout_epochs: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    lambdas: Option<Vec<f64>>,
    noise_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    n_clips: Option<usize>,
    seed: Option<u64>,
}

/// A fully resolved run: preset values overlaid with the config file.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub params: RunParams,
    pub scale: String,
    pub conditions: Vec<Condition>,
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub convention: ChannelConvention,
    pub workers: usize,
    pub sweep_lambdas: Vec<f64>,
    pub noise_factor: f64,
    pub synth_clips: usize,
    pub synth_seed: u64,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

impl ResolvedConfig {
    pub fn load(path: &Path, workers_flag: Option<usize>) -> Result<ResolvedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| usage(format!("config file {}: {e}", path.display())))?;
        ResolvedConfig::resolve(file, workers_flag)
    }

    fn resolve(file: FileConfig, workers_flag: Option<usize>) -> Result<ResolvedConfig> {
        let run = file.run.unwrap_or_default();
        let dataset = file.dataset.unwrap_or_default();
        let model = file.model.unwrap_or_default();
        let lca = file.lca.unwrap_or_default();
        let learning = file.learning.unwrap_or_default();
        let sweep = file.sweep.unwrap_or_default();
        let synth = file.synth.unwrap_or_default();

        let scale = run.scale.unwrap_or_else(|| "desk".into());
        let mut params = match scale.as_str() {
            "desk" => RunParams::desk(),
            "paper" => RunParams::paper(),
            other => return Err(usage(format!("unknown scale `{other}` (desk or paper)"))),
        };
        macro_rules! overlay {
            ($($field:ident <- $opt:expr),* $(,)?) => {
                $(if let Some(v) = $opt { params.$field = v; })*
            };
        }
        overlay! {
            seed <- run.seed,
            n_train <- dataset.n_train,
            n_test <- dataset.n_test,
            n_atoms <- model.n_atoms,
            patch_frames <- model.patch_frames,
            patch_frames_double <- model.patch_frames_double,
            stride <- model.stride,
            lambda <- lca.lambda,
            lca_steps <- lca.steps,
            dt_over_tau <- lca.dt_over_tau,
            dict_epochs <- learning.dict_epochs,
            readout_epochs <- learning.readout_epochs,
            learning_rate <- learning.learning_rate,
            momentum <- learning.momentum,
        }
        params
            .validate()
            .map_err(|e| usage(format!("invalid configuration: {e}")))?;

        let conditions = match run.conditions {
            None => Condition::ALL.to_vec(),
            Some(names) => {
                if names.is_empty() {
                    return Err(usage("run.conditions must not be empty"));
                }
                let mut parsed = Vec::with_capacity(names.len());
                for name in &names {
                    let c = Condition::parse(name).ok_or_else(|| {
                        usage(format!(
                            "unknown condition `{name}` (phase, no_phase, no_phase_x2, denoised)"
                        ))
                    })?;
                    if parsed.contains(&c) {
                        return Err(usage(format!("condition `{name}` listed twice")));
                    }
                    parsed.push(c);
                }
                parsed
            }
        };

        let convention = match dataset.convention {
            None => ChannelConvention::default(),
            Some(name) => ChannelConvention::parse(&name).ok_or_else(|| {
                usage(format!(
                    "unknown channel convention `{name}` \
                     (accomp_left_vocal_right or vocal_left_accomp_right)"
                ))
            })?,
        };

        let sweep_lambdas = sweep.lambdas.unwrap_or_else(|| DEFAULT_SWEEP_LAMBDAS.to_vec());
        if let Some(bad) = sweep_lambdas.iter().find(|l| !(**l > 0.0)) {
            return Err(usage(format!("sweep.lambdas: {bad} is not positive")));
        }
        let noise_factor = sweep.noise_factor.unwrap_or(DEFAULT_NOISE_FACTOR);
        if !(noise_factor > 0.0) {
            return Err(usage("sweep.noise_factor must be > 0"));
        }

        let synth_clips = synth.n_clips.unwrap_or(params.n_train + params.n_test);
        if synth_clips == 0 {
            return Err(usage("synth.n_clips must be >= 1"));
        }

        Ok(ResolvedConfig {
            scale,
            conditions,
            dataset_root: dataset.root.unwrap_or_else(|| "dataset".into()),
            output_dir: run.output_dir.unwrap_or_else(|| "out".into()),
            convention,
            workers: workers_flag.or(run.workers).unwrap_or(0),
            sweep_lambdas,
            noise_factor,
            synth_clips,
            synth_seed: synth.seed.unwrap_or(params.seed),
            params,
        })
    }

    /// Hash of every value that shapes model artifacts and scores. Paths,
    /// worker counts, and the condition list stay out: they select *which*
    /// artifacts are produced or where they live, not their contents.
    pub fn config_hash(&self) -> Hash32 {
        let p = &self.params;
        let lines = [
            format!("convention={}", self.convention),
            format!("dict_epochs={}", p.dict_epochs),
            format!("dt_over_tau={}", p.dt_over_tau),
            format!("lambda={}", p.lambda),
            format!("lca_steps={}", p.lca_steps),
            format!("learning_rate={}", p.learning_rate),
            format!("momentum={}", p.momentum),
            format!("n_atoms={}", p.n_atoms),
            format!("n_test={}", p.n_test),
            format!("n_train={}", p.n_train),
            format!("patch_frames={}", p.patch_frames),
            format!("patch_frames_double={}", p.patch_frames_double),
            format!("readout_epochs={}", p.readout_epochs),
            format!("scale={}", self.scale),
            format!("seed={}", p.seed),
            format!("stride={}", p.stride),
        ];
        sha256_bytes(lines.join("\n").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ResolvedConfig> {
        let file: FileConfig = toml::from_str(text).map_err(|e| usage(e.to_string()))?;
        ResolvedConfig::resolve(file, None)
    }

    #[test]
    fn empty_config_is_the_desk_preset() {
        let cfg = resolve("").unwrap();
        assert_eq!(cfg.params, RunParams::desk());
        assert_eq!(cfg.conditions, Condition::ALL.to_vec());
        assert_eq!(cfg.scale, "desk");
        assert_eq!(cfg.synth_clips, 50);
        assert_eq!(cfg.workers, 0);
    }

    #[test]
    fn overrides_apply_on_top_of_the_preset() {
        let cfg = resolve(
            "[run]\nscale = \"paper\"\nseed = 9\n\
             [lca]\nlambda = 0.5\n[model]\nn_atoms = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.params.n_train, 950);
        assert_eq!(cfg.params.n_atoms, 64);
        assert_eq!(cfg.params.lambda, 0.5);
        assert_eq!(cfg.params.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve("[lca]\nlamda = 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let err = resolve("[lcaa]\nlambda = 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert!(matches!(
            resolve("[run]\nscale = \"huge\"\n").unwrap_err(),
            Error::Usage(_)
        ));
        assert!(matches!(
            resolve("[run]\nconditions = [\"phase\", \"phase\"]\n").unwrap_err(),
            Error::Usage(_)
        ));
        assert!(matches!(
            resolve("[run]\nconditions = []\n").unwrap_err(),
            Error::Usage(_)
        ));
        assert!(matches!(
            resolve("[lca]\nlambda = -1.0\n").unwrap_err(),
            Error::Usage(_)
        ));
        assert!(matches!(
            resolve("[dataset]\nconvention = \"sideways\"\n").unwrap_err(),
            Error::Usage(_)
        ));
    }

    #[test]
    fn hash_ignores_paths_and_conditions_but_not_parameters() {
        let a = resolve("").unwrap();
        let b = resolve("[run]\noutput_dir = \"elsewhere\"\nconditions = [\"phase\"]\n").unwrap();
        let c = resolve("[lca]\nlambda = 0.5\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
