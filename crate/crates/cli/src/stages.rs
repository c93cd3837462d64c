//! Pipeline stages behind the subcommands. Every stage reads the resolved
//! config, checks its input artifacts (and their provenance), refuses to
//! overwrite outputs without `--force`, and stamps what it writes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use phasesep_core::audio::{read_wav_mono, write_wav_mono_f32, DatasetManifest, Waveform};
use phasesep_core::dictionary::{train_dictionary, AtomFileMeta, AtomRole, Dictionary};
use phasesep_core::experiments::{
    self, load_dataset, threshold_sweep, Condition, ConditionResult,
};
use phasesep_core::lca::Encoder;
use phasesep_core::provenance::{sha256_bytes, sha256_file, to_hex, Hash32};
use phasesep_core::separation::{
    denoise_with, separate_with, stem_filenames, Pass, ReadoutPair, StemDiagnostics, StemEstimate,
};
use phasesep_core::spectral::{stft, to_sound_image, ImageKind, SoundImage, StftConfig};
use phasesep_core::synth::write_synth_dataset;
use phasesep_core::{Error, Result};
use rayon::prelude::*;

use crate::config::ResolvedConfig;

/// Working float type for all pipeline artifacts.
type S = f32;

// ---------------------------------------------------------------------------
// Artifact layout

pub struct Layout {
    out: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ResolvedConfig) -> Layout {
        Layout {
            out: cfg.output_dir.clone(),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.tsv")
    }

    pub fn mixture(&self, clip_id: &str) -> PathBuf {
        self.out.join("mixtures").join(format!("{clip_id}.wav"))
    }

    pub fn image(&self, clip_id: &str, kind: ImageKind) -> PathBuf {
        self.out
            .join("images")
            .join(format!("{clip_id}.{}.img", kind.as_str()))
    }

    pub fn dict(&self, condition: Condition) -> PathBuf {
        self.out.join("models").join(format!("{}.dict", condition.label()))
    }

    pub fn readouts(&self, condition: Condition) -> (PathBuf, PathBuf) {
        let models = self.out.join("models");
        (
            models.join(format!("{}.vocal.ro", condition.label())),
            models.join(format!("{}.accomp.ro", condition.label())),
        )
    }

    pub fn stems_dir(&self, condition: Condition, pass: Pass) -> PathBuf {
        self.out
            .join("stems")
            .join(format!("{}.{}", condition.label(), pass.as_str()))
    }

    pub fn sweep(&self) -> PathBuf {
        self.out.join("sweep.csv")
    }

    pub fn scores(&self) -> PathBuf {
        self.out.join("scores.csv")
    }

    pub fn aggregate(&self) -> PathBuf {
        self.out.join("aggregate.txt")
    }

    pub fn report(&self) -> PathBuf {
        self.out.join("report.txt")
    }
}

/// The model-owning condition behind `c` and the pass its scored stems
/// come from: the decode-again condition reuses the phase-rich model.
fn stems_source(c: Condition) -> (Condition, Pass) {
    match c {
        Condition::Denoised => (Condition::Phase, Pass::Denoised),
        other => (other, Pass::Single),
    }
}

/// Conditions that own a trained model, in canonical order.
fn model_conditions(conditions: &[Condition]) -> Vec<Condition> {
    Condition::ALL[..3]
        .iter()
        .copied()
        .filter(|m| conditions.iter().any(|&c| stems_source(c).0 == *m))
        .collect()
}

// ---------------------------------------------------------------------------
// Guards, dependencies, provenance

fn guard_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(Error::Usage(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "missing artifact {}; run `phasesep {produced_by}` first",
            path.display()
        )))
    }
}

fn create_parent_dirs(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Recreate a stem directory empty (under --force stale files must not
/// survive into the new run).
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct Provenance {
    config_hash: String,
}

fn prov_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("provenance.prov")
    } else {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".prov");
        artifact.with_file_name(name)
    }
}

fn write_prov(artifact: &Path, cfg: &ResolvedConfig, inputs: Hash32) -> Result<()> {
    let path = prov_path(artifact);
    let text = format!(
        "config_hash = {}\nseed = {}\ninputs = {}\n",
        to_hex(&cfg.config_hash()),
        cfg.params.seed,
        to_hex(&inputs),
    );
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_prov(artifact: &Path) -> Result<Provenance> {
    let path = prov_path(artifact);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim(), v.trim());
        }
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::format(&path, format!("missing `{k}` field")))
    };
    get("seed")?
        .parse::<u64>()
        .map_err(|_| Error::format(&path, "unparsable `seed` field"))?;
    phasesep_core::provenance::from_hex(get("inputs")?)
        .ok_or_else(|| Error::format(&path, "unparsable `inputs` field"))?;
    Ok(Provenance {
        config_hash: get("config_hash")?.to_owned(),
    })
}

/// Combined content hash of input artifacts: the hash of the concatenated
/// per-file hashes, in the given order.
fn combined_hash(paths: &[PathBuf]) -> Result<Hash32> {
    let mut all = Vec::with_capacity(paths.len() * 32);
    for p in paths {
        all.extend_from_slice(&sha256_file(p)?);
    }
    Ok(sha256_bytes(&all))
}

fn check_artifact_hash(artifact: &Path, cfg: &ResolvedConfig) -> Result<Provenance> {
    require(&prov_path(artifact), "the producing stage")?;
    let prov = read_prov(artifact)?;
    let ours = to_hex(&cfg.config_hash());
    if prov.config_hash != ours {
        return Err(Error::Provenance(format!(
            "{} was produced under config {} but the current config hashes to {ours}; \
             refusing to mix runs",
            artifact.display(),
            prov.config_hash,
        )));
    }
    Ok(prov)
}

fn check_meta(meta: &AtomFileMeta, path: &Path, cfg: &ResolvedConfig) -> Result<()> {
    if meta.config_hash != cfg.config_hash() {
        return Err(Error::Provenance(format!(
            "{} was produced under config {} but the current config hashes to {}; \
             refusing to mix runs",
            path.display(),
            to_hex(&meta.config_hash),
            to_hex(&cfg.config_hash()),
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared loaders

fn load_manifest(layout: &Layout) -> Result<DatasetManifest> {
    require(&layout.manifest(), "prepare")?;
    DatasetManifest::load(&layout.manifest())
}

fn load_dict_checked(
    layout: &Layout,
    condition: Condition,
    cfg: &ResolvedConfig,
) -> Result<Dictionary<S>> {
    let path = layout.dict(condition);
    require(&path, "train")?;
    let (dict, meta) = Dictionary::<S>::load(&path)?;
    if meta.role != AtomRole::Coding {
        return Err(Error::format(&path, "expected a coding dictionary file"));
    }
    check_meta(&meta, &path, cfg)?;
    Ok(dict)
}

fn load_readouts_checked(
    layout: &Layout,
    condition: Condition,
    cfg: &ResolvedConfig,
) -> Result<ReadoutPair<S>> {
    let (vocal_path, accomp_path) = layout.readouts(condition);
    require(&vocal_path, "train-readouts")?;
    require(&accomp_path, "train-readouts")?;
    let (readouts, meta) = ReadoutPair::<S>::load(&vocal_path, &accomp_path)?;
    check_meta(&meta, &vocal_path, cfg)?;
    Ok(readouts)
}

fn load_train_images(
    layout: &Layout,
    manifest: &DatasetManifest,
    kind: ImageKind,
) -> Result<Vec<SoundImage<S>>> {
    manifest
        .train_ids
        .iter()
        .map(|id| {
            let path = layout.image(id, kind);
            require(&path, "prepare")?;
            SoundImage::<S>::load(&path)
        })
        .collect()
}

/// Input hashes behind every model of a condition, manifest included.
fn model_inputs(layout: &Layout, condition: Condition) -> Vec<PathBuf> {
    let (vocal, accomp) = layout.readouts(condition);
    vec![layout.dict(condition), vocal, accomp, layout.manifest()]
}

// ---------------------------------------------------------------------------
// Stages

pub fn synth(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let root = &cfg.dataset_root;
    if !force && root.exists() {
        let has_wavs = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .flatten()
            .any(|e| e.path().extension().is_some_and(|x| x == "wav"));
        if has_wavs {
            return Err(Error::Usage(format!(
                "{} already contains clips; pass --force to regenerate",
                root.display()
            )));
        }
    }
    let ids = write_synth_dataset(root, cfg.synth_clips, cfg.synth_seed, cfg.convention)?;
    println!(
        "wrote {} synthetic clips to {} (seed {})",
        ids.len(),
        root.display(),
        cfg.synth_seed
    );
    Ok(())
}

pub fn prepare(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    guard_overwrite(&[layout.manifest()], force)?;

    let mut ids: Vec<String> = std::fs::read_dir(&cfg.dataset_root)
        .map_err(|e| Error::Data(format!("cannot read dataset dir {}: {e}", cfg.dataset_root.display())))?
        .flatten()
        .filter(|e| e.path().extension().is_some_and(|x| x == "wav"))
        .filter_map(|e| Some(e.path().file_stem()?.to_str()?.to_owned()))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "no .wav clips found in {}",
            cfg.dataset_root.display()
        )));
    }
    let p = &cfg.params;
    if ids.len() < p.n_train + p.n_test {
        return Err(Error::Data(format!(
            "dataset has {} clips but the configuration wants {} train + {} test",
            ids.len(),
            p.n_train,
            p.n_test
        )));
    }

    let mut manifest = phasesep_core::audio::make_split(&ids, p.n_train, p.seed)?;
    manifest.test_ids.truncate(p.n_test);
    manifest.convention = cfg.convention;

    let (train, test) = load_dataset::<S>(&cfg.dataset_root, &manifest)?;
    let kinds: Vec<ImageKind> = {
        let mut ks: Vec<ImageKind> = Vec::new();
        for c in &cfg.conditions {
            let k = c.kind();
            if !ks.contains(&k) {
                ks.push(k);
            }
        }
        ks
    };

    for pair in train.iter().chain(test.iter()) {
        let mix = phasesep_core::audio::mix_equal(pair)?;
        let mix_path = layout.mixture(&pair.clip_id);
        create_parent_dirs(&mix_path)?;
        write_wav_mono_f32(&mix_path, &mix)?;
        for &kind in &kinds {
            let img = to_sound_image(&stft(&mix, &StftConfig::for_kind(kind))?, kind)?;
            let img_path = layout.image(&pair.clip_id, kind);
            create_parent_dirs(&img_path)?;
            img.save(&img_path)?;
        }
    }

    manifest.save(&layout.manifest())?;
    let dataset_files: Vec<PathBuf> = manifest
        .train_ids
        .iter()
        .chain(manifest.test_ids.iter())
        .map(|id| cfg.dataset_root.join(format!("{id}.wav")))
        .collect();
    write_prov(&layout.manifest(), cfg, combined_hash(&dataset_files)?)?;

    println!(
        "prepared {} train / {} test clips; mixtures and {} image kind(s) under {}",
        manifest.n_train(),
        manifest.n_test(),
        kinds.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

pub fn sweep(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    guard_overwrite(&[layout.sweep()], force)?;
    let manifest = load_manifest(&layout)?;
    let images = load_train_images(&layout, &manifest, ImageKind::PhaseRich)?;

    let points = threshold_sweep(
        &images,
        cfg.params.dict_shape(ImageKind::PhaseRich),
        &cfg.params.learn(),
        &cfg.params.lca(),
        &cfg.sweep_lambdas,
        cfg.noise_factor,
        cfg.params.seed,
    )?;
    experiments::write_sweep_csv(&layout.sweep(), &points)?;
    let image_files: Vec<PathBuf> = manifest
        .train_ids
        .iter()
        .map(|id| layout.image(id, ImageKind::PhaseRich))
        .collect();
    write_prov(&layout.sweep(), cfg, combined_hash(&image_files)?)?;

    println!("lambda  sparsity  denoise_error");
    for pt in &points {
        println!("{:<7} {:<9.4} {:.4}", pt.lambda, pt.mean_sparsity, pt.denoise_error);
    }
    println!("wrote {}", layout.sweep().display());
    Ok(())
}

pub fn train(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    let manifest = load_manifest(&layout)?;
    let targets = model_conditions(&cfg.conditions);
    let paths: Vec<PathBuf> = targets.iter().map(|&c| layout.dict(c)).collect();
    guard_overwrite(&paths, force)?;

    for &condition in &targets {
        let kind = condition.kind();
        let images = load_train_images(&layout, &manifest, kind)?;
        let (dict, report) = train_dictionary(
            &images,
            cfg.params.dict_shape(kind),
            &cfg.params.learn(),
            &cfg.params.lca(),
        )?;
        let path = layout.dict(condition);
        create_parent_dirs(&path)?;
        dict.save(
            &path,
            &AtomFileMeta {
                role: AtomRole::Coding,
                seed: cfg.params.seed,
                config_hash: cfg.config_hash(),
            },
        )?;
        println!(
            "trained {} dictionary ({} atoms): relative error {:.4} -> {:.4}, sparsity {:.4} -> {:.4}",
            condition.label(),
            dict.n_features(),
            report.epoch_mean_error.first().copied().unwrap_or(f64::NAN),
            report.epoch_mean_error.last().copied().unwrap_or(f64::NAN),
            report.epoch_mean_sparsity.first().copied().unwrap_or(f64::NAN),
            report.epoch_mean_sparsity.last().copied().unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

pub fn train_readouts_stage(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    let manifest = load_manifest(&layout)?;
    let targets = model_conditions(&cfg.conditions);
    let paths: Vec<PathBuf> = targets
        .iter()
        .flat_map(|&c| {
            let (v, a) = layout.readouts(c);
            [v, a]
        })
        .collect();
    guard_overwrite(&paths, force)?;

    let (train_pairs, _) = load_dataset::<S>(&cfg.dataset_root, &manifest)?;
    for &condition in &targets {
        let dict = load_dict_checked(&layout, condition, cfg)?;
        let (readouts, report) =
            experiments::train_condition_readouts(&train_pairs, condition, &dict, &cfg.params)?;
        let (vocal_path, accomp_path) = layout.readouts(condition);
        readouts.save(&vocal_path, &accomp_path, cfg.params.seed, cfg.config_hash())?;
        println!(
            "trained {} readouts: loss {:.4e} -> {:.4e} over {} epochs",
            condition.label(),
            report.per_epoch_loss.first().copied().unwrap_or(f64::NAN),
            report.per_epoch_loss.last().copied().unwrap_or(f64::NAN),
            report.per_epoch_loss.len(),
        );
    }
    Ok(())
}

fn load_test_mixtures(
    layout: &Layout,
    manifest: &DatasetManifest,
) -> Result<Vec<(String, Waveform<S>)>> {
    manifest
        .test_ids
        .iter()
        .map(|id| {
            let path = layout.mixture(id);
            require(&path, "prepare")?;
            Ok((id.clone(), read_wav_mono::<S>(&path)?))
        })
        .collect()
}

fn write_stems(
    dir: &Path,
    condition: Condition,
    pass: Pass,
    stems: &[StemEstimate<S>],
) -> Result<()> {
    for est in stems {
        let (vocal_name, accomp_name) = stem_filenames(&est.clip_id, condition.label(), pass);
        write_wav_mono_f32(&dir.join(vocal_name), &est.vocal)?;
        write_wav_mono_f32(&dir.join(accomp_name), &est.accompaniment)?;
    }
    Ok(())
}

fn print_diagnostics(label: &str, pass: Pass, stems: &[StemEstimate<S>]) {
    let n = stems.len().max(1) as f64;
    let mismatch: f64 = stems.iter().map(|s| s.diagnostics.image_sum_mismatch).sum::<f64>() / n;
    let clamped: usize = stems
        .iter()
        .map(|s| s.diagnostics.clamped_vocal + s.diagnostics.clamped_accomp)
        .sum();
    println!(
        "separated {} clips [{} / {}]: mean stem-sum mismatch {:.3}, clamped cells {}",
        stems.len(),
        label,
        pass.as_str(),
        mismatch,
        clamped
    );
}

pub fn separate(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    let manifest = load_manifest(&layout)?;
    let targets = model_conditions(&cfg.conditions);
    let dirs: Vec<PathBuf> = targets
        .iter()
        .map(|&c| layout.stems_dir(c, Pass::Single))
        .collect();
    guard_overwrite(&dirs, force)?;

    let mixtures = load_test_mixtures(&layout, &manifest)?;
    for &condition in &targets {
        let dict = load_dict_checked(&layout, condition, cfg)?;
        let readouts = load_readouts_checked(&layout, condition, cfg)?;
        let stft_cfg = StftConfig::for_kind(condition.kind());
        let lca = cfg.params.lca();
        let encoder = Encoder::new(&dict, &lca)?;
        let stems: Vec<StemEstimate<S>> = mixtures
            .par_iter()
            .map(|(id, mix)| separate_with(&encoder, &readouts, &stft_cfg, mix, id))
            .collect::<Result<_>>()?;

        let dir = layout.stems_dir(condition, Pass::Single);
        fresh_dir(&dir)?;
        write_stems(&dir, condition, Pass::Single, &stems)?;
        write_prov(&dir, cfg, combined_hash(&model_inputs(&layout, condition))?)?;
        print_diagnostics(condition.label(), Pass::Single, &stems);
    }
    Ok(())
}

pub fn denoise(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    if !cfg.conditions.contains(&Condition::Denoised) {
        return Err(Error::Usage(
            "the configured conditions do not include `denoised`".into(),
        ));
    }
    let layout = Layout::new(cfg);
    let manifest = load_manifest(&layout)?;
    let out_dir = layout.stems_dir(Condition::Phase, Pass::Denoised);
    guard_overwrite(std::slice::from_ref(&out_dir), force)?;

    let single_dir = layout.stems_dir(Condition::Phase, Pass::Single);
    check_artifact_hash(&single_dir, cfg)?;
    let dict = load_dict_checked(&layout, Condition::Phase, cfg)?;
    let readouts = load_readouts_checked(&layout, Condition::Phase, cfg)?;

    let mut single_files = Vec::new();
    let singles: Vec<StemEstimate<S>> = manifest
        .test_ids
        .iter()
        .map(|id| {
            let (vocal_name, accomp_name) = stem_filenames(id, Condition::Phase.label(), Pass::Single);
            let vocal_path = single_dir.join(vocal_name);
            let accomp_path = single_dir.join(accomp_name);
            require(&vocal_path, "separate")?;
            require(&accomp_path, "separate")?;
            single_files.push(vocal_path.clone());
            single_files.push(accomp_path.clone());
            Ok(StemEstimate {
                vocal: read_wav_mono::<S>(&vocal_path)?,
                accompaniment: read_wav_mono::<S>(&accomp_path)?,
                clip_id: id.clone(),
                kind: ImageKind::PhaseRich,
                pass: Pass::Single,
                diagnostics: StemDiagnostics::default(),
            })
        })
        .collect::<Result<_>>()?;

    let stft_cfg = StftConfig::for_kind(ImageKind::PhaseRich);
    let lca = cfg.params.lca();
    let encoder = Encoder::new(&dict, &lca)?;
    let denoised: Vec<StemEstimate<S>> = singles
        .par_iter()
        .map(|est| denoise_with(&encoder, &readouts, &stft_cfg, est))
        .collect::<Result<_>>()?;

    fresh_dir(&out_dir)?;
    write_stems(&out_dir, Condition::Phase, Pass::Denoised, &denoised)?;
    let mut inputs = model_inputs(&layout, Condition::Phase);
    inputs.extend(single_files);
    write_prov(&out_dir, cfg, combined_hash(&inputs)?)?;
    print_diagnostics(Condition::Phase.label(), Pass::Denoised, &denoised);
    Ok(())
}

pub fn eval(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    let manifest = load_manifest(&layout)?;
    guard_overwrite(&[layout.scores(), layout.aggregate()], force)?;

    let (_, test_pairs) = load_dataset::<S>(&cfg.dataset_root, &manifest)?;
    let mut results: Vec<ConditionResult> = Vec::with_capacity(cfg.conditions.len());
    let mut input_provs: Vec<PathBuf> = vec![layout.manifest()];
    for &condition in &cfg.conditions {
        let (model, pass) = stems_source(condition);
        let dir = layout.stems_dir(model, pass);
        require(&dir, if pass == Pass::Denoised { "denoise" } else { "separate" })?;
        check_artifact_hash(&dir, cfg)?;
        input_provs.push(prov_path(&dir));

        let stems: Vec<StemEstimate<S>> = manifest
            .test_ids
            .iter()
            .map(|id| {
                let (vocal_name, accomp_name) = stem_filenames(id, model.label(), pass);
                let vocal_path = dir.join(vocal_name);
                let accomp_path = dir.join(accomp_name);
                require(&vocal_path, if pass == Pass::Denoised { "denoise" } else { "separate" })?;
                Ok(StemEstimate {
                    vocal: read_wav_mono::<S>(&vocal_path)?,
                    accompaniment: read_wav_mono::<S>(&accomp_path)?,
                    clip_id: id.clone(),
                    kind: condition.kind(),
                    pass,
                    diagnostics: StemDiagnostics::default(),
                })
            })
            .collect::<Result<_>>()?;
        results.push(experiments::score_stems(&stems, &test_pairs, condition)?);
    }

    experiments::write_scores_csv(&layout.scores(), &results)?;
    experiments::write_aggregate_report(&layout.aggregate(), &results)?;
    let inputs = combined_hash(&input_provs)?;
    write_prov(&layout.scores(), cfg, inputs)?;
    write_prov(&layout.aggregate(), cfg, inputs)?;

    print!("{}", experiments::format_table(&results));
    println!("wrote {} and {}", layout.scores().display(), layout.aggregate().display());
    Ok(())
}

pub fn report(cfg: &ResolvedConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    guard_overwrite(&[layout.report()], force)?;
    require(&layout.aggregate(), "eval")?;
    check_artifact_hash(&layout.aggregate(), cfg)?;

    let text = std::fs::read_to_string(layout.aggregate())
        .map_err(|e| Error::io(layout.aggregate(), e))?;
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, String, String), (f64, f64)> = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::format(layout.aggregate(), format!("bad record: {e}")))?;
        let field = |k: &str| -> Result<String> {
            Ok(v.get(k)
                .and_then(|x| x.as_str())
                .ok_or_else(|| Error::format(layout.aggregate(), format!("missing `{k}`")))?
                .to_owned())
        };
        let num = |k: &str| -> Result<f64> {
            v.get(k)
                .and_then(|x| x.as_f64())
                .ok_or_else(|| Error::format(layout.aggregate(), format!("missing `{k}`")))
        };
        let condition = field("condition")?;
        if !order.contains(&condition) {
            order.push(condition.clone());
        }
        cells.insert(
            (condition, field("source")?, field("metric")?),
            (num("value")?, num("spread")?),
        );
    }
    if order.is_empty() {
        return Err(Error::format(layout.aggregate(), "no aggregate records"));
    }

    let mut out = String::new();
    for (source, title) in [("vocal", "vocal"), ("accomp", "accompaniment")] {
        out.push_str(&format!("Test-set aggregates ({title}), dB:\n"));
        out.push_str(&format!(
            "{:<12} {:>16} {:>16} {:>16}\n",
            "condition", "GSIR", "GSAR", "GNSDR"
        ));
        for condition in &order {
            let cell = |metric: &str| -> Result<String> {
                let (mean, spread) = cells
                    .get(&(condition.clone(), source.into(), metric.into()))
                    .ok_or_else(|| {
                        Error::format(
                            layout.aggregate(),
                            format!("missing {condition}/{source}/{metric}"),
                        )
                    })?;
                Ok(format!("{mean:.2} ± {spread:.2}"))
            };
            out.push_str(&format!(
                "{:<12} {:>16} {:>16} {:>16}\n",
                condition,
                cell("gsir")?,
                cell("gsar")?,
                cell("gnsdr")?,
            ));
        }
        out.push('\n');
    }

    std::fs::write(layout.report(), &out).map_err(|e| Error::io(layout.report(), e))?;
    write_prov(&layout.report(), cfg, combined_hash(&[prov_path(&layout.aggregate())])?)?;
    print!("{out}");
    println!("wrote {}", layout.report().display());
    Ok(())
}
