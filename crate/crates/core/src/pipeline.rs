//! Static and dynamic selection runs, and the persisted result file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendClient;
use crate::clustering::{select_pitch_clusters, ClusterModel, Polarity};
use crate::config::{sha256_hex, ConfigError, SelectionConfig};
use crate::corpus::{
    decode_audio, load_manifest, validate_candidate, AudioBuffer, CandidatePool, CorpusError, EmotionLabel,
    PromptCandidate, ValidationReport,
};
use crate::dynamic::{select_prompt, DynamicError, DynamicSelection, RankedPrompt};
use crate::modelperf::{
    aggregate_perf, failed_too_often, rank_candidates, run_probes, CandidatePerf, ProbeFailure, ProbeResult,
};
use crate::pitch::{analyze, PitchStats};
use crate::quality::{aggregate_and_cut, score_quality, QualityCut, RawQuality};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed { stage: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSizes {
    pub pool: usize,
    pub post_validation: usize,
    pub post_pitch: usize,
    pub post_quality: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub id: String,
    pub transcript: String,
    pub audio_path: PathBuf,
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub candidate_id: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKEntry {
    /// 1-based.
    pub rank: usize,
    pub candidate_id: String,
    pub transcript: String,
    pub audio_path: PathBuf,
    pub perf: CandidatePerf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSelectionResult {
    pub schema_version: u32,
    pub status: RunStatus,
    pub speaker: String,
    pub emotion: EmotionLabel,
    pub manifest: PathBuf,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub probe_set_hash: String,
    pub rubric_hash: String,
    pub polarity: Polarity,
    pub stages: StageSizes,
    pub candidates: Vec<CandidateInfo>,
    /// Candidates with at least one validation flag.
    pub validation: BTreeMap<String, ValidationReport>,
    pub excluded: Vec<Exclusion>,
    pub pitch_stats: BTreeMap<String, PitchStats>,
    pub cluster_model: Option<ClusterModel>,
    pub cluster_ranking: Vec<usize>,
    pub post_pitch: Vec<String>,
    pub quality: Option<QualityCut>,
    pub post_quality: Vec<String>,
    /// Every evaluated candidate, best first.
    pub perfs: Vec<CandidatePerf>,
    pub probe_results: Vec<ProbeResult>,
    pub probe_failures: Vec<ProbeFailure>,
    pub top_k: Vec<TopKEntry>,
    pub timestamps: Timestamps,
}

impl StaticSelectionResult {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    pub fn ranked_prompts(&self) -> Vec<RankedPrompt> {
        self.top_k
            .iter()
            .map(|e| RankedPrompt {
                candidate_id: e.candidate_id.clone(),
                transcript: e.transcript.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read manifest: {0}")]
    Manifest(CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("stage {stage} failed: {message} (partial result written to {})", result_path.display())]
    Stage {
        stage: String,
        message: String,
        result_path: PathBuf,
    },
}

impl PipelineError {
    /// Usage and I/O problems are 2, pipeline failures 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Stage { .. } => 1,
            _ => 2,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Advisory lock held on `<out>.lock` while a result file is written.
pub struct OutputLock {
    _file: File,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> std::io::Result<Self> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut name = out.as_os_str().to_owned();
        name.push(".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(PathBuf::from(name))?;
        file.lock()?;
        Ok(Self { _file: file })
    }
}

/// Serializes `result` to `out` through a temp file in the same directory.
pub fn write_result(result: &StaticSelectionResult, out: &Path) -> std::io::Result<()> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut bytes = serde_json::to_vec_pretty(result).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(out).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a result file: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: schema_version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { path: PathBuf, found: String },
}

pub fn load_result(path: &Path) -> Result<StaticSelectionResult, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse = |reason: String| LoadError::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
    match value.get("schema_version") {
        Some(v) if v.as_u64() == Some(u64::from(SCHEMA_VERSION)) => {}
        other => {
            return Err(LoadError::SchemaVersion {
                path: path.to_path_buf(),
                found: other.map(|v| v.to_string()).unwrap_or_else(|| "missing".into()),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| parse(e.to_string()))
}

/// Runs the static stage with a client built from `cfg`.
pub fn run_static(
    cfg: &SelectionConfig,
    manifest: &Path,
    speaker: &str,
    emotion: EmotionLabel,
    out: &Path,
) -> Result<StaticSelectionResult, PipelineError> {
    cfg.validate()?;
    let client = cfg.build_client()?;
    run_static_with(cfg, &client, manifest, speaker, emotion, out)
}

struct StageFailure {
    stage: &'static str,
    message: String,
}

fn fail(stage: &'static str, message: impl Into<String>) -> StageFailure {
    StageFailure {
        stage,
        message: message.into(),
    }
}

/// Runs ingest, validation, pitch clustering, the quality gate and probe
/// ranking, and writes the result to `out`. A failing stage still writes
/// everything computed so far, marked failed.
pub fn run_static_with(
    cfg: &SelectionConfig,
    client: &BackendClient,
    manifest: &Path,
    speaker: &str,
    emotion: EmotionLabel,
    out: &Path,
) -> Result<StaticSelectionResult, PipelineError> {
    cfg.validate()?;
    let probes = cfg.probe_set()?;
    let rubric = cfg.rubric_text()?;
    let rubric_hash = sha256_hex(&rubric);

    let pool = match load_manifest(manifest, speaker, emotion) {
        Ok(pool) => Some(pool),
        Err(e @ CorpusError::Io { .. }) => return Err(PipelineError::Manifest(e)),
        Err(e) => {
            log::error!("ingest: {e}");
            None
        }
    };

    let _lock = OutputLock::acquire(out).map_err(io_err(out))?;
    let mut result = StaticSelectionResult {
        schema_version: SCHEMA_VERSION,
        status: RunStatus::Complete,
        speaker: speaker.to_string(),
        emotion,
        manifest: manifest.to_path_buf(),
        config_hash: cfg.snapshot_hash(probes.hash(), &rubric_hash),
        config: cfg.to_kv().into_iter().collect(),
        probe_set_hash: probes.hash().to_string(),
        rubric_hash,
        polarity: cfg.polarity.get(emotion),
        stages: StageSizes::default(),
        candidates: Vec::new(),
        validation: BTreeMap::new(),
        excluded: Vec::new(),
        pitch_stats: BTreeMap::new(),
        cluster_model: None,
        cluster_ranking: Vec::new(),
        post_pitch: Vec::new(),
        quality: None,
        post_quality: Vec::new(),
        perfs: Vec::new(),
        probe_results: Vec::new(),
        probe_failures: Vec::new(),
        top_k: Vec::new(),
        timestamps: Timestamps {
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        },
    };

    let outcome = match pool {
        Some(pool) => run_stages(cfg, client, &probes, &rubric, pool, &mut result),
        None => Err(fail("ingest", "manifest could not be parsed into a candidate pool")),
    };
    if let Err(f) = &outcome {
        log::error!("stage {} failed: {}", f.stage, f.message);
        result.status = RunStatus::Failed {
            stage: f.stage.to_string(),
            message: f.message.clone(),
        };
    }
    result.timestamps.finished_unix_ms = now_ms();
    write_result(&result, out).map_err(io_err(out))?;
    match outcome {
        Ok(()) => Ok(result),
        Err(f) => Err(PipelineError::Stage {
            stage: f.stage.to_string(),
            message: f.message,
            result_path: out.to_path_buf(),
        }),
    }
}

fn exclude(result: &mut StaticSelectionResult, id: &str, stage: &str, reason: String) {
    log::warn!("{id}: excluded at {stage}: {reason}");
    result.excluded.push(Exclusion {
        candidate_id: id.to_string(),
        stage: stage.to_string(),
        reason,
    });
}

fn run_stages(
    cfg: &SelectionConfig,
    client: &BackendClient,
    probes: &crate::modelperf::ProbeTextSet,
    rubric: &str,
    pool: CandidatePool,
    result: &mut StaticSelectionResult,
) -> Result<(), StageFailure> {
    let emotion = pool.emotion();
    result.stages.pool = pool.len();

    // decode and validate
    let decoded: Vec<(PromptCandidate, Result<AudioBuffer, String>)> = pool
        .candidates()
        .par_iter()
        .map(|c| {
            let mut c = c.clone();
            let audio = decode_audio(&mut c).map_err(|e| e.to_string());
            (c, audio)
        })
        .collect();
    let mut audio: BTreeMap<String, AudioBuffer> = BTreeMap::new();
    let mut usable = Vec::new();
    for (c, decoded) in decoded {
        result.candidates.push(CandidateInfo {
            id: c.id.clone(),
            transcript: c.transcript.clone(),
            audio_path: c.audio_path.clone(),
            duration_s: c.duration_s,
        });
        match decoded {
            Err(e) => exclude(result, &c.id, "decode", e),
            Ok(buf) => {
                let report = validate_candidate(&c, &buf, &cfg.validation);
                let empty = report.has_empty_transcript();
                if !report.is_clean() {
                    result.validation.insert(c.id.clone(), report);
                }
                if empty {
                    exclude(result, &c.id, "validate", "empty transcript".into());
                } else {
                    usable.push(c.id.clone());
                    audio.insert(c.id.clone(), buf);
                }
            }
        }
    }
    let valid_pool = pool.filtered(|c| audio.contains_key(&c.id));
    result.stages.post_validation = valid_pool.len();

    // pitch features and clustering
    let pitch: Vec<(String, Result<PitchStats, String>)> = usable
        .par_iter()
        .map(|id| (id.clone(), analyze(&audio[id], &cfg.pitch).map_err(|e| e.to_string())))
        .collect();
    for (id, stats) in pitch {
        match stats {
            Ok(s) => {
                result.pitch_stats.insert(id, s);
            }
            Err(e) => exclude(result, &id, "pitch", e),
        }
    }
    let selection = select_pitch_clusters(
        &valid_pool,
        &result.pitch_stats,
        cfg.num_clusters,
        cfg.m,
        cfg.polarity.get(emotion),
        cfg.seed,
    )
    .map_err(|e| fail("clustering", e.to_string()))?;
    result.cluster_model = Some(selection.model);
    result.cluster_ranking = selection.ranking;
    result.post_pitch = selection.pool.ids();
    result.stages.post_pitch = selection.pool.len();

    // quality gate
    let scored: Vec<(String, Result<RawQuality, String>)> = selection
        .pool
        .candidates()
        .par_iter()
        .map(|c| {
            let raw = score_quality(c, &audio[&c.id], emotion, rubric, client).map_err(|e| e.to_string());
            (c.id.clone(), raw)
        })
        .collect();
    let mut raws = Vec::new();
    for (id, raw) in scored {
        match raw {
            Ok(r) => raws.push(r),
            Err(e) => exclude(result, &id, "quality", e),
        }
    }
    let cut = aggregate_and_cut(&raws, cfg.n_percent).map_err(|e| fail("quality", e.to_string()))?;
    let post_quality = selection.pool.filtered(|c| cut.retained.contains(&c.id));
    result.post_quality = cut.retained.clone();
    result.stages.post_quality = cut.retained.len();
    result.quality = Some(cut);

    // probe evaluation
    let persist = cfg
        .persist_probe_audio
        .then(|| cfg.cache_dir.as_ref().map(|d| d.join("probe_audio")))
        .flatten();
    let evaluated: Vec<_> = result
        .post_quality
        .par_iter()
        .map(|id| {
            let c = post_quality.get(id).expect("retained ids come from the pool");
            run_probes(c, &audio[id], probes, client, persist.as_deref())
        })
        .collect();
    let mut perfs = Vec::new();
    for (id, outcomes) in result.post_quality.clone().iter().zip(evaluated) {
        let too_many = failed_too_often(&outcomes, cfg.probe_failure_tolerance);
        let mut ok = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => ok.push(r),
                Err(f) => result.probe_failures.push(f),
            }
        }
        if too_many {
            exclude(result, id, "modelperf", format!("{} of {} probes failed", probes.len() - ok.len(), probes.len()));
            continue;
        }
        match aggregate_perf(&ok) {
            Ok(p) => perfs.push(p),
            Err(e) => exclude(result, id, "modelperf", e.to_string()),
        }
        result.probe_results.extend(ok);
    }
    if perfs.is_empty() {
        return Err(fail("modelperf", "no candidate survived probe evaluation"));
    }
    result.perfs = rank_candidates(&perfs);
    result.top_k = result
        .perfs
        .iter()
        .take(cfg.k)
        .enumerate()
        .map(|(i, p)| {
            let c = post_quality.get(&p.candidate_id).expect("ranked ids come from the pool");
            TopKEntry {
                rank: i + 1,
                candidate_id: p.candidate_id.clone(),
                transcript: c.transcript.clone(),
                audio_path: c.audio_path.clone(),
                perf: p.clone(),
            }
        })
        .collect();
    result.stages.top_k = result.top_k.len();
    Ok(())
}

#[derive(Debug, Error)]
pub enum DynamicRunError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("result file {0} is not complete")]
    Incomplete(PathBuf),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Select(#[from] DynamicError),
}

impl DynamicRunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DynamicRunError::Load(LoadError::Io { .. }) | DynamicRunError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Config stored in a result, with environment and explicit overrides applied.
pub fn config_from_result(
    result: &StaticSelectionResult,
    overrides: &[(String, String)],
) -> Result<SelectionConfig, ConfigError> {
    let mut cfg = SelectionConfig::default();
    for (k, v) in &result.config {
        cfg.set(k, v)?;
    }
    cfg.apply_env()?;
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Picks the stored Top-k prompt most relevant to `text`.
pub fn run_dynamic(
    result_path: &Path,
    text: &str,
    overrides: &[(String, String)],
) -> Result<DynamicSelection, DynamicRunError> {
    let result = load_result(result_path)?;
    if !result.is_complete() {
        return Err(DynamicRunError::Incomplete(result_path.to_path_buf()));
    }
    let cfg = config_from_result(&result, overrides)?;
    let client = cfg.build_client()?;
    Ok(select_prompt(text, &result.ranked_prompts(), &client)?)
}
