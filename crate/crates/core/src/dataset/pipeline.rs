//! Checkpointed dataset stages. Every stage reads what earlier stages wrote,
//! skips records already on disk and appends new ones as they finish; the
//! file is rewritten in record order when the stage completes.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;
use crate::agents::TraceSink;
use crate::backends::{decode_png, encode_png, Backends, Seat};
use crate::config::RunConfig;
use crate::util::write_if_changed;

pub const SETTINGS_FILE: &str = "settings.json";
pub const SETUP_FILE: &str = "setup.json";
pub const FLAVORS_FILE: &str = "flavors.json";
pub const VARIATIONS_FILE: &str = "variations.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const STATS_FILE: &str = "stats.json";

const CLIP_FILES: [&str; 3] = ["frames.png", "first.png", "last.png"];

/// Settings a corpus was generated with; resuming requires a match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusSettings {
    seed: u64,
    t2v_fail_fraction: f64,
    scale: f64,
    width: u32,
    height: u32,
    frame_count: u32,
    fps: u32,
    max_characters: u32,
}

impl CorpusSettings {
    fn of(cfg: &RunConfig) -> Self {
        let d = &cfg.dataset;
        CorpusSettings {
            seed: cfg.seed,
            t2v_fail_fraction: cfg.t2v_fail_fraction,
            scale: d.scale,
            width: d.width,
            height: d.height,
            frame_count: d.frame_count,
            fps: d.fps,
            max_characters: d.max_characters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub total: usize,
    pub passes: usize,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub seed: u64,
    pub scale: f64,
    pub batches_per_flavor: u32,
    pub flavors: usize,
    pub variations: usize,
    pub prompts: usize,
    pub clips: usize,
    pub verdicts: usize,
    pub passes: usize,
    pub fails: usize,
    pub pass_rate: f64,
    pub by_category: BTreeMap<TransitionCategory, CategoryStats>,
    pub manifest_rows: usize,
    pub manifest_histogram: BTreeMap<TransitionCategory, usize>,
}

#[derive(Debug, Clone)]
pub struct DatasetOutput {
    pub dir: PathBuf,
    pub stats: DatasetStats,
}

/// Everything a corpus directory holds, minus the pixels.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub setup: Option<ScenarioSetup>,
    pub flavors: Vec<ScenarioFlavor>,
    pub variations: Vec<ScenarioVariation>,
    pub prompts: Vec<TransitionPrompt>,
    pub verdicts: Vec<FilterVerdict>,
    pub manifest: Vec<ManifestRow>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_if_changed(path, text.as_bytes()).map_err(io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, DatasetError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| DatasetError::Corrupt { path: path.to_path_buf(), message: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io(path)(e)),
    }
}

/// Rows of a JSONL file. A torn final line (interrupted append) is dropped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(row) => out.push(row),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
            Err(e) => {
                return Err(DatasetError::Corrupt { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) })
            }
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DatasetError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("serializable"));
        text.push('\n');
    }
    write_if_changed(path, text.as_bytes()).map_err(io(path))
}

/// Shared append handle for one stage's checkpoint file.
struct Appender {
    path: PathBuf,
    file: Mutex<File>,
}

impl Appender {
    fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        let len = file.metadata().map_err(io(path))?.len();
        if len > 0 {
            // terminate a torn line so later appends start fresh
            let text = std::fs::read(path).map_err(io(path))?;
            if text.last() != Some(&b'\n') {
                file.write_all(b"\n").map_err(io(path))?;
            }
        }
        Ok(Appender { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    fn append<T: Serialize>(&self, rows: &[T]) -> Result<(), DatasetError> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row).expect("serializable"));
            text.push('\n');
        }
        self.file.lock().expect("appender lock").write_all(text.as_bytes()).map_err(io(&self.path))
    }
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool")
}

fn first_error(results: Vec<Result<(), DatasetError>>) -> Result<(), DatasetError> {
    results.into_iter().collect()
}

/// Corpus directory for a configuration: `<out>/dataset/<run>`.
pub fn corpus_dir(cfg: &RunConfig) -> PathBuf {
    let run = cfg.run_id.clone().unwrap_or_else(|| format!("seed{}-b{:02}", cfg.seed, cfg.dataset.batches()));
    cfg.out.join("dataset").join(run)
}

fn check_settings(root: &Path, cfg: &RunConfig) -> Result<(), DatasetError> {
    std::fs::create_dir_all(root).map_err(io(root))?;
    let path = root.join(SETTINGS_FILE);
    let want = CorpusSettings::of(cfg);
    match read_json::<CorpusSettings>(&path)? {
        Some(have) if have != want => Err(DatasetError::Corrupt {
            path,
            message: "corpus was generated with different settings; choose another output directory".into(),
        }),
        Some(_) => Ok(()),
        None => write_json(&path, &want),
    }
}

fn caller(cfg: &RunConfig, backends: &Backends) -> LlmCaller {
    LlmCaller::new(backends, TraceSink::memory(), cfg.seed, cfg.dataset.llm_attempts)
}

fn write_clip(root: &Path, id: &str, frames: &[RgbImage]) -> Result<(), DatasetError> {
    let dir = root.join(clip_dir(id));
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let (w, h) = frames[0].dimensions();
    let mut strip = RgbImage::new(w, h * frames.len() as u32);
    for (i, f) in frames.iter().enumerate() {
        image::imageops::replace(&mut strip, f, 0, (i as u32 * h) as i64);
    }
    let images = [&strip, &frames[0], &frames[frames.len() - 1]];
    for (name, img) in CLIP_FILES.iter().zip(images) {
        let path = dir.join(name);
        write_if_changed(&path, &encode_png(img)).map_err(io(&path))?;
    }
    Ok(())
}

fn clip_complete(root: &Path, id: &str) -> bool {
    let dir = root.join(clip_dir(id));
    CLIP_FILES.iter().all(|f| dir.join(f).is_file())
}

fn read_image(path: &Path) -> Result<RgbImage, DatasetError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    decode_png(&bytes).map_err(|e| DatasetError::Corrupt { path: path.to_path_buf(), message: e.to_string() })
}

/// Read a stored clip back as frames.
pub fn read_clip(root: &Path, id: &str, frame_count: u32) -> Result<Vec<RgbImage>, DatasetError> {
    let path = root.join(clip_dir(id)).join(CLIP_FILES[0]);
    let strip = read_image(&path)?;
    let (w, total) = strip.dimensions();
    if frame_count == 0 || total % frame_count != 0 {
        return Err(DatasetError::Corrupt { path, message: format!("height {total} is not {frame_count} frames") });
    }
    let h = total / frame_count;
    Ok((0..frame_count).map(|i| image::imageops::crop_imm(&strip, 0, i * h, w, h).to_image()).collect())
}

/// Stages 1 and 2: setup, flavors, variations, prompts and clips.
pub fn gen_stage(root: &Path, cfg: &RunConfig, backends: &Backends) -> Result<(), DatasetError> {
    check_settings(root, cfg)?;
    let llm = caller(cfg, backends);
    let workers = pool(cfg.jobs);

    let setup_path = root.join(SETUP_FILE);
    let setup = match read_json::<ScenarioSetup>(&setup_path)? {
        Some(s) => s,
        None => {
            let s = setup_scenarios(&llm, cfg.dataset.max_characters)?;
            write_json(&setup_path, &s)?;
            s
        }
    };

    let flavors_path = root.join(FLAVORS_FILE);
    let flavors = match read_json::<Vec<ScenarioFlavor>>(&flavors_path)? {
        Some(f) => f,
        None => {
            let f = generate_flavors(&llm, &setup)?;
            write_json(&flavors_path, &f)?;
            f
        }
    };

    let batches = cfg.dataset.batches();
    let variations_path = root.join(VARIATIONS_FILE);
    let mut done: BTreeMap<(u32, u32), Vec<ScenarioVariation>> = BTreeMap::new();
    for v in read_jsonl::<ScenarioVariation>(&variations_path)? {
        done.entry((v.flavor_id, v.batch)).or_default().push(v);
    }
    done.retain(|_, rows| {
        rows.sort_by_key(|v| v.index);
        rows.dedup_by_key(|v| v.index);
        rows.len() == BATCH_SIZE as usize
    });
    let todo: Vec<(&ScenarioFlavor, u32)> = flavors
        .iter()
        .flat_map(|f| (1..=batches).map(move |b| (f, b)))
        .filter(|(f, b)| !done.contains_key(&(f.id, *b)))
        .collect();
    let appender = Appender::open(&variations_path)?;
    let made = Mutex::new(Vec::new());
    let results = workers.install(|| {
        todo.par_iter()
            .map(|(f, b)| {
                let rows = generate_batch(&llm, &setup, f, *b)?;
                appender.append(&rows)?;
                made.lock().expect("lock").push(((f.id, *b), rows));
                Ok(())
            })
            .collect::<Vec<_>>()
    });
    done.extend(made.into_inner().expect("lock"));
    first_error(results)?;
    let variations: Vec<ScenarioVariation> = flavors
        .iter()
        .flat_map(|f| (1..=batches).map(move |b| (f.id, b)))
        .flat_map(|key| done.remove(&key).expect("every batch generated"))
        .collect();
    write_jsonl(&variations_path, &variations)?;

    let prompts_path = root.join(PROMPTS_FILE);
    let mut prompts: BTreeMap<String, TransitionPrompt> =
        read_jsonl::<TransitionPrompt>(&prompts_path)?.into_iter().map(|p| (p.id.clone(), p)).collect();
    let todo: Vec<(u64, &ScenarioVariation)> = variations
        .iter()
        .enumerate()
        .filter(|(_, v)| !prompts.contains_key(&v.id()))
        .map(|(i, v)| (i as u64, v))
        .collect();
    let appender = Appender::open(&prompts_path)?;
    let made = Mutex::new(Vec::new());
    let results = workers.install(|| {
        todo.par_iter()
            .map(|(ordinal, v)| {
                let p = synthesize_prompt(&llm, v, *ordinal)?;
                appender.append(std::slice::from_ref(&p))?;
                made.lock().expect("lock").push(p);
                Ok(())
            })
            .collect::<Vec<_>>()
    });
    prompts.extend(made.into_inner().expect("lock").into_iter().map(|p| (p.id.clone(), p)));
    first_error(results)?;
    let ordered: Vec<TransitionPrompt> =
        variations.iter().map(|v| prompts.remove(&v.id()).expect("every prompt synthesized")).collect();
    write_jsonl(&prompts_path, &ordered)?;

    let t2v = backends.handle(Seat::T2v);
    let results = workers.install(|| {
        ordered
            .par_iter()
            .filter(|p| !clip_complete(root, &p.id))
            .map(|p| {
                let frames = generate_clip(t2v, p, &cfg.dataset, cfg.seed)?;
                write_clip(root, &p.id, &frames)
            })
            .collect::<Vec<_>>()
    });
    first_error(results)
}

/// Stage 3: count endpoint figures in every clip.
pub fn filter_stage(root: &Path, cfg: &RunConfig, backends: &Backends) -> Result<(), DatasetError> {
    check_settings(root, cfg)?;
    let prompts_path = root.join(PROMPTS_FILE);
    if !prompts_path.is_file() {
        return Err(DatasetError::MissingStage(prompts_path));
    }
    let prompts: Vec<TransitionPrompt> = read_jsonl(&prompts_path)?;
    let verdicts_path = root.join(VERDICTS_FILE);
    let mut verdicts: BTreeMap<String, FilterVerdict> =
        read_jsonl::<FilterVerdict>(&verdicts_path)?.into_iter().map(|v| (v.id.clone(), v)).collect();
    let vlm = backends.handle(Seat::Vlm);
    let appender = Appender::open(&verdicts_path)?;
    let made = Mutex::new(Vec::new());
    let results = pool(cfg.jobs).install(|| {
        prompts
            .par_iter()
            .filter(|p| !verdicts.contains_key(&p.id))
            .map(|p| {
                if !clip_complete(root, &p.id) {
                    return Err(DatasetError::MissingStage(root.join(clip_dir(&p.id))));
                }
                let dir = root.join(clip_dir(&p.id));
                let frames = [read_image(&dir.join(CLIP_FILES[1]))?, read_image(&dir.join(CLIP_FILES[2]))?];
                let v = filter_clip(&p.id, &frames, p, vlm)?;
                appender.append(std::slice::from_ref(&v))?;
                made.lock().expect("lock").push(v);
                Ok(())
            })
            .collect::<Vec<_>>()
    });
    verdicts.extend(made.into_inner().expect("lock").into_iter().map(|v| (v.id.clone(), v)));
    first_error(results)?;
    let ordered: Vec<FilterVerdict> = prompts.iter().map(|p| verdicts.remove(&p.id).expect("every clip filtered")).collect();
    write_jsonl(&verdicts_path, &ordered)
}

/// Stage 4 input: the balanced training manifest.
pub fn assemble_stage(root: &Path, cfg: &RunConfig) -> Result<TrainingManifest, DatasetError> {
    let verdicts_path = root.join(VERDICTS_FILE);
    if !verdicts_path.is_file() {
        return Err(DatasetError::MissingStage(verdicts_path));
    }
    let verdicts: Vec<FilterVerdict> = read_jsonl(&verdicts_path)?;
    let prompts: Vec<TransitionPrompt> = read_jsonl(&root.join(PROMPTS_FILE))?;
    let rows = cfg.dataset.manifest_rows.unwrap_or_else(|| verdicts.iter().filter(|v| v.pass).count());
    let manifest = assemble_manifest(&verdicts, &prompts, rows, cfg.seed)?;
    write_jsonl(&root.join(MANIFEST_FILE), &manifest.rows)?;
    Ok(manifest)
}

/// Terminal reduction over whatever the corpus holds.
pub fn stats_stage(root: &Path, cfg: &RunConfig) -> Result<DatasetStats, DatasetError> {
    let corpus = load_corpus(root)?;
    let category: BTreeMap<&str, TransitionCategory> =
        corpus.prompts.iter().map(|p| (p.id.as_str(), p.tau.category)).collect();
    let mut by_category: BTreeMap<TransitionCategory, CategoryStats> = TransitionCategory::ALL
        .into_iter()
        .map(|c| (c, CategoryStats { total: 0, passes: 0, pass_rate: 0.0 }))
        .collect();
    for v in &corpus.verdicts {
        if let Some(c) = category.get(v.id.as_str()) {
            let s = by_category.get_mut(c).expect("all categories");
            s.total += 1;
            s.passes += usize::from(v.pass);
        }
    }
    for s in by_category.values_mut() {
        s.pass_rate = if s.total == 0 { 0.0 } else { s.passes as f64 / s.total as f64 };
    }
    let passes = corpus.verdicts.iter().filter(|v| v.pass).count();
    let total = corpus.verdicts.len();
    let mut manifest_histogram: BTreeMap<TransitionCategory, usize> = BTreeMap::new();
    for row in &corpus.manifest {
        *manifest_histogram.entry(row.category).or_default() += 1;
    }
    let stats = DatasetStats {
        seed: cfg.seed,
        scale: cfg.dataset.scale,
        batches_per_flavor: cfg.dataset.batches(),
        flavors: corpus.flavors.len(),
        variations: corpus.variations.len(),
        prompts: corpus.prompts.len(),
        clips: corpus.prompts.iter().filter(|p| clip_complete(root, &p.id)).count(),
        verdicts: total,
        passes,
        fails: total - passes,
        pass_rate: if total == 0 { 0.0 } else { passes as f64 / total as f64 },
        by_category,
        manifest_rows: corpus.manifest.len(),
        manifest_histogram,
    };
    write_json(&root.join(STATS_FILE), &stats)?;
    Ok(stats)
}

pub fn load_corpus(root: &Path) -> Result<Corpus, DatasetError> {
    Ok(Corpus {
        setup: read_json(&root.join(SETUP_FILE))?,
        flavors: read_json(&root.join(FLAVORS_FILE))?.unwrap_or_default(),
        variations: read_jsonl(&root.join(VARIATIONS_FILE))?,
        prompts: read_jsonl(&root.join(PROMPTS_FILE))?,
        verdicts: read_jsonl(&root.join(VERDICTS_FILE))?,
        manifest: read_jsonl(&root.join(MANIFEST_FILE))?,
    })
}

/// All stages end to end into [`corpus_dir`].
pub fn run_dataset_pipeline(cfg: &RunConfig, backends: &Backends) -> Result<DatasetOutput, DatasetError> {
    let dir = corpus_dir(cfg);
    gen_stage(&dir, cfg, backends)?;
    filter_stage(&dir, cfg, backends)?;
    assemble_stage(&dir, cfg)?;
    let stats = stats_stage(&dir, cfg)?;
    Ok(DatasetOutput { dir, stats })
}
