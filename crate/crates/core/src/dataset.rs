//! On-disk datasets: split assembly, modality views, few-shot subsets and audits.
//!
//! Layout of a dataset root:
//!
//! ```text
//! config.json            the DatasetSpec used for the build
//! partition.json         pair and lexical partitions
//! blank.png              background-only image for the caption-only setting
//! <split>/manifest.jsonl one ExampleRecord per line
//! <split>/images/<id>.png
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::render::{blank_image, RenderConfig, RenderError, Renderer};
use crate::rng::substream;
use crate::scene::{validate_scene, Colour, Scene, Shape};
use crate::semantics::{eval, pair_key, PairKey, Query, Task};
use crate::splitter::{range_violations, sample_example, SamplerConfig, Side, SplitError, TaskPartition};
use crate::textgen::{concat_text_input, parse_caption, parse_query, render_caption, render_query};

pub const BLANK_IMAGE: &str = "blank.png";
pub const CONFIG_FILE: &str = "config.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{split} split: {source}")]
    Sampling {
        split: SplitName,
        #[source]
        source: SplitError,
    },
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    IndTest,
    OodTest,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::Train, SplitName::Val, SplitName::IndTest, SplitName::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::IndTest => "ind_test",
            SplitName::OodTest => "ood_test",
        }
    }

    /// Which side of the pair partition the split draws from.
    pub fn side(self) -> Side {
        match self {
            SplitName::OodTest => Side::Ood,
            _ => Side::Train,
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitName::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub ind_test: usize,
    pub ood_test: usize,
}

impl SplitSizes {
    pub fn for_task(task: Task) -> Self {
        SplitSizes {
            train: if task == Task::Spatiality { 32_000 } else { 8_000 },
            val: 10_000,
            ind_test: 10_000,
            ood_test: 20_000,
        }
    }

    pub fn get(&self, split: SplitName) -> usize {
        match split {
            SplitName::Train => self.train,
            SplitName::Val => self.val,
            SplitName::IndTest => self.ind_test,
            SplitName::OodTest => self.ood_test,
        }
    }

    pub fn total(&self) -> usize {
        SplitName::ALL.iter().map(|s| self.get(*s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: Task,
    pub seed: u64,
    pub sizes: SplitSizes,
    pub holdout_fraction: f64,
    pub sampler: SamplerConfig,
    pub render: RenderConfig,
    /// Draw labels by fair coin instead of exact 50/50 stratification.
    #[serde(default)]
    pub loose_balance: bool,
    /// Whether per-example PNGs are written.
    #[serde(default = "default_true")]
    pub images: bool,
}

fn default_true() -> bool {
    true
}

pub const DEFAULT_HOLDOUT: f64 = 0.2;

impl DatasetSpec {
    pub fn new(task: Task, seed: u64) -> Self {
        DatasetSpec {
            task,
            seed,
            sizes: SplitSizes::for_task(task),
            holdout_fraction: DEFAULT_HOLDOUT,
            sampler: SamplerConfig::default(),
            render: RenderConfig::default(),
            loose_balance: false,
            images: true,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if SplitName::ALL.iter().any(|s| self.sizes.get(*s) == 0) {
            return Err(DatasetError::InvalidInput("split sizes must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(SplitError::InvalidFraction(self.holdout_fraction).into());
        }
        self.sampler.validate()?;
        self.render.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub total_objects: usize,
    pub distractors: usize,
    pub colour_counts: BTreeMap<Colour, usize>,
    pub shape_counts: BTreeMap<Shape, usize>,
}

impl RecordMeta {
    pub fn of(scene: &Scene, query: &Query) -> Self {
        let mut colour_counts = BTreeMap::new();
        let mut shape_counts = BTreeMap::new();
        for o in scene.objects() {
            *colour_counts.entry(o.colour).or_insert(0) += 1;
            *shape_counts.entry(o.shape).or_insert(0) += 1;
        }
        RecordMeta {
            total_objects: scene.len(),
            distractors: crate::splitter::distractor_count(scene, query),
            colour_counts,
            shape_counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ImageOnly,
    CaptionOnly,
    ImageCaption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub task: Task,
    pub split: SplitName,
    /// Relative to the dataset root.
    pub image_path: String,
    pub caption: String,
    pub query: String,
    pub query_ast: Query,
    pub label: bool,
    pub pair: PairKey,
    pub scene: Scene,
    pub meta: RecordMeta,
    /// Set by modality views only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_input: Option<String>,
}

impl ExampleRecord {
    /// The record with view annotations removed.
    pub fn base(&self) -> ExampleRecord {
        ExampleRecord {
            modality: None,
            text_input: None,
            ..self.clone()
        }
    }
}

pub fn example_id(task: Task, split: SplitName, index: usize) -> String {
    format!("{}-{}-{:06}", task.name(), split.name(), index)
}

pub fn image_path(split: SplitName, id: &str) -> String {
    format!("{}/images/{}.png", split.name(), id)
}

/// Gold labels for a split: exactly balanced (extra `true` for odd sizes) and shuffled,
/// or fair coin flips when `loose`.
fn split_labels(spec: &DatasetSpec, split: SplitName) -> Vec<bool> {
    let n = spec.sizes.get(split);
    let mut rng = substream(spec.seed, &[spec.task.name(), split.name(), "labels"], 0);
    if spec.loose_balance {
        return (0..n).map(|_| rng.random_bool(0.5)).collect();
    }
    let mut labels: Vec<bool> = (0..n).map(|i| i < n.div_ceil(2)).collect();
    labels.shuffle(&mut rng);
    labels
}

pub fn generate_split(
    spec: &DatasetSpec,
    partition: &TaskPartition,
    split: SplitName,
) -> Result<Vec<ExampleRecord>, DatasetError> {
    let labels = split_labels(spec, split);
    labels
        .par_iter()
        .enumerate()
        .map(|(index, &label)| {
            let mut rng = substream(spec.seed, &[spec.task.name(), split.name()], index as u64);
            let ex = sample_example(partition, split.side(), label, &spec.sampler, &mut rng)
                .map_err(|source| DatasetError::Sampling { split, source })?;
            let id = example_id(spec.task, split, index);
            Ok(ExampleRecord {
                image_path: image_path(split, &id),
                id,
                task: spec.task,
                split,
                caption: render_caption(&ex.scene),
                query: render_query(&ex.query),
                query_ast: ex.query,
                label: ex.label,
                pair: ex.pair,
                meta: RecordMeta::of(&ex.scene, &ex.query),
                scene: ex.scene,
                modality: None,
                text_input: None,
            })
        })
        .collect()
}

/// A dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub partition: TaskPartition,
    pub splits: BTreeMap<SplitName, Vec<ExampleRecord>>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Dataset, DatasetError> {
        spec.validate()?;
        let partition = TaskPartition::build(spec.task, spec.holdout_fraction, spec.seed, &spec.sampler)?;
        let mut splits = BTreeMap::new();
        for split in SplitName::ALL {
            splits.insert(split, generate_split(spec, &partition, split)?);
        }
        Ok(Dataset {
            spec: spec.clone(),
            partition,
            splits,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &ExampleRecord> {
        self.splits.values().flatten()
    }

    pub fn split(&self, split: SplitName) -> &[ExampleRecord] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn summary(&self) -> BuildSummary {
        let splits = self
            .splits
            .iter()
            .map(|(name, records)| {
                let trues = records.iter().filter(|r| r.label).count();
                let pairs: BTreeSet<_> = records.iter().map(|r| r.pair).collect();
                SplitSummary {
                    split: *name,
                    records: records.len(),
                    true_labels: trues,
                    false_labels: records.len() - trues,
                    distinct_pairs: pairs.len(),
                }
            })
            .collect();
        BuildSummary {
            task: self.spec.task,
            seed: self.spec.seed,
            splits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: SplitName,
    pub records: usize,
    pub true_labels: usize,
    pub false_labels: usize,
    pub distinct_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub task: Task,
    pub seed: u64,
    pub splits: Vec<SplitSummary>,
}

impl fmt::Display for BuildSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task {} (seed {})", self.task, self.seed)?;
        writeln!(
            f,
            "{:<10} {:>8} {:>8} {:>8} {:>8}",
            "split", "records", "true", "false", "pairs"
        )?;
        for s in &self.splits {
            writeln!(
                f,
                "{:<10} {:>8} {:>8} {:>8} {:>8}",
                s.split.name(),
                s.records,
                s.true_labels,
                s.false_labels,
                s.distinct_pairs
            )?;
        }
        Ok(())
    }
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

pub fn write_manifest(path: &Path, records: &[ExampleRecord]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ExampleRecord>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(records)
}

pub fn manifest_path(root: &Path, split: SplitName) -> PathBuf {
    root.join(split.name()).join(MANIFEST_FILE)
}

/// Generates the dataset described by `spec` and writes it under `root`.
///
/// `jobs` bounds the worker threads used for sampling and rendering; `None` uses all cores.
pub fn build_dataset(spec: &DatasetSpec, root: &Path, jobs: Option<usize>) -> Result<Dataset, DatasetError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| DatasetError::InvalidInput(e.to_string()))?;
    pool.install(|| {
        let dataset = Dataset::generate(spec)?;
        write_dataset(&dataset, root)?;
        Ok(dataset)
    })
}

/// Writes an in-memory dataset, rendering images unless `images` is off.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    write_json_pretty(&root.join(CONFIG_FILE), &dataset.spec)?;
    write_json_pretty(&root.join(PARTITION_FILE), &dataset.partition)?;
    let blank = root.join(BLANK_IMAGE);
    fs::write(&blank, blank_image(&dataset.spec.render)?).map_err(io_err(&blank))?;
    for (split, records) in &dataset.splits {
        let dir = root.join(split.name());
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(io_err(&images))?;
        if dataset.spec.images {
            let renderer = Renderer::new(&dataset.spec.render)?;
            records.par_iter().try_for_each(|r| {
                let bytes = renderer.render(&r.scene)?;
                let path = root.join(&r.image_path);
                fs::write(&path, bytes).map_err(io_err(&path))
            })?;
        }
        write_manifest(&manifest_path(root, *split), records)?;
    }
    Ok(())
}

pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let spec: DatasetSpec = read_json(&root.join(CONFIG_FILE))?;
    let partition: TaskPartition = read_json(&root.join(PARTITION_FILE))?;
    let mut splits = BTreeMap::new();
    for split in SplitName::ALL {
        splits.insert(split, read_manifest(&manifest_path(root, split))?);
    }
    Ok(Dataset {
        spec,
        partition,
        splits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "snake_case")]
pub enum ModalityView {
    ImageOnly,
    CaptionOnly,
    ImageCaption,
    /// Modal dropout: each record is image-only or caption-only with the given
    /// proportions and bimodal otherwise.
    Mixed {
        p_img_only: f64,
        p_cap_only: f64,
    },
}

impl ModalityView {
    pub const MIXED_DEFAULT: ModalityView = ModalityView::Mixed {
        p_img_only: 0.25,
        p_cap_only: 0.25,
    };

    pub fn name(&self) -> &'static str {
        match self {
            ModalityView::ImageOnly => "image_only",
            ModalityView::CaptionOnly => "caption_only",
            ModalityView::ImageCaption => "image_caption",
            ModalityView::Mixed { .. } => "mixed",
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if let ModalityView::Mixed { p_img_only, p_cap_only } = *self {
            let ok = |p: f64| (0.0..=1.0).contains(&p);
            if !ok(p_img_only) || !ok(p_cap_only) || p_img_only + p_cap_only > 1.0 {
                return Err(DatasetError::InvalidInput(format!(
                    "mixed view proportions {p_img_only} + {p_cap_only} must be in [0, 1] and sum to at most 1"
                )));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ModalityView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image_only" => Ok(ModalityView::ImageOnly),
            "caption_only" => Ok(ModalityView::CaptionOnly),
            "image_caption" => Ok(ModalityView::ImageCaption),
            "mixed" => Ok(ModalityView::MIXED_DEFAULT),
            other => Err(format!(
                "unknown setting {other:?} (expected image_only, caption_only, image_caption or mixed)"
            )),
        }
    }
}

fn apply_modality(record: &ExampleRecord, modality: Modality) -> ExampleRecord {
    let mut out = record.base();
    match modality {
        Modality::ImageOnly => out.caption = String::new(),
        Modality::CaptionOnly => out.image_path = BLANK_IMAGE.to_string(),
        Modality::ImageCaption => {}
    }
    let caption = (!out.caption.is_empty()).then_some(out.caption.as_str());
    out.text_input = Some(concat_text_input(caption, &out.query).unwrap_or_default());
    out.modality = Some(modality);
    out
}

/// Presents a split under a modality setting. Labels, ids and splits are never changed.
///
/// The mixed setting assigns exactly `round(p * n)` records to each unimodal view,
/// chosen by a seeded shuffle.
pub fn materialize_view(
    records: &[ExampleRecord],
    view: ModalityView,
    seed: u64,
) -> Result<Vec<ExampleRecord>, DatasetError> {
    view.validate()?;
    let modalities: Vec<Modality> = match view {
        ModalityView::ImageOnly => vec![Modality::ImageOnly; records.len()],
        ModalityView::CaptionOnly => vec![Modality::CaptionOnly; records.len()],
        ModalityView::ImageCaption => vec![Modality::ImageCaption; records.len()],
        ModalityView::Mixed { p_img_only, p_cap_only } => {
            let n = records.len();
            let n_img = (p_img_only * n as f64).round() as usize;
            let n_cap = ((p_cap_only * n as f64).round() as usize).min(n - n_img);
            let mut assigned: Vec<Modality> = std::iter::repeat_n(Modality::ImageOnly, n_img)
                .chain(std::iter::repeat_n(Modality::CaptionOnly, n_cap))
                .chain(std::iter::repeat_n(Modality::ImageCaption, n - n_img - n_cap))
                .collect();
            let split = records.first().map(|r| r.split.name()).unwrap_or("");
            assigned.shuffle(&mut substream(seed, &["view", "mixed", split], 0));
            assigned
        }
    };
    Ok(records
        .iter()
        .zip(modalities)
        .map(|(r, m)| apply_modality(r, m))
        .collect())
}

pub fn view_manifest_path(root: &Path, split: SplitName, view: &ModalityView) -> PathBuf {
    root.join(split.name()).join(format!("manifest.{}.jsonl", view.name()))
}

/// Label-balanced random subset of `n` records (the odd one out is a `true` record),
/// returned in manifest order.
pub fn sample_fewshot(records: &[ExampleRecord], n: usize, seed: u64) -> Result<Vec<ExampleRecord>, DatasetError> {
    if n > records.len() {
        return Err(DatasetError::InvalidInput(format!(
            "few-shot size {n} exceeds manifest size {}",
            records.len()
        )));
    }
    let n_true = n.div_ceil(2);
    let n_false = n / 2;
    let mut picked = Vec::with_capacity(n);
    for (label, want) in [(true, n_true), (false, n_false)] {
        let mut pool: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        if pool.len() < want {
            return Err(DatasetError::InvalidInput(format!(
                "only {} {label} records, {want} needed",
                pool.len()
            )));
        }
        pool.shuffle(&mut substream(
            seed,
            &["fewshot", if label { "true" } else { "false" }],
            0,
        ));
        picked.extend_from_slice(&pool[..want]);
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    InvalidScene,
    CaptionMismatch,
    QueryMismatch,
    OracleMismatch,
    PairMismatch,
    MetaMismatch,
    RangeViolation,
    WrongSide,
    PairOverlap,
    QueryOverlap,
    ComparisonBand,
    LabelBalance,
    SplitSize,
    DuplicateId,
    SplitMismatch,
    MissingImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub kind: ViolationKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub records_checked: usize,
    pub violations: Vec<AuditViolation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, id: Option<&str>, detail: impl Into<String>) {
        self.violations.push(AuditViolation {
            kind,
            id: id.map(str::to_string),
            detail: detail.into(),
        });
    }
}

fn check_record(record: &ExampleRecord, split: SplitName, spec: &DatasetSpec, report: &mut AuditReport) {
    let id = Some(record.id.as_str());
    if record.split != split {
        report.push(
            ViolationKind::SplitMismatch,
            id,
            format!("record says {}, found in {split}", record.split),
        );
    }
    let scene_violations = validate_scene(&record.scene);
    if !scene_violations.is_empty() {
        let detail: Vec<String> = scene_violations.iter().map(ToString::to_string).collect();
        report.push(ViolationKind::InvalidScene, id, detail.join("; "));
        return;
    }
    match parse_caption(&record.caption) {
        Ok(scene) if scene == record.scene => {}
        Ok(_) => report.push(
            ViolationKind::CaptionMismatch,
            id,
            "caption describes a different scene",
        ),
        Err(e) => report.push(ViolationKind::CaptionMismatch, id, e.to_string()),
    }
    let query = match parse_query(&record.query) {
        Ok(q) => {
            if q != record.query_ast {
                report.push(ViolationKind::QueryMismatch, id, "query text and query_ast disagree");
            }
            q
        }
        Err(e) => {
            report.push(ViolationKind::QueryMismatch, id, e.to_string());
            return;
        }
    };
    if query.task() != spec.task {
        report.push(
            ViolationKind::QueryMismatch,
            id,
            format!("{} query in {} dataset", query.task(), spec.task),
        );
    }
    match eval(&record.scene, &query) {
        Ok(y) if y == record.label => {}
        Ok(y) => report.push(
            ViolationKind::OracleMismatch,
            id,
            format!("stored label {} but oracle says {y}", record.label),
        ),
        Err(e) => report.push(ViolationKind::OracleMismatch, id, e.to_string()),
    }
    match pair_key(&record.scene, &query) {
        Ok(key) if key == record.pair => {}
        Ok(key) => report.push(
            ViolationKind::PairMismatch,
            id,
            format!("stored {} but scene gives {key}", record.pair),
        ),
        Err(e) => report.push(ViolationKind::PairMismatch, id, e.to_string()),
    }
    if RecordMeta::of(&record.scene, &query) != record.meta {
        report.push(ViolationKind::MetaMismatch, id, "meta counts disagree with scene");
    }
    for breach in range_violations(&record.scene, &query, &spec.sampler) {
        report.push(ViolationKind::RangeViolation, id, breach);
    }
}

/// Re-derives every stored fact of a dataset and reports what does not hold.
pub fn verify_dataset(dataset: &Dataset) -> AuditReport {
    let spec = &dataset.spec;
    let mut report = AuditReport::default();
    let mut ids = HashSet::new();

    for (split, records) in &dataset.splits {
        report.records_checked += records.len();
        let expected = spec.sizes.get(*split);
        if records.len() != expected {
            report.push(
                ViolationKind::SplitSize,
                None,
                format!("{split}: {} records, expected {expected}", records.len()),
            );
        }
        if !spec.loose_balance {
            let trues = records.iter().filter(|r| r.label).count() as f64;
            let half = records.len() as f64 / 2.0;
            if (trues - half).abs() > 1.0 {
                report.push(
                    ViolationKind::LabelBalance,
                    None,
                    format!("{split}: {trues} true of {}", records.len()),
                );
            }
        }
        let per_record: Vec<AuditReport> = records
            .par_iter()
            .map(|r| {
                let mut local = AuditReport::default();
                check_record(r, *split, spec, &mut local);
                local
            })
            .collect();
        for local in per_record {
            report.violations.extend(local.violations);
        }
        for r in records {
            if !ids.insert(r.id.as_str()) {
                report.push(ViolationKind::DuplicateId, Some(&r.id), "id occurs more than once");
            }
            match dataset.partition.side_of(&r.pair) {
                Some(side) if side == split.side() => {}
                other => report.push(
                    ViolationKind::WrongSide,
                    Some(&r.id),
                    format!(
                        "pair {} lies on {:?} side, split {split} needs {}",
                        r.pair,
                        other,
                        split.side()
                    ),
                ),
            }
            if let Query::Comparison(_) = r.query_ast {
                let diff = r.pair.a.abs_diff(r.pair.b);
                let threshold = spec.sampler.comparison_threshold;
                let in_band = match split.side() {
                    Side::Train => (1..=threshold).contains(&diff),
                    Side::Ood => diff > threshold,
                };
                if !in_band {
                    report.push(
                        ViolationKind::ComparisonBand,
                        Some(&r.id),
                        format!("|a-b| = {diff} in {split}"),
                    );
                }
            }
        }
    }

    let in_dist: BTreeSet<PairKey> = dataset
        .splits
        .iter()
        .filter(|(s, _)| s.side() == Side::Train)
        .flat_map(|(_, rs)| rs.iter().map(|r| r.pair))
        .collect();
    let ood: BTreeSet<PairKey> = dataset.split(SplitName::OodTest).iter().map(|r| r.pair).collect();
    for pair in in_dist.intersection(&ood) {
        report.push(
            ViolationKind::PairOverlap,
            None,
            format!("pair {pair} realized in both training-side splits and ood_test"),
        );
    }
    let train_queries: HashSet<&str> = dataset
        .split(SplitName::Train)
        .iter()
        .map(|r| r.query.as_str())
        .collect();
    let mut reported = HashSet::new();
    for r in dataset.split(SplitName::OodTest) {
        if train_queries.contains(r.query.as_str()) && reported.insert(r.query.as_str()) {
            report.push(
                ViolationKind::QueryOverlap,
                Some(&r.id),
                format!("ood query {:?} occurs in train", r.query),
            );
        }
    }
    report
}

/// [`verify_dataset`] plus checks of the files a built dataset must contain.
pub fn verify_dataset_dir(root: &Path) -> Result<AuditReport, DatasetError> {
    let dataset = load_dataset(root)?;
    let mut report = verify_dataset(&dataset);
    if !root.join(BLANK_IMAGE).is_file() {
        report.push(ViolationKind::MissingImage, None, BLANK_IMAGE);
    }
    if dataset.spec.images {
        let missing: Vec<&ExampleRecord> = dataset
            .records()
            .collect::<Vec<_>>()
            .into_par_iter()
            .filter(|r| !root.join(&r.image_path).is_file())
            .collect();
        for r in missing {
            report.push(ViolationKind::MissingImage, Some(&r.id), r.image_path.clone());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(task: Task, seed: u64) -> DatasetSpec {
        DatasetSpec {
            sizes: SplitSizes {
                train: 400,
                val: 100,
                ind_test: 100,
                ood_test: 200,
            },
            ..DatasetSpec::new(task, seed)
        }
    }

    #[test]
    fn default_sizes() {
        assert_eq!(SplitSizes::for_task(Task::Spatiality).train, 32_000);
        assert_eq!(SplitSizes::for_task(Task::Cardinality).train, 8_000);
        assert_eq!(SplitSizes::for_task(Task::Comparison).total(), 48_000);
    }

    #[test]
    fn ids_are_zero_padded() {
        assert_eq!(
            example_id(Task::Quantifiers, SplitName::OodTest, 42),
            "quantifiers-ood_test-000042"
        );
        assert_eq!(image_path(SplitName::Val, "x"), "val/images/x.png");
    }

    #[test]
    fn generated_small_datasets_verify_clean() {
        for task in Task::ALL {
            let ds = Dataset::generate(&small_spec(task, 1)).unwrap();
            let report = verify_dataset(&ds);
            assert!(
                report.is_clean(),
                "{task}: {:?}",
                &report.violations[..report.violations.len().min(5)]
            );
            assert_eq!(report.records_checked, 800);
            for split in SplitName::ALL {
                let trues = ds.split(split).iter().filter(|r| r.label).count();
                assert_eq!(trues * 2, ds.split(split).len());
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(&small_spec(Task::Cardinality, 3)).unwrap();
        let b = Dataset::generate(&small_spec(Task::Cardinality, 3)).unwrap();
        assert_eq!(a, b);
        let c = Dataset::generate(&small_spec(Task::Cardinality, 4)).unwrap();
        assert_ne!(a.splits, c.splits);
    }

    #[test]
    fn flipped_label_is_one_oracle_mismatch() {
        let mut ds = Dataset::generate(&small_spec(Task::Quantifiers, 2)).unwrap();
        let r = &mut ds.splits.get_mut(&SplitName::Val).unwrap()[7];
        r.label = !r.label;
        let report = verify_dataset(&ds);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert_eq!(report.count(ViolationKind::OracleMismatch), 1);
    }

    #[test]
    fn copied_ood_record_breaks_disjointness() {
        let mut ds = Dataset::generate(&small_spec(Task::Comparison, 2)).unwrap();
        let mut leaked = ds.split(SplitName::OodTest)[0].clone();
        let pair = leaked.pair;
        leaked.split = SplitName::Train;
        leaked.id = "leaked".into();
        ds.splits.get_mut(&SplitName::Train).unwrap().push(leaked);
        let report = verify_dataset(&ds);
        let overlaps: Vec<_> = report
            .violations
            .iter()
            .filter(|v| v.kind == ViolationKind::PairOverlap)
            .collect();
        assert_eq!(overlaps.len(), 1);
        assert!(overlaps[0].detail.contains(&pair.to_string()));
        assert_eq!(report.count(ViolationKind::QueryOverlap), 1);
        assert_eq!(report.count(ViolationKind::ComparisonBand), 1);
    }

    #[test]
    fn views_only_touch_modality_fields() {
        let ds = Dataset::generate(&small_spec(Task::Spatiality, 5)).unwrap();
        let train = ds.split(SplitName::Train);
        let cap = materialize_view(train, ModalityView::CaptionOnly, 1).unwrap();
        assert!(cap.iter().all(|r| r.image_path == BLANK_IMAGE));
        assert!(cap.iter().all(|r| r.text_input.as_deref().unwrap().contains(" [SEP] ")));
        let img = materialize_view(train, ModalityView::ImageOnly, 1).unwrap();
        assert!(img
            .iter()
            .all(|r| r.caption.is_empty() && r.text_input.as_ref() == Some(&r.query)));
        let both = materialize_view(train, ModalityView::ImageCaption, 1).unwrap();
        assert!(both.iter().zip(train).all(|(v, r)| v.base() == *r));
        for view in [cap, img, both] {
            for (v, r) in view.iter().zip(train) {
                assert_eq!((&v.id, v.label, v.split), (&r.id, r.label, r.split));
            }
        }
    }

    #[test]
    fn mixed_view_proportions() {
        let ds = Dataset::generate(&small_spec(Task::Cardinality, 5)).unwrap();
        let view = materialize_view(ds.split(SplitName::Train), ModalityView::MIXED_DEFAULT, 3).unwrap();
        let count = |m| view.iter().filter(|r| r.modality == Some(m)).count();
        assert_eq!(count(Modality::ImageOnly), 100);
        assert_eq!(count(Modality::CaptionOnly), 100);
        assert_eq!(count(Modality::ImageCaption), 200);
        let bad = ModalityView::Mixed {
            p_img_only: 0.7,
            p_cap_only: 0.7,
        };
        assert!(materialize_view(ds.split(SplitName::Train), bad, 3).is_err());
        assert!("bogus".parse::<ModalityView>().is_err());
    }

    #[test]
    fn fewshot_subsets() {
        let ds = Dataset::generate(&small_spec(Task::Comparison, 5)).unwrap();
        let train = ds.split(SplitName::Train);
        let sub = sample_fewshot(train, 200, 9).unwrap();
        assert_eq!(sub.len(), 200);
        assert_eq!(sub.iter().filter(|r| r.label).count(), 100);
        let again = sample_fewshot(train, 200, 9).unwrap();
        assert_eq!(
            sub.iter().map(|r| &r.id).collect::<Vec<_>>(),
            again.iter().map(|r| &r.id).collect::<Vec<_>>()
        );
        assert!(sample_fewshot(train, 0, 9).unwrap().is_empty());
        assert!(matches!(
            sample_fewshot(train, 401, 9),
            Err(DatasetError::InvalidInput(_))
        ));
    }

    #[test]
    fn written_dataset_round_trips_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            sizes: SplitSizes {
                train: 20,
                val: 10,
                ind_test: 10,
                ood_test: 20,
            },
            ..DatasetSpec::new(Task::Spatiality, 8)
        };
        let built = build_dataset(&spec, dir.path(), Some(1)).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(built, loaded);
        assert!(verify_dataset_dir(dir.path()).unwrap().is_clean());
        fs::remove_file(dir.path().join(&loaded.split(SplitName::Val)[3].image_path)).unwrap();
        let report = verify_dataset_dir(dir.path()).unwrap();
        assert_eq!(report.count(ViolationKind::MissingImage), 1);
    }
}
