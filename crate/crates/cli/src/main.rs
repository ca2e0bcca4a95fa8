use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use vlgrid_core::dataset::{
    self, build_dataset, load_dataset, manifest_path, materialize_view, read_manifest, sample_fewshot,
    verify_dataset_dir, view_manifest_path, write_manifest, DatasetSpec, ModalityView, SplitName, SplitSizes,
};
use vlgrid_core::evalkit::{
    self, aggregate_runs, error_by_object_count, error_by_pair, predicted_vs_actual_counts, scope_universe,
    Convergence, ErrorCell, EvalError, PredictionSet, RunSummary,
};
use vlgrid_core::{ExampleRecord, PairKey, RenderConfig, SamplerConfig, Task};

const EXIT_INPUT: u8 = 1;
const EXIT_VERIFY: u8 = 2;

#[derive(Parser)]
#[command(name = "vlgrid", version, about = "Grid-world visio-linguistic reasoning datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset for one task.
    Generate(GenerateArgs),
    /// Audit a dataset directory; exits 2 if anything fails.
    Verify(VerifyArgs),
    /// Write a modality view of every split.
    View(ViewArgs),
    /// Score prediction files against a manifest.
    Score(ScoreArgs),
    /// Show a dataset summary or a single record.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON config; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Defaults to the TRAVLR_SEED environment variable, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fraction of pairs held out for OOD testing (ignored by comparison).
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    ind_test: Option<usize>,
    #[arg(long)]
    ood_test: Option<usize>,
    #[arg(long)]
    cell_px: Option<u32>,
    #[arg(long)]
    margin_px: Option<u32>,
    /// Worker threads for sampling and rendering (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Skip PNG rendering.
    #[arg(long)]
    no_images: bool,
    /// Fair-coin labels instead of exact 50/50 per split.
    #[arg(long)]
    loose_balance: bool,
    /// Also write these modality views (repeatable).
    #[arg(long = "view")]
    views: Vec<ModalityView>,
}

#[derive(Args)]
struct VerifyArgs {
    dir: PathBuf,
    /// Audit report path, relative to the dataset directory.
    #[arg(long, default_value = "audit.json")]
    report: PathBuf,
}

#[derive(Args)]
struct ViewArgs {
    dir: PathBuf,
    /// image_only, caption_only, image_caption or mixed.
    #[arg(long)]
    setting: String,
    /// Defaults to the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.25)]
    p_img_only: f64,
    #[arg(long, default_value_t = 0.25)]
    p_cap_only: f64,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<SplitName>,
    /// Also write a label-balanced training subset of this size.
    #[arg(long)]
    fewshot: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// A single prediction file.
    #[arg(long, conflicts_with = "runs", required_unless_present = "runs")]
    predictions: Option<PathBuf>,
    /// Glob of prediction files, one per run.
    #[arg(long)]
    runs: Option<String>,
    #[arg(long, default_value_t = evalkit::DEFAULT_ALPHA)]
    alpha: f64,
    /// Count a run as converged when macro-F1 exceeds this value instead of the binomial test.
    #[arg(long)]
    threshold: Option<f64>,
    /// JSON summary output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// CSV of error rate per pair key (pooled over runs).
    #[arg(long)]
    by_pair: Option<PathBuf>,
    /// CSV of error rate per total object count (pooled over runs).
    #[arg(long)]
    by_count: Option<PathBuf>,
    /// CSV of actual vs queried counts for records predicted true (cardinality only).
    #[arg(long)]
    count_matrix: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    dir: PathBuf,
    /// Print one record as JSON.
    #[arg(long)]
    id: Option<String>,
}

/// Generation settings read from `--config`. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    task: Option<Task>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    sizes: Option<SizesConfig>,
    holdout_fraction: Option<f64>,
    render: Option<RenderConfig>,
    sampler: Option<SamplerConfig>,
    loose_balance: Option<bool>,
    images: Option<bool>,
    jobs: Option<usize>,
    #[serde(default)]
    views: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SizesConfig {
    train: Option<usize>,
    val: Option<usize>,
    ind_test: Option<usize>,
    ood_test: Option<usize>,
}

/// Error carrying its own exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Verify(a) => verify(a),
        Command::View(a) => view(a),
        Command::Score(a) => score(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Exit(code, msg)) = e.downcast_ref::<Exit>() {
                eprintln!("{msg}");
                ExitCode::from(*code)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_INPUT)
            }
        }
    }
}

fn read_config(path: &Path) -> Result<CliConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("TRAVLR_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("TRAVLR_SEED must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

fn resolve_spec(a: &GenerateArgs, cfg: &CliConfig) -> Result<(DatasetSpec, PathBuf)> {
    let task = a
        .task
        .or(cfg.task)
        .ok_or_else(|| anyhow!("--task is required (flag or config)"))?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| anyhow!("--out is required (flag or config)"))?;
    let seed = match a.seed.or(cfg.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut spec = DatasetSpec::new(task, seed);
    let base = SplitSizes::for_task(task);
    let sizes = cfg.sizes.as_ref();
    let pick = |flag: Option<usize>, conf: Option<usize>, default: usize| flag.or(conf).unwrap_or(default);
    spec.sizes = SplitSizes {
        train: pick(a.train, sizes.and_then(|s| s.train), base.train),
        val: pick(a.val, sizes.and_then(|s| s.val), base.val),
        ind_test: pick(a.ind_test, sizes.and_then(|s| s.ind_test), base.ind_test),
        ood_test: pick(a.ood_test, sizes.and_then(|s| s.ood_test), base.ood_test),
    };
    if let Some(h) = a.holdout.or(cfg.holdout_fraction) {
        spec.holdout_fraction = h;
    }
    if let Some(r) = &cfg.render {
        spec.render = r.clone();
    }
    if let Some(px) = a.cell_px {
        spec.render.cell_px = px;
    }
    if let Some(px) = a.margin_px {
        spec.render.margin_px = px;
    }
    if let Some(s) = &cfg.sampler {
        spec.sampler = s.clone();
    }
    spec.loose_balance = a.loose_balance || cfg.loose_balance.unwrap_or(false);
    spec.images = !a.no_images && cfg.images.unwrap_or(true);
    Ok((spec, out))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => CliConfig::default(),
    };
    let (spec, out) = resolve_spec(&a, &cfg)?;
    let mut views = a.views.clone();
    if views.is_empty() {
        for v in &cfg.views {
            views.push(v.parse().map_err(|e: String| anyhow!(e))?);
        }
    }
    let jobs = a.jobs.or(cfg.jobs);
    let ds = build_dataset(&spec, &out, jobs).with_context(|| format!("generating {} dataset", spec.task))?;
    for view in views {
        for split in SplitName::ALL {
            let records = materialize_view(ds.split(split), view, spec.seed)?;
            write_manifest(&view_manifest_path(&out, split, &view), &records)?;
        }
    }
    print!("{}", ds.summary());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let report = verify_dataset_dir(&a.dir)?;
    let path = a.dir.join(&a.report);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    if report.is_clean() {
        println!("ok: {} records, 0 violations", report.records_checked);
        return Ok(());
    }
    let mut msg = format!(
        "verification failed: {} violations in {} records (report: {})",
        report.violations.len(),
        report.records_checked,
        path.display()
    );
    for v in report.violations.iter().take(10) {
        msg.push_str(&format!(
            "\n  {:?} {}: {}",
            v.kind,
            v.id.as_deref().unwrap_or("-"),
            v.detail
        ));
    }
    Err(Exit(EXIT_VERIFY, msg).into())
}

fn view(a: ViewArgs) -> Result<()> {
    let setting: ModalityView = match a.setting.parse::<ModalityView>().map_err(|e| anyhow!(e))? {
        ModalityView::Mixed { .. } => ModalityView::Mixed {
            p_img_only: a.p_img_only,
            p_cap_only: a.p_cap_only,
        },
        other => other,
    };
    setting.validate()?;
    let spec: DatasetSpec =
        serde_json::from_str(&fs::read_to_string(a.dir.join(dataset::CONFIG_FILE)).context("reading dataset config")?)?;
    let seed = a.seed.unwrap_or(spec.seed);
    let splits: Vec<SplitName> = a.split.map_or_else(|| SplitName::ALL.to_vec(), |s| vec![s]);
    for split in splits {
        let records = read_manifest(&manifest_path(&a.dir, split))?;
        let viewed = materialize_view(&records, setting, seed)?;
        let path = view_manifest_path(&a.dir, split, &setting);
        write_manifest(&path, &viewed)?;
        println!("{} {} records -> {}", split, viewed.len(), path.display());
        if split == SplitName::Train {
            if let Some(n) = a.fewshot {
                let subset = sample_fewshot(&viewed, n, seed)?;
                let path = a
                    .dir
                    .join(split.name())
                    .join(format!("manifest.{}.fewshot{n}.jsonl", setting.name()));
                write_manifest(&path, &subset)?;
                println!("few-shot {} records -> {}", subset.len(), path.display());
            }
        }
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    PredictionSet::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn input_error(e: EvalError, path: &Path) -> anyhow::Error {
    Exit(EXIT_INPUT, format!("{}: {e}", path.display())).into()
}

fn write_csv(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

fn pool<K: Ord + Clone>(runs: Vec<Vec<ErrorCell<K>>>) -> Vec<ErrorCell<K>> {
    let mut cells: BTreeMap<K, (u64, u64)> = BTreeMap::new();
    for cell in runs.into_iter().flatten() {
        let e = cells.entry(cell.key).or_default();
        e.0 += cell.n;
        e.1 += cell.errors;
    }
    cells
        .into_iter()
        .map(|(key, (n, errors))| ErrorCell { key, n, errors })
        .collect()
}

/// Sampler settings of the dataset the manifest belongs to, if it can be found.
fn manifest_sampler(manifest: &Path) -> SamplerConfig {
    manifest
        .parent()
        .and_then(Path::parent)
        .map(|root| root.join(dataset::CONFIG_FILE))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<DatasetSpec>(&t).ok())
        .map(|s| s.sampler)
        .unwrap_or_default()
}

fn score(a: ScoreArgs) -> Result<()> {
    let criterion = match a.threshold {
        Some(t) => Convergence::Threshold { macro_f1: t },
        None => Convergence::Binomial { alpha: a.alpha },
    };
    criterion.validate()?;
    let manifest: Vec<ExampleRecord> = read_manifest(&a.manifest)?;
    let files: Vec<PathBuf> = match (&a.predictions, &a.runs) {
        (Some(p), _) => vec![p.clone()],
        (None, Some(pattern)) => {
            let mut files: Vec<PathBuf> = glob::glob(pattern)
                .with_context(|| format!("bad glob {pattern:?}"))?
                .collect::<std::result::Result<_, _>>()?;
            files.sort();
            if files.is_empty() {
                bail!("no prediction files match {pattern:?}");
            }
            files
        }
        (None, None) => bail!("one of --predictions or --runs is required"),
    };

    let mut summaries: Vec<RunSummary> = Vec::new();
    let mut pair_runs = Vec::new();
    let mut count_runs = Vec::new();
    let mut matrix: Option<evalkit::CountMatrix> = None;
    let universe: BTreeSet<PairKey> = if a.by_pair.is_some() {
        let sampler = manifest_sampler(&a.manifest);
        let tasks: BTreeSet<Task> = manifest.iter().map(|r| r.task).collect();
        tasks
            .into_iter()
            .flat_map(|t| t.scopes())
            .flat_map(|s| scope_universe(s, &sampler))
            .collect()
    } else {
        BTreeSet::new()
    };

    for file in &files {
        let preds = read_predictions(file)?;
        let summary = evalkit::score(&preds, &manifest, criterion).map_err(|e| input_error(e, file))?;
        if files.len() > 1 {
            println!(
                "{}: macro_f1 {:.2} converged {}",
                file.display(),
                summary.macro_f1,
                summary.converged
            );
        }
        summaries.push(summary);
        if a.by_pair.is_some() {
            pair_runs.push(error_by_pair(&preds, &manifest, &universe).map_err(|e| input_error(e, file))?);
        }
        if a.by_count.is_some() {
            count_runs.push(error_by_object_count(&preds, &manifest).map_err(|e| input_error(e, file))?);
        }
        if a.count_matrix.is_some() {
            let m = predicted_vs_actual_counts(&preds, &manifest).map_err(|e| input_error(e, file))?;
            matrix = Some(match matrix {
                None => m,
                Some(mut acc) => {
                    for (i, row) in m.cells.iter().enumerate() {
                        for (j, c) in row.iter().enumerate() {
                            acc.cells[i][j] += c;
                        }
                    }
                    acc
                }
            });
        }
    }

    let report = if summaries.len() == 1 {
        println!("{}", summaries[0]);
        serde_json::to_value(&summaries[0])?
    } else {
        let agg = aggregate_runs(&summaries)?;
        println!("{agg}");
        serde_json::json!({ "aggregate": agg, "runs": summaries })
    };
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.by_pair {
        let cells = pool(pair_runs);
        write_csv(path, |w| evalkit::write_pair_csv(w, &cells))?;
    }
    if let Some(path) = &a.by_count {
        let cells = pool(count_runs);
        write_csv(path, |w| evalkit::write_count_csv(w, &cells))?;
    }
    if let (Some(path), Some(m)) = (&a.count_matrix, &matrix) {
        write_csv(path, |w| evalkit::write_matrix_csv(w, m))?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ds = load_dataset(&a.dir)?;
    if let Some(id) = &a.id {
        let record = ds
            .records()
            .find(|r| &r.id == id)
            .ok_or_else(|| anyhow!("no record with id {id:?}"))?;
        println!("{}", serde_json::to_string_pretty(record)?);
        return Ok(());
    }
    print!("{}", ds.summary());
    println!("holdout fraction {}", ds.partition.holdout_fraction);
    for p in &ds.partition.partitions {
        println!(
            "scope {:<12} train pairs {:>4}  ood pairs {:>4}",
            p.scope.name(),
            p.train_pairs.len(),
            p.ood_pairs.len()
        );
    }
    if !ds.partition.ood_lexicon.is_empty() {
        println!(
            "lexicon: {} train keys, {} ood keys",
            ds.partition.train_lexicon.len(),
            ds.partition.ood_lexicon.len()
        );
    }
    Ok(())
}
