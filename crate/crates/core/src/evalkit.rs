//! Scoring of prediction files against manifests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::dataset::ExampleRecord;
use crate::semantics::{PairKey, Query, Scope, Task};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{} manifest ids have no prediction: {}", .0.len(), preview(.0))]
    MissingPrediction(Vec<String>),
    #[error("{} predicted ids are not in the manifest: {}", .0.len(), preview(.0))]
    UnknownId(Vec<String>),
    #[error("{} ids are predicted more than once: {}", .0.len(), preview(.0))]
    DuplicateId(Vec<String>),
    #[error("count matrix needs a cardinality manifest, got {0}")]
    TaskMismatch(Task),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("invalid significance level {0}")]
    InvalidAlpha(f64),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// First ten offenders, comma separated.
pub fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_view: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_view: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub pred: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Pred(Prediction),
    Meta {
        #[allow(dead_code)]
        meta: RunMeta,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub meta: RunMeta,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(predictions: Vec<Prediction>) -> Self {
        PredictionSet {
            meta: RunMeta::default(),
            predictions,
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, pred)| Prediction { id: id.into(), pred })
                .collect(),
        )
    }

    /// JSON Lines of `{"id": ..., "pred": ...}`; an optional `{"meta": {...}}` line
    /// carries run metadata.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut set = PredictionSet::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line) {
                Ok(Line::Pred(p)) => set.predictions.push(p),
                Ok(Line::Meta { meta }) => set.meta = meta,
                Err(_) => {
                    // Re-parse strictly for a useful message.
                    let source = serde_json::from_str::<Prediction>(&line).unwrap_err();
                    return Err(EvalError::Parse { line: i + 1, source });
                }
            }
        }
        Ok(set)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        if self.meta != RunMeta::default() {
            serde_json::to_writer(&mut out, &serde_json::json!({ "meta": self.meta }))?;
            out.write_all(b"\n")?;
        }
        for p in &self.predictions {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Predictions joined to the manifest in manifest order.
fn join<'a>(preds: &PredictionSet, manifest: &'a [ExampleRecord]) -> Result<Vec<(&'a ExampleRecord, bool)>, EvalError> {
    let mut by_id: HashMap<&str, bool> = HashMap::with_capacity(preds.predictions.len());
    let mut dups = BTreeSet::new();
    for p in &preds.predictions {
        if by_id.insert(p.id.as_str(), p.pred).is_some() {
            dups.insert(p.id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(EvalError::DuplicateId(dups.into_iter().collect()));
    }
    let known: BTreeSet<&str> = manifest.iter().map(|r| r.id.as_str()).collect();
    let unknown: Vec<String> = preds
        .predictions
        .iter()
        .filter(|p| !known.contains(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownId(unknown));
    }
    let missing: Vec<String> = manifest
        .iter()
        .filter(|r| !by_id.contains_key(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPrediction(missing));
    }
    Ok(manifest.iter().map(|r| (r, by_id[r.id.as_str()])).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    /// The same counts with both classes renamed.
    pub fn swapped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of one class, each in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScores {
    /// Zero denominators give 0 for precision, recall and F1.
    fn of(tp: u64, fp: u64, fn_: u64) -> Self {
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ClassScores {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n: u64,
    pub true_class: ClassScores,
    pub false_class: ClassScores,
    pub confusion: Confusion,
    pub converged: bool,
    #[serde(default)]
    pub meta: RunMeta,
}

impl RunSummary {
    pub fn from_confusion(confusion: Confusion, criterion: Convergence) -> Self {
        let t = ClassScores::of(confusion.tp, confusion.fp, confusion.fn_);
        let f = ClassScores::of(confusion.tn, confusion.fn_, confusion.fp);
        let mut summary = RunSummary {
            macro_f1: (t.f1 + f.f1) / 2.0,
            accuracy: ratio(confusion.correct(), confusion.n()),
            n: confusion.n(),
            true_class: t,
            false_class: f,
            confusion,
            converged: false,
            meta: RunMeta::default(),
        };
        summary.converged = convergence_test(&summary, criterion);
        summary
    }

    pub fn with_convergence(mut self, criterion: Convergence) -> Self {
        self.converged = convergence_test(&self, criterion);
        self
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "macro_f1 {:.2}", self.macro_f1)?;
        writeln!(f, "accuracy {:.4} (n {})", self.accuracy, self.n)?;
        writeln!(
            f,
            "true  P {:.2} R {:.2} F1 {:.2}",
            self.true_class.precision, self.true_class.recall, self.true_class.f1
        )?;
        writeln!(
            f,
            "false P {:.2} R {:.2} F1 {:.2}",
            self.false_class.precision, self.false_class.recall, self.false_class.f1
        )?;
        write!(f, "converged {}", self.converged)
    }
}

/// How a run is judged to have learned something.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    /// One-sided exact binomial test of accuracy against chance.
    Binomial { alpha: f64 },
    /// Macro-F1 strictly above a fixed cutoff.
    Threshold { macro_f1: f64 },
}

pub const DEFAULT_ALPHA: f64 = 0.05;

impl Default for Convergence {
    fn default() -> Self {
        Convergence::Binomial { alpha: DEFAULT_ALPHA }
    }
}

impl Convergence {
    pub fn validate(&self) -> Result<(), EvalError> {
        match *self {
            Convergence::Binomial { alpha } if !(alpha > 0.0 && alpha < 1.0) => Err(EvalError::InvalidAlpha(alpha)),
            _ => Ok(()),
        }
    }
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
pub fn binomial_upper_tail(k: u64, n: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    Binomial::new(0.5, n).expect("p = 0.5 is valid").sf(k - 1)
}

pub fn convergence_test(summary: &RunSummary, criterion: Convergence) -> bool {
    match criterion {
        Convergence::Binomial { alpha } => {
            summary.n > 0 && binomial_upper_tail(summary.confusion.correct(), summary.n) <= alpha
        }
        Convergence::Threshold { macro_f1 } => summary.macro_f1 > macro_f1,
    }
}

pub fn macro_f1(preds: &PredictionSet, manifest: &[ExampleRecord]) -> Result<RunSummary, EvalError> {
    score(preds, manifest, Convergence::default())
}

pub fn score(
    preds: &PredictionSet,
    manifest: &[ExampleRecord],
    criterion: Convergence,
) -> Result<RunSummary, EvalError> {
    let joined = join(preds, manifest)?;
    let confusion = joined
        .par_iter()
        .fold(Confusion::default, |mut c, (r, p)| {
            c.add(r.label, *p);
            c
        })
        .reduce(Confusion::default, Confusion::merge);
    let mut summary = RunSummary::from_confusion(confusion, criterion);
    summary.meta = preds.meta.clone();
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_macro_f1: f64,
    pub sd: f64,
    /// Number of converged runs.
    pub n_sd: usize,
    pub runs: usize,
    /// Whether the mean is over converged runs only.
    pub converged_only: bool,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mean macro_f1 {:.2} (sd {:.2}, {} runs)",
            self.mean_macro_f1, self.sd, self.runs
        )?;
        write!(f, "#sd {}", self.n_sd)
    }
}

/// Mean and sample sd over the converged runs, or over all runs when none converged.
pub fn aggregate_runs(summaries: &[RunSummary]) -> Result<Aggregate, EvalError> {
    if summaries.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let converged: Vec<f64> = summaries.iter().filter(|s| s.converged).map(|s| s.macro_f1).collect();
    let converged_only = !converged.is_empty();
    let used: Vec<f64> = if converged_only {
        converged
    } else {
        summaries.iter().map(|s| s.macro_f1).collect()
    };
    let k = used.len() as f64;
    let mean = used.iter().sum::<f64>() / k;
    let sd = if used.len() < 2 {
        0.0
    } else {
        (used.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    Ok(Aggregate {
        mean_macro_f1: mean,
        sd,
        n_sd: summaries.iter().filter(|s| s.converged).count(),
        runs: summaries.len(),
        converged_only,
    })
}

/// Relative change of `ood` against `ind`, in percent.
pub fn relative_change(ind: f64, ood: f64) -> Option<f64> {
    (ind != 0.0).then(|| 100.0 * (ood - ind) / ind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell<K> {
    pub key: K,
    pub n: u64,
    pub errors: u64,
}

impl<K> ErrorCell<K> {
    /// `None` marks a cell with no records in the scored split.
    pub fn error_rate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.errors as f64 / self.n as f64)
    }
}

fn tally<K: Ord + Copy>(
    joined: &[(&ExampleRecord, bool)],
    key: impl Fn(&ExampleRecord) -> K,
) -> BTreeMap<K, (u64, u64)> {
    let mut cells = BTreeMap::new();
    for (r, p) in joined {
        let cell = cells.entry(key(r)).or_insert((0, 0));
        cell.0 += 1;
        cell.1 += u64::from(r.label != *p);
    }
    cells
}

/// Error rate per pair key. Keys in `universe` that the split never realizes are
/// kept with `n = 0`.
pub fn error_by_pair(
    preds: &PredictionSet,
    manifest: &[ExampleRecord],
    universe: &BTreeSet<PairKey>,
) -> Result<Vec<ErrorCell<PairKey>>, EvalError> {
    let joined = join(preds, manifest)?;
    let mut cells = tally(&joined, |r| r.pair);
    for key in universe {
        cells.entry(*key).or_insert((0, 0));
    }
    Ok(cells
        .into_iter()
        .map(|(key, (n, errors))| ErrorCell { key, n, errors })
        .collect())
}

pub fn error_by_object_count(
    preds: &PredictionSet,
    manifest: &[ExampleRecord],
) -> Result<Vec<ErrorCell<usize>>, EvalError> {
    let joined = join(preds, manifest)?;
    Ok(tally(&joined, |r| r.meta.total_objects)
        .into_iter()
        .map(|(key, (n, errors))| ErrorCell { key, n, errors })
        .collect())
}

/// Counts of (actual count of the queried shape, queried number) over records
/// predicted true. `cells[actual][number]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub cells: Vec<Vec<u64>>,
}

impl CountMatrix {
    pub fn get(&self, actual: usize, number: usize) -> u64 {
        self.cells
            .get(actual)
            .and_then(|row| row.get(number))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.cells
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }
}

pub fn predicted_vs_actual_counts(preds: &PredictionSet, manifest: &[ExampleRecord]) -> Result<CountMatrix, EvalError> {
    if let Some(r) = manifest.iter().find(|r| r.task != Task::Cardinality) {
        return Err(EvalError::TaskMismatch(r.task));
    }
    let joined = join(preds, manifest)?;
    let entry = |r: &ExampleRecord| -> (usize, usize) {
        let number = match &r.query_ast {
            Query::Cardinality(q) => q.number as usize,
            _ => 0,
        };
        (r.pair.a as usize, number)
    };
    let dim = manifest
        .iter()
        .map(|r| {
            let (a, n) = entry(r);
            a.max(n)
        })
        .max()
        .map_or(0, |m| m + 1);
    let mut cells = vec![vec![0u64; dim]; dim];
    for (r, p) in &joined {
        if *p {
            let (a, n) = entry(r);
            cells[a][n] += 1;
        }
    }
    Ok(CountMatrix { cells })
}

fn rate_field(rate: Option<f64>) -> String {
    rate.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"))
}

/// Long-format rows `scope,a,b,n,error_rate`; unrealized cells read `absent`.
pub fn write_pair_csv<W: Write>(mut out: W, cells: &[ErrorCell<PairKey>]) -> io::Result<()> {
    writeln!(out, "scope,a,b,n,error_rate")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.key.scope.name(),
            c.key.a,
            c.key.b,
            c.n,
            rate_field(c.error_rate())
        )?;
    }
    Ok(())
}

pub fn write_count_csv<W: Write>(mut out: W, cells: &[ErrorCell<usize>]) -> io::Result<()> {
    writeln!(out, "total_objects,n,error_rate")?;
    for c in cells {
        writeln!(out, "{},{},{}", c.key, c.n, rate_field(c.error_rate()))?;
    }
    Ok(())
}

pub fn write_matrix_csv<W: Write>(mut out: W, matrix: &CountMatrix) -> io::Result<()> {
    writeln!(out, "actual,number,n")?;
    for (actual, row) in matrix.cells.iter().enumerate() {
        for (number, n) in row.iter().enumerate() {
            writeln!(out, "{actual},{number},{n}")?;
        }
    }
    Ok(())
}

/// All pair keys a scope can produce, for marking unrealized cells.
pub fn scope_universe(scope: Scope, cfg: &crate::splitter::SamplerConfig) -> BTreeSet<PairKey> {
    crate::splitter::pair_universe(scope, cfg)
        .into_iter()
        .map(|(a, b)| PairKey::new(scope, a, b))
        .collect()
}
