//! Train/OOD partitioning of pair spaces and constrained example sampling.
//!
//! Two things are partitioned per task:
//!
//! * the pair space of every scope (`<col1, col2>`, `<count, shape>`, the
//!   quantifier region pairs, `<|attr1|, |attr2|>`), which decides which
//!   scene configurations may appear on either side;
//! * the lexical space of the query (which descriptions or attribute pairs the
//!   query mentions), which keeps every OOD query string out of training.
//!   Cardinality needs no lexical split: its query text is determined by
//!   `<number, shape>`, and numbers are restricted to the side's own pairs.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, Stream};
use crate::scene::{attribute_matches, Attribute, Colour, GridPos, ObjectSpec, Scene, Shape, GRID_CELLS};
use crate::semantics::{
    eval, pair_key, CardinalityQuery, ComparisonQuery, ComparisonRel, Description, PairKey, QuantifiedQuery,
    Quantifier, Query, Region, RegionCounts, Scope, SpatialQuery, SpatialRel, Task, REGIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Ood,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Train => "train",
            Side::Ood => "ood",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("holdout fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("infeasible partition for {task}/{scope} at holdout {fraction}: {reason}")]
    InfeasiblePartition {
        task: Task,
        scope: Scope,
        fraction: f64,
        reason: String,
    },
    #[error("sampling exhausted after {attempts} attempts ({task}, {side} side, label {label}): {constraint}")]
    SamplingExhausted {
        task: Task,
        side: Side,
        label: bool,
        attempts: usize,
        constraint: String,
    },
    #[error("grid full: {requested} distractors requested, {free} free cells")]
    GridFull { requested: usize, free: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Inclusive count range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub const fn new(min: u32, max: u32) -> Self {
        CountRange { min, max }
    }

    pub fn contains(self, value: u32) -> bool {
        (self.min..=self.max).contains(&value)
    }

    pub fn values(self) -> impl Iterator<Item = u32> {
        self.min..=self.max
    }

    fn sample(self, rng: &mut Stream) -> u32 {
        rng.random_range(self.min..=self.max)
    }
}

impl fmt::Display for CountRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub spatial_distractors: CountRange,
    pub cardinality_relevant: CountRange,
    pub cardinality_distractors: CountRange,
    /// Size of every non-empty quantifier region.
    pub quantifier_part: CountRange,
    pub quantifier_distractors: CountRange,
    pub comparison_count: CountRange,
    pub comparison_distractors: CountRange,
    /// Pairs with `1 <= |a - b| <= threshold` are training pairs; larger differences are OOD.
    pub comparison_threshold: u32,
    pub max_retries: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            spatial_distractors: CountRange::new(1, 1),
            cardinality_relevant: CountRange::new(1, 6),
            cardinality_distractors: CountRange::new(1, 10),
            quantifier_part: CountRange::new(1, 5),
            quantifier_distractors: CountRange::new(2, 8),
            comparison_count: CountRange::new(1, 9),
            comparison_distractors: CountRange::new(1, 10),
            comparison_threshold: 3,
            max_retries: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SplitError> {
        let ranges = [
            ("spatial_distractors", self.spatial_distractors),
            ("cardinality_relevant", self.cardinality_relevant),
            ("cardinality_distractors", self.cardinality_distractors),
            ("quantifier_part", self.quantifier_part),
            ("quantifier_distractors", self.quantifier_distractors),
            ("comparison_count", self.comparison_count),
            ("comparison_distractors", self.comparison_distractors),
        ];
        for (name, r) in ranges {
            if r.min > r.max {
                return Err(SplitError::InvalidConfig(format!("{name}: min > max")));
            }
        }
        let bad = |what: &str| Err(SplitError::InvalidConfig(what.to_string()));
        if self.cardinality_relevant.min == 0 || self.quantifier_part.min == 0 || self.comparison_count.min == 0 {
            return bad("relevant counts must be at least 1");
        }
        if self.cardinality_relevant.max < 2 {
            return bad("cardinality_relevant needs at least two values");
        }
        if self.comparison_threshold == 0 {
            return bad("comparison_threshold must be at least 1");
        }
        if self.comparison_count.max - self.comparison_count.min <= self.comparison_threshold {
            return bad("comparison_count range leaves no OOD pairs above the threshold");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        let worst = [
            2 + self.spatial_distractors.max,
            self.cardinality_relevant.max + self.cardinality_distractors.max,
            3 * self.quantifier_part.max + self.quantifier_distractors.max,
            2 * self.comparison_count.max + self.comparison_distractors.max,
        ];
        if worst.iter().any(|&n| n as usize > GRID_CELLS) {
            return bad("ranges allow more objects than grid cells");
        }
        Ok(())
    }

    pub fn distractor_range(&self, task: Task) -> CountRange {
        match task {
            Task::Spatiality => self.spatial_distractors,
            Task::Cardinality => self.cardinality_distractors,
            Task::Quantifiers => self.quantifier_distractors,
            Task::Comparison => self.comparison_distractors,
        }
    }
}

/// Every pair of a scope's pair space.
pub fn pair_universe(scope: Scope, cfg: &SamplerConfig) -> Vec<(u32, u32)> {
    let grid: Vec<u32> = (0..crate::scene::GRID_SIZE as u32).collect();
    let product = |xs: &[u32], ys: &[u32]| -> Vec<(u32, u32)> {
        xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect()
    };
    match scope {
        Scope::Horizontal | Scope::Vertical => product(&grid, &grid),
        Scope::NumberShape => {
            let counts: Vec<u32> = cfg.cardinality_relevant.values().collect();
            let shapes: Vec<u32> = (0..Shape::ALL.len() as u32).collect();
            product(&counts, &shapes)
        }
        Scope::AttrCounts => {
            let counts: Vec<u32> = cfg.comparison_count.values().collect();
            product(&counts, &counts).into_iter().filter(|(a, b)| a != b).collect()
        }
        _ => {
            let quant = scope.quantifier().expect("quantifier scope");
            let parts: Vec<u32> = cfg.quantifier_part.values().collect();
            let mut second = parts.clone();
            // negated forms carry the deciding region as `b`; it is empty on false examples
            if !quant.holds_when_empty() {
                second.insert(0, 0);
            }
            product(&parts, &second)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPartition {
    pub task: Task,
    pub scope: Scope,
    pub train_pairs: BTreeSet<(u32, u32)>,
    pub ood_pairs: BTreeSet<(u32, u32)>,
    pub seed: u64,
}

impl PairPartition {
    pub fn side(&self, side: Side) -> &BTreeSet<(u32, u32)> {
        match side {
            Side::Train => &self.train_pairs,
            Side::Ood => &self.ood_pairs,
        }
    }

    pub fn side_of(&self, pair: (u32, u32)) -> Option<Side> {
        if self.train_pairs.contains(&pair) {
            Some(Side::Train)
        } else if self.ood_pairs.contains(&pair) {
            Some(Side::Ood)
        } else {
            None
        }
    }
}

fn value_coverage_gap(train: &BTreeSet<(u32, u32)>, ood: &BTreeSet<(u32, u32)>) -> Option<String> {
    let train_a: BTreeSet<u32> = train.iter().map(|p| p.0).collect();
    let train_b: BTreeSet<u32> = train.iter().map(|p| p.1).collect();
    ood.iter().find_map(|&(a, b)| {
        if !train_a.contains(&a) {
            Some(format!("first value {a} never occurs in training pairs"))
        } else if !train_b.contains(&b) {
            Some(format!("second value {b} never occurs in training pairs"))
        } else {
            None
        }
    })
}

/// Scope-specific requirement that each side can produce both labels.
fn label_support_gap(scope: Scope, pairs: &BTreeSet<(u32, u32)>) -> Option<&'static str> {
    match scope {
        Scope::Horizontal | Scope::Vertical => {
            let less = pairs.iter().any(|(a, b)| a < b);
            let greater = pairs.iter().any(|(a, b)| a > b);
            (!(less && greater)).then_some("needs pairs ordered both ways")
        }
        Scope::NumberShape => {
            let mut per_shape = [0usize; 7];
            for &(_, s) in pairs {
                per_shape[s as usize] += 1;
            }
            (!per_shape.iter().any(|&n| n >= 2)).then_some("needs a shape with at least two counts for false queries")
        }
        Scope::AttrCounts => None,
        _ => {
            let quant = scope.quantifier()?;
            if quant.holds_when_empty() {
                return None;
            }
            let empty = pairs.iter().any(|p| p.1 == 0);
            let non_empty = pairs.iter().any(|p| p.1 > 0);
            (!(empty && non_empty)).then_some("needs pairs with empty and non-empty deciding regions")
        }
    }
}

const PARTITION_ATTEMPTS: u64 = 2000;

/// Splits one scope's pair space into train and OOD pairs.
///
/// Comparison uses the fixed difference threshold and ignores the fraction;
/// every other scope holds out a seeded random subset such that every value
/// seen in OOD pairs also occurs in training pairs.
pub fn partition_pairs(
    scope: Scope,
    holdout_fraction: f64,
    seed: u64,
    cfg: &SamplerConfig,
) -> Result<PairPartition, SplitError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(SplitError::InvalidFraction(holdout_fraction));
    }
    let task = scope.task();
    let universe = pair_universe(scope, cfg);
    let infeasible = |reason: String| SplitError::InfeasiblePartition {
        task,
        scope,
        fraction: holdout_fraction,
        reason,
    };

    if scope == Scope::AttrCounts {
        let (train, ood): (Vec<_>, Vec<_>) = universe
            .into_iter()
            .partition(|&(a, b)| a.abs_diff(b) <= cfg.comparison_threshold);
        return Ok(PairPartition {
            task,
            scope,
            train_pairs: train.into_iter().collect(),
            ood_pairs: ood.into_iter().collect(),
            seed,
        });
    }

    let n = universe.len();
    let n_ood = ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut last_reason = String::new();
    for attempt in 0..PARTITION_ATTEMPTS {
        let mut rng = substream(seed, &["partition", scope.name()], attempt);
        let mut shuffled = universe.clone();
        shuffled.shuffle(&mut rng);
        let ood: BTreeSet<_> = shuffled[..n_ood].iter().copied().collect();
        let train: BTreeSet<_> = shuffled[n_ood..].iter().copied().collect();
        let gap = value_coverage_gap(&train, &ood)
            .or_else(|| label_support_gap(scope, &train).map(|r| format!("train side {r}")))
            .or_else(|| label_support_gap(scope, &ood).map(|r| format!("ood side {r}")));
        match gap {
            None => {
                return Ok(PairPartition {
                    task,
                    scope,
                    train_pairs: train,
                    ood_pairs: ood,
                    seed,
                })
            }
            Some(reason) => last_reason = reason,
        }
    }
    Err(infeasible(format!(
        "{n_ood} of {n} pairs held out; no valid split in {PARTITION_ATTEMPTS} attempts (last: {last_reason})"
    )))
}

/// The lexical content of a query that must not cross from OOD into training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LexicalKey {
    Descriptions(Description, Description),
    Attributes(Attribute, Attribute),
}

impl LexicalKey {
    pub fn of(query: &Query) -> Option<LexicalKey> {
        match query {
            Query::Spatial(q) => Some(LexicalKey::Descriptions(q.obj1, q.obj2)),
            Query::Cardinality(_) => None,
            Query::Quantified(q) => Some(LexicalKey::Attributes(q.attr1, q.attr2)),
            Query::Comparison(q) => Some(LexicalKey::Attributes(q.attr1, q.attr2)),
        }
    }
}

/// Every lexical key the generator may use for `task`.
pub fn lexical_universe(task: Task) -> Vec<LexicalKey> {
    match task {
        Task::Spatiality => Description::all()
            .flat_map(|d1| {
                Description::all()
                    .filter(move |d2| *d2 != d1)
                    .map(move |d2| LexicalKey::Descriptions(d1, d2))
            })
            .collect(),
        Task::Cardinality => Vec::new(),
        Task::Quantifiers | Task::Comparison => {
            let cross = task == Task::Quantifiers;
            Attribute::all()
                .flat_map(|a1| {
                    Attribute::all()
                        .filter(move |a2| *a2 != a1 && ((a1.family() != a2.family()) == cross))
                        .map(move |a2| LexicalKey::Attributes(a1, a2))
                })
                .collect()
        }
    }
}

/// Pair partitions for every scope of a task plus the lexical split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPartition {
    pub task: Task,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub partitions: Vec<PairPartition>,
    pub train_lexicon: Vec<LexicalKey>,
    pub ood_lexicon: Vec<LexicalKey>,
}

impl TaskPartition {
    pub fn build(task: Task, holdout_fraction: f64, seed: u64, cfg: &SamplerConfig) -> Result<Self, SplitError> {
        cfg.validate()?;
        let partitions = task
            .scopes()
            .into_iter()
            .map(|scope| partition_pairs(scope, holdout_fraction, seed, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let mut lexicon = lexical_universe(task);
        let (train_lexicon, ood_lexicon) = if lexicon.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let mut rng = substream(seed, &["lexicon", task.name()], 0);
            lexicon.shuffle(&mut rng);
            let n_ood = ((holdout_fraction * lexicon.len() as f64).round() as usize).clamp(1, lexicon.len() - 1);
            let mut ood = lexicon.split_off(lexicon.len() - n_ood);
            lexicon.sort();
            ood.sort();
            (lexicon, ood)
        };
        Ok(TaskPartition {
            task,
            seed,
            holdout_fraction,
            partitions,
            train_lexicon,
            ood_lexicon,
        })
    }

    pub fn scope(&self, scope: Scope) -> Option<&PairPartition> {
        self.partitions.iter().find(|p| p.scope == scope)
    }

    pub fn lexicon(&self, side: Side) -> &[LexicalKey] {
        match side {
            Side::Train => &self.train_lexicon,
            Side::Ood => &self.ood_lexicon,
        }
    }

    /// Which side a realized pair key belongs to, if any.
    pub fn side_of(&self, key: &PairKey) -> Option<Side> {
        self.scope(key.scope)?.side_of((key.a, key.b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub scene: Scene,
    pub query: Query,
    pub label: bool,
    pub pair: PairKey,
}

fn random_cells(rng: &mut Stream, n: usize) -> Vec<GridPos> {
    let mut cells: Vec<GridPos> = GridPos::all().collect();
    cells.partial_shuffle(rng, n);
    cells.truncate(n);
    cells
}

fn pick<T: Copy>(rng: &mut Stream, items: &[T]) -> T {
    *items.choose(rng).expect("non-empty choice")
}

fn other_colour(rng: &mut Stream, not: Colour) -> Colour {
    let options: Vec<Colour> = Colour::ALL.into_iter().filter(|c| *c != not).collect();
    pick(rng, &options)
}

fn other_shape(rng: &mut Stream, not: Shape) -> Shape {
    let options: Vec<Shape> = Shape::ALL.into_iter().filter(|s| *s != not).collect();
    pick(rng, &options)
}

/// A random (colour, shape) that has `attr`.
fn with_attribute(rng: &mut Stream, attr: Attribute) -> (Colour, Shape) {
    match attr {
        Attribute::Colour(c) => (c, pick(rng, &Shape::ALL)),
        Attribute::Shape(s) => (pick(rng, &Colour::ALL), s),
    }
}

/// Whether some query over this pair can carry `label`.
fn label_compatible(scope: Scope, pair: (u32, u32), label: bool, side_pairs: &BTreeSet<(u32, u32)>) -> bool {
    match scope {
        Scope::Horizontal | Scope::Vertical => !label || pair.0 != pair.1,
        Scope::NumberShape => label || side_pairs.iter().any(|&(n, s)| s == pair.1 && n != pair.0),
        Scope::AttrCounts => true,
        _ => {
            let quant = scope.quantifier().expect("quantifier scope");
            if quant.holds_when_empty() {
                true
            } else {
                (pair.1 > 0) == label
            }
        }
    }
}

fn build_spatial(rel: SpatialRel, pair: (u32, u32), lexical: LexicalKey, rng: &mut Stream) -> Option<(Scene, Query)> {
    let LexicalKey::Descriptions(d1, d2) = lexical else {
        return None;
    };
    let (p1, p2) = (pair.0 as u8, pair.1 as u8);
    let free1 = rng.random_range(0..crate::scene::GRID_SIZE);
    let mut free2 = rng.random_range(0..crate::scene::GRID_SIZE);
    if p1 == p2 {
        // same column (or row): the other coordinate has to differ
        while free2 == free1 {
            free2 = rng.random_range(0..crate::scene::GRID_SIZE);
        }
    }
    let (pos1, pos2) = if rel.is_horizontal() {
        (GridPos { col: p1, row: free1 }, GridPos { col: p2, row: free2 })
    } else {
        (GridPos { col: free1, row: p1 }, GridPos { col: free2, row: p2 })
    };
    let scene = Scene::new(vec![
        ObjectSpec::new(d1.colour, d1.shape, pos1),
        ObjectSpec::new(d2.colour, d2.shape, pos2),
    ]);
    Some((
        scene,
        SpatialQuery {
            obj1: d1,
            rel,
            obj2: d2,
        }
        .into(),
    ))
}

fn false_number(rng: &mut Stream, actual: u32, candidates: &[u32]) -> u32 {
    let near: Vec<u32> = candidates.iter().copied().filter(|n| n.abs_diff(actual) <= 2).collect();
    if !near.is_empty() && rng.random_bool(0.5) {
        pick(rng, &near)
    } else {
        pick(rng, candidates)
    }
}

fn build_cardinality(
    pair: (u32, u32),
    label: bool,
    side_pairs: &BTreeSet<(u32, u32)>,
    rng: &mut Stream,
) -> Option<(Scene, Query)> {
    let (actual, shape_index) = pair;
    let shape = Shape::from_index(shape_index as usize)?;
    let number = if label {
        actual
    } else {
        let candidates: Vec<u32> = side_pairs
            .iter()
            .filter(|&&(n, s)| s == shape_index && n != actual)
            .map(|&(n, _)| n)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        false_number(rng, actual, &candidates)
    };
    let scene = random_cells(rng, actual as usize)
        .into_iter()
        .map(|pos| ObjectSpec::new(pick(rng, &Colour::ALL), shape, pos))
        .collect();
    Some((scene, CardinalityQuery { number, shape }.into()))
}

/// A (colour, shape) in the given Venn region of two cross-family attributes.
fn region_object(rng: &mut Stream, region: Region, attr1: Attribute, attr2: Attribute) -> (Colour, Shape) {
    let (colour_attr, shape_attr, colour_is_first) = match (attr1, attr2) {
        (Attribute::Colour(c), Attribute::Shape(s)) => (c, s, true),
        (Attribute::Shape(s), Attribute::Colour(c)) => (c, s, false),
        _ => unreachable!("quantified attributes come from different families"),
    };
    let has_colour = match region {
        Region::Both => true,
        Region::FirstOnly => colour_is_first,
        Region::SecondOnly => !colour_is_first,
    };
    if has_colour {
        let shape = if region == Region::Both {
            shape_attr
        } else {
            other_shape(rng, shape_attr)
        };
        (colour_attr, shape)
    } else {
        (other_colour(rng, colour_attr), shape_attr)
    }
}

fn build_quantified(
    quant: Quantifier,
    pair: (u32, u32),
    label: bool,
    lexical: LexicalKey,
    cfg: &SamplerConfig,
    rng: &mut Stream,
) -> Option<(Scene, Query)> {
    let LexicalKey::Attributes(attr1, attr2) = lexical else {
        return None;
    };
    let (ra, rb) = quant.pair_regions();
    let mut counts = RegionCounts::default();
    counts.set(ra, pair.0 as usize);
    counts.set(rb, pair.1 as usize);
    let third = REGIONS
        .into_iter()
        .find(|r| *r != ra && *r != rb)
        .expect("three regions");
    let deciding = quant.deciding_region();
    let third_count = if third == deciding && label == quant.holds_when_empty() {
        0
    } else {
        cfg.quantifier_part.sample(rng)
    };
    counts.set(third, third_count as usize);
    if (counts.get(deciding) == 0) != (label == quant.holds_when_empty()) {
        return None;
    }
    let mut specs = Vec::with_capacity(counts.total());
    for region in REGIONS {
        for _ in 0..counts.get(region) {
            specs.push(region_object(rng, region, attr1, attr2));
        }
    }
    let cells = random_cells(rng, specs.len());
    let scene = specs
        .into_iter()
        .zip(cells)
        .map(|((c, s), pos)| ObjectSpec::new(c, s, pos))
        .collect();
    Some((scene, QuantifiedQuery { quant, attr1, attr2 }.into()))
}

fn build_comparison(
    rel: ComparisonRel,
    pair: (u32, u32),
    lexical: LexicalKey,
    rng: &mut Stream,
) -> Option<(Scene, Query)> {
    let LexicalKey::Attributes(attr1, attr2) = lexical else {
        return None;
    };
    let specs: Vec<_> = std::iter::repeat_n(attr1, pair.0 as usize)
        .chain(std::iter::repeat_n(attr2, pair.1 as usize))
        .map(|attr| with_attribute(rng, attr))
        .collect();
    let cells = random_cells(rng, specs.len());
    let scene = specs
        .into_iter()
        .zip(cells)
        .map(|((c, s), pos)| ObjectSpec::new(c, s, pos))
        .collect();
    Some((scene, ComparisonQuery { rel, attr1, attr2 }.into()))
}

/// Draws one example whose pair lies on `side` and whose gold label is `target_label`,
/// distractors included.
pub fn sample_example(
    partition: &TaskPartition,
    side: Side,
    target_label: bool,
    cfg: &SamplerConfig,
    rng: &mut Stream,
) -> Result<LabeledExample, SplitError> {
    let task = partition.task;
    let lexicon = partition.lexicon(side);
    let mut last_constraint = String::from("no attempt made");
    for _ in 0..cfg.max_retries {
        let scope = match task {
            Task::Spatiality => pick(rng, &SpatialRel::ALL).scope(),
            Task::Quantifiers => pick(rng, &Quantifier::ALL).into(),
            Task::Cardinality => Scope::NumberShape,
            Task::Comparison => Scope::AttrCounts,
        };
        let Some(scope_partition) = partition.scope(scope) else {
            last_constraint = format!("no partition for scope {scope}");
            continue;
        };
        let side_pairs = scope_partition.side(side);
        // spatial relations and comparisons choose the relation after the pair
        let candidates: Vec<(u32, u32)> = side_pairs
            .iter()
            .copied()
            .filter(|&p| label_compatible(scope, p, target_label, side_pairs))
            .collect();
        if candidates.is_empty() {
            last_constraint = format!("no {side} pair in scope {scope} supports label {target_label}");
            continue;
        }
        let pair = pick(rng, &candidates);
        let built = match scope {
            Scope::Horizontal | Scope::Vertical => {
                let rels: Vec<SpatialRel> = SpatialRel::ALL
                    .into_iter()
                    .filter(|r| r.scope() == scope && r.holds(pair.0, pair.1) == target_label)
                    .collect();
                if rels.is_empty() {
                    last_constraint = format!("pair {pair:?} cannot be {target_label} in scope {scope}");
                    continue;
                }
                let rel = pick(rng, &rels);
                build_spatial(rel, pair, pick(rng, lexicon), rng)
            }
            Scope::NumberShape => build_cardinality(pair, target_label, side_pairs, rng),
            Scope::AttrCounts => {
                let rel = ComparisonRel::ALL
                    .into_iter()
                    .find(|r| r.holds(pair.0 as usize, pair.1 as usize) == target_label)
                    .expect("a != b, so exactly one relation holds");
                build_comparison(rel, pair, pick(rng, lexicon), rng)
            }
            _ => {
                let quant = scope.quantifier().expect("quantifier scope");
                build_quantified(quant, pair, target_label, pick(rng, lexicon), cfg, rng)
            }
        };
        let Some((scene, query)) = built else {
            last_constraint = format!("could not realize pair {pair:?} in scope {scope}");
            continue;
        };
        let pair = match pair_key(&scene, &query) {
            Ok(key) => key,
            Err(e) => {
                last_constraint = e.to_string();
                continue;
            }
        };
        let core = LabeledExample {
            scene,
            query,
            label: target_label,
            pair,
        };
        match add_distractors(&core, cfg, rng) {
            Ok(example) => return Ok(example),
            Err(e) => last_constraint = e.to_string(),
        }
    }
    Err(SplitError::SamplingExhausted {
        task,
        side,
        label: target_label,
        attempts: cfg.max_retries,
        constraint: last_constraint,
    })
}

/// Whether `(colour, shape)` may be added to a scene without affecting `query`.
pub fn is_irrelevant(query: &Query, colour: Colour, shape: Shape) -> bool {
    let probe = ObjectSpec::new(colour, shape, GridPos { col: 0, row: 0 });
    match query {
        Query::Spatial(q) => !q.obj1.matches(&probe) && !q.obj2.matches(&probe),
        Query::Cardinality(q) => shape != q.shape,
        Query::Quantified(QuantifiedQuery { attr1, attr2, .. })
        | Query::Comparison(ComparisonQuery { attr1, attr2, .. }) => {
            !attribute_matches(&probe, *attr1) && !attribute_matches(&probe, *attr2)
        }
    }
}

/// Adds a task-appropriate number of distractors on free cells, leaving label and pair unchanged.
pub fn add_distractors(
    example: &LabeledExample,
    cfg: &SamplerConfig,
    rng: &mut Stream,
) -> Result<LabeledExample, SplitError> {
    let k = cfg.distractor_range(example.query.task()).sample(rng) as usize;
    let mut free = example.scene.free_cells();
    if free.len() < k {
        return Err(SplitError::GridFull {
            requested: k,
            free: free.len(),
        });
    }
    let allowed: Vec<(Colour, Shape)> = Colour::ALL
        .into_iter()
        .flat_map(|c| Shape::ALL.into_iter().map(move |s| (c, s)))
        .filter(|&(c, s)| is_irrelevant(&example.query, c, s))
        .collect();
    free.partial_shuffle(rng, k);
    let mut objects = example.scene.objects().to_vec();
    for &pos in &free[..k] {
        let (colour, shape) = pick(rng, &allowed);
        objects.push(ObjectSpec::new(colour, shape, pos));
    }
    let scene = Scene::new(objects);
    debug_assert_eq!(eval(&scene, &example.query).ok(), Some(example.label));
    debug_assert_eq!(pair_key(&scene, &example.query).ok(), Some(example.pair));
    Ok(LabeledExample {
        scene,
        query: example.query,
        label: example.label,
        pair: example.pair,
    })
}

/// Number of distractors in a generated scene: objects the query does not depend on.
pub fn distractor_count(scene: &Scene, query: &Query) -> usize {
    scene
        .objects()
        .iter()
        .filter(|o| is_irrelevant(query, o.colour, o.shape))
        .count()
}

/// Checks the per-task count ranges of a generated example. Returns one message per breach.
pub fn range_violations(scene: &Scene, query: &Query, cfg: &SamplerConfig) -> Vec<String> {
    let mut out = Vec::new();
    let distractors = distractor_count(scene, query) as u32;
    let task = query.task();
    let distractor_range = cfg.distractor_range(task);
    if !distractor_range.contains(distractors) {
        out.push(format!("{distractors} distractors outside {distractor_range}"));
    }
    let mut check = |what: &str, value: u32, range: CountRange| {
        if !range.contains(value) {
            out.push(format!("{what} = {value} outside {range}"));
        }
    };
    match query {
        Query::Spatial(q) => {
            for d in [q.obj1, q.obj2] {
                let n = scene.objects().iter().filter(|o| d.matches(o)).count() as u32;
                check(&format!("count of {d}"), n, CountRange::new(1, 1));
            }
        }
        Query::Cardinality(q) => {
            check(
                "relevant count",
                scene.count(q.shape.into()) as u32,
                cfg.cardinality_relevant,
            );
            check("query number", q.number, cfg.cardinality_relevant);
        }
        Query::Quantified(q) => {
            let regions = RegionCounts::of(scene, q.attr1, q.attr2);
            for region in REGIONS {
                let n = regions.get(region) as u32;
                if n == 0 && region == q.quant.deciding_region() {
                    continue;
                }
                check(&format!("{region:?} region"), n, cfg.quantifier_part);
            }
            if q.attr1.family() == q.attr2.family() {
                out.push("quantified attributes share a family".into());
            }
        }
        Query::Comparison(q) => {
            check("attr1 count", scene.count(q.attr1) as u32, cfg.comparison_count);
            check("attr2 count", scene.count(q.attr2) as u32, cfg.comparison_count);
            if q.attr1.family() != q.attr2.family() {
                out.push("comparison attributes from different families".into());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::eval;

    fn cfg() -> SamplerConfig {
        SamplerConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        let bad = SamplerConfig {
            comparison_threshold: 0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn universe_sizes() {
        let c = cfg();
        assert_eq!(pair_universe(Scope::Horizontal, &c).len(), 36);
        assert_eq!(pair_universe(Scope::NumberShape, &c).len(), 42);
        assert_eq!(pair_universe(Scope::All, &c).len(), 25);
        assert_eq!(pair_universe(Scope::NotAll, &c).len(), 30);
        assert_eq!(pair_universe(Scope::AttrCounts, &c).len(), 72);
        assert_eq!(lexical_universe(Task::Spatiality).len(), 35 * 34);
        assert_eq!(lexical_universe(Task::Quantifiers).len(), 70);
        assert_eq!(lexical_universe(Task::Comparison).len(), 5 * 4 + 7 * 6);
    }

    #[test]
    fn comparison_threshold_policy() {
        let p = partition_pairs(Scope::AttrCounts, 0.2, 1, &cfg()).unwrap();
        assert!(p.train_pairs.contains(&(4, 2)));
        assert!(p.ood_pairs.contains(&(9, 1)));
        assert!(p.train_pairs.iter().all(|(a, b)| (1..=3).contains(&a.abs_diff(*b))));
        assert!(p.ood_pairs.iter().all(|(a, b)| a.abs_diff(*b) > 3));
        assert_eq!(p.train_pairs.len(), 42);
        assert_eq!(p.ood_pairs.len(), 30);
    }

    #[test]
    fn horizontal_holdout_properties() {
        let p = partition_pairs(Scope::Horizontal, 0.2, 7, &cfg()).unwrap();
        assert_eq!(p.ood_pairs.len(), 7);
        assert_eq!(p.train_pairs.len(), 29);
        assert!(p.train_pairs.is_disjoint(&p.ood_pairs));
        assert!(value_coverage_gap(&p.train_pairs, &p.ood_pairs).is_none());
        assert_eq!(p, partition_pairs(Scope::Horizontal, 0.2, 7, &cfg()).unwrap());
        assert_ne!(p, partition_pairs(Scope::Horizontal, 0.2, 8, &cfg()).unwrap());
    }

    #[test]
    fn infeasible_and_invalid_fractions() {
        assert!(matches!(
            partition_pairs(Scope::Horizontal, 0.9, 7, &cfg()),
            Err(SplitError::InfeasiblePartition { .. })
        ));
        assert!(matches!(
            partition_pairs(Scope::Horizontal, 0.0, 7, &cfg()),
            Err(SplitError::InvalidFraction(_))
        ));
        assert!(matches!(
            partition_pairs(Scope::Horizontal, 1.0, 7, &cfg()),
            Err(SplitError::InvalidFraction(_))
        ));
    }

    #[test]
    fn lexicon_split_is_disjoint() {
        for task in Task::ALL {
            let tp = TaskPartition::build(task, 0.2, 3, &cfg()).unwrap();
            let train: BTreeSet<_> = tp.train_lexicon.iter().collect();
            assert!(tp.ood_lexicon.iter().all(|k| !train.contains(k)));
            assert_eq!(
                tp.train_lexicon.len() + tp.ood_lexicon.len(),
                lexical_universe(task).len()
            );
        }
    }

    fn check_example(tp: &TaskPartition, side: Side, label: bool, ex: &LabeledExample) {
        assert_eq!(eval(&ex.scene, &ex.query).unwrap(), label);
        assert_eq!(ex.label, label);
        assert_eq!(pair_key(&ex.scene, &ex.query).unwrap(), ex.pair);
        assert_eq!(tp.side_of(&ex.pair), Some(side));
        assert!(crate::scene::validate_scene(&ex.scene).is_empty());
        assert_eq!(range_violations(&ex.scene, &ex.query, &cfg()), Vec::<String>::new());
        if let Some(key) = LexicalKey::of(&ex.query) {
            assert!(tp.lexicon(side).contains(&key));
        }
    }

    #[test]
    fn spatial_true_train_example() {
        let tp = TaskPartition::build(Task::Spatiality, 0.2, 11, &cfg()).unwrap();
        let mut rng = substream(1, &["t"], 0);
        for _ in 0..200 {
            let ex = sample_example(&tp, Side::Train, true, &cfg(), &mut rng).unwrap();
            assert_eq!(ex.scene.len(), 3);
            check_example(&tp, Side::Train, true, &ex);
        }
    }

    #[test]
    fn quantifier_ood_false_examples() {
        let tp = TaskPartition::build(Task::Quantifiers, 0.2, 11, &cfg()).unwrap();
        let mut rng = substream(2, &["t"], 0);
        let mut saw_all = false;
        for _ in 0..300 {
            let ex = sample_example(&tp, Side::Ood, false, &cfg(), &mut rng).unwrap();
            check_example(&tp, Side::Ood, false, &ex);
            if let Query::Quantified(q) = ex.query {
                if q.quant == Quantifier::All {
                    saw_all = true;
                    assert!(RegionCounts::of(&ex.scene, q.attr1, q.attr2).first_only >= 1);
                }
            }
        }
        assert!(saw_all);
    }

    #[test]
    fn cardinality_false_numbers_stay_in_range() {
        let tp = TaskPartition::build(Task::Cardinality, 0.2, 11, &cfg()).unwrap();
        let mut rng = substream(3, &["t"], 0);
        for _ in 0..300 {
            let ex = sample_example(&tp, Side::Train, false, &cfg(), &mut rng).unwrap();
            check_example(&tp, Side::Train, false, &ex);
            let Query::Cardinality(q) = ex.query else { panic!() };
            assert_ne!(q.number as usize, ex.scene.count(q.shape.into()));
            assert!((1..=6).contains(&q.number));
            let text_pair = (q.number, q.shape.index() as u32);
            assert!(tp.partitions[0].train_pairs.contains(&text_pair));
        }
    }

    #[test]
    fn all_tasks_both_sides_both_labels() {
        for task in Task::ALL {
            let tp = TaskPartition::build(task, 0.2, 5, &cfg()).unwrap();
            let mut rng = substream(4, &[task.name()], 0);
            for side in [Side::Train, Side::Ood] {
                for label in [true, false] {
                    for _ in 0..50 {
                        let ex = sample_example(&tp, side, label, &cfg(), &mut rng).unwrap();
                        check_example(&tp, side, label, &ex);
                    }
                }
            }
        }
    }

    #[test]
    fn distractors_preserve_label_and_pair() {
        let tp = TaskPartition::build(Task::Quantifiers, 0.2, 9, &cfg()).unwrap();
        let mut rng = substream(5, &["t"], 0);
        let ex = sample_example(&tp, Side::Train, true, &cfg(), &mut rng).unwrap();
        let more = add_distractors(&ex, &cfg(), &mut rng).unwrap();
        assert!(more.scene.len() > ex.scene.len());
        assert_eq!(eval(&more.scene, &more.query).unwrap(), ex.label);
        assert_eq!(pair_key(&more.scene, &more.query).unwrap(), ex.pair);
        let Query::Quantified(q) = ex.query else { panic!() };
        assert_eq!(
            RegionCounts::of(&more.scene, q.attr1, q.attr2),
            RegionCounts::of(&ex.scene, q.attr1, q.attr2)
        );
    }

    #[test]
    fn grid_full_is_reported() {
        let full: Scene = GridPos::all()
            .map(|p| ObjectSpec::new(Colour::Red, Shape::Circle, p))
            .collect();
        let query: Query = CardinalityQuery {
            number: 36,
            shape: Shape::Circle,
        }
        .into();
        let ex = LabeledExample {
            pair: pair_key(&full, &query).unwrap(),
            scene: full,
            query,
            label: true,
        };
        let mut rng = substream(0, &[], 0);
        assert!(matches!(
            add_distractors(&ex, &cfg(), &mut rng),
            Err(SplitError::GridFull { free: 0, .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let tp = TaskPartition::build(Task::Comparison, 0.2, 5, &cfg()).unwrap();
        let a = sample_example(&tp, Side::Ood, true, &cfg(), &mut substream(9, &["x"], 1)).unwrap();
        let b = sample_example(&tp, Side::Ood, true, &cfg(), &mut substream(9, &["x"], 1)).unwrap();
        assert_eq!(a, b);
    }
}
