//! Query language, truth evaluation `y = f(scene, query)` and pair-key extraction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scene::{select, Attribute, Colour, ObjectSpec, Scene, Shape, GRID_CELLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Spatiality,
    Cardinality,
    Quantifiers,
    Comparison,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Spatiality, Task::Cardinality, Task::Quantifiers, Task::Comparison];

    pub fn name(self) -> &'static str {
        match self {
            Task::Spatiality => "spatiality",
            Task::Cardinality => "cardinality",
            Task::Quantifiers => "quantifiers",
            Task::Comparison => "comparison",
        }
    }

    /// Partition scopes used by this task, one pair space per scope.
    pub fn scopes(self) -> Vec<Scope> {
        match self {
            Task::Spatiality => vec![Scope::Horizontal, Scope::Vertical],
            Task::Cardinality => vec![Scope::NumberShape],
            Task::Quantifiers => Quantifier::ALL.into_iter().map(Scope::from).collect(),
            Task::Comparison => vec![Scope::AttrCounts],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRel {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl SpatialRel {
    pub const ALL: [SpatialRel; 4] = [
        SpatialRel::LeftOf,
        SpatialRel::RightOf,
        SpatialRel::Above,
        SpatialRel::Below,
    ];

    pub fn is_horizontal(self) -> bool {
        matches!(self, SpatialRel::LeftOf | SpatialRel::RightOf)
    }

    pub fn scope(self) -> Scope {
        if self.is_horizontal() {
            Scope::Horizontal
        } else {
            Scope::Vertical
        }
    }

    /// Truth of the relation given the relevant coordinates of the two objects.
    pub fn holds(self, first: u32, second: u32) -> bool {
        match self {
            SpatialRel::LeftOf | SpatialRel::Above => first < second,
            SpatialRel::RightOf | SpatialRel::Below => first > second,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantifier {
    All,
    NotAll,
    No,
    Some,
    Only,
    NotOnly,
}

impl Quantifier {
    pub const ALL: [Quantifier; 6] = [
        Quantifier::All,
        Quantifier::NotAll,
        Quantifier::No,
        Quantifier::Some,
        Quantifier::Only,
        Quantifier::NotOnly,
    ];

    pub fn negation(self) -> Quantifier {
        match self {
            Quantifier::All => Quantifier::NotAll,
            Quantifier::NotAll => Quantifier::All,
            Quantifier::No => Quantifier::Some,
            Quantifier::Some => Quantifier::No,
            Quantifier::Only => Quantifier::NotOnly,
            Quantifier::NotOnly => Quantifier::Only,
        }
    }

    /// The region whose emptiness decides the truth value.
    pub fn deciding_region(self) -> Region {
        match self {
            Quantifier::All | Quantifier::NotAll => Region::FirstOnly,
            Quantifier::No | Quantifier::Some => Region::Both,
            Quantifier::Only | Quantifier::NotOnly => Region::SecondOnly,
        }
    }

    /// True for `all`, `no`, `only`: the query holds when the deciding region is empty.
    pub fn holds_when_empty(self) -> bool {
        matches!(self, Quantifier::All | Quantifier::No | Quantifier::Only)
    }

    /// The two regions forming the split pair `<a, b>`.
    pub fn pair_regions(self) -> (Region, Region) {
        match self {
            Quantifier::All => (Region::Both, Region::SecondOnly),
            Quantifier::NotAll => (Region::Both, Region::FirstOnly),
            Quantifier::No => (Region::FirstOnly, Region::SecondOnly),
            Quantifier::Some => (Region::FirstOnly, Region::Both),
            Quantifier::Only => (Region::Both, Region::FirstOnly),
            Quantifier::NotOnly => (Region::Both, Region::SecondOnly),
        }
    }
}

/// A Venn region of the two attribute denotations `X = [[attr1]]`, `Y = [[attr2]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// X ∩ Y
    Both,
    /// X \ Y
    FirstOnly,
    /// Y \ X
    SecondOnly,
}

pub const REGIONS: [Region; 3] = [Region::Both, Region::FirstOnly, Region::SecondOnly];

/// Cardinalities of the three Venn regions of two attribute selections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionCounts {
    pub both: usize,
    pub first_only: usize,
    pub second_only: usize,
}

impl RegionCounts {
    pub fn of(scene: &Scene, attr1: Attribute, attr2: Attribute) -> Self {
        let mut counts = RegionCounts::default();
        for o in scene.objects() {
            let in_x = crate::scene::attribute_matches(o, attr1);
            let in_y = crate::scene::attribute_matches(o, attr2);
            match (in_x, in_y) {
                (true, true) => counts.both += 1,
                (true, false) => counts.first_only += 1,
                (false, true) => counts.second_only += 1,
                (false, false) => {}
            }
        }
        counts
    }

    pub fn get(&self, region: Region) -> usize {
        match region {
            Region::Both => self.both,
            Region::FirstOnly => self.first_only,
            Region::SecondOnly => self.second_only,
        }
    }

    pub fn set(&mut self, region: Region, value: usize) {
        match region {
            Region::Both => self.both = value,
            Region::FirstOnly => self.first_only = value,
            Region::SecondOnly => self.second_only = value,
        }
    }

    pub fn total(&self) -> usize {
        self.both + self.first_only + self.second_only
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonRel {
    More,
    Fewer,
}

impl ComparisonRel {
    pub const ALL: [ComparisonRel; 2] = [ComparisonRel::More, ComparisonRel::Fewer];

    pub fn holds(self, first: usize, second: usize) -> bool {
        match self {
            ComparisonRel::More => first > second,
            ComparisonRel::Fewer => first < second,
        }
    }
}

/// A definite object description such as "the red circle".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Description {
    pub colour: Colour,
    pub shape: Shape,
}

impl Description {
    pub fn new(colour: Colour, shape: Shape) -> Self {
        Description { colour, shape }
    }

    pub fn of(obj: &ObjectSpec) -> Self {
        Description::new(obj.colour, obj.shape)
    }

    pub fn matches(self, obj: &ObjectSpec) -> bool {
        obj.colour == self.colour && obj.shape == self.shape
    }

    /// All 35 colour/shape combinations.
    pub fn all() -> impl Iterator<Item = Description> {
        Colour::ALL
            .into_iter()
            .flat_map(|c| Shape::ALL.into_iter().map(move |s| Description::new(c, s)))
    }
}

impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.colour, self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialQuery {
    pub obj1: Description,
    pub rel: SpatialRel,
    pub obj2: Description,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CardinalityQuery {
    pub number: u32,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantifiedQuery {
    pub quant: Quantifier,
    pub attr1: Attribute,
    pub attr2: Attribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComparisonQuery {
    pub rel: ComparisonRel,
    pub attr1: Attribute,
    pub attr2: Attribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    Spatial(SpatialQuery),
    Cardinality(CardinalityQuery),
    Quantified(QuantifiedQuery),
    Comparison(ComparisonQuery),
}

impl Query {
    pub fn task(&self) -> Task {
        match self {
            Query::Spatial(_) => Task::Spatiality,
            Query::Cardinality(_) => Task::Cardinality,
            Query::Quantified(_) => Task::Quantifiers,
            Query::Comparison(_) => Task::Comparison,
        }
    }

    pub fn scope(&self) -> Scope {
        match self {
            Query::Spatial(q) => q.rel.scope(),
            Query::Cardinality(_) => Scope::NumberShape,
            Query::Quantified(q) => q.quant.into(),
            Query::Comparison(_) => Scope::AttrCounts,
        }
    }

    /// Checks the structural invariants of the AST.
    pub fn validate(&self) -> Result<(), InvalidQuery> {
        match *self {
            Query::Spatial(q) if q.obj1 == q.obj2 => Err(InvalidQuery::SameReferent),
            Query::Cardinality(q) if q.number as usize > GRID_CELLS => Err(InvalidQuery::NumberOutOfRange(q.number)),
            Query::Quantified(q) if q.attr1.family() == q.attr2.family() => Err(InvalidQuery::SameFamily),
            Query::Comparison(q) if q.attr1 == q.attr2 => Err(InvalidQuery::SameAttribute),
            _ => Ok(()),
        }
    }
}

impl From<SpatialQuery> for Query {
    fn from(q: SpatialQuery) -> Self {
        Query::Spatial(q)
    }
}

impl From<CardinalityQuery> for Query {
    fn from(q: CardinalityQuery) -> Self {
        Query::Cardinality(q)
    }
}

impl From<QuantifiedQuery> for Query {
    fn from(q: QuantifiedQuery) -> Self {
        Query::Quantified(q)
    }
}

impl From<ComparisonQuery> for Query {
    fn from(q: ComparisonQuery) -> Self {
        Query::Comparison(q)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidQuery {
    #[error("spatial query refers to the same description twice")]
    SameReferent,
    #[error("cardinality number {0} exceeds the grid size")]
    NumberOutOfRange(u32),
    #[error("quantified query attributes must come from different families")]
    SameFamily,
    #[error("comparison query compares an attribute with itself")]
    SameAttribute,
}

/// A definite description that does not pick out exactly one object.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("description \"{description}\" matches {count} objects, expected exactly one")]
pub struct ReferentError {
    pub description: Description,
    pub count: usize,
}

/// Which partition a pair key belongs to within its task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Horizontal,
    Vertical,
    NumberShape,
    All,
    NotAll,
    No,
    Some,
    Only,
    NotOnly,
    AttrCounts,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Horizontal => "horizontal",
            Scope::Vertical => "vertical",
            Scope::NumberShape => "number_shape",
            Scope::All => "all",
            Scope::NotAll => "not_all",
            Scope::No => "no",
            Scope::Some => "some",
            Scope::Only => "only",
            Scope::NotOnly => "not_only",
            Scope::AttrCounts => "attr_counts",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Scope::Horizontal | Scope::Vertical => Task::Spatiality,
            Scope::NumberShape => Task::Cardinality,
            Scope::AttrCounts => Task::Comparison,
            _ => Task::Quantifiers,
        }
    }

    pub fn quantifier(self) -> Option<Quantifier> {
        Some(match self {
            Scope::All => Quantifier::All,
            Scope::NotAll => Quantifier::NotAll,
            Scope::No => Quantifier::No,
            Scope::Some => Quantifier::Some,
            Scope::Only => Quantifier::Only,
            Scope::NotOnly => Quantifier::NotOnly,
            _ => return None,
        })
    }
}

impl From<Quantifier> for Scope {
    fn from(q: Quantifier) -> Self {
        match q {
            Quantifier::All => Scope::All,
            Quantifier::NotAll => Scope::NotAll,
            Quantifier::No => Scope::No,
            Quantifier::Some => Scope::Some,
            Quantifier::Only => Scope::Only,
            Quantifier::NotOnly => Scope::NotOnly,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The task-relevant pair `<a, b>` that decides whether an example is train or OOD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub task: Task,
    pub scope: Scope,
    pub a: u32,
    pub b: u32,
}

impl PairKey {
    pub fn new(scope: Scope, a: u32, b: u32) -> Self {
        PairKey {
            task: scope.task(),
            scope,
            a,
            b,
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}<{},{}>", self.task, self.scope, self.a, self.b)
    }
}

fn unique_referent(scene: &Scene, description: Description) -> Result<&ObjectSpec, ReferentError> {
    let mut found = scene.objects().iter().filter(|o| description.matches(o));
    match (found.next(), found.next()) {
        (Some(o), None) => Ok(o),
        (first, _) => Err(ReferentError {
            description,
            count: if first.is_none() {
                0
            } else {
                scene.objects().iter().filter(|o| description.matches(o)).count()
            },
        }),
    }
}

fn referents(scene: &Scene, q: &SpatialQuery) -> Result<(ObjectSpec, ObjectSpec), ReferentError> {
    Ok((*unique_referent(scene, q.obj1)?, *unique_referent(scene, q.obj2)?))
}

fn spatial_coords(q: &SpatialQuery, o1: &ObjectSpec, o2: &ObjectSpec) -> (u32, u32) {
    if q.rel.is_horizontal() {
        (o1.pos.col.into(), o2.pos.col.into())
    } else {
        (o1.pos.row.into(), o2.pos.row.into())
    }
}

pub fn eval_spatial(scene: &Scene, q: &SpatialQuery) -> Result<bool, ReferentError> {
    let (o1, o2) = referents(scene, q)?;
    let (c1, c2) = spatial_coords(q, &o1, &o2);
    Ok(q.rel.holds(c1, c2))
}

pub fn eval_cardinality(scene: &Scene, q: &CardinalityQuery) -> bool {
    scene.count(q.shape.into()) == q.number as usize
}

/// Set-theoretic quantifier semantics over `X = [[attr1]]`, `Y = [[attr2]]`.
/// `all` with an empty `X` is vacuously true.
pub fn eval_quantifier(scene: &Scene, q: &QuantifiedQuery) -> bool {
    let regions = RegionCounts::of(scene, q.attr1, q.attr2);
    let empty = regions.get(q.quant.deciding_region()) == 0;
    empty == q.quant.holds_when_empty()
}

pub fn eval_comparison(scene: &Scene, q: &ComparisonQuery) -> bool {
    q.rel.holds(scene.count(q.attr1), scene.count(q.attr2))
}

pub fn eval(scene: &Scene, q: &Query) -> Result<bool, ReferentError> {
    Ok(match q {
        Query::Spatial(q) => eval_spatial(scene, q)?,
        Query::Cardinality(q) => eval_cardinality(scene, q),
        Query::Quantified(q) => eval_quantifier(scene, q),
        Query::Comparison(q) => eval_comparison(scene, q),
    })
}

pub fn pair_key(scene: &Scene, q: &Query) -> Result<PairKey, ReferentError> {
    let scope = q.scope();
    let (a, b) = match q {
        Query::Spatial(sq) => {
            let (o1, o2) = referents(scene, sq)?;
            spatial_coords(sq, &o1, &o2)
        }
        Query::Cardinality(cq) => (select(scene, cq.shape.into()).len() as u32, cq.shape.index() as u32),
        Query::Quantified(qq) => {
            let regions = RegionCounts::of(scene, qq.attr1, qq.attr2);
            let (ra, rb) = qq.quant.pair_regions();
            (regions.get(ra) as u32, regions.get(rb) as u32)
        }
        Query::Comparison(cq) => (scene.count(cq.attr1) as u32, scene.count(cq.attr2) as u32),
    };
    Ok(PairKey::new(scope, a, b))
}
