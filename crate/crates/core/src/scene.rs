//! Scenes: coloured shapes placed on a fixed 6×6 grid.
//!
//! Positions are 0-based `(col, row)` indices internally. The surface labels
//! (columns `A`..`F`, rows `1`..`6`) only appear in captions and renderings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of columns and rows of the grid.
pub const GRID_SIZE: u8 = 6;
/// Number of cells on the grid.
pub const GRID_CELLS: usize = (GRID_SIZE as usize) * (GRID_SIZE as usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colour {
    Red,
    Blue,
    Green,
    Yellow,
    Orange,
}

impl Colour {
    pub const ALL: [Colour; 5] = [Colour::Red, Colour::Blue, Colour::Green, Colour::Yellow, Colour::Orange];

    pub fn name(self) -> &'static str {
        match self {
            Colour::Red => "red",
            Colour::Blue => "blue",
            Colour::Green => "green",
            Colour::Yellow => "yellow",
            Colour::Orange => "orange",
        }
    }

    /// Position in [`Colour::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
    Star,
    Hexagon,
    Octagon,
    Pentagon,
}

impl Shape {
    pub const ALL: [Shape; 7] = [
        Shape::Square,
        Shape::Circle,
        Shape::Triangle,
        Shape::Star,
        Shape::Hexagon,
        Shape::Octagon,
        Shape::Pentagon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
            Shape::Star => "star",
            Shape::Hexagon => "hexagon",
            Shape::Octagon => "octagon",
            Shape::Pentagon => "pentagon",
        }
    }

    /// Position in [`Shape::ALL`]; used as the shape component of cardinality pair keys.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Shape> {
        Shape::ALL.get(index).copied()
    }
}

impl fmt::Display for Colour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Colour {
    type Err = UnknownWord;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Colour::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownWord(s.to_string()))
    }
}

impl FromStr for Shape {
    type Err = UnknownWord;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Shape::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownWord(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown attribute word {0:?}")]
pub struct UnknownWord(pub String);

/// A single attribute value: either a colour or a shape.
///
/// Serialized as the bare word (`"red"`, `"circle"`); the two vocabularies are disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Attribute {
    Colour(Colour),
    Shape(Shape),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeFamily {
    Colour,
    Shape,
}

impl Attribute {
    /// Every attribute value, colours first.
    pub fn all() -> impl Iterator<Item = Attribute> {
        Colour::ALL
            .into_iter()
            .map(Attribute::Colour)
            .chain(Shape::ALL.into_iter().map(Attribute::Shape))
    }

    pub fn family(self) -> AttributeFamily {
        match self {
            Attribute::Colour(_) => AttributeFamily::Colour,
            Attribute::Shape(_) => AttributeFamily::Shape,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Colour(c) => c.name(),
            Attribute::Shape(s) => s.name(),
        }
    }
}

impl From<Colour> for Attribute {
    fn from(c: Colour) -> Self {
        Attribute::Colour(c)
    }
}

impl From<Shape> for Attribute {
    fn from(s: Shape) -> Self {
        Attribute::Shape(s)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = UnknownWord;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Colour>()
            .map(Attribute::Colour)
            .or_else(|_| s.parse::<Shape>().map(Attribute::Shape))
    }
}

/// A grid cell. `col` 0..=5 maps to `A`..`F`, `row` 0..=5 maps to `1`..`6`.
///
/// Fields are public so that out-of-range positions can be represented and
/// reported by [`validate_scene`]; use [`GridPos::new`] for checked construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub col: u8,
    pub row: u8,
}

impl GridPos {
    pub fn new(col: u8, row: u8) -> Option<GridPos> {
        let pos = GridPos { col, row };
        pos.in_range().then_some(pos)
    }

    pub fn in_range(self) -> bool {
        self.col < GRID_SIZE && self.row < GRID_SIZE
    }

    /// Row-major cell index, 0..36.
    pub fn cell_index(self) -> usize {
        self.row as usize * GRID_SIZE as usize + self.col as usize
    }

    pub fn from_cell_index(index: usize) -> Option<GridPos> {
        (index < GRID_CELLS).then(|| GridPos {
            col: (index % GRID_SIZE as usize) as u8,
            row: (index / GRID_SIZE as usize) as u8,
        })
    }

    pub fn col_label(self) -> char {
        (b'A' + self.col) as char
    }

    pub fn row_label(self) -> u32 {
        u32::from(self.row) + 1
    }

    /// Every cell in row-major order.
    pub fn all() -> impl Iterator<Item = GridPos> {
        (0..GRID_CELLS).filter_map(GridPos::from_cell_index)
    }
}

impl Ord for GridPos {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.row, self.col).cmp(&(other.row, other.col))
    }
}

impl PartialOrd for GridPos {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.in_range() {
            write!(f, "({},{})", self.col_label(), self.row_label())
        } else {
            write!(f, "(col {}, row {})", self.col, self.row)
        }
    }
}

/// One object: a `<colour, shape, position>` tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub colour: Colour,
    pub shape: Shape,
    #[serde(flatten)]
    pub pos: GridPos,
}

impl ObjectSpec {
    pub fn new(colour: Colour, shape: Shape, pos: GridPos) -> Self {
        ObjectSpec { colour, shape, pos }
    }
}

/// A scene. Objects are kept in canonical row-major order of their positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Scene {
    objects: Vec<ObjectSpec>,
}

impl Scene {
    /// Builds a scene, sorting objects into canonical order. No invariants are checked.
    pub fn new(mut objects: Vec<ObjectSpec>) -> Self {
        objects.sort_by_key(|o| o.pos);
        Scene { objects }
    }

    /// Builds a scene and rejects it if any invariant is broken.
    pub fn try_new(objects: Vec<ObjectSpec>) -> Result<Self, Vec<Violation>> {
        let scene = Scene::new(objects);
        let violations = validate_scene(&scene);
        if violations.is_empty() {
            Ok(scene)
        } else {
            Err(violations)
        }
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object_at(&self, pos: GridPos) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.pos == pos)
    }

    pub fn is_occupied(&self, pos: GridPos) -> bool {
        self.object_at(pos).is_some()
    }

    /// Cells not holding any object, row-major.
    pub fn free_cells(&self) -> Vec<GridPos> {
        let mut taken = [false; GRID_CELLS];
        for o in &self.objects {
            if o.pos.in_range() {
                taken[o.pos.cell_index()] = true;
            }
        }
        GridPos::all().filter(|p| !taken[p.cell_index()]).collect()
    }

    /// Returns a new scene with `object` added, keeping canonical order.
    pub fn with_object(&self, object: ObjectSpec) -> Scene {
        let mut objects = self.objects.clone();
        let at = objects.partition_point(|o| o.pos < object.pos);
        objects.insert(at, object);
        Scene { objects }
    }

    /// Number of objects matching `attr`.
    pub fn count(&self, attr: Attribute) -> usize {
        self.objects.iter().filter(|o| attribute_matches(o, attr)).count()
    }
}

impl FromIterator<ObjectSpec> for Scene {
    fn from_iter<T: IntoIterator<Item = ObjectSpec>>(iter: T) -> Self {
        Scene::new(iter.into_iter().collect())
    }
}

pub fn attribute_matches(obj: &ObjectSpec, attr: Attribute) -> bool {
    match attr {
        Attribute::Colour(c) => obj.colour == c,
        Attribute::Shape(s) => obj.shape == s,
    }
}

/// The objects of `scene` denoted by `attr`, in scene order.
pub fn select(scene: &Scene, attr: Attribute) -> Vec<ObjectSpec> {
    scene
        .objects
        .iter()
        .filter(|o| attribute_matches(o, attr))
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    #[error("empty scene")]
    Empty,
    #[error("too many objects ({count} > {max})", max = GRID_CELLS)]
    TooManyObjects { count: usize },
    #[error("position out of range {pos}")]
    OutOfRange { pos: GridPos },
    #[error("duplicate position {pos}")]
    DuplicatePosition { pos: GridPos },
}

/// Reports every broken scene invariant. An empty list means the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut violations = Vec::new();
    if scene.objects.is_empty() {
        violations.push(Violation::Empty);
    }
    if scene.objects.len() > GRID_CELLS {
        violations.push(Violation::TooManyObjects {
            count: scene.objects.len(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    let mut reported = std::collections::HashSet::new();
    for o in &scene.objects {
        if !o.pos.in_range() {
            violations.push(Violation::OutOfRange { pos: o.pos });
        }
        if !seen.insert(o.pos) && reported.insert(o.pos) {
            violations.push(Violation::DuplicatePosition { pos: o.pos });
        }
    }
    violations
}
