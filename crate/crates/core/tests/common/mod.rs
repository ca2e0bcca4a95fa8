//! Test-side oracles and generators shared by the integration targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlgrid_core::scene::{Attribute, Colour, GridPos, ObjectSpec, Scene, Shape};
use vlgrid_core::semantics::{
    CardinalityQuery, ComparisonQuery, ComparisonRel, Description, QuantifiedQuery, Quantifier, Query, SpatialQuery,
    SpatialRel,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The scene laid out as a 6x6 grid of cells, indexed `[row][col]`.
pub type Grid = [[Option<(Colour, Shape)>; 6]; 6];

pub fn grid(scene: &Scene) -> Grid {
    let mut g: Grid = [[None; 6]; 6];
    for o in scene.objects() {
        g[o.pos.row as usize][o.pos.col as usize] = Some((o.colour, o.shape));
    }
    g
}

fn has(cell: (Colour, Shape), attr: Attribute) -> bool {
    match attr {
        Attribute::Colour(c) => cell.0 == c,
        Attribute::Shape(s) => cell.1 == s,
    }
}

/// Cells (as `row * 6 + col`) whose object carries `attr`.
pub fn denotation(g: &Grid, attr: Attribute) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for (r, row) in g.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if let Some(cell) = cell {
                if has(*cell, attr) {
                    out.insert(r * 6 + c);
                }
            }
        }
    }
    out
}

fn locate(g: &Grid, d: Description) -> Option<(usize, usize)> {
    let mut hits = Vec::new();
    for (r, row) in g.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if *cell == Some((d.colour, d.shape)) {
                hits.push((c, r));
            }
        }
    }
    (hits.len() == 1).then(|| hits[0])
}

/// Brute-force truth value by scanning grid cells; `None` when a spatial referent
/// is missing or ambiguous.
pub fn brute_force(scene: &Scene, q: &Query) -> Option<bool> {
    let g = grid(scene);
    match *q {
        Query::Spatial(q) => {
            let (c1, r1) = locate(&g, q.obj1)?;
            let (c2, r2) = locate(&g, q.obj2)?;
            Some(match q.rel {
                SpatialRel::LeftOf => c1 < c2,
                SpatialRel::RightOf => c1 > c2,
                SpatialRel::Above => r1 < r2,
                SpatialRel::Below => r1 > r2,
            })
        }
        Query::Cardinality(q) => {
            let n = g.iter().flatten().flatten().filter(|cell| cell.1 == q.shape).count();
            Some(n == q.number as usize)
        }
        Query::Quantified(q) => {
            let x = denotation(&g, q.attr1);
            let y = denotation(&g, q.attr2);
            Some(match q.quant {
                Quantifier::All => x.is_subset(&y),
                Quantifier::NotAll => !x.is_subset(&y),
                Quantifier::No => x.is_disjoint(&y),
                Quantifier::Some => !x.is_disjoint(&y),
                Quantifier::Only => y.is_subset(&x),
                Quantifier::NotOnly => !y.is_subset(&x),
            })
        }
        Query::Comparison(q) => {
            let a = denotation(&g, q.attr1).len();
            let b = denotation(&g, q.attr2).len();
            Some(match q.rel {
                ComparisonRel::More => a > b,
                ComparisonRel::Fewer => a < b,
            })
        }
    }
}

pub fn random_scene(rng: &mut ChaCha8Rng, max_objects: usize) -> Scene {
    let n = rng.random_range(0..=max_objects);
    let mut cells: Vec<u8> = (0..36).collect();
    let (chosen, _) = rand::seq::SliceRandom::partial_shuffle(&mut cells[..], rng, n);
    chosen
        .iter()
        .map(|&i| {
            ObjectSpec::new(
                *Colour::ALL.choose(rng).unwrap(),
                *Shape::ALL.choose(rng).unwrap(),
                GridPos::new(i % 6, i / 6).unwrap(),
            )
        })
        .collect()
}

pub fn all_descriptions() -> Vec<Description> {
    Colour::ALL
        .iter()
        .flat_map(|&c| Shape::ALL.iter().map(move |&s| Description::new(c, s)))
        .collect()
}

pub fn all_attributes() -> Vec<Attribute> {
    Colour::ALL
        .iter()
        .map(|&c| Attribute::Colour(c))
        .chain(Shape::ALL.iter().map(|&s| Attribute::Shape(s)))
        .collect()
}

fn same_family(a: Attribute, b: Attribute) -> bool {
    matches!(
        (a, b),
        (Attribute::Colour(_), Attribute::Colour(_)) | (Attribute::Shape(_), Attribute::Shape(_))
    )
}

/// Every well-formed query the templates can express.
pub fn query_space() -> Vec<Query> {
    let mut out = Vec::new();
    let descs = all_descriptions();
    for &a in &descs {
        for &b in &descs {
            if a != b {
                for rel in SpatialRel::ALL {
                    out.push(Query::Spatial(SpatialQuery { obj1: a, rel, obj2: b }));
                }
            }
        }
    }
    for number in 0..=36 {
        for shape in Shape::ALL {
            out.push(Query::Cardinality(CardinalityQuery { number, shape }));
        }
    }
    let attrs = all_attributes();
    for &a in &attrs {
        for &b in &attrs {
            if !same_family(a, b) {
                for quant in Quantifier::ALL {
                    out.push(Query::Quantified(QuantifiedQuery {
                        quant,
                        attr1: a,
                        attr2: b,
                    }));
                }
            }
            if a != b {
                for rel in ComparisonRel::ALL {
                    out.push(Query::Comparison(ComparisonQuery {
                        rel,
                        attr1: a,
                        attr2: b,
                    }));
                }
            }
        }
    }
    out
}

/// A random query of the given kind (0 spatial, 1 cardinality, 2 quantified, 3 comparison).
/// Spatial referents are usually taken from the scene so most draws are resolvable.
pub fn random_query(rng: &mut ChaCha8Rng, kind: usize, scene: &Scene) -> Query {
    let attrs = all_attributes();
    match kind {
        0 => {
            let descs = all_descriptions();
            let pick = |rng: &mut ChaCha8Rng| -> Description {
                match scene.objects().choose(rng) {
                    Some(o) if rng.random_bool(0.9) => Description::new(o.colour, o.shape),
                    _ => *descs.choose(rng).unwrap(),
                }
            };
            let obj1 = pick(rng);
            let mut obj2 = pick(rng);
            while obj2 == obj1 {
                obj2 = *descs.choose(rng).unwrap();
            }
            Query::Spatial(SpatialQuery {
                obj1,
                rel: *SpatialRel::ALL.choose(rng).unwrap(),
                obj2,
            })
        }
        1 => Query::Cardinality(CardinalityQuery {
            number: rng.random_range(0..=8),
            shape: *Shape::ALL.choose(rng).unwrap(),
        }),
        2 => {
            let attr1 = *attrs.choose(rng).unwrap();
            let others: Vec<Attribute> = attrs.iter().copied().filter(|&b| !same_family(attr1, b)).collect();
            Query::Quantified(QuantifiedQuery {
                quant: *Quantifier::ALL.choose(rng).unwrap(),
                attr1,
                attr2: *others.choose(rng).unwrap(),
            })
        }
        _ => {
            let attr1 = *attrs.choose(rng).unwrap();
            let others: Vec<Attribute> = attrs.iter().copied().filter(|&b| b != attr1).collect();
            Query::Comparison(ComparisonQuery {
                rel: *ComparisonRel::ALL.choose(rng).unwrap(),
                attr1,
                attr2: *others.choose(rng).unwrap(),
            })
        }
    }
}

/// Scene with every object the query cannot depend on removed.
pub fn strip_irrelevant(scene: &Scene, q: &Query) -> Scene {
    let keep = |o: &&ObjectSpec| -> bool {
        let cell = (o.colour, o.shape);
        match *q {
            Query::Spatial(q) => cell == (q.obj1.colour, q.obj1.shape) || cell == (q.obj2.colour, q.obj2.shape),
            Query::Cardinality(q) => o.shape == q.shape,
            Query::Quantified(QuantifiedQuery { attr1, attr2, .. })
            | Query::Comparison(ComparisonQuery { attr1, attr2, .. }) => has(cell, attr1) || has(cell, attr2),
        }
    };
    scene.objects().iter().filter(keep).copied().collect()
}
