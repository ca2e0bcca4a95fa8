//! Caption and query surface text, and the parsers that invert them.
//!
//! Caption grammar:
//!
//! ```text
//! caption  = PREAMBLE [ " There is " object { ", " object } "." ]
//! object   = article " " colour " " shape " at " column " " row
//! article  = "a" | "an"            (* "an" before a vowel-initial colour *)
//! column   = "A" .. "F"
//! row      = "1" .. "6"
//! ```
//!
//! Query grammar:
//!
//! ```text
//! spatial     = "The " colour " " shape " is " relation " the " colour " " shape "."
//! relation    = "to the left of" | "to the right of" | "above" | "below"
//! cardinality = "There is 1 " shape " object." | "There are " number " " shape " objects."
//! quantified  = quant " the " attr " objects are " attr " objects."
//! quant       = "All" | "Not all" | "None of" | "Some of" | "Only" | "Not only"
//! comparison  = "There are " ( "more" | "fewer" ) " " attr " objects than " attr " objects."
//! ```

use std::fmt::Write as _;

use crate::scene::{Attribute, Colour, GridPos, ObjectSpec, Scene, Shape, GRID_CELLS};
use crate::semantics::{
    CardinalityQuery, ComparisonQuery, ComparisonRel, Description, InvalidQuery, QuantifiedQuery, Quantifier, Query,
    SpatialQuery, SpatialRel,
};

/// Coordinate-system description prepended to every caption.
pub const PREAMBLE: &str = "Columns, left to right, are ordered A to F. Rows, top to bottom, are ordered 1 to 6.";

/// Separator between caption and query in the text input.
pub const SEP: &str = " [SEP] ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("parse error at byte {offset}: expected one of {expected:?}, found {found:?}")]
    Parse {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("invalid query: {0}")]
    InvalidQuery(#[from] InvalidQuery),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("query text is empty")]
    EmptyQuery,
}

fn article(colour: Colour) -> &'static str {
    if colour.name().starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

pub fn render_caption(scene: &Scene) -> String {
    let mut out = String::with_capacity(PREAMBLE.len() + 32 * scene.len());
    out.push_str(PREAMBLE);
    let mut objects = scene.objects().to_vec();
    objects.sort_by_key(|o| o.pos);
    for (i, o) in objects.iter().enumerate() {
        out.push_str(if i == 0 { " There is " } else { ", " });
        let _ = write!(
            out,
            "{} {} {} at {} {}",
            article(o.colour),
            o.colour,
            o.shape,
            o.pos.col_label(),
            o.pos.row_label()
        );
    }
    if !objects.is_empty() {
        out.push('.');
    }
    out
}

/// Byte cursor over a text with the error reporting used by both parsers.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { text, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos == self.text.len()
    }

    fn error(&self, expected: &[&str]) -> TextError {
        let found: String = self.rest().chars().take(16).collect();
        TextError::Parse {
            offset: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: if found.is_empty() { "end of input".into() } else { found },
        }
    }

    fn eat(&mut self, literal: &str) -> bool {
        if self.rest().starts_with(literal) {
            self.pos += literal.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, literal: &str) -> Result<(), TextError> {
        if self.eat(literal) {
            Ok(())
        } else {
            Err(self.error(&[literal]))
        }
    }

    /// Consumes the longest matching keyword from `options`.
    fn one_of<T: Copy>(&mut self, options: &[(&str, T)]) -> Result<T, TextError> {
        let best = options
            .iter()
            .filter(|(word, _)| self.rest().starts_with(word))
            .max_by_key(|(word, _)| word.len());
        match best {
            Some((word, value)) => {
                self.pos += word.len();
                Ok(*value)
            }
            None => Err(self.error(&options.iter().map(|(w, _)| *w).collect::<Vec<_>>())),
        }
    }

    /// Consumes a whole word (delimited by space or punctuation) matching one of `options`.
    fn word_of<T: Copy>(&mut self, options: &[(&str, T)]) -> Result<T, TextError> {
        let end = self.rest().find([' ', ',', '.']).unwrap_or(self.rest().len());
        let word = &self.rest()[..end];
        match options.iter().find(|(w, _)| *w == word) {
            Some((_, value)) => {
                self.pos += end;
                Ok(*value)
            }
            None => Err(self.error(&options.iter().map(|(w, _)| *w).collect::<Vec<_>>())),
        }
    }

    fn number(&mut self) -> Result<u32, TextError> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        // no leading zeros, so that the rendering is unique
        if digits == 0 || (digits > 1 && self.rest().starts_with('0')) {
            return Err(self.error(&["number"]));
        }
        let value = self.rest()[..digits]
            .parse::<u32>()
            .map_err(|_| self.error(&["number"]))?;
        self.pos += digits;
        Ok(value)
    }

    fn finish(&self) -> Result<(), TextError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error(&["end of input"]))
        }
    }
}

fn colour_words() -> Vec<(&'static str, Colour)> {
    Colour::ALL.iter().map(|c| (c.name(), *c)).collect()
}

fn shape_words() -> Vec<(&'static str, Shape)> {
    Shape::ALL.iter().map(|s| (s.name(), *s)).collect()
}

fn attribute_words() -> Vec<(&'static str, Attribute)> {
    Attribute::all().map(|a| (a.name(), a)).collect()
}

const COLUMNS: [(&str, u8); 6] = [("A", 0), ("B", 1), ("C", 2), ("D", 3), ("E", 4), ("F", 5)];
const ROWS: [(&str, u8); 6] = [("1", 0), ("2", 1), ("3", 2), ("4", 3), ("5", 4), ("6", 5)];

fn parse_object(cur: &mut Cursor<'_>) -> Result<ObjectSpec, TextError> {
    let article_at = cur.pos;
    let art = cur.one_of(&[("a ", "a"), ("an ", "an")])?;
    let colour = cur.word_of(&colour_words())?;
    if art != article(colour) {
        return Err(TextError::Parse {
            offset: article_at,
            expected: vec![article(colour).to_string()],
            found: art.to_string(),
        });
    }
    cur.expect(" ")?;
    let shape = cur.word_of(&shape_words())?;
    cur.expect(" at ")?;
    let col = cur.word_of(&COLUMNS)?;
    cur.expect(" ")?;
    let row = cur.word_of(&ROWS)?;
    Ok(ObjectSpec::new(colour, shape, GridPos { col, row }))
}

/// Parses a caption produced by [`render_caption`] back into its scene.
pub fn parse_caption(text: &str) -> Result<Scene, TextError> {
    let mut cur = Cursor::new(text);
    cur.expect(PREAMBLE)?;
    let mut objects = Vec::new();
    if !cur.at_end() {
        cur.expect(" There is ")?;
        loop {
            objects.push(parse_object(&mut cur)?);
            if cur.eat(".") {
                break;
            }
            cur.expect(", ").map_err(|_| cur.error(&[", ", "."]))?;
        }
        cur.finish()?;
    }
    if objects.len() > GRID_CELLS {
        return Err(TextError::InvalidScene(format!("{} objects", objects.len())));
    }
    let scene = Scene::new(objects);
    if let Some(v) = crate::scene::validate_scene(&scene)
        .into_iter()
        .find(|v| !matches!(v, crate::scene::Violation::Empty))
    {
        return Err(TextError::InvalidScene(v.to_string()));
    }
    Ok(scene)
}

fn relation_phrase(rel: SpatialRel) -> &'static str {
    match rel {
        SpatialRel::LeftOf => "to the left of",
        SpatialRel::RightOf => "to the right of",
        SpatialRel::Above => "above",
        SpatialRel::Below => "below",
    }
}

fn quantifier_phrase(q: Quantifier) -> &'static str {
    match q {
        Quantifier::All => "All",
        Quantifier::NotAll => "Not all",
        Quantifier::No => "None of",
        Quantifier::Some => "Some of",
        Quantifier::Only => "Only",
        Quantifier::NotOnly => "Not only",
    }
}

fn comparison_word(rel: ComparisonRel) -> &'static str {
    match rel {
        ComparisonRel::More => "more",
        ComparisonRel::Fewer => "fewer",
    }
}

pub fn render_query(q: &Query) -> String {
    match q {
        Query::Spatial(q) => format!("The {} is {} the {}.", q.obj1, relation_phrase(q.rel), q.obj2),
        Query::Cardinality(q) if q.number == 1 => format!("There is 1 {} object.", q.shape),
        Query::Cardinality(q) => format!("There are {} {} objects.", q.number, q.shape),
        Query::Quantified(q) => format!(
            "{} the {} objects are {} objects.",
            quantifier_phrase(q.quant),
            q.attr1,
            q.attr2
        ),
        Query::Comparison(q) => format!(
            "There are {} {} objects than {} objects.",
            comparison_word(q.rel),
            q.attr1,
            q.attr2
        ),
    }
}

fn parse_description(cur: &mut Cursor<'_>) -> Result<Description, TextError> {
    let colour = cur.word_of(&colour_words())?;
    cur.expect(" ")?;
    let shape = cur.word_of(&shape_words())?;
    Ok(Description::new(colour, shape))
}

fn parse_there(cur: &mut Cursor<'_>) -> Result<Query, TextError> {
    if cur.eat("There is ") {
        let at = cur.pos;
        let number = cur.number()?;
        if number != 1 {
            return Err(TextError::Parse {
                offset: at,
                expected: vec!["1".into()],
                found: number.to_string(),
            });
        }
        cur.expect(" ")?;
        let shape = cur.word_of(&shape_words())?;
        cur.expect(" object.")?;
        return Ok(CardinalityQuery { number, shape }.into());
    }
    cur.expect("There are ")?;
    if cur.rest().starts_with(|c: char| c.is_ascii_digit()) {
        let at = cur.pos;
        let number = cur.number()?;
        if number == 1 {
            return Err(TextError::Parse {
                offset: at,
                expected: vec!["number other than 1".into()],
                found: "1".into(),
            });
        }
        cur.expect(" ")?;
        let shape = cur.word_of(&shape_words())?;
        cur.expect(" objects.")?;
        return Ok(CardinalityQuery { number, shape }.into());
    }
    let rel = cur
        .word_of(&[("more", ComparisonRel::More), ("fewer", ComparisonRel::Fewer)])
        .map_err(|_| cur.error(&["number", "more", "fewer"]))?;
    cur.expect(" ")?;
    let attr1 = cur.word_of(&attribute_words())?;
    cur.expect(" objects than ")?;
    let attr2 = cur.word_of(&attribute_words())?;
    cur.expect(" objects.")?;
    Ok(ComparisonQuery { rel, attr1, attr2 }.into())
}

/// Parses a query produced by [`render_query`] and checks its invariants.
pub fn parse_query(text: &str) -> Result<Query, TextError> {
    let mut cur = Cursor::new(text);
    let query = if cur.rest().starts_with("There ") {
        parse_there(&mut cur)?
    } else if cur.eat("The ") {
        let obj1 = parse_description(&mut cur)?;
        cur.expect(" is ")?;
        let rel = cur.one_of(&SpatialRel::ALL.map(|r| (relation_phrase(r), r)))?;
        cur.expect(" the ")?;
        let obj2 = parse_description(&mut cur)?;
        cur.expect(".")?;
        SpatialQuery { obj1, rel, obj2 }.into()
    } else {
        let quant = cur
            .one_of(&Quantifier::ALL.map(|q| (quantifier_phrase(q), q)))
            .map_err(|_| {
                let mut expected = vec!["The", "There"];
                expected.extend(Quantifier::ALL.map(quantifier_phrase));
                cur.error(&expected)
            })?;
        cur.expect(" the ")?;
        let attr1 = cur.word_of(&attribute_words())?;
        cur.expect(" objects are ")?;
        let attr2 = cur.word_of(&attribute_words())?;
        cur.expect(" objects.")?;
        QuantifiedQuery { quant, attr1, attr2 }.into()
    };
    cur.finish()?;
    query.validate()?;
    Ok(query)
}

/// Text-side model input: `caption [SEP] query`, or the query alone when no caption is shown.
pub fn concat_text_input(caption: Option<&str>, query: &str) -> Result<String, TextError> {
    if query.trim().is_empty() {
        return Err(TextError::EmptyQuery);
    }
    Ok(match caption {
        Some(c) if !c.is_empty() => format!("{c}{SEP}{query}"),
        _ => query.to_string(),
    })
}
