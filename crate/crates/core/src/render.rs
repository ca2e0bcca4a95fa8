//! Aliased rasterization of scenes to 8-bit RGB PNG.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scene::{Colour, GridPos, Scene, Shape, GRID_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const WHITE: Rgb = Rgb([255, 255, 255]);
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "#{r:02X}{g:02X}{b:02X}")
    }
}

impl FromStr for Rgb {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex = s
            .strip_prefix('#')
            .filter(|h| h.len() == 6 && h.is_ascii())
            .ok_or_else(|| RenderError::InvalidConfig(format!("bad colour {s:?}")))?;
        let byte = |i: usize| {
            u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| RenderError::InvalidConfig(format!("bad colour {s:?}")))
        };
        Ok(Rgb([byte(0)?, byte(2)?, byte(4)?]))
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub cell_px: u32,
    pub margin_px: u32,
    pub background: Rgb,
    pub colour_map: BTreeMap<Colour, Rgb>,
    /// Shape extent as a fraction of the cell side.
    pub shape_inset: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let colour_map = [
            (Colour::Red, Rgb([0xE5, 0x39, 0x35])),
            (Colour::Blue, Rgb([0x1E, 0x88, 0xE5])),
            (Colour::Green, Rgb([0x43, 0xA0, 0x47])),
            (Colour::Yellow, Rgb([0xFD, 0xD8, 0x35])),
            (Colour::Orange, Rgb([0xFB, 0x8C, 0x00])),
        ]
        .into_iter()
        .collect();
        RenderConfig {
            cell_px: 64,
            margin_px: 8,
            background: Rgb::WHITE,
            colour_map,
            shape_inset: 0.8,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.cell_px < 16 {
            return Err(RenderError::InvalidConfig(format!(
                "cell_px must be at least 16, got {}",
                self.cell_px
            )));
        }
        if let Some(c) = Colour::ALL.iter().find(|c| !self.colour_map.contains_key(c)) {
            return Err(RenderError::InvalidConfig(format!("colour_map lacks {c}")));
        }
        if self.colour_map.values().any(|rgb| *rgb == self.background) {
            return Err(RenderError::InvalidConfig(
                "a shape colour equals the background".into(),
            ));
        }
        if !(self.shape_inset > 0.0 && self.shape_inset <= 1.0) {
            return Err(RenderError::InvalidConfig(format!(
                "shape_inset must be in (0, 1], got {}",
                self.shape_inset
            )));
        }
        Ok(())
    }

    /// Side length of the square canvas in pixels.
    pub fn canvas_px(&self) -> u32 {
        GRID_SIZE as u32 * self.cell_px + 2 * self.margin_px
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive ends) of a grid cell.
    pub fn cell_rect(&self, pos: GridPos) -> (u32, u32, u32, u32) {
        let x0 = self.margin_px + pos.col as u32 * self.cell_px;
        let y0 = self.margin_px + pos.row as u32 * self.cell_px;
        (x0, y0, x0 + self.cell_px, y0 + self.cell_px)
    }

    pub fn colour(&self, colour: Colour) -> Rgb {
        self.colour_map[&colour]
    }
}

/// An uncompressed RGB8 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, colour: Rgb) -> Self {
        let pixels = colour.0.repeat((width * height) as usize);
        Raster { width, height, pixels }
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = ((y * self.width + x) * 3) as usize;
        Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    fn put(&mut self, x: u32, y: u32, colour: Rgb) {
        let i = ((y * self.width + x) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&colour.0);
    }
}

/// Shape outline in cell-local units: centre at the origin, `y` pointing down, unit radius.
fn outline(shape: Shape) -> Option<Vec<(f64, f64)>> {
    let regular = |n: usize| {
        (0..n)
            .map(|i| {
                let angle = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / n as f64;
                (angle.cos(), angle.sin())
            })
            .collect()
    };
    match shape {
        Shape::Circle => None,
        Shape::Square => Some(vec![(-0.8, -0.8), (0.8, -0.8), (0.8, 0.8), (-0.8, 0.8)]),
        Shape::Triangle => Some(regular(3)),
        Shape::Pentagon => Some(regular(5)),
        Shape::Hexagon => Some(regular(6)),
        Shape::Octagon => Some(regular(8)),
        Shape::Star => Some(
            (0..10)
                .map(|i| {
                    let radius = if i % 2 == 0 { 1.0 } else { 0.5 };
                    let angle = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / 5.0;
                    (radius * angle.cos(), radius * angle.sin())
                })
                .collect(),
        ),
    }
}

/// Even-odd point-in-polygon test.
fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Cell-local mask of a shape: `mask[y * cell + x]` is true where the shape covers the pixel.
pub fn shape_mask(shape: Shape, cfg: &RenderConfig) -> Vec<bool> {
    let cell = cfg.cell_px as usize;
    let half = cfg.cell_px as f64 / 2.0;
    let radius = cfg.shape_inset * half;
    let poly = outline(shape);
    let mut mask = vec![false; cell * cell];
    for py in 0..cell {
        for px in 0..cell {
            let x = (px as f64 + 0.5 - half) / radius;
            let y = (py as f64 + 0.5 - half) / radius;
            mask[py * cell + px] = match &poly {
                None => x * x + y * y <= 1.0,
                Some(poly) => inside(poly, x, y),
            };
        }
    }
    mask
}

/// A render configuration with its shape masks precomputed.
#[derive(Debug, Clone)]
pub struct Renderer {
    cfg: RenderConfig,
    masks: Vec<Vec<bool>>,
}

impl Renderer {
    pub fn new(cfg: &RenderConfig) -> Result<Self, RenderError> {
        cfg.validate()?;
        Ok(Renderer {
            cfg: cfg.clone(),
            masks: Shape::ALL.into_iter().map(|s| shape_mask(s, cfg)).collect(),
        })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn rasterize(&self, scene: &Scene) -> Raster {
        let cfg = &self.cfg;
        let side = cfg.canvas_px();
        let mut raster = Raster::filled(side, side, cfg.background);
        let cell = cfg.cell_px;
        for o in scene.objects().iter().filter(|o| o.pos.in_range()) {
            let mask = &self.masks[o.shape.index()];
            let colour = cfg.colour(o.colour);
            let (x0, y0, _, _) = cfg.cell_rect(o.pos);
            for py in 0..cell {
                for px in 0..cell {
                    if mask[(py * cell + px) as usize] {
                        raster.put(x0 + px, y0 + py, colour);
                    }
                }
            }
        }
        raster
    }

    pub fn render(&self, scene: &Scene) -> Result<Vec<u8>, RenderError> {
        encode_png(&self.rasterize(scene))
    }
}

pub fn rasterize(scene: &Scene, cfg: &RenderConfig) -> Raster {
    let masks = Shape::ALL
        .into_iter()
        .map(|s| {
            if scene.objects().iter().any(|o| o.shape == s) {
                shape_mask(s, cfg)
            } else {
                Vec::new()
            }
        })
        .collect();
    Renderer {
        cfg: cfg.clone(),
        masks,
    }
    .rasterize(scene)
}

pub fn encode_png(raster: &Raster) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, raster.width, raster.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&raster.pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Raster, RenderError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Unsupported(format!(
            "{:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(Raster {
        width: info.width,
        height: info.height,
        pixels: buf,
    })
}

pub fn render_scene(scene: &Scene, cfg: &RenderConfig) -> Result<Vec<u8>, RenderError> {
    encode_png(&rasterize(scene, cfg))
}

/// The all-background image shown in the caption-only setting.
pub fn blank_image(cfg: &RenderConfig) -> Result<Vec<u8>, RenderError> {
    let side = cfg.canvas_px();
    encode_png(&Raster::filled(side, side, cfg.background))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ObjectSpec;
    use std::collections::HashMap;

    /// Independent pixel scan: per cell, the set of non-background colours and their counts,
    /// plus any non-background pixel outside all cells.
    fn scan(raster: &Raster, cfg: &RenderConfig) -> (HashMap<GridPos, HashMap<Rgb, usize>>, usize) {
        let mut cells: HashMap<GridPos, HashMap<Rgb, usize>> = HashMap::new();
        let mut stray = 0;
        for y in 0..raster.height {
            for x in 0..raster.width {
                let c = raster.get(x, y);
                if c == cfg.background {
                    continue;
                }
                let (m, cp) = (cfg.margin_px, cfg.cell_px);
                if x < m || y < m || x >= m + 6 * cp || y >= m + 6 * cp {
                    stray += 1;
                    continue;
                }
                let pos = GridPos::new(((x - m) / cp) as u8, ((y - m) / cp) as u8).unwrap();
                *cells.entry(pos).or_default().entry(c).or_default() += 1;
            }
        }
        (cells, stray)
    }

    #[test]
    fn empty_scene_is_background() {
        let cfg = RenderConfig::default();
        let raster = rasterize(&Scene::default(), &cfg);
        assert!(raster.pixels.iter().all(|&b| b == 255));
        let png = render_scene(&Scene::default(), &cfg).unwrap();
        assert_eq!(png, blank_image(&cfg).unwrap());
    }

    #[test]
    fn single_object_stays_in_its_cell() {
        let cfg = RenderConfig::default();
        let scene = Scene::new(vec![ObjectSpec::new(
            Colour::Red,
            Shape::Circle,
            GridPos::new(0, 0).unwrap(),
        )]);
        let raster = decode_png(&render_scene(&scene, &cfg).unwrap()).unwrap();
        let (cells, stray) = scan(&raster, &cfg);
        assert_eq!(stray, 0);
        assert_eq!(cells.len(), 1);
        let colours = &cells[&GridPos::new(0, 0).unwrap()];
        assert_eq!(colours.len(), 1);
        assert!(colours.contains_key(&Rgb([0xE5, 0x39, 0x35])));
        let (x0, y0, x1, y1) = cfg.cell_rect(GridPos::new(0, 0).unwrap());
        assert_eq!(raster.get((x0 + x1) / 2, (y0 + y1) / 2), cfg.colour(Colour::Red));
    }

    #[test]
    fn full_grid_covers_every_cell() {
        let cfg = RenderConfig::default();
        let scene: Scene = GridPos::all()
            .enumerate()
            .map(|(i, p)| ObjectSpec::new(Colour::ALL[i % 5], Shape::ALL[i % 7], p))
            .collect();
        let (cells, stray) = scan(&rasterize(&scene, &cfg), &cfg);
        assert_eq!(stray, 0);
        assert_eq!(cells.len(), 36);
        for o in scene.objects() {
            let colours = &cells[&o.pos];
            assert_eq!(colours.len(), 1);
            assert!(colours.contains_key(&cfg.colour(o.colour)));
        }
        let renderer = Renderer::new(&cfg).unwrap();
        assert_eq!(renderer.render(&scene).unwrap(), render_scene(&scene, &cfg).unwrap());
        let sparse = Scene::new(scene.objects()[..3].to_vec());
        assert_eq!(renderer.rasterize(&sparse), rasterize(&sparse, &cfg));
    }

    #[test]
    fn shape_masks_are_pairwise_distinct() {
        let cfg = RenderConfig::default();
        let masks: Vec<_> = Shape::ALL.iter().map(|s| shape_mask(*s, &cfg)).collect();
        for i in 0..masks.len() {
            assert!(masks[i].iter().any(|b| *b), "{:?} is empty", Shape::ALL[i]);
            for j in i + 1..masks.len() {
                assert_ne!(masks[i], masks[j], "{:?} == {:?}", Shape::ALL[i], Shape::ALL[j]);
            }
        }
    }

    #[test]
    fn blank_image_properties() {
        let cfg = RenderConfig::default();
        let a = blank_image(&cfg).unwrap();
        assert_eq!(a, blank_image(&cfg).unwrap());
        let raster = decode_png(&a).unwrap();
        assert_eq!(raster.width, cfg.canvas_px());
        assert_eq!(raster.width, 400);
        assert!(raster.pixels.iter().all(|&b| b == 255));
    }

    #[test]
    fn config_validation() {
        assert!(RenderConfig::default().validate().is_ok());
        let small = RenderConfig {
            cell_px: 8,
            ..Default::default()
        };
        assert!(small.validate().is_err());
        let mut missing = RenderConfig::default();
        missing.colour_map.remove(&Colour::Green);
        assert!(missing.validate().is_err());
        let json = serde_json::to_string(&RenderConfig::default()).unwrap();
        assert!(json.contains(r##""red":"#E53935""##));
        let back: RenderConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, RenderConfig::default());
    }
}
