//! Detailed tile states, adjacency rules learned from example designs, and
//! the detailed-tile to functional-category map used for tokenisation.
//!
//! Orientation follows the usual tiled-model convention: a state is its
//! prototype mirrored across the vertical axis (when `reflected`) and then
//! rotated clockwise by `orientation` degrees. Symmetry classes collapse the
//! eight dihedral images of a prototype to its distinct states.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::content_hash;
use crate::layout::{parse_row, Layout};
use crate::tileset::{words_for, TileSet};

pub const CATALOG_FORMAT: &str = "# qdtile-catalog v1";
pub const EXAMPLE_FORMAT: &str = "# qdtile-example v1";

const SHIPPED_CATALOG: &str = include_str!("../data/catalog.txt");
const SHIPPED_EXAMPLES: &[&str] = &[
    include_str!("../data/examples/twin-bars.txt"),
    include_str!("../data/examples/l-court.txt"),
    include_str!("../data/examples/garden-block.txt"),
    include_str!("../data/examples/row-houses.txt"),
    include_str!("../data/examples/tower-park.txt"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionalCategory {
    Livable,
    Corridor,
    Core,
    Tree,
    Lawn,
    Street,
    Empty,
}

impl FunctionalCategory {
    pub const ALL: [FunctionalCategory; 7] = [
        FunctionalCategory::Livable,
        FunctionalCategory::Corridor,
        FunctionalCategory::Core,
        FunctionalCategory::Tree,
        FunctionalCategory::Lawn,
        FunctionalCategory::Street,
        FunctionalCategory::Empty,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Token character, `A`..`G` in declaration order.
    pub fn token_char(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_token_char(c: char) -> Option<Self> {
        if c.is_ascii_uppercase() {
            Self::from_index((c as u8 - b'A') as usize)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionalCategory::Livable => "Livable",
            FunctionalCategory::Corridor => "Corridor",
            FunctionalCategory::Core => "Core",
            FunctionalCategory::Tree => "Tree",
            FunctionalCategory::Lawn => "Lawn",
            FunctionalCategory::Street => "Street",
            FunctionalCategory::Empty => "Empty",
        }
    }

    /// Display colour used by layout exports and the studio legend.
    pub fn color_hint(self) -> [u8; 3] {
        match self {
            FunctionalCategory::Livable => [230, 126, 34],
            FunctionalCategory::Corridor => [241, 196, 15],
            FunctionalCategory::Core => [192, 57, 43],
            FunctionalCategory::Tree => [30, 110, 50],
            FunctionalCategory::Lawn => [130, 200, 90],
            FunctionalCategory::Street => [110, 110, 120],
            FunctionalCategory::Empty => [245, 245, 240],
        }
    }

    pub fn is_landscape(self) -> bool {
        matches!(self, FunctionalCategory::Tree | FunctionalCategory::Lawn)
    }
}

impl fmt::Display for FunctionalCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionalCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TileId(u16);

impl TileId {
    pub fn new(i: usize) -> Self {
        TileId(u16::try_from(i).expect("tile id exceeds u16"))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Self {
        Self::ALL[(self.index() + 2) % 4]
    }

    pub fn rotate_cw(self, quarter_turns: usize) -> Self {
        Self::ALL[(self.index() + quarter_turns) % 4]
    }

    /// Mirror across the vertical axis (east and west swap).
    pub fn mirror(self) -> Self {
        match self {
            Direction::East => Direction::West,
            Direction::West => Direction::East,
            d => d,
        }
    }
}

/// Symmetry class of a tile prototype (letters as in the simple tiled model).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symmetry {
    /// Fully symmetric: one state.
    X,
    /// Two states (straights).
    I,
    /// Mirror-symmetric about the vertical axis: four rotations.
    T,
    /// Mirror-symmetric about a diagonal: four rotations.
    L,
    /// No symmetry: eight states.
    F,
}

impl Symmetry {
    /// Canonical `(orientation, reflected)` representative of a dihedral image.
    pub fn canonical(self, orientation: u16, reflected: bool) -> (u16, bool) {
        let o = orientation % 360;
        match self {
            Symmetry::X => (0, false),
            Symmetry::I => (o % 180, false),
            Symmetry::T => (o, false),
            Symmetry::L if reflected => ((o + 270) % 360, false),
            Symmetry::L => (o, false),
            Symmetry::F => (o, reflected),
        }
    }
}

impl FromStr for Symmetry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "X" => Symmetry::X,
            "I" => Symmetry::I,
            "T" => Symmetry::T,
            "L" => Symmetry::L,
            "F" => Symmetry::F,
            _ => return Err(Error::Config(format!("unknown symmetry {s:?}"))),
        })
    }
}

/// Livable variant whose local east edge is a unit-dividing wall.
pub const DIVIDER_VARIANT: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileState {
    pub id: TileId,
    pub category: FunctionalCategory,
    pub orientation: u16,
    pub reflected: bool,
    pub variant: u8,
    pub symmetry: Symmetry,
    pub name: String,
}

impl TileState {
    /// World direction of the prototype's `local` edge.
    pub fn world_dir(&self, local: Direction) -> Direction {
        let d = if self.reflected { local.mirror() } else { local };
        d.rotate_cw(self.orientation as usize / 90)
    }

    /// The world edge carrying a unit divider, if any.
    pub fn divider_edge(&self) -> Option<Direction> {
        (self.category == FunctionalCategory::Livable && self.variant == DIVIDER_VARIANT)
            .then(|| self.world_dir(Direction::East))
    }

    fn key(&self) -> (FunctionalCategory, u16, bool, u8) {
        (self.category, self.orientation, self.reflected, self.variant)
    }
}

/// The closed set of detailed tile states.
#[derive(Clone, Debug)]
pub struct TileCatalog {
    tiles: Vec<TileState>,
    by_key: HashMap<(FunctionalCategory, u16, bool, u8), TileId>,
    by_category: [Vec<TileId>; 7],
}

impl TileCatalog {
    pub fn new(tiles: Vec<TileState>) -> Result<Self> {
        if tiles.is_empty() {
            return Err(Error::Config("catalog has no tiles".into()));
        }
        let mut by_key = HashMap::new();
        let mut by_category: [Vec<TileId>; 7] = Default::default();
        for (i, t) in tiles.iter().enumerate() {
            if t.id.index() != i {
                return Err(Error::Config(format!("tile ids must be dense, found {} at {i}", t.id)));
            }
            if t.orientation % 90 != 0 || t.orientation >= 360 {
                return Err(Error::Config(format!("tile {i}: orientation {}", t.orientation)));
            }
            if t.symmetry.canonical(t.orientation, t.reflected) != (t.orientation, t.reflected) {
                return Err(Error::Config(format!("tile {i} is not in canonical form for its symmetry")));
            }
            if by_key.insert(t.key(), t.id).is_some() {
                return Err(Error::Config(format!("tile {i} duplicates an existing state")));
            }
            by_category[t.category.index()].push(t.id);
        }
        Ok(TileCatalog {
            tiles,
            by_key,
            by_category,
        })
    }

    /// The shipped 41-state catalog.
    pub fn representative() -> Self {
        Self::parse(SHIPPED_CATALOG).expect("shipped catalog parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == CATALOG_FORMAT => {}
            _ => return Err(Error::parse(1, format!("expected format tag {CATALOG_FORMAT:?}"))),
        }
        let mut tiles = Vec::new();
        for (ln, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 6 {
                return Err(Error::parse(ln + 1, "expected id category orientation reflected variant symmetry [name]"));
            }
            let bad = |what: &str| Error::parse(ln + 1, format!("bad {what}"));
            tiles.push(TileState {
                id: TileId::new(f[0].parse().map_err(|_| bad("id"))?),
                category: f[1].parse().map_err(|_| bad("category"))?,
                orientation: f[2].parse().map_err(|_| bad("orientation"))?,
                reflected: match f[3] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("reflected flag")),
                },
                variant: f[4].parse().map_err(|_| bad("variant"))?,
                symmetry: f[5].parse().map_err(|_| bad("symmetry"))?,
                name: f.get(6).unwrap_or(&"").to_string(),
            });
        }
        Self::new(tiles)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CATALOG_FORMAT}\n# id category orientation reflected variant symmetry name\n");
        for t in &self.tiles {
            s.push_str(&format!(
                "{} {} {} {} {} {:?} {}\n",
                t.id,
                t.category,
                t.orientation,
                t.reflected as u8,
                t.variant,
                t.symmetry,
                t.name
            ));
        }
        s
    }

    pub fn hash(&self) -> String {
        content_hash(self.to_text().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[TileState] {
        &self.tiles
    }

    pub fn ids(&self) -> impl Iterator<Item = TileId> + '_ {
        self.tiles.iter().map(|t| t.id)
    }

    pub fn get(&self, id: TileId) -> Result<&TileState> {
        self.tiles.get(id.index()).ok_or(Error::UnknownTile(id.index()))
    }

    #[inline]
    pub fn state(&self, id: TileId) -> &TileState {
        &self.tiles[id.index()]
    }

    pub fn category_of(&self, id: TileId) -> Result<FunctionalCategory> {
        self.get(id).map(|t| t.category)
    }

    pub fn allowed_tiles_for_category(&self, cat: FunctionalCategory) -> &[TileId] {
        &self.by_category[cat.index()]
    }

    pub fn category_set(&self, cat: FunctionalCategory) -> TileSet {
        TileSet::from_ids(self.len(), self.allowed_tiles_for_category(cat).iter().copied())
    }

    pub fn lookup(&self, cat: FunctionalCategory, orientation: u16, reflected: bool, variant: u8) -> Option<TileId> {
        self.by_key.get(&(cat, orientation, reflected, variant)).copied()
    }

    /// The state a tile becomes when the whole grid is rotated 90° clockwise.
    pub fn rotated(&self, id: TileId) -> Option<TileId> {
        let t = self.tiles.get(id.index())?;
        let (o, r) = t.symmetry.canonical(t.orientation + 90, t.reflected);
        self.lookup(t.category, o, r, t.variant)
    }

    /// The state a tile becomes when the whole grid is mirrored east-west.
    pub fn mirrored(&self, id: TileId) -> Option<TileId> {
        let t = self.tiles.get(id.index())?;
        let (o, r) = t.symmetry.canonical((360 - t.orientation) % 360, !t.reflected);
        self.lookup(t.category, o, r, t.variant)
    }

    /// Shipped base designs, parsed against this catalog.
    pub fn shipped_examples(&self) -> Vec<ExampleDesign> {
        SHIPPED_EXAMPLES
            .iter()
            .map(|s| ExampleDesign::parse(s, self).expect("shipped example parses"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExampleDesign {
    pub name: String,
    pub layout: Layout,
}

impl ExampleDesign {
    pub fn parse(text: &str, catalog: &TileCatalog) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let name = match lines.next() {
            Some((_, l)) if l.starts_with(EXAMPLE_FORMAT) => l[EXAMPLE_FORMAT.len()..].trim().to_string(),
            _ => return Err(Error::parse(1, format!("expected format tag {EXAMPLE_FORMAT:?}"))),
        };
        let mut rows = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let row = parse_row(line, ln + 1)?;
            for t in &row {
                catalog.get(*t)?;
            }
            if let Some(first) = rows.first() {
                let first: &Vec<TileId> = first;
                if first.len() != row.len() {
                    return Err(Error::parse(ln + 1, "example grid is not rectangular"));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse(1, "example has no rows"));
        }
        let (h, w) = (rows.len(), rows[0].len());
        Ok(ExampleDesign {
            name,
            layout: Layout::new(h, w, rows.concat())?,
        })
    }

    pub fn to_text(&self) -> String {
        let body = self.layout.to_text();
        let rows = body.split_once('\n').map(|(_, r)| r).unwrap_or("");
        format!("{EXAMPLE_FORMAT} {}\n{rows}", self.name)
    }

    pub fn rotated(&self, catalog: &TileCatalog) -> Result<Self> {
        let (h, w) = (self.layout.height, self.layout.width);
        let mut tiles = Vec::with_capacity(h * w);
        // new grid is w x h; new[r][c] = old[h-1-c][r]
        for r in 0..w {
            for c in 0..h {
                let t = self.layout.get(h - 1 - c, r);
                tiles.push(catalog.rotated(t).ok_or_else(|| missing_image(t, "rotation"))?);
            }
        }
        Ok(ExampleDesign {
            name: format!("{}/r", self.name),
            layout: Layout::new(w, h, tiles)?,
        })
    }

    pub fn mirrored(&self, catalog: &TileCatalog) -> Result<Self> {
        let (h, w) = (self.layout.height, self.layout.width);
        let mut tiles = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let t = self.layout.get(r, w - 1 - c);
                tiles.push(catalog.mirrored(t).ok_or_else(|| missing_image(t, "reflection"))?);
            }
        }
        Ok(ExampleDesign {
            name: format!("{}/m", self.name),
            layout: Layout::new(h, w, tiles)?,
        })
    }
}

fn missing_image(t: TileId, what: &str) -> Error {
    Error::Config(format!("catalog is not closed under {what}: no image for tile {t}"))
}

/// Expands each example into its eight dihedral images.
pub fn augment_symmetries(examples: &[ExampleDesign], catalog: &TileCatalog) -> Result<Vec<ExampleDesign>> {
    let mut out = Vec::with_capacity(examples.len() * 8);
    for ex in examples {
        let mut cur = ex.clone();
        for _ in 0..4 {
            let m = cur.mirrored(catalog)?;
            let next = cur.rotated(catalog)?;
            out.push(cur);
            out.push(m);
            cur = next;
        }
    }
    Ok(out)
}

/// A single adjacency violation found by [`AdjacencyRules::violations`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub cell: usize,
    pub dir: Direction,
    pub tile: TileId,
    pub neighbor: TileId,
}

/// Which tiles may sit next to which, per direction, plus default
/// frequency weights.
#[derive(Clone, Debug)]
pub struct AdjacencyRules {
    n_tiles: usize,
    words: usize,
    // [tile][dir][word]
    allowed: Vec<u64>,
    weights: Vec<f64>,
}

impl AdjacencyRules {
    /// An empty rule set over `n_tiles` states.
    pub fn empty(n_tiles: usize) -> Self {
        let words = words_for(n_tiles);
        AdjacencyRules {
            n_tiles,
            words,
            allowed: vec![0; n_tiles * 4 * words],
            weights: vec![0.0; n_tiles],
        }
    }

    /// Learns the ordered neighbour pairs observed in `examples` and counts
    /// tile occurrences for the default weights.
    pub fn extract(examples: &[ExampleDesign], n_tiles: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config("adjacency extraction needs at least one example".into()));
        }
        let mut rules = Self::empty(n_tiles);
        for ex in examples {
            let l = &ex.layout;
            for cell in 0..l.len() {
                let t = l.tiles[cell];
                if t.index() >= n_tiles {
                    return Err(Error::UnknownTile(t.index()));
                }
                rules.weights[t.index()] += 1.0;
                for dir in [Direction::East, Direction::South] {
                    if let Some(nb) = l.neighbor(cell, dir) {
                        rules.allow(t, dir, l.tiles[nb]);
                    }
                }
            }
        }
        Ok(rules)
    }

    /// Rules from the shipped examples and all their rotations/reflections.
    pub fn representative(catalog: &TileCatalog) -> Result<Self> {
        let examples = augment_symmetries(&catalog.shipped_examples(), catalog)?;
        Self::extract(&examples, catalog.len())
    }

    /// Records `b` as allowed in direction `dir` of `a` (and the mirror pair).
    pub fn allow(&mut self, a: TileId, dir: Direction, b: TileId) {
        let w = self.words;
        let (ai, bi) = (a.index(), b.index());
        self.allowed[(ai * 4 + dir.index()) * w + bi / 64] |= 1 << (bi % 64);
        self.allowed[(bi * 4 + dir.opposite().index()) * w + ai / 64] |= 1 << (ai % 64);
    }

    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    pub(crate) fn words(&self) -> usize {
        self.words
    }

    #[inline]
    pub(crate) fn allowed_words(&self, t: usize, dir: Direction) -> &[u64] {
        let start = (t * 4 + dir.index()) * self.words;
        &self.allowed[start..start + self.words]
    }

    pub fn allowed(&self, t: TileId, dir: Direction) -> TileSet {
        TileSet::from_words(self.n_tiles, self.allowed_words(t.index(), dir))
    }

    #[inline]
    pub fn is_allowed(&self, a: TileId, dir: Direction, b: TileId) -> bool {
        let bi = b.index();
        self.allowed_words(a.index(), dir)[bi / 64] & (1 << (bi % 64)) != 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, t: TileId) -> f64 {
        self.weights[t.index()]
    }

    /// `b ∈ allowed(a, d) ⇔ a ∈ allowed(b, opposite(d))` for every entry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n_tiles).all(|a| {
            Direction::ALL.iter().all(|&d| {
                crate::tileset::iter_words(self.allowed_words(a, d))
                    .all(|b| self.is_allowed(b, d.opposite(), TileId::new(a)))
            })
        })
    }

    /// Every adjacent pair in `layout` that the rules do not allow.
    pub fn violations(&self, layout: &Layout) -> Vec<Violation> {
        let mut out = Vec::new();
        for cell in 0..layout.len() {
            for dir in [Direction::East, Direction::South] {
                if let Some(nb) = layout.neighbor(cell, dir) {
                    let (a, b) = (layout.tiles[cell], layout.tiles[nb]);
                    if a.index() >= self.n_tiles || b.index() >= self.n_tiles || !self.is_allowed(a, dir, b) {
                        out.push(Violation {
                            cell,
                            dir,
                            tile: a,
                            neighbor: b,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.allowed.len() * 8 + self.weights.len() * 8);
        for w in &self.allowed {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        content_hash(&bytes)
    }
}
