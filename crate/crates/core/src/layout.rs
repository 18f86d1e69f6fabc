//! Rectangular grids of detailed tiles and of functional categories.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{Direction, FunctionalCategory, TileCatalog, TileId};
use crate::error::{Error, Result};

/// A detailed layout: `height` rows of `width` tile ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub tiles: Vec<TileId>,
}

impl Layout {
    pub fn new(height: usize, width: usize, tiles: Vec<TileId>) -> Result<Self> {
        if tiles.len() != height * width {
            return Err(Error::Shape {
                expected: format!("{height}x{width}"),
                got: format!("{} tiles", tiles.len()),
            });
        }
        Ok(Layout {
            height,
            width,
            tiles,
        })
    }

    pub fn filled(height: usize, width: usize, tile: TileId) -> Self {
        Layout {
            height,
            width,
            tiles: vec![tile; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> TileId {
        self.tiles[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, tile: TileId) {
        self.tiles[row * self.width + col] = tile;
    }

    /// Index of the neighbour of `cell` in `dir`, if in bounds.
    #[inline]
    pub fn neighbor(&self, cell: usize, dir: Direction) -> Option<usize> {
        neighbor(self.height, self.width, cell, dir)
    }

    pub fn categories(&self, catalog: &TileCatalog) -> Result<CategoryGrid> {
        let cells = self
            .tiles
            .iter()
            .map(|&t| catalog.category_of(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(CategoryGrid {
            height: self.height,
            width: self.width,
            cells,
        })
    }

    /// `h w` header followed by `h` lines of `w` tile ids.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.height, self.width).unwrap();
        for row in self.tiles.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|t| t.index().to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(hl + 1, e.to_string()))?;
        let [height, width] = dims[..] else {
            return Err(Error::parse(hl + 1, "header must be `h w`"));
        };
        let mut tiles = Vec::with_capacity(height * width);
        for (ln, line) in lines.by_ref().take(height) {
            let row = parse_row(line, ln + 1)?;
            if row.len() != width {
                return Err(Error::parse(ln + 1, format!("expected {width} tiles, got {}", row.len())));
            }
            tiles.extend(row);
        }
        Layout::new(height, width, tiles)
    }
}

pub(crate) fn parse_row(line: &str, line_no: usize) -> Result<Vec<TileId>> {
    line.split_whitespace()
        .map(|x| {
            x.parse::<usize>()
                .map(TileId::new)
                .map_err(|e| Error::parse(line_no, format!("bad tile id {x:?}: {e}")))
        })
        .collect()
}

#[inline]
pub fn neighbor(height: usize, width: usize, cell: usize, dir: Direction) -> Option<usize> {
    let (r, c) = (cell / width, cell % width);
    match dir {
        Direction::North => (r > 0).then(|| cell - width),
        Direction::South => (r + 1 < height).then(|| cell + width),
        Direction::West => (c > 0).then(|| cell - 1),
        Direction::East => (c + 1 < width).then(|| cell + 1),
    }
}

/// A coarse plan: one functional category per cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CategoryGrid {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<FunctionalCategory>,
}

impl CategoryGrid {
    pub fn filled(height: usize, width: usize, cat: FunctionalCategory) -> Self {
        CategoryGrid {
            height,
            width,
            cells: vec![cat; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> FunctionalCategory {
        self.cells[row * self.width + col]
    }

    /// One row per line, category characters.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.cells.chunks(self.width) {
            s.extend(row.iter().map(|c| c.token_char()));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let l = Layout::new(2, 3, (0..6).map(TileId::new).collect()).unwrap();
        let text = l.to_text();
        assert_eq!(text, "2 3\n0 1 2\n3 4 5\n");
        assert_eq!(Layout::from_text(&text).unwrap(), l);
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(Layout::from_text("2 2\n0 1\n2\n").is_err());
        assert!(Layout::new(2, 2, vec![TileId::new(0); 3]).is_err());
    }

    #[test]
    fn neighbors_respect_bounds() {
        assert_eq!(neighbor(3, 4, 0, Direction::North), None);
        assert_eq!(neighbor(3, 4, 0, Direction::West), None);
        assert_eq!(neighbor(3, 4, 0, Direction::East), Some(1));
        assert_eq!(neighbor(3, 4, 0, Direction::South), Some(4));
        assert_eq!(neighbor(3, 4, 11, Direction::South), None);
        assert_eq!(neighbor(3, 4, 11, Direction::East), None);
    }
}
