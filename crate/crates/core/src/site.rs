//! Site border convention: streets along the south and east edges,
//! landscaping along the north and west edges. Corners shared between a
//! street edge and a landscape edge are streets.

use std::collections::BTreeMap;

use crate::catalog::{FunctionalCategory, TileCatalog};
use crate::tileset::TileSet;

pub type Preconstraints = BTreeMap<usize, TileSet>;

#[derive(Clone, Debug)]
pub struct SiteBorder {
    pub landscape: TileSet,
    pub street: TileSet,
}

impl SiteBorder {
    pub fn standard(catalog: &TileCatalog) -> Self {
        let mut landscape = catalog.category_set(FunctionalCategory::Tree);
        landscape.union_with(&catalog.category_set(FunctionalCategory::Lawn));
        SiteBorder {
            landscape,
            street: catalog.category_set(FunctionalCategory::Street),
        }
    }

    pub fn border_set(&self, height: usize, width: usize, cell: usize) -> Option<&TileSet> {
        let (r, c) = (cell / width, cell % width);
        if r + 1 == height || c + 1 == width {
            Some(&self.street)
        } else if r == 0 || c == 0 {
            Some(&self.landscape)
        } else {
            None
        }
    }

    pub fn is_border(height: usize, width: usize, cell: usize) -> bool {
        let (r, c) = (cell / width, cell % width);
        r == 0 || c == 0 || r + 1 == height || c + 1 == width
    }

    pub fn preconstraints(&self, height: usize, width: usize) -> Preconstraints {
        (0..height * width)
            .filter_map(|cell| self.border_set(height, width, cell).map(|s| (cell, s.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn border_cells_follow_convention() {
        let cat = TileCatalog::representative();
        let b = SiteBorder::standard(&cat);
        let (h, w) = (4, 5);
        let pre = b.preconstraints(h, w);
        assert_eq!(pre.len(), 2 * h + 2 * w - 4);
        assert_eq!(pre[&0], b.landscape);
        assert_eq!(pre[&(w - 1)], b.street);
        assert_eq!(pre[&((h - 1) * w)], b.street);
        assert_eq!(pre[&w], b.landscape);
        assert!(!pre.contains_key(&(w + 1)));
    }
}
