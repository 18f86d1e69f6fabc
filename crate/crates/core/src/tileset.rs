use std::fmt;

use crate::catalog::TileId;

/// Fixed-capacity bitset over catalog tile ids.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TileSet {
    words: Vec<u64>,
    capacity: usize,
}

pub(crate) fn words_for(n: usize) -> usize {
    n.div_ceil(64)
}

impl TileSet {
    pub fn empty(capacity: usize) -> Self {
        TileSet {
            words: vec![0; words_for(capacity)],
            capacity,
        }
    }

    pub fn full(capacity: usize) -> Self {
        let mut s = Self::empty(capacity);
        for i in 0..capacity {
            s.words[i / 64] |= 1 << (i % 64);
        }
        s
    }

    pub fn from_ids(capacity: usize, ids: impl IntoIterator<Item = TileId>) -> Self {
        let mut s = Self::empty(capacity);
        for id in ids {
            s.insert(id);
        }
        s
    }

    pub(crate) fn from_words(capacity: usize, words: &[u64]) -> Self {
        TileSet {
            words: words.to_vec(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn insert(&mut self, id: TileId) {
        let i = id.index();
        assert!(i < self.capacity, "tile {i} outside set capacity {}", self.capacity);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, id: TileId) {
        let i = id.index();
        if i < self.capacity {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn contains(&self, id: TileId) -> bool {
        let i = id.index();
        i < self.capacity && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersect_with(&mut self, other: &TileSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    pub fn union_with(&mut self, other: &TileSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn is_subset(&self, other: &TileSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = TileId> + '_ {
        iter_words(&self.words)
    }
}

pub(crate) fn iter_words(words: &[u64]) -> impl Iterator<Item = TileId> + '_ {
    words.iter().enumerate().flat_map(|(wi, &w)| {
        let mut bits = w;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let b = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(TileId::new(wi * 64 + b))
        })
    })
}

impl fmt::Debug for TileSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|t| t.index())).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let mut s = TileSet::empty(130);
        assert!(s.is_empty());
        s.insert(TileId::new(0));
        s.insert(TileId::new(64));
        s.insert(TileId::new(129));
        assert_eq!(s.len(), 3);
        assert!(s.contains(TileId::new(129)));
        assert!(!s.contains(TileId::new(5)));
        let ids: Vec<usize> = s.iter().map(|t| t.index()).collect();
        assert_eq!(ids, vec![0, 64, 129]);
        s.remove(TileId::new(64));
        assert_eq!(s.len(), 2);
        let full = TileSet::full(130);
        assert_eq!(full.len(), 130);
        assert!(s.is_subset(&full));
        let mut t = full.clone();
        t.intersect_with(&s);
        assert_eq!(t, s);
    }
}
