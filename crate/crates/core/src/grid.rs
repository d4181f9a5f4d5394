//! N-dimensional token grids.
//!
//! A [`TokenGrid`] stores two labels per cell: the token class covering the
//! cell and the unique id of the token instance it belongs to. Storage is
//! row-major with the last axis fastest, which is also the scan order used for
//! anchors, sequence extraction and decoding.

use std::fmt;

use crate::error::{Error, Result};

/// Highest supported axis count.
pub const MAX_AXES: usize = 3;

/// Signed integer displacement between two cells, one component per axis.
///
/// Components beyond the grid's axis count are always zero, so the derived
/// ordering is the lexicographic order over the used components.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Offset(pub [i32; MAX_AXES]);

impl Offset {
    pub const ZERO: Offset = Offset([0; MAX_AXES]);

    pub fn from_slice(components: &[i32]) -> Result<Self> {
        if components.is_empty() || components.len() > MAX_AXES {
            return Err(Error::InvalidParameter(format!(
                "offset needs 1 to {MAX_AXES} components, got {}",
                components.len()
            )));
        }
        let mut c = [0; MAX_AXES];
        c[..components.len()].copy_from_slice(components);
        Ok(Offset(c))
    }

    pub fn components(&self, ndim: usize) -> &[i32] {
        &self.0[..ndim]
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; MAX_AXES]
    }
}

impl std::ops::Add for Offset {
    type Output = Offset;
    fn add(self, rhs: Offset) -> Offset {
        Offset([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl std::ops::Sub for Offset {
    type Output = Offset;
    fn sub(self, rhs: Offset) -> Offset {
        Offset([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl std::ops::Neg for Offset {
    type Output = Offset;
    fn neg(self) -> Offset {
        Offset([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl fmt::Debug for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Extents and strides of a grid. Cheap to copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    ndim: usize,
    extents: [usize; MAX_AXES],
    strides: [usize; MAX_AXES],
    len: usize,
}

impl Layout {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_AXES || dims.contains(&0) {
            return Err(Error::InvalidDims(dims.to_vec()));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::InvalidDims(dims.to_vec()))?;
        let mut extents = [1; MAX_AXES];
        extents[..dims.len()].copy_from_slice(dims);
        let mut strides = [0; MAX_AXES];
        let mut s = 1;
        for axis in (0..dims.len()).rev() {
            strides[axis] = s;
            s *= dims[axis];
        }
        Ok(Layout {
            ndim: dims.len(),
            extents,
            strides,
            len,
        })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.extents[..self.ndim]
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn coord(&self, index: usize, axis: usize) -> usize {
        (index / self.strides[axis]) % self.extents[axis]
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; MAX_AXES] {
        let mut c = [0; MAX_AXES];
        let mut rest = index;
        for (slot, &stride) in c.iter_mut().zip(&self.strides[..self.ndim]) {
            *slot = rest / stride;
            rest %= stride;
        }
        c
    }

    pub fn position(&self, index: usize) -> GridPosition {
        GridPosition(self.coords(index)[..self.ndim].to_vec())
    }

    pub fn index_of(&self, pos: &GridPosition) -> Option<usize> {
        if pos.0.len() != self.ndim {
            return None;
        }
        let mut idx = 0;
        for (axis, &c) in pos.0.iter().enumerate() {
            if c >= self.extents[axis] {
                return None;
            }
            idx += c * self.strides[axis];
        }
        Some(idx)
    }

    /// The cell one step further along `axis`, if in bounds.
    #[inline]
    pub fn forward(&self, index: usize, axis: usize) -> Option<usize> {
        if self.coord(index, axis) + 1 < self.extents[axis] {
            Some(index + self.strides[axis])
        } else {
            None
        }
    }

    /// The cell one step back along `axis`, if in bounds.
    #[inline]
    pub fn backward(&self, index: usize, axis: usize) -> Option<usize> {
        if self.coord(index, axis) > 0 {
            Some(index - self.strides[axis])
        } else {
            None
        }
    }

    /// Coordinate difference `a - b`.
    #[inline]
    pub fn offset_between(&self, a: usize, b: usize) -> Offset {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let mut o = [0; MAX_AXES];
        for axis in 0..self.ndim {
            o[axis] = ca[axis] as i32 - cb[axis] as i32;
        }
        Offset(o)
    }

    /// `index` moved by `offset`, or `None` when that leaves the grid.
    #[inline]
    pub fn translate(&self, index: usize, offset: Offset) -> Option<usize> {
        let c = self.coords(index);
        let mut idx = 0;
        for (axis, &x) in c.iter().enumerate().take(self.ndim) {
            let v = x as i64 + offset.0[axis] as i64;
            if v < 0 || v >= self.extents[axis] as i64 {
                return None;
            }
            idx += v as usize * self.strides[axis];
        }
        Some(idx)
    }
}

/// Coordinates of one cell, one entry per axis.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPosition(pub Vec<usize>);

impl fmt::Debug for GridPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for GridPosition {
    fn from(c: &[usize]) -> Self {
        GridPosition(c.to_vec())
    }
}

/// Canonical cell of a token instance: its first cell in scan order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Anchor {
    pub position: GridPosition,
    /// Row-major index of `position`.
    pub index: usize,
}

/// Iterator over the positions of a grid in scan order (first axis slowest).
#[derive(Clone, Debug)]
pub struct ScanOrder {
    dims: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for ScanOrder {
    type Item = GridPosition;

    fn next(&mut self) -> Option<GridPosition> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut axis = succ.len();
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            succ[axis] += 1;
            if succ[axis] < self.dims[axis] {
                self.next = Some(succ);
                break;
            }
            succ[axis] = 0;
        }
        Some(GridPosition(current))
    }
}

/// Positions of a grid with extents `dims` in scan order: lexicographic with
/// the first axis slowest and the last axis fastest. Yields nothing for an
/// empty or zero-sized extent list.
pub fn scan_order(dims: &[usize]) -> ScanOrder {
    let next = if dims.is_empty() || dims.contains(&0) {
        None
    } else {
        Some(vec![0; dims.len()])
    };
    ScanOrder {
        dims: dims.to_vec(),
        next,
    }
}

/// One token instance as seen in scan order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instance {
    pub id: u32,
    pub class: u32,
    /// Row-major index of the anchor cell.
    pub anchor: usize,
}

/// An n-dimensional grid of (class, unique id) cell labels.
///
/// Unique ids are always below the cell count; they start out dense in scan
/// order and a merged instance keeps the id of its first constituent.
#[derive(Clone, PartialEq, Eq)]
pub struct TokenGrid {
    layout: Layout,
    classes: Vec<u32>,
    ids: Vec<u32>,
}

impl fmt::Debug for TokenGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenGrid")
            .field("dims", &self.dims())
            .field("classes", &self.classes)
            .field("ids", &self.ids)
            .finish()
    }
}

impl TokenGrid {
    /// Builds a grid where every cell is its own single-cell token, with ids
    /// assigned densely in scan order. Every class must be below `base_size`.
    pub fn from_classes(dims: &[usize], classes: Vec<u32>, base_size: u32) -> Result<Self> {
        if let Some(&class) = classes.iter().find(|&&c| c >= base_size) {
            return Err(Error::ClassOutOfRange {
                class,
                size: base_size,
            });
        }
        Self::unmerged(dims, classes)
    }

    /// Like [`TokenGrid::from_classes`] but without a class range check.
    pub fn unmerged(dims: &[usize], classes: Vec<u32>) -> Result<Self> {
        let layout = Layout::new(dims)?;
        if classes.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: classes.len(),
            });
        }
        let ids = (0..layout.len() as u32).collect();
        Ok(TokenGrid {
            layout,
            classes,
            ids,
        })
    }

    pub(crate) fn from_raw(layout: Layout, classes: Vec<u32>, ids: Vec<u32>) -> Self {
        debug_assert_eq!(classes.len(), layout.len());
        debug_assert_eq!(ids.len(), layout.len());
        TokenGrid {
            layout,
            classes,
            ids,
        }
    }

    /// Builds a grid from explicit labels, validating every invariant.
    pub fn from_parts(dims: &[usize], classes: Vec<u32>, ids: Vec<u32>) -> Result<Self> {
        let layout = Layout::new(dims)?;
        for v in [&classes, &ids] {
            if v.len() != layout.len() {
                return Err(Error::LengthMismatch {
                    expected: layout.len(),
                    actual: v.len(),
                });
            }
        }
        let grid = TokenGrid {
            layout,
            classes,
            ids,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Checks that ids are below the cell count and that each id carries a
    /// single class and covers an edge-connected cell set.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if let Some(&id) = self.ids.iter().find(|&&id| id as usize >= n) {
            return Err(Error::InvalidParameter(format!(
                "instance id {id} is not below the cell count {n}"
            )));
        }
        let mut class_of: rustc_hash::FxHashMap<u32, u32> = Default::default();
        for (&id, &class) in self.ids.iter().zip(&self.classes) {
            let c = *class_of.entry(id).or_insert(class);
            if c != class {
                return Err(Error::InvalidParameter(format!(
                    "instance {id} carries classes {c} and {class}"
                )));
            }
        }
        // flood fill from each anchor must reach every cell of the instance
        let mut seen = vec![false; n];
        let mut flooded = rustc_hash::FxHashSet::default();
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let id = self.ids[start];
            if !flooded.insert(id) {
                return Err(Error::InvalidParameter(format!(
                    "instance {id} is not edge-connected"
                )));
            }
            seen[start] = true;
            stack.push(start);
            while let Some(cell) = stack.pop() {
                for axis in 0..self.ndim() {
                    let nbrs = [
                        self.layout.forward(cell, axis),
                        self.layout.backward(cell, axis),
                    ];
                    for nb in nbrs.into_iter().flatten() {
                        if !seen[nb] && self.ids[nb] == id {
                            seen[nb] = true;
                            stack.push(nb);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dims(&self) -> &[usize] {
        self.layout.dims()
    }

    pub fn ndim(&self) -> usize {
        self.layout.ndim()
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn class_at(&self, pos: &GridPosition) -> Option<u32> {
        self.layout.index_of(pos).map(|i| self.classes[i])
    }

    pub fn id_at(&self, pos: &GridPosition) -> Option<u32> {
        self.layout.index_of(pos).map(|i| self.ids[i])
    }

    pub(crate) fn labels_mut(&mut self) -> (&Layout, &mut [u32], &mut [u32]) {
        (&self.layout, &mut self.classes, &mut self.ids)
    }

    /// Instances in anchor scan order.
    pub fn instances(&self) -> Vec<Instance> {
        let mut seen = rustc_hash::FxHashSet::default();
        let mut out = Vec::new();
        for (i, (&id, &class)) in self.ids.iter().zip(&self.classes).enumerate() {
            if seen.insert(id) {
                out.push(Instance {
                    id,
                    class,
                    anchor: i,
                });
            }
        }
        out
    }

    pub fn instance_count(&self) -> usize {
        let mut seen = rustc_hash::FxHashSet::default();
        self.ids.iter().filter(|&&id| seen.insert(id)).count()
    }

    /// Scan-minimal cell of the instance with id `instance_id`.
    pub fn anchor_of(&self, instance_id: u32) -> Result<Anchor> {
        let index = self
            .ids
            .iter()
            .position(|&id| id == instance_id)
            .ok_or(Error::UnknownInstance(instance_id))?;
        Ok(Anchor {
            position: self.layout.position(index),
            index,
        })
    }

    /// Row-major indices of the cells belonging to `instance_id`.
    pub fn cells_of(&self, instance_id: u32) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|&(_, &id)| id == instance_id)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(c: &[usize]) -> GridPosition {
        GridPosition(c.to_vec())
    }

    #[test]
    fn from_classes_assigns_distinct_ids() {
        // A A A A A B B A B A B B
        let classes = vec![0, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 1];
        let g = TokenGrid::from_classes(&[1, 12], classes, 2).unwrap();
        assert_eq!(g.instance_count(), 12);
        assert_eq!(g.ids(), (0..12).collect::<Vec<u32>>().as_slice());

        let g = TokenGrid::from_classes(&[2, 2], vec![0; 4], 1).unwrap();
        assert_eq!(g.instance_count(), 4);
        assert!(g.classes().iter().all(|&c| c == 0));

        let g = TokenGrid::from_classes(&[2, 2, 2], (0..8).collect(), 8).unwrap();
        assert_eq!(g.instance_count(), 8);
    }

    #[test]
    fn from_classes_errors() {
        assert_eq!(
            TokenGrid::from_classes(&[2, 2], vec![0; 3], 1),
            Err(Error::LengthMismatch {
                expected: 4,
                actual: 3
            })
        );
        assert_eq!(
            TokenGrid::from_classes(&[1, 2], vec![0, 5], 5),
            Err(Error::ClassOutOfRange { class: 5, size: 5 })
        );
        assert!(matches!(
            TokenGrid::from_classes(&[0, 2], vec![], 5),
            Err(Error::InvalidDims(_))
        ));
        assert!(matches!(
            TokenGrid::from_classes(&[1, 1, 1, 1], vec![0], 5),
            Err(Error::InvalidDims(_))
        ));
    }

    #[test]
    fn scan_order_examples() {
        let v: Vec<_> = scan_order(&[2, 2]).collect();
        assert_eq!(v, vec![pos(&[0, 0]), pos(&[0, 1]), pos(&[1, 0]), pos(&[1, 1])]);
        let v: Vec<_> = scan_order(&[1, 3]).collect();
        assert_eq!(v, vec![pos(&[0, 0]), pos(&[0, 1]), pos(&[0, 2])]);
        let v: Vec<_> = scan_order(&[2, 1, 2]).collect();
        assert_eq!(
            v,
            vec![
                pos(&[0, 0, 0]),
                pos(&[0, 0, 1]),
                pos(&[1, 0, 0]),
                pos(&[1, 0, 1])
            ]
        );
        assert_eq!(scan_order(&[3, 0]).count(), 0);
    }

    #[test]
    fn scan_order_matches_storage_order() {
        let layout = Layout::new(&[3, 4, 5]).unwrap();
        for (i, p) in scan_order(&[3, 4, 5]).enumerate() {
            assert_eq!(layout.index_of(&p), Some(i));
            assert_eq!(layout.position(i), p);
        }
    }

    /// Grid of single cells plus one multi-cell token, whose id is the index
    /// of its last listed cell.
    fn grid_with_token(dims: &[usize], cells: &[&[usize]]) -> (TokenGrid, u32) {
        let layout = Layout::new(dims).unwrap();
        let mut ids: Vec<u32> = (0..layout.len() as u32).collect();
        let mut classes = vec![0u32; layout.len()];
        let target = layout.index_of(&pos(cells[cells.len() - 1])).unwrap() as u32;
        for c in cells {
            let i = layout.index_of(&pos(c)).unwrap();
            ids[i] = target;
            classes[i] = 9;
        }
        (TokenGrid::from_parts(dims, classes, ids).unwrap(), target)
    }

    #[test]
    fn anchor_examples() {
        let g = TokenGrid::from_classes(&[5, 7], vec![0; 35], 1).unwrap();
        let id = g.id_at(&pos(&[3, 5])).unwrap();
        assert_eq!(g.anchor_of(id).unwrap().position, pos(&[3, 5]));

        let (g, id) = grid_with_token(&[4, 4], &[&[1, 2], &[1, 3], &[2, 2]]);
        assert_eq!(g.anchor_of(id).unwrap().position, pos(&[1, 2]));

        let (g, id) = grid_with_token(&[3, 3], &[&[0, 1], &[1, 0], &[1, 1]]);
        assert_eq!(g.anchor_of(id).unwrap().position, pos(&[0, 1]));
        assert_eq!(g.cells_of(id), vec![1, 3, 4]);

        assert_eq!(g.anchor_of(77_777), Err(Error::UnknownInstance(77_777)));
    }

    #[test]
    fn anchor_ignores_class_labels() {
        let (g, id) = grid_with_token(&[3, 3], &[&[0, 1], &[1, 0], &[1, 1]]);
        let classes = g.classes().iter().map(|c| c + 3).collect();
        let relabeled = TokenGrid::from_parts(g.dims(), classes, g.ids().to_vec()).unwrap();
        assert_eq!(relabeled.anchor_of(id), g.anchor_of(id));
    }

    #[test]
    fn from_parts_rejects_broken_invariants() {
        // same id, different classes
        assert!(TokenGrid::from_parts(&[1, 2], vec![0, 1], vec![0, 0]).is_err());
        // disconnected instance
        assert!(TokenGrid::from_parts(&[1, 3], vec![0, 1, 0], vec![0, 1, 0]).is_err());
        // diagonal only is not edge-connected
        assert!(TokenGrid::from_parts(&[2, 2], vec![0, 1, 2, 0], vec![0, 1, 2, 0]).is_err());
        assert!(TokenGrid::from_parts(&[2, 2], vec![0, 0, 2, 0], vec![0, 0, 2, 0]).is_ok());
        // ids must stay below the cell count
        assert!(TokenGrid::from_parts(&[1, 2], vec![0, 0], vec![5, 5]).is_err());
    }

    #[test]
    fn first_occurrence_visits_every_instance_once() {
        let (g, _) = grid_with_token(&[4, 4], &[&[1, 2], &[1, 3], &[2, 2]]);
        let inst = g.instances();
        assert_eq!(inst.len(), g.instance_count());
        assert_eq!(inst.len(), 14);
        let anchors: Vec<usize> = inst.iter().map(|i| i.anchor).collect();
        let mut sorted = anchors.clone();
        sorted.sort();
        assert_eq!(anchors, sorted);
    }

    #[test]
    fn layout_neighbours() {
        let l = Layout::new(&[2, 3]).unwrap();
        assert_eq!(l.forward(2, 1), None);
        assert_eq!(l.forward(2, 0), Some(5));
        assert_eq!(l.backward(3, 1), None);
        assert_eq!(l.backward(4, 1), Some(3));
        assert_eq!(l.offset_between(0, 4), Offset([-1, -1, 0]));
        assert_eq!(l.translate(0, Offset([1, 2, 0])), Some(5));
        assert_eq!(l.translate(0, Offset([0, -1, 0])), None);
    }
}
