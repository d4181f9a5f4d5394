//! Lossless conversion between token grids and compressed sequences.
//!
//! Encoding lists the class of every instance at its anchor, in scan order.
//! Decoding replays that order: each token is placed with its anchor on the
//! first uncovered cell in scan order. Because an anchor is the scan-minimal
//! cell of its shape, every cell before it is already covered when it is
//! reached, so the two walks agree.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Layout, TokenGrid};
use crate::trainer::apply_vocab;
use crate::vocab::{TokenShape, Vocabulary};

/// Token classes in anchor scan order plus the grid extents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CompressedSequence {
    pub dims: Vec<usize>,
    pub tokens: Vec<u32>,
}

impl CompressedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Why a shape could not be placed at the next anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PlaceError {
    OutOfBounds,
    Overlap,
    Full,
}

/// Coverage mask with a cursor on the first uncovered cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Canvas {
    layout: Layout,
    covered: Vec<bool>,
    cursor: usize,
    uncovered: usize,
}

impl Canvas {
    pub(crate) fn new(layout: Layout) -> Self {
        Canvas {
            layout,
            covered: vec![false; layout.len()],
            cursor: 0,
            uncovered: layout.len(),
        }
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn covered(&self) -> &[bool] {
        &self.covered
    }

    pub(crate) fn uncovered(&self) -> usize {
        self.uncovered
    }

    /// Index of the scan-minimal uncovered cell.
    pub(crate) fn next_anchor(&self) -> Option<usize> {
        (self.cursor < self.covered.len()).then_some(self.cursor)
    }

    /// Cells `shape` would cover at the next anchor, without placing it.
    pub(crate) fn footprint(
        &self,
        shape: &TokenShape,
        out: &mut Vec<usize>,
    ) -> std::result::Result<(), PlaceError> {
        out.clear();
        let anchor = self.next_anchor().ok_or(PlaceError::Full)?;
        for &o in &shape.offsets {
            let cell = self
                .layout
                .translate(anchor, o)
                .ok_or(PlaceError::OutOfBounds)?;
            out.push(cell);
        }
        for &cell in out.iter() {
            if self.covered[cell] {
                return Err(PlaceError::Overlap);
            }
        }
        Ok(())
    }

    /// Marks `cells` (a footprint) covered and advances the cursor.
    pub(crate) fn commit(&mut self, cells: &[usize]) {
        for &c in cells {
            debug_assert!(!self.covered[c]);
            self.covered[c] = true;
        }
        self.uncovered -= cells.len();
        while self.cursor < self.covered.len() && self.covered[self.cursor] {
            self.cursor += 1;
        }
    }
}

fn place_error(e: PlaceError, index: usize, class: u32, remaining: usize) -> Error {
    match e {
        PlaceError::OutOfBounds => Error::OutOfBounds { index, class },
        PlaceError::Overlap => Error::Overlap { index, class },
        PlaceError::Full => Error::TrailingTokens { remaining },
    }
}

/// Lists the instances of `grid` in anchor scan order, checking that each
/// covers exactly the cells its class's shape predicts.
pub fn encode(grid: &TokenGrid, vocab: &Vocabulary) -> Result<CompressedSequence> {
    if grid.ndim() != vocab.ndim() {
        return Err(Error::AxisMismatch {
            expected: vocab.ndim(),
            actual: grid.ndim(),
        });
    }
    let layout = grid.layout();
    let n = grid.len();
    // group cells by id, each group in scan order
    let mut start = vec![0usize; n + 1];
    for &id in grid.ids() {
        start[id as usize + 1] += 1;
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut cells = vec![0usize; n];
    for (i, &id) in grid.ids().iter().enumerate() {
        cells[fill[id as usize]] = i;
        fill[id as usize] += 1;
    }

    let mut tokens = Vec::new();
    for inst in grid.instances() {
        let shape = vocab.shape_of(inst.class)?;
        let members = &cells[start[inst.id as usize]..start[inst.id as usize + 1]];
        let matches = members.len() == shape.len()
            && members
                .iter()
                .zip(&shape.offsets)
                .all(|(&c, &o)| layout.offset_between(c, inst.anchor) == o);
        if !matches {
            return Err(Error::ShapeMismatch {
                class: inst.class,
                anchor: layout.position(inst.anchor).0,
            });
        }
        tokens.push(inst.class);
    }
    Ok(CompressedSequence {
        dims: grid.dims().to_vec(),
        tokens,
    })
}

/// Applies the vocabulary's merges to a grid of base classes and encodes it.
pub fn tokenize(grid: &TokenGrid, vocab: &Vocabulary) -> Result<CompressedSequence> {
    encode(&apply_vocab(grid, vocab)?, vocab)
}

/// Rebuilds the token grid of `seq`. Token `i` gets unique id `i`.
pub fn decode(seq: &CompressedSequence, vocab: &Vocabulary) -> Result<TokenGrid> {
    let layout = Layout::new(&seq.dims)?;
    if layout.ndim() != vocab.ndim() {
        return Err(Error::AxisMismatch {
            expected: vocab.ndim(),
            actual: layout.ndim(),
        });
    }
    let mut canvas = Canvas::new(layout);
    let mut classes = vec![0u32; layout.len()];
    let mut ids = vec![0u32; layout.len()];
    let mut footprint = Vec::new();
    for (i, &class) in seq.tokens.iter().enumerate() {
        let shape = vocab.shape_of(class)?;
        canvas
            .footprint(shape, &mut footprint)
            .map_err(|e| place_error(e, i, class, seq.tokens.len() - i))?;
        for &c in &footprint {
            classes[c] = class;
            ids[c] = i as u32;
        }
        canvas.commit(&footprint);
    }
    if canvas.uncovered() > 0 {
        return Err(Error::TokensExhausted {
            uncovered: canvas.uncovered(),
        });
    }
    Ok(TokenGrid::from_raw(layout, classes, ids))
}

/// Replaces every instance by the base classes its shape is built from,
/// yielding a grid of single-cell tokens.
pub fn expand_to_base(grid: &TokenGrid, vocab: &Vocabulary) -> Result<TokenGrid> {
    let layout = grid.layout();
    let mut base = vec![0u32; grid.len()];
    for inst in grid.instances() {
        let shape = vocab.shape_of(inst.class)?;
        for (&o, &b) in shape.offsets.iter().zip(&shape.base) {
            let cell = layout
                .translate(inst.anchor, o)
                .filter(|&c| grid.ids()[c] == inst.id)
                .ok_or_else(|| Error::ShapeMismatch {
                    class: inst.class,
                    anchor: layout.position(inst.anchor).0,
                })?;
            base[cell] = b;
        }
    }
    TokenGrid::unmerged(grid.dims(), base)
}

/// Decodes straight to a grid of base classes.
pub fn decode_to_base(seq: &CompressedSequence, vocab: &Vocabulary) -> Result<TokenGrid> {
    expand_to_base(&decode(seq, vocab)?, vocab)
}

/// Sequence-length statistics of a compressed corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionReport {
    pub lengths: Vec<usize>,
    pub total_tokens: usize,
    pub total_cells: usize,
    /// Total compressed tokens over total original cells; lower is better.
    pub compression: f64,
    pub mean_length: f64,
    pub max_length: usize,
    /// Sequence length -> number of grids with that length.
    pub histogram: BTreeMap<usize, usize>,
}

impl CompressionReport {
    pub fn from_lengths(lengths: Vec<usize>, total_cells: usize) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let total_tokens: usize = lengths.iter().sum();
        let mut histogram = BTreeMap::new();
        for &l in &lengths {
            *histogram.entry(l).or_insert(0) += 1;
        }
        Ok(CompressionReport {
            total_tokens,
            total_cells,
            compression: total_tokens as f64 / total_cells as f64,
            mean_length: total_tokens as f64 / lengths.len() as f64,
            max_length: lengths.iter().copied().max().unwrap_or(0),
            histogram,
            lengths,
        })
    }

    pub fn from_sequences(seqs: &[CompressedSequence]) -> Result<Self> {
        Self::from_lengths(
            seqs.iter().map(|s| s.len()).collect(),
            seqs.iter().map(|s| s.cell_count()).sum(),
        )
    }
}

/// Tokenizes every grid of `corpus` (base classes) and reports lengths.
pub fn compression_stats(corpus: &[TokenGrid], vocab: &Vocabulary) -> Result<CompressionReport> {
    let seqs = corpus
        .par_iter()
        .map(|g| tokenize(g, vocab))
        .collect::<Result<Vec<_>>>()?;
    CompressionReport::from_sequences(&seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Offset;
    use crate::trainer::{train, TrainConfig};
    use crate::vocab::Constellation;

    const A: u32 = 0;
    const B: u32 = 1;

    fn worked_example() -> TokenGrid {
        let s = [A, A, A, A, A, B, B, A, B, A, B, B];
        TokenGrid::from_classes(&[1, 12], s.to_vec(), 2).unwrap()
    }

    fn worked_vocab() -> Vocabulary {
        train(vec![worked_example()], 2, TrainConfig::new(3))
            .unwrap()
            .vocab
    }

    #[test]
    fn encode_trained_example() {
        let v = worked_vocab();
        let seq = tokenize(&worked_example(), &v).unwrap();
        // C C E D E
        assert_eq!(seq.tokens, vec![2, 2, 4, 3, 4]);
        assert_eq!(seq.dims, vec![1, 12]);
    }

    #[test]
    fn encode_uncompressed_lists_classes() {
        let classes: Vec<u32> = (0..12).map(|i| i % 5).collect();
        let g = TokenGrid::from_classes(&[3, 4], classes.clone(), 5).unwrap();
        let v = Vocabulary::new(2, 5).unwrap();
        assert_eq!(encode(&g, &v).unwrap().tokens, classes);
    }

    /// Sixteen cells spelling A G A C B D F E G F:
    ///
    /// ```text
    /// A G G G
    /// A C B D
    /// F E E D
    /// G G G F
    /// ```
    #[test]
    fn encode_four_by_four_into_ten_tokens() {
        let off = |c: &[i32]| Offset::from_slice(c).unwrap();
        // base: A B C x y F z; G = x x x, D = y over y, E = z z
        let (a, b, c, x, y, f, z) = (0, 1, 2, 3, 4, 5, 6);
        let mut v = Vocabulary::new(2, 7).unwrap();
        let xx = v.push_merge(Constellation::new(x, x, off(&[0, -1]))).unwrap().new_class;
        let g = v.push_merge(Constellation::new(xx, x, off(&[0, -2]))).unwrap().new_class;
        let d = v.push_merge(Constellation::new(y, y, off(&[-1, 0]))).unwrap().new_class;
        let e = v.push_merge(Constellation::new(z, z, off(&[0, -1]))).unwrap().new_class;
        #[rustfmt::skip]
        let classes = vec![
            a, g, g, g,
            a, c, b, d,
            f, e, e, d,
            g, g, g, f,
        ];
        #[rustfmt::skip]
        let ids = vec![
            0, 1, 1, 1,
            4, 5, 6, 7,
            8, 9, 9, 7,
            12, 12, 12, 15,
        ];
        let grid = TokenGrid::from_parts(&[4, 4], classes, ids).unwrap();
        let seq = encode(&grid, &v).unwrap();
        assert_eq!(seq.tokens, vec![a, g, a, c, b, d, f, e, g, f]);
        assert_eq!(seq.len(), 10);
        assert_eq!(decode(&seq, &v).unwrap().classes(), grid.classes());
        let base = decode_to_base(&seq, &v).unwrap();
        assert_eq!(&base.classes()[..4], &[a, x, x, x]);
        assert_eq!(base.classes()[11], y);
    }

    #[test]
    fn encode_rejects_shape_mismatch() {
        let v = worked_vocab();
        // class C (two cells) on a single cell
        let g = TokenGrid::from_parts(&[1, 2], vec![2, 0], vec![0, 1]).unwrap();
        assert!(matches!(encode(&g, &v), Err(Error::ShapeMismatch { .. })));
        let g3 = TokenGrid::from_classes(&[1, 1, 2], vec![0, 0], 2).unwrap();
        assert!(matches!(encode(&g3, &v), Err(Error::AxisMismatch { .. })));
    }

    #[test]
    fn decode_worked_example_back_to_base() {
        let v = worked_vocab();
        let seq = CompressedSequence {
            dims: vec![1, 12],
            tokens: vec![2, 2, 4, 3, 4],
        };
        let g = decode_to_base(&seq, &v).unwrap();
        assert_eq!(g.classes(), worked_example().classes());
        let merged = decode(&seq, &v).unwrap();
        assert_eq!(merged.ids(), &[0, 0, 1, 1, 2, 2, 2, 3, 3, 4, 4, 4]);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let v = worked_vocab();
        let seq = |tokens: Vec<u32>| CompressedSequence {
            dims: vec![1, 3],
            tokens,
        };
        // a two-cell token on the last remaining cell
        assert_eq!(
            decode(&seq(vec![2, 2]), &v),
            Err(Error::OutOfBounds { index: 1, class: 2 })
        );
        assert_eq!(
            decode(&seq(vec![0, 0]), &v),
            Err(Error::TokensExhausted { uncovered: 1 })
        );
        assert_eq!(
            decode(&seq(vec![0, 0, 1, 1, 1]), &v),
            Err(Error::TrailingTokens { remaining: 2 })
        );
        assert!(matches!(
            decode(&seq(vec![9]), &v),
            Err(Error::ClassOutOfRange { .. })
        ));

        // shapes reaching below-left of their anchor
        let off = |c: &[i32]| Offset::from_slice(c).unwrap();
        let mut w = Vocabulary::new(2, 2).unwrap();
        let vert = w.push_merge(Constellation::new(0, 1, off(&[-1, 0]))).unwrap().new_class;
        // {(0,0), (1,-1), (1,0)}
        let hook = w.push_merge(Constellation::new(vert, 1, off(&[-1, 1]))).unwrap().new_class;
        assert_eq!(
            w.shape_of(hook).unwrap().offsets,
            vec![off(&[0, 0]), off(&[1, -1]), off(&[1, 0])]
        );
        let s = |tokens: Vec<u32>| CompressedSequence {
            dims: vec![2, 3],
            tokens,
        };
        assert_eq!(
            decode(&s(vec![hook]), &w),
            Err(Error::OutOfBounds { index: 0, class: hook })
        );
        // the vertical pair covers (1,0), which the hook at (0,1) needs
        assert_eq!(
            decode(&s(vec![vert, hook]), &w),
            Err(Error::Overlap { index: 1, class: hook })
        );
        let ok = decode(&s(vec![0, hook, 1, 1]), &w).unwrap();
        assert_eq!(ok.classes(), &[0, hook, 1, hook, hook, 1]);
    }

    #[test]
    fn stats_examples() {
        let v = worked_vocab();
        let r = compression_stats(&[worked_example()], &v).unwrap();
        assert_eq!(r.lengths, vec![5]);
        assert!((r.compression - 5.0 / 12.0).abs() < 1e-12);
        assert_eq!(r.histogram.get(&5), Some(&1));

        let none = Vocabulary::new(2, 2).unwrap();
        let r = compression_stats(&[worked_example(), worked_example()], &none).unwrap();
        assert_eq!(r.compression, 1.0);
        assert_eq!(r.max_length, 12);
        assert!(compression_stats(&[], &none).is_err());
    }
}
