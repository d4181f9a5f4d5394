//! Per-token features for sequence models and legality masks for generation.
//!
//! Every token carries three vectors: the positional encoding of its anchor,
//! the positional encoding of the next token's anchor (known once the token
//! is placed, so it only depends on the prefix) and the sum of the positional
//! encodings over all cells the token covers.

use crate::codec::{Canvas, CompressedSequence, PlaceError};
use crate::error::{Error, Result};
use crate::grid::{GridPosition, Layout};
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

/// Sinusoidal positional encoding per axis, concatenated over axes.
///
/// Axis `a`, pair `i` uses frequency `base^(-2i / pe_dim)` and fills slots
/// `a * pe_dim + 2i` (sine) and `a * pe_dim + 2i + 1` (cosine).
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding<T> {
    ndim: usize,
    pe_dim: usize,
    freqs: Vec<T>,
}

pub const DEFAULT_PE_BASE: f64 = 10_000.0;

impl<T: Scalar> PositionalEncoding<T> {
    pub fn new(ndim: usize, pe_dim: usize) -> Result<Self> {
        Self::with_base(ndim, pe_dim, T::from_f64(DEFAULT_PE_BASE).unwrap())
    }

    pub fn with_base(ndim: usize, pe_dim: usize, base: T) -> Result<Self> {
        if pe_dim == 0 || !pe_dim.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "pe_dim must be even and positive, got {pe_dim}"
            )));
        }
        if ndim == 0 || ndim > crate::grid::MAX_AXES {
            return Err(Error::InvalidParameter(format!("unsupported axis count {ndim}")));
        }
        if base.partial_cmp(&T::one()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidParameter("encoding base must exceed 1".into()));
        }
        let d = T::from_usize_lossy(pe_dim);
        let freqs = (0..pe_dim / 2)
            .map(|i| base.powf(-T::from_usize_lossy(2 * i) / d))
            .collect();
        Ok(PositionalEncoding {
            ndim,
            pe_dim,
            freqs,
        })
    }

    pub fn pe_dim(&self) -> usize {
        self.pe_dim
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Length of one encoded vector.
    pub fn width(&self) -> usize {
        self.pe_dim * self.ndim
    }

    pub fn encode(&self, coords: &[usize]) -> Vec<T> {
        let mut out = vec![T::zero(); self.width()];
        self.encode_into(coords, &mut out);
        out
    }

    fn encode_into(&self, coords: &[usize], out: &mut [T]) {
        for (axis, &c) in coords.iter().enumerate().take(self.ndim) {
            let pos = T::from_usize_lossy(c);
            let slot = &mut out[axis * self.pe_dim..(axis + 1) * self.pe_dim];
            for (i, &f) in self.freqs.iter().enumerate() {
                let (s, co) = (pos * f).sin_cos();
                slot[2 * i] = s;
                slot[2 * i + 1] = co;
            }
        }
    }

    fn encode_index(&self, layout: &Layout, index: usize) -> Vec<T> {
        self.encode(&layout.coords(index)[..layout.ndim()])
    }

    /// Sum of encodings over `cells`, accumulated in the given order and
    /// starting from the first term, so a single cell yields its encoding
    /// exactly.
    fn sum_over(&self, layout: &Layout, cells: &[usize]) -> Vec<T> {
        let mut iter = cells.iter();
        let mut acc = match iter.next() {
            Some(&c) => self.encode_index(layout, c),
            None => return vec![T::zero(); self.width()],
        };
        let mut term = vec![T::zero(); self.width()];
        for &c in iter {
            self.encode_into(&layout.coords(c)[..layout.ndim()], &mut term);
            for (a, &t) in acc.iter_mut().zip(&term) {
                *a += t;
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenFeatures<T> {
    pub anchor_pe: Vec<T>,
    /// Encoding of the next anchor; all zeros once the grid is covered.
    pub next_anchor_pe: Vec<T>,
    pub ipe: Vec<T>,
}

/// Integrated positional encoding of `class` placed with its anchor at
/// `anchor` in a grid of extents `dims`.
pub fn ipe<T: Scalar>(
    vocab: &Vocabulary,
    class: u32,
    anchor: &GridPosition,
    dims: &[usize],
    pe: &PositionalEncoding<T>,
) -> Result<Vec<T>> {
    let layout = Layout::new(dims)?;
    check_pe(&layout, pe)?;
    let shape = vocab.shape_of(class)?;
    let a = layout.index_of(anchor).ok_or(Error::OutOfBounds { index: 0, class })?;
    let cells = shape
        .offsets
        .iter()
        .map(|&o| layout.translate(a, o))
        .collect::<Option<Vec<_>>>()
        .ok_or(Error::OutOfBounds { index: 0, class })?;
    Ok(pe.sum_over(&layout, &cells))
}

fn check_pe<T>(layout: &Layout, pe: &PositionalEncoding<T>) -> Result<()> {
    if layout.ndim() != pe.ndim {
        return Err(Error::AxisMismatch {
            expected: pe.ndim,
            actual: layout.ndim(),
        });
    }
    Ok(())
}

/// Replays the decoder placement of `seq` and emits features for every token.
///
/// Prefixes of a sequence are accepted: features of token `i` depend only on
/// tokens `0..=i`, and a prefix that leaves cells uncovered is not an error.
pub fn emit_features<T: Scalar>(
    seq: &CompressedSequence,
    vocab: &Vocabulary,
    pe: &PositionalEncoding<T>,
) -> Result<Vec<TokenFeatures<T>>> {
    let layout = Layout::new(&seq.dims)?;
    check_pe(&layout, pe)?;
    if layout.ndim() != vocab.ndim() {
        return Err(Error::AxisMismatch {
            expected: vocab.ndim(),
            actual: layout.ndim(),
        });
    }
    let mut canvas = Canvas::new(layout);
    let mut footprint = Vec::new();
    let mut out = Vec::with_capacity(seq.len());
    for (i, &class) in seq.tokens.iter().enumerate() {
        let shape = vocab.shape_of(class)?;
        canvas.footprint(shape, &mut footprint).map_err(|e| match e {
            PlaceError::OutOfBounds => Error::OutOfBounds { index: i, class },
            PlaceError::Overlap => Error::Overlap { index: i, class },
            PlaceError::Full => Error::TrailingTokens {
                remaining: seq.len() - i,
            },
        })?;
        let anchor_pe = pe.encode_index(&layout, footprint[0]);
        let ipe = pe.sum_over(&layout, &footprint);
        canvas.commit(&footprint);
        let next_anchor_pe = match canvas.next_anchor() {
            Some(a) => pe.encode_index(&layout, a),
            None => vec![T::zero(); pe.width()],
        };
        out.push(TokenFeatures {
            anchor_pe,
            next_anchor_pe,
            ipe,
        });
    }
    Ok(out)
}

/// Partially generated grid: coverage plus the tokens placed so far.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationState {
    canvas: Canvas,
    tokens: Vec<u32>,
}

impl GenerationState {
    pub fn new(dims: &[usize]) -> Result<Self> {
        Ok(GenerationState {
            canvas: Canvas::new(Layout::new(dims)?),
            tokens: Vec::new(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        self.canvas.layout().dims()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn covered(&self) -> &[bool] {
        self.canvas.covered()
    }

    pub fn is_complete(&self) -> bool {
        self.canvas.next_anchor().is_none()
    }

    /// Where the next token's anchor goes.
    pub fn next_anchor(&self) -> Option<GridPosition> {
        self.canvas
            .next_anchor()
            .map(|i| self.canvas.layout().position(i))
    }

    /// Places `class` at the next anchor.
    pub fn place(&mut self, class: u32, vocab: &Vocabulary) -> Result<()> {
        let shape = vocab.shape_of(class)?;
        let index = self.tokens.len();
        let mut cells = Vec::with_capacity(shape.len());
        self.canvas
            .footprint(shape, &mut cells)
            .map_err(|e| match e {
                PlaceError::OutOfBounds => Error::OutOfBounds { index, class },
                PlaceError::Overlap => Error::Overlap { index, class },
                PlaceError::Full => Error::FullyCovered,
            })?;
        self.canvas.commit(&cells);
        self.tokens.push(class);
        Ok(())
    }

    pub fn to_sequence(&self) -> CompressedSequence {
        CompressedSequence {
            dims: self.dims().to_vec(),
            tokens: self.tokens.clone(),
        }
    }
}

/// For every class of `vocab`: can it be placed at the next anchor without
/// leaving the grid or overlapping covered cells?
pub fn legal_mask(state: &GenerationState, vocab: &Vocabulary) -> Result<Vec<bool>> {
    if state.is_complete() {
        return Err(Error::FullyCovered);
    }
    if state.canvas.layout().ndim() != vocab.ndim() {
        return Err(Error::AxisMismatch {
            expected: vocab.ndim(),
            actual: state.canvas.layout().ndim(),
        });
    }
    let mut scratch = Vec::new();
    Ok(vocab
        .shapes()
        .iter()
        .map(|shape| state.canvas.footprint(shape, &mut scratch).is_ok())
        .collect())
}
