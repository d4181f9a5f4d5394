//! Little-endian binary containers for grids, sequences, codebooks, feature
//! dumps and voxel volumes.
//!
//! Every file starts with a four byte magic and a version byte. Corpus files
//! hold a u32 item count followed by the single-item encoding minus its magic.

use crate::codec::CompressedSequence;
use crate::collapse::Codebook;
use crate::error::{Error, Result};
use crate::grid::{Layout, TokenGrid, MAX_AXES};
use crate::scalar::Scalar;
use crate::seqfeat::TokenFeatures;

pub const VERSION: u8 = 1;

pub const GRID_MAGIC: &[u8; 4] = b"MDTG";
pub const GRID_CORPUS_MAGIC: &[u8; 4] = b"MDTC";
pub const SEQ_MAGIC: &[u8; 4] = b"MDSQ";
pub const SEQ_CORPUS_MAGIC: &[u8; 4] = b"MDSC";
pub const CODEBOOK_MAGIC: &[u8; 4] = b"MDCB";
pub const FEATURES_MAGIC: &[u8; 4] = b"MDFT";
pub const VOXEL_MAGIC: &[u8; 4] = b"MDVX";

/// Boolean occupancy volume, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelVolume {
    pub dims: Vec<usize>,
    pub occupied: Vec<bool>,
}

impl VoxelVolume {
    pub fn new(dims: &[usize], occupied: Vec<bool>) -> Result<Self> {
        let layout = Layout::new(dims)?;
        if occupied.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: occupied.len(),
            });
        }
        Ok(VoxelVolume {
            dims: dims.to_vec(),
            occupied,
        })
    }
}

struct Reader<'a> {
    format: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(format: &'static str, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader {
            format,
            bytes,
            pos: 0,
        };
        if r.take(4)? != magic {
            return Err(r.bad("bad magic"));
        }
        r.version()?;
        Ok(r)
    }

    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            format: self.format,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u8()?;
        if v != VERSION {
            return Err(self.bad(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Checks that `count` items of `size` bytes remain before allocating.
    fn expect_items(&self, count: usize, size: usize) -> Result<()> {
        match count.checked_mul(size) {
            Some(n) if n <= self.bytes.len() - self.pos => Ok(()),
            _ => Err(self.bad(format!("{count} items declared but data is truncated"))),
        }
    }

    fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        self.expect_items(count, 4)?;
        (0..count).map(|_| self.u32()).collect()
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u8()? as usize;
        if ndim == 0 || ndim > MAX_AXES {
            return Err(self.bad(format!("unsupported axis count {ndim}")));
        }
        let dims: Vec<usize> = (0..ndim)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        Layout::new(&dims).map_err(|e| self.bad(e.to_string()))?;
        Ok(dims)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("value fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    out.push(dims.len() as u8);
    for &d in dims {
        put_u32(out, d);
    }
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.push(VERSION);
    out
}

fn grid_body(out: &mut Vec<u8>, grid: &TokenGrid) {
    put_dims(out, grid.dims());
    for &c in grid.classes() {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

fn read_grid_body(r: &mut Reader) -> Result<TokenGrid> {
    let dims = r.dims()?;
    let classes = r.u32s(dims.iter().product())?;
    TokenGrid::unmerged(&dims, classes).map_err(|e| r.bad(e.to_string()))
}

/// Only classes are stored; a read grid has one instance per cell.
pub fn write_grid(grid: &TokenGrid) -> Vec<u8> {
    let mut out = header(GRID_MAGIC);
    grid_body(&mut out, grid);
    out
}

pub fn read_grid(bytes: &[u8]) -> Result<TokenGrid> {
    let mut r = Reader::open("MDTG", bytes, GRID_MAGIC)?;
    let g = read_grid_body(&mut r)?;
    r.finish()?;
    Ok(g)
}

pub fn write_grids(grids: &[TokenGrid]) -> Vec<u8> {
    let mut out = header(GRID_CORPUS_MAGIC);
    put_u32(&mut out, grids.len());
    for g in grids {
        out.push(VERSION);
        grid_body(&mut out, g);
    }
    out
}

pub fn read_grids(bytes: &[u8]) -> Result<Vec<TokenGrid>> {
    let mut r = Reader::open("MDTC", bytes, GRID_CORPUS_MAGIC)?;
    let n = r.u32()? as usize;
    // every entry needs at least a version, an axis count and one extent
    r.expect_items(n, 6)?;
    let mut grids = Vec::with_capacity(n);
    for _ in 0..n {
        r.version()?;
        grids.push(read_grid_body(&mut r)?);
    }
    r.finish()?;
    Ok(grids)
}

fn seq_body(out: &mut Vec<u8>, seq: &CompressedSequence) {
    put_dims(out, &seq.dims);
    put_u32(out, seq.tokens.len());
    for &t in &seq.tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
}

fn read_seq_body(r: &mut Reader) -> Result<CompressedSequence> {
    let dims = r.dims()?;
    let n = r.u32()? as usize;
    let tokens = r.u32s(n)?;
    Ok(CompressedSequence { dims, tokens })
}

pub fn write_sequence(seq: &CompressedSequence) -> Vec<u8> {
    let mut out = header(SEQ_MAGIC);
    seq_body(&mut out, seq);
    out
}

pub fn read_sequence(bytes: &[u8]) -> Result<CompressedSequence> {
    let mut r = Reader::open("MDSQ", bytes, SEQ_MAGIC)?;
    let s = read_seq_body(&mut r)?;
    r.finish()?;
    Ok(s)
}

pub fn write_sequences(seqs: &[CompressedSequence]) -> Vec<u8> {
    let mut out = header(SEQ_CORPUS_MAGIC);
    put_u32(&mut out, seqs.len());
    for s in seqs {
        out.push(VERSION);
        seq_body(&mut out, s);
    }
    out
}

pub fn read_sequences(bytes: &[u8]) -> Result<Vec<CompressedSequence>> {
    let mut r = Reader::open("MDSC", bytes, SEQ_CORPUS_MAGIC)?;
    let n = r.u32()? as usize;
    r.expect_items(n, 10)?;
    let mut seqs = Vec::with_capacity(n);
    for _ in 0..n {
        r.version()?;
        seqs.push(read_seq_body(&mut r)?);
    }
    r.finish()?;
    Ok(seqs)
}

pub fn write_codebook<T: Scalar>(codebook: &Codebook<T>) -> Vec<u8> {
    let mut out = header(CODEBOOK_MAGIC);
    put_u32(&mut out, codebook.len());
    put_u32(&mut out, codebook.dim());
    for &x in codebook.as_slice() {
        out.extend_from_slice(&x.to_f32_lossy().to_le_bytes());
    }
    out
}

pub fn read_codebook<T: Scalar>(bytes: &[u8]) -> Result<Codebook<T>> {
    let mut r = Reader::open("MDCB", bytes, CODEBOOK_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let total = count
        .checked_mul(dim)
        .ok_or_else(|| r.bad("codebook size overflows"))?;
    r.expect_items(total, 4)?;
    let data = (0..total)
        .map(|_| r.f32().map(|x| T::from_f32(x).unwrap_or_else(T::nan)))
        .collect::<Result<Vec<T>>>()?;
    r.finish()?;
    Codebook::new(dim, data).map_err(|e| r.bad(e.to_string()))
}

/// Writes anchor, next-anchor and integrated encodings of every token as
/// f32. `width` is the encoding length, needed when there are no tokens.
pub fn write_features<T: Scalar>(features: &[TokenFeatures<T>], width: usize) -> Vec<u8> {
    let mut out = header(FEATURES_MAGIC);
    put_u32(&mut out, features.len());
    put_u32(&mut out, width);
    for f in features {
        for v in [&f.anchor_pe, &f.next_anchor_pe, &f.ipe] {
            assert_eq!(v.len(), width, "feature width mismatch");
            for &x in v.iter() {
                out.extend_from_slice(&x.to_f32_lossy().to_le_bytes());
            }
        }
    }
    out
}

pub fn read_features(bytes: &[u8]) -> Result<Vec<TokenFeatures<f32>>> {
    let (features, used) = feature_block(bytes)?;
    if used != bytes.len() {
        return Err(Error::Malformed {
            format: "MDFT",
            reason: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(features)
}

/// Reads back-to-back feature dumps, one per sequence of a corpus.
pub fn read_feature_blocks(mut bytes: &[u8]) -> Result<Vec<Vec<TokenFeatures<f32>>>> {
    let mut blocks = Vec::new();
    while !bytes.is_empty() {
        let (features, used) = feature_block(bytes)?;
        blocks.push(features);
        bytes = &bytes[used..];
    }
    Ok(blocks)
}

fn feature_block(bytes: &[u8]) -> Result<(Vec<TokenFeatures<f32>>, usize)> {
    let mut r = Reader::open("MDFT", bytes, FEATURES_MAGIC)?;
    let n = r.u32()? as usize;
    let width = r.u32()? as usize;
    r.expect_items(n, width.saturating_mul(12))?;
    let vec = |r: &mut Reader| (0..width).map(|_| r.f32()).collect::<Result<Vec<f32>>>();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(TokenFeatures {
            anchor_pe: vec(&mut r)?,
            next_anchor_pe: vec(&mut r)?,
            ipe: vec(&mut r)?,
        });
    }
    Ok((out, r.pos))
}

/// Occupancy bits are packed eight per byte, least significant bit first.
pub fn write_voxels(volume: &VoxelVolume) -> Vec<u8> {
    let mut out = header(VOXEL_MAGIC);
    put_dims(&mut out, &volume.dims);
    for chunk in volume.occupied.chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |b, (i, &on)| b | (u8::from(on) << i));
        out.push(byte);
    }
    out
}

pub fn read_voxels(bytes: &[u8]) -> Result<VoxelVolume> {
    let mut r = Reader::open("MDVX", bytes, VOXEL_MAGIC)?;
    let dims = r.dims()?;
    let n: usize = dims.iter().product();
    let packed = r.take(n.div_ceil(8))?;
    r.finish()?;
    let occupied = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(VoxelVolume { dims, occupied })
}
