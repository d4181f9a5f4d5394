//! Adapters from raw data to token grids.

use crate::error::{Error, Result};
use crate::format::{self, VoxelVolume};
use crate::grid::TokenGrid;

pub const GREYSCALE_BASE: u32 = 256;
pub const COLOR_DIVISOR: u8 = 26;

/// How raw data is mapped to classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestSpec {
    /// Intensity is the class, 256 base classes.
    Greyscale,
    /// Each channel is divided by `divisor` and the three quotients are
    /// combined as digits of the per-channel level count.
    QuantizedColor { divisor: u8 },
    /// Occupied voxels are class 1, empty ones class 0.
    VoxelOccupancy,
    /// Classes are taken as-is and checked against `base_size`.
    RawIndices { base_size: u32 },
}

impl IngestSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IngestSpec::QuantizedColor { divisor: 0 } => {
                Err(Error::InvalidParameter("color divisor must be at least 1".into()))
            }
            IngestSpec::RawIndices { base_size: 0 } => {
                Err(Error::InvalidParameter("base size must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of base classes the produced grids draw from.
    pub fn base_size(&self) -> u32 {
        match *self {
            IngestSpec::Greyscale => GREYSCALE_BASE,
            IngestSpec::QuantizedColor { divisor } => color_levels(divisor).pow(3),
            IngestSpec::VoxelOccupancy => 2,
            IngestSpec::RawIndices { base_size } => base_size,
        }
    }
}

fn color_levels(divisor: u8) -> u32 {
    255 / u32::from(divisor.max(1)) + 1
}

pub fn greyscale_to_grid(height: usize, width: usize, pixels: &[u16]) -> Result<TokenGrid> {
    let classes = pixels.iter().map(|&p| u32::from(p)).collect();
    TokenGrid::from_classes(&[height, width], classes, GREYSCALE_BASE)
}

/// Class `(R/26)*100 + (G/26)*10 + B/26` for the default divisor.
pub fn quantize_color_to_grid(height: usize, width: usize, rgb: &[[u8; 3]]) -> Result<TokenGrid> {
    quantize_color_with(height, width, rgb, COLOR_DIVISOR)
}

pub fn quantize_color_with(
    height: usize,
    width: usize,
    rgb: &[[u8; 3]],
    divisor: u8,
) -> Result<TokenGrid> {
    let spec = IngestSpec::QuantizedColor { divisor };
    spec.validate()?;
    let levels = color_levels(divisor);
    let d = u32::from(divisor);
    let classes = rgb
        .iter()
        .map(|&[r, g, b]| {
            (u32::from(r) / d * levels + u32::from(g) / d) * levels + u32::from(b) / d
        })
        .collect();
    TokenGrid::from_classes(&[height, width], classes, spec.base_size())
}

pub fn voxels_to_grid(volume: &VoxelVolume) -> Result<TokenGrid> {
    if volume.dims.len() != 3 {
        return Err(Error::AxisMismatch {
            expected: 3,
            actual: volume.dims.len(),
        });
    }
    let classes = volume.occupied.iter().map(|&o| u32::from(o)).collect();
    TokenGrid::from_classes(&volume.dims, classes, 2)
}

pub fn raw_indices_to_grid(dims: &[usize], indices: Vec<u32>, base_size: u32) -> Result<TokenGrid> {
    TokenGrid::from_classes(dims, indices, base_size)
}

/// Decoded binary PGM (one channel) or PPM (three channels) image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub samples: Vec<u16>,
}

impl Image {
    pub fn to_grid(&self, spec: &IngestSpec) -> Result<TokenGrid> {
        match (*spec, self.channels) {
            (IngestSpec::Greyscale, 1) => greyscale_to_grid(self.height, self.width, &self.samples),
            (IngestSpec::QuantizedColor { divisor }, 3) => {
                if self.maxval > 255 {
                    return Err(Error::InvalidParameter(
                        "colour images must use 8-bit samples".into(),
                    ));
                }
                let rgb: Vec<[u8; 3]> = self
                    .samples
                    .chunks_exact(3)
                    .map(|c| [c[0] as u8, c[1] as u8, c[2] as u8])
                    .collect();
                quantize_color_with(self.height, self.width, &rgb, divisor)
            }
            (IngestSpec::RawIndices { base_size }, 1) => raw_indices_to_grid(
                &[self.height, self.width],
                self.samples.iter().map(|&s| u32::from(s)).collect(),
                base_size,
            ),
            (spec, channels) => Err(Error::InvalidParameter(format!(
                "{spec:?} cannot ingest a {channels}-channel image"
            ))),
        }
    }
}

/// Parses binary PGM (`P5`) and PPM (`P6`) images.
pub fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let bad = |reason: &str| Error::Malformed {
        format: "PNM",
        reason: reason.to_string(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("expected P5 or P6 header")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header must end in a single whitespace byte"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must lie in 1..=65535"));
    }
    let wide = maxval > 255;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("image too large"))?;
    let data = &bytes[pos..];
    let expected = if wide { count * 2 } else { count };
    if data.len() != expected {
        return Err(bad("pixel data length does not match the header"));
    }
    let samples: Vec<u16> = if wide {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data.iter().map(|&b| u16::from(b)).collect()
    };
    if samples.iter().any(|&s| usize::from(s) > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Image {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Reads an IDX image file (the MNIST distribution format) as greyscale grids.
pub fn read_idx_images(bytes: &[u8]) -> Result<Vec<TokenGrid>> {
    let bad = |reason: String| Error::Malformed {
        format: "IDX",
        reason,
    };
    let be = |i: usize| -> Result<usize> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| bad("truncated header".into()))
    };
    if be(0)? as u32 != IDX_IMAGES {
        return Err(bad("not an unsigned-byte rank-3 IDX file".into()));
    }
    let (n, rows, cols) = (be(1)?, be(2)?, be(3)?);
    let size = rows * cols;
    let data = &bytes[16..];
    let total = n.checked_mul(size).ok_or_else(|| bad("image count overflows".into()))?;
    if data.len() != total {
        return Err(bad(format!("expected {total} pixel bytes, found {}", data.len())));
    }
    if size == 0 {
        return Err(bad("zero image extent".into()));
    }
    data.chunks_exact(size)
        .map(|img| {
            TokenGrid::from_classes(
                &[rows, cols],
                img.iter().map(|&p| u32::from(p)).collect(),
                GREYSCALE_BASE,
            )
        })
        .collect()
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bad = |reason: &str| Error::Malformed {
        format: "IDX",
        reason: reason.to_string(),
    };
    let header = bytes.get(..8).ok_or_else(|| bad("truncated header"))?;
    if u32::from_be_bytes(header[..4].try_into().unwrap()) != IDX_LABELS {
        return Err(bad("not an unsigned-byte rank-1 IDX file"));
    }
    let n = u32::from_be_bytes(header[4..].try_into().unwrap()) as usize;
    if bytes.len() - 8 != n {
        return Err(bad("label count does not match the header"));
    }
    Ok(bytes[8..].to_vec())
}

/// Converts any supported input file into grids, recognising it by its
/// leading bytes: PGM/PPM images, MDTG/MDTC grids, MDVX volumes or IDX
/// image files.
pub fn ingest_bytes(bytes: &[u8], spec: &IngestSpec) -> Result<Vec<TokenGrid>> {
    spec.validate()?;
    let check_base = |grids: Vec<TokenGrid>| -> Result<Vec<TokenGrid>> {
        let base = spec.base_size();
        for g in &grids {
            if let Some(&c) = g.classes().iter().find(|&&c| c >= base) {
                return Err(Error::ClassOutOfRange { class: c, size: base });
            }
        }
        Ok(grids)
    };
    match bytes.get(..4) {
        Some(m) if m == format::GRID_MAGIC => check_base(vec![format::read_grid(bytes)?]),
        Some(m) if m == format::GRID_CORPUS_MAGIC => check_base(format::read_grids(bytes)?),
        Some(m) if m == format::VOXEL_MAGIC => {
            if *spec != IngestSpec::VoxelOccupancy {
                return Err(Error::InvalidParameter(
                    "voxel volumes need the voxel ingest mode".into(),
                ));
            }
            Ok(vec![voxels_to_grid(&format::read_voxels(bytes)?)?])
        }
        Some(m) if m == IDX_IMAGES.to_be_bytes() => check_base(read_idx_images(bytes)?),
        Some([b'P', b'5' | b'6', ..]) => Ok(vec![parse_pnm(bytes)?.to_grid(spec)?]),
        _ => Err(Error::Malformed {
            format: "input",
            reason: "unrecognised file type".into(),
        }),
    }
}
