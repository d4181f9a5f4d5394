//! Independent reference implementations and random inputs for the test
//! suites. Nothing here calls into the library's counting, merging or
//! placement code; grids are only read through their raw label arrays.

use std::collections::BTreeMap;

use mdbpe::TokenGrid;
use rand::Rng;

/// Constellation key with the anchor displacement as plain integers.
pub type PairKey = (u32, u32, Vec<i64>);

fn coords(dims: &[usize], mut index: usize) -> Vec<i64> {
    let mut out = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        out[axis] = (index % dims[axis]) as i64;
        index /= dims[axis];
    }
    out
}

fn index(dims: &[usize], c: &[i64]) -> Option<usize> {
    let mut i = 0usize;
    for (&x, &d) in c.iter().zip(dims) {
        if x < 0 || x as usize >= d {
            return None;
        }
        i = i * d + x as usize;
    }
    Some(i)
}

/// Counts, for every ordered pair of distinct instances `(p, q)` where some
/// cell of `q` lies one step forward along a listed axis from a cell of `p`,
/// the key `(class p, class q, anchor p - anchor q)`. Anchors are the
/// lexicographically smallest coordinates of each instance.
pub fn brute_force_counts(grid: &TokenGrid, axes: &[usize]) -> BTreeMap<PairKey, u64> {
    let dims = grid.dims();
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (cell, &id) in grid.ids().iter().enumerate() {
        members.entry(id).or_default().push(cell);
    }
    let anchor: BTreeMap<u32, Vec<i64>> = members
        .iter()
        .map(|(&id, cells)| (id, cells.iter().map(|&c| coords(dims, c)).min().unwrap()))
        .collect();
    let class = |id: u32| grid.classes()[members[&id][0]];

    let mut out = BTreeMap::new();
    for (&p, p_cells) in &members {
        for &q in members.keys() {
            if p == q {
                continue;
            }
            let touches = p_cells.iter().any(|&c| {
                axes.iter().any(|&axis| {
                    let mut n = coords(dims, c);
                    n[axis] += 1;
                    index(dims, &n).is_some_and(|i| grid.ids()[i] == q)
                })
            });
            if touches {
                let v: Vec<i64> = anchor[&p].iter().zip(&anchor[&q]).map(|(a, b)| a - b).collect();
                *out.entry((class(p), class(q), v)).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Neighbour checks a full scan performs: every cell against its forward
/// neighbour along each listed axis.
pub fn expected_pair_visits(dims: &[usize], axes: &[usize]) -> u64 {
    let cells: usize = dims.iter().product();
    axes.iter()
        .map(|&a| (cells / dims[a] * (dims[a] - 1)) as u64)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BpeMerge {
    pub left: u32,
    pub right: u32,
    pub new: u32,
    /// Symbols covered by the left token.
    pub left_width: usize,
}

/// Textbook byte pair encoding over symbol strings. Every adjacent pair is
/// counted; the most frequent pair (lexicographically smallest among ties)
/// is replaced left to right without overlaps; training stops once no pair
/// occurs twice.
pub fn classic_bpe(
    strings: &[Vec<u32>],
    base: u32,
    max_merges: usize,
) -> (Vec<BpeMerge>, Vec<Vec<u32>>) {
    let mut strings = strings.to_vec();
    let mut width: BTreeMap<u32, usize> = (0..base).map(|c| (c, 1)).collect();
    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for s in &strings {
            for w in s.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        let best = counts.iter().fold(None, |best: Option<(&(u32, u32), u64)>, (k, &c)| {
            match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((k, c)),
            }
        });
        let Some((&(left, right), count)) = best else { break };
        if count <= 1 {
            break;
        }
        let new = base + merges.len() as u32;
        for s in &mut strings {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == left && s[i + 1] == right {
                    out.push(new);
                    i += 2;
                } else {
                    out.push(s[i]);
                    i += 1;
                }
            }
            *s = out;
        }
        width.insert(new, width[&left] + width[&right]);
        merges.push(BpeMerge {
            left,
            right,
            new,
            left_width: width[&left],
        });
    }
    (merges, strings)
}

/// Classes where each cell, with probability `copy`, repeats the class of a
/// random earlier neighbour, giving the runs and blobs training can merge.
pub fn blobby_classes(rng: &mut impl Rng, dims: &[usize], classes: u32, copy: f64) -> Vec<u32> {
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(n);
    for cell in 0..n {
        let c = coords(dims, cell);
        let back: Vec<usize> = (0..dims.len())
            .filter_map(|axis| {
                let mut b = c.clone();
                b[axis] -= 1;
                index(dims, &b)
            })
            .collect();
        if !back.is_empty() && rng.gen_bool(copy) {
            out.push(out[back[rng.gen_range(0..back.len())]]);
        } else {
            out.push(rng.gen_range(0..classes));
        }
    }
    out
}

pub fn blobby_grid(rng: &mut impl Rng, dims: &[usize], classes: u32, copy: f64) -> TokenGrid {
    TokenGrid::from_classes(dims, blobby_classes(rng, dims, classes, copy), classes).unwrap()
}

/// Random extents with `ndim` axes, each in `1..=max`.
pub fn random_dims(rng: &mut impl Rng, ndim: usize, max: usize) -> Vec<usize> {
    (0..ndim).map(|_| rng.gen_range(1..=max)).collect()
}

/// Cubic occupancy volume of side `side` holding one to three solid
/// axis-aligned cuboids, with at most `max_fraction` of the cells occupied.
pub fn cuboid_volume(rng: &mut impl Rng, side: usize, max_fraction: f64) -> Vec<bool> {
    let n = side * side * side;
    loop {
        let mut occ = vec![false; n];
        for _ in 0..rng.gen_range(1..=3) {
            let ext: Vec<usize> = (0..3).map(|_| rng.gen_range(2..=side / 2)).collect();
            let lo: Vec<usize> = ext.iter().map(|&e| rng.gen_range(0..=side - e)).collect();
            for z in lo[0]..lo[0] + ext[0] {
                for y in lo[1]..lo[1] + ext[1] {
                    for x in lo[2]..lo[2] + ext[2] {
                        occ[(z * side + y) * side + x] = true;
                    }
                }
            }
        }
        let filled = occ.iter().filter(|&&o| o).count();
        if filled as f64 <= max_fraction * n as f64 {
            return occ;
        }
    }
}

/// `clusters` groups of `per_cluster` vectors in `dim` dimensions. Points
/// lie within `radius` of their center and centers are at least
/// `separation` apart. Returns the row-major vectors and each vector's
/// ground-truth cluster.
pub fn clustered_codebook(
    rng: &mut impl Rng,
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    radius: f64,
    separation: f64,
) -> (Vec<f64>, Vec<usize>) {
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let span = separation * clusters as f64;
    while centers.len() < clusters {
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-span..span)).collect();
        let far = centers.iter().all(|o| {
            o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
        });
        if far {
            centers.push(c);
        }
    }
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..per_cluster {
        for (k, c) in centers.iter().enumerate() {
            // uniform direction, radius scaled into the ball
            let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let r = radius * rng.gen_range(0.0..1.0);
            data.extend(c.iter().zip(&dir).map(|(ci, d)| ci + d / norm * r));
            truth.push(k);
        }
    }
    (data, truth)
}
