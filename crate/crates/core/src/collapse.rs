//! Lossy codebook collapse and corpus pruning ahead of training.
//!
//! Codebook vectors are clustered with farthest point sampling followed by
//! Lloyd's k-means, every class is snapped to its nearest center, and the
//! grids with the longest compressed sequences can be dropped from a corpus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Embedding vectors indexed by token class, stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("codebook dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                expected: data.len() / dim * dim + dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("codebook entries must be finite".into()));
        }
        Ok(Codebook { dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for v in self.vectors() {
            for (a, &x) in m.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = T::from_usize_lossy(self.len());
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Index of the nearest center to `v`, ties to the lowest index.
fn nearest<T: Scalar>(centers: &Codebook<T>, v: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, c) in centers.vectors().enumerate() {
        let d = squared_distance(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_k(k: usize, size: usize) -> Result<()> {
    if k == 0 || k > size {
        return Err(Error::InvalidK { k, size });
    }
    Ok(())
}

/// Picks `k` well-spread codebook indices. The first is the vector farthest
/// from the codebook mean; each next one maximizes its distance to the
/// closest already chosen. Ties go to the lowest index.
pub fn farthest_point_sample<T: Scalar>(codebook: &Codebook<T>, k: usize) -> Result<Vec<usize>> {
    check_k(k, codebook.len())?;
    let mean = codebook.mean();
    let mut dist: Vec<T> = codebook
        .vectors()
        .map(|v| squared_distance(v, &mean))
        .collect();
    let mut chosen = vec![false; codebook.len()];
    let mut seeds = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &d) in dist.iter().enumerate() {
            if !chosen[i] && best.is_none_or(|b| d > dist[b]) {
                best = Some(i);
            }
        }
        let s = best.expect("k within codebook size");
        chosen[s] = true;
        seeds.push(s);
        let seed = codebook.vector(s);
        if seeds.len() == 1 {
            dist = codebook
                .vectors()
                .map(|v| squared_distance(v, seed))
                .collect();
        } else {
            for (d, v) in dist.iter_mut().zip(codebook.vectors()) {
                let e = squared_distance(v, seed);
                if e < *d {
                    *d = e;
                }
            }
        }
    }
    Ok(seeds)
}

/// Outcome of Lloyd's iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans<T> {
    pub centers: Codebook<T>,
    /// Nearest final center of every codebook vector.
    pub assign: Vec<u32>,
    pub iterations: usize,
    /// Sum of squared distances to the nearest center, before each update
    /// and once more for the final centers.
    pub objective: Vec<T>,
}

pub fn kmeans_refine<T: Scalar>(
    codebook: &Codebook<T>,
    seeds: &[usize],
    max_iters: usize,
    tol: T,
) -> Result<KMeans<T>> {
    check_k(seeds.len(), codebook.len())?;
    if let Some(&s) = seeds.iter().find(|&&s| s >= codebook.len()) {
        return Err(Error::InvalidParameter(format!("seed index {s} out of range")));
    }
    let dim = codebook.dim();
    let k = seeds.len();
    let mut centers = Codebook {
        dim,
        data: seeds
            .iter()
            .flat_map(|&s| codebook.vector(s).iter().copied())
            .collect(),
    };
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut assign = vec![0u32; codebook.len()];
    while iterations < max_iters {
        objective.push(assign_all(codebook, &centers, &mut assign));
        iterations += 1;

        let mut sums = vec![T::zero(); k * dim];
        let mut counts = vec![0usize; k];
        for (v, &a) in codebook.vectors().zip(&assign) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut shift = T::zero();
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let n = T::from_usize_lossy(counts[c]);
            let new: Vec<T> = sums[c * dim..(c + 1) * dim].iter().map(|&s| s / n).collect();
            let old = &mut centers.data[c * dim..(c + 1) * dim];
            shift = shift.max(squared_distance(old, &new).sqrt());
            old.copy_from_slice(&new);
        }
        if shift < tol {
            break;
        }
    }
    objective.push(assign_all(codebook, &centers, &mut assign));
    Ok(KMeans {
        centers,
        assign,
        iterations,
        objective,
    })
}

fn assign_all<T: Scalar>(codebook: &Codebook<T>, centers: &Codebook<T>, out: &mut [u32]) -> T {
    let mut total = T::zero();
    for (v, a) in codebook.vectors().zip(out.iter_mut()) {
        let (i, d) = nearest(centers, v);
        *a = i as u32;
        total += d;
    }
    total
}

/// Collapsed class of every original class plus the centers themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct CollapseMap<T> {
    pub centers: Codebook<T>,
    pub assign: Vec<u32>,
}

impl<T: Scalar> CollapseMap<T> {
    /// Assigns every codebook vector to its nearest center.
    pub fn from_centers(codebook: &Codebook<T>, centers: Codebook<T>) -> Result<Self> {
        if centers.dim() != codebook.dim() {
            return Err(Error::LengthMismatch {
                expected: codebook.dim(),
                actual: centers.dim(),
            });
        }
        check_k(centers.len(), usize::MAX)?;
        let mut assign = vec![0; codebook.len()];
        assign_all(codebook, &centers, &mut assign);
        Ok(CollapseMap { centers, assign })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

/// Farthest point sampling, then k-means, then nearest-center assignment.
pub fn collapse_codebook<T: Scalar>(
    codebook: &Codebook<T>,
    k: usize,
    max_iters: usize,
    tol: T,
) -> Result<CollapseMap<T>> {
    let seeds = farthest_point_sample(codebook, k)?;
    let km = kmeans_refine(codebook, &seeds, max_iters, tol)?;
    Ok(CollapseMap {
        centers: km.centers,
        assign: km.assign,
    })
}

/// Replaces every class by its collapsed class. The result has one instance
/// per cell.
pub fn snap<T: Scalar>(corpus: &[TokenGrid], map: &CollapseMap<T>) -> Result<Vec<TokenGrid>> {
    corpus
        .par_iter()
        .map(|g| {
            let classes = g
                .classes()
                .iter()
                .map(|&c| {
                    map.assign.get(c as usize).copied().ok_or(Error::ClassOutOfRange {
                        class: c,
                        size: map.assign.len() as u32,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            TokenGrid::unmerged(g.dims(), classes)
        })
        .collect()
}

/// Number of grids [`prune`] removes from a corpus of `n`.
pub fn prune_count(n: usize, fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "prune fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let drop = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(drop.min(n))
}

/// Indices of the grids kept after dropping the `ceil(fraction * n)` longest
/// sequences, in original order. Among equal lengths later indices go first.
pub fn prune(lengths: &[usize], fraction: f64) -> Result<Vec<usize>> {
    let drop = prune_count(lengths.len(), fraction)?;
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(b.cmp(&a)));
    let mut removed = vec![false; lengths.len()];
    for &i in &order[..drop] {
        removed[i] = true;
    }
    Ok((0..lengths.len()).filter(|&i| !removed[i]).collect())
}

#[derive(Serialize, Deserialize)]
struct MapDoc {
    k: usize,
    assign: Vec<u32>,
    centers: Vec<Vec<f64>>,
}

pub fn write_collapse_map<T: Scalar>(map: &CollapseMap<T>) -> Vec<u8> {
    let doc = MapDoc {
        k: map.k(),
        assign: map.assign.clone(),
        centers: map
            .centers
            .vectors()
            .map(|v| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
            .collect(),
    };
    let mut out = serde_json::to_vec(&doc).expect("serializable map");
    out.push(b'\n');
    out
}

pub fn read_collapse_map<T: Scalar>(bytes: &[u8]) -> Result<CollapseMap<T>> {
    let bad = |reason: String| Error::Malformed {
        format: "collapse map",
        reason,
    };
    let doc: MapDoc = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
    if doc.k != doc.centers.len() || doc.k == 0 {
        return Err(bad(format!("k = {} but {} centers", doc.k, doc.centers.len())));
    }
    if let Some(&a) = doc.assign.iter().find(|&&a| a as usize >= doc.k) {
        return Err(bad(format!("assignment {a} not below k = {}", doc.k)));
    }
    let rows: Vec<Vec<T>> = doc
        .centers
        .iter()
        .map(|r| r.iter().map(|&x| T::from_f64(x).unwrap_or_else(T::nan)).collect())
        .collect();
    let centers = Codebook::from_rows(&rows).map_err(|e| bad(e.to_string()))?;
    Ok(CollapseMap {
        centers,
        assign: doc.assign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Codebook<f64> {
        Codebook::new(1, points.to_vec()).unwrap()
    }

    #[test]
    fn fps_examples() {
        let cb = line(&[0.0, 10.0, 1.0, 9.0]);
        assert_eq!(farthest_point_sample(&cb, 2).unwrap(), vec![0, 1]);
        assert_eq!(farthest_point_sample(&cb, 1).unwrap(), vec![0]);
        let mut all = farthest_point_sample(&cb, 4).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(
            farthest_point_sample(&cb, 5),
            Err(Error::InvalidK { k: 5, size: 4 })
        );
        assert_eq!(
            farthest_point_sample(&cb, 0),
            Err(Error::InvalidK { k: 0, size: 4 })
        );
    }

    #[test]
    fn kmeans_fixed_points() {
        let cb = line(&[0.0, 10.0, 1.0, 9.0]);
        let km = kmeans_refine(&cb, &[0, 1], 0, 1e-6).unwrap();
        assert_eq!(km.centers.as_slice(), &[0.0, 10.0]);
        assert_eq!(km.iterations, 0);

        let km = kmeans_refine(&cb, &[0, 1], 100, 1e-6).unwrap();
        assert_eq!(km.centers.as_slice(), &[0.5, 9.5]);
        assert_eq!(km.assign, vec![0, 1, 0, 1]);
        assert_eq!(km.objective.last(), Some(&1.0));

        let dup = line(&[3.0, 3.0, 7.0]);
        let km = kmeans_refine(&dup, &[0, 2], 100, 1e-6).unwrap();
        assert_eq!(km.iterations, 1);
        assert_eq!(km.centers.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn kmeans_empty_cluster_keeps_center() {
        // duplicate seeds: every point ties and goes to the first center
        let cb = line(&[5.0, 5.0, 0.0, 10.0]);
        let km = kmeans_refine(&cb, &[0, 1], 100, 1e-6).unwrap();
        assert_eq!(km.centers.as_slice(), &[5.0, 5.0]);
        assert_eq!(km.assign, vec![0, 0, 0, 0]);
    }

    #[test]
    fn snap_unifies_variants() {
        // B, A, A', A'' with the three A variants near one center
        let cb = Codebook::from_rows(&[
            vec![10.0, 10.0],
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, -0.1],
        ])
        .unwrap();
        let map = collapse_codebook(&cb, 2, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let (b, a, a1, a2) = (0, 1, 2, 3);
        let seq = vec![b, a1, b, a2, b, a, b, a, b, a2];
        let g = TokenGrid::from_classes(&[1, 10], seq, 4).unwrap();
        let out = snap(&[g], &map).unwrap();
        let cb_ = map.assign[b as usize];
        let ca = map.assign[a as usize];
        assert_ne!(cb_, ca);
        assert_eq!(
            out[0].classes(),
            &[cb_, ca, cb_, ca, cb_, ca, cb_, ca, cb_, ca]
        );
        assert_eq!(out[0].instance_count(), 10);

        let again = CollapseMap::from_centers(&map.centers, map.centers.clone()).unwrap();
        assert_eq!(snap(&out, &again).unwrap(), out);
    }

    #[test]
    fn snap_identity_and_errors() {
        let cb = line(&[0.0, 1.0, 2.0]);
        let map = CollapseMap::from_centers(&cb, cb.clone()).unwrap();
        let g = TokenGrid::from_classes(&[2, 2], vec![2, 1, 0, 1], 3).unwrap();
        assert_eq!(snap(std::slice::from_ref(&g), &map).unwrap(), vec![g]);
        let bad = TokenGrid::unmerged(&[1, 1], vec![3]).unwrap();
        assert!(matches!(snap(&[bad], &map), Err(Error::ClassOutOfRange { class: 3, .. })));
    }

    #[test]
    fn prune_examples() {
        let lengths: Vec<usize> = (0..100).map(|i| (i * 37) % 100).collect();
        let kept = prune(&lengths, 0.05).unwrap();
        assert_eq!(kept.len(), 95);
        assert!(kept.iter().all(|&i| lengths[i] < 95));

        assert_eq!(prune(&[4; 20], 0.05).unwrap(), (0..19).collect::<Vec<_>>());
        assert_eq!(prune(&[3, 1, 2], 0.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(prune_count(100, 0.07).unwrap(), 7);
        assert_eq!(prune_count(3, 0.5).unwrap(), 2);
        assert!(prune(&[1], 1.0).is_err());
        assert!(prune(&[1], -0.1).is_err());
        assert!(prune(&[1], f64::NAN).is_err());
    }

    #[test]
    fn map_json_roundtrip() {
        let cb = line(&[0.0, 10.0, 1.0, 9.0]);
        let map = collapse_codebook(&cb, 2, 100, 1e-6).unwrap();
        let text = write_collapse_map(&map);
        let v: serde_json::Value = serde_json::from_slice(&text).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["assign"], serde_json::json!([0, 1, 0, 1]));
        assert_eq!(read_collapse_map::<f64>(&text).unwrap(), map);
        assert!(read_collapse_map::<f64>(br#"{"k":1,"assign":[1],"centers":[[0]]}"#).is_err());
        assert!(read_collapse_map::<f64>(br#"{"k":2,"assign":[0],"centers":[[0]]}"#).is_err());
    }
}
