//! The count/replace training loop.
//!
//! Counting walks every cell in scan order and looks one step forward along
//! each configured axis. An ordered pair of distinct instances contributes once
//! per grid, keyed by both classes and the vector between their anchors.
//! Replacement is a single greedy scan per grid acting on the live labels.
//!
//! After the initial full count, the trainer keeps the table current by
//! subtracting the pairs that touch each merged instance before relabeling and
//! adding the pairs of the merged result afterwards. Pairs away from a merge
//! keep their key, so the table always equals a fresh full count.

use log::{debug, info};
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::grid::{Layout, TokenGrid};
use crate::vocab::{AxisMask, Constellation, MergeRule, Vocabulary};

/// Constellation occurrence counts aggregated over a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTable {
    counts: FxHashMap<Constellation, u64>,
    pair_visits: u64,
}

impl CountTable {
    pub fn get(&self, c: &Constellation) -> u64 {
        self.counts.get(c).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of in-bounds (cell, forward neighbour) visits made while
    /// counting. Zero for tables maintained incrementally.
    pub fn pair_visits(&self) -> u64 {
        self.pair_visits
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Constellation, &u64)> {
        self.counts.iter()
    }

    /// Entries in canonical key order.
    pub fn sorted(&self) -> Vec<(Constellation, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, &c)| (*k, c)).collect();
        v.sort_unstable();
        v
    }

    /// Adds another table's counts into this one.
    pub fn absorb(&mut self, other: CountTable) {
        for (k, c) in other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
        self.pair_visits += other.pair_visits;
    }

    fn apply_delta(&mut self, delta: FxHashMap<Constellation, i64>) {
        for (k, d) in delta {
            if d == 0 {
                continue;
            }
            let entry = self.counts.entry(k).or_insert(0);
            let updated = *entry as i64 + d;
            assert!(updated >= 0, "count for {k:?} went negative");
            if updated == 0 {
                self.counts.remove(&k);
            } else {
                *entry = updated as u64;
            }
        }
    }
}

impl FromIterator<(Constellation, u64)> for CountTable {
    fn from_iter<I: IntoIterator<Item = (Constellation, u64)>>(iter: I) -> Self {
        let mut t = CountTable::default();
        for (k, c) in iter {
            if c > 0 {
                *t.counts.entry(k).or_insert(0) += c;
            }
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainConfig {
    /// Number of merge rules to create.
    pub extra_tokens: usize,
    /// Axes that contribute a neighbour direction; `None` means all axes.
    pub neighbor_axes: Option<AxisMask>,
}

impl TrainConfig {
    pub fn new(extra_tokens: usize) -> Self {
        TrainConfig {
            extra_tokens,
            neighbor_axes: None,
        }
    }
}

/// One completed training iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeRecord {
    pub rule: MergeRule,
    /// Count of the chosen constellation when it was selected.
    pub count: u64,
    /// Replacements actually performed across the corpus.
    pub applied: usize,
    /// Corpus-wide instance count after the merge.
    pub instances: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub vocab: Vocabulary,
    /// The corpus after every rule has been applied.
    pub grids: Vec<TokenGrid>,
    pub history: Vec<MergeRecord>,
}

/// Counts constellations over `corpus` using the axes of `vocab`.
pub fn count_constellations(corpus: &[TokenGrid], vocab: &Vocabulary) -> Result<CountTable> {
    for g in corpus {
        check_grid(g, vocab)?;
    }
    let axes = vocab.axes();
    Ok(corpus
        .par_iter()
        .map(|g| count_grid(g, axes))
        .reduce(CountTable::default, |mut a, b| {
            a.absorb(b);
            a
        }))
}

fn check_grid(g: &TokenGrid, vocab: &Vocabulary) -> Result<()> {
    if g.ndim() != vocab.ndim() {
        return Err(Error::AxisMismatch {
            expected: vocab.ndim(),
            actual: g.ndim(),
        });
    }
    let size = vocab.len();
    match g.classes().iter().find(|&&c| c >= size) {
        Some(&class) => Err(Error::ClassOutOfRange { class, size }),
        None => Ok(()),
    }
}

/// First cell of every id; ids are always below the cell count.
fn anchor_index(ids: &[u32]) -> Vec<u32> {
    let mut anchor = vec![u32::MAX; ids.len()];
    for (i, &id) in ids.iter().enumerate() {
        let a = &mut anchor[id as usize];
        if *a == u32::MAX {
            *a = i as u32;
        }
    }
    anchor
}

#[inline]
fn pack(p: u32, q: u32) -> u64 {
    (p as u64) << 32 | q as u64
}

#[inline]
fn unpack(k: u64) -> (u32, u32) {
    ((k >> 32) as u32, k as u32)
}

fn count_grid(g: &TokenGrid, axes: AxisMask) -> CountTable {
    let layout = g.layout();
    let ids = g.ids();
    let classes = g.classes();
    let anchor = anchor_index(ids);
    let axes: Vec<usize> = axes.axes(layout.ndim()).collect();

    let mut visits = 0u64;
    let mut used = Vec::new();
    for (cell, &p) in ids.iter().enumerate() {
        for &axis in &axes {
            if let Some(nb) = layout.forward(cell, axis) {
                visits += 1;
                let q = ids[nb];
                if p != q {
                    used.push(pack(p, q));
                }
            }
        }
    }
    used.sort_unstable();
    used.dedup();

    let mut counts = FxHashMap::default();
    for k in used {
        let key = pair_key(layout, classes, &anchor, k);
        *counts.entry(key).or_insert(0) += 1;
    }
    CountTable {
        counts,
        pair_visits: visits,
    }
}

#[inline]
fn pair_key(layout: &Layout, classes: &[u32], anchor: &[u32], k: u64) -> Constellation {
    let (p, q) = unpack(k);
    let ap = anchor[p as usize] as usize;
    let aq = anchor[q as usize] as usize;
    Constellation::new(classes[ap], classes[aq], layout.offset_between(ap, aq))
}

/// Returns the constellation with the highest count, the smallest key among
/// ties, or `None` when no count exceeds one.
pub fn select_merge(table: &CountTable) -> Option<Constellation> {
    table
        .counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .filter(|(_, &c)| c > 1)
        .map(|(k, _)| *k)
}

/// Applies `rule` to a copy of `grid` with a single greedy scan along the
/// given axes and returns it with the number of replacements made.
pub fn apply_merge(grid: &TokenGrid, rule: &MergeRule, axes: AxisMask) -> (TokenGrid, usize) {
    let mut g = grid.clone();
    let n = merge_pass(&mut g, rule, axes, None);
    (g, n)
}

/// Applies every rule of `vocab`, in order, to a grid of base classes.
pub fn apply_vocab(grid: &TokenGrid, vocab: &Vocabulary) -> Result<TokenGrid> {
    check_grid(grid, vocab)?;
    let mut g = grid.clone();
    for rule in vocab.merges() {
        merge_pass(&mut g, rule, vocab.axes(), None);
    }
    Ok(g)
}

struct PassState {
    anchor: Vec<u32>,
    /// Cells grouped by id: `cells[start[id]..start[id + 1]]`.
    start: Vec<u32>,
    cells: Vec<u32>,
}

impl PassState {
    fn build(ids: &[u32]) -> Self {
        let n = ids.len();
        let mut start = vec![0u32; n + 1];
        for &id in ids {
            start[id as usize + 1] += 1;
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut cells = vec![0u32; n];
        for (i, &id) in ids.iter().enumerate() {
            cells[fill[id as usize] as usize] = i as u32;
            fill[id as usize] += 1;
        }
        PassState {
            anchor: anchor_index(ids),
            start,
            cells,
        }
    }

    fn members(&self, id: u32) -> &[u32] {
        &self.cells[self.start[id as usize] as usize..self.start[id as usize + 1] as usize]
    }
}

/// Ordered instance pairs (along the configured axes) with at least one
/// endpoint among `members`' cells.
fn touching_pairs(
    layout: &Layout,
    ids: &[u32],
    axes: &[usize],
    members: &[&[u32]],
    out: &mut Vec<u64>,
) {
    out.clear();
    for cells in members {
        for &c in cells.iter() {
            let c = c as usize;
            let s = ids[c];
            for &axis in axes {
                if let Some(f) = layout.forward(c, axis) {
                    if ids[f] != s {
                        out.push(pack(s, ids[f]));
                    }
                }
                if let Some(b) = layout.backward(c, axis) {
                    if ids[b] != s {
                        out.push(pack(ids[b], s));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
}

fn merge_pass(
    grid: &mut TokenGrid,
    rule: &MergeRule,
    axes: AxisMask,
    mut delta: Option<&mut FxHashMap<Constellation, i64>>,
) -> usize {
    let c = rule.constellation;
    let (layout, classes, ids) = grid.labels_mut();
    let layout = *layout;
    let axes: Vec<usize> = axes.axes(layout.ndim()).collect();
    let mut state: Option<PassState> = None;
    let mut scratch = Vec::new();
    let mut merged = 0;

    for g in 0..layout.len() {
        for &axis in &axes {
            // re-read: an earlier axis may have merged this cell already
            if classes[g] != c.class_p {
                break;
            }
            let Some(nb) = layout.forward(g, axis) else {
                continue;
            };
            if classes[nb] != c.class_n {
                continue;
            }
            let (p, q) = (ids[g], ids[nb]);
            if p == q {
                continue;
            }
            let st = state.get_or_insert_with(|| PassState::build(ids));
            let (ap, aq) = (st.anchor[p as usize], st.anchor[q as usize]);
            if layout.offset_between(ap as usize, aq as usize) != c.v_pn {
                continue;
            }

            if let Some(d) = delta.as_deref_mut() {
                touching_pairs(&layout, ids, &axes, &[st.members(p), st.members(q)], &mut scratch);
                for &k in &scratch {
                    *d.entry(pair_key(&layout, classes, &st.anchor, k)).or_insert(0) -= 1;
                }
            }

            for &cell in st.members(p) {
                classes[cell as usize] = rule.new_class;
            }
            for &cell in st.members(q) {
                classes[cell as usize] = rule.new_class;
                ids[cell as usize] = p;
            }
            st.anchor[p as usize] = ap.min(aq);
            merged += 1;

            if let Some(d) = delta.as_deref_mut() {
                touching_pairs(&layout, ids, &axes, &[st.members(p), st.members(q)], &mut scratch);
                for &k in &scratch {
                    *d.entry(pair_key(&layout, classes, &st.anchor, k)).or_insert(0) += 1;
                }
            }
        }
    }
    merged
}

/// Trains a vocabulary of up to `config.extra_tokens` rules on `corpus`.
pub fn train(corpus: Vec<TokenGrid>, base_size: u32, config: TrainConfig) -> Result<TrainOutput> {
    train_with_progress(corpus, base_size, config, |_| {})
}

/// Like [`train`], calling `on_merge` after every completed iteration.
pub fn train_with_progress(
    mut corpus: Vec<TokenGrid>,
    base_size: u32,
    config: TrainConfig,
    mut on_merge: impl FnMut(&MergeRecord),
) -> Result<TrainOutput> {
    let ndim = corpus.first().ok_or(Error::EmptyCorpus)?.ndim();
    let axes = config.neighbor_axes.unwrap_or_else(|| AxisMask::all(ndim));
    let mut vocab = Vocabulary::with_axes(ndim, base_size, axes)?;
    let mut table = count_constellations(&corpus, &vocab)?;
    let mut instances: usize = corpus.par_iter().map(|g| g.instance_count()).sum();
    let cells: usize = corpus.iter().map(|g| g.len()).sum();
    info!(
        "training on {} grids ({} cells), {} distinct constellations",
        corpus.len(),
        cells,
        table.len()
    );

    let mut history = Vec::with_capacity(config.extra_tokens);
    while history.len() < config.extra_tokens {
        let Some(best) = select_merge(&table) else {
            info!("no constellation occurs more than once, stopping early");
            break;
        };
        let count = table.get(&best);
        let rule = vocab.push_merge(best)?;

        let (applied, delta) = corpus
            .par_iter_mut()
            .fold(
                || (0usize, FxHashMap::default()),
                |(n, mut d), g| (n + merge_pass(g, &rule, axes, Some(&mut d)), d),
            )
            .reduce(
                || (0, FxHashMap::default()),
                |(n1, d1), (n2, d2)| (n1 + n2, sum_deltas(d1, d2)),
            );
        table.apply_delta(delta);
        table.pair_visits = 0;
        instances -= applied;

        let record = MergeRecord {
            rule,
            count,
            applied,
            instances,
        };
        debug!(
            "merge {}: {:?} count {} applied {} -> {:.2}%",
            rule.new_class,
            rule.constellation,
            count,
            applied,
            100.0 * instances as f64 / cells as f64
        );
        on_merge(&record);
        history.push(record);
    }

    Ok(TrainOutput {
        vocab,
        grids: corpus,
        history,
    })
}

fn sum_deltas(
    a: FxHashMap<Constellation, i64>,
    b: FxHashMap<Constellation, i64>,
) -> FxHashMap<Constellation, i64> {
    let (mut into, from) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    for (k, v) in from {
        *into.entry(k).or_insert(0) += v;
    }
    into
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Offset;

    const A: u32 = 0;
    const B: u32 = 1;

    fn h(len: i32) -> Offset {
        Offset::from_slice(&[0, -len]).unwrap()
    }

    fn v(len: i32) -> Offset {
        Offset::from_slice(&[-len, 0]).unwrap()
    }

    fn worked_example() -> TokenGrid {
        let s = [A, A, A, A, A, B, B, A, B, A, B, B];
        TokenGrid::from_classes(&[1, 12], s.to_vec(), 2).unwrap()
    }

    fn instance_classes(g: &TokenGrid) -> Vec<u32> {
        g.instances().iter().map(|i| i.class).collect()
    }

    #[test]
    fn counts_worked_example() {
        let vocab = Vocabulary::new(2, 2).unwrap();
        let t = count_constellations(&[worked_example()], &vocab).unwrap();
        let expected: CountTable = [
            (Constellation::new(A, A, h(1)), 4),
            (Constellation::new(A, B, h(1)), 3),
            (Constellation::new(B, A, h(1)), 2),
            (Constellation::new(B, B, h(1)), 2),
        ]
        .into_iter()
        .collect();
        assert_eq!(t.sorted(), expected.sorted());
        assert_eq!(t.pair_visits(), 11);
        assert_eq!(select_merge(&t), Some(Constellation::new(A, A, h(1))));
    }

    #[test]
    fn counts_small_2d_grids() {
        let vocab = Vocabulary::new(2, 2).unwrap();
        let g = TokenGrid::from_classes(&[2, 2], vec![A; 4], 2).unwrap();
        let t = count_constellations(&[g], &vocab).unwrap();
        assert_eq!(
            t.sorted(),
            vec![
                (Constellation::new(A, A, v(1)), 2),
                (Constellation::new(A, A, h(1)), 2)
            ]
        );
        assert_eq!(t.pair_visits(), 4);

        let g = TokenGrid::from_classes(&[2, 2], vec![A, B, B, A], 2).unwrap();
        let t = count_constellations(&[g], &vocab).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|(_, &c)| c == 1));
        assert_eq!(select_merge(&t), None);
    }

    #[test]
    fn counting_rejects_bad_classes() {
        let vocab = Vocabulary::new(2, 2).unwrap();
        let g = TokenGrid::from_classes(&[1, 2], vec![0, 2], 3).unwrap();
        assert_eq!(
            count_constellations(&[g], &vocab),
            Err(Error::ClassOutOfRange { class: 2, size: 2 })
        );
    }

    #[test]
    fn select_merge_ties_and_empty() {
        assert_eq!(select_merge(&CountTable::default()), None);
        let t: CountTable = [
            (Constellation::new(3, 1, h(1)), 5),
            (Constellation::new(2, 9, h(1)), 5),
            (Constellation::new(2, 9, v(1)), 5),
            (Constellation::new(0, 0, h(1)), 4),
        ]
        .into_iter()
        .collect();
        // (2, 9, (-1, 0)) < (2, 9, (0, -1))
        assert_eq!(select_merge(&t), Some(Constellation::new(2, 9, v(1))));
    }

    #[test]
    fn apply_merge_worked_example() {
        let rule = MergeRule {
            new_class: 2,
            constellation: Constellation::new(A, A, h(1)),
        };
        let (g, n) = apply_merge(&worked_example(), &rule, AxisMask::all(2));
        assert_eq!(n, 2);
        assert_eq!(instance_classes(&g), vec![2, 2, A, B, B, A, B, A, B, B]);
        assert_eq!(&g.classes()[..4], &[2, 2, 2, 2]);
        g.validate().unwrap();
    }

    #[test]
    fn apply_merge_is_greedy_left_to_right() {
        let g = TokenGrid::from_classes(&[1, 5], vec![A; 5], 1).unwrap();
        let rule = MergeRule {
            new_class: 1,
            constellation: Constellation::new(A, A, h(1)),
        };
        let (g, n) = apply_merge(&g, &rule, AxisMask::all(2));
        assert_eq!(n, 2);
        assert_eq!(instance_classes(&g), vec![1, 1, A]);
        assert_eq!(g.ids(), &[0, 0, 2, 2, 4]);
    }

    #[test]
    fn apply_merge_without_matches_is_identity() {
        let rule = MergeRule {
            new_class: 2,
            constellation: Constellation::new(B, B, v(1)),
        };
        let (g, n) = apply_merge(&worked_example(), &rule, AxisMask::all(2));
        assert_eq!(n, 0);
        assert_eq!(g, worked_example());
    }

    #[test]
    fn train_worked_example() {
        let out = train(vec![worked_example()], 2, TrainConfig::new(3)).unwrap();
        let rules: Vec<_> = out.vocab.merges().iter().map(|r| r.constellation).collect();
        assert_eq!(
            rules,
            vec![
                Constellation::new(A, A, h(1)), // C
                Constellation::new(A, B, h(1)), // D
                Constellation::new(3, B, h(2)), // E = D B
            ]
        );
        assert_eq!(instance_classes(&out.grids[0]), vec![2, 2, 4, 3, 4]);
        assert_eq!(out.history.last().unwrap().instances, 5);
    }

    #[test]
    fn train_edge_cases() {
        let out = train(vec![worked_example()], 2, TrainConfig::new(0)).unwrap();
        assert!(out.vocab.merges().is_empty());
        assert_eq!(out.grids[0], worked_example());

        let g = TokenGrid::from_classes(&[3, 3], (0..9).collect(), 9).unwrap();
        let out = train(vec![g], 9, TrainConfig::new(5)).unwrap();
        assert!(out.vocab.merges().is_empty());

        assert_eq!(
            train(vec![], 2, TrainConfig::new(1)).unwrap_err(),
            Error::EmptyCorpus
        );
    }

    #[test]
    fn incremental_table_matches_recount() {
        // striped and blocky 2D grids exercise non-convex merges
        let mut corpus = Vec::new();
        for s in 0..6u32 {
            let classes = (0..64u32).map(|i| ((i / 8 + s) / 3 + (i % 8) / 4) % 3).collect();
            corpus.push(TokenGrid::from_classes(&[8, 8], classes, 3).unwrap());
        }
        let axes = AxisMask::all(2);
        let mut vocab = Vocabulary::new(2, 3).unwrap();
        let mut table = count_constellations(&corpus, &vocab).unwrap();
        for _ in 0..25 {
            let Some(best) = select_merge(&table) else { break };
            let rule = vocab.push_merge(best).unwrap();
            let mut delta = FxHashMap::default();
            for g in corpus.iter_mut() {
                merge_pass(g, &rule, axes, Some(&mut delta));
                g.validate().unwrap();
            }
            table.apply_delta(delta);
            let fresh = count_constellations(&corpus, &vocab).unwrap();
            assert_eq!(table.sorted(), fresh.sorted());
        }
        assert!(vocab.merges().len() > 5);
    }
}
