//! Vocabularies: the base class count plus the ordered merge rules, and the
//! cell shapes every class derives from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Offset, MAX_AXES};

/// Counting key: an ordered class pair plus the vector from the anchor of the
/// second instance to the anchor of the first (`p.anchor - n.anchor`).
///
/// The derived ordering is lexicographic over `(class_p, class_n, v_pn)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constellation {
    pub class_p: u32,
    pub class_n: u32,
    pub v_pn: Offset,
}

impl Constellation {
    pub fn new(class_p: u32, class_n: u32, v_pn: Offset) -> Self {
        Constellation {
            class_p,
            class_n,
            v_pn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeRule {
    pub new_class: u32,
    pub constellation: Constellation,
}

/// Which axes contribute a `+1` neighbour direction during counting and
/// replacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AxisMask(u8);

impl AxisMask {
    pub fn all(ndim: usize) -> Self {
        AxisMask(((1u16 << ndim) - 1) as u8)
    }

    pub fn from_axes(axes: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &a in axes {
            if a >= MAX_AXES {
                return Err(Error::InvalidParameter(format!("axis {a} out of range")));
            }
            bits |= 1 << a;
        }
        Ok(AxisMask(bits))
    }

    pub fn contains(&self, axis: usize) -> bool {
        axis < MAX_AXES && self.0 & (1 << axis) != 0
    }

    pub fn axes(&self, ndim: usize) -> impl Iterator<Item = usize> + '_ {
        (0..ndim).filter(move |&a| self.contains(a))
    }

    pub fn is_all(&self, ndim: usize) -> bool {
        *self == AxisMask::all(ndim)
    }

    pub fn bits(&self) -> u8 {
        self.0
    }
}

/// Cells a class covers, as offsets from its anchor in scan order. The first
/// offset is always zero. `base` holds the base class found at each offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenShape {
    pub offsets: Vec<Offset>,
    pub base: Vec<u32>,
}

impl TokenShape {
    fn single(class: u32) -> Self {
        TokenShape {
            offsets: vec![Offset::ZERO],
            base: vec![class],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Base vocabulary size plus ordered merge rules. Shapes are derived eagerly
/// as rules are added, so a built vocabulary is immutable and `Sync`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ndim: usize,
    base_size: u32,
    axes: AxisMask,
    merges: Vec<MergeRule>,
    shapes: Vec<TokenShape>,
}

impl Vocabulary {
    pub fn new(ndim: usize, base_size: u32) -> Result<Self> {
        Self::with_axes(ndim, base_size, AxisMask::all(ndim.clamp(1, MAX_AXES)))
    }

    pub fn with_axes(ndim: usize, base_size: u32, axes: AxisMask) -> Result<Self> {
        if ndim == 0 || ndim > MAX_AXES {
            return Err(Error::InvalidVocab(format!("unsupported axis count {ndim}")));
        }
        if base_size == 0 {
            return Err(Error::InvalidVocab("base size must be positive".into()));
        }
        if axes.axes(ndim).next().is_none() || axes.bits() >> ndim != 0 {
            return Err(Error::InvalidVocab(format!(
                "neighbour axes {:#b} invalid for {ndim} axes",
                axes.bits()
            )));
        }
        Ok(Vocabulary {
            ndim,
            base_size,
            axes,
            merges: Vec::new(),
            shapes: (0..base_size).map(TokenShape::single).collect(),
        })
    }

    /// Rebuilds a vocabulary from stored rules, validating each one.
    pub fn from_rules(
        ndim: usize,
        base_size: u32,
        axes: AxisMask,
        rules: impl IntoIterator<Item = MergeRule>,
    ) -> Result<Self> {
        let mut v = Self::with_axes(ndim, base_size, axes)?;
        for rule in rules {
            if rule.new_class != v.len() {
                return Err(Error::InvalidVocab(format!(
                    "rule creates class {} but the next class is {}",
                    rule.new_class,
                    v.len()
                )));
            }
            v.push_merge(rule.constellation)?;
        }
        Ok(v)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn base_size(&self) -> u32 {
        self.base_size
    }

    pub fn axes(&self) -> AxisMask {
        self.axes
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    /// Total class count, base plus merged.
    pub fn len(&self) -> u32 {
        self.base_size + self.merges.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The vocabulary restricted to its first `n` rules.
    pub fn prefix(&self, n: usize) -> Vocabulary {
        let n = n.min(self.merges.len());
        Vocabulary {
            ndim: self.ndim,
            base_size: self.base_size,
            axes: self.axes,
            merges: self.merges[..n].to_vec(),
            shapes: self.shapes[..self.base_size as usize + n].to_vec(),
        }
    }

    /// Appends a rule creating the next class from `c`. Fails when the rule
    /// references unknown classes, has a zero or out-of-axis vector, or the
    /// two constituent shapes overlap or do not touch.
    pub fn push_merge(&mut self, c: Constellation) -> Result<MergeRule> {
        let new_class = self.len();
        for class in [c.class_p, c.class_n] {
            if class >= new_class {
                return Err(Error::InvalidVocab(format!(
                    "rule for class {new_class} references class {class}"
                )));
            }
        }
        if c.v_pn.is_zero() || c.v_pn.0[self.ndim..].iter().any(|&x| x != 0) {
            return Err(Error::InvalidVocab(format!(
                "rule for class {new_class} has invalid vector {:?}",
                c.v_pn
            )));
        }
        let shape = self.merged_shape(&c).map_err(|reason| {
            Error::InvalidVocab(format!("rule for class {new_class}: {reason}"))
        })?;
        let rule = MergeRule {
            new_class,
            constellation: c,
        };
        self.merges.push(rule);
        self.shapes.push(shape);
        Ok(rule)
    }

    fn merged_shape(&self, c: &Constellation) -> std::result::Result<TokenShape, String> {
        let p = &self.shapes[c.class_p as usize];
        let n = &self.shapes[c.class_n as usize];
        // n's anchor sits at -v_pn relative to p's anchor
        let shift = -c.v_pn;
        let mut cells: Vec<(Offset, u32)> = p
            .offsets
            .iter()
            .copied()
            .zip(p.base.iter().copied())
            .chain(
                n.offsets
                    .iter()
                    .map(|&o| o + shift)
                    .zip(n.base.iter().copied()),
            )
            .collect();
        cells.sort_unstable_by_key(|&(o, _)| o);
        if cells.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err("constituent shapes overlap".into());
        }
        let touching = p.offsets.iter().any(|&a| {
            n.offsets.iter().any(|&b| {
                let d = a - (b + shift);
                d.0.iter().map(|x| x.unsigned_abs()).sum::<u32>() == 1
            })
        });
        if !touching {
            return Err("constituent shapes are not edge-adjacent".into());
        }
        let origin = cells[0].0;
        Ok(TokenShape {
            offsets: cells.iter().map(|&(o, _)| o - origin).collect(),
            base: cells.iter().map(|&(_, b)| b).collect(),
        })
    }

    /// Cell shape of `class`.
    pub fn shape_of(&self, class: u32) -> Result<&TokenShape> {
        self.shapes
            .get(class as usize)
            .ok_or(Error::ClassOutOfRange {
                class,
                size: self.len(),
            })
    }

    pub(crate) fn shapes(&self) -> &[TokenShape] {
        &self.shapes
    }
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    format: String,
    version: u32,
    ndim: usize,
    base_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neighbor_axes: Option<Vec<usize>>,
    merges: Vec<RuleDoc>,
}

#[derive(Serialize, Deserialize)]
struct RuleDoc {
    new_class: u32,
    class_p: u32,
    class_n: u32,
    v_pn: Vec<i32>,
}

const VOCAB_FORMAT: &str = "mdbpe-vocab";

/// Serializes `vocab` as a JSON document.
pub fn write_vocab(vocab: &Vocabulary) -> Vec<u8> {
    let doc = VocabDoc {
        format: VOCAB_FORMAT.into(),
        version: 1,
        ndim: vocab.ndim,
        base_size: vocab.base_size,
        neighbor_axes: (!vocab.axes.is_all(vocab.ndim))
            .then(|| vocab.axes.axes(vocab.ndim).collect()),
        merges: vocab
            .merges
            .iter()
            .map(|r| RuleDoc {
                new_class: r.new_class,
                class_p: r.constellation.class_p,
                class_n: r.constellation.class_n,
                v_pn: r.constellation.v_pn.components(vocab.ndim).to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("vocabulary serializes");
    out.push(b'\n');
    out
}

pub fn read_vocab(bytes: &[u8]) -> Result<Vocabulary> {
    let doc: VocabDoc = serde_json::from_slice(bytes).map_err(|e| Error::Malformed {
        format: "vocabulary",
        reason: e.to_string(),
    })?;
    if doc.format != VOCAB_FORMAT || doc.version != 1 {
        return Err(Error::Malformed {
            format: "vocabulary",
            reason: format!("unsupported format {:?} version {}", doc.format, doc.version),
        });
    }
    let axes = match &doc.neighbor_axes {
        Some(a) => AxisMask::from_axes(a)?,
        None => AxisMask::all(doc.ndim.clamp(1, MAX_AXES)),
    };
    let mut rules = Vec::with_capacity(doc.merges.len());
    for r in &doc.merges {
        if r.v_pn.len() != doc.ndim {
            return Err(Error::InvalidVocab(format!(
                "rule for class {} has {} vector components, expected {}",
                r.new_class,
                r.v_pn.len(),
                doc.ndim
            )));
        }
        rules.push(MergeRule {
            new_class: r.new_class,
            constellation: Constellation::new(r.class_p, r.class_n, Offset::from_slice(&r.v_pn)?),
        });
    }
    Vocabulary::from_rules(doc.ndim, doc.base_size, axes, rules)
}
