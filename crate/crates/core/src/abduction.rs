//! Abduction: enumerate every label assignment of a sample that satisfies
//! its symbolic constraint.
//!
//! Three theories are supported. `sum` and `max` range over digit classes
//! `0..c`; `hwf` ranges over handwritten-formula strings that alternate a
//! digit (1-9) with an operator (`+`, `-`, `*`), evaluated with the usual
//! precedence. HWF uses a single 12-class label space: ids `0..=8` are the
//! digits 1..9 and ids 9, 10, 11 are `+`, `-`, `*`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelSpace, NesySample, PreImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theory {
    Sum,
    Max,
    Hwf,
}

impl fmt::Display for Theory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theory::Sum => "sum",
            Theory::Max => "max",
            Theory::Hwf => "hwf",
        })
    }
}

/// The weak label of a sample: `theory(labels) == target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub theory: Theory,
    pub target: i64,
    pub arity: usize,
}

impl Constraint {
    pub fn new(theory: Theory, target: i64, arity: usize) -> Result<Self> {
        let c = Constraint {
            theory,
            target,
            arity,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arity == 0 {
            return Err(Error::Precondition("constraint arity must be at least 1".into()));
        }
        if self.theory == Theory::Hwf && self.arity.is_multiple_of(2) {
            return Err(Error::Precondition(format!(
                "hwf formulas alternate digits and operators, so arity must be odd (got {})",
                self.arity
            )));
        }
        Ok(())
    }

    /// Value of the theory's expression on a full labelling, or `None` if the
    /// labelling is not well formed for the theory.
    pub fn evaluate(&self, labels: &[usize]) -> Option<i64> {
        match self.theory {
            Theory::Sum => Some(labels.iter().map(|&l| l as i64).sum()),
            Theory::Max => labels.iter().map(|&l| l as i64).max(),
            Theory::Hwf => evaluate_hwf(labels),
        }
    }

    pub fn is_satisfied_by(&self, labels: &[usize]) -> bool {
        labels.len() == self.arity && self.evaluate(labels) == Some(self.target)
    }
}

pub const HWF_CLASSES: usize = 12;
pub const HWF_PLUS: usize = 9;
pub const HWF_MINUS: usize = 10;
pub const HWF_TIMES: usize = 11;

pub fn hwf_label_space() -> LabelSpace {
    let names = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    LabelSpace::with_names(names).expect("12 named classes")
}

/// Digit value of an HWF class id.
pub fn hwf_digit(class: usize) -> Option<i64> {
    (class < 9).then_some(class as i64 + 1)
}

/// Class id of an HWF digit `1..=9`.
pub fn hwf_digit_class(digit: i64) -> Option<usize> {
    (1..=9).contains(&digit).then(|| (digit - 1) as usize)
}

/// Evaluates an HWF label string; `*` binds tighter than `+`/`-`, all
/// operators are left-associative.
pub fn evaluate_hwf(labels: &[usize]) -> Option<i64> {
    if labels.len().is_multiple_of(2) {
        return None;
    }
    let mut total = 0i64;
    let mut sign = 1i64;
    let mut term = hwf_digit(labels[0])?;
    for pair in labels[1..].chunks(2) {
        let digit = hwf_digit(pair[1])?;
        match pair[0] {
            HWF_TIMES => term = term.checked_mul(digit)?,
            HWF_PLUS | HWF_MINUS => {
                total = total.checked_add(sign * term)?;
                sign = if pair[0] == HWF_PLUS { 1 } else { -1 };
                term = digit;
            }
            _ => return None,
        }
    }
    total.checked_add(sign * term)
}

/// Allowed classes per position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionMask {
    allowed: Vec<Vec<usize>>,
}

impl PositionMask {
    pub fn new(allowed: Vec<Vec<usize>>, label_space: &LabelSpace) -> Result<Self> {
        for (pos, set) in allowed.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Invalid(format!("position {pos} allows no class")));
            }
            if let Some(&c) = set.iter().find(|&&c| c >= label_space.class_count) {
                return Err(Error::Invalid(format!(
                    "position {pos} allows class {c} outside the label space"
                )));
            }
        }
        let allowed = allowed
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Ok(PositionMask { allowed })
    }

    /// Every position may take any class.
    pub fn full(arity: usize, classes: usize) -> Self {
        PositionMask {
            allowed: vec![(0..classes).collect(); arity],
        }
    }

    /// Digit classes on even positions, operator classes on odd ones.
    pub fn hwf(arity: usize) -> Self {
        let digits: Vec<usize> = (0..9).collect();
        let ops = vec![HWF_PLUS, HWF_MINUS, HWF_TIMES];
        PositionMask {
            allowed: (0..arity)
                .map(|p| if p % 2 == 0 { digits.clone() } else { ops.clone() })
                .collect(),
        }
    }

    pub fn for_constraint(constraint: &Constraint, label_space: &LabelSpace) -> Self {
        match constraint.theory {
            Theory::Hwf => Self::hwf(constraint.arity),
            _ => Self::full(constraint.arity, label_space.class_count),
        }
    }

    pub fn arity(&self) -> usize {
        self.allowed.len()
    }

    pub fn allowed(&self, position: usize) -> &[usize] {
        &self.allowed[position]
    }

    /// Number of masked tuples.
    pub fn size(&self) -> u128 {
        self.allowed.iter().map(|s| s.len() as u128).product()
    }
}

/// Unpruned scan over every masked tuple, in lexicographic order.
pub fn scan_all(mask: &PositionMask, mut keep: impl FnMut(&[usize]) -> bool) -> Vec<PreImage> {
    let arity = mask.arity();
    let mut out = Vec::new();
    let mut idx = vec![0usize; arity];
    let mut labels: Vec<usize> = (0..arity).map(|p| mask.allowed(p)[0]).collect();
    loop {
        if keep(&labels) {
            out.push(PreImage(labels.clone()));
        }
        // odometer increment, last position fastest
        let mut p = arity;
        loop {
            if p == 0 {
                return out;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < mask.allowed(p).len() {
                labels[p] = mask.allowed(p)[idx[p]];
                break;
            }
            idx[p] = 0;
            labels[p] = mask.allowed(p)[0];
        }
    }
}

/// Pre-images found for one constraint, plus a warning when none can exist.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Enumerated {
    pub preimages: Vec<PreImage>,
    pub warning: Option<String>,
}

impl Enumerated {
    fn infeasible(warning: String) -> Self {
        Enumerated {
            preimages: Vec::new(),
            warning: Some(warning),
        }
    }

    pub fn len(&self) -> usize {
        self.preimages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preimages.is_empty()
    }
}

struct Collector {
    out: Vec<PreImage>,
    limit: usize,
}

impl Collector {
    fn push(&mut self, labels: &[usize]) -> Result<()> {
        if self.out.len() == self.limit {
            return Err(Error::LimitExceeded(format!(
                "more than {} pre-images",
                self.limit
            )));
        }
        self.out.push(PreImage(labels.to_vec()));
        Ok(())
    }
}

/// All tuples over `0..classes` of length `arity` summing to `target`.
pub fn abduce_sum(arity: usize, target: i64, classes: usize) -> Enumerated {
    abduce_sum_limited(arity, target, classes, usize::MAX).expect("no limit")
}

fn abduce_sum_limited(arity: usize, target: i64, classes: usize, limit: usize) -> Result<Enumerated> {
    let top = (classes - 1) as i64;
    if target < 0 || target > top * arity as i64 {
        return Ok(Enumerated::infeasible(format!(
            "sum target {target} outside 0..={} for {arity} digits",
            top * arity as i64
        )));
    }
    fn go(pos: usize, remaining: i64, top: i64, labels: &mut Vec<usize>, sink: &mut Collector) -> Result<()> {
        let arity = labels.len();
        if pos == arity {
            return sink.push(labels);
        }
        let after = (arity - pos - 1) as i64;
        let lo = (remaining - top * after).max(0);
        let hi = remaining.min(top);
        for v in lo..=hi {
            labels[pos] = v as usize;
            go(pos + 1, remaining - v, top, labels, sink)?;
        }
        Ok(())
    }
    let mut sink = Collector { out: Vec::new(), limit };
    go(0, target, top, &mut vec![0; arity], &mut sink)?;
    Ok(Enumerated {
        preimages: sink.out,
        warning: None,
    })
}

/// All tuples over `0..classes` of length `arity` whose maximum is `target`.
pub fn abduce_max(arity: usize, target: i64, classes: usize) -> Enumerated {
    abduce_max_limited(arity, target, classes, usize::MAX).expect("no limit")
}

fn abduce_max_limited(arity: usize, target: i64, classes: usize, limit: usize) -> Result<Enumerated> {
    if target < 0 || target >= classes as i64 {
        return Ok(Enumerated::infeasible(format!(
            "max target {target} outside 0..={}",
            classes - 1
        )));
    }
    let t = target as usize;
    fn go(pos: usize, hit: bool, t: usize, labels: &mut Vec<usize>, sink: &mut Collector) -> Result<()> {
        let arity = labels.len();
        if pos == arity {
            return sink.push(labels);
        }
        let last = pos + 1 == arity;
        let lo = if last && !hit { t } else { 0 };
        for v in lo..=t {
            labels[pos] = v;
            go(pos + 1, hit || v == t, t, labels, sink)?;
        }
        Ok(())
    }
    let mut sink = Collector { out: Vec::new(), limit };
    go(0, false, t, &mut vec![0; arity], &mut sink)?;
    Ok(Enumerated {
        preimages: sink.out,
        warning: None,
    })
}

/// All HWF formulas of length `arity` that evaluate to `target`.
pub fn abduce_hwf(arity: usize, target: i64) -> Result<Enumerated> {
    abduce_hwf_limited(arity, target, usize::MAX)
}

fn abduce_hwf_limited(arity: usize, target: i64, limit: usize) -> Result<Enumerated> {
    Constraint::new(Theory::Hwf, target, arity)?;
    let mask = PositionMask::hwf(arity);
    fn go(pos: usize, mask: &PositionMask, target: i64, labels: &mut Vec<usize>, sink: &mut Collector) -> Result<()> {
        if pos == labels.len() {
            if evaluate_hwf(labels) == Some(target) {
                sink.push(labels)?;
            }
            return Ok(());
        }
        for &class in mask.allowed(pos) {
            labels[pos] = class;
            go(pos + 1, mask, target, labels, sink)?;
        }
        Ok(())
    }
    let mut sink = Collector { out: Vec::new(), limit };
    go(0, &mask, target, &mut vec![0; arity], &mut sink)?;
    if sink.out.is_empty() {
        return Ok(Enumerated::infeasible(format!(
            "no formula of length {arity} evaluates to {target}"
        )));
    }
    Ok(Enumerated {
        preimages: sink.out,
        warning: None,
    })
}

/// Dispatches to the theory's enumerator.
pub fn enumerate(constraint: &Constraint, label_space: &LabelSpace, limit: Option<usize>) -> Result<Enumerated> {
    constraint.validate()?;
    let limit = limit.unwrap_or(usize::MAX);
    let c = label_space.class_count;
    match constraint.theory {
        Theory::Sum => abduce_sum_limited(constraint.arity, constraint.target, c, limit),
        Theory::Max => abduce_max_limited(constraint.arity, constraint.target, c, limit),
        Theory::Hwf => {
            if c != HWF_CLASSES {
                return Err(Error::Precondition(format!(
                    "hwf needs the {HWF_CLASSES}-class digit/operator label space, got {c} classes"
                )));
            }
            abduce_hwf_limited(constraint.arity, constraint.target, limit)
        }
    }
}

/// Result of abducing one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Abduced {
    Accepted(NesySample),
    /// No pre-image satisfies the constraint; the sample cannot be trained on.
    Rejected { sample_id: String, reason: String },
}

pub fn abduce(sample: NesySample, label_space: &LabelSpace) -> Result<Abduced> {
    abduce_with_limit(sample, label_space, None)
}

/// Fills `sample.preimages`. Fails hard if gold labels are known but not
/// among the enumerated pre-images.
pub fn abduce_with_limit(sample: NesySample, label_space: &LabelSpace, limit: Option<usize>) -> Result<Abduced> {
    if sample.constraint.arity != sample.arity() {
        return Err(Error::Precondition(format!(
            "sample `{}`: constraint arity {} but {} instances",
            sample.id,
            sample.constraint.arity,
            sample.arity()
        )));
    }
    let found = enumerate(&sample.constraint, label_space, limit).map_err(|e| match e {
        Error::LimitExceeded(msg) => Error::LimitExceeded(format!("sample `{}`: {msg}", sample.id)),
        other => other,
    })?;
    if found.is_empty() {
        let reason = found.warning.unwrap_or_else(|| "no satisfying pre-image".into());
        log::warn!("rejecting sample `{}`: {reason}", sample.id);
        return Ok(Abduced::Rejected {
            sample_id: sample.id,
            reason,
        });
    }
    let id = sample.id.clone();
    let sample = sample.with_preimages(found.preimages)?;
    if sample.gold.is_some() && sample.gold_index().is_none() {
        return Err(Error::Invariant(format!(
            "sample `{id}`: gold labels do not satisfy the constraint"
        )));
    }
    Ok(Abduced::Accepted(sample))
}
