//! The simple function learning task.
//!
//! An observation is a vector `x ∈ ℝᵈ` drawn uniformly from a range; two
//! contiguous, possibly overlapping windows of `x` are summed into `a` and
//! `b`, and the target is `t = a ∘ b`. The window geometry of a task is
//! fixed once per task (per trial seed) and shared by the interpolation and
//! extrapolation splits.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix2D;
use crate::rng::{seeded, Rng};

pub const DEFAULT_INPUT_SIZE: usize = 100;
pub const DEFAULT_SUBSET_RATIO: f64 = 0.25;
pub const DEFAULT_OVERLAP_RATIO: f64 = 0.5;

/// Slack for ratios computed in floating point, e.g. `0.29 * 100`.
const RATIO_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    #[serde(alias = "+")]
    Add,
    #[serde(alias = "-")]
    Sub,
    #[serde(alias = "*")]
    Mul,
    #[serde(alias = "/")]
    Div,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Operation::Add, Operation::Sub, Operation::Mul, Operation::Div];

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Operation::Add => a + b,
            Operation::Sub => a - b,
            Operation::Mul => a * b,
            Operation::Div => a / b,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Operation::Add => "add",
            Operation::Sub => "sub",
            Operation::Mul => "mul",
            Operation::Div => "div",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Operation::Add => "+",
            Operation::Sub => "-",
            Operation::Mul => "*",
            Operation::Div => "/",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Operation::ALL
            .into_iter()
            .find(|op| op.name() == s || op.symbol() == s)
            .ok_or_else(|| Error::Argument(format!("unknown operation '{s}'")))
    }
}

/// A closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lower, upper]: [f64; 2]) -> Self {
        Self { lower, upper }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lower, i.upper]
    }
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// A sampling range: one interval, or a union of disjoint intervals sampled
/// as a mixture weighted by interval length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RangeRepr", into = "Vec<Interval>")]
pub struct RangeSpec {
    intervals: Vec<Interval>,
    total: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RangeRepr {
    Single([f64; 2]),
    Union(Vec<Interval>),
}

impl TryFrom<RangeRepr> for RangeSpec {
    type Error = Error;

    fn try_from(r: RangeRepr) -> Result<Self> {
        match r {
            RangeRepr::Single([lo, hi]) => RangeSpec::new(lo, hi),
            RangeRepr::Union(v) => RangeSpec::union(v),
        }
    }
}

impl From<RangeSpec> for Vec<Interval> {
    fn from(r: RangeSpec) -> Self {
        r.intervals
    }
}

impl RangeSpec {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        Self::union(vec![Interval { lower, upper }])
    }

    pub fn union(mut intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Config("range needs at least one interval".into()));
        }
        for i in &intervals {
            if !(i.lower.is_finite() && i.upper.is_finite()) || i.lower > i.upper {
                return Err(Error::Config(format!("invalid interval [{}, {}]", i.lower, i.upper)));
            }
        }
        intervals.sort_by(|a, b| a.lower.total_cmp(&b.lower));
        if intervals.windows(2).any(|w| w[0].upper > w[1].lower) {
            return Err(Error::Config("range intervals must not overlap".into()));
        }
        let total = intervals.iter().map(Interval::len).sum();
        Ok(Self { intervals, total })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn lower(&self) -> f64 {
        self.intervals[0].lower
    }

    pub fn upper(&self) -> f64 {
        self.intervals[self.intervals.len() - 1].upper
    }

    pub fn contains(&self, v: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(v))
    }

    /// Mean of the sampling distribution.
    pub fn mean(&self) -> f64 {
        if self.total == 0.0 {
            return self.intervals[0].lower;
        }
        self.intervals
            .iter()
            .map(|i| i.len() / self.total * (i.lower + i.upper) / 2.0)
            .sum()
    }

    /// `E[x²]` of the sampling distribution.
    pub fn second_moment(&self) -> f64 {
        if self.total == 0.0 {
            let v = self.intervals[0].lower;
            return v * v;
        }
        self.intervals
            .iter()
            .map(|i| {
                let (a, b) = (i.lower, i.upper);
                i.len() / self.total * (a * a + a * b + b * b) / 3.0
            })
            .sum()
    }

    /// Maps `u ∈ [0, 1)` onto the concatenated intervals.
    #[inline]
    fn map_unit(&self, u: f64) -> f64 {
        if self.intervals.len() == 1 {
            let i = self.intervals[0];
            return i.lower + u * (i.upper - i.lower);
        }
        let mut pos = u * self.total;
        for i in &self.intervals {
            if pos < i.len() {
                return i.lower + pos;
            }
            pos -= i.len();
        }
        self.upper()
    }

    #[inline]
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.map_unit(rng.random::<f64>())
    }
}

impl fmt::Display for RangeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, i) in self.intervals.iter().enumerate() {
            if n > 0 {
                f.write_str(" u ")?;
            }
            write!(f, "U[{}, {}]", i.lower, i.upper)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Interpolation,
    Extrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub op: Operation,
    pub interp: RangeSpec,
    pub extrap: RangeSpec,
    pub input_size: usize,
    pub subset_ratio: f64,
    pub overlap_ratio: f64,
}

impl DatasetSpec {
    /// Default geometry (`d = 100`, `s = 0.25`, `o = 0.5`) with interpolation
    /// range `[1, 2]` and extrapolation range `[2, 6]`.
    pub fn with_defaults(op: Operation) -> Self {
        Self {
            op,
            interp: RangeSpec::new(1.0, 2.0).expect("valid"),
            extrap: RangeSpec::new(2.0, 6.0).expect("valid"),
            input_size: DEFAULT_INPUT_SIZE,
            subset_ratio: DEFAULT_SUBSET_RATIO,
            overlap_ratio: DEFAULT_OVERLAP_RATIO,
        }
    }

    pub fn range(&self, which: Split) -> &RangeSpec {
        match which {
            Split::Interpolation => &self.interp,
            Split::Extrapolation => &self.extrap,
        }
    }

    /// Number of elements in each window: `round(s·d)`.
    pub fn subset_len(&self) -> usize {
        (self.subset_ratio * self.input_size as f64).round() as usize
    }

    /// Number of shared elements: `⌊o · round(s·d)⌋`.
    pub fn overlap_len(&self) -> usize {
        (self.overlap_ratio * self.subset_len() as f64 + RATIO_SLACK).floor() as usize
    }

    /// Width of the legal offset interval, `1 − 2s + o·s`.
    pub fn offset_upper(&self) -> f64 {
        (1.0 - 2.0 * self.subset_ratio + self.overlap_ratio * self.subset_ratio).max(0.0)
    }

    fn max_start(&self) -> usize {
        self.input_size - (2 * self.subset_len() - self.overlap_len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input size must be at least 1".into()));
        }
        if !(self.subset_ratio > 0.0 && self.subset_ratio <= 1.0) {
            return Err(Error::Config(format!("subset ratio {} outside (0, 1]", self.subset_ratio)));
        }
        if !(0.0..=1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!("overlap ratio {} outside [0, 1]", self.overlap_ratio)));
        }
        let len = self.subset_len();
        if len == 0 {
            return Err(Error::Config(format!(
                "subset ratio {} of input size {} selects no elements",
                self.subset_ratio, self.input_size
            )));
        }
        let span = 2 * len - self.overlap_len();
        if span > self.input_size {
            return Err(Error::Config(format!(
                "two windows of {len} elements with {} shared need {span} inputs, only {} available",
                self.overlap_len(),
                self.input_size
            )));
        }
        Ok(())
    }

    /// The two half-open index windows for offset `k`.
    pub fn subset_indices(&self, k: f64) -> Result<SubsetGeometry> {
        self.validate()?;
        let upper = self.offset_upper();
        if !(k >= 0.0 && k <= upper + RATIO_SLACK) {
            return Err(Error::Precondition(format!("offset {k} outside [0, {upper}]")));
        }
        let len = self.subset_len();
        let start = ((self.input_size as f64 * k).floor() as usize).min(self.max_start());
        let b_start = start + len - self.overlap_len();
        Ok(SubsetGeometry {
            a: start..start + len,
            b: b_start..b_start + len,
        })
    }

    pub fn sample_geometry(&self, rng: &mut Rng) -> Result<SubsetGeometry> {
        let k = rng.random::<f64>() * self.offset_upper();
        self.subset_indices(k)
    }

    pub fn midpoint_geometry(&self) -> Result<SubsetGeometry> {
        self.subset_indices(self.offset_upper() / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetGeometry {
    pub a: Range<usize>,
    pub b: Range<usize>,
}

impl SubsetGeometry {
    pub fn overlap(&self) -> usize {
        self.a.end.min(self.b.end).saturating_sub(self.a.start.max(self.b.start))
    }

    #[inline]
    pub fn sums(&self, x: &[f64]) -> (f64, f64) {
        (x[self.a.clone()].iter().sum(), x[self.b.clone()].iter().sum())
    }
}

/// A dataset specification with its window geometry resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub spec: DatasetSpec,
    pub geometry: SubsetGeometry,
}

impl Task {
    pub fn new(spec: DatasetSpec, geometry: SubsetGeometry) -> Result<Self> {
        spec.validate()?;
        if geometry.a.end > spec.input_size || geometry.b.end > spec.input_size {
            return Err(Error::Config("window geometry exceeds input size".into()));
        }
        Ok(Self { spec, geometry })
    }

    /// Draws the window offset from `rng`.
    pub fn sample(spec: DatasetSpec, rng: &mut Rng) -> Result<Self> {
        let geometry = spec.sample_geometry(rng)?;
        Self::new(spec, geometry)
    }

    #[inline]
    pub fn target(&self, x: &[f64]) -> f64 {
        let (a, b) = self.geometry.sums(x);
        self.spec.op.apply(a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub x: Matrix2D,
    pub t: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Fills `out` (rows already sized) with fresh observations.
pub fn sample_into(task: &Task, which: Split, rng: &mut Rng, out: &mut SampleBatch) {
    let range = task.spec.range(which);
    for r in 0..out.x.rows() {
        let row = out.x.row_mut(r);
        for v in row.iter_mut() {
            *v = range.sample(rng);
        }
        out.t[r] = task.target(out.x.row(r));
    }
}

pub fn sample_batch(task: &Task, which: Split, batch: usize, rng: &mut Rng) -> Result<SampleBatch> {
    if batch == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut out = SampleBatch {
        x: Matrix2D::zeros(batch, task.spec.input_size),
        t: vec![0.0; batch],
    };
    sample_into(task, which, rng, &mut out);
    Ok(out)
}

/// A fixed evaluation set, fully determined by `(task, which, n, seed)`.
pub fn fixed_eval_set(task: &Task, which: Split, n: usize, seed: u64) -> Result<SampleBatch> {
    sample_batch(task, which, n, &mut seeded(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn spec(d: usize, s: f64, o: f64, op: Operation) -> DatasetSpec {
        DatasetSpec {
            input_size: d,
            subset_ratio: s,
            overlap_ratio: o,
            ..DatasetSpec::with_defaults(op)
        }
    }

    #[test]
    fn constant_input_product() {
        let mut sp = spec(100, 0.25, 0.5, Operation::Mul);
        sp.interp = RangeSpec::new(1.0, 1.0).unwrap();
        let mut rng = seeded(1);
        for _ in 0..5 {
            let task = Task::sample(sp.clone(), &mut rng).unwrap();
            let b = sample_batch(&task, Split::Interpolation, 4, &mut rng).unwrap();
            assert!(b.t.iter().all(|&t| t == 625.0));
        }
    }

    #[test]
    fn coincident_and_disjoint_windows() {
        let g = spec(100, 0.25, 1.0, Operation::Add).subset_indices(0.0).unwrap();
        assert_eq!((g.a.clone(), g.b.clone()), (0..25, 0..25));
        let g = spec(100, 0.25, 0.0, Operation::Add).subset_indices(0.0).unwrap();
        assert_eq!((g.a.clone(), g.b.clone()), (0..25, 25..50));
        assert_eq!(g.overlap(), 0);
    }

    #[test]
    fn default_geometry() {
        let sp = DatasetSpec::with_defaults(Operation::Add);
        assert_eq!(sp.subset_len(), 25);
        assert_eq!(sp.overlap_len(), 12);
        assert!((sp.offset_upper() - 0.625).abs() < 1e-15);
        let g = sp.subset_indices(sp.offset_upper()).unwrap();
        assert_eq!(g.b.end, 100);
        assert!(sp.subset_indices(0.7).is_err());
        assert!(sp.subset_indices(-0.1).is_err());
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(spec(3, 0.1, 0.5, Operation::Add).validate().is_err());
        assert!(spec(100, 0.6, 0.0, Operation::Add).validate().is_err());
        assert!(spec(0, 0.25, 0.5, Operation::Add).validate().is_err());
        assert!(spec(100, 0.25, 1.5, Operation::Add).validate().is_err());
    }

    #[test]
    fn subtraction_cancels_shared_elements() {
        let sp = spec(100, 0.25, 0.5, Operation::Sub);
        let mut rng = seeded(8);
        let task = Task::sample(sp, &mut rng).unwrap();
        let b = sample_batch(&task, Split::Interpolation, 16, &mut rng).unwrap();
        let a_set: BTreeSet<usize> = task.geometry.a.clone().collect();
        let b_set: BTreeSet<usize> = task.geometry.b.clone().collect();
        assert_eq!(a_set.intersection(&b_set).count(), 12);
        for r in 0..16 {
            let x = b.x.row(r);
            let only_a: f64 = a_set.difference(&b_set).map(|&i| x[i]).sum();
            let only_b: f64 = b_set.difference(&a_set).map(|&i| x[i]).sum();
            assert!((b.t[r] - (only_a - only_b)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_overlap_addition_doubles() {
        let sp = spec(40, 0.25, 1.0, Operation::Add);
        let mut rng = seeded(2);
        let task = Task::sample(sp, &mut rng).unwrap();
        let b = sample_batch(&task, Split::Extrapolation, 8, &mut rng).unwrap();
        for r in 0..8 {
            let (a, _) = task.geometry.sums(b.x.row(r));
            assert!((b.t[r] - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let task = Task::sample(DatasetSpec::with_defaults(Operation::Mul), &mut seeded(3)).unwrap();
        let a = fixed_eval_set(&task, Split::Extrapolation, 50, 99).unwrap();
        let b = fixed_eval_set(&task, Split::Extrapolation, 50, 99).unwrap();
        assert_eq!(a, b);
        assert!(sample_batch(&task, Split::Interpolation, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn default_ranges_are_respected() {
        let task = Task::sample(DatasetSpec::with_defaults(Operation::Add), &mut seeded(4)).unwrap();
        let v = fixed_eval_set(&task, Split::Interpolation, 10_000, 1).unwrap();
        assert!(v.x.data().iter().all(|&x| (1.0..=2.0).contains(&x)));
        let t = fixed_eval_set(&task, Split::Extrapolation, 10_000, 2).unwrap();
        assert!(t.x.data().iter().all(|&x| (2.0..=6.0).contains(&x)));
    }

    #[test]
    fn union_range_samples_both_sides() {
        let r = RangeSpec::union(vec![[2.0, 6.0].into(), [-6.0, -2.0].into()]).unwrap();
        assert_eq!(r.lower(), -6.0);
        let mut rng = seeded(5);
        let xs: Vec<f64> = (0..100_000).map(|_| r.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| r.contains(x)));
        let neg = xs.iter().filter(|&&x| x < 0.0).count() as f64 / xs.len() as f64;
        assert!((neg - 0.5).abs() < 0.01);
        assert!(RangeSpec::union(vec![[0.0, 3.0].into(), [2.0, 4.0].into()]).is_err());
    }

    #[test]
    fn empirical_mean_near_midpoint() {
        let r = RangeSpec::new(2.0, 6.0).unwrap();
        let mut rng = seeded(6);
        let n = 100_000;
        let mean = (0..n).map(|_| r.sample(&mut rng)).sum::<f64>() / n as f64;
        // var of U[2,6] is 16/12
        let se = (16.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * se);
    }

    #[test]
    fn range_serde_forms() {
        #[derive(Deserialize)]
        struct W {
            r: RangeSpec,
        }
        let single: W = toml::from_str("r = [1.0, 2.0]").unwrap();
        assert_eq!(single.r, RangeSpec::new(1.0, 2.0).unwrap());
        let union: W = toml::from_str("r = [[-6.0, -2.0], [2.0, 6.0]]").unwrap();
        assert_eq!(union.r.intervals().len(), 2);
        assert!(toml::from_str::<W>("r = [2.0, 1.0]").is_err());
    }

    proptest! {
        #[test]
        fn overlap_matches_set_intersection(d in 4usize..300, s in 0.01f64..0.5, o in 0.0f64..=1.0, u in 0.0f64..1.0) {
            let sp = spec(d, s, o, Operation::Add);
            prop_assume!(sp.validate().is_ok());
            let g = sp.subset_indices(u * sp.offset_upper()).unwrap();
            let a: BTreeSet<usize> = g.a.clone().collect();
            let b: BTreeSet<usize> = g.b.clone().collect();
            prop_assert_eq!(a.len(), sp.subset_len());
            prop_assert_eq!(b.len(), sp.subset_len());
            prop_assert_eq!(a.intersection(&b).count(), sp.overlap_len());
            prop_assert_eq!(g.overlap(), sp.overlap_len());
            prop_assert!(g.a.end <= d && g.b.end <= d);
        }

        #[test]
        fn subset_sums_bounded(seed in 0u64..500) {
            let sp = DatasetSpec::with_defaults(Operation::Add);
            let mut rng = seeded(seed);
            let task = Task::sample(sp, &mut rng).unwrap();
            let b = sample_batch(&task, Split::Interpolation, 4, &mut rng).unwrap();
            for r in 0..4 {
                let (a, bb) = task.geometry.sums(b.x.row(r));
                for s in [a, bb] {
                    prop_assert!((25.0..=50.0).contains(&s));
                }
            }
        }
    }
}
