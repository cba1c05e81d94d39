//! Finite domains, hypothesis classes and the version-space algebra every
//! auditor is built on.
//!
//! Demographic parity is measured as
//! `mu(h) = Pr(h(x) = +1 | x_A = 1) - Pr(h(x) = +1 | x_A = 0)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitset::BitSet;
use crate::error::{AuditError, Result};

/// Tolerance for the conditional masses of each group summing to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Slack applied to every `diam <= 2 eps` decision.
pub const DIAMETER_TOL: f64 = 1e-12;

/// True when a mu-diameter counts as resolved at accuracy `eps`.
pub fn within_tolerance(diameter: f64, eps: f64) -> bool {
    diameter <= 2.0 * eps + DIAMETER_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn from_sign(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Label::Pos),
            -1 => Ok(Label::Neg),
            other => Err(AuditError::InvalidInput(format!("label must be +1 or -1, got {other}"))),
        }
    }

    /// `sign(v)` with `sign(0) = +1`.
    pub fn of_value(v: f64) -> Self {
        if v >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    pub fn is_pos(self) -> bool {
        self == Label::Pos
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_sign(v).map_err(serde::de::Error::custom)
    }
}

/// Value of the sensitive attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Zero,
    One,
}

impl Group {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Group::Zero),
            1 => Ok(Group::One),
            other => Err(AuditError::InvalidInput(format!("group must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Group::Zero => 0,
            Group::One => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: usize,
    pub group: Group,
    /// `Pr(x | x_A = 0)`
    pub p0: f64,
    /// `Pr(x | x_A = 1)`
    pub p1: f64,
}

impl Example {
    pub fn new(id: usize, group: Group, mass: f64) -> Self {
        let (p0, p1) = match group {
            Group::Zero => (mass, 0.0),
            Group::One => (0.0, mass),
        };
        Self { id, group, p0, p1 }
    }

    /// Conditional mass within the example's own group.
    pub fn mass(&self) -> f64 {
        match self.group {
            Group::Zero => self.p0,
            Group::One => self.p1,
        }
    }
}

/// A finite example set carrying the two group-conditional distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    examples: Vec<Example>,
    pi1: f64,
}

impl Domain {
    pub fn new(examples: Vec<Example>, pi1: f64) -> Result<Self> {
        if examples.is_empty() {
            return Err(AuditError::InvalidInput("domain has no examples".into()));
        }
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(AuditError::InvalidInput(format!("pi1 must lie in (0,1), got {pi1}")));
        }
        let (mut s0, mut s1) = (0.0, 0.0);
        for (i, ex) in examples.iter().enumerate() {
            if ex.id != i {
                return Err(AuditError::InvalidInput(format!(
                    "example ids must be 0..m in order; position {i} has id {}",
                    ex.id
                )));
            }
            if !(ex.p0 >= 0.0 && ex.p1 >= 0.0) || !ex.p0.is_finite() || !ex.p1.is_finite() {
                return Err(AuditError::InvalidInput(format!("example {i} has a negative mass")));
            }
            let cross = match ex.group {
                Group::Zero => ex.p1,
                Group::One => ex.p0,
            };
            if cross != 0.0 {
                return Err(AuditError::InvalidInput(format!(
                    "example {i} carries mass in the other group"
                )));
            }
            s0 += ex.p0;
            s1 += ex.p1;
        }
        for (g, s) in [(0, s0), (1, s1)] {
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(AuditError::InvalidInput(format!(
                    "group {g} conditional masses sum to {s}, expected 1"
                )));
            }
        }
        Ok(Self { examples, pi1 })
    }

    /// Builds a domain from per-example groups and within-group masses.
    pub fn from_groups(groups: &[Group], masses: &[f64], pi1: f64) -> Result<Self> {
        if groups.len() != masses.len() {
            return Err(AuditError::InvalidInput("groups and masses differ in length".into()));
        }
        let examples =
            groups.iter().zip(masses).enumerate().map(|(i, (&g, &p))| Example::new(i, g, p)).collect();
        Self::new(examples, pi1)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, id: usize) -> &Example {
        &self.examples[id]
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    /// `min(Pr(x_A = 1), Pr(x_A = 0))`
    pub fn min_group_prob(&self) -> f64 {
        self.pi1.min(1.0 - self.pi1)
    }

    /// Marginal mass `pi1 * p1(x) + (1 - pi1) * p0(x)`.
    pub fn marginal(&self, id: usize) -> f64 {
        let ex = &self.examples[id];
        self.pi1 * ex.p1 + (1.0 - self.pi1) * ex.p0
    }

    pub fn marginal_masses(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.marginal(i)).collect()
    }

    pub fn mass_of(&self, set: &BitSet) -> f64 {
        set.iter().map(|i| self.marginal(i)).sum()
    }

    pub fn group_members(&self, group: Group) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.group == group)
    }
}

/// A classifier over a finite domain, stored as its label vector.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Hypothesis {
    labels: Vec<Label>,
}

impl Hypothesis {
    pub fn new(labels: Vec<Label>) -> Self {
        Self { labels }
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        signs.iter().map(|&s| Label::from_sign(s as i64)).collect::<Result<Vec<_>>>().map(Self::new)
    }

    pub fn constant(len: usize, label: Label) -> Self {
        Self { labels: vec![label; len] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, x: usize) -> Label {
        self.labels[x]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn negate(&self) -> Self {
        Self { labels: self.labels.iter().map(|l| l.flip()).collect() }
    }

    pub fn positives(&self) -> BitSet {
        BitSet::from_indices(self.len(), self.labels.iter().enumerate().filter(|(_, l)| l.is_pos()).map(|(i, _)| i))
    }

    pub fn agrees_on(&self, other: &Hypothesis, xs: impl IntoIterator<Item = usize>) -> bool {
        xs.into_iter().all(|x| self.labels[x] == other.labels[x])
    }

    /// Short content hash, used to tag trace records.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for l in &self.labels {
            hasher.update([l.sign() as u8]);
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

impl fmt::Debug for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.labels.iter().map(|l| if l.is_pos() { '+' } else { '-' }).collect();
        write!(f, "Hypothesis({s})")
    }
}

/// Demographic parity of `h` under `domain`.
pub fn mu(h: &Hypothesis, domain: &Domain) -> Result<f64> {
    if h.len() != domain.len() {
        return Err(AuditError::InvalidInput(format!(
            "hypothesis has {} labels but domain has {} examples",
            h.len(),
            domain.len()
        )));
    }
    let (mut pos1, mut pos0) = (0.0, 0.0);
    for (ex, l) in domain.examples().iter().zip(h.labels()) {
        if l.is_pos() {
            pos1 += ex.p1;
            pos0 += ex.p0;
        }
    }
    Ok(pos1 - pos0)
}

/// Marginal probability that `h` and `other` disagree.
pub fn disagreement_mass(h: &Hypothesis, other: &Hypothesis, domain: &Domain) -> Result<f64> {
    if h.len() != domain.len() || other.len() != domain.len() {
        return Err(AuditError::InvalidInput("hypothesis length does not match domain".into()));
    }
    Ok((0..domain.len()).filter(|&x| h.label(x) != other.label(x)).map(|x| domain.marginal(x)).sum())
}

/// The finite class `H` with precomputed mu values and per-example label
/// bitmaps.
#[derive(Clone, Debug)]
pub struct HypothesisClass {
    domain: Domain,
    hypotheses: Vec<Hypothesis>,
    mus: Vec<f64>,
    /// For each example, the hypotheses labeling it `+1`.
    positive_at: Vec<BitSet>,
    /// For each hypothesis, the examples it labels `+1`.
    positive_set: Vec<BitSet>,
}

impl HypothesisClass {
    pub fn new(domain: Domain, hypotheses: Vec<Hypothesis>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(AuditError::InvalidInput("hypothesis class is empty".into()));
        }
        let m = domain.len();
        let mut seen = std::collections::HashMap::new();
        for (i, h) in hypotheses.iter().enumerate() {
            if h.len() != m {
                return Err(AuditError::InvalidInput(format!(
                    "hypothesis {i} has {} labels, domain has {m}",
                    h.len()
                )));
            }
            if let Some(j) = seen.insert(h.clone(), i) {
                return Err(AuditError::InvalidInput(format!("hypotheses {j} and {i} are identical")));
            }
        }
        let n = hypotheses.len();
        let mus = hypotheses.iter().map(|h| mu(h, &domain)).collect::<Result<Vec<_>>>()?;
        let positive_set: Vec<BitSet> = hypotheses.iter().map(Hypothesis::positives).collect();
        let positive_at = (0..m)
            .map(|x| BitSet::from_indices(n, (0..n).filter(|&i| hypotheses[i].label(x).is_pos())))
            .collect();
        Ok(Self { domain, hypotheses, mus, positive_at, positive_set })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn num_examples(&self) -> usize {
        self.domain.len()
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn hypothesis(&self, i: usize) -> &Hypothesis {
        &self.hypotheses[i]
    }

    pub fn mu_of(&self, i: usize) -> f64 {
        self.mus[i]
    }

    pub fn mus(&self) -> &[f64] {
        &self.mus
    }

    pub fn positives_at(&self, x: usize) -> &BitSet {
        &self.positive_at[x]
    }

    pub fn positive_set(&self, i: usize) -> &BitSet {
        &self.positive_set[i]
    }

    /// Examples on which hypotheses `i` and `j` disagree.
    pub fn disagreement_set(&self, i: usize, j: usize) -> BitSet {
        self.positive_set[i].symmetric_difference(&self.positive_set[j])
    }

    pub fn full_space(&self) -> VersionSpace {
        VersionSpace(BitSet::full(self.len()))
    }

    pub fn index_of(&self, h: &Hypothesis) -> Option<usize> {
        self.hypotheses.iter().position(|g| g == h)
    }
}

/// Subset of class indices consistent with the labels seen so far.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct VersionSpace(BitSet);

impl VersionSpace {
    pub fn from_members(class_size: usize, members: impl IntoIterator<Item = usize>) -> Self {
        Self(BitSet::from_indices(class_size, members))
    }

    pub fn bits(&self) -> &BitSet {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(i)
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first()
    }

    pub fn is_subset(&self, other: &VersionSpace) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Stable 128-bit key of the canonical sorted member list.
    pub fn key(&self) -> u128 {
        let mut hasher = Sha256::new();
        for i in self.0.iter() {
            hasher.update((i as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut bytes = [0u8; 16];
        bytes.copy_from_slice(&digest[..16]);
        u128::from_le_bytes(bytes)
    }
}

/// Labeled queries in the order they were made.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<(usize, Label)>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (usize, Label)>) -> Result<Self> {
        let mut t = Self::new();
        for (x, y) in entries {
            t.push(x, y)?;
        }
        Ok(t)
    }

    /// Appends an entry; repeating an id with the same label is a no-op.
    pub fn push(&mut self, x: usize, y: Label) -> Result<()> {
        match self.label_of(x) {
            Some(prev) if prev != y => Err(AuditError::InvalidInput(format!(
                "example {x} labeled both {} and {}",
                prev.sign(),
                y.sign()
            ))),
            Some(_) => Ok(()),
            None => {
                self.entries.push((x, y));
                Ok(())
            }
        }
    }

    pub fn label_of(&self, x: usize) -> Option<Label> {
        self.entries.iter().find(|(id, _)| *id == x).map(|&(_, y)| y)
    }

    pub fn entries(&self) -> &[(usize, Label)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prefix(&self, n: usize) -> Self {
        Self { entries: self.entries[..n.min(self.entries.len())].to_vec() }
    }
}

/// Extremes of mu over a version space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diameter {
    pub value: f64,
    /// Smallest index attaining the maximum mu.
    pub argmax: usize,
    /// Smallest index attaining the minimum mu.
    pub argmin: usize,
}

impl Diameter {
    pub fn max_mu(&self, class: &HypothesisClass) -> f64 {
        class.mu_of(self.argmax)
    }

    pub fn min_mu(&self, class: &HypothesisClass) -> f64 {
        class.mu_of(self.argmin)
    }

    pub fn midpoint(&self, class: &HypothesisClass) -> f64 {
        0.5 * (self.max_mu(class) + self.min_mu(class))
    }
}

pub fn diam_mu(v: &VersionSpace, class: &HypothesisClass) -> Result<Diameter> {
    let mut members = v.members();
    let first = members.next().ok_or(AuditError::EmptyVersionSpace)?;
    let (mut argmax, mut argmin) = (first, first);
    for i in members {
        if class.mu_of(i) > class.mu_of(argmax) {
            argmax = i;
        }
        if class.mu_of(i) < class.mu_of(argmin) {
            argmin = i;
        }
    }
    Ok(Diameter { value: class.mu_of(argmax) - class.mu_of(argmin), argmax, argmin })
}

/// `V_x^y`: the members of `v` labeling `x` as `y`.
pub fn restrict(v: &VersionSpace, x: usize, y: Label, class: &HypothesisClass) -> VersionSpace {
    let pos = class.positives_at(x);
    VersionSpace(match y {
        Label::Pos => v.0.intersection(pos),
        Label::Neg => v.0.difference(pos),
    })
}

pub fn version_space(class: &HypothesisClass, transcript: &Transcript) -> VersionSpace {
    transcript
        .entries()
        .iter()
        .fold(class.full_space(), |v, &(x, y)| restrict(&v, x, y, class))
}

/// True when members of `v` disagree on `x`.
pub fn splits(v: &VersionSpace, x: usize, class: &HypothesisClass) -> bool {
    let pos = class.positives_at(x);
    v.0.intersects(pos) && !v.0.is_subset(pos)
}

pub fn disagreement_region(v: &VersionSpace, class: &HypothesisClass) -> Result<BitSet> {
    if v.is_empty() {
        return Err(AuditError::EmptyVersionSpace);
    }
    let m = class.num_examples();
    Ok(BitSet::from_indices(m, (0..m).filter(|&x| splits(v, x, class))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signs(v: &[i8]) -> Hypothesis {
        Hypothesis::from_signs(v).unwrap()
    }

    /// Group 1 uniform on {x0, x1}, group 0 a point mass on x2.
    fn small_domain() -> Domain {
        Domain::from_groups(&[Group::One, Group::One, Group::Zero], &[0.5, 0.5, 1.0], 0.5).unwrap()
    }

    #[test]
    fn mu_of_all_positive_is_zero() {
        let d = small_domain();
        assert_eq!(mu(&Hypothesis::constant(3, Label::Pos), &d).unwrap(), 0.0);
    }

    #[test]
    fn mu_weighted_sum() {
        // only x0 positive: 0.5 from group 1, nothing from group 0
        assert_eq!(mu(&signs(&[1, -1, -1]), &small_domain()).unwrap(), 0.5);
    }

    #[test]
    fn mu_rejects_length_mismatch() {
        assert!(matches!(mu(&signs(&[1, 1]), &small_domain()), Err(AuditError::InvalidInput(_))));
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::from_groups(&[Group::One, Group::Zero], &[0.9, 1.0], 0.5).is_err());
        assert!(Domain::from_groups(&[Group::One, Group::Zero], &[1.0, 1.0], 1.0).is_err());
        let bad = vec![Example { id: 0, group: Group::One, p0: 0.2, p1: 1.0 }, Example::new(1, Group::Zero, 1.0)];
        assert!(Domain::new(bad, 0.5).is_err());
        assert_eq!(small_domain().min_group_prob(), 0.5);
    }

    #[test]
    fn class_rejects_duplicates() {
        let d = small_domain();
        let r = HypothesisClass::new(d, vec![signs(&[1, 1, 1]), signs(&[1, 1, 1])]);
        assert!(r.is_err());
    }

    #[test]
    fn diameter_edge_cases() {
        let d = small_domain();
        let c = HypothesisClass::new(d, vec![signs(&[1, 1, 1]), signs(&[-1, -1, -1]), signs(&[1, -1, -1])]).unwrap();
        let single = VersionSpace::from_members(3, [2]);
        assert_eq!(diam_mu(&single, &c).unwrap().value, 0.0);
        let constants = VersionSpace::from_members(3, [0, 1]);
        assert_eq!(diam_mu(&constants, &c).unwrap().value, 0.0);
        let all = c.full_space();
        let dm = diam_mu(&all, &c).unwrap();
        assert_eq!(dm.value, 0.5);
        assert_eq!(dm.argmax, 2);
        assert_eq!(dm.argmin, 0);
        assert!(matches!(diam_mu(&VersionSpace::from_members(3, []), &c), Err(AuditError::EmptyVersionSpace)));
    }

    #[test]
    fn restrict_filters_members() {
        let d = small_domain();
        let c = HypothesisClass::new(d, vec![signs(&[1, 1, 1]), signs(&[1, -1, 1])]).unwrap();
        let v = c.full_space();
        assert_eq!(restrict(&v, 0, Label::Pos, &c), v);
        assert!(restrict(&v, 0, Label::Neg, &c).is_empty());
        let split = restrict(&v, 1, Label::Neg, &c);
        assert_eq!(split.members().collect::<Vec<_>>(), vec![1]);
        assert_eq!(disagreement_region(&v, &c).unwrap().iter().collect::<Vec<_>>(), vec![1]);
        assert!(disagreement_region(&split, &c).unwrap().is_empty());
    }

    #[test]
    fn disagreement_mass_cases() {
        let d = Domain::from_groups(&[Group::One, Group::One, Group::Zero], &[0.2, 0.8, 1.0], 0.5).unwrap();
        let h = signs(&[1, 1, -1]);
        assert_eq!(disagreement_mass(&h, &h, &d).unwrap(), 0.0);
        assert!((disagreement_mass(&h, &h.negate(), &d).unwrap() - 1.0).abs() < 1e-15);
        // x0 has marginal mass 0.5 * 0.2 = 0.1
        let g = signs(&[-1, 1, -1]);
        assert!((disagreement_mass(&h, &g, &d).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn transcript_rejects_conflicts() {
        let mut t = Transcript::new();
        t.push(3, Label::Pos).unwrap();
        t.push(3, Label::Pos).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.push(3, Label::Neg).is_err());
    }

    #[test]
    fn version_space_key_is_canonical() {
        let a = VersionSpace::from_members(10, [1, 4, 7]);
        let b = VersionSpace::from_members(10, [7, 1, 4]);
        assert_eq!(a.key(), b.key());
        assert_ne!(a.key(), VersionSpace::from_members(10, [1, 4]).key());
    }
}
