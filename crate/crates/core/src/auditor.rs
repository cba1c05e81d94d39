//! Oracle-efficient randomized auditor: a halving learner proposes a
//! labeling, an online set cover with exponential thresholds builds a
//! specifying set for it, and the proposal is either certified on that set
//! or corrected by a counterexample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bitset::BitSet;
use crate::domain::{
    diam_mu, version_space, within_tolerance, Group, Hypothesis, HypothesisClass, Label, VersionSpace,
};
use crate::error::{AuditError, Result};
use crate::oracle::{AuditResult, CountingOracle, LabelOracle};

/// Majority vote of the version space on every example, ties to `+1`.
pub fn halving_predict(v: &VersionSpace, class: &HypothesisClass) -> Result<Hypothesis> {
    if v.is_empty() {
        return Err(AuditError::NonRealizableOracle);
    }
    let n = v.len();
    let labels = (0..class.num_examples())
        .map(|x| {
            let pos = v.bits().intersection(class.positives_at(x)).count();
            if 2 * pos >= n {
                Label::Pos
            } else {
                Label::Neg
            }
        })
        .collect();
    Ok(Hypothesis::new(labels))
}

/// Constrained ERM over the class: the smallest-index hypothesis minimizing
/// weighted error on `a` among those with zero error on `b`.
pub fn c_erm(class: &HypothesisClass, a: &[(usize, Label, f64)], b: &[(usize, Label)]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, h) in class.hypotheses().iter().enumerate() {
        if b.iter().any(|&(x, y)| h.label(x) != y) {
            continue;
        }
        let err: f64 = a.iter().filter(|&&(x, y, _)| h.label(x) != y).map(|&(_, _, w)| w).sum();
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, i));
        }
    }
    best.map(|(_, i)| i).ok_or(AuditError::Infeasible)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Max,
    Min,
}

fn agrees_on_set(h: &Hypothesis, hhat: &Hypothesis, t: &[usize]) -> bool {
    t.iter().all(|&x| h.label(x) == hhat.label(x))
}

/// Extreme of mu over `{h in H : h(T) = hhat(T)}` by enumeration.
pub fn extremal_constrained(class: &HypothesisClass, t: &[usize], hhat: &Hypothesis, dir: Direction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in class.hypotheses().iter().enumerate() {
        if !agrees_on_set(h, hhat, t) {
            continue;
        }
        let better = match (best, dir) {
            (None, _) => true,
            (Some(b), Direction::Max) => class.mu_of(i) > class.mu_of(b),
            (Some(b), Direction::Min) => class.mu_of(i) < class.mu_of(b),
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// The same extreme through one constrained-ERM call. Labeling group 1 as
/// `+1` and group 0 as `-1`, weighted by the conditional masses, gives error
/// `1 - mu(h)`; the opposite labeling gives `1 + mu(h)`.
pub fn extremal_via_erm(class: &HypothesisClass, t: &[usize], hhat: &Hypothesis, dir: Direction) -> Option<usize> {
    let d = class.domain();
    let a: Vec<(usize, Label, f64)> = d
        .examples()
        .iter()
        .map(|e| {
            let toward_max = match e.group {
                Group::One => Label::Pos,
                Group::Zero => Label::Neg,
            };
            let y = match dir {
                Direction::Max => toward_max,
                Direction::Min => toward_max.flip(),
            };
            (e.id, y, e.mass())
        })
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    let b: Vec<(usize, Label)> = t.iter().map(|&x| (x, hhat.label(x))).collect();
    c_erm(class, &a, &b).ok()
}

/// Weights, exponential thresholds and the selected set of one outer round.
#[derive(Clone, Debug)]
pub struct SetCoverState {
    weights: Vec<f64>,
    thresholds: Vec<f64>,
    selected: BitSet,
    order: Vec<usize>,
    pub doublings: u32,
    pub fallbacks: u32,
    pub max_weight: f64,
    pub max_total_weight: f64,
}

impl SetCoverState {
    /// Fresh state: `w = 1/|X|`, thresholds `-ln(u)/lambda` drawn in id order,
    /// nothing selected until the first doubling.
    pub fn new<R: Rng + ?Sized>(num_examples: usize, lambda: f64, rng: &mut R) -> Self {
        let w0 = 1.0 / num_examples as f64;
        let thresholds = (0..num_examples).map(|_| -(1.0 - rng.random::<f64>()).ln() / lambda).collect();
        Self {
            weights: vec![w0; num_examples],
            thresholds,
            selected: BitSet::new(num_examples),
            order: Vec::new(),
            doublings: 0,
            fallbacks: 0,
            max_weight: w0,
            max_total_weight: 1.0,
        }
    }

    /// `new` with a dedicated seeded generator.
    pub fn seeded(num_examples: usize, lambda: f64, seed: u64) -> Self {
        Self::new(num_examples, lambda, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Selected examples in the order they entered.
    pub fn selected(&self) -> &[usize] {
        &self.order
    }

    pub fn contains(&self, x: usize) -> bool {
        self.selected.contains(x)
    }

    fn add(&mut self, x: usize) {
        if !self.selected.contains(x) {
            self.selected.insert(x);
            self.order.push(x);
        }
    }

    fn refresh(&mut self) {
        for x in 0..self.weights.len() {
            if self.weights[x] >= self.thresholds[x] {
                self.add(x);
            }
        }
    }

    fn double(&mut self, delta: &[usize]) {
        for &x in delta {
            self.weights[x] *= 2.0;
            self.max_weight = self.max_weight.max(self.weights[x]);
        }
        self.doublings += 1;
        self.max_total_weight = self.max_total_weight.max(self.weights.iter().sum());
        self.refresh();
    }
}

/// Pair of extremal hypotheses left once the selected set specifies `hhat`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtremalPair {
    pub max: usize,
    pub min: usize,
    pub gap: f64,
}

/// Grows `state`'s selected set until every pair of hypotheses agreeing with
/// `hhat` on it has mu-gap at most `2 eps`. Returns the final extremal pair,
/// or `None` when no hypothesis agrees with `hhat` on the selected set.
pub fn online_specifying_set(
    hhat: &Hypothesis,
    class: &HypothesisClass,
    eps: f64,
    state: &mut SetCoverState,
) -> Option<ExtremalPair> {
    let mut last: Option<(usize, usize, usize)> = None;
    loop {
        let t = state.selected();
        let h1 = extremal_via_erm(class, t, hhat, Direction::Max)?;
        let h2 = extremal_via_erm(class, t, hhat, Direction::Min)?;
        let gap = class.mu_of(h1) - class.mu_of(h2);
        if within_tolerance(gap, eps) {
            return Some(ExtremalPair { max: h1, min: h2, gap });
        }
        let (g1, g2) = (class.hypothesis(h1), class.hypothesis(h2));
        let delta: Vec<usize> = (0..class.num_examples())
            .filter(|&x| g1.label(x) != hhat.label(x) || g2.label(x) != hhat.label(x))
            .collect();
        let size = state.selected().len();
        if last == Some((h1, h2, size)) {
            let x = delta
                .iter()
                .copied()
                .fold(None, |best: Option<usize>, x| match best {
                    Some(b) if state.weights[b] >= state.weights[x] => Some(b),
                    _ => Some(x),
                })
                .expect("distinct extremes disagree somewhere");
            log::debug!("set cover stalled on pair ({h1}, {h2}); adding example {x}");
            state.add(x);
            state.fallbacks += 1;
        } else {
            while delta.iter().map(|&x| state.weights[x]).sum::<f64>() <= 1.0 {
                state.double(&delta);
            }
        }
        last = Some((h1, h2, size));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OracleAuditConfig {
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub budget: Option<usize>,
}

/// What happened in one outer round.
#[derive(Clone, Debug, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub hhat_hash: String,
    pub t_size: usize,
    pub doublings: u32,
    pub mistake: bool,
    /// mu-gap of the final extremal pair; `None` when the programs were infeasible.
    pub gap: Option<f64>,
    #[serde(skip)]
    pub hhat: Hypothesis,
    #[serde(skip)]
    pub selected: Vec<usize>,
    #[serde(skip)]
    pub fallbacks: u32,
    #[serde(skip)]
    pub max_weight: f64,
    #[serde(skip)]
    pub max_total_weight: f64,
}

#[derive(Clone, Debug)]
pub struct OracleAuditReport {
    pub result: AuditResult,
    pub rounds: Vec<RoundRecord>,
    pub lambda: f64,
}

impl OracleAuditReport {
    pub fn mistakes(&self) -> usize {
        self.rounds.iter().filter(|r| r.mistake).count()
    }

    /// One JSON object per round.
    pub fn trace_lines(&self) -> Vec<String> {
        self.rounds.iter().map(|r| serde_json::to_string(r).expect("plain record")).collect()
    }
}

/// Mistake bound of the halving learner, at least 1.
pub fn mistake_bound(class_size: usize) -> u32 {
    (class_size as f64).log2().ceil().max(1.0) as u32
}

/// Threshold rate `ln(|H|^2 M / delta)`.
pub fn threshold_rate(class_size: usize, delta: f64) -> f64 {
    let n = class_size as f64;
    (n * n * mistake_bound(class_size) as f64 / delta).ln()
}

pub fn oracle_audit<O: LabelOracle>(oracle: O, class: &HypothesisClass, cfg: &OracleAuditConfig) -> Result<OracleAuditReport> {
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(AuditError::InvalidInput(format!("eps must be positive, got {}", cfg.eps)));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(AuditError::InvalidInput(format!("delta must lie in (0,1), got {}", cfg.delta)));
    }
    let lambda = threshold_rate(class.len(), cfg.delta);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut oracle = CountingOracle::with_budget(oracle, cfg.budget);
    let mut rounds = Vec::new();
    loop {
        let v = version_space(class, oracle.transcript());
        let hhat = halving_predict(&v, class)?;
        let mut state = SetCoverState::new(class.num_examples(), lambda, &mut rng);
        let pair = online_specifying_set(&hhat, class, cfg.eps, &mut state);
        let mut mistake = false;
        let mut truncated = false;
        let mut order = state.selected().to_vec();
        order.sort_by(|&a, &b| state.weights()[b].total_cmp(&state.weights()[a]));
        for x in order {
            match oracle.query(x)? {
                Some(y) => mistake |= y != hhat.label(x),
                None => {
                    truncated = true;
                    break;
                }
            }
        }
        rounds.push(RoundRecord {
            round: rounds.len(),
            hhat_hash: hhat.digest(),
            t_size: state.selected().len(),
            doublings: state.doublings,
            mistake,
            gap: pair.map(|p| p.gap),
            selected: state.selected().to_vec(),
            hhat,
            fallbacks: state.fallbacks,
            max_weight: state.max_weight,
            max_total_weight: state.max_total_weight,
        });
        if truncated {
            let v = version_space(class, oracle.transcript());
            let estimate = diam_mu(&v, class).map_err(|_| AuditError::NonRealizableOracle)?.midpoint(class);
            return Ok(OracleAuditReport {
                result: AuditResult { estimate: Some(estimate), queries: oracle.queries(), transcript: oracle.into_transcript(), truncated },
                rounds,
                lambda,
            });
        }
        if !mistake {
            // agreeing on T with an infeasible T means no member of H labels like the oracle
            let p = pair.ok_or(AuditError::NonRealizableOracle)?;
            let estimate = 0.5 * (class.mu_of(p.max) + class.mu_of(p.min));
            return Ok(OracleAuditReport {
                result: AuditResult { estimate: Some(estimate), queries: oracle.queries(), transcript: oracle.into_transcript(), truncated: false },
                rounds,
                lambda,
            });
        }
    }
}
