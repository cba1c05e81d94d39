//! The minimax value function `Cost(V)`, the optimal deterministic auditor
//! built on it, and exact combinatorial cross-checks (decision-tree depth,
//! minimum specifying sets, extended teaching dimension).
//!
//! `Cost(V) = 0` when `diam_mu(V) <= 2 eps`, otherwise
//! `1 + min_x max_y Cost(V[(x, y)])`. The min ranges over the disagreement
//! region of `V` and the max over labels that leave `V` nonempty; both
//! restrictions preserve the value and keep the recursion well founded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    diam_mu, restrict, splits, within_tolerance, Hypothesis, HypothesisClass, Label, VersionSpace,
};
use crate::error::{AuditError, Result};
use crate::oracle::{AuditResult, CountingOracle, LabelOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub cost: u32,
    pub best_query: Option<usize>,
}

const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    class_hash: String,
    eps: f64,
    entries: BTreeMap<String, CostEntry>,
}

/// Memo table for one `(class, eps)` pair. Entries are never overwritten.
#[derive(Debug, Default)]
pub struct CostTable {
    eps: f64,
    entries: HashMap<VersionSpace, CostEntry>,
    /// Entries restored from a cache file, keyed by `VersionSpace::key`.
    persisted: HashMap<u128, CostEntry>,
}

impl CostTable {
    pub fn new(eps: f64) -> Self {
        Self { eps, ..Default::default() }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, v: &VersionSpace) -> Option<CostEntry> {
        self.entries.get(v).copied().or_else(|| {
            if self.persisted.is_empty() {
                None
            } else {
                self.persisted.get(&v.key()).copied()
            }
        })
    }

    fn insert(&mut self, v: VersionSpace, entry: CostEntry) {
        self.entries.entry(v).or_insert(entry);
    }

    /// All memoized version spaces with their entries.
    pub fn iter(&self) -> impl Iterator<Item = (&VersionSpace, &CostEntry)> {
        self.entries.iter()
    }

    pub fn save(&self, path: impl AsRef<Path>, class_hash: &str) -> Result<()> {
        let mut entries: BTreeMap<String, CostEntry> =
            self.persisted.iter().map(|(k, e)| (format!("{k:032x}"), *e)).collect();
        for (v, e) in &self.entries {
            entries.insert(format!("{:032x}", v.key()), *e);
        }
        let file = CacheFile { version: CACHE_VERSION, class_hash: class_hash.to_string(), eps: self.eps, entries };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    /// Loads a cache file; `Ok(None)` when it belongs to another class, eps
    /// or format version.
    pub fn load(path: impl AsRef<Path>, class_hash: &str, eps: f64) -> Result<Option<Self>> {
        let file: CacheFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.version != CACHE_VERSION || file.class_hash != class_hash || file.eps != eps {
            return Ok(None);
        }
        let mut persisted = HashMap::with_capacity(file.entries.len());
        for (k, e) in file.entries {
            let key = u128::from_str_radix(&k, 16)
                .map_err(|_| AuditError::InvalidInput(format!("bad cache key {k}")))?;
            persisted.insert(key, e);
        }
        Ok(Some(Self { eps, entries: HashMap::new(), persisted }))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(AuditError::InvalidInput(format!("eps must be positive, got {eps}")))
    }
}

fn solve(v: &VersionSpace, class: &HypothesisClass, table: &mut CostTable) -> CostEntry {
    if let Some(e) = table.get(v) {
        return e;
    }
    // members are nonempty here: callers never recurse into empty branches
    let diam = diam_mu(v, class).expect("nonempty version space").value;
    let entry = if within_tolerance(diam, table.eps) {
        CostEntry { cost: 0, best_query: None }
    } else {
        let mut best: Option<(u32, usize)> = None;
        for x in 0..class.num_examples() {
            if !splits(v, x, class) {
                continue;
            }
            let pos = restrict(v, x, Label::Pos, class);
            let c_pos = solve(&pos, class, table).cost;
            if best.is_some_and(|(b, _)| c_pos >= b) {
                continue;
            }
            let neg = restrict(v, x, Label::Neg, class);
            let worst = c_pos.max(solve(&neg, class, table).cost);
            if best.is_none_or(|(b, _)| worst < b) {
                best = Some((worst, x));
                if worst == 0 {
                    break;
                }
            }
        }
        let (c, x) = best.expect("distinct hypotheses always disagree somewhere");
        CostEntry { cost: c + 1, best_query: Some(x) }
    };
    table.insert(v.clone(), entry);
    entry
}

/// Minimax number of queries needed to bring `diam_mu(v)` to `2 eps`.
pub fn cost(v: &VersionSpace, eps: f64, class: &HypothesisClass, table: &mut CostTable) -> Result<u32> {
    check_eps(eps)?;
    if eps != table.eps {
        return Err(AuditError::InvalidInput(format!("table built for eps {} used with {eps}", table.eps)));
    }
    if v.is_empty() {
        return Err(AuditError::EmptyVersionSpace);
    }
    Ok(solve(v, class, table).cost)
}

/// The query Alg. "minimax auditing" makes from `v`: the smallest id
/// attaining `min_x max_y Cost(V_x^y)`.
pub fn best_query(v: &VersionSpace, eps: f64, class: &HypothesisClass, table: &mut CostTable) -> Result<usize> {
    cost(v, eps, class, table)?;
    table.get(v).and_then(|e| e.best_query).ok_or(AuditError::NoQueryNeeded)
}

/// Optimal deterministic audit: query the minimax-best point until the
/// version space has mu-diameter at most `2 eps`, then return the midpoint.
pub fn minimax_audit<O: LabelOracle>(
    oracle: O,
    class: &HypothesisClass,
    eps: f64,
    budget: Option<usize>,
    table: &mut CostTable,
) -> Result<AuditResult> {
    let mut oracle = CountingOracle::with_budget(oracle, budget);
    let mut v = class.full_space();
    let mut truncated = false;
    loop {
        let d = diam_mu(&v, class)?;
        if within_tolerance(d.value, eps) {
            break;
        }
        let x = best_query(&v, eps, class, table)?;
        let Some(y) = oracle.query(x)? else {
            truncated = true;
            break;
        };
        v = restrict(&v, x, y, class);
        if v.is_empty() {
            return Err(AuditError::NonRealizableOracle);
        }
    }
    let estimate = diam_mu(&v, class)?.midpoint(class);
    Ok(AuditResult { estimate: Some(estimate), queries: oracle.queries(), transcript: oracle.into_transcript(), truncated })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeDepth {
    Depth(u32),
    Exceeded,
}

/// Minimum depth of an example-rooted decision tree whose leaves all have
/// mu-diameter at most `2 eps`, found by iterative deepening over every
/// example at every node. Independent of the `cost` recursion.
pub fn tree_depth_bruteforce(v: &VersionSpace, eps: f64, class: &HypothesisClass, depth_cap: u32) -> Result<TreeDepth> {
    check_eps(eps)?;
    let mut memo: HashMap<(VersionSpace, u32), bool> = HashMap::new();
    for depth in 0..=depth_cap {
        if separable(v, depth, eps, class, &mut memo) {
            return Ok(TreeDepth::Depth(depth));
        }
    }
    Ok(TreeDepth::Exceeded)
}

fn separable(
    v: &VersionSpace,
    depth: u32,
    eps: f64,
    class: &HypothesisClass,
    memo: &mut HashMap<(VersionSpace, u32), bool>,
) -> bool {
    let leaf_ok = match diam_mu(v, class) {
        Ok(d) => within_tolerance(d.value, eps),
        Err(_) => true,
    };
    if leaf_ok {
        return true;
    }
    if depth == 0 {
        return false;
    }
    if let Some(&r) = memo.get(&(v.clone(), depth)) {
        return r;
    }
    let r = (0..class.num_examples()).any(|x| {
        separable(&restrict(v, x, Label::Pos, class), depth - 1, eps, class, memo)
            && separable(&restrict(v, x, Label::Neg, class), depth - 1, eps, class, memo)
    });
    memo.insert((v.clone(), depth), r);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecMode {
    Exact,
    Greedy,
}

/// Largest domain for which exact subset enumeration is attempted.
pub const EXACT_SPEC_MAX_EXAMPLES: usize = 20;
/// Largest domain for which all `2^m` labelings are enumerated.
pub const XTD_MAX_EXAMPLES: usize = 16;

fn positive_masks(class: &HypothesisClass) -> Vec<u32> {
    class
        .hypotheses()
        .iter()
        .map(|h| h.labels().iter().enumerate().filter(|(_, l)| l.is_pos()).fold(0u32, |m, (i, _)| m | (1 << i)))
        .collect()
}

fn is_specifying(diffs: &[u32], mus: &[f64], set: u32, eps: f64) -> bool {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (d, &m) in diffs.iter().zip(mus) {
        if d & set == 0 {
            lo = lo.min(m);
            hi = hi.max(m);
        }
    }
    hi < lo || within_tolerance(hi - lo, eps)
}

/// Next larger integer with the same popcount.
fn next_combination(v: u32) -> u32 {
    let t = v | (v.wrapping_sub(1));
    let w = (!t & (!t).wrapping_neg()).wrapping_sub(1) >> (v.trailing_zeros() + 1);
    t.wrapping_add(1) | w
}

/// Exact `t(h)`: size and members of the first minimum specifying set in
/// (size, then lexicographic) order.
fn exact_specifying(diffs: &[u32], mus: &[f64], m: usize, eps: f64) -> u32 {
    if is_specifying(diffs, mus, 0, eps) {
        return 0;
    }
    let limit: u64 = 1u64 << m;
    for k in 1..=m {
        let mut set: u32 = (1u32 << k) - 1;
        while (set as u64) < limit {
            if is_specifying(diffs, mus, set, eps) {
                return set;
            }
            set = next_combination(set);
            if set == 0 {
                break;
            }
        }
    }
    (limit - 1) as u32
}

fn mask_to_ids(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// A `(mu, eps)`-specifying set for the (possibly improper) labeling `h`.
pub fn min_specifying_set(h: &Hypothesis, class: &HypothesisClass, eps: f64, mode: SpecMode) -> Result<Vec<usize>> {
    check_eps(eps)?;
    let m = class.num_examples();
    if h.len() != m {
        return Err(AuditError::InvalidInput(format!("labeling has {} entries, domain has {m}", h.len())));
    }
    match mode {
        SpecMode::Exact => {
            if m > EXACT_SPEC_MAX_EXAMPLES {
                return Err(AuditError::SizeLimit { what: "examples", got: m, max: EXACT_SPEC_MAX_EXAMPLES });
            }
            let target = positive_masks_of(h);
            let diffs: Vec<u32> = positive_masks(class).into_iter().map(|p| p ^ target).collect();
            Ok(mask_to_ids(exact_specifying(&diffs, class.mus(), m, eps)))
        }
        SpecMode::Greedy => Ok(greedy_specifying(h, class, eps)),
    }
}

fn positive_masks_of(h: &Hypothesis) -> u32 {
    h.labels().iter().enumerate().filter(|(_, l)| l.is_pos()).fold(0u32, |acc, (i, _)| acc | (1 << i))
}

/// Textbook greedy set cover over the pairs `(i, j)` with
/// `mu_i - mu_j > 2 eps`; example `x` covers a pair when either member
/// disagrees with `h` on `x`.
fn greedy_specifying(h: &Hypothesis, class: &HypothesisClass, eps: f64) -> Vec<usize> {
    let n = class.len();
    let m = class.num_examples();
    let mut uncovered: HashSet<(usize, usize)> = HashSet::new();
    for i in 0..n {
        for j in 0..n {
            if !within_tolerance(class.mu_of(i) - class.mu_of(j), eps) {
                uncovered.insert((i, j));
            }
        }
    }
    let differs = |i: usize, x: usize| class.hypothesis(i).label(x) != h.label(x);
    let mut chosen = Vec::new();
    while !uncovered.is_empty() {
        let (x, gain) = (0..m)
            .filter(|x| !chosen.contains(x))
            .map(|x| (x, uncovered.iter().filter(|&&(i, j)| differs(i, x) || differs(j, x)).count()))
            .fold((usize::MAX, 0), |best, cand| if cand.1 > best.1 { cand } else { best });
        if gain == 0 {
            break;
        }
        uncovered.retain(|&(i, j)| !(differs(i, x) || differs(j, x)));
        chosen.push(x);
    }
    chosen.sort_unstable();
    chosen
}

/// `max_h t(h)` over all `2^m` labelings of the domain.
pub fn xtd(class: &HypothesisClass, eps: f64) -> Result<u32> {
    check_eps(eps)?;
    let m = class.num_examples();
    if m > XTD_MAX_EXAMPLES {
        return Err(AuditError::SizeLimit { what: "examples", got: m, max: XTD_MAX_EXAMPLES });
    }
    let positives = positive_masks(class);
    let mut diffs = vec![0u32; positives.len()];
    let mut best = 0;
    for target in 0u32..(1u32 << m) {
        for (d, p) in diffs.iter_mut().zip(&positives) {
            *d = p ^ target;
        }
        best = best.max(exact_specifying(&diffs, class.mus(), m, eps).count_ones());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, Group};

    /// Group 0 is a point mass on x0, group 1 uniform on x1..xn; every
    /// labeling with h(x0) = -1.
    fn shattered(n: usize) -> HypothesisClass {
        let mut groups = vec![Group::Zero];
        let mut masses = vec![1.0];
        for _ in 0..n {
            groups.push(Group::One);
            masses.push(1.0 / n as f64);
        }
        let d = Domain::from_groups(&groups, &masses, 0.5).unwrap();
        let hs = (0..1usize << n)
            .map(|k| {
                let mut l = vec![Label::Neg];
                l.extend((0..n).map(|i| if k >> i & 1 == 1 { Label::Pos } else { Label::Neg }));
                Hypothesis::new(l)
            })
            .collect();
        HypothesisClass::new(d, hs).unwrap()
    }

    #[test]
    fn base_case_is_zero() {
        let c = shattered(4);
        let mut t = CostTable::new(0.5);
        assert_eq!(cost(&c.full_space(), 0.5, &c, &mut t).unwrap(), 0);
        assert!(matches!(best_query(&c.full_space(), 0.5, &c, &mut t), Err(AuditError::NoQueryNeeded)));
    }

    #[test]
    fn shattered_four_costs_two() {
        let c = shattered(4);
        let mut t = CostTable::new(0.25);
        assert_eq!(cost(&c.full_space(), 0.25, &c, &mut t).unwrap(), 2);
        // all four group-1 points are symmetric; tie goes to the smallest id
        assert_eq!(best_query(&c.full_space(), 0.25, &c, &mut t).unwrap(), 1);
        assert_eq!(tree_depth_bruteforce(&c.full_space(), 0.25, &c, 8).unwrap(), TreeDepth::Depth(2));
    }

    #[test]
    fn two_member_split_costs_one() {
        let c = shattered(2);
        let v = VersionSpace::from_members(4, [0, 3]);
        let mut t = CostTable::new(0.25);
        assert_eq!(cost(&v, 0.25, &c, &mut t).unwrap(), 1);
        assert_eq!(best_query(&v, 0.25, &c, &mut t).unwrap(), 1);
    }

    #[test]
    fn best_query_prefers_resolving_point() {
        // x0 splits {a, b} from {c}: both sides resolved. x1 isolates a only.
        let d = Domain::from_groups(&[Group::One, Group::One, Group::Zero], &[0.5, 0.5, 1.0], 0.5).unwrap();
        let hs = vec![
            Hypothesis::from_signs(&[-1, -1, -1]).unwrap(), // mu 0
            Hypothesis::from_signs(&[-1, 1, -1]).unwrap(),  // mu 0.5
            Hypothesis::from_signs(&[1, 1, -1]).unwrap(),   // mu 1
        ];
        let c = HypothesisClass::new(d, hs).unwrap();
        let mut t = CostTable::new(0.25);
        // x0: {0,1} (diam 0.5) vs {2}; x1: {0} vs {1,2} (diam 0.5): both resolve
        assert_eq!(cost(&c.full_space(), 0.25, &c, &mut t).unwrap(), 1);
        assert_eq!(best_query(&c.full_space(), 0.25, &c, &mut t).unwrap(), 0);
        let mut tight = CostTable::new(0.2);
        assert_eq!(cost(&c.full_space(), 0.2, &c, &mut tight).unwrap(), 2);
    }

    #[test]
    fn minimax_audit_on_shattered() {
        let c = shattered(4);
        let mut t = CostTable::new(0.25);
        let r = minimax_audit(c.hypothesis(0).clone(), &c, 0.25, None, &mut t).unwrap();
        assert_eq!(r.queries, 2);
        assert!(!r.truncated);
        assert!((r.estimate.unwrap() - 0.0).abs() <= 0.25);
    }

    #[test]
    fn minimax_audit_zero_queries_when_resolved() {
        let c = shattered(2);
        let mut t = CostTable::new(0.5);
        let r = minimax_audit(c.hypothesis(1).clone(), &c, 0.5, None, &mut t).unwrap();
        assert_eq!(r.queries, 0);
        assert_eq!(r.estimate, Some(0.5));
    }

    #[test]
    fn budget_truncates() {
        let c = shattered(4);
        let mut t = CostTable::new(0.25);
        let r = minimax_audit(c.hypothesis(5).clone(), &c, 0.25, Some(1), &mut t).unwrap();
        assert!(r.truncated);
        assert_eq!(r.queries, 1);
    }

    #[test]
    fn exact_and_greedy_specifying_sets() {
        let c = shattered(4);
        let h = c.hypothesis(0).clone();
        let exact = min_specifying_set(&h, &c, 0.25, SpecMode::Exact).unwrap();
        assert_eq!(exact.len(), 2);
        assert!(exact.iter().all(|&x| (1..=4).contains(&x)));
        let greedy = min_specifying_set(&h, &c, 0.25, SpecMode::Greedy).unwrap();
        assert!(greedy.len() >= exact.len());
        assert!(min_specifying_set(&h, &c, 0.5, SpecMode::Exact).unwrap().is_empty());
    }

    #[test]
    fn xtd_on_shattered() {
        let c = shattered(4);
        assert_eq!(xtd(&c, 0.25).unwrap(), 2);
        assert_eq!(xtd(&c, 0.5).unwrap(), 0);
    }

    #[test]
    fn gosper_enumerates_all_combinations() {
        let mut v = 0b111u32;
        let mut n = 0;
        while v < 1 << 6 {
            assert_eq!(v.count_ones(), 3);
            n += 1;
            v = next_combination(v);
        }
        assert_eq!(n, 20);
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let c = shattered(3);
        let mut t = CostTable::new(0.25);
        let full = cost(&c.full_space(), 0.25, &c, &mut t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        t.save(&path, "abc").unwrap();
        let mut restored = CostTable::load(&path, "abc", 0.25).unwrap().unwrap();
        assert_eq!(restored.get(&c.full_space()).unwrap().cost, full);
        assert_eq!(cost(&c.full_space(), 0.25, &c, &mut restored).unwrap(), full);
        assert!(CostTable::load(&path, "other", 0.25).unwrap().is_none());
        assert!(CostTable::load(&path, "abc", 0.1).unwrap().is_none());
    }
}
