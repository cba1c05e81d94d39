//! Passive i.i.d. estimation and phased disagreement-based active learning,
//! the two reference auditors.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitset::BitSet;
use crate::domain::{
    diam_mu, disagreement_region, restrict, Domain, Group, HypothesisClass, Label, VersionSpace,
};
use crate::error::{AuditError, Result};
use crate::oracle::{AuditResult, CountingOracle, LabelOracle};

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(AuditError::InvalidInput(format!("{name} must lie in (0,1), got {v}")))
    }
}

/// Per-group sample size `ceil(2 ln(4/delta) / eps^2)`.
pub fn iid_sample_size(eps: f64, delta: f64) -> usize {
    (2.0 * (4.0 / delta).ln() / (eps * eps)).ceil() as usize
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IidOptions {
    /// Overrides the Hoeffding sample size.
    pub samples_per_group: Option<usize>,
    pub budget: Option<usize>,
}

struct GroupSampler {
    ids: Vec<usize>,
    dist: WeightedIndex<f64>,
}

impl GroupSampler {
    fn new(domain: &Domain, group: Group) -> Result<Self> {
        let (ids, w): (Vec<usize>, Vec<f64>) =
            domain.group_members(group).filter(|e| e.mass() > 0.0).map(|e| (e.id, e.mass())).unzip();
        let dist = WeightedIndex::new(&w).map_err(|e| AuditError::InvalidInput(format!("group {}: {e}", group.bit())))?;
        Ok(Self { ids, dist })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        self.ids[self.dist.sample(rng)]
    }
}

/// Difference of positive fractions between i.i.d. draws from group 1 and
/// group 0. Draws alternate group 1, group 0 from one seeded stream, so a
/// smaller sample size yields a prefix of a larger one.
pub fn iid_audit<O: LabelOracle>(
    oracle: O,
    domain: &Domain,
    eps: f64,
    delta: f64,
    seed: u64,
    opts: IidOptions,
) -> Result<AuditResult> {
    check_unit("eps", eps)?;
    check_unit("delta", delta)?;
    let n = opts.samples_per_group.unwrap_or_else(|| iid_sample_size(eps, delta));
    let s1 = GroupSampler::new(domain, Group::One)?;
    let s0 = GroupSampler::new(domain, Group::Zero)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = CountingOracle::with_budget(oracle, opts.budget);
    let (mut pos, mut seen) = ([0usize; 2], [0usize; 2]);
    let mut truncated = false;
    'draws: for _ in 0..n {
        for (g, sampler) in [(1, &s1), (0, &s0)] {
            let x = sampler.draw(&mut rng);
            let Some(y) = oracle.query(x)? else {
                truncated = true;
                break 'draws;
            };
            seen[g] += 1;
            pos[g] += usize::from(y == Label::Pos);
        }
    }
    let estimate = (seen[0] > 0 && seen[1] > 0)
        .then(|| pos[1] as f64 / seen[1] as f64 - pos[0] as f64 / seen[0] as f64);
    Ok(AuditResult { estimate, queries: oracle.queries(), transcript: oracle.into_transcript(), truncated })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalMode {
    /// Plain i.i.d. samples.
    Sampled,
    /// Resample until both sample conditions hold.
    Checked { max_attempts: usize },
}

pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

/// Number of phases `ceil(log2(16 ln|H| / (p eps)))`, zero for a single hypothesis.
pub fn cal_rounds(class_size: usize, min_group_prob: f64, eps: f64) -> u32 {
    let arg = 16.0 * (class_size as f64).ln() / (min_group_prob * eps);
    if arg <= 1.0 {
        0
    } else {
        arg.log2().ceil() as u32
    }
}

/// Disagreement regions and masses of every unordered hypothesis pair.
pub struct PairTable {
    pairs: Vec<(BitSet, f64)>,
    ln_h: f64,
}

impl PairTable {
    pub fn new(class: &HypothesisClass) -> Self {
        let d = class.domain();
        let mut pairs = Vec::new();
        for i in 0..class.len() {
            for j in i + 1..class.len() {
                let dis = class.disagreement_set(i, j);
                let mass = d.mass_of(&dis);
                pairs.push((dis, mass));
            }
        }
        Self { pairs, ln_h: (class.len() as f64).ln() }
    }
}

/// Both sample conditions of a CAL phase: the sample does not over-represent
/// the disagreement region, and every pair it fails to separate is close.
pub fn feasibility_check(sample: &[usize], v: &VersionSpace, class: &HypothesisClass, pairs: &PairTable) -> bool {
    let m_n = sample.len() as f64;
    let d = class.domain();
    let dis = match disagreement_region(v, class) {
        Ok(dis) => dis,
        Err(_) => BitSet::new(class.num_examples()),
    };
    let emp = sample.iter().filter(|&&x| dis.contains(x)).count() as f64 / m_n;
    if emp > 2.0 * d.mass_of(&dis) + 8f64.ln() / m_n {
        return false;
    }
    let hit = BitSet::from_indices(class.num_examples(), sample.iter().copied());
    let radius = 16.0 * pairs.ln_h / m_n;
    pairs.pairs.iter().all(|(pair_dis, mass)| *mass <= radius || pair_dis.intersects(&hit))
}

#[derive(Clone, Debug)]
pub struct CalRound {
    pub n: u32,
    pub m_n: usize,
    pub sample: Vec<usize>,
    /// Distinct ids of `sample ∩ DIS(V_n)` in first-draw order.
    pub queried: Vec<usize>,
    pub attempts: usize,
    pub version_space: VersionSpace,
}

#[derive(Clone, Debug)]
pub struct CalReport {
    pub result: AuditResult,
    pub rounds: Vec<CalRound>,
    pub planned_rounds: u32,
    pub final_space: VersionSpace,
}

pub fn phased_cal_audit<O: LabelOracle>(
    oracle: O,
    class: &HypothesisClass,
    eps: f64,
    seed: u64,
    mode: CalMode,
    budget: Option<usize>,
) -> Result<CalReport> {
    check_unit("eps", eps)?;
    let d = class.domain();
    let planned = cal_rounds(class.len(), d.min_group_prob(), eps);
    let marginal = WeightedIndex::new(d.marginal_masses())
        .map_err(|e| AuditError::InvalidInput(format!("marginal: {e}")))?;
    let pairs = matches!(mode, CalMode::Checked { .. }).then(|| PairTable::new(class));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = CountingOracle::with_budget(oracle, budget);
    let mut v = class.full_space();
    let mut rounds = Vec::new();
    let mut truncated = false;
    'phases: for n in 1..=planned {
        let m_n = 1usize << n;
        let mut attempts = 0;
        let sample = loop {
            attempts += 1;
            let s: Vec<usize> = (0..m_n).map(|_| marginal.sample(&mut rng)).collect();
            match (mode, &pairs) {
                (CalMode::Checked { max_attempts }, Some(p)) => {
                    if feasibility_check(&s, &v, class, p) {
                        break s;
                    }
                    if attempts >= max_attempts {
                        return Err(AuditError::FeasibilityTimeout { round: n as usize, attempts });
                    }
                }
                _ => break s,
            }
        };
        let dis = disagreement_region(&v, class)?;
        let mut seen = BitSet::new(class.num_examples());
        let mut queried = Vec::new();
        for &x in &sample {
            if dis.contains(x) && !seen.contains(x) {
                seen.insert(x);
                queried.push(x);
            }
        }
        let start = v.clone();
        for &x in &queried {
            let Some(y) = oracle.query(x)? else {
                truncated = true;
                break;
            };
            v = restrict(&v, x, y, class);
            if v.is_empty() {
                return Err(AuditError::NonRealizableOracle);
            }
        }
        rounds.push(CalRound { n, m_n, sample, queried, attempts, version_space: start });
        if truncated {
            break 'phases;
        }
    }
    let estimate = if truncated {
        diam_mu(&v, class)?.midpoint(class)
    } else {
        class.mu_of(v.first().ok_or(AuditError::NonRealizableOracle)?)
    };
    Ok(CalReport {
        result: AuditResult { estimate: Some(estimate), queries: oracle.queries(), transcript: oracle.into_transcript(), truncated },
        rounds,
        planned_rounds: planned,
        final_space: v,
    })
}
