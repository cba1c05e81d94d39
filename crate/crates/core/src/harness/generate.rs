//! Instance generators: the shattered fixture, random label matrices and
//! hyperplane classes over a feature dataset.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{Domain, Group, Hypothesis, HypothesisClass, Label};
use crate::error::{AuditError, Result};
use crate::gaussian::LinearModel;

pub const SHATTERED_MAX: usize = 16;

/// Group 0 is a point mass on `x0`, group 1 is uniform on `x1..xn`, and the
/// class is every labeling with `h(x0) = -1`. Hypothesis `k` labels
/// `x_{i+1}` positive iff bit `i` of `k` is set, so index 0 is the all
/// negative labeling, returned as the designated target.
pub fn gen_shattered(n: usize) -> Result<(HypothesisClass, usize)> {
    if n == 0 {
        return Err(AuditError::InvalidInput("n must be positive".into()));
    }
    if n > SHATTERED_MAX {
        return Err(AuditError::SizeLimit { what: "n", got: n, max: SHATTERED_MAX });
    }
    let mut groups = vec![Group::Zero];
    let mut masses = vec![1.0];
    groups.extend(std::iter::repeat_n(Group::One, n));
    masses.extend(std::iter::repeat_n(1.0 / n as f64, n));
    let domain = Domain::from_groups(&groups, &masses, 0.5)?;
    let hypotheses = (0..1usize << n)
        .map(|k| {
            let mut labels = vec![Label::Neg];
            labels.extend((0..n).map(|i| if k >> i & 1 == 1 { Label::Pos } else { Label::Neg }));
            Hypothesis::new(labels)
        })
        .collect();
    Ok((HypothesisClass::new(domain, hypotheses)?, 0))
}

fn dedup(hs: impl IntoIterator<Item = Hypothesis>) -> Vec<Hypothesis> {
    let mut seen = HashSet::new();
    hs.into_iter().filter(|h| seen.insert(h.clone())).collect()
}

/// Random domain of `m` examples (both groups nonempty, random masses,
/// `pi1` in `[0.3, 0.7]`) and `k` random labelings, duplicates dropped.
pub fn gen_random_class(m: usize, k: usize, seed: u64) -> Result<HypothesisClass> {
    if m < 2 {
        return Err(AuditError::InvalidInput("need at least two examples".into()));
    }
    if k < 2 {
        return Err(AuditError::InvalidInput("need at least two hypotheses".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Group> = (0..m)
        .map(|i| match i {
            0 => Group::Zero,
            1 => Group::One,
            _ => if rng.random_bool(0.5) { Group::One } else { Group::Zero },
        })
        .collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let total = |g: Group| groups.iter().zip(&raw).filter(|(gi, _)| **gi == g).map(|(_, w)| w).sum::<f64>();
    let (t0, t1) = (total(Group::Zero), total(Group::One));
    let masses: Vec<f64> =
        groups.iter().zip(&raw).map(|(g, w)| if *g == Group::Zero { w / t0 } else { w / t1 }).collect();
    let pi1 = rng.random_range(0.3..=0.7);
    let domain = Domain::from_groups(&groups, &masses, pi1)?;
    let hs = dedup((0..k).map(|_| {
        Hypothesis::new((0..m).map(|_| if rng.random_bool(0.5) { Label::Pos } else { Label::Neg }).collect())
    }));
    if hs.len() < 2 {
        return Err(AuditError::DegenerateClass);
    }
    HypothesisClass::new(domain, hs)
}

/// Feature rows with the empirical distribution as the domain.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub domain: Domain,
    pub features: Vec<Vec<f64>>,
}

/// `rows` points in `R^dim`: group 1 drawn from `N(shift, I)` with a
/// random shift, group 0 from `N(0, I)`; each group uniform over its rows.
pub fn gen_gaussian_dataset(rows: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if rows < 2 || dim == 0 {
        return Err(AuditError::InvalidInput("need at least two rows and one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let groups: Vec<Group> = (0..rows)
        .map(|i| match i {
            0 => Group::Zero,
            1 => Group::One,
            _ => if rng.random_bool(0.5) { Group::One } else { Group::Zero },
        })
        .collect();
    let features = groups
        .iter()
        .map(|g| {
            (0..dim)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if *g == Group::One { z + shift[j] } else { z }
                })
                .collect()
        })
        .collect();
    Ok(Dataset { domain: uniform_domain(&groups)?, features })
}

/// Each group uniform over its own rows, `pi1` the group-1 row fraction.
pub fn uniform_domain(groups: &[Group]) -> Result<Domain> {
    let n1 = groups.iter().filter(|g| **g == Group::One).count();
    let n0 = groups.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(AuditError::InvalidInput("both groups must have at least one row".into()));
    }
    let masses: Vec<f64> =
        groups.iter().map(|g| if *g == Group::One { 1.0 / n1 as f64 } else { 1.0 / n0 as f64 }).collect();
    Domain::from_groups(groups, &masses, n1 as f64 / groups.len() as f64)
}

/// Class induced by the given hyperplanes on the dataset rows, duplicates
/// dropped.
pub fn threshold_class_from_models(dataset: &Dataset, models: &[LinearModel]) -> Result<HypothesisClass> {
    let hs = dedup(
        models
            .iter()
            .map(|m| Hypothesis::new(dataset.features.iter().map(|x| m.predict(x)).collect())),
    );
    if hs.len() < 2 {
        return Err(AuditError::DegenerateClass);
    }
    HypothesisClass::new(dataset.domain.clone(), hs)
}

/// `k` hyperplanes with Gaussian normals, each passing through a random
/// dataset row.
pub fn gen_threshold_class(dataset: &Dataset, k: usize, seed: u64) -> Result<HypothesisClass> {
    if k < 2 {
        return Err(AuditError::InvalidInput("need at least two hypotheses".into()));
    }
    let dim = dataset.features.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut models = Vec::with_capacity(k);
    while models.len() < k {
        let a: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let row = &dataset.features[rng.random_range(0..dataset.features.len())];
        let b = -a.iter().zip(row).map(|(a, x)| a * x).sum::<f64>();
        if let Ok(m) = LinearModel::new(a, b) {
            models.push(m);
        }
    }
    threshold_class_from_models(dataset, &models)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shattered_sizes_and_mus() {
        let (c, target) = gen_shattered(4).unwrap();
        assert_eq!(c.len(), 16);
        assert_eq!(c.mu_of(target), 0.0);
        let mut mus: Vec<f64> = c.mus().to_vec();
        mus.sort_by(f64::total_cmp);
        mus.dedup();
        assert_eq!(mus, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(gen_shattered(2).unwrap().0.len(), 4);
        assert!(matches!(gen_shattered(17), Err(AuditError::SizeLimit { .. })));
    }

    #[test]
    fn random_class_is_reproducible_and_distinct() {
        let a = gen_random_class(8, 20, 42).unwrap();
        let b = gen_random_class(8, 20, 42).unwrap();
        assert_eq!(a.hypotheses(), b.hypotheses());
        assert_eq!(a.domain(), b.domain());
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a.hypothesis(i), a.hypothesis(j));
            }
        }
    }

    #[test]
    fn identical_hyperplanes_are_degenerate() {
        let ds = gen_gaussian_dataset(20, 2, 1).unwrap();
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        assert!(matches!(threshold_class_from_models(&ds, &[m.clone(), m]), Err(AuditError::DegenerateClass)));
        let c = gen_threshold_class(&ds, 10, 3).unwrap();
        assert!(c.len() >= 2);
        assert_eq!(c.hypotheses(), gen_threshold_class(&ds, 10, 3).unwrap().hypotheses());
    }
}
