//! Exact evaluators for what a transcript leaves undetermined.

use crate::bitset::BitSet;
use crate::domain::{diam_mu, version_space, HypothesisClass, Transcript, DIAMETER_TOL};
use crate::error::{AuditError, Result};

/// mu-diameter of the hypotheses consistent with `t`: how far an auditee
/// could move its reported fairness after the audit without contradicting
/// any answer.
pub fn mp_diameter(class: &HypothesisClass, t: &Transcript) -> Result<f64> {
    Ok(diam_mu(&version_space(class, t), class)?.value)
}

/// Mean of `|mu(h) - true_mu|` over the version space of `t`.
pub fn avg_error(class: &HypothesisClass, t: &Transcript, true_mu: f64) -> Result<f64> {
    let v = version_space(class, t);
    if v.is_empty() {
        return Err(AuditError::EmptyVersionSpace);
    }
    Ok(v.members().map(|i| (class.mu_of(i) - true_mu).abs()).sum::<f64>() / v.len() as f64)
}

/// `sup_{h, r' >= r} Pr(DIS(B(h, r'))) / r'`, evaluated at `r` and at every
/// achieved disagreement mass above it (the ball only changes there).
pub fn disagreement_coefficient(class: &HypothesisClass, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(AuditError::InvalidInput(format!("radius must be positive, got {r}")));
    }
    let d = class.domain();
    let n = class.len();
    let mut best: f64 = 0.0;
    for h in 0..n {
        let mut neighbors: Vec<(f64, BitSet)> = (0..n)
            .filter(|&j| j != h)
            .map(|j| {
                let dis = class.disagreement_set(h, j);
                (d.mass_of(&dis), dis)
            })
            .collect();
        neighbors.sort_by(|a, b| a.0.total_cmp(&b.0));
        // B(h, r') always contains h, so DIS(B) is the union of h's
        // disagreement sets with the other members.
        let mut region = BitSet::new(class.num_examples());
        let mut k = 0;
        while k < neighbors.len() && neighbors[k].0 <= r + DIAMETER_TOL {
            region.union_with(&neighbors[k].1);
            k += 1;
        }
        best = best.max(d.mass_of(&region) / r);
        while k < neighbors.len() {
            let radius = neighbors[k].0;
            while k < neighbors.len() && neighbors[k].0 <= radius + DIAMETER_TOL {
                region.union_with(&neighbors[k].1);
                k += 1;
            }
            best = best.max(d.mass_of(&region) / radius);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, Group, Hypothesis, Label};

    fn class(hs: &[&[i8]]) -> HypothesisClass {
        let d = Domain::from_groups(&[Group::One, Group::One, Group::Zero], &[0.5, 0.5, 1.0], 0.5).unwrap();
        HypothesisClass::new(d, hs.iter().map(|s| Hypothesis::from_signs(s).unwrap()).collect()).unwrap()
    }

    #[test]
    fn diameter_and_average_error() {
        let c = class(&[&[-1, -1, -1], &[1, 1, -1], &[1, -1, -1]]);
        assert_eq!(mp_diameter(&c, &Transcript::new()).unwrap(), 1.0);
        let t = Transcript::from_entries([(0, Label::Pos), (1, Label::Neg)]).unwrap();
        assert_eq!(mp_diameter(&c, &t).unwrap(), 0.0);
        let two = Transcript::from_entries([(0, Label::Pos)]).unwrap();
        // mu values 1.0 and 0.5 against 1.0
        assert_eq!(avg_error(&c, &two, 1.0).unwrap(), 0.25);
        let none = Transcript::from_entries([(2, Label::Pos)]).unwrap();
        assert!(matches!(mp_diameter(&c, &none), Err(AuditError::EmptyVersionSpace)));
    }

    #[test]
    fn coefficient_small_cases() {
        let single = class(&[&[1, 1, 1]]);
        assert_eq!(disagreement_coefficient(&single, 0.1).unwrap(), 0.0);
        // differ on x0 only: marginal mass 0.25
        let pair = class(&[&[1, 1, 1], &[-1, 1, 1]]);
        assert!((disagreement_coefficient(&pair, 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert!((disagreement_coefficient(&pair, 0.25).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(disagreement_coefficient(&pair, 0.5).unwrap(), 0.5);
    }
}
