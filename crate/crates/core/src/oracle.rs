//! Black-box label oracles over a finite domain and the query-accounting
//! wrapper every auditor talks through.

use std::collections::HashMap;

use serde::Serialize;

use crate::domain::{Hypothesis, Label, Transcript};
use crate::error::{AuditError, Result};

/// Answers `h*(x)` for an example id.
pub trait LabelOracle {
    fn query(&mut self, x: usize) -> Result<Label>;
}

impl LabelOracle for Hypothesis {
    fn query(&mut self, x: usize) -> Result<Label> {
        if x >= self.len() {
            return Err(AuditError::InvalidInput(format!("example {x} out of range")));
        }
        Ok(self.label(x))
    }
}

impl<O: LabelOracle + ?Sized> LabelOracle for &mut O {
    fn query(&mut self, x: usize) -> Result<Label> {
        (**self).query(x)
    }
}

impl<O: LabelOracle + ?Sized> LabelOracle for Box<O> {
    fn query(&mut self, x: usize) -> Result<Label> {
        (**self).query(x)
    }
}

/// Adapts a closure into an oracle.
pub struct FnOracle<F>(pub F);

impl<F: FnMut(usize) -> Result<Label>> LabelOracle for FnOracle<F> {
    fn query(&mut self, x: usize) -> Result<Label> {
        (self.0)(x)
    }
}

/// Caches answers, counts distinct queries and enforces an optional budget.
///
/// The count always equals the number of cache misses, which is also the
/// transcript length.
pub struct CountingOracle<O> {
    inner: O,
    cache: HashMap<usize, Label>,
    transcript: Transcript,
    budget: Option<usize>,
}

impl<O: LabelOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self::with_budget(inner, None)
    }

    pub fn with_budget(inner: O, budget: Option<usize>) -> Self {
        Self { inner, cache: HashMap::new(), transcript: Transcript::new(), budget }
    }

    /// `Ok(None)` when answering would exceed the budget.
    pub fn query(&mut self, x: usize) -> Result<Option<Label>> {
        if let Some(&y) = self.cache.get(&x) {
            return Ok(Some(y));
        }
        if self.budget.is_some_and(|b| self.transcript.len() >= b) {
            return Ok(None);
        }
        let y = self.inner.query(x)?;
        self.cache.insert(x, y);
        self.transcript.push(x, y)?;
        Ok(Some(y))
    }

    pub fn cached(&self, x: usize) -> Option<Label> {
        self.cache.get(&x).copied()
    }

    pub fn queries(&self) -> usize {
        self.transcript.len()
    }

    pub fn budget_exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.transcript.len() >= b)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

/// Outcome of a finite-class audit.
#[derive(Clone, Debug, Serialize)]
pub struct AuditResult {
    /// `None` only when a truncated run has nothing to base an estimate on.
    pub estimate: Option<f64>,
    pub queries: usize,
    pub transcript: Transcript,
    /// Budget ran out before the method finished.
    pub truncated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_distinct_queries_only() {
        let h = Hypothesis::from_signs(&[1, -1, 1]).unwrap();
        let mut o = CountingOracle::new(h);
        assert_eq!(o.query(1).unwrap(), Some(Label::Neg));
        assert_eq!(o.query(1).unwrap(), Some(Label::Neg));
        assert_eq!(o.query(0).unwrap(), Some(Label::Pos));
        assert_eq!(o.queries(), 2);
        assert_eq!(o.transcript().entries(), &[(1, Label::Neg), (0, Label::Pos)]);
    }

    #[test]
    fn budget_blocks_new_queries_but_not_cached_ones() {
        let h = Hypothesis::from_signs(&[1, -1, 1]).unwrap();
        let mut o = CountingOracle::with_budget(h, Some(1));
        assert!(o.query(2).unwrap().is_some());
        assert!(o.query(0).unwrap().is_none());
        assert_eq!(o.query(2).unwrap(), Some(Label::Pos));
        assert!(o.budget_exhausted());
    }

    #[test]
    fn out_of_range_query_is_an_error() {
        let mut h = Hypothesis::from_signs(&[1]).unwrap();
        assert!(LabelOracle::query(&mut h, 3).is_err());
    }
}
