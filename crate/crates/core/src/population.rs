//! Finite-population importance-weighting harness. The weight for an atom
//! is the ratio of the population probability to the shifted (selection)
//! probability; weighting the shifted expectation by it recovers the
//! population expectation exactly on a shared finite support.

use crate::error::{Error, Result};

/// A finite support shared by two distributions: the population one and the
/// shifted one induced by confidence-based selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    /// (point, label) atoms; the content is opaque to the weighting math.
    pub support: Vec<(Vec<f64>, usize)>,
    pub p_pop: Vec<f64>,
    pub p_st: Vec<f64>,
}

impl FinitePopulation {
    pub fn new(support: Vec<(Vec<f64>, usize)>, p_pop: Vec<f64>, p_st: Vec<f64>) -> Result<Self> {
        if support.len() != p_pop.len() || support.len() != p_st.len() {
            return Err(Error::structural("support and probabilities differ in length"));
        }
        for (&pp, &ps) in p_pop.iter().zip(&p_st) {
            if pp < 0.0 || ps < 0.0 {
                return Err(Error::structural("probabilities must be nonnegative"));
            }
            if pp > 0.0 && ps == 0.0 {
                return Err(Error::structural(
                    "shifted distribution must cover the population support",
                ));
            }
        }
        for (name, p) in [("p_pop", &p_pop), ("p_st", &p_st)] {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::structural(format!("{name} must sum to 1, got {sum}")));
            }
        }
        Ok(FinitePopulation { support, p_pop, p_st })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Expectation of a per-atom value table under the population
    /// distribution.
    pub fn expectation_pop(&self, values: &[f64]) -> f64 {
        self.p_pop.iter().zip(values).map(|(&p, &v)| p * v).sum()
    }

    /// Expectation under the shifted distribution with each atom weighted
    /// by its importance ratio.
    pub fn weighted_expectation_st(&self, values: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.len() {
            if self.p_st[i] == 0.0 {
                continue; // p_pop is zero here too, by construction
            }
            total += self.p_st[i] * gamma_weight(self, i)? * values[i];
        }
        Ok(total)
    }
}

/// Importance weight for one atom: `p_pop / p_st`.
pub fn gamma_weight(population: &FinitePopulation, atom: usize) -> Result<f64> {
    let p_st = population.p_st[atom];
    if p_st == 0.0 {
        return Err(Error::Domain(format!(
            "atom {atom} has zero probability under the shifted distribution"
        )));
    }
    Ok(population.p_pop[atom] / p_st)
}
