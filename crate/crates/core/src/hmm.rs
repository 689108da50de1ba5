//! Online layer-count detection with a sticky first-order Markov prior.

use serde::{Deserialize, Serialize};

use crate::mixtures::MixtureFit;

/// Transition potential: `−β` when the count repeats, `+β` when it changes.
pub fn psi(l_t: usize, l_prev: usize, beta: f64) -> f64 {
    if l_t == l_prev {
        -beta
    } else {
        beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisScore {
    pub l: usize,
    pub posterior_sum: f64,
    pub psi: f64,
    pub total: f64,
    /// Set when the hypothesis could not be fitted; its total is `-∞`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl HypothesisScore {
    pub fn new(l: usize, posterior_sum: f64, previous_l: usize, beta: f64) -> Self {
        let psi = psi(l, previous_l, beta);
        Self {
            l,
            posterior_sum,
            psi,
            total: posterior_sum - psi,
            failed: false,
        }
    }

    pub fn failed(l: usize, previous_l: usize, beta: f64) -> Self {
        Self {
            failed: true,
            ..Self::new(l, f64::NEG_INFINITY, previous_l, beta)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: usize,
    pub chosen: usize,
    pub scores: Vec<HypothesisScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmState {
    pub previous_l: usize,
    pub beta: f64,
    pub history: Vec<HistoryEntry>,
}

impl HmmState {
    pub fn new(initial_l: usize, beta: f64) -> Self {
        Self {
            previous_l: initial_l,
            beta,
            history: Vec::new(),
        }
    }

    /// Score a hypothesis from the fits that make up its model. The posterior
    /// sum adds each fit's expected complete-data log-likelihood and
    /// Dirichlet log-prior.
    pub fn score_hypothesis(&self, l: usize, fits: &[&MixtureFit]) -> HypothesisScore {
        let sum: f64 = fits.iter().map(|f| f.q).sum();
        HypothesisScore::new(l, sum, self.previous_l, self.beta)
    }

    pub fn score_sum(&self, l: usize, posterior_sum: f64) -> HypothesisScore {
        HypothesisScore::new(l, posterior_sum, self.previous_l, self.beta)
    }

    /// Pick the hypothesis with the highest total, keeping the previous count
    /// on ties, and record the decision.
    pub fn step(&mut self, t: usize, scores: Vec<HypothesisScore>) -> usize {
        // Compare posterior-sum advantages against psi differences so that a
        // switch happens exactly when the advantage exceeds 2β.
        let mut current = scores.iter().find(|s| s.l == self.previous_l);
        for s in &scores {
            let wins = match current {
                None => s.total > f64::NEG_INFINITY,
                Some(c) => s.posterior_sum - c.posterior_sum > s.psi - c.psi,
            };
            if wins {
                current = Some(s);
            }
        }
        let chosen = current.map_or(self.previous_l, |s| s.l);
        self.previous_l = chosen;
        self.history.push(HistoryEntry { t, chosen, scores });
        chosen
    }
}
