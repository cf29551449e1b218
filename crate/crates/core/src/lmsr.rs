//! Logarithmic market scoring rule.
//!
//! The market maker quotes every trade from a cost function
//! C(q) = l * log(sum_j exp(q_j / l)), where q_j is the number of shares
//! outstanding for outcome j and l is the creator's loss limit. A trade's
//! price is the cost difference between the post-trade and pre-trade share
//! vectors, and the instantaneous price of outcome i is the softmax
//! exp(q_i/l) / sum_j exp(q_j/l). The creator's worst-case subsidy is
//! l * log N, which is exactly the funding a market must post up front.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LmsrError {
    #[error("loss limit must be positive and finite, got {0}")]
    BadLossLimit(f64),
    #[error("markets need at least two outcomes, got {0}")]
    TooFewOutcomes(usize),
    #[error("share quantities must be finite and non-negative")]
    BadQuantity,
    #[error("outcome index {index} out of range for {outcomes} outcomes")]
    OutcomeOutOfRange { index: usize, outcomes: usize },
    #[error("sell of {sell} exceeds outstanding quantity {outstanding}")]
    Oversell { sell: f64, outstanding: f64 },
    #[error("scalar bounds must satisfy a < b, got [{a}, {b}]")]
    BadScalarBounds { a: f64, b: f64 },
}

/// Outstanding share quantities for one market plus its loss limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmsrState {
    /// Shares outstanding per outcome.
    pub quantities: Vec<f64>,
    /// Loss limit l, in bitcoin.
    pub loss_limit: f64,
}

impl LmsrState {
    pub fn new(quantities: Vec<f64>, loss_limit: f64) -> Result<Self, LmsrError> {
        if !(loss_limit > 0.0) || !loss_limit.is_finite() {
            return Err(LmsrError::BadLossLimit(loss_limit));
        }
        if quantities.len() < 2 {
            return Err(LmsrError::TooFewOutcomes(quantities.len()));
        }
        if quantities.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(LmsrError::BadQuantity);
        }
        Ok(LmsrState { quantities, loss_limit })
    }

    /// Fresh market: zero shares outstanding for each of `n` outcomes.
    pub fn fresh(n: usize, loss_limit: f64) -> Result<Self, LmsrError> {
        Self::new(vec![0.0; n], loss_limit)
    }

    pub fn outcomes(&self) -> usize {
        self.quantities.len()
    }

    /// C(q) = l * log(sum exp(q_j / l)), computed with a max shift so large
    /// q/l never overflows.
    pub fn cost(&self) -> f64 {
        log_sum_exp_cost(&self.quantities, self.loss_limit)
    }

    /// Instantaneous price of outcome `i`: softmax(q/l)_i. Always in (0,1),
    /// and the full price vector sums to 1.
    pub fn price(&self, i: usize) -> Result<f64, LmsrError> {
        if i >= self.quantities.len() {
            return Err(LmsrError::OutcomeOutOfRange { index: i, outcomes: self.quantities.len() });
        }
        Ok(self.prices()[i])
    }

    /// The full price vector softmax(q / l).
    pub fn prices(&self) -> Vec<f64> {
        let l = self.loss_limit;
        let max = self.quantities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.quantities.iter().map(|q| ((q - max) / l).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }

    /// Quote for trading `x` shares of outcome `k` (negative `x` sells).
    /// Returns the signed bitcoin amount the trader pays: positive for buys,
    /// negative for sells. Pure; does not mutate the state.
    pub fn trade_cost(&self, k: usize, x: f64) -> Result<f64, LmsrError> {
        if k >= self.quantities.len() {
            return Err(LmsrError::OutcomeOutOfRange { index: k, outcomes: self.quantities.len() });
        }
        if !x.is_finite() {
            return Err(LmsrError::BadQuantity);
        }
        let new_q = self.quantities[k] + x;
        if new_q < 0.0 {
            return Err(LmsrError::Oversell { sell: -x, outstanding: self.quantities[k] });
        }
        let mut after = self.quantities.clone();
        after[k] = new_q;
        Ok(log_sum_exp_cost(&after, self.loss_limit) - self.cost())
    }

    /// Apply a trade, shifting q_k by x.
    pub fn apply_trade(&mut self, k: usize, x: f64) -> Result<(), LmsrError> {
        self.trade_cost(k, x)?;
        self.quantities[k] += x;
        Ok(())
    }
}

fn log_sum_exp_cost(quantities: &[f64], loss_limit: f64) -> f64 {
    let max = quantities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = quantities.iter().map(|q| ((q - max) / loss_limit).exp()).sum();
    max + loss_limit * sum.ln()
}

/// Two-outcome specialization of the cost function.
pub fn binary_cost(q1: f64, q2: f64, loss_limit: f64) -> Result<f64, LmsrError> {
    Ok(LmsrState::new(vec![q1, q2], loss_limit)?.cost())
}

/// Worst-case market-maker loss, l * log(n_out). Equal to the required
/// up-front funding for a market with `n_out` outcomes.
pub fn max_loss(loss_limit: f64, n_out: usize) -> f64 {
    loss_limit * (n_out as f64).ln()
}

/// A scalar market over [a, b] with a piecewise-constant share density on a
/// grid of equal-width bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarMarketSpec {
    pub lower: f64,
    pub upper: f64,
    /// Share density q(x), one value per bin.
    pub density: Vec<f64>,
}

impl ScalarMarketSpec {
    pub fn new(lower: f64, upper: f64, density: Vec<f64>) -> Result<Self, LmsrError> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(LmsrError::BadScalarBounds { a: lower, b: upper });
        }
        if density.is_empty() || density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(LmsrError::BadQuantity);
        }
        Ok(ScalarMarketSpec { lower, upper, density })
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.density.len() as f64
    }
}

/// Scalar-market cost l * log(integral over [a,b] of exp(q(x)/l) dx).
///
/// The density is piecewise constant on the grid, so each bin contributes
/// exp(q_i/l) * dx exactly and the quadrature introduces no additional
/// error beyond the log-sum-exp evaluation itself.
pub fn scalar_cost(spec: &ScalarMarketSpec, loss_limit: f64) -> Result<f64, LmsrError> {
    if !(loss_limit > 0.0) || !loss_limit.is_finite() {
        return Err(LmsrError::BadLossLimit(loss_limit));
    }
    let dx = spec.bin_width();
    // l*log(sum exp(q_i/l)*dx) = l*log(sum exp(q_i/l)) + l*log(dx),
    // evaluated with the same max-shift as the discrete cost.
    let lse = log_sum_exp_cost(&spec.density, loss_limit);
    Ok(lse + loss_limit * dx.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn zero_state_cost_is_loss_bound() {
        for n in 2..8 {
            let state = LmsrState::fresh(n, 3.5).unwrap();
            let expect = 3.5 * (n as f64).ln();
            assert!((state.cost() - expect).abs() < 1e-12);
            assert!((max_loss(3.5, n) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn listing_funding_value() {
        let state = LmsrState::fresh(2, 40.0).unwrap();
        assert!((state.cost() - 27.72588722).abs() < 5e-9);
        assert!((max_loss(40.0, 2) - 27.72588722).abs() < 5e-9);
    }

    #[test]
    fn loss_limit_1_2_two_outcomes() {
        assert!((max_loss(1.2, 2) - 0.83177662).abs() < 5e-9);
    }

    // Oracle value computed with 50-digit arithmetic:
    // 10*log(e^1 + e^0) = 13.132616875182228340489954949678556419152800856703...
    #[test]
    fn cost_oracle_value() {
        let state = LmsrState::new(vec![10.0, 0.0], 10.0).unwrap();
        assert!((state.cost() - 13.132616875182228).abs() < 1e-12);
    }

    #[test]
    fn symmetric_prices() {
        let state = LmsrState::fresh(2, 7.0).unwrap();
        assert_eq!(state.prices(), vec![0.5, 0.5]);
    }

    #[test]
    fn closed_form_price() {
        let l = 2.75;
        let state = LmsrState::new(vec![l * 3f64.ln(), 0.0], l).unwrap();
        assert!((state.price(0).unwrap() - 0.75).abs() < 1e-12);
        assert!((state.price(1).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn price_index_out_of_range() {
        let state = LmsrState::fresh(2, 1.0).unwrap();
        assert!(matches!(state.price(2), Err(LmsrError::OutcomeOutOfRange { .. })));
    }

    #[test]
    fn trade_zero_is_free() {
        let state = LmsrState::new(vec![1.0, 2.0, 3.0], 5.0).unwrap();
        assert_eq!(state.trade_cost(1, 0.0).unwrap(), 0.0);
    }

    // Oracle: 10*log((e+1)/2) = 6.2011450695827752463176337350967907383977995...
    #[test]
    fn trade_cost_oracle_value() {
        let state = LmsrState::fresh(2, 10.0).unwrap();
        assert!((state.trade_cost(0, 10.0).unwrap() - 6.201145069582775).abs() < 1e-12);
    }

    #[test]
    fn buy_then_sell_reverses() {
        let mut state = LmsrState::new(vec![3.0, 1.0, 0.5], 2.0).unwrap();
        let buy = state.trade_cost(1, 4.0).unwrap();
        state.apply_trade(1, 4.0).unwrap();
        let sell = state.trade_cost(1, -4.0).unwrap();
        assert!((buy + sell).abs() < 1e-10);
    }

    #[test]
    fn oversell_rejected() {
        let state = LmsrState::new(vec![1.0, 2.0], 1.0).unwrap();
        assert!(matches!(state.trade_cost(0, -1.5), Err(LmsrError::Oversell { .. })));
    }

    #[test]
    fn binary_matches_general() {
        assert!((binary_cost(0.0, 0.0, 1.0).unwrap() - LN2).abs() < 1e-15);
        // (5,5) with l=2: 2*log(2*e^{2.5}) = 5 + 2*log 2.
        assert!((binary_cost(5.0, 5.0, 2.0).unwrap() - (5.0 + 2.0 * LN2)).abs() < 1e-12);
    }

    #[test]
    fn scalar_constant_density() {
        // q(x) = c on [a,b] gives c + l*log(b-a).
        let spec = ScalarMarketSpec::new(2.0, 5.0, vec![1.5; 64]).unwrap();
        let l = 0.7;
        let expect = 1.5 + l * 3f64.ln();
        assert!((scalar_cost(&spec, l).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn scalar_zero_density_unit_interval() {
        let spec = ScalarMarketSpec::new(0.0, 1.0, vec![0.0; 16]).unwrap();
        assert!(scalar_cost(&spec, 3.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn scalar_rejects_bad_bounds() {
        assert!(ScalarMarketSpec::new(1.0, 1.0, vec![0.0; 4]).is_err());
        assert!(ScalarMarketSpec::new(2.0, 1.0, vec![0.0; 4]).is_err());
    }

    #[test]
    fn rejects_degenerate_state() {
        assert!(LmsrState::new(vec![0.0], 1.0).is_err());
        assert!(LmsrState::new(vec![0.0, 0.0], 0.0).is_err());
        assert!(LmsrState::new(vec![f64::NAN, 0.0], 1.0).is_err());
    }

    #[test]
    fn overflow_safe_for_large_quantities() {
        let state = LmsrState::new(vec![5000.0, 0.0], 1.0).unwrap();
        assert!(state.cost().is_finite());
        assert!((state.cost() - 5000.0).abs() < 1e-9);
        let p = state.prices();
        assert!(p[0] > 0.999 && p.iter().sum::<f64>() <= 1.0 + 1e-12);
    }
}
