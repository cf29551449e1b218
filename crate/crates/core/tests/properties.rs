//! Property-based invariants for the numeric core and the fixed-point
//! allocator.

use omen_core::consensus::{largest_remainder_allocate, round_1e9};
use omen_core::lmsr::LmsrState;
use omen_core::script::Script;
use omen_core::units::Amount;
use proptest::prelude::*;

fn quantities() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..500.0, 2..10)
}

fn loss_limit() -> impl Strategy<Value = f64> {
    0.1f64..100.0
}

proptest! {
    #[test]
    fn prices_are_a_distribution(q in quantities(), l in loss_limit()) {
        let state = LmsrState::new(q, l).unwrap();
        let prices = state.prices();
        let sum: f64 = prices.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        // Extreme q/l ratios legitimately underflow an outcome's weight
        // to zero, so the bound is closed on both sides.
        prop_assert!(prices.iter().all(|p| *p >= 0.0 && *p <= 1.0 + 1e-12));
    }

    /// Shifting every outcome by the same amount shifts the cost by
    /// exactly that amount and leaves prices unchanged.
    #[test]
    fn cost_is_translation_equivariant(q in quantities(), l in loss_limit(), shift in 0.0f64..100.0) {
        let base = LmsrState::new(q.clone(), l).unwrap();
        let shifted =
            LmsrState::new(q.iter().map(|x| x + shift).collect(), l).unwrap();
        let scale = base.cost().abs().max(1.0);
        prop_assert!((shifted.cost() - base.cost() - shift).abs() < 1e-9 * scale);
        for (a, b) in base.prices().iter().zip(shifted.prices()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// Buying strictly raises the bought outcome's price and the cost of
    /// the next share (positive second difference).
    #[test]
    fn buying_moves_the_price_up(q in quantities(), l in loss_limit(), x in 0.01f64..50.0) {
        let mut state = LmsrState::new(q, l).unwrap();
        let p_before = state.price(0).unwrap();
        let first = state.trade_cost(0, x).unwrap();
        state.apply_trade(0, x).unwrap();
        let second = state.trade_cost(0, x).unwrap();
        let p_after = state.price(0).unwrap();
        prop_assert!(p_after >= p_before);
        // Strict increase except where the price has saturated against
        // the f64 representations of 0 or 1.
        if p_before > 1e-12 && p_before < 1.0 - 1e-9 {
            prop_assert!(p_after > p_before);
        }
        prop_assert!(second >= first - 1e-9 * first.abs().max(1.0));
    }

    /// A buy immediately unwound leaves the maker flat.
    #[test]
    fn round_trip_is_free(q in quantities(), l in loss_limit(), x in 0.01f64..50.0) {
        let mut state = LmsrState::new(q, l).unwrap();
        let buy = state.trade_cost(0, x).unwrap();
        state.apply_trade(0, x).unwrap();
        let sell = state.trade_cost(0, -x).unwrap();
        prop_assert!((buy + sell).abs() < 1e-7 * buy.abs().max(1.0));
    }

    #[test]
    fn allocation_conserves_the_total(
        total in 0i128..1_000_000_000_000,
        shares in prop::collection::vec(0.0f64..100.0, 1..12),
    ) {
        let total = Amount::from_scaled(total);
        let parts = largest_remainder_allocate(total, &shares);
        let sum: Amount = parts.iter().copied().sum();
        prop_assert_eq!(sum, total);
        prop_assert!(parts.iter().all(|p| *p >= Amount::ZERO));
    }

    #[test]
    fn rounding_is_idempotent(v in -1.0e6f64..1.0e6) {
        prop_assert_eq!(round_1e9(round_1e9(v)), round_1e9(v));
    }

    #[test]
    fn amount_survives_a_text_round_trip(scaled in -1_000_000_000_000i128..1_000_000_000_000) {
        let amount = Amount::from_scaled(scaled);
        let back: Amount = amount.to_string().parse().unwrap();
        prop_assert_eq!(back, amount);
    }

    #[test]
    fn push_scripts_survive_a_text_round_trip(data in prop::collection::vec(any::<u8>(), 0..64)) {
        let script = Script(vec![Script::push(data)]);
        let back: Script = script.to_string().parse().unwrap();
        prop_assert_eq!(back, script);
    }
}
