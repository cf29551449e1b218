//! End-to-end protocol flow: events, a market, trades, reports with
//! commit-reveal, quorum, and the settling Redemption, with conservation
//! checked throughout.

use omen_core::consensus::ReportEntry;
use omen_core::crypto::KeyPair;
use omen_core::ledger::MarketState;
use omen_core::lifecycle::{EventKind, EventParams, MarketParams, Node, ProtocolConfig, Reveal};
use omen_core::tx::Transaction;
use omen_core::units::{Amount, UnitKind};
use std::collections::BTreeMap;

fn btc(v: &str) -> Amount {
    v.parse().unwrap()
}

struct Harness {
    node: Node,
}

impl Harness {
    fn new() -> Self {
        let mut config = ProtocolConfig::default();
        config.quorum_required = 2;
        config.reveal_window = 1;
        Harness { node: Node::new(config) }
    }

    fn actor(&mut self, name: &str) -> String {
        self.node.register_key(KeyPair::from_seed(name.as_bytes()))
    }

    fn block(&mut self, txs: Vec<Transaction>) {
        let before = txs.len();
        let (_, rejected) = self.node.ledger.produce_block(txs);
        assert!(
            rejected.is_empty(),
            "expected all {before} transactions accepted, got rejections: {:?}",
            rejected.iter().map(|(_, e)| e.to_string()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn full_market_cycle_settles_and_conserves() {
    let mut h = Harness::new();
    let joe = h.actor("joe");
    let paul = h.actor("paul");
    let helga = h.actor("helga");
    let jane = h.actor("jane");
    let beatrice = h.actor("beatrice");

    // Genesis: bitcoin for the traders, reputation for the reporters.
    let genesis = vec![
        h.node.faucet(&joe, UnitKind::Bitcoin, btc("100")).unwrap(),
        h.node.faucet(&paul, UnitKind::Bitcoin, btc("50")).unwrap(),
        h.node.faucet(&helga, UnitKind::Reputation, btc("10")).unwrap(),
        h.node.faucet(&jane, UnitKind::Reputation, btc("42")).unwrap(),
        h.node.faucet(&beatrice, UnitKind::Reputation, btc("8")).unwrap(),
    ];
    h.block(genesis);
    let rep_supply = h.node.ledger.reputation_supply();
    assert_eq!(rep_supply, btc("60"));

    // Event on the politics branch, expiring a few blocks out.
    let expiration = h.node.ledger.now() + 3 * h.node.config.chain.block_interval;
    let event_tx = h
        .node
        .create_event(
            &joe,
            &EventParams {
                description: "Hillary Clinton wins the 2016 U.S. Presidential Election.".into(),
                branch: "politics".into(),
                kind: EventKind::Binary,
                expiration,
                fee: btc("0.01"),
            },
        )
        .unwrap();
    let event_id = h.node.ledger.validate(&event_tx).map(|_| ()).and(Ok(())).unwrap();
    let _ = event_id;
    h.block(vec![event_tx.clone()]);
    let event_id = *h.node.ledger.events().keys().next().unwrap();

    // Market over the single binary event: funding = l * ln 2.
    let market_tx = h
        .node
        .create_market(
            &joe,
            &MarketParams {
                title: "2016 U.S. Presidential Election".into(),
                events: vec![event_id],
                loss_limit: 40.0,
                trading_fee: 0.005,
            },
        )
        .unwrap();
    h.block(vec![market_tx]);
    let market_id = *h.node.ledger.markets().keys().next().unwrap();
    let market = h.node.ledger.market(market_id).unwrap();
    assert_eq!(market.payload.funding, btc("27.72588722"));
    assert_eq!(market.state, MarketState::Forecasting);

    // Paul buys 10 shares of YES, sells 4 back; the maker state moves.
    let buy = h.node.buy(&paul, event_id, 1, btc("10")).unwrap();
    h.block(vec![buy]);
    assert_eq!(h.node.ledger.balance(&paul, UnitKind::Shares), btc("10"));
    let sell = h.node.sell(&paul, event_id, 1, btc("4")).unwrap();
    h.block(vec![sell]);
    assert_eq!(h.node.ledger.balance(&paul, UnitKind::Shares), btc("6"));

    // Trading halts only after quorum; the event matures with time.
    while h.node.ledger.now() < expiration {
        h.block(vec![]);
    }

    // Helga and Jane report YES; Beatrice stays silent.
    let ballot: BTreeMap<_, _> = [(event_id, ReportEntry::Value(1.0))].into();
    let helga_report = h.node.submit_report(&helga, "politics", &ballot, 7).unwrap();
    h.block(vec![helga_report.clone()]);
    let status = h.node.note_report(&helga_report).unwrap();
    assert!(!status.met, "one of two reports should not meet quorum");
    assert_eq!(h.node.ledger.market(market_id).unwrap().state, MarketState::Forecasting);

    let jane_report = h.node.submit_report(&jane, "politics", &ballot, 7).unwrap();
    h.block(vec![jane_report.clone()]);
    let status = h.node.note_report(&jane_report).unwrap();
    assert!(status.met, "two of two reports meet quorum");
    assert_eq!(h.node.ledger.market(market_id).unwrap().state, MarketState::Closed);

    // Post-close trades are rejected by validation.
    let late_buy = h.node.buy(&paul, event_id, 1, btc("1"));
    assert!(late_buy.is_err(), "builder refuses trades on a closed market");

    // Reveal window: both reporters disclose their committed entries.
    for reporter in [&helga, &jane] {
        let salt = Node::commitment_salt(7, reporter, event_id);
        h.node
            .reveal(
                "politics",
                &Reveal {
                    reporter: reporter.clone(),
                    event: event_id,
                    entry: ReportEntry::Value(1.0),
                    salt,
                },
            )
            .unwrap();
    }
    h.block(vec![]);
    assert!(h.node.redeemable("politics"));

    let bitcoin_before = total_supply(&h.node, UnitKind::Bitcoin);
    let settlement = h.node.redeem("politics").unwrap();
    h.block(vec![settlement.tx.clone()]);

    // Outcome resolved YES; Paul's 6 winning shares pay 1.0 each.
    assert_eq!(
        settlement.consensus.outcomes[0],
        omen_core::consensus::Outcome::Resolved(1.0)
    );
    assert_eq!(settlement.payouts.total(), btc("6"));

    // Reputation is zero-sum and the supply is unchanged; the absent
    // reporter lost ground to the conforming ones.
    assert_eq!(h.node.ledger.reputation_supply(), rep_supply);
    let helga_rep = h.node.ledger.balance(&helga, UnitKind::Reputation);
    let jane_rep = h.node.ledger.balance(&jane, UnitKind::Reputation);
    let beatrice_rep = h.node.ledger.balance(&beatrice, UnitKind::Reputation);
    assert!(beatrice_rep < btc("8"), "absent reporter must lose reputation");
    assert!(helga_rep > btc("10"), "conforming reporter gains");
    assert!(jane_rep > btc("42"), "conforming reporter gains");
    assert_eq!(helga_rep + jane_rep + beatrice_rep, rep_supply);

    // Bitcoin neither minted nor destroyed by settlement.
    assert_eq!(total_supply(&h.node, UnitKind::Bitcoin), bitcoin_before);

    // The market is redeemed and holds nothing.
    assert_eq!(h.node.ledger.market(market_id).unwrap().state, MarketState::Redeemed);
    assert!(h.node.ledger.market_outputs(market_id, UnitKind::Bitcoin).is_empty());
    assert!(h.node.ledger.market_outputs(market_id, UnitKind::Shares).is_empty());

    // Replaying the block log reproduces the exact UTXO set.
    let log = h.node.ledger.block_log();
    let replayed =
        omen_core::ledger::Ledger::replay(h.node.config.chain.clone(), &log).unwrap();
    assert_eq!(replayed.utxo_hash(), h.node.ledger.utxo_hash());
}

fn total_supply(node: &Node, units: UnitKind) -> Amount {
    node.ledger
        .utxos()
        .values()
        .filter(|o| o.units == units)
        .map(|o| o.value)
        .sum()
}

#[test]
fn buy_then_sell_round_trips_within_tolerance() {
    let mut h = Harness::new();
    let joe = h.actor("joe");
    let paul = h.actor("paul");
    h.block(vec![
        h.node.faucet(&joe, UnitKind::Bitcoin, btc("100")).unwrap(),
        h.node.faucet(&paul, UnitKind::Bitcoin, btc("50")).unwrap(),
    ]);
    let expiration = h.node.ledger.now() + 100 * h.node.config.chain.block_interval;
    let event_tx = h
        .node
        .create_event(
            &joe,
            &EventParams {
                description: "round trip".into(),
                branch: "test".into(),
                kind: EventKind::Binary,
                expiration,
                fee: btc("0.01"),
            },
        )
        .unwrap();
    h.block(vec![event_tx]);
    let event_id = *h.node.ledger.events().keys().next().unwrap();
    let market_tx = h
        .node
        .create_market(
            &joe,
            &MarketParams {
                title: "round trip".into(),
                events: vec![event_id],
                loss_limit: 10.0,
                // Zero fee so the round trip is exact up to rounding.
                trading_fee: 0.0,
            },
        )
        .unwrap();
    h.block(vec![market_tx]);

    let before = h.node.ledger.balance(&paul, UnitKind::Bitcoin);
    let buy = h.node.buy(&paul, event_id, 0, btc("3")).unwrap();
    h.block(vec![buy]);
    let sell = h.node.sell(&paul, event_id, 0, btc("3")).unwrap();
    h.block(vec![sell]);
    let after = h.node.ledger.balance(&paul, UnitKind::Bitcoin);
    let drift = (after - before).abs();
    assert!(
        drift <= Amount::from_scaled(1),
        "buy/sell round trip should return the bitcoin within 1e-8, drifted {drift}"
    );
    assert_eq!(h.node.ledger.balance(&paul, UnitKind::Shares), Amount::ZERO);
}
