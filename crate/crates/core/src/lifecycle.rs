//! Domain transaction construction and protocol sequencing.
//!
//! The `Node` owns a ledger plus the off-chain bookkeeping the protocol
//! needs: registered keys, revealed ballots, quorum tracking, and the
//! automatic Redemption that settles a branch once quorum is met and the
//! reveal window elapses.

use crate::consensus::{ConsensusResult, Outcome, ReportEntry, ReportMatrix};
use crate::crypto::{self, Hash160, KeyPair};
use crate::ledger::{ChainConfig, Ledger, LedgerError, MarketState, SHARES_PER_EVENT};
use crate::script::Script;
use crate::tx::{
    canonical_json, EventField, EventPayload, MarketPayload, OutPoint, QuorumStatus,
    ReportPayload, Transaction, TxInput, TxOutput, TxType,
};
use crate::units::{Amount, UnitKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Protocol-level configuration on top of the chain rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub chain: ChainConfig,
    /// Reports needed (together with maturity) to reach quorum.
    pub quorum_required: u32,
    /// Blocks between quorum and the automatic Redemption, during which
    /// ballots are revealed.
    pub reveal_window: u64,
    /// Default event-creation fee.
    pub event_fee: Amount,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            chain: ChainConfig::default(),
            quorum_required: 2,
            reveal_window: 2,
            event_fee: Amount::from_scaled(1_000_000),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LifecycleError {
    #[error("insufficient {units} funds for {who}: need {need}, have {have}")]
    InsufficientFunds { who: String, units: UnitKind, need: Amount, have: Amount },
    #[error("unknown event {0}")]
    UnknownEvent(Hash160),
    #[error("unknown market {0}")]
    UnknownMarket(Hash160),
    #[error("event {0} is not part of any market")]
    EventUnbound(Hash160),
    #[error("market {0} is not accepting trades")]
    MarketClosed(Hash160),
    #[error("zero-share trades are no-ops and are rejected")]
    ZeroTrade,
    #[error("market maker rejected the trade: {0}")]
    Lmsr(#[from] crate::lmsr::LmsrError),
    #[error("expiration must be in the future")]
    PastExpiration,
    #[error("{0} already reported this cycle")]
    AlreadyReported(String),
    #[error("{0} holds no reputation")]
    NoReputation(String),
    #[error("reveal does not match the committed ballot entry")]
    BadReveal,
    #[error("branch {0} is not ready for redemption")]
    NotRedeemable(String),
    #[error("consensus failed, branch flagged for re-vote: {0}")]
    ReVote(String),
    #[error("no key registered for {0}")]
    UnknownKey(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// How an event's outcomes are structured.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EventKind {
    Binary,
    Scalar { lower: f64, upper: f64, bins: u32 },
    Categorical { labels: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventParams {
    pub description: String,
    pub branch: String,
    pub kind: EventKind,
    pub expiration: u64,
    /// Creation fee; half is escrowed for reporters at redemption.
    pub fee: Amount,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketParams {
    pub title: String,
    pub events: Vec<Hash160>,
    pub loss_limit: f64,
    pub trading_fee: f64,
}

/// Bitcoin payouts: share owners in rows, events in columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayoutMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub entries: Vec<Vec<Amount>>,
}

impl PayoutMatrix {
    pub fn total(&self) -> Amount {
        self.entries.iter().flatten().copied().sum()
    }
}

/// Everything a Redemption settles, besides the transaction itself.
#[derive(Debug, Clone)]
pub struct Settlement {
    pub tx: Transaction,
    pub consensus: ConsensusResult,
    pub payouts: PayoutMatrix,
    pub reporter_fees: Vec<(String, Amount)>,
    pub creator_residuals: Vec<(String, Amount)>,
}

/// One revealed ballot entry with its commitment salt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reveal {
    pub reporter: String,
    pub event: Hash160,
    pub entry: ReportEntry,
    pub salt: String,
}

/// Per-branch reporting cycle state.
#[derive(Debug, Clone, Default)]
struct BranchCycle {
    /// Reporter address -> commitments (event hex -> commitment hex).
    reports: BTreeMap<String, BTreeMap<String, String>>,
    /// Revealed entries: reporter -> event hex -> entry.
    reveals: BTreeMap<String, BTreeMap<String, ReportEntry>>,
    /// Height at which quorum was met and the markets closed.
    closed_at: Option<u64>,
    redeemed: bool,
}

pub struct Node {
    pub ledger: Ledger,
    pub config: ProtocolConfig,
    keys: BTreeMap<String, KeyPair>,
    cycles: BTreeMap<String, BranchCycle>,
}

impl Node {
    pub fn new(config: ProtocolConfig) -> Self {
        Node {
            ledger: Ledger::new(config.chain.clone()),
            config,
            keys: BTreeMap::new(),
            cycles: BTreeMap::new(),
        }
    }

    /// Register a signing key; returns the key's address.
    pub fn register_key(&mut self, key: KeyPair) -> String {
        let address = key.address();
        self.keys.insert(address.clone(), key);
        address
    }

    pub fn key(&self, address: &str) -> Result<&KeyPair, LifecycleError> {
        self.keys.get(address).ok_or_else(|| LifecycleError::UnknownKey(address.to_string()))
    }

    pub fn addresses(&self) -> impl Iterator<Item = &String> {
        self.keys.keys()
    }

    // ------------------------------------------------------------------
    // Coin selection and signing
    // ------------------------------------------------------------------

    /// Deterministic coin selection: outpoint order, until the target is
    /// covered.
    fn select(
        &self,
        address: &str,
        units: UnitKind,
        target: Amount,
    ) -> Result<(Vec<(OutPoint, TxOutput)>, Amount), LifecycleError> {
        let mut picked = Vec::new();
        let mut total = Amount::ZERO;
        for (op, out) in self.ledger.outputs_of(address, units) {
            if total >= target && !picked.is_empty() {
                break;
            }
            total += out.value;
            picked.push((op, out));
        }
        if total < target || picked.is_empty() {
            return Err(LifecycleError::InsufficientFunds {
                who: address.to_string(),
                units,
                need: target,
                have: total,
            });
        }
        Ok((picked, total))
    }

    fn p2pkh_input(n: u32, op: OutPoint, out: &TxOutput) -> TxInput {
        TxInput {
            n,
            txid: Some(op.txid),
            vout: Some(op.n),
            value: out.value,
            units: out.units,
            script_sig: Script::default(),
            outcome: out.outcome,
            trading_fee: None,
            report_matrix: None,
            centered_matrix: None,
        }
    }

    fn p2pkh_output(n: u32, value: Amount, units: UnitKind, key_address: &str, pkh: Hash160) -> TxOutput {
        TxOutput {
            n,
            value,
            units,
            event: None,
            branch: None,
            outcome: None,
            report: None,
            address: Some(key_address.to_string()),
            script: Script::p2pkh_lock(pkh),
        }
    }

    /// Fill the unlocking scripts of every input that currently has an
    /// empty one with a P2PKH signature from `key`.
    fn sign_inputs(tx: &mut Transaction, key: &KeyPair) {
        let message = tx.sighash_message();
        let sig = key.sign(&message);
        let unlock = Script::p2pkh_unlock(&sig, &key.public_key());
        for input in &mut tx.vin {
            if input.script_sig.0.is_empty() {
                input.script_sig = unlock.clone();
            }
        }
    }

    // ------------------------------------------------------------------
    // Builders
    // ------------------------------------------------------------------

    /// Simulator-only peg-in: mints bitcoin (any time) or reputation
    /// (genesis only) to an address.
    pub fn faucet(&self, address: &str, units: UnitKind, value: Amount) -> Result<Transaction, LifecycleError> {
        let key = self.key(address)?;
        Ok(Transaction {
            tx_type: TxType::Faucet,
            loss_limit: None,
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin: vec![],
            vout: vec![Node::p2pkh_output(0, value, units, address, key.pubkey_hash())],
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: None,
            branch: None,
        })
    }

    /// Plain send of any unit between users.
    pub fn transfer(
        &self,
        from: &str,
        to: &str,
        units: UnitKind,
        value: Amount,
    ) -> Result<Transaction, LifecycleError> {
        let key = self.key(from)?;
        let to_key = self.key(to)?;
        let (picked, total) = self.select(from, units, value)?;
        let mut vin = Vec::new();
        for (i, (op, out)) in picked.iter().enumerate() {
            vin.push(Node::p2pkh_input(i as u32, *op, out));
        }
        let mut vout = vec![Node::p2pkh_output(0, value, units, to, to_key.pubkey_hash())];
        if total > value {
            vout.push(Node::p2pkh_output(1, total - value, units, from, key.pubkey_hash()));
        }
        let mut tx = Transaction {
            tx_type: TxType::Transfer,
            loss_limit: None,
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin,
            vout,
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: None,
            branch: None,
        };
        Node::sign_inputs(&mut tx, key);
        Ok(tx)
    }

    /// CreateEvent: the creator's fee in, the event data out, locked to
    /// the event's own hash.
    pub fn create_event(&self, creator: &str, params: &EventParams) -> Result<Transaction, LifecycleError> {
        let key = self.key(creator)?;
        if params.expiration <= self.ledger.now() {
            return Err(LifecycleError::PastExpiration);
        }
        let (labels, bins, valid_range) = match &params.kind {
            EventKind::Binary => (None, None, [0.0, 1.0]),
            EventKind::Scalar { lower, upper, bins } => (None, Some(*bins), [*lower, *upper]),
            EventKind::Categorical { labels } => {
                let range = [0.0, labels.len() as f64 - 1.0];
                (Some(labels.clone()), None, range)
            }
        };
        let mut payload = EventPayload {
            id: Hash160([0u8; 20]),
            description: params.description.clone(),
            branch: params.branch.clone(),
            is_binary: matches!(params.kind, EventKind::Binary),
            labels,
            bins,
            valid_range,
            expiration: params.expiration,
            creator: creator.to_string(),
        };
        payload.id = payload.computed_id();

        let (picked, total) = self.select(creator, UnitKind::Bitcoin, params.fee)?;
        let mut vin = Vec::new();
        for (i, (op, out)) in picked.iter().enumerate() {
            vin.push(Node::p2pkh_input(i as u32, *op, out));
        }
        let mut vout = vec![TxOutput {
            n: 0,
            value: params.fee,
            units: UnitKind::Bitcoin,
            event: Some(EventField::Payload(Box::new(payload.clone()))),
            branch: Some(params.branch.clone()),
            outcome: None,
            report: None,
            address: Some(payload.address()),
            script: Script::event_lock(payload.id),
        }];
        if total > params.fee {
            vout.push(Node::p2pkh_output(1, total - params.fee, UnitKind::Bitcoin, creator, key.pubkey_hash()));
        }
        let mut tx = Transaction {
            tx_type: TxType::CreateEvent,
            loss_limit: None,
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin,
            vout,
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: Some(creator.to_string()),
            branch: Some(params.branch.clone()),
        };
        Node::sign_inputs(&mut tx, key);
        Ok(tx)
    }

    /// CreateMarket: the funding payment plus every included event's
    /// creation output in; the pool plus one share coinbase per event out.
    pub fn create_market(&self, creator: &str, params: &MarketParams) -> Result<Transaction, LifecycleError> {
        let key = self.key(creator)?;
        let mut n_out = 0usize;
        let mut escrow = Amount::ZERO;
        let mut event_inputs = Vec::new();
        let mut payloads = Vec::new();
        for event_id in &params.events {
            let record = self
                .ledger
                .event_record(*event_id)
                .ok_or(LifecycleError::UnknownEvent(*event_id))?;
            let out = self
                .ledger
                .utxos()
                .get(&record.creation_outpoint)
                .ok_or(LifecycleError::EventUnbound(*event_id))?
                .clone();
            n_out += record.payload.outcome_count();
            escrow += out.value;
            event_inputs.push((record.creation_outpoint, out));
            payloads.push(record.payload.clone());
        }
        let funding = Amount::from_f64_round(crate::lmsr::max_loss(params.loss_limit, n_out));
        let mut market = MarketPayload {
            id: Hash160([0u8; 20]),
            title: params.title.clone(),
            events: params.events.clone(),
            loss_limit: params.loss_limit,
            trading_fee: params.trading_fee,
            funding,
            creator: creator.to_string(),
        };
        market.id = market.computed_id();

        let (picked, total) = self.select(creator, UnitKind::Bitcoin, funding)?;
        let mut vin = Vec::new();
        for (op, out) in &picked {
            let mut input = Node::p2pkh_input(vin.len() as u32, *op, out);
            if vin.is_empty() {
                input.trading_fee = Some(params.trading_fee);
            }
            vin.push(input);
        }
        for ((op, out), payload) in event_inputs.iter().zip(&payloads) {
            let mut input = Node::p2pkh_input(vin.len() as u32, *op, out);
            input.script_sig = Script::market_unlock(&market, payload);
            vin.push(input);
        }

        let mut vout = vec![TxOutput {
            n: 0,
            value: funding + escrow,
            units: UnitKind::Bitcoin,
            event: None,
            branch: None,
            outcome: None,
            report: None,
            address: Some(market.pool_address()),
            script: Script::market_output_lock(UnitKind::Shares),
        }];
        // The pool address is bookkeeping, not a key: the output is owned
        // by the market, so it must not count toward any user balance.
        vout[0].address = None;
        for (i, payload) in payloads.iter().enumerate() {
            vout.push(TxOutput {
                n: (i + 1) as u32,
                value: SHARES_PER_EVENT,
                units: UnitKind::Shares,
                event: Some(EventField::Ref(payload.id)),
                branch: Some(payload.branch.clone()),
                outcome: None,
                report: None,
                address: None,
                script: Script::market_output_lock(UnitKind::Bitcoin),
            });
        }
        if total > funding {
            vout.push(Node::p2pkh_output(
                vout.len() as u32,
                total - funding,
                UnitKind::Bitcoin,
                creator,
                key.pubkey_hash(),
            ));
        }

        let mut tx = Transaction {
            tx_type: TxType::CreateMarket,
            loss_limit: Some(params.loss_limit),
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin,
            vout,
            id: Some(market.id),
            title: Some(params.title.clone()),
            events: Some(params.events.clone()),
            funding: Some(funding),
            creator: Some(creator.to_string()),
            branch: None,
        };
        Node::sign_inputs(&mut tx, key);
        Ok(tx)
    }

    /// Quote a trade without building it: (cost or proceeds, fee).
    pub fn quote(
        &self,
        event_id: Hash160,
        outcome: usize,
        shares: Amount,
        selling: bool,
    ) -> Result<(Amount, Amount), LifecycleError> {
        let (market, idx) = self.market_of_event(event_id, outcome)?;
        let x = shares.to_f64();
        let cost = market.lmsr.trade_cost(idx, if selling { -x } else { x })?;
        let quoted = Amount::from_f64_round(cost.abs());
        let fee = Amount::from_f64_round(market.payload.trading_fee * quoted.to_f64());
        Ok((quoted, fee))
    }

    fn market_of_event(
        &self,
        event_id: Hash160,
        outcome: usize,
    ) -> Result<(&crate::ledger::MarketRecord, usize), LifecycleError> {
        let record = self
            .ledger
            .event_record(event_id)
            .ok_or(LifecycleError::UnknownEvent(event_id))?;
        let market_id = record.consumed_by.ok_or(LifecycleError::EventUnbound(event_id))?;
        let market = self.ledger.market(market_id).ok_or(LifecycleError::UnknownMarket(market_id))?;
        let idx = market
            .outcome_index(event_id, outcome)
            .ok_or(LifecycleError::UnknownEvent(event_id))?;
        Ok((market, idx))
    }

    fn outcome_tag(&self, event_id: Hash160, outcome: usize) -> crate::tx::OutcomeTag {
        let binary = self
            .ledger
            .event_record(event_id)
            .map(|r| r.payload.is_binary)
            .unwrap_or(false);
        if binary {
            crate::tx::OutcomeTag::Bool(outcome == 1)
        } else {
            crate::tx::OutcomeTag::Index(outcome as u64)
        }
    }

    /// Buy `shares` of an event outcome: bitcoin to the event address,
    /// shares from the market pool to the buyer.
    pub fn buy(
        &self,
        buyer: &str,
        event_id: Hash160,
        outcome: usize,
        shares: Amount,
    ) -> Result<Transaction, LifecycleError> {
        self.trade(buyer, event_id, outcome, shares, false)
    }

    /// Sell shares back to the market for bitcoin.
    pub fn sell(
        &self,
        seller: &str,
        event_id: Hash160,
        outcome: usize,
        shares: Amount,
    ) -> Result<Transaction, LifecycleError> {
        self.trade(seller, event_id, outcome, shares, true)
    }

    fn trade(
        &self,
        user: &str,
        event_id: Hash160,
        outcome: usize,
        shares: Amount,
        selling: bool,
    ) -> Result<Transaction, LifecycleError> {
        let key = self.key(user)?;
        if shares <= Amount::ZERO {
            return Err(LifecycleError::ZeroTrade);
        }
        let (market, idx) = self.market_of_event(event_id, outcome)?;
        if market.state != MarketState::Forecasting {
            return Err(LifecycleError::MarketClosed(market.payload.id));
        }
        let market_id = market.payload.id;
        let creator = market.payload.creator.clone();
        let event_payload = self.ledger.event_record(event_id).expect("looked up").payload.clone();
        let x = shares.to_f64();
        let cost = market.lmsr.trade_cost(idx, if selling { -x } else { x })?;
        let quoted = Amount::from_f64_round(cost.abs());
        let fee = Amount::from_f64_round(market.payload.trading_fee * quoted.to_f64());
        let fee_creator = Amount::from_scaled(fee.scaled() / 2);
        let fee_pool = fee - fee_creator;
        let tag = self.outcome_tag(event_id, outcome);
        let market_payload = market.payload.clone();

        let mut vin: Vec<TxInput> = Vec::new();
        let mut vout: Vec<TxOutput> = Vec::new();
        let event_ref = Some(EventField::Ref(event_id));
        let branch = Some(event_payload.branch.clone());

        let event_locked = |n: u32, value: Amount, units: UnitKind, outcome| TxOutput {
            n,
            value,
            units,
            event: event_ref.clone(),
            branch: branch.clone(),
            outcome,
            report: None,
            address: None,
            script: Script::event_lock(event_id),
        };

        if selling {
            // Shares from the seller, bitcoin from the market.
            let (share_ins, share_total) = self.select_user_shares(user, event_id, tag, shares)?;
            for (op, out) in &share_ins {
                vin.push(Node::p2pkh_input(vin.len() as u32, *op, out));
            }
            let proceeds = quoted;
            let (market_ins, market_total) =
                self.select_market_bitcoin(market_id, proceeds)?;
            for (op, out) in &market_ins {
                let mut input = Node::p2pkh_input(vin.len() as u32, *op, out);
                input.script_sig = Script::market_unlock(&market_payload, &event_payload);
                vin.push(input);
            }
            // Shares back to the event, bitcoin (net of fee) to the seller.
            vout.push(event_locked(0, shares, UnitKind::Shares, Some(tag)));
            vout.push(Node::p2pkh_output(1, proceeds - fee, UnitKind::Bitcoin, user, key.pubkey_hash()));
            if share_total > shares {
                let mut change = Node::p2pkh_output(
                    vout.len() as u32,
                    share_total - shares,
                    UnitKind::Shares,
                    user,
                    key.pubkey_hash(),
                );
                change.event = event_ref.clone();
                change.outcome = Some(tag);
                vout.push(change);
            }
            if market_total > proceeds {
                vout.push(event_locked(vout.len() as u32, market_total - proceeds, UnitKind::Bitcoin, None));
            }
        } else {
            // Bitcoin from the buyer, shares from the market pool.
            let need = quoted + fee;
            let (coin_ins, coin_total) = self.select(user, UnitKind::Bitcoin, need)?;
            for (op, out) in &coin_ins {
                vin.push(Node::p2pkh_input(vin.len() as u32, *op, out));
            }
            let (pool_ins, pool_total) = self.select_market_shares(market_id, event_id, shares)?;
            for (op, out) in &pool_ins {
                let mut input = Node::p2pkh_input(vin.len() as u32, *op, out);
                input.script_sig = Script(vec![crate::script::Instr::Push(event_id.0.to_vec())]);
                input.outcome = Some(tag);
                vin.push(input);
            }
            // Bitcoin to the event address, shares to the buyer.
            vout.push(event_locked(0, quoted, UnitKind::Bitcoin, None));
            let mut shares_out =
                Node::p2pkh_output(1, shares, UnitKind::Shares, user, key.pubkey_hash());
            shares_out.event = event_ref.clone();
            shares_out.outcome = Some(tag);
            vout.push(shares_out);
            if pool_total > shares {
                let mut pool_change = TxOutput {
                    n: vout.len() as u32,
                    value: pool_total - shares,
                    units: UnitKind::Shares,
                    event: event_ref.clone(),
                    branch: branch.clone(),
                    outcome: None,
                    report: None,
                    address: None,
                    script: Script::market_output_lock(UnitKind::Bitcoin),
                };
                pool_change.n = vout.len() as u32;
                vout.push(pool_change);
            }
            if coin_total > need {
                vout.push(Node::p2pkh_output(
                    vout.len() as u32,
                    coin_total - need,
                    UnitKind::Bitcoin,
                    user,
                    key.pubkey_hash(),
                ));
            }
        }

        // Fee outputs: half to the market's creator, half to the pool.
        if !fee_creator.is_zero() {
            let creator_key = self.keys.get(&creator);
            let pkh = creator_key
                .map(|k| k.pubkey_hash())
                .unwrap_or_else(|| crypto::hash160(creator.as_bytes()));
            vout.push(Node::p2pkh_output(vout.len() as u32, fee_creator, UnitKind::Bitcoin, &creator, pkh));
        }
        if !fee_pool.is_zero() {
            vout.push(event_locked(vout.len() as u32, fee_pool, UnitKind::Bitcoin, None));
        }
        for (i, out) in vout.iter_mut().enumerate() {
            out.n = i as u32;
        }

        let mut tx = Transaction {
            tx_type: if selling { TxType::Sell } else { TxType::Buy },
            loss_limit: None,
            event: Some(event_id),
            outcome: Some(tag),
            amount: Some(shares),
            price: Some(quoted),
            fee: Some(fee),
            vin,
            vout,
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: None,
            branch: None,
        };
        Node::sign_inputs(&mut tx, key);
        Ok(tx)
    }

    /// The user's unspent shares of one (event, outcome).
    fn select_user_shares(
        &self,
        user: &str,
        event_id: Hash160,
        tag: crate::tx::OutcomeTag,
        target: Amount,
    ) -> Result<(Vec<(OutPoint, TxOutput)>, Amount), LifecycleError> {
        let mut picked = Vec::new();
        let mut total = Amount::ZERO;
        for (op, out) in self.ledger.outputs_of(user, UnitKind::Shares) {
            if out.event.as_ref().map(EventField::id) != Some(event_id) || out.outcome != Some(tag) {
                continue;
            }
            total += out.value;
            picked.push((op, out));
            if total >= target {
                break;
            }
        }
        if total < target {
            return Err(LifecycleError::InsufficientFunds {
                who: user.to_string(),
                units: UnitKind::Shares,
                need: target,
                have: total,
            });
        }
        Ok((picked, total))
    }

    /// Market-owned bitcoin (pool plus event-addressed outputs).
    fn select_market_bitcoin(
        &self,
        market: Hash160,
        target: Amount,
    ) -> Result<(Vec<(OutPoint, TxOutput)>, Amount), LifecycleError> {
        let mut picked = Vec::new();
        let mut total = Amount::ZERO;
        for (op, out) in self.ledger.market_outputs(market, UnitKind::Bitcoin) {
            total += out.value;
            picked.push((op, out));
            if total >= target {
                break;
            }
        }
        if total < target {
            return Err(LifecycleError::InsufficientFunds {
                who: format!("market {market}"),
                units: UnitKind::Bitcoin,
                need: target,
                have: total,
            });
        }
        Ok((picked, total))
    }

    /// Market pool shares for one event (the coinbase and any returned
    /// shares change).
    fn select_market_shares(
        &self,
        market: Hash160,
        event_id: Hash160,
        target: Amount,
    ) -> Result<(Vec<(OutPoint, TxOutput)>, Amount), LifecycleError> {
        let mut picked = Vec::new();
        let mut total = Amount::ZERO;
        for (op, out) in self.ledger.market_outputs(market, UnitKind::Shares) {
            if out.event.as_ref().map(EventField::id) != Some(event_id) {
                continue;
            }
            total += out.value;
            picked.push((op, out));
            if total >= target {
                break;
            }
        }
        if total < target {
            return Err(LifecycleError::InsufficientFunds {
                who: format!("market {market}"),
                units: UnitKind::Shares,
                need: target,
                have: total,
            });
        }
        Ok((picked, total))
    }

    // ------------------------------------------------------------------
    // Feeds
    // ------------------------------------------------------------------

    /// Deterministic escrow key for a branch's challenge-fee pool.
    pub fn reporter_pool_key(branch: &str) -> KeyPair {
        KeyPair::from_seed(format!("reporter-pool|{branch}").as_bytes())
    }

    /// Pay a challenge fee on-chain into the branch's reporter pool; the
    /// pool is paid out with the reporter fees at Redemption.
    pub fn challenge(&mut self, who: &str, branch: &str, fee: Amount) -> Result<Transaction, LifecycleError> {
        let pool_address = self.register_key(Node::reporter_pool_key(branch));
        self.transfer(who, &pool_address, UnitKind::Bitcoin, fee)
    }

    /// Adopt feed-resolved outcomes: every reputation holder is entered
    /// as having unanimously revealed the resolved values, the branch's
    /// markets close, and the usual reveal window precedes Redemption.
    pub fn adopt_feed_outcomes(
        &mut self,
        branch: &str,
        resolved: &BTreeMap<Hash160, f64>,
    ) -> Result<(), LifecycleError> {
        for event in resolved.keys() {
            self.ledger.event_record(*event).ok_or(LifecycleError::UnknownEvent(*event))?;
        }
        let holders: BTreeSet<String> = self
            .ledger
            .utxos()
            .values()
            .filter(|o| o.units == UnitKind::Reputation)
            .filter_map(|o| o.address.clone())
            .collect();
        let height = self.ledger.height();
        let markets: Vec<Hash160> = self
            .branch_events(branch)
            .iter()
            .filter_map(|(id, _)| self.ledger.event_record(*id).and_then(|r| r.consumed_by))
            .collect();
        let cycle = self.cycles.entry(branch.to_string()).or_default();
        for holder in holders {
            let reveals = cycle.reveals.entry(holder).or_default();
            for (event, value) in resolved {
                reveals.insert(
                    event.to_hex(),
                    ReportEntry::Value(crate::consensus::round_1e9(*value)),
                );
            }
        }
        if cycle.closed_at.is_none() {
            cycle.closed_at = Some(height);
            for m in markets {
                let _ = self.ledger.set_market_state(m, MarketState::Closed);
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Reporting
    // ------------------------------------------------------------------

    /// Deterministic salt for a ballot commitment.
    pub fn commitment_salt(seed: u64, reporter: &str, event: Hash160) -> String {
        crypto::hash160(format!("{seed}|{reporter}|{event}").as_bytes()).to_hex()
    }

    /// Commitment over one ballot entry.
    pub fn commit_entry(entry: &ReportEntry, salt: &str) -> String {
        let body = match entry {
            ReportEntry::Value(v) => format!("value:{}", crate::consensus::round_1e9(*v)),
            ReportEntry::Invalid => "invalid".to_string(),
            ReportEntry::NoReport => "no-report".to_string(),
        };
        crypto::hash160(format!("{body}|{salt}").as_bytes()).to_hex()
    }

    /// Current quorum status for a branch, without side effects.
    pub fn quorum_status(&self, branch: &str) -> QuorumStatus {
        let matured = self.branch_events(branch).iter().all(|(_, e)| e.expiration <= self.ledger.now())
            && !self.branch_events(branch).is_empty();
        let reported = self
            .cycles
            .get(branch)
            .map(|c| c.reports.len() as u32)
            .unwrap_or(0);
        let required = self.config.quorum_required;
        QuorumStatus { matured, reported, required, met: matured && reported >= required }
    }

    /// Events on a branch that are bound into a market.
    fn branch_events(&self, branch: &str) -> Vec<(Hash160, EventPayload)> {
        self.ledger
            .events()
            .iter()
            .filter(|(_, r)| r.payload.branch == branch && r.consumed_by.is_some())
            .map(|(id, r)| (*id, r.payload.clone()))
            .collect()
    }

    /// Build a Report: the reporter's consolidated reputation carrying the
    /// salted ballot commitments.
    pub fn submit_report(
        &self,
        reporter: &str,
        branch: &str,
        ballot: &BTreeMap<Hash160, ReportEntry>,
        salt_seed: u64,
    ) -> Result<Transaction, LifecycleError> {
        let key = self.key(reporter)?;
        let cycle = self.cycles.get(branch);
        if cycle.map(|c| c.reports.contains_key(reporter)).unwrap_or(false) {
            return Err(LifecycleError::AlreadyReported(reporter.to_string()));
        }
        let reputation = self.ledger.balance(reporter, UnitKind::Reputation);
        if reputation.is_zero() {
            return Err(LifecycleError::NoReputation(reporter.to_string()));
        }
        for event_id in ballot.keys() {
            if self.ledger.event_record(*event_id).is_none() {
                return Err(LifecycleError::UnknownEvent(*event_id));
            }
        }
        let mut outcomes = BTreeMap::new();
        for (event_id, entry) in ballot {
            let salt = Node::commitment_salt(salt_seed, reporter, *event_id);
            outcomes.insert(event_id.to_hex(), Node::commit_entry(entry, &salt));
        }
        // Quorum snapshot as of this report (counting it).
        let mut quorum = self.quorum_status(branch);
        quorum.reported += 1;
        quorum.met = quorum.matured && quorum.reported >= quorum.required;

        let mut report = ReportPayload { id: Hash160([0u8; 20]), outcomes, quorum: Some(quorum) };
        report.id = report.computed_id();

        let (picked, total) = self.select(reporter, UnitKind::Reputation, reputation)?;
        let mut vin = Vec::new();
        for (op, out) in &picked {
            vin.push(Node::p2pkh_input(vin.len() as u32, *op, out));
        }
        let vout = vec![TxOutput {
            n: 0,
            value: total,
            units: UnitKind::Reputation,
            event: None,
            branch: Some(branch.to_string()),
            outcome: None,
            report: Some(report),
            address: Some(reporter.to_string()),
            script: Script::report_lock(key.pubkey_hash()),
        }];
        let mut tx = Transaction {
            tx_type: TxType::Report,
            loss_limit: None,
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin,
            vout,
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: None,
            branch: Some(branch.to_string()),
        };
        Node::sign_inputs(&mut tx, key);
        Ok(tx)
    }

    /// Record an applied Report in the cycle bookkeeping; closes the
    /// branch's markets when quorum is met.
    pub fn note_report(&mut self, tx: &Transaction) -> Result<QuorumStatus, LifecycleError> {
        let branch = tx.branch.clone().unwrap_or_default();
        let reporter = tx.vout[0].address.clone().unwrap_or_default();
        let commitments = tx.vout[0]
            .report
            .as_ref()
            .map(|r| r.outcomes.clone())
            .unwrap_or_default();
        self.cycles
            .entry(branch.clone())
            .or_default()
            .reports
            .insert(reporter, commitments);
        Ok(self.update_quorum(&branch))
    }

    /// Recompute quorum; on met, close the branch's markets and start the
    /// reveal window.
    pub fn update_quorum(&mut self, branch: &str) -> QuorumStatus {
        let status = self.quorum_status(branch);
        if status.met {
            let height = self.ledger.height();
            let markets: Vec<Hash160> = self
                .branch_events(branch)
                .iter()
                .filter_map(|(id, _)| self.ledger.event_record(*id).and_then(|r| r.consumed_by))
                .collect();
            let cycle = self.cycles.entry(branch.to_string()).or_default();
            if cycle.closed_at.is_none() {
                cycle.closed_at = Some(height);
                for m in markets {
                    let _ = self.ledger.set_market_state(m, MarketState::Closed);
                }
            }
        }
        status
    }

    /// Reveal a committed ballot entry during the reporting window.
    pub fn reveal(&mut self, branch: &str, reveal: &Reveal) -> Result<(), LifecycleError> {
        let cycle = self
            .cycles
            .get_mut(branch)
            .ok_or_else(|| LifecycleError::NotRedeemable(branch.to_string()))?;
        let commitments = cycle
            .reports
            .get(&reveal.reporter)
            .ok_or_else(|| LifecycleError::NoReputation(reveal.reporter.clone()))?;
        let expected = commitments
            .get(&reveal.event.to_hex())
            .ok_or(LifecycleError::BadReveal)?;
        if Node::commit_entry(&reveal.entry, &reveal.salt) != *expected {
            return Err(LifecycleError::BadReveal);
        }
        cycle
            .reveals
            .entry(reveal.reporter.clone())
            .or_default()
            .insert(reveal.event.to_hex(), reveal.entry);
        Ok(())
    }

    /// Whether the branch is ready for its Redemption.
    pub fn redeemable(&self, branch: &str) -> bool {
        self.cycles
            .get(branch)
            .and_then(|c| c.closed_at)
            .map(|h| !self.cycles[branch].redeemed && self.ledger.height() >= h + self.config.reveal_window)
            .unwrap_or(false)
    }

    /// Assemble the branch's report matrix: every reputation holder is a
    /// row; unrevealed entries stay NO-REPORT.
    pub fn report_matrix(&self, branch: &str) -> Result<ReportMatrix, LifecycleError> {
        let events = self.branch_events(branch);
        let cycle = self.cycles.get(branch);
        // Rows: every address holding reputation (report outputs included),
        // deterministic order.
        let mut holders: BTreeMap<String, Amount> = BTreeMap::new();
        for out in self.ledger.utxos().values() {
            if out.units == UnitKind::Reputation {
                if let Some(addr) = &out.address {
                    *holders.entry(addr.clone()).or_default() += out.value;
                }
            }
        }
        let reporters: Vec<String> = holders.keys().cloned().collect();
        let weights: Vec<f64> = reporters.iter().map(|r| holders[r].to_f64()).collect();
        let event_ids: Vec<String> = events.iter().map(|(id, _)| id.to_hex()).collect();
        let entries: Vec<Vec<ReportEntry>> = reporters
            .iter()
            .map(|r| {
                event_ids
                    .iter()
                    .map(|e| {
                        cycle
                            .and_then(|c| c.reveals.get(r))
                            .and_then(|m| m.get(e))
                            .copied()
                            .unwrap_or(ReportEntry::NoReport)
                    })
                    .collect()
            })
            .collect();
        Ok(ReportMatrix { reporters, weights, events: event_ids, entries })
    }

    /// Build the Redemption: consensus, payouts, reporter fees, and the
    /// zero-sum reputation update, all in one transaction.
    pub fn redeem(&mut self, branch: &str) -> Result<Settlement, LifecycleError> {
        if !self.redeemable(branch) {
            return Err(LifecycleError::NotRedeemable(branch.to_string()));
        }
        let matrix = self.report_matrix(branch)?;
        let consensus = {
            use crate::script::LedgerServices;
            self.ledger
                .run_consensus(&matrix)
                .map_err(LifecycleError::ReVote)?
        };
        let specs_events = matrix.events.clone();
        let centered = {
            use crate::script::LedgerServices;
            let specs = self.ledger.outcome_specs(&specs_events).map_err(LifecycleError::ReVote)?;
            crate::consensus::center(&matrix, &specs).map_err(|e| LifecycleError::ReVote(e.to_string()))?
        };
        let centered_rows: Vec<Vec<f64>> = (0..centered.values.nrows())
            .map(|i| {
                (0..centered.values.ncols())
                    .map(|j| crate::consensus::round_1e9(centered.values[(i, j)]))
                    .collect()
            })
            .collect();
        let matrix_hash = crypto::hash160(canonical_json(&matrix).as_bytes());
        let centered_hash = crypto::hash160(canonical_json(&centered_rows).as_bytes());

        let cycle_reports: BTreeSet<String> = self
            .cycles
            .get(branch)
            .map(|c| c.reports.keys().cloned().collect())
            .unwrap_or_default();
        // Reporters eligible for the fee pool: submitted a report with at
        // least one revealed entry.
        let eligible: Vec<usize> = matrix
            .reporters
            .iter()
            .enumerate()
            .filter(|(i, r)| {
                cycle_reports.contains(*r)
                    && matrix.entries[*i].iter().any(|e| !e.is_no_report())
            })
            .map(|(i, _)| i)
            .collect();

        let mut vin: Vec<TxInput> = Vec::new();
        let mut vout: Vec<TxOutput> = Vec::new();

        // Escrowed challenge fees join the reporter fee pool when anyone
        // actually reported; otherwise they stay escrowed for the next
        // cycle.
        let mut challenge_pool = Amount::ZERO;
        if !eligible.is_empty() {
            let pool_address = Node::reporter_pool_key(branch).address();
            for (op, out) in self.ledger.outputs_of(&pool_address, UnitKind::Bitcoin) {
                challenge_pool += out.value;
                vin.push(Node::p2pkh_input(vin.len() as u32, op, &out));
            }
        }

        // Reputation inputs: report outputs for submitters, plain
        // reputation outputs for everyone else on the branch.
        for reporter in &matrix.reporters {
            let key = self.key(reporter)?;
            for (op, out) in self.ledger.outputs_of(reporter, UnitKind::Reputation) {
                let mut input = Node::p2pkh_input(vin.len() as u32, op, &out);
                if out.report.is_some() {
                    input.script_sig = Script::report_unlock(matrix_hash, centered_hash, &key.public_key());
                    input.report_matrix = Some(matrix.clone());
                    input.centered_matrix = Some(centered_rows.clone());
                }
                vin.push(input);
            }
        }

        // Wager inputs: per market, all bitcoin plus all outstanding user
        // share outputs of its events.
        let markets: Vec<Hash160> = {
            let mut seen = Vec::new();
            for (id, _) in self.branch_events(branch) {
                if let Some(m) = self.ledger.event_record(id).and_then(|r| r.consumed_by) {
                    if !seen.contains(&m) {
                        seen.push(m);
                    }
                }
            }
            seen
        };
        // Per-market bitcoin available, and share positions to settle.
        struct Position {
            holder: String,
            event: Hash160,
            outcome: usize,
            amount: Amount,
        }
        let mut per_market_bitcoin: BTreeMap<Hash160, Amount> = BTreeMap::new();
        let mut positions: Vec<(Hash160, Position)> = Vec::new();
        let mut p2pkh_sign: Vec<(usize, String)> = Vec::new();

        for market_id in &markets {
            let market = self.ledger.market(*market_id).ok_or(LifecycleError::UnknownMarket(*market_id))?;
            let market_payload = market.payload.clone();
            for (op, out) in self.ledger.market_outputs(*market_id, UnitKind::Bitcoin) {
                let event_id = out
                    .event
                    .as_ref()
                    .map(EventField::id)
                    .unwrap_or(market_payload.events[0]);
                let event_payload = self.ledger.event_record(event_id).expect("registered").payload.clone();
                let mut input = Node::p2pkh_input(vin.len() as u32, op, &out);
                input.script_sig = Script::market_unlock(&market_payload, &event_payload);
                vin.push(input);
                *per_market_bitcoin.entry(*market_id).or_default() += out.value;
            }
            // Remaining market-owned shares are destroyed with the market;
            // user share outputs become wager inputs.
            for (op, out) in self.ledger.market_outputs(*market_id, UnitKind::Shares) {
                let event_id = out.event.as_ref().map(EventField::id).unwrap_or(market_payload.events[0]);
                let event_payload = self.ledger.event_record(event_id).expect("registered").payload.clone();
                let mut input = Node::p2pkh_input(vin.len() as u32, op, &out);
                input.script_sig = Script::market_unlock(&market_payload, &event_payload);
                vin.push(input);
            }
            for (op, out) in self.user_share_outputs(*market_id) {
                let holder = out.address.clone().expect("user output");
                let event_id = out.event.as_ref().map(EventField::id).expect("tagged");
                let outcome = out.outcome.expect("tagged").index();
                p2pkh_sign.push((vin.len(), holder.clone()));
                vin.push(Node::p2pkh_input(vin.len() as u32, op, &out));
                positions.push((*market_id, Position { holder, event: event_id, outcome, amount: out.value }));
            }
        }

        // Per-share settlement values from the consensus outcomes.
        let outcome_of = |event: Hash160| -> Option<&Outcome> {
            matrix
                .events
                .iter()
                .position(|e| *e == event.to_hex())
                .map(|j| &consensus.outcomes[j])
        };

        let mut payout_rows: BTreeMap<String, BTreeMap<String, Amount>> = BTreeMap::new();
        let mut per_market_payout: BTreeMap<Hash160, Amount> = BTreeMap::new();
        for (market_id, pos) in &positions {
            let market = self.ledger.market(*market_id).expect("registered");
            let record = self.ledger.event_record(pos.event).expect("registered");
            let idx = market.outcome_index(pos.event, pos.outcome).expect("validated");
            let per_share = match outcome_of(pos.event) {
                Some(Outcome::Resolved(value)) => {
                    if record.payload.is_scalar() {
                        let [lower, upper] = record.payload.valid_range;
                        let bins = record.payload.bins.unwrap_or(1) as f64;
                        let x = lower + (pos.outcome as f64 + 0.5) * (upper - lower) / bins;
                        (1.0 - (x - value).abs() / (upper - lower)).max(0.0)
                    } else if (pos.outcome as f64 - value).abs() < 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                }
                // INVALID: refund at the last market price.
                _ => market.lmsr.price(idx).unwrap_or(0.0),
            };
            let payout = Amount::from_f64_round(per_share * pos.amount.to_f64());
            *payout_rows.entry(pos.holder.clone()).or_default().entry(pos.event.to_hex()).or_default() += payout;
            *per_market_payout.entry(*market_id).or_default() += payout;
        }

        // Scale payouts down if rounding ever pushed a market past its
        // available bitcoin (binary/categorical settlements never do).
        for market_id in &markets {
            let market = self.ledger.market(*market_id).expect("registered");
            let escrow_half = Amount::from_scaled(market.escrow.scaled() / 2);
            let available = per_market_bitcoin.get(market_id).copied().unwrap_or_default() - escrow_half;
            let owed = per_market_payout.get(market_id).copied().unwrap_or_default();
            if owed > available && !owed.is_zero() {
                let scale = available.to_f64() / owed.to_f64();
                let mut new_total = Amount::ZERO;
                let mut largest: Option<(&String, Hash160)> = None;
                let mut largest_value = Amount::ZERO;
                for (m, pos) in &positions {
                    if m != market_id {
                        continue;
                    }
                    let cell = payout_rows
                        .get_mut(&pos.holder)
                        .and_then(|r| r.get_mut(&pos.event.to_hex()))
                        .expect("present");
                    *cell = Amount::from_f64_round(cell.to_f64() * scale);
                    new_total += *cell;
                    if *cell >= largest_value {
                        largest_value = *cell;
                        largest = Some((&pos.holder, pos.event));
                    }
                }
                // Rounding can leave the total a few scaled units over;
                // charge the difference to the largest cell.
                if new_total > available {
                    let (holder, event) = largest.expect("non-zero total");
                    let cell = payout_rows
                        .get_mut(holder)
                        .and_then(|r| r.get_mut(&event.to_hex()))
                        .expect("present");
                    *cell -= new_total - available;
                    new_total = available;
                }
                per_market_payout.insert(*market_id, new_total);
            }
        }

        // Outputs: reputation first, then payouts, reporter fees, residuals.
        for (i, reporter) in matrix.reporters.iter().enumerate() {
            let value = consensus.updated_reputation[i];
            if value.is_zero() {
                continue;
            }
            let key = self.key(reporter)?;
            let mut out = Node::p2pkh_output(vout.len() as u32, value, UnitKind::Reputation, reporter, key.pubkey_hash());
            out.branch = Some(branch.to_string());
            vout.push(out);
        }

        let columns: Vec<String> = matrix.events.clone();
        let row_names: Vec<String> = payout_rows.keys().cloned().collect();
        let mut entries = Vec::new();
        for holder in &row_names {
            let mut row = Vec::new();
            let mut total = Amount::ZERO;
            for col in &columns {
                let v = payout_rows[holder].get(col).copied().unwrap_or_default();
                total += v;
                row.push(v);
            }
            entries.push(row);
            if total.is_zero() {
                continue;
            }
            let pkh = self
                .keys
                .get(holder)
                .map(|k| k.pubkey_hash())
                .unwrap_or_else(|| crypto::hash160(holder.as_bytes()));
            vout.push(Node::p2pkh_output(vout.len() as u32, total, UnitKind::Bitcoin, holder, pkh));
        }
        let payouts = PayoutMatrix { rows: row_names, columns, entries };

        // Reporter fee pool: the escrowed half of each creation fee, split
        // pro-rata by post-consensus reputation among non-empty ballots.
        let mut fee_pool = Amount::ZERO;
        let mut creator_residuals: Vec<(String, Amount)> = Vec::new();
        for market_id in &markets {
            let market = self.ledger.market(*market_id).expect("registered");
            let escrow_half = Amount::from_scaled(market.escrow.scaled() / 2);
            fee_pool += escrow_half;
            let available = per_market_bitcoin.get(market_id).copied().unwrap_or_default();
            let owed = per_market_payout.get(market_id).copied().unwrap_or_default();
            let residual = available - escrow_half - owed;
            if !residual.is_zero() {
                creator_residuals.push((market.payload.creator.clone(), residual));
            }
        }
        fee_pool += challenge_pool;
        let mut reporter_fees: Vec<(String, Amount)> = Vec::new();
        if !fee_pool.is_zero() && !eligible.is_empty() {
            let shares: Vec<f64> = eligible
                .iter()
                .map(|i| consensus.updated_reputation[*i].to_f64())
                .collect();
            let allocation = crate::consensus::largest_remainder_allocate(fee_pool, &shares);
            for (i, value) in eligible.iter().zip(allocation) {
                if value.is_zero() {
                    continue;
                }
                let reporter = &matrix.reporters[*i];
                let key = self.key(reporter)?;
                vout.push(Node::p2pkh_output(vout.len() as u32, value, UnitKind::Bitcoin, reporter, key.pubkey_hash()));
                reporter_fees.push((reporter.clone(), value));
            }
        } else if !fee_pool.is_zero() {
            // Nobody reported usefully; fees fall through to the creators.
            for market_id in &markets {
                let market = self.ledger.market(*market_id).expect("registered");
                let escrow_half = Amount::from_scaled(market.escrow.scaled() / 2);
                if !escrow_half.is_zero() {
                    creator_residuals.push((market.payload.creator.clone(), escrow_half));
                }
            }
        }
        for (creator, residual) in &creator_residuals {
            let pkh = self
                .keys
                .get(creator)
                .map(|k| k.pubkey_hash())
                .unwrap_or_else(|| crypto::hash160(creator.as_bytes()));
            vout.push(Node::p2pkh_output(vout.len() as u32, *residual, UnitKind::Bitcoin, creator, pkh));
        }
        for (i, out) in vout.iter_mut().enumerate() {
            out.n = i as u32;
        }

        let mut tx = Transaction {
            tx_type: TxType::Redemption,
            loss_limit: None,
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin,
            vout,
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: None,
            branch: Some(branch.to_string()),
        };
        // Sign the share-holder and plain reputation inputs. Each holder
        // signs the same sighash (unlock scripts are excluded from it).
        let message = tx.sighash_message();
        for (i, holder) in &p2pkh_sign {
            let key = self.key(holder)?;
            tx.vin[*i].script_sig = Script::p2pkh_unlock(&key.sign(&message), &key.public_key());
        }
        for input in &mut tx.vin {
            if input.script_sig.0.is_empty() {
                // Plain reputation outputs of non-submitting holders.
                let out = input
                    .outpoint()
                    .and_then(|op| self.ledger.utxos().get(&op))
                    .cloned();
                if let Some(out) = out {
                    if let Some(addr) = &out.address {
                        let key = self.key(addr)?;
                        input.script_sig = Script::p2pkh_unlock(&key.sign(&message), &key.public_key());
                    }
                }
            }
        }

        self.cycles.entry(branch.to_string()).or_default().redeemed = true;
        Ok(Settlement { tx, consensus, payouts, reporter_fees, creator_residuals })
    }

    /// Outstanding user-held share outputs of a market's events.
    fn user_share_outputs(&self, market_id: Hash160) -> Vec<(OutPoint, TxOutput)> {
        let market = match self.ledger.market(market_id) {
            Some(m) => m,
            None => return Vec::new(),
        };
        let events: BTreeSet<Hash160> = market.payload.events.iter().copied().collect();
        self.ledger
            .utxos()
            .iter()
            .filter(|(_, o)| {
                o.units == UnitKind::Shares
                    && o.address.is_some()
                    && o.outcome.is_some()
                    && o.event.as_ref().map(EventField::id).map(|e| events.contains(&e)).unwrap_or(false)
            })
            .map(|(k, v)| (*k, v.clone()))
            .collect()
    }

    /// Start a fresh reporting cycle on a branch after redemption.
    pub fn reset_cycle(&mut self, branch: &str) {
        self.cycles.remove(branch);
    }
}
