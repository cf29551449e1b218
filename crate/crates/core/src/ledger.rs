//! Unit-tagged UTXO set, validation, atomic application, and deterministic
//! block production.
//!
//! The ledger is a single-writer state machine: every mutation goes through
//! `apply` (or `produce_block`, which calls it), and `apply` either commits
//! a whole transaction or leaves the state bit-identical to before. Blocks
//! replace mining with a fixed inter-block time and FIFO ordering.

use crate::consensus::{ConsensusParams, ConsensusResult, OutcomeSpec, ReportMatrix};
use crate::crypto::{self, Hash160};
use crate::lmsr::LmsrState;
use crate::script::{self, ExecContext, LedgerServices, VmError};
use crate::tx::{
    canonical_json, EventField, EventPayload, MarketPayload, OutPoint, Transaction, TxOutput, TxType,
};
use crate::units::{Amount, UnitKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Chain-level configuration: deterministic timing plus the validation
/// parameters every node must agree on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Timestamp of block 0.
    pub genesis_time: u64,
    /// Seconds between blocks.
    pub block_interval: u64,
    /// Minimum event-creation fee.
    pub min_event_fee: Amount,
    /// Maximum relative deviation between a trade's embedded quote and the
    /// execution price.
    pub slippage: f64,
    /// Dead-zone half-width for binary outcome resolution.
    pub binary_margin: f64,
    pub consensus: ConsensusParams,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            genesis_time: 1_400_000_000,
            block_interval: 600,
            min_event_fee: Amount::from_scaled(1_000_000),
            slippage: 0.005,
            binary_margin: crate::consensus::DEFAULT_BINARY_MARGIN,
            consensus: ConsensusParams::default(),
        }
    }
}

/// Number of shares issued per event by a CreateMarket coinbase.
pub const SHARES_PER_EVENT: Amount = Amount::from_whole(1_000_000_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketState {
    Forecasting,
    Closed,
    Redeemed,
}

/// Registered event plus its lifecycle bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub payload: EventPayload,
    /// The creation-fee output, spendable only by a CreateMarket.
    pub creation_outpoint: OutPoint,
    /// Market that consumed this event, once included.
    pub consumed_by: Option<Hash160>,
}

impl EventRecord {
    /// Outcome resolution spec for the consensus engine.
    pub fn outcome_spec(&self, binary_margin: f64) -> OutcomeSpec {
        if let Some(labels) = &self.payload.labels {
            OutcomeSpec::Categorical { labels: labels.len() }
        } else if self.payload.is_scalar() {
            OutcomeSpec::Scalar {
                lower: self.payload.valid_range[0],
                upper: self.payload.valid_range[1],
            }
        } else {
            OutcomeSpec::Binary { margin: binary_margin }
        }
    }
}

/// Registered market plus its automated-market-maker state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketRecord {
    pub payload: MarketPayload,
    pub state: MarketState,
    pub lmsr: LmsrState,
    /// First global outcome index per event (events share one LMSR state).
    pub offsets: Vec<usize>,
    /// Escrowed event-creation fees, released at redemption.
    pub escrow: Amount,
}

impl MarketRecord {
    /// Global LMSR outcome index for an outcome of one of this market's
    /// events.
    pub fn outcome_index(&self, event: Hash160, outcome: usize) -> Option<usize> {
        let pos = self.payload.events.iter().position(|e| *e == event)?;
        Some(self.offsets[pos] + outcome)
    }
}

/// A produced block: header data only; transaction bodies live in the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub timestamp: u64,
    pub prev_hash: Hash160,
    pub txids: Vec<Hash160>,
}

impl Block {
    pub fn hash(&self) -> Hash160 {
        crypto::hash160(canonical_json(self).as_bytes())
    }
}

/// One line of the block log: the header plus full transaction bodies, in
/// application order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: Block,
    pub transactions: Vec<Transaction>,
}

/// Validation and application failures, one code per rule family.
#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("double spend or unknown outpoint {0:?}")]
    DoubleSpend(OutPoint),
    #[error("input {input} script rejected: {source}")]
    Script { input: usize, source: VmError },
    #[error("unit mismatch: {0}")]
    UnitMismatch(String),
    #[error("conservation violated for {units}: inputs minus outputs = {delta}")]
    Conservation { units: UnitKind, delta: Amount },
    #[error("duplicate event (same creator, description, and expiration)")]
    DuplicateEvent,
    #[error("market {0} is not accepting trades")]
    MarketClosed(Hash160),
    #[error("trade quote deviates more than the slippage bound: quoted {quoted}, actual {actual}")]
    StaleQuote { quoted: Amount, actual: Amount },
    #[error("invalid transaction: {0}")]
    Invalid(String),
    #[error("unknown market {0}")]
    UnknownMarket(Hash160),
    #[error("unknown event {0}")]
    UnknownEvent(Hash160),
    #[error("injected fault during application")]
    InjectedFault,
}

/// Called after each output insertion during `apply`; returning true aborts
/// the application mid-flight (the atomicity contract must then restore the
/// pre-state exactly).
pub type FaultHook = Box<dyn FnMut(usize) -> bool + Send>;

/// Snapshot of all mutable ledger state, used for atomic rollback.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LedgerState {
    utxos: BTreeMap<OutPoint, TxOutput>,
    events: BTreeMap<Hash160, EventRecord>,
    markets: BTreeMap<Hash160, MarketRecord>,
    /// Market-owned outputs (pools and event-addressed cost outputs).
    output_market: BTreeMap<OutPoint, Hash160>,
    /// Duplicate-event keys: hash of (creator, description, expiration).
    event_keys: BTreeSet<Hash160>,
}

impl LedgerState {
    fn new() -> Self {
        LedgerState {
            utxos: BTreeMap::new(),
            events: BTreeMap::new(),
            markets: BTreeMap::new(),
            output_market: BTreeMap::new(),
            event_keys: BTreeSet::new(),
        }
    }
}

pub struct Ledger {
    pub config: ChainConfig,
    state: LedgerState,
    chain: Vec<BlockEntry>,
    fault: Option<FaultHook>,
}

impl Ledger {
    pub fn new(config: ChainConfig) -> Self {
        Ledger { config, state: LedgerState::new(), chain: Vec::new(), fault: None }
    }

    /// Install (or clear) the fault-injection hook used by atomicity tests.
    pub fn set_fault_hook(&mut self, hook: Option<FaultHook>) {
        self.fault = hook;
    }

    pub fn height(&self) -> u64 {
        self.chain.len() as u64
    }

    /// Current chain time: the timestamp the next block will carry.
    pub fn now(&self) -> u64 {
        self.config.genesis_time + self.height() * self.config.block_interval
    }

    pub fn chain(&self) -> &[BlockEntry] {
        &self.chain
    }

    pub fn utxos(&self) -> &BTreeMap<OutPoint, TxOutput> {
        &self.state.utxos
    }

    pub fn events(&self) -> &BTreeMap<Hash160, EventRecord> {
        &self.state.events
    }

    pub fn markets(&self) -> &BTreeMap<Hash160, MarketRecord> {
        &self.state.markets
    }

    pub fn market(&self, id: Hash160) -> Option<&MarketRecord> {
        self.state.markets.get(&id)
    }

    pub fn event_record(&self, id: Hash160) -> Option<&EventRecord> {
        self.state.events.get(&id)
    }

    /// Sum of unspent outputs locked to `address` with the given unit kind.
    pub fn balance(&self, address: &str, units: UnitKind) -> Amount {
        self.state
            .utxos
            .values()
            .filter(|o| o.units == units && o.address.as_deref() == Some(address))
            .map(|o| o.value)
            .sum()
    }

    /// Unspent outpoints locked to `address` with the given unit kind, in
    /// deterministic (outpoint) order.
    pub fn outputs_of(&self, address: &str, units: UnitKind) -> Vec<(OutPoint, TxOutput)> {
        self.state
            .utxos
            .iter()
            .filter(|(_, o)| o.units == units && o.address.as_deref() == Some(address))
            .map(|(k, v)| (*k, v.clone()))
            .collect()
    }

    /// Market-owned unspent outputs in the given unit, deterministic order.
    pub fn market_outputs(&self, market: Hash160, units: UnitKind) -> Vec<(OutPoint, TxOutput)> {
        self.state
            .output_market
            .iter()
            .filter(|(_, m)| **m == market)
            .filter_map(|(op, _)| self.state.utxos.get(op).map(|o| (*op, o.clone())))
            .filter(|(_, o)| o.units == units)
            .collect()
    }

    /// Total reputation in the UTXO set; constant after genesis.
    pub fn reputation_supply(&self) -> Amount {
        self.state
            .utxos
            .values()
            .filter(|o| o.units == UnitKind::Reputation)
            .map(|o| o.value)
            .sum()
    }

    /// Hash of the full UTXO set in canonical form.
    pub fn utxo_hash(&self) -> Hash160 {
        let entries: Vec<(&OutPoint, &TxOutput)> = self.state.utxos.iter().collect();
        crypto::hash160(canonical_json(&entries).as_bytes())
    }

    /// Mark a market closed (quorum met) or redeemed. Lifecycle-driven.
    pub fn set_market_state(&mut self, market: Hash160, state: MarketState) -> Result<(), LedgerError> {
        let record = self.state.markets.get_mut(&market).ok_or(LedgerError::UnknownMarket(market))?;
        record.state = state;
        Ok(())
    }

    // ------------------------------------------------------------------
    // Validation
    // ------------------------------------------------------------------

    /// Full validation against the current state; does not mutate.
    pub fn validate(&self, tx: &Transaction) -> Result<(), LedgerError> {
        if tx.vout.is_empty() {
            return Err(LedgerError::Invalid("transaction has no outputs".into()));
        }
        for (i, out) in tx.vout.iter().enumerate() {
            if out.n as usize != i {
                return Err(LedgerError::Invalid("output indices must be 0..n in order".into()));
            }
            if out.value.is_negative() {
                return Err(LedgerError::Invalid("negative output value".into()));
            }
            if out.units == UnitKind::Shares && (out.event.is_none() || out.outcome.is_none()) {
                // Market pool share outputs are undifferentiated coinbases;
                // every user-held shares output carries its outcome.
                let pool_owned = matches!(tx.tx_type, TxType::CreateMarket | TxType::Buy | TxType::Sell)
                    && out.address.is_none();
                if !(pool_owned && out.event.is_some()) {
                    return Err(LedgerError::Invalid(
                        "shares output missing event reference or outcome tag".into(),
                    ));
                }
            }
        }

        if tx.tx_type == TxType::Faucet {
            return self.validate_faucet(tx);
        }

        // Inputs: unspent, value/units matching the spent outputs, no
        // repeats within the transaction.
        let mut seen = BTreeSet::new();
        let mut prevouts = Vec::with_capacity(tx.vin.len());
        for (i, input) in tx.vin.iter().enumerate() {
            let outpoint = input
                .outpoint()
                .ok_or_else(|| LedgerError::Invalid(format!("input {i} lacks an outpoint")))?;
            if !seen.insert(outpoint) {
                return Err(LedgerError::DoubleSpend(outpoint));
            }
            let prevout = self
                .state
                .utxos
                .get(&outpoint)
                .ok_or(LedgerError::DoubleSpend(outpoint))?;
            if input.units != prevout.units {
                return Err(LedgerError::UnitMismatch(format!(
                    "input {i} claims {}, spent output is {}",
                    input.units, prevout.units
                )));
            }
            if input.value != prevout.value {
                return Err(LedgerError::Invalid(format!(
                    "input {i} value {} does not match spent output value {}",
                    input.value, prevout.value
                )));
            }
            prevouts.push(prevout);
        }
        if tx.vin.is_empty() {
            return Err(LedgerError::Invalid("non-faucet transaction has no inputs".into()));
        }

        // Scripts.
        for (i, input) in tx.vin.iter().enumerate() {
            let ctx = ExecContext::new(tx, i, prevouts[i], self);
            script::execute(&input.script_sig, &prevouts[i].script, &ctx)
                .map_err(|source| LedgerError::Script { input: i, source })?;
        }

        self.check_conservation(tx)?;
        self.validate_type_rules(tx, &prevouts)?;
        Ok(())
    }

    fn validate_faucet(&self, tx: &Transaction) -> Result<(), LedgerError> {
        if !tx.vin.is_empty() {
            return Err(LedgerError::Invalid("faucet transactions take no inputs".into()));
        }
        // Reputation is a fixed supply: it can only be seeded at genesis.
        if self.height() > 0 && tx.vout.iter().any(|o| o.units == UnitKind::Reputation) {
            return Err(LedgerError::Invalid(
                "reputation can only be faucet-issued in the genesis block".into(),
            ));
        }
        if tx.vout.iter().any(|o| o.units == UnitKind::Shares) {
            return Err(LedgerError::Invalid("shares cannot be faucet-issued".into()));
        }
        Ok(())
    }

    /// Per-unit conservation with the explicitly marked coinbase
    /// exemptions: CreateMarket issues shares, Redemption destroys them.
    fn check_conservation(&self, tx: &Transaction) -> Result<(), LedgerError> {
        let mut sums: BTreeMap<UnitKind, Amount> = BTreeMap::new();
        for input in &tx.vin {
            *sums.entry(input.units).or_default() += input.value;
        }
        for out in &tx.vout {
            *sums.entry(out.units).or_default() -= out.value;
        }
        for (units, delta) in sums {
            if units == UnitKind::Shares
                && matches!(tx.tx_type, TxType::CreateMarket | TxType::Redemption)
            {
                continue;
            }
            if !delta.is_zero() {
                return Err(LedgerError::Conservation { units, delta });
            }
        }
        Ok(())
    }

    fn validate_type_rules(&self, tx: &Transaction, prevouts: &[&TxOutput]) -> Result<(), LedgerError> {
        match tx.tx_type {
            TxType::CreateEvent => self.validate_create_event(tx),
            TxType::CreateMarket => self.validate_create_market(tx, prevouts),
            TxType::Buy | TxType::Sell => self.validate_trade(tx),
            TxType::Report => self.validate_report(tx),
            TxType::Redemption | TxType::Transfer => Ok(()),
            TxType::Faucet => Ok(()),
        }
    }

    fn validate_create_event(&self, tx: &Transaction) -> Result<(), LedgerError> {
        let out = &tx.vout[0];
        let payload = match &out.event {
            Some(EventField::Payload(p)) => p,
            _ => return Err(LedgerError::Invalid("CreateEvent output 0 must embed the event".into())),
        };
        if payload.computed_id() != payload.id {
            return Err(LedgerError::Invalid("event ID does not hash from its fields".into()));
        }
        if out.units != UnitKind::Bitcoin || out.value < self.config.min_event_fee {
            return Err(LedgerError::Invalid(format!(
                "event creation fee below the {} minimum",
                self.config.min_event_fee
            )));
        }
        if payload.expiration <= self.now() {
            return Err(LedgerError::Invalid("event expiration is not in the future".into()));
        }
        if self.state.event_keys.contains(&event_dup_key(payload)) {
            return Err(LedgerError::DuplicateEvent);
        }
        Ok(())
    }

    fn validate_create_market(&self, tx: &Transaction, prevouts: &[&TxOutput]) -> Result<(), LedgerError> {
        let market = tx
            .market_payload()
            .ok_or_else(|| LedgerError::Invalid("CreateMarket is missing market fields".into()))?;
        if market.computed_id() != market.id {
            return Err(LedgerError::Invalid("market ID does not hash from its fields".into()));
        }
        if market.events.is_empty() {
            return Err(LedgerError::Invalid("market contains no events".into()));
        }
        let mut n_out = 0usize;
        let mut escrow = Amount::ZERO;
        for event_id in &market.events {
            let record = self
                .state
                .events
                .get(event_id)
                .ok_or(LedgerError::UnknownEvent(*event_id))?;
            if record.consumed_by.is_some() {
                return Err(LedgerError::Invalid(format!(
                    "event {event_id} is already in a market"
                )));
            }
            // Including an event spends its creation output.
            let spends_creation = tx
                .vin
                .iter()
                .any(|i| i.outpoint() == Some(record.creation_outpoint));
            if !spends_creation {
                return Err(LedgerError::Invalid(format!(
                    "CreateMarket must spend the creation output of event {event_id}"
                )));
            }
            n_out += record.payload.outcome_count();
            escrow += self.state.utxos[&record.creation_outpoint].value;
        }
        // Funding covers the creator's maximum possible loss exactly.
        let required = Amount::from_f64_round(crate::lmsr::max_loss(market.loss_limit, n_out));
        if market.funding != required {
            return Err(LedgerError::Invalid(format!(
                "funding {} does not equal the loss bound {required}",
                market.funding
            )));
        }
        // Output 0: pool = funding plus the escrowed event fees. Outputs
        // 1..N_E: share coinbases. One optional trailing change output.
        let n_e = market.events.len();
        if tx.vout.len() != n_e + 1 && tx.vout.len() != n_e + 2 {
            return Err(LedgerError::Invalid("CreateMarket needs N_E + 1 outputs".into()));
        }
        if tx.vout.len() == n_e + 2 {
            let change = &tx.vout[n_e + 1];
            if change.units != UnitKind::Bitcoin || change.address.is_none() {
                return Err(LedgerError::Invalid(
                    "CreateMarket's extra output must be bitcoin change".into(),
                ));
            }
        }
        if tx.vout[0].units != UnitKind::Bitcoin || tx.vout[0].value != market.funding + escrow {
            return Err(LedgerError::Invalid(
                "market pool output must hold the funding plus escrowed fees".into(),
            ));
        }
        for (i, event_id) in market.events.iter().enumerate() {
            let out = &tx.vout[i + 1];
            if out.units != UnitKind::Shares
                || out.value != SHARES_PER_EVENT
                || out.event.as_ref().map(EventField::id) != Some(*event_id)
            {
                return Err(LedgerError::Invalid(format!(
                    "output {} must issue {SHARES_PER_EVENT} shares of event {event_id}",
                    i + 1
                )));
            }
        }
        let _ = prevouts;
        Ok(())
    }

    fn validate_trade(&self, tx: &Transaction) -> Result<(), LedgerError> {
        let event_id = tx.event.ok_or_else(|| LedgerError::Invalid("trade missing event".into()))?;
        let outcome = tx.outcome.ok_or_else(|| LedgerError::Invalid("trade missing outcome".into()))?;
        let amount = tx.amount.ok_or_else(|| LedgerError::Invalid("trade missing amount".into()))?;
        let quoted = tx.price.ok_or_else(|| LedgerError::Invalid("trade missing price".into()))?;
        if amount <= Amount::ZERO {
            return Err(LedgerError::Invalid("trade of zero or negative shares".into()));
        }
        let record = self
            .state
            .events
            .get(&event_id)
            .ok_or(LedgerError::UnknownEvent(event_id))?;
        let market_id = record
            .consumed_by
            .ok_or_else(|| LedgerError::Invalid(format!("event {event_id} has no market")))?;
        let market = &self.state.markets[&market_id];
        if market.state != MarketState::Forecasting {
            return Err(LedgerError::MarketClosed(market_id));
        }
        let idx = market
            .outcome_index(event_id, outcome.index())
            .ok_or_else(|| LedgerError::Invalid("outcome index out of range".into()))?;
        let x = amount.to_f64();
        let signed = if tx.tx_type == TxType::Buy { x } else { -x };
        let cost = market
            .lmsr
            .trade_cost(idx, signed)
            .map_err(|e| LedgerError::Invalid(format!("market maker rejected the trade: {e}")))?;
        let actual = Amount::from_f64_round(cost.abs());
        // The embedded quote must match execution within the slippage bound.
        let tolerance = Amount::from_f64_round(cost.abs() * self.config.slippage);
        if (quoted - actual).abs() > tolerance {
            return Err(LedgerError::StaleQuote { quoted, actual });
        }
        // Fee must match the market's declared rate against the quote.
        let expected_fee = Amount::from_f64_round(market.payload.trading_fee * quoted.to_f64());
        if tx.fee.unwrap_or(Amount::ZERO) != expected_fee {
            return Err(LedgerError::Invalid(format!(
                "trading fee must be {expected_fee} at the market's rate"
            )));
        }
        Ok(())
    }

    fn validate_report(&self, tx: &Transaction) -> Result<(), LedgerError> {
        if tx.vin.iter().any(|i| i.units != UnitKind::Reputation) {
            return Err(LedgerError::UnitMismatch("reports consume only reputation".into()));
        }
        let report_outs: Vec<&TxOutput> = tx.vout.iter().filter(|o| o.report.is_some()).collect();
        if report_outs.len() != 1 || tx.vout[0].report.is_none() {
            return Err(LedgerError::Invalid("report needs exactly one report output, first".into()));
        }
        let out = &tx.vout[0];
        if out.units != UnitKind::Reputation {
            return Err(LedgerError::UnitMismatch("report output must carry reputation".into()));
        }
        let report = out.report.as_ref().unwrap();
        if report.computed_id() != report.id {
            return Err(LedgerError::Invalid("report ID does not hash from its fields".into()));
        }
        for event_hex in report.outcomes.keys() {
            let id = Hash160::from_hex(event_hex)
                .map_err(|_| LedgerError::Invalid(format!("bad event id {event_hex}")))?;
            if !self.state.events.contains_key(&id) {
                return Err(LedgerError::UnknownEvent(id));
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Application
    // ------------------------------------------------------------------

    /// Validate and apply atomically: on any error (including an injected
    /// fault) the state is restored bit-identically.
    pub fn apply(&mut self, tx: &Transaction) -> Result<(), LedgerError> {
        self.validate(tx)?;
        let snapshot = self.state.clone();
        match self.apply_inner(tx) {
            Ok(()) => Ok(()),
            Err(e) => {
                self.state = snapshot;
                Err(e)
            }
        }
    }

    fn apply_inner(&mut self, tx: &Transaction) -> Result<(), LedgerError> {
        let txid = tx.txid();
        let touched = self.markets_touched(tx);
        for input in &tx.vin {
            let outpoint = input.outpoint().expect("validated");
            self.state.utxos.remove(&outpoint).expect("validated");
            self.state.output_market.remove(&outpoint);
        }
        for (i, out) in tx.vout.iter().enumerate() {
            let outpoint = OutPoint { txid, n: out.n };
            self.state.utxos.insert(outpoint, out.clone());
            if let Some(hook) = &mut self.fault {
                if hook(i) {
                    return Err(LedgerError::InjectedFault);
                }
            }
        }
        self.register(tx, txid, &touched)?;
        Ok(())
    }

    /// Registry and market-maker updates, after the UTXO moves.
    fn register(&mut self, tx: &Transaction, txid: Hash160, touched: &[Hash160]) -> Result<(), LedgerError> {
        match tx.tx_type {
            TxType::CreateEvent => {
                let payload = match &tx.vout[0].event {
                    Some(EventField::Payload(p)) => (**p).clone(),
                    _ => unreachable!("validated"),
                };
                self.state.event_keys.insert(event_dup_key(&payload));
                self.state.events.insert(
                    payload.id,
                    EventRecord {
                        payload,
                        creation_outpoint: OutPoint { txid, n: 0 },
                        consumed_by: None,
                    },
                );
            }
            TxType::CreateMarket => {
                let market = tx.market_payload().expect("validated");
                let mut offsets = Vec::with_capacity(market.events.len());
                let mut n_out = 0usize;
                let mut escrow = Amount::ZERO;
                for event_id in &market.events {
                    offsets.push(n_out);
                    let record = self.state.events.get_mut(event_id).expect("validated");
                    record.consumed_by = Some(market.id);
                    n_out += record.payload.outcome_count();
                }
                // Escrow = everything the pool holds beyond the funding.
                escrow += tx.vout[0].value - market.funding;
                let lmsr = LmsrState::fresh(n_out, market.loss_limit)
                    .map_err(|e| LedgerError::Invalid(format!("market maker setup failed: {e}")))?;
                self.claim_market_outputs(tx, txid, market.id);
                self.state.markets.insert(
                    market.id,
                    MarketRecord { payload: market, state: MarketState::Forecasting, lmsr, offsets, escrow },
                );
            }
            TxType::Buy | TxType::Sell => {
                let event_id = tx.event.expect("validated");
                let market_id = self.state.events[&event_id].consumed_by.expect("validated");
                let outcome = tx.outcome.expect("validated").index();
                let x = tx.amount.expect("validated").to_f64();
                let signed = if tx.tx_type == TxType::Buy { x } else { -x };
                {
                    let market = self.state.markets.get_mut(&market_id).expect("validated");
                    let idx = market.outcome_index(event_id, outcome).expect("validated");
                    market
                        .lmsr
                        .apply_trade(idx, signed)
                        .map_err(|e| LedgerError::Invalid(format!("market maker update failed: {e}")))?;
                }
                self.claim_market_outputs(tx, txid, market_id);
            }
            TxType::Redemption => {
                // The pool outputs have been consumed; any residual market
                // outputs created by the redemption (none, normally) would
                // be re-claimed here.
                for market_id in touched {
                    self.claim_market_outputs(tx, txid, *market_id);
                    self.state.markets.get_mut(market_id).expect("touched").state =
                        MarketState::Redeemed;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Record which of this transaction's outputs are market-owned: pools
    /// and event-addressed outputs (no user address, MARKETCHECK lock).
    fn claim_market_outputs(&mut self, tx: &Transaction, txid: Hash160, market: Hash160) {
        for out in &tx.vout {
            if out.address.is_some() {
                continue;
            }
            let market_locked = out
                .script
                .0
                .iter()
                .any(|i| matches!(i, crate::script::Instr::Op(crate::script::Opcode::MarketCheck)));
            if market_locked {
                self.state
                    .output_market
                    .insert(OutPoint { txid, n: out.n }, market);
            }
        }
    }

    /// Markets whose outputs a transaction spends.
    fn markets_touched(&self, tx: &Transaction) -> Vec<Hash160> {
        let mut seen = Vec::new();
        for input in &tx.vin {
            if let Some(outpoint) = input.outpoint() {
                if let Some(m) = self.state.output_market.get(&outpoint) {
                    if !seen.contains(m) {
                        seen.push(*m);
                    }
                }
            }
        }
        seen
    }

    // ------------------------------------------------------------------
    // Blocks
    // ------------------------------------------------------------------

    /// Apply pending transactions FIFO and append a block. Conflicting or
    /// invalid transactions are skipped (first wins) and returned with
    /// their rejection reasons.
    pub fn produce_block(
        &mut self,
        pending: Vec<Transaction>,
    ) -> (Block, Vec<(Transaction, LedgerError)>) {
        let mut accepted = Vec::new();
        let mut txids = Vec::new();
        let mut rejected = Vec::new();
        for tx in pending {
            match self.apply(&tx) {
                Ok(()) => {
                    txids.push(tx.txid());
                    accepted.push(tx);
                }
                Err(e) => rejected.push((tx, e)),
            }
        }
        let prev_hash = self
            .chain
            .last()
            .map(|e| e.block.hash())
            .unwrap_or(Hash160([0u8; 20]));
        let block = Block {
            height: self.height(),
            timestamp: self.now(),
            prev_hash,
            txids,
        };
        self.chain.push(BlockEntry { block: block.clone(), transactions: accepted });
        (block, rejected)
    }

    /// The block log: one JSON object per line, in chain order.
    pub fn block_log(&self) -> String {
        let mut log = String::new();
        for entry in &self.chain {
            log.push_str(&canonical_json(entry));
            log.push('\n');
        }
        log
    }

    /// Rebuild a ledger by replaying a block log from genesis through full
    /// validation. Returns the ledger; the caller compares `utxo_hash`.
    pub fn replay(config: ChainConfig, log: &str) -> Result<Ledger, LedgerError> {
        let mut ledger = Ledger::new(config);
        for line in log.lines().filter(|l| !l.trim().is_empty()) {
            let entry: BlockEntry = serde_json::from_str(line)
                .map_err(|e| LedgerError::Invalid(format!("bad block log line: {e}")))?;
            let (block, rejected) = ledger.produce_block(entry.transactions.clone());
            if let Some((_, e)) = rejected.into_iter().next() {
                return Err(LedgerError::Invalid(format!(
                    "replayed transaction failed validation: {e}"
                )));
            }
            if block.txids != entry.block.txids
                || block.height != entry.block.height
                || block.timestamp != entry.block.timestamp
                || block.prev_hash != entry.block.prev_hash
            {
                return Err(LedgerError::Invalid(format!(
                    "replayed block {} does not match the log",
                    entry.block.height
                )));
            }
        }
        Ok(ledger)
    }
}

/// Duplicate-event key: same creator, description, and expiration.
fn event_dup_key(event: &EventPayload) -> Hash160 {
    let key = format!("{}\u{0}{}\u{0}{}", event.creator, event.description, event.expiration);
    crypto::hash160(key.as_bytes())
}

impl LedgerServices for Ledger {
    fn market_of_output(&self, outpoint: OutPoint) -> Option<MarketPayload> {
        let id = self.state.output_market.get(&outpoint)?;
        Some(self.state.markets.get(id)?.payload.clone())
    }

    fn event(&self, id: Hash160) -> Option<EventPayload> {
        Some(self.state.events.get(&id)?.payload.clone())
    }

    fn reputation_balance(&self, address: &str) -> Amount {
        self.balance(address, UnitKind::Reputation)
    }

    fn outcome_specs(&self, events: &[String]) -> Result<Vec<OutcomeSpec>, String> {
        events
            .iter()
            .map(|hex| {
                let id = Hash160::from_hex(hex).map_err(|e| e.to_string())?;
                self.state
                    .events
                    .get(&id)
                    .map(|r| r.outcome_spec(self.config.binary_margin))
                    .ok_or_else(|| format!("unknown event {hex}"))
            })
            .collect()
    }

    fn run_consensus(&self, matrix: &ReportMatrix) -> Result<ConsensusResult, String> {
        let specs = self.outcome_specs(&matrix.events)?;
        let prior: Vec<Amount> = matrix
            .reporters
            .iter()
            .map(|addr| self.reputation_balance(addr))
            .collect();
        crate::consensus::redistribute(matrix, &specs, &prior, &self.config.consensus)
            .map_err(|e| e.to_string())
    }
}
