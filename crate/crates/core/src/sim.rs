//! Scenario-driven deterministic simulator.
//!
//! A scenario is a versioned JSON document: genesis allocations, a
//! configuration block, and a totally ordered action list. Running it
//! drives the real lifecycle and ledger code, one block per action, and
//! produces a run report plus the block log. Replaying the same
//! scenario yields a bit-identical log; `verify` revalidates a log from
//! genesis.

use crate::consensus::{ConsensusResult, ReportEntry};
use crate::crypto::{self, Hash160, KeyPair};
use crate::feeds::{FeedDecision, FeedDesk, Observation};
use crate::ledger::{ChainConfig, Ledger, MarketState};
use crate::lifecycle::{EventKind, EventParams, MarketParams, Node, PayoutMatrix, ProtocolConfig, Reveal};
use crate::tx::Transaction;
use crate::units::{Amount, UnitKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("unsupported scenario version {0}, expected {SCENARIO_VERSION}")]
    Version(u32),
    #[error("genesis allocation {index}: {message}")]
    Genesis { index: usize, message: String },
    #[error("action {index} ({kind}): {message}")]
    Action { index: usize, kind: String, message: String },
}

/// Scenario-level knobs; everything has a default so minimal scenarios
/// stay short.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct SimConfig {
    pub block_interval: u64,
    pub quorum_required: u32,
    pub reveal_window: u64,
    pub variance_threshold: f64,
    pub event_fee: Amount,
    /// Feed auto-resolution threshold θ.
    pub feed_threshold: f64,
    pub challenge_fee: Amount,
    /// Seed for ballot commitment salts.
    pub salt_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let protocol = ProtocolConfig::default();
        SimConfig {
            block_interval: protocol.chain.block_interval,
            quorum_required: protocol.quorum_required,
            reveal_window: protocol.reveal_window,
            variance_threshold: protocol.chain.consensus.variance_threshold,
            event_fee: protocol.event_fee,
            feed_threshold: 0.95,
            challenge_fee: "0.01".parse().expect("literal"),
            salt_seed: 7,
        }
    }
}

impl SimConfig {
    pub fn protocol(&self) -> ProtocolConfig {
        let mut protocol = ProtocolConfig::default();
        protocol.chain.block_interval = self.block_interval;
        protocol.chain.consensus.variance_threshold = self.variance_threshold;
        protocol.quorum_required = self.quorum_required;
        protocol.reveal_window = self.reveal_window;
        protocol.event_fee = self.event_fee;
        protocol
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Allocation {
    pub actor: String,
    pub units: UnitKind,
    pub value: Amount,
}

/// One step of a scenario. Actors and events are referred to by the
/// labels the scenario itself introduces.
//
// Deserialization is hand-written below: serde's derived internal
// tagging buffers values in a way that loses arbitrary-precision JSON
// numbers, which Amount depends on.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    CreateEvent {
        actor: String,
        label: String,
        description: String,
        branch: String,
        #[serde(flatten)]
        kind: EventKind,
        /// Blocks from now until maturity.
        expires_in: u64,
        fee: Option<Amount>,
    },
    CreateMarket {
        actor: String,
        label: String,
        title: String,
        events: Vec<String>,
        loss_limit: f64,
        trading_fee: f64,
    },
    Buy { actor: String, event: String, outcome: usize, shares: Amount },
    Sell { actor: String, event: String, outcome: usize, shares: Amount },
    Transfer { from: String, to: String, units: UnitKind, value: Amount },
    AdvanceBlocks { count: u64 },
    /// Mine empty blocks until the event has matured.
    AdvancePast { event: String },
    Report { actor: String, branch: String, ballot: BTreeMap<String, ReportEntry> },
    Reveal { actor: String, branch: String, event: String, entry: ReportEntry },
    /// The actor queries a (scenario-inline) source and signs what it
    /// says; weight is their reputation at this block.
    FeedObservation { actor: String, branch: String, event: String, value: f64 },
    /// Aggregate all observations on the branch; if every bound event
    /// resolves at θ, the outcomes are adopted and the markets close.
    FeedResolve { branch: String },
    Challenge { actor: String, branch: String, event: String, fee: Amount },
    Redeem { branch: String },
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        action_from_value(&value).map_err(serde::de::Error::custom)
    }
}

fn action_from_value(value: &serde_json::Value) -> Result<Action, String> {
    let obj = value.as_object().ok_or("an action must be a JSON object")?;
    let field = |key: &str| obj.get(key).ok_or(format!("missing field {key:?}"));
    let text = |key: &str| -> Result<String, String> {
        field(key)?
            .as_str()
            .map(str::to_string)
            .ok_or(format!("field {key:?} must be a string"))
    };
    let number = |key: &str| -> Result<f64, String> {
        field(key)?.as_f64().ok_or(format!("field {key:?} must be a number"))
    };
    let integer = |key: &str| -> Result<u64, String> {
        field(key)?.as_u64().ok_or(format!("field {key:?} must be a non-negative integer"))
    };
    let amount = |key: &str| -> Result<Amount, String> {
        serde_json::from_value(field(key)?.clone())
            .map_err(|e| format!("field {key:?}: {e}"))
    };
    let units = |key: &str| -> Result<UnitKind, String> {
        serde_json::from_value(field(key)?.clone())
            .map_err(|e| format!("field {key:?}: {e}"))
    };
    let entry = |key: &str| -> Result<ReportEntry, String> {
        serde_json::from_value(field(key)?.clone())
            .map_err(|e| format!("field {key:?}: {e}"))
    };
    match text("action")?.as_str() {
        "create-event" => Ok(Action::CreateEvent {
            actor: text("actor")?,
            label: text("label")?,
            description: text("description")?,
            branch: text("branch")?,
            kind: event_kind_from_value(value)?,
            expires_in: integer("expires_in")?,
            fee: match obj.get("fee") {
                None | Some(serde_json::Value::Null) => None,
                Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| format!("field \"fee\": {e}"))?),
            },
        }),
        "create-market" => Ok(Action::CreateMarket {
            actor: text("actor")?,
            label: text("label")?,
            title: text("title")?,
            events: serde_json::from_value(field("events")?.clone())
                .map_err(|e| format!("field \"events\": {e}"))?,
            loss_limit: number("loss_limit")?,
            trading_fee: number("trading_fee")?,
        }),
        "buy" => Ok(Action::Buy {
            actor: text("actor")?,
            event: text("event")?,
            outcome: integer("outcome")? as usize,
            shares: amount("shares")?,
        }),
        "sell" => Ok(Action::Sell {
            actor: text("actor")?,
            event: text("event")?,
            outcome: integer("outcome")? as usize,
            shares: amount("shares")?,
        }),
        "transfer" => Ok(Action::Transfer {
            from: text("from")?,
            to: text("to")?,
            units: units("units")?,
            value: amount("value")?,
        }),
        "advance-blocks" => Ok(Action::AdvanceBlocks { count: integer("count")? }),
        "advance-past" => Ok(Action::AdvancePast { event: text("event")? }),
        "report" => Ok(Action::Report {
            actor: text("actor")?,
            branch: text("branch")?,
            ballot: serde_json::from_value(field("ballot")?.clone())
                .map_err(|e| format!("field \"ballot\": {e}"))?,
        }),
        "reveal" => Ok(Action::Reveal {
            actor: text("actor")?,
            branch: text("branch")?,
            event: text("event")?,
            entry: entry("entry")?,
        }),
        "feed-observation" => Ok(Action::FeedObservation {
            actor: text("actor")?,
            branch: text("branch")?,
            event: text("event")?,
            value: number("value")?,
        }),
        "feed-resolve" => Ok(Action::FeedResolve { branch: text("branch")? }),
        "challenge" => Ok(Action::Challenge {
            actor: text("actor")?,
            branch: text("branch")?,
            event: text("event")?,
            fee: amount("fee")?,
        }),
        "redeem" => Ok(Action::Redeem { branch: text("branch")? }),
        other => Err(format!("unknown action {other:?}")),
    }
}

/// The event-kind fields live inline in the create-event action.
fn event_kind_from_value(value: &serde_json::Value) -> Result<EventKind, String> {
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or("missing field \"kind\"")?;
    let number = |key: &str| -> Result<f64, String> {
        value
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or(format!("field {key:?} must be a number"))
    };
    match kind {
        "binary" => Ok(EventKind::Binary),
        "scalar" => Ok(EventKind::Scalar {
            lower: number("lower")?,
            upper: number("upper")?,
            bins: value
                .get("bins")
                .and_then(|v| v.as_u64())
                .ok_or("field \"bins\" must be a non-negative integer")? as u32,
        }),
        "categorical" => Ok(EventKind::Categorical {
            labels: serde_json::from_value(
                value.get("labels").cloned().ok_or("missing field \"labels\"")?,
            )
            .map_err(|e| format!("field \"labels\": {e}"))?,
        }),
        other => Err(format!("unknown event kind {other:?}")),
    }
}

impl Action {
    fn kind(&self) -> &'static str {
        match self {
            Action::CreateEvent { .. } => "create-event",
            Action::CreateMarket { .. } => "create-market",
            Action::Buy { .. } => "buy",
            Action::Sell { .. } => "sell",
            Action::Transfer { .. } => "transfer",
            Action::AdvanceBlocks { .. } => "advance-blocks",
            Action::AdvancePast { .. } => "advance-past",
            Action::Report { .. } => "report",
            Action::Reveal { .. } => "reveal",
            Action::FeedObservation { .. } => "feed-observation",
            Action::FeedResolve { .. } => "feed-resolve",
            Action::Challenge { .. } => "challenge",
            Action::Redeem { .. } => "redeem",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub config: SimConfig,
    #[serde(default)]
    pub genesis: Vec<Allocation>,
    #[serde(default)]
    pub actions: Vec<Action>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        if scenario.version != SCENARIO_VERSION {
            return Err(SimError::Version(scenario.version));
        }
        Ok(scenario)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PricePoint {
    pub height: u64,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsensusSummary {
    pub branch: String,
    pub result: ConsensusResult,
    pub payouts: PayoutMatrix,
    pub reporter_fees: Vec<(String, Amount)>,
    pub creator_residuals: Vec<(String, Amount)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeedNote {
    pub branch: String,
    pub event: String,
    pub decision: FeedDecision,
}

/// Per-unit totals over the final UTXO set, plus the state and log
/// digests everything else can be checked against.
#[derive(Debug, Clone, Serialize)]
pub struct Conservation {
    pub bitcoin_supply: Amount,
    pub reputation_supply: Amount,
    pub shares_outstanding: Amount,
    pub utxo_hash: String,
    pub block_log_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub blocks: u64,
    pub actions_executed: usize,
    /// actor -> unit -> final balance.
    pub final_balances: BTreeMap<String, BTreeMap<String, Amount>>,
    /// Event label -> id, and market label -> id, as hex.
    pub events: BTreeMap<String, String>,
    pub markets: BTreeMap<String, String>,
    /// market label -> price vector per trade.
    pub price_history: BTreeMap<String, Vec<PricePoint>>,
    pub consensus: Vec<ConsensusSummary>,
    pub feed_decisions: Vec<FeedNote>,
    pub conservation: Conservation,
}

pub struct RunOutput {
    pub report: RunReport,
    pub block_log: String,
    /// Per-branch feed observation logs (JSON lines).
    pub feed_logs: BTreeMap<String, String>,
    /// Per-branch feed state after the run.
    pub feed_desks: BTreeMap<String, FeedDesk>,
    /// The node after the run, for state inspection.
    pub node: Node,
}

struct Runner {
    node: Node,
    config: SimConfig,
    /// Actor label -> address.
    actors: BTreeMap<String, String>,
    /// Event label -> id, and market label -> id.
    events: BTreeMap<String, Hash160>,
    markets: BTreeMap<String, Hash160>,
    market_labels: BTreeMap<Hash160, String>,
    desks: BTreeMap<String, FeedDesk>,
    price_history: BTreeMap<String, Vec<PricePoint>>,
    consensus: Vec<ConsensusSummary>,
    feed_decisions: Vec<FeedNote>,
}

impl Runner {
    fn actor(&mut self, label: &str) -> String {
        if let Some(addr) = self.actors.get(label) {
            return addr.clone();
        }
        let addr = self.node.register_key(KeyPair::from_seed(label.as_bytes()));
        self.actors.insert(label.to_string(), addr.clone());
        addr
    }

    fn event_id(&self, label: &str) -> Result<Hash160, String> {
        self.events.get(label).copied().ok_or_else(|| format!("unknown event label {label:?}"))
    }

    fn desk(&mut self, branch: &str) -> &mut FeedDesk {
        let (theta, fee) = (self.config.feed_threshold, self.config.challenge_fee);
        self.desks
            .entry(branch.to_string())
            .or_insert_with(|| FeedDesk::new(theta, fee).expect("validated threshold"))
    }

    /// Apply one transaction as its own block; any rejection is the
    /// action's failure.
    fn commit(&mut self, tx: Transaction) -> Result<(), String> {
        let (_, rejected) = self.node.ledger.produce_block(vec![tx]);
        match rejected.into_iter().next() {
            None => Ok(()),
            Some((_, e)) => Err(e.to_string()),
        }
    }

    fn record_prices(&mut self, market_id: Hash160) {
        let Some(label) = self.market_labels.get(&market_id).cloned() else {
            return;
        };
        let Some(market) = self.node.ledger.market(market_id) else {
            return;
        };
        let point = PricePoint { height: self.node.ledger.height(), prices: market.lmsr.prices() };
        self.price_history.entry(label).or_default().push(point);
    }

    fn market_of_event(&self, event: Hash160) -> Option<Hash160> {
        self.node.ledger.event_record(event).and_then(|r| r.consumed_by)
    }

    fn step(&mut self, action: &Action) -> Result<(), String> {
        match action {
            Action::CreateEvent { actor, label, description, branch, kind, expires_in, fee } => {
                let address = self.actor(actor);
                let expiration =
                    self.node.ledger.now() + expires_in * self.config.block_interval;
                let params = EventParams {
                    description: description.clone(),
                    branch: branch.clone(),
                    kind: kind.clone(),
                    expiration,
                    fee: fee.unwrap_or(self.config.event_fee),
                };
                let tx = self.node.create_event(&address, &params).map_err(|e| e.to_string())?;
                let id = tx.vout[0]
                    .event
                    .as_ref()
                    .map(crate::tx::EventField::id)
                    .ok_or("built event transaction lacks a payload")?;
                self.commit(tx)?;
                self.events.insert(label.clone(), id);
                Ok(())
            }
            Action::CreateMarket { actor, label, title, events, loss_limit, trading_fee } => {
                let address = self.actor(actor);
                let ids = events
                    .iter()
                    .map(|l| self.event_id(l))
                    .collect::<Result<Vec<_>, _>>()?;
                let params = MarketParams {
                    title: title.clone(),
                    events: ids,
                    loss_limit: *loss_limit,
                    trading_fee: *trading_fee,
                };
                let tx = self.node.create_market(&address, &params).map_err(|e| e.to_string())?;
                let id = tx.id.ok_or("built market transaction lacks an id")?;
                self.commit(tx)?;
                self.markets.insert(label.clone(), id);
                self.market_labels.insert(id, label.clone());
                self.record_prices(id);
                Ok(())
            }
            Action::Buy { actor, event, outcome, shares } => {
                let address = self.actor(actor);
                let event_id = self.event_id(event)?;
                let tx = self
                    .node
                    .buy(&address, event_id, *outcome, *shares)
                    .map_err(|e| e.to_string())?;
                self.commit(tx)?;
                if let Some(m) = self.market_of_event(event_id) {
                    self.record_prices(m);
                }
                Ok(())
            }
            Action::Sell { actor, event, outcome, shares } => {
                let address = self.actor(actor);
                let event_id = self.event_id(event)?;
                let tx = self
                    .node
                    .sell(&address, event_id, *outcome, *shares)
                    .map_err(|e| e.to_string())?;
                self.commit(tx)?;
                if let Some(m) = self.market_of_event(event_id) {
                    self.record_prices(m);
                }
                Ok(())
            }
            Action::Transfer { from, to, units, value } => {
                let from = self.actor(from);
                let to = self.actor(to);
                let tx = self
                    .node
                    .transfer(&from, &to, *units, *value)
                    .map_err(|e| e.to_string())?;
                self.commit(tx)
            }
            Action::AdvanceBlocks { count } => {
                for _ in 0..*count {
                    self.node.ledger.produce_block(vec![]);
                }
                Ok(())
            }
            Action::AdvancePast { event } => {
                let event_id = self.event_id(event)?;
                let expiration = self
                    .node
                    .ledger
                    .event_record(event_id)
                    .ok_or("event is not on the ledger")?
                    .payload
                    .expiration;
                while self.node.ledger.now() < expiration {
                    self.node.ledger.produce_block(vec![]);
                }
                Ok(())
            }
            Action::Report { actor, branch, ballot } => {
                let address = self.actor(actor);
                let mut entries = BTreeMap::new();
                for (label, entry) in ballot {
                    entries.insert(self.event_id(label)?, *entry);
                }
                let tx = self
                    .node
                    .submit_report(&address, branch, &entries, self.config.salt_seed)
                    .map_err(|e| e.to_string())?;
                self.commit(tx.clone())?;
                self.node.note_report(&tx).map_err(|e| e.to_string())?;
                Ok(())
            }
            Action::Reveal { actor, branch, event, entry } => {
                let address = self.actor(actor);
                let event_id = self.event_id(event)?;
                let salt = Node::commitment_salt(self.config.salt_seed, &address, event_id);
                self.node
                    .reveal(
                        branch,
                        &Reveal { reporter: address, event: event_id, entry: *entry, salt },
                    )
                    .map_err(|e| e.to_string())
            }
            Action::FeedObservation { actor, branch, event, value } => {
                let address = self.actor(actor);
                let event_id = self.event_id(event)?;
                let weight = self.node.ledger.balance(&address, UnitKind::Reputation);
                if weight.is_zero() {
                    return Err(format!("{actor} holds no reputation and cannot observe"));
                }
                let key = self.node.key(&address).map_err(|e| e.to_string())?.clone();
                let observation = Observation::sign(&key, event_id, *value, weight);
                self.desk(branch).record(vec![observation]);
                Ok(())
            }
            Action::FeedResolve { branch } => {
                // Every event observed on this branch must resolve at θ
                // for the outcomes to be adopted; otherwise the branch
                // falls back to manual reporting.
                let desk = self.desk(branch).clone();
                let mut observed: Vec<Hash160> =
                    desk.observations().iter().map(|o| o.event).collect();
                observed.sort();
                observed.dedup();
                let mut resolved = BTreeMap::new();
                let mut pending_vote = false;
                for event in observed {
                    let aggregate = desk.decide(event).map_err(|e| e.to_string())?;
                    self.feed_decisions.push(FeedNote {
                        branch: branch.clone(),
                        event: event.to_hex(),
                        decision: aggregate.decision,
                    });
                    match aggregate.decision {
                        FeedDecision::Resolved { value } => {
                            resolved.insert(event, value);
                        }
                        FeedDecision::VoteRequired => pending_vote = true,
                    }
                }
                if !pending_vote && !resolved.is_empty() {
                    self.node
                        .adopt_feed_outcomes(branch, &resolved)
                        .map_err(|e| e.to_string())?;
                }
                Ok(())
            }
            Action::Challenge { actor, branch, event, fee } => {
                let address = self.actor(actor);
                let event_id = self.event_id(event)?;
                let redeemed = self
                    .market_of_event(event_id)
                    .and_then(|m| self.node.ledger.market(m))
                    .map(|m| m.state == MarketState::Redeemed)
                    .unwrap_or(false);
                self.desk(branch)
                    .challenge(event_id, *fee, redeemed)
                    .map_err(|e| e.to_string())?;
                let tx = self
                    .node
                    .challenge(&address, branch, *fee)
                    .map_err(|e| e.to_string())?;
                self.commit(tx)
            }
            Action::Redeem { branch } => {
                let settlement = self.node.redeem(branch).map_err(|e| e.to_string())?;
                self.commit(settlement.tx.clone())?;
                self.consensus.push(ConsensusSummary {
                    branch: branch.clone(),
                    result: settlement.consensus,
                    payouts: settlement.payouts,
                    reporter_fees: settlement.reporter_fees,
                    creator_residuals: settlement.creator_residuals,
                });
                Ok(())
            }
        }
    }
}

/// Execute a scenario through the real protocol stack. The first
/// failing action aborts the run, naming its index.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    if scenario.version != SCENARIO_VERSION {
        return Err(SimError::Version(scenario.version));
    }
    let mut runner = Runner {
        node: Node::new(scenario.config.protocol()),
        config: scenario.config.clone(),
        actors: BTreeMap::new(),
        events: BTreeMap::new(),
        markets: BTreeMap::new(),
        market_labels: BTreeMap::new(),
        desks: BTreeMap::new(),
        price_history: BTreeMap::new(),
        consensus: Vec::new(),
        feed_decisions: Vec::new(),
    };

    // Genesis: all allocations in block 0, where reputation minting is
    // allowed.
    let mut genesis = Vec::new();
    for (index, alloc) in scenario.genesis.iter().enumerate() {
        let address = runner.actor(&alloc.actor);
        let tx = runner
            .node
            .faucet(&address, alloc.units, alloc.value)
            .map_err(|e| SimError::Genesis { index, message: e.to_string() })?;
        genesis.push(tx);
    }
    let (_, rejected) = runner.node.ledger.produce_block(genesis);
    if let Some((_, e)) = rejected.into_iter().next() {
        return Err(SimError::Genesis { index: 0, message: e.to_string() });
    }

    for (index, action) in scenario.actions.iter().enumerate() {
        runner.step(action).map_err(|message| SimError::Action {
            index,
            kind: action.kind().to_string(),
            message,
        })?;
    }

    let block_log = runner.node.ledger.block_log();
    let mut final_balances = BTreeMap::new();
    for (label, address) in &runner.actors {
        let mut per_unit = BTreeMap::new();
        for units in [UnitKind::Bitcoin, UnitKind::Shares, UnitKind::Reputation] {
            let balance = runner.node.ledger.balance(address, units);
            if !balance.is_zero() {
                per_unit.insert(units.to_string(), balance);
            }
        }
        final_balances.insert(label.clone(), per_unit);
    }
    let supply = |units: UnitKind| -> Amount {
        runner
            .node
            .ledger
            .utxos()
            .values()
            .filter(|o| o.units == units)
            .map(|o| o.value)
            .sum()
    };
    let report = RunReport {
        scenario: scenario.name.clone(),
        blocks: runner.node.ledger.height(),
        actions_executed: scenario.actions.len(),
        final_balances,
        events: runner.events.iter().map(|(l, id)| (l.clone(), id.to_hex())).collect(),
        markets: runner.markets.iter().map(|(l, id)| (l.clone(), id.to_hex())).collect(),
        price_history: runner.price_history,
        consensus: runner.consensus,
        feed_decisions: runner.feed_decisions,
        conservation: Conservation {
            bitcoin_supply: supply(UnitKind::Bitcoin),
            reputation_supply: supply(UnitKind::Reputation),
            shares_outstanding: supply(UnitKind::Shares),
            utxo_hash: runner.node.ledger.utxo_hash().to_hex(),
            block_log_hash: crypto::hash160(block_log.as_bytes()).to_hex(),
        },
    };
    let feed_logs = runner
        .desks
        .iter()
        .map(|(branch, desk)| (branch.clone(), desk.log_lines()))
        .collect();
    Ok(RunOutput { report, block_log, feed_logs, feed_desks: runner.desks, node: runner.node })
}

/// Outcome of revalidating a block log from genesis.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub blocks: u64,
    pub utxo_hash: String,
    pub block_log_hash: String,
}

/// Replay a block log through full validation: every script is
/// re-executed (consensus included) and every conservation rule
/// rechecked. The first divergence is reported as the error.
pub fn verify(chain: ChainConfig, log: &str) -> Result<VerifyReport, String> {
    let ledger = Ledger::replay(chain, log).map_err(|e| e.to_string())?;
    Ok(VerifyReport {
        blocks: ledger.height(),
        utxo_hash: ledger.utxo_hash().to_hex(),
        block_log_hash: crypto::hash160(log.as_bytes()).to_hex(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenario_yields_genesis_only_chain() {
        let scenario = Scenario::from_json(r#"{"version": 1, "name": "empty"}"#).unwrap();
        let output = run(&scenario).unwrap();
        assert_eq!(output.report.blocks, 1);
        assert!(output.report.final_balances.is_empty());
        assert!(output.report.consensus.is_empty());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        assert!(matches!(
            Scenario::from_json(r#"{"version": 2}"#),
            Err(SimError::Version(2))
        ));
    }

    #[test]
    fn failing_action_names_its_index() {
        let scenario = Scenario::from_json(
            r#"{
                "version": 1,
                "genesis": [{"actor": "joe", "units": "bitcoin", "value": 1}],
                "actions": [
                    {"action": "transfer", "from": "joe", "to": "ann", "units": "bitcoin", "value": 0.5},
                    {"action": "transfer", "from": "joe", "to": "ann", "units": "bitcoin", "value": 100}
                ]
            }"#,
        )
        .unwrap();
        match run(&scenario) {
            Err(SimError::Action { index: 1, kind, .. }) => assert_eq!(kind, "transfer"),
            Err(other) => panic!("expected action error at index 1, got {other}"),
            Ok(_) => panic!("expected the second transfer to fail"),
        }
    }

    #[test]
    fn run_is_deterministic_and_verifiable() {
        let scenario = Scenario::from_json(
            r#"{
                "version": 1,
                "name": "small trade",
                "genesis": [
                    {"actor": "joe", "units": "bitcoin", "value": 100},
                    {"actor": "paul", "units": "bitcoin", "value": 50}
                ],
                "actions": [
                    {"action": "create-event", "actor": "joe", "label": "e", "description": "x", "branch": "b", "kind": "binary", "expires_in": 50},
                    {"action": "create-market", "actor": "joe", "label": "m", "title": "x", "events": ["e"], "loss_limit": 10.0, "trading_fee": 0.0},
                    {"action": "buy", "actor": "paul", "event": "e", "outcome": 1, "shares": 2}
                ]
            }"#,
        )
        .unwrap();
        let a = run(&scenario).unwrap();
        let b = run(&scenario).unwrap();
        assert_eq!(a.block_log, b.block_log);
        assert_eq!(a.report.conservation.block_log_hash, b.report.conservation.block_log_hash);

        let verified = verify(scenario.config.protocol().chain, &a.block_log).unwrap();
        assert_eq!(verified.utxo_hash, a.report.conservation.utxo_hash);

        // Price history recorded the creation point and the trade.
        assert_eq!(a.report.price_history["m"].len(), 2);
    }
}
