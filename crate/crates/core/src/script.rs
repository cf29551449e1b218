//! Stack-based script interpreter.
//!
//! An unlocking script runs first, then the locking script, on a shared
//! stack of byte strings. Spending succeeds iff execution completes with a
//! truthy top-of-stack and no VERIFY-class failure. Besides the standard
//! pay-to-hash opcodes, the protocol opcodes validate market structure,
//! unit tags, report integrity, and the consensus computation itself.
//!
//! Script text format: whitespace-separated tokens, `OP_*` for opcodes and
//! `<hex>` for data pushes.

use crate::consensus::{self, ConsensusResult, OutcomeSpec, ReportMatrix};
use crate::crypto::{self, Hash160};
use crate::tx::{canonical_json, EventPayload, MarketPayload, OutPoint, Transaction, TxInput, TxOutput, TxType};
use crate::units::{Amount, UnitKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Maximum items on the execution stack.
pub const MAX_STACK_DEPTH: usize = 128;
/// Maximum size of a single stack item in bytes. Large payloads (report
/// matrices) travel in the transaction input and appear on the stack only
/// as hash-160 commitments.
pub const MAX_ITEM_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Dup,
    Hash160,
    EqualVerify,
    CheckSig,
    MarketCheck,
    EventLookup,
    IsBitcoin,
    IsShares,
    DataCheck,
    Consensus,
    PcaCheck,
}

impl Opcode {
    pub fn name(self) -> &'static str {
        match self {
            Opcode::Dup => "OP_DUP",
            Opcode::Hash160 => "OP_HASH160",
            Opcode::EqualVerify => "OP_EQUALVERIFY",
            Opcode::CheckSig => "OP_CHECKSIG",
            Opcode::MarketCheck => "OP_MARKETCHECK",
            Opcode::EventLookup => "OP_EVENTLOOKUP",
            Opcode::IsBitcoin => "OP_ISBITCOIN",
            Opcode::IsShares => "OP_ISSHARES",
            Opcode::DataCheck => "OP_DATACHECK",
            Opcode::Consensus => "OP_CONSENSUS",
            Opcode::PcaCheck => "OP_PCACHECK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instr {
    Push(Vec<u8>),
    Op(Opcode),
    /// Preserved verbatim so that unknown opcodes fail at execution, not
    /// at parse time (closed opcode set).
    Unknown(String),
}

/// A script is pure data: an ordered list of instructions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Script(pub Vec<Instr>);

impl Script {
    pub fn push(data: impl Into<Vec<u8>>) -> Instr {
        Instr::Push(data.into())
    }

    /// Standard pay-to-pubkey-hash locking script.
    pub fn p2pkh_lock(pubkey_hash: Hash160) -> Script {
        Script(vec![
            Instr::Op(Opcode::Dup),
            Instr::Op(Opcode::Hash160),
            Instr::Push(pubkey_hash.0.to_vec()),
            Instr::Op(Opcode::EqualVerify),
            Instr::Op(Opcode::CheckSig),
        ])
    }

    /// Matching unlocking script: `<sig> <pubkey>`.
    pub fn p2pkh_unlock(signature: &[u8], pubkey: &[u8]) -> Script {
        Script(vec![Instr::Push(signature.to_vec()), Instr::Push(pubkey.to_vec())])
    }

    /// Lock keyed to an event ID, spendable by supplying market and event
    /// data: `OP_DUP OP_HASH160 <event hash> OP_EQUALVERIFY OP_MARKETCHECK`.
    pub fn event_lock(event_id: Hash160) -> Script {
        Script(vec![
            Instr::Op(Opcode::Dup),
            Instr::Op(Opcode::Hash160),
            Instr::Push(event_id.0.to_vec()),
            Instr::Op(Opcode::EqualVerify),
            Instr::Op(Opcode::MarketCheck),
        ])
    }

    /// CreateMarket output lock. The market pool (bitcoin) output takes the
    /// OP_ISSHARES variant, the share pools OP_ISBITCOIN: each pool is
    /// spent by trades bringing in the opposite unit.
    pub fn market_output_lock(incoming: UnitKind) -> Script {
        let guard = match incoming {
            UnitKind::Bitcoin => Opcode::IsBitcoin,
            _ => Opcode::IsShares,
        };
        Script(vec![
            Instr::Op(Opcode::Dup),
            Instr::Op(Opcode::Hash160),
            Instr::Op(Opcode::EventLookup),
            Instr::Op(guard),
            Instr::Op(Opcode::MarketCheck),
        ])
    }

    /// Unlock for market-owned outputs: `<market hash> <market data>
    /// <event data>`, where the data pushes are the canonical id-less
    /// serializations.
    pub fn market_unlock(market: &MarketPayload, event: &EventPayload) -> Script {
        Script(vec![
            Instr::Push(market.id.0.to_vec()),
            Instr::Push(crate::tx::canonical_without_id(market)),
            Instr::Push(crate::tx::canonical_without_id(event)),
        ])
    }

    /// Report output lock: identity prefix plus the consensus pipeline.
    pub fn report_lock(reporter_hash: Hash160) -> Script {
        Script(vec![
            Instr::Op(Opcode::Dup),
            Instr::Op(Opcode::Hash160),
            Instr::Push(reporter_hash.0.to_vec()),
            Instr::Op(Opcode::EqualVerify),
            Instr::Op(Opcode::DataCheck),
            Instr::Op(Opcode::Consensus),
            Instr::Op(Opcode::PcaCheck),
            Instr::Op(Opcode::EqualVerify),
        ])
    }

    /// Unlock for a Report output inside a Redemption: the stack carries
    /// hash-160 commitments to the matrices (the full payloads ride in the
    /// input's scriptSig fields) and the reporter's public key on top.
    pub fn report_unlock(matrix_hash: Hash160, centered_hash: Hash160, pubkey: &[u8]) -> Script {
        Script(vec![
            Instr::Push(matrix_hash.0.to_vec()),
            Instr::Push(centered_hash.0.to_vec()),
            Instr::Push(pubkey.to_vec()),
        ])
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for instr in &self.0 {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            match instr {
                Instr::Push(data) => write!(f, "<{}>", hex::encode(data))?,
                Instr::Op(op) => write!(f, "{}", op.name())?,
                Instr::Unknown(name) => write!(f, "{name}")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid script token: {0}")]
pub struct ParseScriptError(pub String);

impl FromStr for Script {
    type Err = ParseScriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut instrs = Vec::new();
        for token in s.split_whitespace() {
            if let Some(inner) = token.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
                let data = hex::decode(inner).map_err(|_| ParseScriptError(token.to_string()))?;
                instrs.push(Instr::Push(data));
            } else if token.starts_with("OP_") {
                let op = match token {
                    "OP_DUP" => Some(Opcode::Dup),
                    "OP_HASH160" => Some(Opcode::Hash160),
                    "OP_EQUALVERIFY" => Some(Opcode::EqualVerify),
                    "OP_CHECKSIG" => Some(Opcode::CheckSig),
                    "OP_MARKETCHECK" => Some(Opcode::MarketCheck),
                    "OP_EVENTLOOKUP" => Some(Opcode::EventLookup),
                    "OP_ISBITCOIN" => Some(Opcode::IsBitcoin),
                    "OP_ISSHARES" => Some(Opcode::IsShares),
                    // OP_CHECKDATA appears as a variant spelling of the
                    // same opcode; accepted as an alias.
                    "OP_DATACHECK" | "OP_CHECKDATA" => Some(Opcode::DataCheck),
                    "OP_CONSENSUS" => Some(Opcode::Consensus),
                    "OP_PCACHECK" => Some(Opcode::PcaCheck),
                    _ => None,
                };
                instrs.push(match op {
                    Some(op) => Instr::Op(op),
                    None => Instr::Unknown(token.to_string()),
                });
            } else {
                return Err(ParseScriptError(token.to_string()));
            }
        }
        Ok(Script(instrs))
    }
}

impl Serialize for Script {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Enumerated execution failures.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VmError {
    #[error("stack underflow")]
    Underflow,
    #[error("stack depth limit exceeded")]
    StackOverflow,
    #[error("stack item exceeds size limit")]
    ItemTooLarge,
    #[error("unknown opcode {0}")]
    UnknownOpcode(String),
    #[error("verify failed: {0}")]
    VerifyFailed(String),
    #[error("lookup miss: {0}")]
    LookupMiss(String),
    #[error("malformed data: {0}")]
    BadEncoding(String),
    #[error("script finished with a false or empty top of stack")]
    NotTruthy,
}

/// Read-only ledger lookups the protocol opcodes need.
pub trait LedgerServices {
    /// The market owning a given unspent output, if any.
    fn market_of_output(&self, outpoint: OutPoint) -> Option<MarketPayload>;
    fn event(&self, id: Hash160) -> Option<EventPayload>;
    /// Current reputation balance of an address.
    fn reputation_balance(&self, address: &str) -> Amount;
    /// Outcome resolution specs for the named events, in order.
    fn outcome_specs(&self, events: &[String]) -> Result<Vec<OutcomeSpec>, String>;
    /// Run the consensus pipeline on a report matrix.
    fn run_consensus(&self, matrix: &ReportMatrix) -> Result<ConsensusResult, String>;
}

/// Everything one script execution can see.
pub struct ExecContext<'a> {
    pub tx: &'a Transaction,
    pub input_index: usize,
    /// The output being spent.
    pub prevout: &'a TxOutput,
    pub outpoint: Option<OutPoint>,
    pub services: &'a dyn LedgerServices,
    /// Precomputed signature message for OP_CHECKSIG.
    pub sighash: Vec<u8>,
}

impl<'a> ExecContext<'a> {
    pub fn new(
        tx: &'a Transaction,
        input_index: usize,
        prevout: &'a TxOutput,
        services: &'a dyn LedgerServices,
    ) -> Self {
        let outpoint = tx.vin[input_index].outpoint();
        ExecContext { tx, input_index, prevout, outpoint, services, sighash: tx.sighash_message() }
    }

    fn input(&self) -> &TxInput {
        &self.tx.vin[self.input_index]
    }

    /// Unit-guard opcodes are waived inside a Redemption, which settles
    /// both sides of every outstanding wager at once.
    fn is_redemption(&self) -> bool {
        self.tx.tx_type == TxType::Redemption
    }
}

fn truthy(item: &[u8]) -> bool {
    item.iter().any(|b| *b != 0)
}

/// Run unlock then lock on a shared stack.
pub fn execute(unlock: &Script, lock: &Script, ctx: &ExecContext) -> Result<(), VmError> {
    let mut stack: Vec<Vec<u8>> = Vec::new();
    run(unlock, &mut stack, ctx)?;
    run(lock, &mut stack, ctx)?;
    match stack.last() {
        Some(top) if truthy(top) => Ok(()),
        _ => Err(VmError::NotTruthy),
    }
}

fn pop(stack: &mut Vec<Vec<u8>>) -> Result<Vec<u8>, VmError> {
    stack.pop().ok_or(VmError::Underflow)
}

fn push(stack: &mut Vec<Vec<u8>>, item: Vec<u8>) -> Result<(), VmError> {
    if item.len() > MAX_ITEM_SIZE {
        return Err(VmError::ItemTooLarge);
    }
    if stack.len() >= MAX_STACK_DEPTH {
        return Err(VmError::StackOverflow);
    }
    stack.push(item);
    Ok(())
}

/// Parse a canonical id-less market serialization, reinstating the ID from
/// the hash of the bytes.
fn parse_market_data(bytes: &[u8]) -> Result<MarketPayload, VmError> {
    let mut value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| VmError::BadEncoding(format!("market data: {e}")))?;
    let id = crypto::hash160(bytes);
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("id".into(), serde_json::Value::String(id.to_hex()));
    }
    serde_json::from_value(value).map_err(|e| VmError::BadEncoding(format!("market data: {e}")))
}

/// An event reference on the stack is either a bare 20-byte ID or the
/// canonical id-less event data, which hashes to its ID.
fn event_id_of(item: &[u8]) -> Hash160 {
    match Hash160::from_slice(item) {
        Ok(h) => h,
        Err(_) => crypto::hash160(item),
    }
}

/// Market context for the lookup opcodes: the serialized market data just
/// below the top of stack when the spender supplied it, otherwise the
/// market owning the spent output.
fn market_in_scope(stack: &[Vec<u8>], ctx: &ExecContext) -> Result<MarketPayload, VmError> {
    if stack.len() >= 2 {
        if let Ok(market) = parse_market_data(&stack[stack.len() - 2]) {
            return Ok(market);
        }
    }
    ctx.outpoint
        .and_then(|op| ctx.services.market_of_output(op))
        .ok_or_else(|| VmError::LookupMiss("no market in scope for spent output".into()))
}

fn run(script: &Script, stack: &mut Vec<Vec<u8>>, ctx: &ExecContext) -> Result<(), VmError> {
    for instr in &script.0 {
        match instr {
            Instr::Push(data) => push(stack, data.clone())?,
            Instr::Unknown(name) => return Err(VmError::UnknownOpcode(name.clone())),
            Instr::Op(op) => step(*op, stack, ctx)?,
        }
    }
    Ok(())
}

fn step(op: Opcode, stack: &mut Vec<Vec<u8>>, ctx: &ExecContext) -> Result<(), VmError> {
    match op {
        Opcode::Dup => {
            let top = stack.last().ok_or(VmError::Underflow)?.clone();
            push(stack, top)?;
        }
        Opcode::Hash160 => {
            let top = pop(stack)?;
            push(stack, crypto::hash160(&top).0.to_vec())?;
        }
        Opcode::EqualVerify => {
            let a = pop(stack)?;
            let b = pop(stack)?;
            if a != b {
                return Err(VmError::VerifyFailed("OP_EQUALVERIFY items differ".into()));
            }
        }
        Opcode::CheckSig => {
            let pubkey = pop(stack)?;
            let sig = pop(stack)?;
            let ok = crypto::verify(&ctx.sighash, &sig, &pubkey);
            push(stack, if ok { vec![1] } else { vec![] })?;
        }
        Opcode::EventLookup => {
            // The DUP/HASH160 prefix leaves hash(top) above the event
            // reference; consume and re-check it, then confirm the event
            // belongs to the market in scope.
            let digest = pop(stack)?;
            let reference = stack.last().ok_or(VmError::Underflow)?;
            if digest != crypto::hash160(reference).0 {
                return Err(VmError::VerifyFailed("event reference integrity".into()));
            }
            let event_id = event_id_of(reference);
            let market = market_in_scope(stack, ctx)?;
            if !market.events.contains(&event_id) {
                return Err(VmError::LookupMiss(format!(
                    "event {event_id} not in market {}",
                    market.id
                )));
            }
        }
        Opcode::IsBitcoin | Opcode::IsShares => {
            if ctx.is_redemption() {
                return Ok(());
            }
            // The counter-flow guard: taking shares out of the market
            // requires bitcoin coming in, and vice versa.
            let want = if op == Opcode::IsBitcoin { UnitKind::Bitcoin } else { UnitKind::Shares };
            let incoming = ctx
                .tx
                .vin
                .iter()
                .enumerate()
                .any(|(i, input)| i != ctx.input_index && input.units == want);
            if !incoming {
                return Err(VmError::VerifyFailed(format!(
                    "{} requires an incoming {want} input",
                    op.name()
                )));
            }
        }
        Opcode::MarketCheck => {
            if stack.len() >= 3 {
                // Spender supplied <market hash> <market data> <event data>.
                let event_data = pop(stack)?;
                let market_data = pop(stack)?;
                let market_hash = pop(stack)?;
                if crypto::hash160(&market_data).0 != *market_hash {
                    return Err(VmError::VerifyFailed("market data does not hash to market ID".into()));
                }
                let market = parse_market_data(&market_data)?;
                let event_id = event_id_of(&event_data);
                if !market.events.contains(&event_id) {
                    return Err(VmError::VerifyFailed(format!(
                        "event {event_id} not in market {}",
                        market.id
                    )));
                }
                push(stack, vec![1])?;
            } else if !stack.is_empty() {
                // Bare event reference: resolve the market from the spent
                // output and re-verify its ID from its own fields.
                let reference = pop(stack)?;
                let event_id = event_id_of(&reference);
                let market = ctx
                    .outpoint
                    .and_then(|op| ctx.services.market_of_output(op))
                    .ok_or_else(|| VmError::LookupMiss("spent output has no owning market".into()))?;
                if market.computed_id() != market.id {
                    return Err(VmError::VerifyFailed("market ID does not match its fields".into()));
                }
                if !market.events.contains(&event_id) {
                    return Err(VmError::VerifyFailed(format!(
                        "event {event_id} not in market {}",
                        market.id
                    )));
                }
                push(stack, vec![1])?;
            } else {
                return Err(VmError::Underflow);
            }
        }
        Opcode::DataCheck => {
            // Consumes the public key left by the identity prefix, then
            // checks the spent report payload against its committed ID.
            pop(stack)?;
            let report = ctx
                .prevout
                .report
                .as_ref()
                .ok_or_else(|| VmError::VerifyFailed("spent output carries no report".into()))?;
            if report.quorum.is_none() {
                return Err(VmError::BadEncoding("report payload missing quorum field".into()));
            }
            if report.computed_id() != report.id {
                return Err(VmError::VerifyFailed("report fields do not hash to report ID".into()));
            }
        }
        Opcode::Consensus => {
            let matrix = ctx
                .input()
                .report_matrix
                .as_ref()
                .ok_or_else(|| VmError::VerifyFailed("input carries no report matrix".into()))?;
            if stack.len() < 2 {
                return Err(VmError::Underflow);
            }
            let commitment = &stack[stack.len() - 2];
            if crypto::hash160(canonical_json(matrix).as_bytes()).0 != **commitment {
                return Err(VmError::VerifyFailed("report matrix commitment mismatch".into()));
            }
            let result = ctx
                .services
                .run_consensus(matrix)
                .map_err(|e| VmError::VerifyFailed(format!("consensus failed: {e}")))?;
            push(stack, canonical_json(&result).into_bytes())?;
        }
        Opcode::PcaCheck => {
            // Consumes the consensus result pushed by OP_CONSENSUS.
            pop(stack)?;
            let input = ctx.input();
            let matrix = input
                .report_matrix
                .as_ref()
                .ok_or_else(|| VmError::VerifyFailed("input carries no report matrix".into()))?;
            let supplied = input
                .centered_matrix
                .as_ref()
                .ok_or_else(|| VmError::VerifyFailed("input carries no centered matrix".into()))?;

            // Row weights must match the reporters' actual reputation.
            for (reporter, weight) in matrix.reporters.iter().zip(&matrix.weights) {
                let balance = ctx.services.reputation_balance(reporter).to_f64();
                if (balance - weight).abs() > 1e-6 {
                    return Err(VmError::VerifyFailed(format!(
                        "weight {weight} does not match reputation of {reporter}"
                    )));
                }
            }

            let specs = ctx
                .services
                .outcome_specs(&matrix.events)
                .map_err(VmError::LookupMiss)?;
            let centered = consensus::center(matrix, &specs)
                .map_err(|e| VmError::VerifyFailed(format!("centering failed: {e}")))?;
            if supplied.len() != centered.values.nrows()
                || supplied.iter().any(|r| r.len() != centered.values.ncols())
            {
                return Err(VmError::VerifyFailed("centered matrix has wrong shape".into()));
            }
            for (i, row) in supplied.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if (v - centered.values[(i, j)]).abs() > 1e-9 {
                        return Err(VmError::VerifyFailed(format!(
                            "centered matrix entry ({i},{j}) off by more than 1e-9"
                        )));
                    }
                }
            }

            // Re-run the decomposition and confirm it reconstructs the
            // covariance.
            let cov = consensus::weighted_covariance(&centered.values, &matrix.weights)
                .map_err(|e| VmError::VerifyFailed(format!("covariance failed: {e}")))?;
            let (values, vectors) = consensus::decompose(&cov)
                .map_err(|e| VmError::VerifyFailed(format!("decomposition failed: {e}")))?;
            let recon = &vectors * nalgebra::DMatrix::from_diagonal(&values) * vectors.transpose();
            let err = (&recon - &cov).amax();
            if err > 1e-10 {
                return Err(VmError::VerifyFailed(format!(
                    "eigendecomposition reconstruction error {err:e} exceeds 1e-10"
                )));
            }

            // Rehash the supplied payload; the final OP_EQUALVERIFY binds
            // it to the commitment the unlocking script pushed.
            push(stack, crypto::hash160(canonical_json(supplied).as_bytes()).0.to_vec())?;
        }
    }
    Ok(())
}
