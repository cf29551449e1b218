//! Transaction and payload types with a canonical JSON form.
//!
//! Transactions serialize to a rawtransaction-like JSON format: top-level
//! `type`, `vin[].{n,value,units,scriptSig}`, `vout[].{n,value,units,script}`
//! plus nested `event`, `report`, and `quorum` objects. The canonical form
//! used for hashing is this JSON with object keys in lexicographic order
//! and amounts printed with exactly eight decimals; identifiers are the
//! hash-160 of the canonical serialization with the `id` field removed.

use crate::consensus::ReportMatrix;
use crate::crypto::{self, encode_address, Hash160, VERSION_PROTOCOL};
use crate::script::Script;
use crate::units::{Amount, UnitKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxType {
    CreateEvent,
    CreateMarket,
    Buy,
    Sell,
    Report,
    Redemption,
    Transfer,
    Faucet,
}

impl std::fmt::Display for TxType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Outcome identifier on a shares value: booleans for binary events;
/// categorical and scalar outcomes use indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(untagged)]
pub enum OutcomeTag {
    Bool(bool),
    Index(u64),
}

// Manual impl: untagged derives buffer their input, which breaks under
// arbitrary-precision JSON numbers.
impl<'de> Deserialize<'de> for OutcomeTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Bool(b) => Ok(OutcomeTag::Bool(b)),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(OutcomeTag::Index)
                .ok_or_else(|| D::Error::custom("outcome index must be a non-negative integer")),
            other => Err(D::Error::custom(format!("invalid outcome tag: {other}"))),
        }
    }
}

impl OutcomeTag {
    /// Position of this outcome within its event's outcome list.
    pub fn index(self) -> usize {
        match self {
            OutcomeTag::Bool(true) => 1,
            OutcomeTag::Bool(false) => 0,
            OutcomeTag::Index(i) => i as usize,
        }
    }
}

/// Event metadata carried by a CreateEvent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    pub id: Hash160,
    pub description: String,
    pub branch: String,
    pub is_binary: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<u32>,
    pub valid_range: [f64; 2],
    pub expiration: u64,
    pub creator: String,
}

impl EventPayload {
    /// Number of outcomes this event contributes to its market.
    pub fn outcome_count(&self) -> usize {
        if let Some(labels) = &self.labels {
            labels.len()
        } else if let Some(bins) = self.bins {
            bins as usize
        } else {
            2
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.bins.is_some()
    }

    /// Base-58 event address derived from the event ID.
    pub fn address(&self) -> String {
        encode_address(self.id, VERSION_PROTOCOL)
    }

    /// Recompute the ID from the canonical id-less serialization.
    pub fn computed_id(&self) -> Hash160 {
        crypto::hash160(&canonical_without_id(self))
    }
}

/// Market metadata assembled from a CreateMarket transaction's top-level
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPayload {
    pub id: Hash160,
    pub title: String,
    pub events: Vec<Hash160>,
    pub loss_limit: f64,
    #[serde(rename = "tradingFee")]
    pub trading_fee: f64,
    pub funding: Amount,
    pub creator: String,
}

impl MarketPayload {
    pub fn computed_id(&self) -> Hash160 {
        crypto::hash160(&canonical_without_id(self))
    }

    /// The market pool address, derived from the hash of the market's data
    /// fields.
    pub fn pool_address(&self) -> String {
        encode_address(self.id, VERSION_PROTOCOL)
    }
}

/// Quorum snapshot embedded in a Report output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumStatus {
    pub matured: bool,
    pub reported: u32,
    pub required: u32,
    pub met: bool,
}

/// Report payload: salted commitments per event, revealed off-chain during
/// the reporting window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub id: Hash160,
    /// event id (hex) -> hash-160 commitment (hex) over value and salt.
    pub outcomes: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quorum: Option<QuorumStatus>,
}

impl ReportPayload {
    pub fn computed_id(&self) -> Hash160 {
        crypto::hash160(&canonical_without_id(self))
    }
}

/// The `event` key on an output: the full payload on CreateEvent outputs,
/// a bare hash reference elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EventField {
    Ref(Hash160),
    Payload(Box<EventPayload>),
}

impl<'de> Deserialize<'de> for EventField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => {
                Hash160::from_hex(&s).map(EventField::Ref).map_err(D::Error::custom)
            }
            other => serde_json::from_value(other)
                .map(|p| EventField::Payload(Box::new(p)))
                .map_err(D::Error::custom),
        }
    }
}

impl EventField {
    pub fn id(&self) -> Hash160 {
        match self {
            EventField::Ref(h) => *h,
            EventField::Payload(p) => p.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxInput {
    pub n: u32,
    /// Outpoint being spent. Faucet transactions have no outpoints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub txid: Option<Hash160>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vout: Option<u32>,
    pub value: Amount,
    pub units: UnitKind,
    #[serde(rename = "scriptSig")]
    pub script_sig: Script,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeTag>,
    #[serde(rename = "tradingFee", skip_serializing_if = "Option::is_none")]
    pub trading_fee: Option<f64>,
    /// Assembled report matrix, written into the redeeming input once the
    /// reporting window closes.
    #[serde(rename = "reportMatrix", skip_serializing_if = "Option::is_none")]
    pub report_matrix: Option<ReportMatrix>,
    #[serde(rename = "centeredReportMatrix", skip_serializing_if = "Option::is_none")]
    pub centered_matrix: Option<Vec<Vec<f64>>>,
}

impl TxInput {
    pub fn outpoint(&self) -> Option<OutPoint> {
        Some(OutPoint { txid: self.txid?, n: self.vout? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxOutput {
    pub n: u32,
    pub value: Amount,
    pub units: UnitKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<EventField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeTag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    pub script: Script,
}

/// Reference to a transaction output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Hash160,
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    #[serde(rename = "type")]
    pub tx_type: TxType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_limit: Option<f64>,
    /// Target event for Buy/Sell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<Hash160>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeTag>,
    /// Shares traded (Buy/Sell).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amount: Option<Amount>,
    /// Quoted total bitcoin cost for the trade.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price: Option<Amount>,
    /// Total trading fee charged on top of the quote.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fee: Option<Amount>,
    pub vin: Vec<TxInput>,
    pub vout: Vec<TxOutput>,
    /// Market ID (CreateMarket).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<Hash160>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Hash160>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub funding: Option<Amount>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub creator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
}

impl Transaction {
    /// Transaction ID: hash-160 of the canonical serialization.
    pub fn txid(&self) -> Hash160 {
        crypto::hash160(canonical_json(self).as_bytes())
    }

    /// Bytes every input signature commits to: the canonical serialization
    /// with all unlocking scripts and late-bound matrix payloads cleared.
    pub fn sighash_message(&self) -> Vec<u8> {
        let mut blank = self.clone();
        for input in &mut blank.vin {
            input.script_sig = Script::default();
            input.report_matrix = None;
            input.centered_matrix = None;
        }
        canonical_json(&blank).into_bytes()
    }

    /// Market payload assembled from a CreateMarket transaction's fields.
    pub fn market_payload(&self) -> Option<MarketPayload> {
        if self.tx_type != TxType::CreateMarket {
            return None;
        }
        Some(MarketPayload {
            id: self.id?,
            title: self.title.clone()?,
            events: self.events.clone()?,
            loss_limit: self.loss_limit?,
            trading_fee: self.vin.first()?.trading_fee?,
            funding: self.funding?,
            creator: self.creator.clone()?,
        })
    }
}

/// Canonical JSON: serde_json's value model already stores object keys in
/// lexicographic order, so a round trip through `Value` normalizes key
/// order; amounts carry their own fixed 8-decimal formatting.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("canonical serialization cannot fail");
    serde_json::to_string(&v).expect("canonical serialization cannot fail")
}

/// Canonical JSON with the `id` key removed; identifiers are the hash-160
/// of this form.
pub fn canonical_without_id<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(value).expect("canonical serialization cannot fail");
    if let serde_json::Value::Object(map) = &mut v {
        map.remove("id");
    }
    serde_json::to_string(&v)
        .expect("canonical serialization cannot fail")
        .into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::UnitKind;

    fn sample_event() -> EventPayload {
        let mut event = EventPayload {
            id: Hash160([0u8; 20]),
            description: "Hillary Clinton wins the 2016 U.S. Presidential Election.".into(),
            branch: "politics".into(),
            is_binary: true,
            labels: None,
            bins: None,
            valid_range: [0.0, 1.0],
            expiration: 1_478_329_200,
            creator: "creator-address".into(),
        };
        event.id = event.computed_id();
        event
    }

    #[test]
    fn event_id_is_stable_under_round_trip() {
        let event = sample_event();
        let json = canonical_json(&event);
        let back: EventPayload = serde_json::from_str(&json).unwrap();
        assert_eq!(back.computed_id(), event.id);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let event = sample_event();
        let json = canonical_json(&event);
        let branch_pos = json.find("\"branch\"").unwrap();
        let creator_pos = json.find("\"creator\"").unwrap();
        let id_pos = json.find("\"id\"").unwrap();
        assert!(branch_pos < creator_pos && creator_pos < id_pos);
    }

    #[test]
    fn id_excluded_from_identifier_hash() {
        let mut event = sample_event();
        let id1 = event.computed_id();
        event.id = Hash160([9u8; 20]);
        assert_eq!(event.computed_id(), id1);
        event.description.push('!');
        assert_ne!(event.computed_id(), id1);
    }

    #[test]
    fn amounts_serialize_with_eight_decimals() {
        let out = TxOutput {
            n: 0,
            value: Amount::from_scaled(1_000_000),
            units: UnitKind::Bitcoin,
            event: None,
            branch: None,
            outcome: None,
            report: None,
            address: None,
            script: Script::default(),
        };
        let json = canonical_json(&out);
        assert!(json.contains("\"value\":0.01000000"), "{json}");
        assert!(json.contains("\"units\":\"bitcoin\""));
    }

    #[test]
    fn outcome_tag_round_trips_bool_and_index() {
        let b: OutcomeTag = serde_json::from_str("true").unwrap();
        assert_eq!(b, OutcomeTag::Bool(true));
        assert_eq!(b.index(), 1);
        let i: OutcomeTag = serde_json::from_str("3").unwrap();
        assert_eq!(i.index(), 3);
    }

    #[test]
    fn sighash_ignores_unlock_scripts() {
        let mut tx = Transaction {
            tx_type: TxType::Transfer,
            loss_limit: None,
            event: None,
            outcome: None,
            amount: None,
            price: None,
            fee: None,
            vin: vec![TxInput {
                n: 0,
                txid: Some(Hash160([1u8; 20])),
                vout: Some(0),
                value: Amount::from_whole(1),
                units: UnitKind::Reputation,
                script_sig: Script::default(),
                outcome: None,
                trading_fee: None,
                report_matrix: None,
                centered_matrix: None,
            }],
            vout: vec![],
            id: None,
            title: None,
            events: None,
            funding: None,
            creator: None,
            branch: None,
        };
        let before = tx.sighash_message();
        tx.vin[0].script_sig = "<ab> <cd>".parse().unwrap();
        assert_eq!(tx.sighash_message(), before);
        assert_ne!(canonical_json(&tx), String::from_utf8(before).unwrap());
    }
}
