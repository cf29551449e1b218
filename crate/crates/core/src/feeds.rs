//! Third-party outcome feeds.
//!
//! Reputation holders query pluggable sources, wrap what they see in a
//! signed observation weighted by their reputation, and the weighted
//! tally either auto-resolves an event (modal share at or above the
//! threshold) or falls back to a manual vote. Any participant can also
//! force the manual path by paying a challenge fee, which is escrowed
//! for the reporters.

use crate::crypto::{self, Hash160, KeyPair};
use crate::units::Amount;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error("threshold must be in (0.5, 1], got {0}")]
    BadThreshold(f64),
    #[error("challenge fee {have} is below the configured minimum {need}")]
    InsufficientFee { need: Amount, have: Amount },
    #[error("event {0} has already been redeemed")]
    AlreadyRedeemed(Hash160),
    #[error("source {0} is unreachable: {1}")]
    Unreachable(String, String),
    #[error("feed file {0} is malformed: {1}")]
    BadFeedFile(String, String),
    #[error("observation log line {0} is malformed: {1}")]
    BadLogLine(usize, String),
}

/// Where a source's answers come from. The local-file and inline forms
/// are deterministic; the HTTP form is a descriptor only and is treated
/// as unreachable here, so holders pointed at one simply abstain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "kebab-case")]
pub enum FeedTransport {
    /// JSON file mapping event-id hex to a numeric outcome.
    LocalFile { path: PathBuf },
    /// Inline event-id hex to outcome map, for scenarios and tests.
    Inline { values: BTreeMap<String, f64> },
    /// Endpoint descriptor; never queried.
    Http { url: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedSource {
    pub id: String,
    #[serde(flatten)]
    pub transport: FeedTransport,
}

impl FeedSource {
    /// The source's reported outcome for one event, or None if the
    /// source does not cover it.
    pub fn lookup(&self, event: Hash160) -> Result<Option<f64>, FeedError> {
        let key = event.to_hex();
        match &self.transport {
            FeedTransport::Inline { values } => Ok(values.get(&key).copied()),
            FeedTransport::LocalFile { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    FeedError::Unreachable(self.id.clone(), e.to_string())
                })?;
                let values: BTreeMap<String, f64> = serde_json::from_str(&text)
                    .map_err(|e| FeedError::BadFeedFile(path.display().to_string(), e.to_string()))?;
                Ok(values.get(&key).copied())
            }
            FeedTransport::Http { url } => {
                Err(FeedError::Unreachable(self.id.clone(), format!("http descriptor only: {url}")))
            }
        }
    }
}

/// One holder's signed answer for one event. The signature covers the
/// holder, event, and value; the public key ties it to the holder's
/// address.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub holder: String,
    pub event: Hash160,
    pub value: f64,
    pub weight: Amount,
    pub signature: String,
    #[serde(rename = "publicKey")]
    pub public_key: String,
}

impl Observation {
    fn message(holder: &str, event: Hash160, value: f64) -> Vec<u8> {
        format!("feed|{holder}|{event}|{}", crate::consensus::round_1e9(value)).into_bytes()
    }

    /// Sign an observation. The weight must be the holder's reputation
    /// at the snapshot block.
    pub fn sign(key: &KeyPair, event: Hash160, value: f64, weight: Amount) -> Observation {
        let holder = key.address();
        let value = crate::consensus::round_1e9(value);
        let sig = key.sign(&Observation::message(&holder, event, value));
        Observation {
            holder,
            event,
            value,
            weight,
            signature: hex::encode(sig),
            public_key: hex::encode(key.public_key()),
        }
    }

    /// Check the signature against the embedded public key and the
    /// public key against the holder address.
    pub fn verify(&self) -> bool {
        let Ok(pubkey) = hex::decode(&self.public_key) else {
            return false;
        };
        let Ok(sig) = hex::decode(&self.signature) else {
            return false;
        };
        if crypto::encode_address(crypto::hash160(&pubkey), crypto::VERSION_USER) != self.holder {
            return false;
        }
        crypto::verify(&Observation::message(&self.holder, self.event, self.value), &sig, &pubkey)
    }
}

/// A reputation holder and the source they query.
pub struct Querier {
    pub key: KeyPair,
    pub source: FeedSource,
}

/// Query each holder's source for every event and return the signed
/// observations. Holders whose source is unreachable, or that hold no
/// reputation, abstain; the reasons are returned alongside.
pub fn collect(
    queriers: &[Querier],
    events: &[Hash160],
    weight_of: impl Fn(&str) -> Amount,
) -> (Vec<Observation>, Vec<String>) {
    let mut observations = Vec::new();
    let mut notes = Vec::new();
    for querier in queriers {
        let holder = querier.key.address();
        let weight = weight_of(&holder);
        if weight.is_zero() {
            notes.push(format!("{holder}: no reputation, abstaining"));
            continue;
        }
        for &event in events {
            match querier.source.lookup(event) {
                Ok(Some(value)) => {
                    observations.push(Observation::sign(&querier.key, event, value, weight));
                }
                Ok(None) => notes.push(format!(
                    "{holder}: source {} does not cover event {event}",
                    querier.source.id
                )),
                Err(e) => {
                    notes.push(format!("{holder}: abstaining, {e}"));
                    break;
                }
            }
        }
    }
    (observations, notes)
}

/// What the tally decided for one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "kebab-case")]
pub enum FeedDecision {
    Resolved { value: f64 },
    VoteRequired,
}

/// The weighted tally for one event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedAggregate {
    pub event: Hash160,
    /// Outcome value -> total weight behind it, heaviest first.
    pub tallies: Vec<(f64, f64)>,
    pub total_weight: f64,
    pub threshold: f64,
    pub decision: FeedDecision,
    /// Observations dropped for bad signatures (holder names).
    pub discarded: Vec<String>,
}

/// Tolerance when comparing the modal weight share to the threshold, so
/// that rescaling all weights by a common factor cannot flip a decision
/// through floating-point rounding.
const SHARE_EPSILON: f64 = 1e-12;

/// Tally the observations for one event. Forged signatures are
/// discarded (and named in the result); zero surviving weight means a
/// manual vote.
pub fn aggregate(
    event: Hash160,
    observations: &[Observation],
    threshold: f64,
) -> Result<FeedAggregate, FeedError> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(FeedError::BadThreshold(threshold));
    }
    let mut discarded = Vec::new();
    let mut by_value: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut total_weight = 0.0;
    for obs in observations.iter().filter(|o| o.event == event) {
        if !obs.verify() {
            discarded.push(obs.holder.clone());
            continue;
        }
        let value = crate::consensus::round_1e9(obs.value);
        let weight = obs.weight.to_f64();
        let slot = by_value.entry(format!("{value}")).or_insert((value, 0.0));
        slot.1 += weight;
        total_weight += weight;
    }
    let mut tallies: Vec<(f64, f64)> = by_value.into_values().collect();
    tallies.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.partial_cmp(&b.0).unwrap()));
    let decision = match tallies.first() {
        Some(&(value, weight)) if total_weight > 0.0 => {
            let share = weight / total_weight;
            // With θ = 1 any disagreement must force a vote, so unanimity
            // is tested exactly rather than through the epsilon.
            let met = if threshold >= 1.0 {
                weight == total_weight
            } else {
                share + SHARE_EPSILON >= threshold
            };
            if met {
                FeedDecision::Resolved { value }
            } else {
                FeedDecision::VoteRequired
            }
        }
        _ => FeedDecision::VoteRequired,
    };
    Ok(FeedAggregate { event, tallies, total_weight, threshold, decision, discarded })
}

/// Per-branch feed state: the observation log, decisions, and
/// challenges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedDesk {
    pub threshold: f64,
    pub challenge_fee: Amount,
    observations: Vec<Observation>,
    challenged: BTreeSet<Hash160>,
    /// Challenge fees collected, owed to the reporter fee pool.
    pub fee_pool: Amount,
}

impl FeedDesk {
    pub fn new(threshold: f64, challenge_fee: Amount) -> Result<Self, FeedError> {
        if !(threshold > 0.5 && threshold <= 1.0) {
            return Err(FeedError::BadThreshold(threshold));
        }
        Ok(FeedDesk {
            threshold,
            challenge_fee,
            observations: Vec::new(),
            challenged: BTreeSet::new(),
            fee_pool: Amount::ZERO,
        })
    }

    pub fn record(&mut self, observations: Vec<Observation>) {
        self.observations.extend(observations);
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Route an event to manual reporting for a fee. Rejected once the
    /// event is redeemed or if the fee is short.
    pub fn challenge(&mut self, event: Hash160, fee: Amount, redeemed: bool) -> Result<(), FeedError> {
        if redeemed {
            return Err(FeedError::AlreadyRedeemed(event));
        }
        if fee < self.challenge_fee {
            return Err(FeedError::InsufficientFee { need: self.challenge_fee, have: fee });
        }
        self.challenged.insert(event);
        self.fee_pool += fee;
        Ok(())
    }

    pub fn is_challenged(&self, event: Hash160) -> bool {
        self.challenged.contains(&event)
    }

    /// The standing decision for one event: a challenge overrides any
    /// feed resolution.
    pub fn decide(&self, event: Hash160) -> Result<FeedAggregate, FeedError> {
        let mut aggregate = aggregate(event, &self.observations, self.threshold)?;
        if self.challenged.contains(&event) {
            aggregate.decision = FeedDecision::VoteRequired;
        }
        Ok(aggregate)
    }

    /// JSON-lines observation log; `replay_log` reproduces the same
    /// decisions from it.
    pub fn log_lines(&self) -> String {
        let mut out = String::new();
        for obs in &self.observations {
            out.push_str(&serde_json::to_string(obs).expect("observations serialize"));
            out.push('\n');
        }
        out
    }

    pub fn replay_log(threshold: f64, challenge_fee: Amount, log: &str) -> Result<Self, FeedError> {
        let mut desk = FeedDesk::new(threshold, challenge_fee)?;
        for (i, line) in log.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let obs: Observation =
                serde_json::from_str(line).map_err(|e| FeedError::BadLogLine(i + 1, e.to_string()))?;
            desk.observations.push(obs);
        }
        Ok(desk)
    }
}

/// Bridge feed resolutions into settlement: a report matrix in which
/// every reputation holder unanimously reports the resolved values, so
/// the downstream consensus and payout paths are shared with manual
/// voting.
pub fn synthetic_matrix(
    holders: &[(String, Amount)],
    resolved: &BTreeMap<Hash160, f64>,
) -> crate::consensus::ReportMatrix {
    use crate::consensus::{ReportEntry, ReportMatrix};
    let events: Vec<String> = resolved.keys().map(|e| e.to_hex()).collect();
    let row: Vec<ReportEntry> = resolved
        .values()
        .map(|&v| ReportEntry::Value(crate::consensus::round_1e9(v)))
        .collect();
    ReportMatrix {
        reporters: holders.iter().map(|(a, _)| a.clone()).collect(),
        weights: holders.iter().map(|(_, w)| w.to_f64()).collect(),
        events,
        entries: vec![row; holders.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(v: &str) -> Amount {
        v.parse().unwrap()
    }

    fn inline_source(id: &str, event: Hash160, value: f64) -> FeedSource {
        FeedSource {
            id: id.into(),
            transport: FeedTransport::Inline { values: [(event.to_hex(), value)].into() },
        }
    }

    fn event_id(tag: &str) -> Hash160 {
        crypto::hash160(tag.as_bytes())
    }

    #[test]
    fn collect_signs_one_observation_per_holder_event() {
        let event = event_id("e1");
        let queriers: Vec<Querier> = ["a", "b", "c"]
            .iter()
            .map(|name| Querier {
                key: KeyPair::from_seed(name.as_bytes()),
                source: inline_source("s", event, 1.0),
            })
            .collect();
        let (obs, notes) = collect(&queriers, &[event], |_| rep("5"));
        assert_eq!(obs.len(), 3);
        assert!(notes.is_empty());
        assert!(obs.iter().all(|o| o.value == 1.0 && o.verify()));
    }

    #[test]
    fn unreachable_source_means_abstention() {
        let event = event_id("e1");
        let queriers = vec![
            Querier {
                key: KeyPair::from_seed(b"a"),
                source: inline_source("s", event, 1.0),
            },
            Querier {
                key: KeyPair::from_seed(b"b"),
                source: FeedSource {
                    id: "dead".into(),
                    transport: FeedTransport::Http { url: "https://example.invalid".into() },
                },
            },
            Querier {
                key: KeyPair::from_seed(b"c"),
                source: inline_source("s", event, 1.0),
            },
        ];
        let (obs, notes) = collect(&queriers, &[event], |_| rep("5"));
        assert_eq!(obs.len(), 2);
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("unreachable"));
    }

    #[test]
    fn missing_feed_file_means_abstention() {
        let event = event_id("e1");
        let queriers = vec![Querier {
            key: KeyPair::from_seed(b"a"),
            source: FeedSource {
                id: "f".into(),
                transport: FeedTransport::LocalFile { path: "/nonexistent/feed.json".into() },
            },
        }];
        let (obs, notes) = collect(&queriers, &[event], |_| rep("5"));
        assert!(obs.is_empty());
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn zero_reputation_holders_are_excluded() {
        let event = event_id("e1");
        let queriers = vec![Querier {
            key: KeyPair::from_seed(b"a"),
            source: inline_source("s", event, 1.0),
        }];
        let (obs, notes) = collect(&queriers, &[event], |_| Amount::ZERO);
        assert!(obs.is_empty());
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn forged_signature_is_discarded() {
        let event = event_id("e1");
        let key = KeyPair::from_seed(b"a");
        let good = Observation::sign(&key, event, 1.0, rep("10"));
        let mut forged = Observation::sign(&key, event, 0.0, rep("90"));
        // Tamper with the value after signing.
        forged.value = 1.0;
        let agg = aggregate(event, &[good, forged], 0.6).unwrap();
        assert_eq!(agg.discarded.len(), 1);
        assert_eq!(agg.total_weight, 10.0);
        assert_eq!(agg.decision, FeedDecision::Resolved { value: 1.0 });
    }

    #[test]
    fn threshold_ninety_five_boundary() {
        let event = event_id("e1");
        let yes = Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, rep("95"));
        let no = Observation::sign(&KeyPair::from_seed(b"b"), event, 0.0, rep("5"));
        let agg = aggregate(event, &[yes.clone(), no.clone()], 0.95).unwrap();
        assert_eq!(agg.decision, FeedDecision::Resolved { value: 1.0 });

        // 94.9 / 5.1 falls short of the same threshold.
        let yes = Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, rep("94.9"));
        let no2 = Observation::sign(&KeyPair::from_seed(b"b"), event, 0.0, rep("5.1"));
        let agg = aggregate(event, &[yes, no2], 0.95).unwrap();
        assert_eq!(agg.decision, FeedDecision::VoteRequired);
    }

    #[test]
    fn aggregation_is_weight_scale_invariant() {
        let event = event_id("e1");
        for scale in ["1", "7", "1000000"] {
            let scale: Amount = scale.parse().unwrap();
            let w = |base: &str| {
                Amount::from_f64_round(base.parse::<Amount>().unwrap().to_f64() * scale.to_f64())
            };
            let obs = vec![
                Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, w("95")),
                Observation::sign(&KeyPair::from_seed(b"b"), event, 0.0, w("5")),
            ];
            let agg = aggregate(event, &obs, 0.95).unwrap();
            assert_eq!(agg.decision, FeedDecision::Resolved { value: 1.0 }, "scale {scale}");
        }
    }

    #[test]
    fn unanimous_single_holder_resolves() {
        let event = event_id("e1");
        let obs = vec![Observation::sign(&KeyPair::from_seed(b"a"), event, 0.0, rep("1"))];
        let agg = aggregate(event, &obs, 0.95).unwrap();
        assert_eq!(agg.decision, FeedDecision::Resolved { value: 0.0 });
    }

    #[test]
    fn theta_one_any_disagreement_forces_vote() {
        let event = event_id("e1");
        let obs = vec![
            Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, rep("999999")),
            Observation::sign(&KeyPair::from_seed(b"b"), event, 0.0, rep("0.00000001")),
        ];
        let agg = aggregate(event, &obs, 1.0).unwrap();
        assert_eq!(agg.decision, FeedDecision::VoteRequired);

        let unanimous = vec![
            Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, rep("1")),
            Observation::sign(&KeyPair::from_seed(b"b"), event, 1.0, rep("1")),
        ];
        let agg = aggregate(event, &unanimous, 1.0).unwrap();
        assert_eq!(agg.decision, FeedDecision::Resolved { value: 1.0 });
    }

    #[test]
    fn zero_weight_means_vote_required() {
        let event = event_id("e1");
        let agg = aggregate(event, &[], 0.9).unwrap();
        assert_eq!(agg.decision, FeedDecision::VoteRequired);
    }

    #[test]
    fn bad_threshold_rejected() {
        let event = event_id("e1");
        assert!(aggregate(event, &[], 0.5).is_err());
        assert!(aggregate(event, &[], 1.01).is_err());
        assert!(FeedDesk::new(0.4, Amount::ZERO).is_err());
    }

    #[test]
    fn challenge_overrides_resolution_and_collects_fee() {
        let event = event_id("e1");
        let mut desk = FeedDesk::new(0.9, rep("0.5")).unwrap();
        desk.record(vec![Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, rep("10"))]);
        assert_eq!(desk.decide(event).unwrap().decision, FeedDecision::Resolved { value: 1.0 });

        assert!(matches!(
            desk.challenge(event, rep("0.1"), false),
            Err(FeedError::InsufficientFee { .. })
        ));
        desk.challenge(event, rep("0.5"), false).unwrap();
        assert_eq!(desk.decide(event).unwrap().decision, FeedDecision::VoteRequired);
        assert_eq!(desk.fee_pool, rep("0.5"));

        // Post-redemption challenges are rejected.
        assert!(matches!(
            desk.challenge(event, rep("0.5"), true),
            Err(FeedError::AlreadyRedeemed(_))
        ));
    }

    #[test]
    fn decisions_reproducible_from_log() {
        let event = event_id("e1");
        let mut desk = FeedDesk::new(0.95, Amount::ZERO).unwrap();
        desk.record(vec![
            Observation::sign(&KeyPair::from_seed(b"a"), event, 1.0, rep("95")),
            Observation::sign(&KeyPair::from_seed(b"b"), event, 0.0, rep("5")),
        ]);
        let log = desk.log_lines();
        let replayed = FeedDesk::replay_log(0.95, Amount::ZERO, &log).unwrap();
        assert_eq!(
            replayed.decide(event).unwrap().decision,
            desk.decide(event).unwrap().decision
        );
        // A tampered log line fails to parse or changes the signature check.
        let tampered = log.replace("\"value\":1.0", "\"value\":0.75");
        if let Ok(replayed) = FeedDesk::replay_log(0.95, Amount::ZERO, &tampered) {
            let agg = replayed.decide(event).unwrap();
            assert!(!agg.discarded.is_empty(), "tampered observation must be discarded");
        }
    }

    #[test]
    fn synthetic_matrix_is_unanimous() {
        let resolved: BTreeMap<Hash160, f64> = [(event_id("e1"), 1.0), (event_id("e2"), 0.0)].into();
        let holders = vec![("a".to_string(), rep("10")), ("b".to_string(), rep("42"))];
        let matrix = synthetic_matrix(&holders, &resolved);
        assert_eq!(matrix.reporters.len(), 2);
        assert_eq!(matrix.events.len(), 2);
        assert!(matrix.entries.iter().all(|row| row == &matrix.entries[0]));
    }
}
