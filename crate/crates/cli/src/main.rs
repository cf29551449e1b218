//! Command-line interface: scenario runs, block-log verification, and
//! incremental scenario editing for the market lifecycle and feeds.
//!
//! Lifecycle subcommands treat `--state <file>` as a scenario document:
//! each command appends one action, replays the whole scenario through
//! the real validation stack, and saves the file only if the new action
//! is accepted. Determinism makes the replay cheap and exact.
//!
//! Exit codes: 0 success, 1 validation failure, 2 scenario error.

use clap::{Parser, Subcommand};
use omen_core::consensus::ReportEntry;
use omen_core::crypto::Hash160;
use omen_core::feeds::{FeedDecision, FeedDesk, FeedSource, FeedTransport};
use omen_core::lifecycle::EventKind;
use omen_core::sim::{self, Action, Allocation, RunOutput, Scenario, SimError, SCENARIO_VERSION};
use omen_core::units::{Amount, UnitKind};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "omen", about = "Deterministic prediction-market simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report the results.
    Simrun {
        scenario: PathBuf,
        /// Machine-readable JSON output.
        #[arg(long)]
        json: bool,
        /// Directory for the block log, run report, and feed logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Revalidate a block log from genesis.
    Verify {
        blocklog: PathBuf,
        /// Scenario the log came from, for non-default chain settings.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Add a genesis allocation to a scenario.
    Genesis {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        units: String,
        #[arg(long)]
        value: Amount,
    },
    /// Event management.
    Event {
        #[command(subcommand)]
        cmd: EventCmd,
    },
    /// Market management.
    Market {
        #[command(subcommand)]
        cmd: MarketCmd,
    },
    /// Buy or sell outcome shares.
    Trade {
        #[command(subcommand)]
        cmd: TradeCmd,
    },
    /// Ballot commitment and reveal.
    Report {
        #[command(subcommand)]
        cmd: ReportCmd,
    },
    /// Settle a branch once quorum and the reveal window have passed.
    Redeem {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        branch: String,
    },
    /// Balances, markets, and conservation checksums for a scenario.
    Status {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Outcome feeds.
    Feeds {
        #[command(subcommand)]
        cmd: FeedsCmd,
    },
}

#[derive(Subcommand)]
enum EventCmd {
    Create {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        label: String,
        #[arg(long)]
        description: String,
        #[arg(long)]
        branch: String,
        /// binary | scalar | categorical
        #[arg(long, default_value = "binary")]
        kind: String,
        #[arg(long)]
        lower: Option<f64>,
        #[arg(long)]
        upper: Option<f64>,
        #[arg(long)]
        bins: Option<u32>,
        /// Comma-separated labels for categorical events.
        #[arg(long)]
        labels: Option<String>,
        /// Blocks until maturity.
        #[arg(long)]
        expires_in: u64,
        #[arg(long)]
        fee: Option<Amount>,
    },
}

#[derive(Subcommand)]
enum MarketCmd {
    Create {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        label: String,
        #[arg(long)]
        title: String,
        /// Comma-separated event labels.
        #[arg(long)]
        events: String,
        #[arg(long)]
        loss_limit: f64,
        #[arg(long, default_value_t = 0.005)]
        trading_fee: f64,
    },
}

#[derive(Subcommand)]
enum TradeCmd {
    Buy {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        event: String,
        #[arg(long)]
        outcome: usize,
        #[arg(long)]
        shares: Amount,
    },
    Sell {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        event: String,
        #[arg(long)]
        outcome: usize,
        #[arg(long)]
        shares: Amount,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Commit a salted ballot carried on the reporter's reputation.
    Submit {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        branch: String,
        /// event=value pairs, e.g. "e1=1,e2=invalid,e3=no-report".
        #[arg(long)]
        ballot: String,
    },
    /// Reveal one committed entry.
    Reveal {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        branch: String,
        #[arg(long)]
        event: String,
        /// A number, "invalid", or "no-report".
        #[arg(long)]
        entry: String,
    },
}

#[derive(Subcommand)]
enum FeedsCmd {
    /// Query a source file and append the actor's signed observations.
    Collect {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        branch: String,
        /// JSON file mapping event-id hex (or scenario label) to outcome.
        #[arg(long)]
        source: PathBuf,
        /// Comma-separated event labels to observe.
        #[arg(long)]
        events: String,
    },
    /// Tally observations per event and print the decisions.
    Aggregate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        branch: String,
        /// Override the configured θ for this tally.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Pay the challenge fee to force a manual vote.
    Challenge {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        branch: String,
        #[arg(long)]
        event: String,
        #[arg(long)]
        fee: Amount,
    },
}

/// 1 = validation failure, 2 = scenario (input) error.
enum CliError {
    Validation(String),
    Scenario(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Parse(_) | SimError::Version(_) => CliError::Scenario(e.to_string()),
            SimError::Genesis { .. } | SimError::Action { .. } => CliError::Validation(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Scenario(msg)) => {
            eprintln!("scenario error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Scenario(format!("cannot read {}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    if !path.exists() {
        return Ok(Scenario {
            version: SCENARIO_VERSION,
            name: String::new(),
            config: Default::default(),
            genesis: Vec::new(),
            actions: Vec::new(),
        });
    }
    Ok(Scenario::from_json(&read_file(path)?)?)
}

fn save_scenario(path: &Path, scenario: &Scenario) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(scenario)
        .map_err(|e| CliError::Scenario(e.to_string()))?;
    std::fs::write(path, text)
        .map_err(|e| CliError::Scenario(format!("cannot write {}: {e}", path.display())))
}

/// Append an action, replay the scenario, and save only on success.
fn apply_action(path: &Path, action: Action) -> Result<RunOutput, CliError> {
    let mut scenario = load_scenario(path)?;
    scenario.actions.push(action);
    let output = sim::run(&scenario)?;
    save_scenario(path, &scenario)?;
    Ok(output)
}

fn parse_entry(text: &str) -> Result<ReportEntry, CliError> {
    match text {
        "invalid" => Ok(ReportEntry::Invalid),
        "no-report" => Ok(ReportEntry::NoReport),
        v => v
            .parse::<f64>()
            .map(ReportEntry::Value)
            .map_err(|_| CliError::Scenario(format!("bad ballot entry {text:?}"))),
    }
}

fn parse_ballot(text: &str) -> Result<BTreeMap<String, ReportEntry>, CliError> {
    let mut ballot = BTreeMap::new();
    for pair in text.split(',').filter(|p| !p.is_empty()) {
        let (event, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Scenario(format!("ballot entry {pair:?} is not event=value")))?;
        ballot.insert(event.to_string(), parse_entry(value)?);
    }
    if ballot.is_empty() {
        return Err(CliError::Scenario("ballot is empty".into()));
    }
    Ok(ballot)
}

fn comma_list(text: &str) -> Vec<String> {
    text.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn print_table(headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (i, cell) in cells.iter().enumerate() {
            out.push_str(&format!("{:<width$}  ", cell, width = widths[i]));
        }
        println!("{}", out.trim_end());
    };
    line(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in rows {
        line(row);
    }
}

fn print_status(output: &RunOutput, json: bool) -> Result<(), CliError> {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&output.report).map_err(|e| CliError::Scenario(e.to_string()))?
        );
        return Ok(());
    }
    println!("blocks: {}", output.report.blocks);
    println!();
    let mut rows = Vec::new();
    for (actor, units) in &output.report.final_balances {
        for (unit, value) in units {
            rows.push(vec![actor.clone(), unit.clone(), value.to_string()]);
        }
    }
    println!("balances");
    print_table(&["actor", "unit", "balance"], &rows);
    if !output.report.markets.is_empty() {
        println!();
        println!("markets");
        let mut rows = Vec::new();
        for (label, hex) in &output.report.markets {
            let id = Hash160::from_hex(hex).map_err(|e| CliError::Scenario(e.to_string()))?;
            let (state, prices) = output
                .node
                .ledger
                .market(id)
                .map(|m| (format!("{:?}", m.state).to_lowercase(), m.lmsr.prices()))
                .unwrap_or((String::from("unknown"), Vec::new()));
            let prices = prices
                .iter()
                .map(|p| format!("{p:.4}"))
                .collect::<Vec<_>>()
                .join(" ");
            rows.push(vec![label.clone(), state, prices]);
        }
        print_table(&["market", "state", "prices"], &rows);
    }
    println!();
    let c = &output.report.conservation;
    println!("bitcoin supply:     {}", c.bitcoin_supply);
    println!("reputation supply:  {}", c.reputation_supply);
    println!("shares outstanding: {}", c.shares_outstanding);
    println!("utxo hash:          {}", c.utxo_hash);
    println!("block log hash:     {}", c.block_log_hash);
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simrun { scenario, json, out } => {
            let parsed = Scenario::from_json(&read_file(&scenario)?)?;
            let output = sim::run(&parsed)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CliError::Scenario(format!("cannot create {}: {e}", dir.display())))?;
                let write = |name: &str, data: &str| {
                    std::fs::write(dir.join(name), data)
                        .map_err(|e| CliError::Scenario(format!("cannot write {name}: {e}")))
                };
                write("blocklog.jsonl", &output.block_log)?;
                write(
                    "report.json",
                    &serde_json::to_string_pretty(&output.report)
                        .map_err(|e| CliError::Scenario(e.to_string()))?,
                )?;
                for (branch, log) in &output.feed_logs {
                    write(&format!("feed-{branch}.jsonl"), log)?;
                }
            }
            print_status(&output, json)
        }
        Command::Verify { blocklog, scenario, json } => {
            let chain = match scenario {
                Some(path) => Scenario::from_json(&read_file(&path)?)?.config.protocol().chain,
                None => sim::SimConfig::default().protocol().chain,
            };
            let log = read_file(&blocklog)?;
            let report = sim::verify(chain, &log).map_err(CliError::Validation)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).map_err(|e| CliError::Scenario(e.to_string()))?
                );
            } else {
                println!("ok: {} blocks, utxo hash {}", report.blocks, report.utxo_hash);
            }
            Ok(())
        }
        Command::Genesis { state, actor, units, value } => {
            let units: UnitKind = serde_json::from_value(serde_json::Value::String(units))
                .map_err(|e| CliError::Scenario(format!("bad units: {e}")))?;
            let mut scenario = load_scenario(&state)?;
            scenario.genesis.push(Allocation { actor, units, value });
            sim::run(&scenario)?;
            save_scenario(&state, &scenario)
        }
        Command::Event { cmd } => match cmd {
            EventCmd::Create {
                state,
                actor,
                label,
                description,
                branch,
                kind,
                lower,
                upper,
                bins,
                labels,
                expires_in,
                fee,
            } => {
                let kind = match kind.as_str() {
                    "binary" => EventKind::Binary,
                    "scalar" => EventKind::Scalar {
                        lower: lower.ok_or(CliError::Scenario("scalar events need --lower".into()))?,
                        upper: upper.ok_or(CliError::Scenario("scalar events need --upper".into()))?,
                        bins: bins.unwrap_or(10),
                    },
                    "categorical" => EventKind::Categorical {
                        labels: comma_list(
                            &labels.ok_or(CliError::Scenario("categorical events need --labels".into()))?,
                        ),
                    },
                    other => return Err(CliError::Scenario(format!("unknown event kind {other:?}"))),
                };
                let output = apply_action(
                    &state,
                    Action::CreateEvent { actor, label: label.clone(), description, branch, kind, expires_in, fee },
                )?;
                println!("event {label}: {}", output.report.events[&label]);
                Ok(())
            }
        },
        Command::Market { cmd } => match cmd {
            MarketCmd::Create { state, actor, label, title, events, loss_limit, trading_fee } => {
                let output = apply_action(
                    &state,
                    Action::CreateMarket {
                        actor,
                        label: label.clone(),
                        title,
                        events: comma_list(&events),
                        loss_limit,
                        trading_fee,
                    },
                )?;
                println!("market {label}: {}", output.report.markets[&label]);
                Ok(())
            }
        },
        Command::Trade { cmd } => {
            let (state, action) = match cmd {
                TradeCmd::Buy { state, actor, event, outcome, shares } => {
                    (state, Action::Buy { actor, event, outcome, shares })
                }
                TradeCmd::Sell { state, actor, event, outcome, shares } => {
                    (state, Action::Sell { actor, event, outcome, shares })
                }
            };
            let output = apply_action(&state, action)?;
            print_status(&output, false)
        }
        Command::Report { cmd } => match cmd {
            ReportCmd::Submit { state, actor, branch, ballot } => {
                let ballot = parse_ballot(&ballot)?;
                apply_action(&state, Action::Report { actor, branch, ballot })?;
                Ok(())
            }
            ReportCmd::Reveal { state, actor, branch, event, entry } => {
                let entry = parse_entry(&entry)?;
                apply_action(&state, Action::Reveal { actor, branch, event, entry })?;
                Ok(())
            }
        },
        Command::Redeem { state, branch } => {
            let output = apply_action(&state, Action::Redeem { branch })?;
            for summary in &output.report.consensus {
                println!(
                    "{}",
                    serde_json::to_string_pretty(summary).map_err(|e| CliError::Scenario(e.to_string()))?
                );
            }
            Ok(())
        }
        Command::Status { state, json } => {
            let scenario = load_scenario(&state)?;
            let output = sim::run(&scenario)?;
            print_status(&output, json)
        }
        Command::Feeds { cmd } => match cmd {
            FeedsCmd::Collect { state, actor, branch, source, events } => {
                let scenario = load_scenario(&state)?;
                let output = sim::run(&scenario)?;
                let feed = FeedSource {
                    id: source.display().to_string(),
                    transport: FeedTransport::LocalFile { path: source },
                };
                let mut scenario = scenario;
                for label in comma_list(&events) {
                    let hex = output
                        .report
                        .events
                        .get(&label)
                        .ok_or_else(|| CliError::Scenario(format!("unknown event label {label:?}")))?;
                    let id = Hash160::from_hex(hex).map_err(|e| CliError::Scenario(e.to_string()))?;
                    // The feed file may key by event id or scenario label.
                    let value = match feed.lookup(id).map_err(|e| CliError::Scenario(e.to_string()))? {
                        Some(v) => v,
                        None => feed
                            .lookup(omen_core::crypto::hash160(label.as_bytes()))
                            .ok()
                            .flatten()
                            .or_else(|| lookup_by_label(&feed, &label))
                            .ok_or_else(|| {
                                CliError::Scenario(format!("source does not cover event {label:?}"))
                            })?,
                    };
                    scenario.actions.push(Action::FeedObservation {
                        actor: actor.clone(),
                        branch: branch.clone(),
                        event: label,
                        value,
                    });
                }
                scenario.actions.push(Action::FeedResolve { branch });
                sim::run(&scenario)?;
                save_scenario(&state, &scenario)
            }
            FeedsCmd::Aggregate { state, branch, threshold, json } => {
                let scenario = load_scenario(&state)?;
                let output = sim::run(&scenario)?;
                let desk = match output.feed_desks.get(&branch) {
                    Some(desk) => match threshold {
                        Some(t) => FeedDesk::replay_log(t, desk.challenge_fee, &desk.log_lines())
                            .map_err(|e| CliError::Scenario(e.to_string()))?,
                        None => desk.clone(),
                    },
                    None => return Err(CliError::Scenario(format!("no observations on branch {branch:?}"))),
                };
                let mut events: Vec<Hash160> = desk.observations().iter().map(|o| o.event).collect();
                events.sort();
                events.dedup();
                let mut rows = Vec::new();
                let mut decisions = Vec::new();
                for event in events {
                    let aggregate = desk.decide(event).map_err(|e| CliError::Scenario(e.to_string()))?;
                    let decision = match aggregate.decision {
                        FeedDecision::Resolved { value } => format!("resolved {value}"),
                        FeedDecision::VoteRequired => "vote-required".to_string(),
                    };
                    rows.push(vec![event.to_hex(), format!("{:.4}", aggregate.total_weight), decision]);
                    decisions.push(aggregate);
                }
                if json {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&decisions)
                            .map_err(|e| CliError::Scenario(e.to_string()))?
                    );
                } else {
                    print_table(&["event", "weight", "decision"], &rows);
                }
                Ok(())
            }
            FeedsCmd::Challenge { state, actor, branch, event, fee } => {
                apply_action(&state, Action::Challenge { actor, branch, event, fee })?;
                Ok(())
            }
        },
    }
}

/// Fallback for feed files keyed by plain scenario labels.
fn lookup_by_label(feed: &FeedSource, label: &str) -> Option<f64> {
    if let FeedTransport::LocalFile { path } = &feed.transport {
        let text = std::fs::read_to_string(path).ok()?;
        let values: BTreeMap<String, f64> = serde_json::from_str(&text).ok()?;
        return values.get(label).copied();
    }
    None
}
