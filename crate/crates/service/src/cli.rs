//! Command-line front end. Every subcommand except `serve` runs directly
//! against the engine; `--json` prints the same bodies the HTTP API returns.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use freightrec_core::route::{RankKey, UserConstraints};
use freightrec_core::store::ScoreTriple;
use freightrec_core::{Hours, MiningThresholds, Money, OrdinalLevel, Plan, Preferences, TransportRequest};
use serde::Serialize;

use crate::engine::{Engine, EngineError, RatingInput, SessionView};

pub const DATA_DIR_ENV: &str = "RECSYS_DATA_DIR";

/// Exit status for a request whose candidates were all discarded.
pub const EXIT_NO_SOLUTION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "freightrec", version, about = "Intermodal freight itinerary recommendations")]
pub struct Cli {
    /// Data directory. The RECSYS_DATA_DIR environment variable takes precedence.
    #[arg(long, global = true, default_value = "./data")]
    pub data_dir: PathBuf,
    /// Port for `serve`.
    #[arg(long, global = true, default_value_t = 8080)]
    pub port: u16,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a network CSV file.
    Ingest {
        #[arg(long)]
        network: PathBuf,
    },
    /// Submit a transport request and list its solutions.
    Request(RequestArgs),
    /// List the solutions of a request.
    Solutions {
        request_id: String,
        /// cost, duration, safety, dependability or final_score.
        #[arg(long)]
        sort: Option<RankKey>,
    },
    /// Show the sub-routes of an itinerary.
    Details { itinerary_id: String },
    /// Score a request's solutions and suggest carriers per leg.
    Recommend { request_id: String },
    /// Best-rated carriers on the origin and destination of an arc.
    TopCarriers {
        leg_id: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Compare an arc with another carrier on the same leg.
    Compare { leg_id: String, carrier_id: String },
    /// Select a proposed itinerary.
    Select { itinerary_id: String },
    /// Mark a selected transaction completed.
    Complete { transaction_id: String },
    /// Rate a completed transaction.
    Rate {
        transaction_id: String,
        #[arg(long)]
        user: String,
        /// Carrier scores for one leg as time,safety,dependability. Repeat per leg.
        #[arg(long = "leg", value_parser = parse_triple, required = true)]
        legs: Vec<ScoreTriple>,
        /// Scores for the transaction as a whole.
        #[arg(long, value_parser = parse_triple)]
        overall: ScoreTriple,
    },
    /// Import carrier ratings from CSV.
    ImportRatings { path: PathBuf },
    /// Mine knowledge rules from completed transactions.
    MineRules {
        #[arg(long, default_value_t = freightrec_core::rules::DEFAULT_MIN_SUPPORT)]
        min_support: f64,
        #[arg(long, default_value_t = freightrec_core::rules::DEFAULT_MIN_CONFIDENCE)]
        min_confidence: f64,
    },
    /// Print the current rules.
    Rules {
        /// Print CSV instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Run the HTTP API.
    Serve,
}

#[derive(Debug, clap::Args)]
pub struct RequestArgs {
    #[arg(long = "from")]
    origin: String,
    #[arg(long = "to")]
    destination: String,
    #[arg(long)]
    plan: Plan,
    #[arg(long, default_value_t = 0.0)]
    quantity: f64,
    #[arg(long)]
    max_cost: Option<Money>,
    #[arg(long)]
    max_duration: Option<Hours>,
    /// User-defined plan only.
    #[arg(long)]
    min_safety: Option<OrdinalLevel>,
    /// User-defined plan only.
    #[arg(long)]
    min_dependability: Option<OrdinalLevel>,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value = "anonymous")]
    user: String,
}

impl RequestArgs {
    fn into_request(self) -> Result<TransportRequest, EngineError> {
        let mut request = TransportRequest::new(&self.origin, &self.destination, self.plan);
        request.quantity = self.quantity;
        request.preferences = Preferences::new(self.a, self.b, self.c)?;
        request.user_id = self.user;
        if self.plan == Plan::UserDefined {
            request.user_constraints = Some(UserConstraints {
                max_cost: None,
                max_duration: None,
                min_safety: self.min_safety,
                min_dependability: self.min_dependability,
            });
        } else if self.min_safety.is_some() || self.min_dependability.is_some() {
            return Err(freightrec_core::RouteError::InvalidRequest(
                "--min-safety and --min-dependability require --plan user-defined".into(),
            )
            .into());
        }
        request.max_cost = self.max_cost;
        request.max_duration = self.max_duration;
        Ok(request)
    }
}

fn parse_triple(s: &str) -> Result<ScoreTriple, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [t, sa, d] = parts.as_slice() else {
        return Err("expected time,safety,dependability".into());
    };
    let num = |v: &str| v.parse::<i64>().map_err(|e| format!("`{v}`: {e}"));
    ScoreTriple::new(num(t)?, num(sa)?, num(d)?).map_err(|e| e.to_string())
}

/// The environment variable wins over the flag when set and non-empty.
pub fn resolve_data_dir(flag: PathBuf, env: Option<OsString>) -> PathBuf {
    match env {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag,
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, env_data_dir: Option<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 1 so that 2 stays reserved for NoSolution.
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match execute(cli, env_data_dir, out) {
        Ok(()) => 0,
        Err(Failure::Engine(e)) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                EngineError::NoSolution { .. } => EXIT_NO_SOLUTION,
                _ => 1,
            }
        }
        Err(Failure::Io(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

enum Failure {
    Engine(EngineError),
    Io(io::Error),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::Engine(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn execute(cli: Cli, env_data_dir: Option<OsString>, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = resolve_data_dir(cli.data_dir, env_data_dir);
    let engine = Engine::open(&dir)?;
    let json = cli.json;
    match cli.command {
        Command::Ingest { network } => {
            let report = engine.ingest_path(&network)?;
            emit(out, json, &report, |o| {
                writeln!(
                    o,
                    "{} arcs loaded ({} terminals, snapshot {})",
                    report.arcs, report.terminals, report.snapshot_id
                )
            })
        }
        Command::Request(args) => {
            let request = args.into_request()?;
            match engine.create_request(request) {
                Ok(view) => emit(out, json, &view, |o| print_session(o, &view)),
                Err(EngineError::NoSolution { request_id, diagnostic }) => {
                    if json {
                        let body = serde_json::json!({
                            "request_id": request_id,
                            "state": "no_solution",
                            "diagnostic": diagnostic,
                        });
                        writeln!(
                            out,
                            "{}",
                            serde_json::to_string_pretty(&body).map_err(io::Error::other)?
                        )?;
                    }
                    Err(EngineError::NoSolution { request_id, diagnostic }.into())
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Solutions { request_id, sort } => {
            let view = engine.solutions(&request_id, sort)?;
            emit(out, json, &view, |o| print_session(o, &view))
        }
        Command::Details { itinerary_id } => {
            let view = engine.details(&itinerary_id)?;
            emit(out, json, &view, |o| {
                writeln!(
                    o,
                    "{}  {} EUR  {} h  safety {}  dependability {}  [{}]",
                    view.itinerary_id,
                    view.total_cost,
                    view.total_duration,
                    view.safety,
                    view.dependability,
                    view.status
                )?;
                writeln!(
                    o,
                    "{:<3} {:<8} {:<12} {:<12} {:>10} {:>8} {:<10} {:<14} carrier",
                    "#", "leg", "loading", "delivery", "cost", "duration", "safety", "dependability"
                )?;
                for r in &view.subroutes {
                    writeln!(
                        o,
                        "{:<3} {:<8} {:<12} {:<12} {:>10} {:>8} {:<10} {:<14} {}",
                        r.subroute_number,
                        r.leg_id,
                        r.loading,
                        r.delivery,
                        r.cost.to_string(),
                        r.duration.to_string(),
                        r.safety.label(),
                        r.dependability.label(),
                        r.carrier_id
                    )?;
                }
                Ok(())
            })
        }
        Command::Recommend { request_id } => {
            let view = engine.recommend(&request_id)?;
            emit(out, json, &view, |o| {
                for (rank, r) in view.recommendations.iter().enumerate() {
                    writeln!(
                        o,
                        "{}. {}  {} EUR  {} h  key {:.4}  o_total {:.4}  o_cost {:.4}  popularity {}",
                        rank + 1,
                        r.itinerary_id,
                        r.itinerary.total_cost(),
                        r.itinerary.total_duration(),
                        r.scores.ranking_key,
                        r.scores.o_total,
                        r.scores.o_cost,
                        r.scores.popularity
                    )?;
                    writeln!(o, "   {}", r.explanation)?;
                }
                Ok(())
            })
        }
        Command::TopCarriers { leg_id, n } => {
            let view = engine.top_carriers(&leg_id, n)?;
            emit(out, json, &view, |o| {
                writeln!(o, "{} -> {}", view.origin, view.destination)?;
                for (rank, c) in view.carriers.iter().enumerate() {
                    writeln!(
                        o,
                        "{:>2}. carrier {:<8} rating {:.3}  {} EUR  {} h  ({})",
                        rank + 1,
                        c.carrier_id,
                        c.composite_rating,
                        c.cost,
                        c.duration,
                        c.arc_id
                    )?;
                }
                Ok(())
            })
        }
        Command::Compare { leg_id, carrier_id } => {
            let view = engine.compare(&leg_id, &carrier_id)?;
            emit(out, json, &view, |o| {
                writeln!(
                    o,
                    "carrier {} vs {}: cost {:+.2} EUR, duration {:+.1} h, rating {:+.3}",
                    view.carrier_id,
                    view.leg_id,
                    view.delta.delta_cost,
                    view.delta.delta_duration,
                    view.delta.delta_rating
                )
            })
        }
        Command::Select { itinerary_id } => {
            let view = engine.select(&itinerary_id)?;
            emit(out, json, &view, |o| {
                writeln!(o, "{} {}", view.transaction_id, view.status)
            })
        }
        Command::Complete { transaction_id } => {
            let view = engine.complete(&transaction_id)?;
            emit(out, json, &view, |o| {
                writeln!(o, "{} {}", view.transaction_id, view.status)
            })
        }
        Command::Rate {
            transaction_id,
            user,
            legs,
            overall,
        } => {
            let input = RatingInput {
                user_id: user,
                carrier_scores: legs,
                transaction_scores: overall,
            };
            let view = engine.rate(&transaction_id, &input)?;
            emit(out, json, &view, |o| {
                writeln!(
                    o,
                    "rated {} as {} ({} rated transactions, reliability {:.1})",
                    view.transaction_id, view.user_id, view.ratings_count, view.ur
                )
            })
        }
        Command::ImportRatings { path } => {
            let imported = engine.import_ratings(File::open(path)?)?;
            let body = serde_json::json!({ "imported": imported });
            emit(out, json, &body, |o| writeln!(o, "{imported} ratings imported"))
        }
        Command::MineRules {
            min_support,
            min_confidence,
        } => {
            let thresholds = MiningThresholds::new(min_support, min_confidence).map_err(EngineError::from)?;
            let view = engine.mine_rules(thresholds)?;
            emit(out, json, &view, |o| writeln!(o, "{} rules mined", view.count))
        }
        Command::Rules { csv } => {
            if csv {
                engine.export_rules_csv(&mut *out)?;
                return Ok(());
            }
            let view = engine.rules_view();
            emit(out, json, &view, |o| {
                for r in &view.rules {
                    writeln!(
                        o,
                        "{} -> {} [{}] => carrier {}  support {:.3}  confidence {:.3}",
                        r.origin, r.destination, r.plan, r.carrier_id, r.support, r.confidence
                    )?;
                }
                writeln!(o, "{} rules", view.count)
            })
        }
        Command::Serve => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::api::serve(Arc::new(engine), cli.port))?;
            Ok(())
        }
    }
}

fn emit<T: Serialize>(
    out: &mut dyn Write,
    json: bool,
    value: &T,
    human: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    if json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(value).map_err(io::Error::other)?
        )?;
    } else {
        human(out)?;
    }
    Ok(())
}

fn print_session(o: &mut dyn Write, view: &SessionView) -> io::Result<()> {
    writeln!(
        o,
        "request {} ({}, snapshot {})",
        view.request_id,
        state_label(view),
        view.snapshot_id
    )?;
    writeln!(
        o,
        "{:<18} {:>10} {:>8} {:<10} {:<14} legs",
        "itinerary", "cost", "duration", "safety", "dependability"
    )?;
    for s in &view.solutions {
        writeln!(
            o,
            "{:<18} {:>10} {:>8} {:<10} {:<14} {}",
            s.itinerary_id,
            s.total_cost.to_string(),
            s.total_duration.to_string(),
            s.safety.label(),
            s.dependability.label(),
            s.arc_ids.join(" ")
        )?;
    }
    writeln!(o, "{} solutions", view.solutions.len())
}

fn state_label(view: &SessionView) -> String {
    serde_json::to_value(view.state)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}
