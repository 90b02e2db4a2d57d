//! Append-only ratings store.
//!
//! Every logical table is a line-delimited JSON file under the data
//! directory. The files are replayed into memory at startup and every
//! mutation appends one row per affected table. Aggregates are always
//! recomputed from the raw rows.
//!
//! [`Store`] is the single writer. Readers take a [`StoreSnapshot`], an
//! immutable view that is unaffected by later writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{aggregate_itinerary, CarrierArc, Hours, Itinerary, Money, OrdinalLevel, TransportNetwork};
use crate::route::{short_hash, Plan, TransportRequest};

/// Neutral prior for averages over an empty set of ratings.
pub const NEUTRAL_SCORE: f64 = 3.0;

/// Ratings needed before a user reaches full reliability.
pub const RELIABILITY_SATURATION: u32 = 10;

pub const TABLE_REQUESTS: &str = "requests";
pub const TABLE_TEMP_TRANSACTIONS: &str = "temp_transactions";
pub const TABLE_TEMP_SUBROUTES: &str = "temp_transactions_subroutes";
pub const TABLE_TRANSACTIONS: &str = "transactions";
pub const TABLE_SUBROUTES: &str = "transaction_subroutes";
pub const TABLE_TRANSACTIONS_RATING: &str = "transactions_rating";
pub const TABLE_CARRIERS_RATING: &str = "carriers_rating";
pub const TABLE_USERS_RELIABILITY: &str = "users_reliability";

const TABLES: [&str; 8] = [
    TABLE_REQUESTS,
    TABLE_TEMP_TRANSACTIONS,
    TABLE_TEMP_SUBROUTES,
    TABLE_TRANSACTIONS,
    TABLE_SUBROUTES,
    TABLE_TRANSACTIONS_RATING,
    TABLE_CARRIERS_RATING,
    TABLE_USERS_RELIABILITY,
];

/// Column layout of the ratings bulk-import CSV.
pub const RATINGS_CSV_HEADER: [&str; 8] = [
    "user_id",
    "transaction_id",
    "carrier_id",
    "origin",
    "destination",
    "score_time",
    "score_safety",
    "score_dependability",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown request `{0}`")]
    UnknownRequest(String),
    #[error("unknown transaction `{0}`")]
    UnknownTransaction(String),
    #[error("transaction `{id}` cannot move from {from} to {to}")]
    IllegalTransition {
        id: String,
        from: TransactionStatus,
        to: TransactionStatus,
    },
    #[error("transaction `{0}` is not completed")]
    NotCompleted(String),
    #[error("score {0} is outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("user `{user}` already rated transaction `{transaction}`")]
    DuplicateRating { user: String, transaction: String },
    #[error("expected {expected} carrier score triples, got {got}")]
    LegCountMismatch { expected: usize, got: usize },
    #[error("transaction `{transaction}` has no leg {origin}->{destination} by carrier `{carrier}`")]
    NoSuchLeg {
        transaction: String,
        carrier: String,
        origin: String,
        destination: String,
    },
    #[error("invalid user id `{0}`")]
    InvalidUser(String),
    #[error("ratings CSV: {0}")]
    Csv(String),
    #[error("corrupt row in table `{table}` line {line}: {message}")]
    Corrupt {
        table: &'static str,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransactionStatus {
    Proposed,
    Selected,
    Completed,
}

impl TransactionStatus {
    fn next(self) -> Option<TransactionStatus> {
        match self {
            TransactionStatus::Proposed => Some(TransactionStatus::Selected),
            TransactionStatus::Selected => Some(TransactionStatus::Completed),
            TransactionStatus::Completed => None,
        }
    }
}

impl std::fmt::Display for TransactionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransactionStatus::Proposed => "proposed",
            TransactionStatus::Selected => "selected",
            TransactionStatus::Completed => "completed",
        })
    }
}

/// A score on the 1..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Score(u8);

impl Score {
    pub fn new(value: i64) -> Result<Self, StoreError> {
        if (1..=5).contains(&value) {
            Ok(Score(value as u8))
        } else {
            Err(StoreError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for Score {
    type Error = StoreError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Score::new(v)
    }
}

impl From<Score> for u8 {
    fn from(s: Score) -> u8 {
        s.0
    }
}

/// Time, safety and dependability scores given together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub time: Score,
    pub safety: Score,
    pub dependability: Score,
}

impl ScoreTriple {
    pub fn new(time: i64, safety: i64, dependability: i64) -> Result<Self, StoreError> {
        Ok(ScoreTriple {
            time: Score::new(time)?,
            safety: Score::new(safety)?,
            dependability: Score::new(dependability)?,
        })
    }

    pub fn get(&self, dimension: Dimension) -> Score {
        match dimension {
            Dimension::Time => self.time,
            Dimension::Safety => self.safety,
            Dimension::Dependability => self.dependability,
        }
    }

    pub fn mean(&self) -> f64 {
        f64::from(self.time.0 + self.safety.0 + self.dependability.0) / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Time,
    Safety,
    Dependability,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Time, Dimension::Safety, Dimension::Dependability];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub transaction_id: String,
    pub request_id: String,
    pub user_id: String,
    pub itinerary: Itinerary,
    pub status: TransactionStatus,
    pub plan: Plan,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub selected_at: Option<u64>,
    pub completed_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierRating {
    pub rating_id: String,
    pub transaction_id: String,
    pub user_id: String,
    pub carrier_id: String,
    pub origin: String,
    pub destination: String,
    pub scores: ScoreTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRating {
    pub rating_id: String,
    pub transaction_id: String,
    pub user_id: String,
    pub scores: ScoreTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReliability {
    pub user_id: String,
    pub ratings_count: u32,
    pub ur: f64,
}

/// Reliability multiplier for a user with `ratings_count` rated transactions:
/// 0.5 for a new user, rising by 0.1 per rating up to 1.5.
pub fn reliability(ratings_count: u32) -> f64 {
    0.5 + f64::from(ratings_count.min(RELIABILITY_SATURATION)) / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub request_id: String,
    pub snapshot_id: u64,
    pub request: TransportRequest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TempTransactionRow {
    transaction_id: String,
    request_id: String,
    user_id: String,
    plan: Plan,
    arc_ids: Vec<String>,
    total_cost: Money,
    total_duration: Hours,
    safety: OrdinalLevel,
    dependability: OrdinalLevel,
    created_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubrouteRow {
    transaction_id: String,
    subroute_number: usize,
    #[serde(flatten)]
    leg: CarrierArc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatusRow {
    transaction_id: String,
    status: TransactionStatus,
    at: u64,
}

/// Immutable view of every table.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    revision: u64,
    requests: BTreeMap<String, RequestRow>,
    transactions: BTreeMap<String, TransactionRecord>,
    carrier_ratings: Vec<CarrierRating>,
    transaction_ratings: Vec<TransactionRating>,
    reliability: BTreeMap<String, UserReliability>,
}

pub type StoreSnapshot = Arc<Tables>;

impl Tables {
    /// Number of rows appended so far, across all tables.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn request(&self, request_id: &str) -> Option<&RequestRow> {
        self.requests.get(request_id)
    }

    pub fn transaction(&self, transaction_id: &str) -> Option<&TransactionRecord> {
        self.transactions.get(transaction_id)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &TransactionRecord> {
        self.transactions.values()
    }

    pub fn carrier_ratings(&self) -> &[CarrierRating] {
        &self.carrier_ratings
    }

    pub fn transaction_ratings(&self) -> &[TransactionRating] {
        &self.transaction_ratings
    }

    pub fn user_reliability(&self, user_id: &str) -> UserReliability {
        self.reliability
            .get(user_id)
            .cloned()
            .unwrap_or_else(|| UserReliability {
                user_id: user_id.to_string(),
                ratings_count: 0,
                ur: reliability(0),
            })
    }

    /// Current reliability multiplier of `user_id`.
    pub fn ur(&self, user_id: &str) -> f64 {
        self.reliability.get(user_id).map_or(reliability(0), |r| r.ur)
    }

    fn has_rated(&self, user_id: &str, transaction_id: &str) -> bool {
        self.transaction_ratings
            .iter()
            .any(|r| r.user_id == user_id && r.transaction_id == transaction_id)
            || self
                .carrier_ratings
                .iter()
                .any(|r| r.user_id == user_id && r.transaction_id == transaction_id)
    }

    /// Mean of `score * ur` over carrier ratings for this carrier on this leg,
    /// or [`NEUTRAL_SCORE`] when there are none.
    pub fn carrier_avg(&self, carrier_id: &str, origin: &str, destination: &str, dimension: Dimension) -> f64 {
        weighted_mean(
            self.carrier_ratings
                .iter()
                .filter(|r| r.carrier_id == carrier_id && r.origin == origin && r.destination == destination)
                .map(|r| f64::from(r.scores.get(dimension).value()) * self.ur(&r.user_id)),
        )
    }

    /// Mean of `score * ur` over transaction ratings of transactions that
    /// contain a leg from `origin` to `destination`.
    pub fn transaction_avg(&self, origin: &str, destination: &str, dimension: Dimension) -> f64 {
        weighted_mean(
            self.transaction_ratings
                .iter()
                .filter(|r| {
                    self.transactions.get(&r.transaction_id).is_some_and(|t| {
                        t.itinerary
                            .legs()
                            .iter()
                            .any(|l| l.origin == origin && l.destination == destination)
                    })
                })
                .map(|r| f64::from(r.scores.get(dimension).value()) * self.ur(&r.user_id)),
        )
    }

    /// Mean of the three carrier averages.
    pub fn composite_rating(&self, carrier_id: &str, origin: &str, destination: &str) -> f64 {
        Dimension::ALL
            .iter()
            .map(|&d| self.carrier_avg(carrier_id, origin, destination, d))
            .sum::<f64>()
            / 3.0
    }

    /// Completed transactions with exactly this arc sequence. Display only.
    pub fn route_popularity<S: AsRef<str>>(&self, arc_sequence: &[S]) -> usize {
        self.transactions
            .values()
            .filter(|t| t.status == TransactionStatus::Completed)
            .filter(|t| {
                let ids = t.itinerary.arc_ids();
                ids.len() == arc_sequence.len() && ids.iter().zip(arc_sequence).all(|(a, b)| *a == b.as_ref())
            })
            .count()
    }

    /// Carriers serving `origin -> destination` in `network`, best composite first.
    pub fn top_carriers(
        &self,
        network: &TransportNetwork,
        origin: &str,
        destination: &str,
        n: usize,
    ) -> Vec<CarrierStanding> {
        let mut cheapest: BTreeMap<&str, &CarrierArc> = BTreeMap::new();
        for arc in network.arcs_between(origin, destination) {
            let slot = cheapest.entry(arc.carrier_id.as_str()).or_insert(arc);
            if (arc.cost, arc.duration, &arc.arc_id) < (slot.cost, slot.duration, &slot.arc_id) {
                *slot = arc;
            }
        }
        let mut standings: Vec<CarrierStanding> = cheapest
            .into_iter()
            .map(|(carrier, arc)| CarrierStanding {
                carrier_id: carrier.to_string(),
                composite_rating: self.composite_rating(carrier, origin, destination),
                arc_id: arc.arc_id.clone(),
                cost: arc.cost,
                duration: arc.duration,
            })
            .collect();
        standings.sort_by(|a, b| {
            b.composite_rating
                .total_cmp(&a.composite_rating)
                .then_with(|| a.carrier_id.cmp(&b.carrier_id))
        });
        standings.truncate(n);
        standings
    }
}

fn weighted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if count == 0 {
        NEUTRAL_SCORE
    } else {
        sum / count as f64
    }
}

/// One row of a Top-N carriers table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierStanding {
    pub carrier_id: String,
    pub composite_rating: f64,
    /// The carrier's cheapest arc on the leg.
    pub arc_id: String,
    pub cost: Money,
    pub duration: Hours,
}

/// The single writer. Holds the open table files and the current snapshot.
#[derive(Debug)]
pub struct Store {
    dir: Option<PathBuf>,
    files: BTreeMap<&'static str, File>,
    tables: Arc<Tables>,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn read_rows<T: DeserializeOwned>(dir: &Path, table: &'static str) -> Result<Vec<T>, StoreError> {
    let path = dir.join(table);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            table,
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

impl Store {
    /// Store without files, for tests and dry runs.
    pub fn in_memory() -> Self {
        Store {
            dir: None,
            files: BTreeMap::new(),
            tables: Arc::new(Tables::default()),
        }
    }

    /// Opens (creating if needed) the tables under `dir` and replays them.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let tables = Self::replay(dir)?;
        let mut files = BTreeMap::new();
        for table in TABLES {
            let file = OpenOptions::new().create(true).append(true).open(dir.join(table))?;
            files.insert(table, file);
        }
        Ok(Store {
            dir: Some(dir.to_path_buf()),
            files,
            tables: Arc::new(tables),
        })
    }

    fn replay(dir: &Path) -> Result<Tables, StoreError> {
        let mut t = Tables::default();
        let corrupt = |table, message: String| StoreError::Corrupt {
            table,
            line: 0,
            message,
        };

        let requests: Vec<RequestRow> = read_rows(dir, TABLE_REQUESTS)?;
        let temp: Vec<TempTransactionRow> = read_rows(dir, TABLE_TEMP_TRANSACTIONS)?;
        let subroutes: Vec<SubrouteRow> = read_rows(dir, TABLE_TEMP_SUBROUTES)?;
        let statuses: Vec<StatusRow> = read_rows(dir, TABLE_TRANSACTIONS)?;
        let selected_subroutes: Vec<SubrouteRow> = read_rows(dir, TABLE_SUBROUTES)?;
        let transaction_ratings: Vec<TransactionRating> = read_rows(dir, TABLE_TRANSACTIONS_RATING)?;
        let carrier_ratings: Vec<CarrierRating> = read_rows(dir, TABLE_CARRIERS_RATING)?;
        let reliability: Vec<UserReliability> = read_rows(dir, TABLE_USERS_RELIABILITY)?;
        t.revision = (requests.len()
            + temp.len()
            + subroutes.len()
            + statuses.len()
            + selected_subroutes.len()
            + transaction_ratings.len()
            + carrier_ratings.len()
            + reliability.len()) as u64;

        for row in requests {
            t.requests.insert(row.request_id.clone(), row);
        }
        let mut legs: BTreeMap<String, Vec<SubrouteRow>> = BTreeMap::new();
        for row in subroutes {
            legs.entry(row.transaction_id.clone()).or_default().push(row);
        }
        for row in temp {
            let mut rows = legs.remove(&row.transaction_id).unwrap_or_default();
            rows.sort_by_key(|r| r.subroute_number);
            let itinerary = aggregate_itinerary(rows.into_iter().map(|r| r.leg).collect())
                .map_err(|e| corrupt(TABLE_TEMP_SUBROUTES, format!("{}: {e}", row.transaction_id)))?;
            t.transactions.insert(
                row.transaction_id.clone(),
                TransactionRecord {
                    transaction_id: row.transaction_id,
                    request_id: row.request_id,
                    user_id: row.user_id,
                    itinerary,
                    status: TransactionStatus::Proposed,
                    plan: row.plan,
                    created_at: row.created_at,
                    selected_at: None,
                    completed_at: None,
                },
            );
        }
        for row in statuses {
            let record = t.transactions.get_mut(&row.transaction_id).ok_or_else(|| {
                corrupt(
                    TABLE_TRANSACTIONS,
                    format!("unknown transaction {}", row.transaction_id),
                )
            })?;
            record.status = row.status;
            match row.status {
                TransactionStatus::Selected => record.selected_at = Some(row.at),
                TransactionStatus::Completed => record.completed_at = Some(row.at),
                TransactionStatus::Proposed => {}
            }
        }
        t.transaction_ratings = transaction_ratings;
        t.carrier_ratings = carrier_ratings;
        for row in reliability {
            t.reliability.insert(row.user_id.clone(), row);
        }
        Ok(t)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Cheap, consistent read view.
    pub fn snapshot(&self) -> StoreSnapshot {
        Arc::clone(&self.tables)
    }

    fn append<T: Serialize>(&mut self, table: &'static str, row: &T) -> Result<(), StoreError> {
        if let Some(file) = self.files.get_mut(table) {
            let mut line = serde_json::to_string(row).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        Arc::make_mut(&mut self.tables).revision += 1;
        Ok(())
    }

    fn tables_mut(&mut self) -> &mut Tables {
        Arc::make_mut(&mut self.tables)
    }

    /// Registers a request so that itineraries can be proposed for it. Idempotent.
    pub fn register_request(
        &mut self,
        request_id: &str,
        snapshot_id: u64,
        request: &TransportRequest,
    ) -> Result<(), StoreError> {
        if self.tables.requests.contains_key(request_id) {
            return Ok(());
        }
        let row = RequestRow {
            request_id: request_id.to_string(),
            snapshot_id,
            request: request.clone(),
        };
        self.append(TABLE_REQUESTS, &row)?;
        self.tables_mut().requests.insert(row.request_id.clone(), row);
        Ok(())
    }

    /// Stores one proposed transaction per itinerary. Ids are derived from the
    /// request and the arc sequence, so repeating a call returns the same ids.
    pub fn record_proposed(&mut self, request_id: &str, itineraries: &[Itinerary]) -> Result<Vec<String>, StoreError> {
        let request = self
            .tables
            .requests
            .get(request_id)
            .ok_or_else(|| StoreError::UnknownRequest(request_id.to_string()))?
            .request
            .clone();
        let mut ids = Vec::with_capacity(itineraries.len());
        for itinerary in itineraries {
            let id = transaction_id(request_id, itinerary);
            if !self.tables.transactions.contains_key(&id) {
                let created_at = now_millis();
                let row = TempTransactionRow {
                    transaction_id: id.clone(),
                    request_id: request_id.to_string(),
                    user_id: request.user_id.clone(),
                    plan: request.plan,
                    arc_ids: itinerary.arc_ids().iter().map(|s| s.to_string()).collect(),
                    total_cost: itinerary.total_cost(),
                    total_duration: itinerary.total_duration(),
                    safety: itinerary.safety(),
                    dependability: itinerary.dependability(),
                    created_at,
                };
                self.append(TABLE_TEMP_TRANSACTIONS, &row)?;
                for (n, leg) in itinerary.legs().iter().enumerate() {
                    let sub = SubrouteRow {
                        transaction_id: id.clone(),
                        subroute_number: n + 1,
                        leg: leg.clone(),
                    };
                    self.append(TABLE_TEMP_SUBROUTES, &sub)?;
                }
                self.tables_mut().transactions.insert(
                    id.clone(),
                    TransactionRecord {
                        transaction_id: id.clone(),
                        request_id: request_id.to_string(),
                        user_id: request.user_id.clone(),
                        itinerary: itinerary.clone(),
                        status: TransactionStatus::Proposed,
                        plan: request.plan,
                        created_at,
                        selected_at: None,
                        completed_at: None,
                    },
                );
            }
            ids.push(id);
        }
        Ok(ids)
    }

    /// Advances a transaction one step along proposed -> selected -> completed.
    pub fn select_and_complete(
        &mut self,
        transaction_id: &str,
        phase: TransactionStatus,
    ) -> Result<TransactionRecord, StoreError> {
        let record = self
            .tables
            .transactions
            .get(transaction_id)
            .ok_or_else(|| StoreError::UnknownTransaction(transaction_id.to_string()))?;
        if record.status.next() != Some(phase) {
            return Err(StoreError::IllegalTransition {
                id: transaction_id.to_string(),
                from: record.status,
                to: phase,
            });
        }
        let legs = record.itinerary.legs().to_vec();
        let at = now_millis();
        self.append(
            TABLE_TRANSACTIONS,
            &StatusRow {
                transaction_id: transaction_id.to_string(),
                status: phase,
                at,
            },
        )?;
        if phase == TransactionStatus::Selected {
            for (n, leg) in legs.into_iter().enumerate() {
                let sub = SubrouteRow {
                    transaction_id: transaction_id.to_string(),
                    subroute_number: n + 1,
                    leg,
                };
                self.append(TABLE_SUBROUTES, &sub)?;
            }
        }
        let record = self
            .tables_mut()
            .transactions
            .get_mut(transaction_id)
            .expect("checked above");
        record.status = phase;
        match phase {
            TransactionStatus::Selected => record.selected_at = Some(at),
            TransactionStatus::Completed => record.completed_at = Some(at),
            TransactionStatus::Proposed => {}
        }
        Ok(record.clone())
    }

    /// Stores a user's evaluation of a completed transaction: one carrier
    /// score triple per leg plus one triple for the transaction as a whole.
    pub fn record_rating(
        &mut self,
        user_id: &str,
        transaction_id: &str,
        carrier_scores: &[ScoreTriple],
        transaction_scores: ScoreTriple,
    ) -> Result<(), StoreError> {
        let user_id = check_user(user_id)?;
        let record = self.completed(transaction_id)?;
        if self.tables.has_rated(&user_id, transaction_id) {
            return Err(StoreError::DuplicateRating {
                user: user_id,
                transaction: transaction_id.to_string(),
            });
        }
        let legs = record.itinerary.legs().to_vec();
        if legs.len() != carrier_scores.len() {
            return Err(StoreError::LegCountMismatch {
                expected: legs.len(),
                got: carrier_scores.len(),
            });
        }
        for (n, (leg, scores)) in legs.iter().zip(carrier_scores).enumerate() {
            let rating = CarrierRating {
                rating_id: format!("{transaction_id}:{user_id}:{}", n + 1),
                transaction_id: transaction_id.to_string(),
                user_id: user_id.clone(),
                carrier_id: leg.carrier_id.clone(),
                origin: leg.origin.clone(),
                destination: leg.destination.clone(),
                scores: *scores,
            };
            self.append(TABLE_CARRIERS_RATING, &rating)?;
            self.tables_mut().carrier_ratings.push(rating);
        }
        let rating = TransactionRating {
            rating_id: format!("{transaction_id}:{user_id}"),
            transaction_id: transaction_id.to_string(),
            user_id: user_id.clone(),
            scores: transaction_scores,
        };
        self.append(TABLE_TRANSACTIONS_RATING, &rating)?;
        self.tables_mut().transaction_ratings.push(rating);
        self.bump_reliability(&user_id)
    }

    /// Imports carrier ratings from CSV (see [`RATINGS_CSV_HEADER`]). Each row
    /// must name a leg of a completed transaction. Returns the rows stored.
    pub fn import_carrier_ratings<R: Read>(&mut self, reader: R) -> Result<usize, StoreError> {
        #[derive(Deserialize)]
        struct Row {
            user_id: String,
            transaction_id: String,
            carrier_id: String,
            origin: String,
            destination: String,
            score_time: i64,
            score_safety: i64,
            score_dependability: i64,
        }
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers().map_err(|e| StoreError::Csv(e.to_string()))?.clone();
        if header.iter().ne(RATINGS_CSV_HEADER.iter().copied()) {
            return Err(StoreError::Csv(format!(
                "expected header `{}`",
                RATINGS_CSV_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for row in csv.deserialize::<Row>() {
            rows.push(row.map_err(|e| StoreError::Csv(e.to_string()))?);
        }

        // Validate everything before the first append.
        let mut seen: BTreeSet<(String, String, usize)> = BTreeSet::new();
        let mut prepared = Vec::with_capacity(rows.len());
        for row in rows {
            let user_id = check_user(&row.user_id)?;
            let scores = ScoreTriple::new(row.score_time, row.score_safety, row.score_dependability)?;
            let record = self.completed(&row.transaction_id)?;
            let origin = row.origin.trim().to_uppercase();
            let destination = row.destination.trim().to_uppercase();
            let leg = record
                .itinerary
                .legs()
                .iter()
                .position(|l| l.carrier_id == row.carrier_id && l.origin == origin && l.destination == destination)
                .ok_or_else(|| StoreError::NoSuchLeg {
                    transaction: row.transaction_id.clone(),
                    carrier: row.carrier_id.clone(),
                    origin: origin.clone(),
                    destination: destination.clone(),
                })?;
            let duplicate = self.tables.carrier_ratings.iter().any(|r| {
                r.user_id == user_id
                    && r.transaction_id == row.transaction_id
                    && r.origin == origin
                    && r.destination == destination
            });
            if duplicate || !seen.insert((user_id.clone(), row.transaction_id.clone(), leg)) {
                return Err(StoreError::DuplicateRating {
                    user: user_id,
                    transaction: row.transaction_id,
                });
            }
            prepared.push(CarrierRating {
                rating_id: format!("{}:{}:{}", row.transaction_id, user_id, leg + 1),
                transaction_id: row.transaction_id,
                user_id,
                carrier_id: row.carrier_id,
                origin,
                destination,
                scores,
            });
        }

        let count = prepared.len();
        for rating in prepared {
            let first_for_transaction = !self.tables.has_rated(&rating.user_id, &rating.transaction_id);
            let user = rating.user_id.clone();
            self.append(TABLE_CARRIERS_RATING, &rating)?;
            self.tables_mut().carrier_ratings.push(rating);
            if first_for_transaction {
                self.bump_reliability(&user)?;
            }
        }
        Ok(count)
    }

    fn completed(&self, transaction_id: &str) -> Result<TransactionRecord, StoreError> {
        let record = self
            .tables
            .transactions
            .get(transaction_id)
            .ok_or_else(|| StoreError::UnknownTransaction(transaction_id.to_string()))?;
        if record.status != TransactionStatus::Completed {
            return Err(StoreError::NotCompleted(transaction_id.to_string()));
        }
        Ok(record.clone())
    }

    fn bump_reliability(&mut self, user_id: &str) -> Result<(), StoreError> {
        let count = self.tables.user_reliability(user_id).ratings_count + 1;
        let row = UserReliability {
            user_id: user_id.to_string(),
            ratings_count: count,
            ur: reliability(count),
        };
        self.append(TABLE_USERS_RELIABILITY, &row)?;
        self.tables_mut().reliability.insert(row.user_id.clone(), row);
        Ok(())
    }
}

fn check_user(user_id: &str) -> Result<String, StoreError> {
    let user = user_id.trim();
    if user.is_empty() || user.contains(char::is_whitespace) || user.contains(':') {
        return Err(StoreError::InvalidUser(user_id.to_string()));
    }
    Ok(user.to_string())
}

/// Content-derived transaction id for an itinerary proposed under a request.
pub fn transaction_id(request_id: &str, itinerary: &Itinerary) -> String {
    format!(
        "T{}",
        short_hash(&format!("{request_id}\n{}", itinerary.arc_ids().join("\n")))
    )
}
