//! Pipeline orchestration over one data directory: network snapshots, the
//! ratings store and the mined rules.
//!
//! Sessions are not stored separately. A session is rebuilt from the
//! registered request and the network snapshot it was issued against, which
//! is cheap and deterministic.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use freightrec_core::network::{NetworkError, OrdinalLevel};
use freightrec_core::route::{NoSolutionDiagnostic, RankKey};
use freightrec_core::rules::{read_rules, rules_to_csv, write_rules, RuleError};
use freightrec_core::scoring::{compare_with_carrier, CarrierDelta, ScoringError};
use freightrec_core::store::{CarrierStanding, ScoreTriple, TransactionStatus};
use freightrec_core::{
    mine_rules, rank_solutions, sweep_solutions, synthesize, Hours, Itinerary, KnowledgeRule, MiningThresholds, Money,
    Recommendation, RouteError, SolutionSet, Store, StoreError, StoreSnapshot, TransportNetwork, TransportRequest,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NETWORKS_FILE: &str = "networks";
pub const RULES_FILE: &str = "knowledge_rules";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no network has been ingested")]
    NoNetwork,
    #[error("unknown request `{0}`")]
    UnknownRequest(String),
    #[error("unknown itinerary `{0}`")]
    UnknownItinerary(String),
    #[error("unknown leg `{0}`")]
    UnknownLeg(String),
    #[error("request `{request}` already has itinerary `{selected}` selected")]
    AlreadySelected { request: String, selected: String },
    #[error("{}", no_solution_message(.diagnostic))]
    NoSolution {
        request_id: String,
        diagnostic: NoSolutionDiagnostic,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Route(RouteError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("corrupt {file} line {line}: {message}")]
    Corrupt {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn no_solution_message(diagnostic: &NoSolutionDiagnostic) -> String {
    format!("no solution: {diagnostic}")
}

impl From<RouteError> for EngineError {
    fn from(e: RouteError) -> Self {
        EngineError::Route(e)
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkRow {
    snapshot_id: u64,
    csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub snapshot_id: u64,
    pub arcs: usize,
    pub terminals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Selected,
    Completed,
    Rated,
    NoSolution,
}

/// One row of the solutions table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionRow {
    pub itinerary_id: String,
    pub total_cost: Money,
    pub total_duration: Hours,
    pub safety: OrdinalLevel,
    pub dependability: OrdinalLevel,
    pub n_legs: usize,
    pub arc_ids: Vec<String>,
}

impl SolutionRow {
    fn new(itinerary_id: String, it: &Itinerary) -> Self {
        SolutionRow {
            itinerary_id,
            total_cost: it.total_cost(),
            total_duration: it.total_duration(),
            safety: it.safety(),
            dependability: it.dependability(),
            n_legs: it.n_legs(),
            arc_ids: it.arc_ids().iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub request_id: String,
    pub snapshot_id: u64,
    pub state: SessionState,
    pub solutions: Vec<SolutionRow>,
}

/// One sub-route row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubrouteRow {
    pub subroute_number: usize,
    pub leg_id: String,
    pub loading: String,
    pub delivery: String,
    pub cost: Money,
    pub duration: Hours,
    pub safety: OrdinalLevel,
    pub dependability: OrdinalLevel,
    pub carrier_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetailsView {
    pub itinerary_id: String,
    pub request_id: String,
    pub status: TransactionStatus,
    pub total_cost: Money,
    pub total_duration: Hours,
    pub safety: OrdinalLevel,
    pub dependability: OrdinalLevel,
    pub subroutes: Vec<SubrouteRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationsView {
    pub request_id: String,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopCarriersView {
    pub leg_id: String,
    pub origin: String,
    pub destination: String,
    pub carriers: Vec<CarrierStanding>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareView {
    pub leg_id: String,
    pub carrier_id: String,
    #[serde(flatten)]
    pub delta: CarrierDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionView {
    pub transaction_id: String,
    pub status: TransactionStatus,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RatingInput {
    pub user_id: String,
    /// One triple per leg, in leg order.
    pub carrier_scores: Vec<ScoreTriple>,
    pub transaction_scores: ScoreTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingView {
    pub transaction_id: String,
    pub user_id: String,
    pub ratings_count: u32,
    pub ur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RulesView {
    pub count: usize,
    pub rules: Vec<KnowledgeRule>,
}

struct Session {
    request: TransportRequest,
    network: Arc<TransportNetwork>,
    solutions: std::result::Result<SolutionSet, NoSolutionDiagnostic>,
}

struct Networks {
    snapshots: BTreeMap<u64, Arc<TransportNetwork>>,
    current: Option<u64>,
}

pub struct Engine {
    dir: PathBuf,
    networks: RwLock<Networks>,
    store: Mutex<Store>,
    rules: RwLock<Arc<Vec<KnowledgeRule>>>,
}

impl Engine {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let store = Store::open(&dir)?;

        let mut networks = Networks {
            snapshots: BTreeMap::new(),
            current: None,
        };
        for (line, row) in read_lines::<NetworkRow>(&dir.join(NETWORKS_FILE), NETWORKS_FILE)? {
            let network =
                TransportNetwork::from_csv(row.snapshot_id, row.csv.as_bytes()).map_err(|e| EngineError::Corrupt {
                    file: NETWORKS_FILE,
                    line,
                    message: e.to_string(),
                })?;
            networks.snapshots.insert(row.snapshot_id, Arc::new(network));
            networks.current = Some(row.snapshot_id);
        }

        let rules = match File::open(dir.join(RULES_FILE)) {
            Ok(f) => read_rules(BufReader::new(f))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };

        Ok(Engine {
            dir,
            networks: RwLock::new(networks),
            store: Mutex::new(store),
            rules: RwLock::new(Arc::new(rules)),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        self.store.lock().expect("store lock").snapshot()
    }

    pub fn current_network(&self) -> Result<Arc<TransportNetwork>> {
        let networks = self.networks.read().expect("network lock");
        networks
            .current
            .map(|id| Arc::clone(&networks.snapshots[&id]))
            .ok_or(EngineError::NoNetwork)
    }

    /// Loads a network CSV. Re-ingesting the content of the current snapshot
    /// keeps its id; anything else becomes a new snapshot.
    pub fn ingest<R: Read>(&self, reader: R) -> Result<IngestReport> {
        let mut networks = self.networks.write().expect("network lock");
        let next = networks.snapshots.keys().next_back().map_or(1, |id| id + 1);
        let parsed = TransportNetwork::from_csv(next, reader)?;
        let csv = parsed.to_csv();
        if let Some(current) = networks.current.map(|id| &networks.snapshots[&id]) {
            if current.to_csv() == csv {
                return Ok(report(current));
            }
        }
        append_line(&self.dir.join(NETWORKS_FILE), &NetworkRow { snapshot_id: next, csv })?;
        let summary = report(&parsed);
        networks.snapshots.insert(next, Arc::new(parsed));
        networks.current = Some(next);
        Ok(summary)
    }

    pub fn ingest_path(&self, path: impl AsRef<Path>) -> Result<IngestReport> {
        self.ingest(File::open(path)?)
    }

    /// Runs the sweep for `request` against the current snapshot and stores
    /// the proposed itineraries. A request whose candidates are all discarded
    /// is still registered and comes back as [`EngineError::NoSolution`].
    pub fn create_request(&self, request: TransportRequest) -> Result<SessionView> {
        let network = self.current_network()?;
        let request = request.validated()?;
        let request_id = request.content_id(network.snapshot_id());
        let solutions = match sweep_solutions(&network, &request) {
            Ok(set) => Ok(set),
            Err(RouteError::NoSolution(diagnostic)) => Err(diagnostic),
            Err(e) => return Err(e.into()),
        };
        {
            let mut store = self.store.lock().expect("store lock");
            store.register_request(&request_id, network.snapshot_id(), &request)?;
            if let Ok(set) = &solutions {
                let itineraries: Vec<Itinerary> = set.itineraries().cloned().collect();
                store.record_proposed(&request_id, &itineraries)?;
            }
        }
        self.view(&request_id, None)
    }

    /// Ranked solutions of a request. `sort` defaults to the plan's key.
    pub fn solutions(&self, request_id: &str, sort: Option<RankKey>) -> Result<SessionView> {
        self.view(request_id, sort)
    }

    fn view(&self, request_id: &str, sort: Option<RankKey>) -> Result<SessionView> {
        let tables = self.snapshot();
        let session = self.session(&tables, request_id)?;
        let set = session.solutions.as_ref().map_err(|d| EngineError::NoSolution {
            request_id: request_id.to_string(),
            diagnostic: d.clone(),
        })?;
        let key = sort.unwrap_or_else(|| RankKey::default_for(session.request.plan));
        let solutions = if key == RankKey::FinalScore {
            self.ranked_recommendations(&tables, request_id, &session, set)?
                .into_iter()
                .map(|r| SolutionRow::new(r.itinerary_id, &r.itinerary))
                .collect()
        } else {
            rank_solutions(set.itineraries().cloned().collect(), key)?
                .into_iter()
                .map(|it| SolutionRow::new(transaction_id(request_id, &it), &it))
                .collect()
        };
        Ok(SessionView {
            request_id: request_id.to_string(),
            snapshot_id: session.network.snapshot_id(),
            state: session_state(&tables, request_id),
            solutions,
        })
    }

    pub fn recommend(&self, request_id: &str) -> Result<RecommendationsView> {
        let tables = self.snapshot();
        let session = self.session(&tables, request_id)?;
        let set = session
            .solutions
            .as_ref()
            .map_err(|_| EngineError::UnknownRequest(request_id.to_string()))?;
        Ok(RecommendationsView {
            request_id: request_id.to_string(),
            recommendations: self.ranked_recommendations(&tables, request_id, &session, set)?,
        })
    }

    fn ranked_recommendations(
        &self,
        tables: &StoreSnapshot,
        request_id: &str,
        session: &Session,
        set: &SolutionSet,
    ) -> Result<Vec<Recommendation>> {
        let rules = self.rules();
        let recommendations = set
            .itineraries()
            .map(|it| {
                let id = transaction_id(request_id, it);
                synthesize(&session.network, &id, it, set, &session.request, tables, &rules)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rank_solutions(recommendations, RankKey::FinalScore)?)
    }

    fn session(&self, tables: &StoreSnapshot, request_id: &str) -> Result<Session> {
        let row = tables
            .request(request_id)
            .ok_or_else(|| EngineError::UnknownRequest(request_id.to_string()))?;
        let network = {
            let networks = self.networks.read().expect("network lock");
            networks
                .snapshots
                .get(&row.snapshot_id)
                .cloned()
                .ok_or_else(|| EngineError::Corrupt {
                    file: NETWORKS_FILE,
                    line: 0,
                    message: format!("snapshot {} of request {request_id} is missing", row.snapshot_id),
                })?
        };
        let solutions = match sweep_solutions(&network, &row.request) {
            Ok(mut set) => {
                set.request_id = request_id.to_string();
                Ok(set)
            }
            Err(RouteError::NoSolution(d)) => Err(d),
            Err(e) => return Err(e.into()),
        };
        Ok(Session {
            request: row.request.clone(),
            network,
            solutions,
        })
    }

    pub fn details(&self, itinerary_id: &str) -> Result<DetailsView> {
        let tables = self.snapshot();
        let record = tables
            .transaction(itinerary_id)
            .ok_or_else(|| EngineError::UnknownItinerary(itinerary_id.to_string()))?;
        let it = &record.itinerary;
        let subroutes = it
            .legs()
            .iter()
            .enumerate()
            .map(|(n, leg)| SubrouteRow {
                subroute_number: n + 1,
                leg_id: leg.arc_id.clone(),
                loading: leg.origin.clone(),
                delivery: leg.destination.clone(),
                cost: leg.cost,
                duration: leg.duration,
                safety: leg.safety,
                dependability: leg.dependability,
                carrier_id: leg.carrier_id.clone(),
            })
            .collect();
        Ok(DetailsView {
            itinerary_id: itinerary_id.to_string(),
            request_id: record.request_id.clone(),
            status: record.status,
            total_cost: it.total_cost(),
            total_duration: it.total_duration(),
            safety: it.safety(),
            dependability: it.dependability(),
            subroutes,
        })
    }

    /// Top-`n` carriers on the origin and destination of arc `leg_id`.
    pub fn top_carriers(&self, leg_id: &str, n: usize) -> Result<TopCarriersView> {
        let network = self.current_network()?;
        let leg = network
            .arc(leg_id)
            .ok_or_else(|| EngineError::UnknownLeg(leg_id.to_string()))?;
        Ok(TopCarriersView {
            leg_id: leg_id.to_string(),
            origin: leg.origin.clone(),
            destination: leg.destination.clone(),
            carriers: self.snapshot().top_carriers(&network, &leg.origin, &leg.destination, n),
        })
    }

    pub fn compare(&self, leg_id: &str, carrier_id: &str) -> Result<CompareView> {
        let network = self.current_network()?;
        let leg = network
            .arc(leg_id)
            .ok_or_else(|| EngineError::UnknownLeg(leg_id.to_string()))?;
        let delta = compare_with_carrier(&network, leg, carrier_id, &self.snapshot())?;
        Ok(CompareView {
            leg_id: leg_id.to_string(),
            carrier_id: carrier_id.to_string(),
            delta,
        })
    }

    /// Selects one proposed itinerary. A request accepts a single selection.
    pub fn select(&self, itinerary_id: &str) -> Result<TransitionView> {
        let mut store = self.store.lock().expect("store lock");
        let tables = store.snapshot();
        let record = tables
            .transaction(itinerary_id)
            .ok_or_else(|| EngineError::UnknownItinerary(itinerary_id.to_string()))?;
        let taken = tables
            .transactions()
            .find(|t| t.request_id == record.request_id && t.status != TransactionStatus::Proposed);
        if let Some(t) = taken {
            if t.transaction_id != itinerary_id {
                return Err(EngineError::AlreadySelected {
                    request: record.request_id.clone(),
                    selected: t.transaction_id.clone(),
                });
            }
        }
        let record = store.select_and_complete(itinerary_id, TransactionStatus::Selected)?;
        Ok(TransitionView {
            transaction_id: record.transaction_id,
            status: record.status,
        })
    }

    pub fn complete(&self, transaction_id: &str) -> Result<TransitionView> {
        let mut store = self.store.lock().expect("store lock");
        let record = store.select_and_complete(transaction_id, TransactionStatus::Completed)?;
        Ok(TransitionView {
            transaction_id: record.transaction_id,
            status: record.status,
        })
    }

    pub fn rate(&self, transaction_id: &str, input: &RatingInput) -> Result<RatingView> {
        let mut store = self.store.lock().expect("store lock");
        store.record_rating(
            &input.user_id,
            transaction_id,
            &input.carrier_scores,
            input.transaction_scores,
        )?;
        let user = store.snapshot().user_reliability(input.user_id.trim());
        Ok(RatingView {
            transaction_id: transaction_id.to_string(),
            user_id: user.user_id,
            ratings_count: user.ratings_count,
            ur: user.ur,
        })
    }

    pub fn import_ratings<R: Read>(&self, reader: R) -> Result<usize> {
        Ok(self.store.lock().expect("store lock").import_carrier_ratings(reader)?)
    }

    /// Mines rules from the current store and replaces the rules file.
    pub fn mine_rules(&self, thresholds: MiningThresholds) -> Result<RulesView> {
        let tables = self.snapshot();
        let mined = mine_rules(&tables, thresholds)?;
        let mut current = self.rules.write().expect("rules lock");
        let tmp = self.dir.join(format!("{RULES_FILE}.tmp"));
        {
            let mut file = File::create(&tmp)?;
            write_rules(&mut file, &mined)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(RULES_FILE))?;
        *current = Arc::new(mined);
        Ok(rules_view(&current))
    }

    pub fn rules(&self) -> Arc<Vec<KnowledgeRule>> {
        Arc::clone(&self.rules.read().expect("rules lock"))
    }

    pub fn rules_view(&self) -> RulesView {
        rules_view(&self.rules())
    }

    pub fn export_rules_csv<W: Write>(&self, out: W) -> Result<()> {
        Ok(rules_to_csv(out, &self.rules())?)
    }
}

fn rules_view(rules: &[KnowledgeRule]) -> RulesView {
    RulesView {
        count: rules.len(),
        rules: rules.to_vec(),
    }
}

fn report(network: &TransportNetwork) -> IngestReport {
    IngestReport {
        snapshot_id: network.snapshot_id(),
        arcs: network.arcs().len(),
        terminals: network.terminals().count(),
    }
}

fn transaction_id(request_id: &str, it: &Itinerary) -> String {
    freightrec_core::store::transaction_id(request_id, it)
}

fn session_state(tables: &StoreSnapshot, request_id: &str) -> SessionState {
    let Some(t) = tables
        .transactions()
        .find(|t| t.request_id == request_id && t.status != TransactionStatus::Proposed)
    else {
        return SessionState::Open;
    };
    match t.status {
        TransactionStatus::Proposed => SessionState::Open,
        TransactionStatus::Selected => SessionState::Selected,
        TransactionStatus::Completed => {
            let rated = tables
                .transaction_ratings()
                .iter()
                .any(|r| r.transaction_id == t.transaction_id);
            if rated {
                SessionState::Rated
            } else {
                SessionState::Completed
            }
        }
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path, file: &'static str) -> Result<Vec<(usize, T)>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| EngineError::Corrupt {
            file,
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn append_line<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(row).map_err(io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}
