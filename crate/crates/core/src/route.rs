//! Coefficient-sweep route search.
//!
//! Arc weights are the normalized cost and duration blended by a pair of
//! coefficients. Eleven blends from pure duration to pure cost are searched
//! with Dijkstra, the distinct paths are filtered by the requested plan and
//! then ranked.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::network::{aggregate_itinerary, terminal_id, Hours, Itinerary, Money, OrdinalLevel, TransportNetwork};

/// Resolution at which coefficients are held: one millionth.
const COEF_SCALE: u32 = 1_000_000;

/// Number of blends in a sweep (0.0, 0.1, ..., 1.0).
pub const SWEEP_STEPS: u8 = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("network has no arcs")]
    EmptyNetwork,
    #[error("unknown arc `{0}`")]
    UnknownArc(String),
    #[error("unknown terminal `{0}`")]
    UnknownTerminal(String),
    #[error("weights were normalized for snapshot {weights}, network is snapshot {network}")]
    SnapshotMismatch { weights: u64, network: u64 },
    #[error("invalid weight coefficients ({cost}, {duration}): each must be in [0,1] and sum to 1")]
    InvalidCoefficients { cost: f64, duration: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no solution: {0}")]
    NoSolution(NoSolutionDiagnostic),
    #[error("ranking by final score requires computed scores")]
    MissingScores,
}

/// Cost/duration blend used for one search. Held at 1e-6 resolution so that
/// the two shares always sum to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeightCoefficients {
    cost_millionths: u32,
}

impl WeightCoefficients {
    pub fn new(cost_coef: f64, duration_coef: f64) -> Result<Self, RouteError> {
        let invalid = RouteError::InvalidCoefficients {
            cost: cost_coef,
            duration: duration_coef,
        };
        let in_range = |x: f64| (0.0..=1.0).contains(&x);
        if !in_range(cost_coef) || !in_range(duration_coef) || (cost_coef + duration_coef - 1.0).abs() > 1e-12 {
            return Err(invalid);
        }
        Ok(WeightCoefficients {
            cost_millionths: (cost_coef * f64::from(COEF_SCALE)).round() as u32,
        })
    }

    /// Sweep step `i` in `0..=10`: cost share `i/10`, duration share `1 - i/10`.
    pub fn from_step(step: u8) -> Self {
        assert!(step < SWEEP_STEPS, "sweep step {step} out of range");
        WeightCoefficients {
            cost_millionths: u32::from(step) * (COEF_SCALE / 10),
        }
    }

    pub fn cost_coef(self) -> f64 {
        f64::from(self.cost_millionths) / f64::from(COEF_SCALE)
    }

    pub fn duration_coef(self) -> f64 {
        f64::from(COEF_SCALE - self.cost_millionths) / f64::from(COEF_SCALE)
    }

    fn cost_parts(self) -> u128 {
        u128::from(self.cost_millionths)
    }

    fn duration_parts(self) -> u128 {
        u128::from(COEF_SCALE - self.cost_millionths)
    }
}

impl Serialize for WeightCoefficients {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("WeightCoefficients", 2)?;
        s.serialize_field("cost_coef", &self.cost_coef())?;
        s.serialize_field("duration_coef", &self.duration_coef())?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for WeightCoefficients {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            cost_coef: f64,
            duration_coef: f64,
        }
        let r = Repr::deserialize(deserializer)?;
        WeightCoefficients::new(r.cost_coef, r.duration_coef).map_err(serde::de::Error::custom)
    }
}

/// The eleven blends of a sweep, pure duration first.
pub fn sweep_steps() -> impl Iterator<Item = WeightCoefficients> {
    (0..SWEEP_STEPS).map(WeightCoefficients::from_step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcWeight {
    pub w_cost: f64,
    pub w_duration: f64,
}

/// Per-arc cost and duration divided by the network-wide maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedWeights {
    pub weights: BTreeMap<String, ArcWeight>,
    pub max_cost: Money,
    pub max_duration: Hours,
    pub snapshot_id: u64,
}

pub fn normalize(network: &TransportNetwork) -> Result<NormalizedWeights, RouteError> {
    let arcs = network.arcs();
    let max_cost = arcs.iter().map(|a| a.cost).max().ok_or(RouteError::EmptyNetwork)?;
    let max_duration = arcs.iter().map(|a| a.duration).max().ok_or(RouteError::EmptyNetwork)?;
    let weights = arcs
        .iter()
        .map(|a| {
            let w_cost = if max_cost == Money::ZERO {
                0.0
            } else {
                a.cost.units() as f64 / max_cost.units() as f64
            };
            let w_duration = a.duration.units() as f64 / max_duration.units() as f64;
            (a.arc_id.clone(), ArcWeight { w_cost, w_duration })
        })
        .collect();
    Ok(NormalizedWeights {
        weights,
        max_cost,
        max_duration,
        snapshot_id: network.snapshot_id(),
    })
}

pub fn combined_weight(arc_id: &str, nw: &NormalizedWeights, k: WeightCoefficients) -> Result<f64, RouteError> {
    let w = nw
        .weights
        .get(arc_id)
        .ok_or_else(|| RouteError::UnknownArc(arc_id.to_string()))?;
    Ok(k.cost_coef() * w.w_cost + k.duration_coef() * w.w_duration)
}

/// Combined weight of every arc scaled by the positive constant
/// `COEF_SCALE * max_cost * max_duration`, so that path sums are exact integers.
fn scaled_weights(network: &TransportNetwork, nw: &NormalizedWeights, k: WeightCoefficients) -> Vec<u128> {
    let max_cost = nw.max_cost.units().max(1) as u128;
    let max_duration = nw.max_duration.units() as u128;
    network
        .arcs()
        .iter()
        .map(|a| {
            let cost_term = k.cost_parts() * a.cost.units() as u128 * max_duration;
            let duration_term = k.duration_parts() * a.duration.units() as u128 * max_cost;
            cost_term + duration_term
        })
        .collect()
}

/// Dijkstra label: total weight, leg count, arc ranks. Compared lexicographically,
/// which gives the fewer-legs then smallest-arc-id tie-break.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Label {
    weight: u128,
    legs: usize,
    arcs: Vec<usize>,
}

/// Minimum-weight path for blend `k`, or `None` if `destination` is unreachable.
pub fn shortest_path(
    network: &TransportNetwork,
    nw: &NormalizedWeights,
    k: WeightCoefficients,
    origin: &str,
    destination: &str,
) -> Result<Option<Itinerary>, RouteError> {
    if nw.snapshot_id != network.snapshot_id() {
        return Err(RouteError::SnapshotMismatch {
            weights: nw.snapshot_id,
            network: network.snapshot_id(),
        });
    }
    let source = network
        .terminal_index(origin)
        .ok_or_else(|| RouteError::UnknownTerminal(origin.to_string()))?;
    let target = network
        .terminal_index(destination)
        .ok_or_else(|| RouteError::UnknownTerminal(destination.to_string()))?;
    if source == target {
        return Ok(None);
    }

    let weights = scaled_weights(network, nw, k);
    let arcs = network.arcs();
    let mut best: Vec<Option<Label>> = vec![None; network.terminal_count()];
    let mut settled = vec![false; network.terminal_count()];
    let mut heap = BinaryHeap::new();
    let start = Label {
        weight: 0,
        legs: 0,
        arcs: Vec::new(),
    };
    best[source] = Some(start.clone());
    heap.push(Reverse((start, source)));

    while let Some(Reverse((label, node))) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if node == target {
            let legs = label.arcs.iter().map(|&i| arcs[i].clone()).collect();
            // Lexicographic labels never revisit a terminal, so aggregation cannot fail.
            return Ok(Some(aggregate_itinerary(legs).expect("dijkstra path is simple")));
        }
        for &arc in network.outgoing_from_index(node) {
            let next = network
                .terminal_index(&arcs[arc].destination)
                .expect("arc endpoints are terminals");
            if settled[next] {
                continue;
            }
            let mut path = label.arcs.clone();
            path.push(arc);
            let candidate = Label {
                weight: label.weight + weights[arc],
                legs: label.legs + 1,
                arcs: path,
            };
            if best[next].as_ref().is_none_or(|b| candidate < *b) {
                best[next] = Some(candidate.clone());
                heap.push(Reverse((candidate, next)));
            }
        }
    }
    Ok(None)
}

/// Raw per-step results of a sweep, before deduplication and filtering.
pub fn sweep_candidates(
    network: &TransportNetwork,
    nw: &NormalizedWeights,
    origin: &str,
    destination: &str,
) -> Result<Vec<(WeightCoefficients, Option<Itinerary>)>, RouteError> {
    sweep_steps()
        .map(|k| Ok((k, shortest_path(network, nw, k, origin, destination)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    Express,
    Economic,
    Safe,
    Dependable,
    UserDefined,
}

impl Plan {
    pub const ALL: [Plan; 5] = [
        Plan::Express,
        Plan::Economic,
        Plan::Safe,
        Plan::Dependable,
        Plan::UserDefined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Plan::Express => "express",
            Plan::Economic => "economic",
            Plan::Safe => "safe",
            Plan::Dependable => "dependable",
            Plan::UserDefined => "user_defined",
        }
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plan {
    type Err = RouteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "express" => Ok(Plan::Express),
            "economic" => Ok(Plan::Economic),
            "safe" => Ok(Plan::Safe),
            "dependable" => Ok(Plan::Dependable),
            "user_defined" | "userdefined" | "hybrid" => Ok(Plan::UserDefined),
            _ => Err(RouteError::InvalidRequest(format!("unknown plan `{s}`"))),
        }
    }
}

/// User preference weights for time, safety and dependability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPreferences")]
pub struct Preferences {
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Deserialize)]
struct RawPreferences {
    #[serde(default = "one")]
    a: f64,
    #[serde(default = "one")]
    b: f64,
    #[serde(default = "one")]
    c: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawPreferences> for Preferences {
    type Error = RouteError;
    fn try_from(r: RawPreferences) -> Result<Self, Self::Error> {
        Preferences::new(r.a, r.b, r.c)
    }
}

impl Preferences {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, RouteError> {
        let in_range = |x: f64| (0.0..=1.0).contains(&x);
        if !(in_range(a) && in_range(b) && in_range(c)) || a + b + c <= 0.0 {
            return Err(RouteError::InvalidRequest(format!(
                "preference coefficients ({a}, {b}, {c}) must lie in [0,1] with a positive sum"
            )));
        }
        Ok(Preferences { a, b, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c
    }
}

impl Default for Preferences {
    fn default() -> Self {
        Preferences { a: 1.0, b: 1.0, c: 1.0 }
    }
}

/// Criteria of the user-defined plan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cost: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_duration: Option<Hours>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_safety: Option<OrdinalLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dependability: Option<OrdinalLevel>,
}

fn anonymous() -> String {
    "anonymous".to_string()
}

/// A customer's transport request. The quantity is recorded but does not prune routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportRequest {
    pub origin: String,
    pub destination: String,
    #[serde(default)]
    pub quantity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cost: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_duration: Option<Hours>,
    pub plan: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_constraints: Option<UserConstraints>,
    #[serde(default, alias = "coefficients")]
    pub preferences: Preferences,
    #[serde(default = "anonymous")]
    pub user_id: String,
}

impl TransportRequest {
    pub fn new(origin: &str, destination: &str, plan: Plan) -> Self {
        TransportRequest {
            origin: origin.to_string(),
            destination: destination.to_string(),
            quantity: 0.0,
            max_cost: None,
            max_duration: None,
            plan,
            user_constraints: None,
            preferences: Preferences::default(),
            user_id: anonymous(),
        }
    }

    /// Checks the request and normalizes terminal ids to uppercase.
    pub fn validated(mut self) -> Result<Self, RouteError> {
        let invalid = |m: String| RouteError::InvalidRequest(m);
        self.origin = terminal_id(&self.origin).map_err(|e| invalid(format!("origin: {e}")))?;
        self.destination = terminal_id(&self.destination).map_err(|e| invalid(format!("destination: {e}")))?;
        if self.origin == self.destination {
            return Err(invalid("origin and destination must differ".into()));
        }
        if !(self.quantity.is_finite() && self.quantity >= 0.0) {
            return Err(invalid("quantity must be non-negative".into()));
        }
        if self.user_id.trim().is_empty() {
            return Err(invalid("user_id must not be empty".into()));
        }
        if self.plan == Plan::UserDefined && self.user_constraints.is_none() {
            return Err(invalid("the user-defined plan requires user_constraints".into()));
        }
        if self.plan != Plan::UserDefined && self.user_constraints.is_some() {
            return Err(invalid(
                "user_constraints are only valid with the user-defined plan".into(),
            ));
        }
        Preferences::new(self.preferences.a, self.preferences.b, self.preferences.c)?;
        Ok(self)
    }

    /// Content-addressed id of this request against a network snapshot.
    pub fn content_id(&self, snapshot_id: u64) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        format!("R{}", short_hash(&format!("{snapshot_id}\n{body}")))
    }

    fn cost_limit(&self) -> Option<Money> {
        let user = self.user_constraints.and_then(|u| u.max_cost);
        match (self.max_cost, user) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn duration_limit(&self) -> Option<Hours> {
        let user = self.user_constraints.and_then(|u| u.max_duration);
        match (self.max_duration, user) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn level_thresholds(&self) -> (Option<OrdinalLevel>, Option<OrdinalLevel>) {
        match self.plan {
            Plan::Express | Plan::Economic => (None, None),
            Plan::Safe => (Some(OrdinalLevel::High), Some(OrdinalLevel::Low)),
            Plan::Dependable => (Some(OrdinalLevel::Low), Some(OrdinalLevel::High)),
            Plan::UserDefined => {
                let u = self.user_constraints.unwrap_or_default();
                (u.min_safety, u.min_dependability)
            }
        }
    }
}

/// 16 hex digits of SHA-256.
pub(crate) fn short_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The constraint that eliminated a candidate itinerary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    MaxCost,
    MaxDuration,
    Safety,
    Dependability,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::MaxCost => "max_cost",
            Rejection::MaxDuration => "max_duration",
            Rejection::Safety => "safety",
            Rejection::Dependability => "dependability",
        })
    }
}

/// Why a sweep produced nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoSolutionDiagnostic {
    pub reachable: bool,
    pub candidates: usize,
    pub rejected_by: BTreeMap<Rejection, usize>,
}

impl fmt::Display for NoSolutionDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.reachable {
            return f.write_str("destination is unreachable from origin");
        }
        write!(f, "all {} candidate itineraries were discarded (", self.candidates)?;
        for (i, (reason, n)) in self.rejected_by.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{reason}: {n}")?;
        }
        f.write_str(")")
    }
}

/// First constraint `itinerary` violates, limits before plan levels.
pub fn check_plan(itinerary: &Itinerary, request: &TransportRequest) -> Result<(), Rejection> {
    if request.cost_limit().is_some_and(|max| itinerary.total_cost() > max) {
        return Err(Rejection::MaxCost);
    }
    if request
        .duration_limit()
        .is_some_and(|max| itinerary.total_duration() > max)
    {
        return Err(Rejection::MaxDuration);
    }
    let (min_safety, min_dependability) = request.level_thresholds();
    if min_safety.is_some_and(|min| itinerary.safety() < min) {
        return Err(Rejection::Safety);
    }
    if min_dependability.is_some_and(|min| itinerary.dependability() < min) {
        return Err(Rejection::Dependability);
    }
    Ok(())
}

pub fn filter_by_plan(candidates: Vec<Itinerary>, request: &TransportRequest) -> Vec<Itinerary> {
    candidates
        .into_iter()
        .filter(|it| check_plan(it, request).is_ok())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub itinerary: Itinerary,
    /// Sweep blends that produced this itinerary.
    pub generated_by: Vec<WeightCoefficients>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub request_id: String,
    pub snapshot_id: u64,
    pub solutions: Vec<Solution>,
}

impl SolutionSet {
    pub fn itineraries(&self) -> impl Iterator<Item = &Itinerary> {
        self.solutions.iter().map(|s| &s.itinerary)
    }

    pub fn contains(&self, itinerary: &Itinerary) -> bool {
        self.itineraries().any(|it| it.has_same_arcs(itinerary))
    }
}

/// Runs the full sweep for `request` and returns the surviving, ranked solutions.
pub fn sweep_solutions(network: &TransportNetwork, request: &TransportRequest) -> Result<SolutionSet, RouteError> {
    let request = request.clone().validated()?;
    for id in [&request.origin, &request.destination] {
        if network.terminal(id).is_none() {
            return Err(RouteError::UnknownTerminal(id.clone()));
        }
    }
    let nw = normalize(network)?;

    let mut distinct: Vec<Solution> = Vec::new();
    for (k, found) in sweep_candidates(network, &nw, &request.origin, &request.destination)? {
        let Some(itinerary) = found else { continue };
        match distinct.iter_mut().find(|s| s.itinerary.has_same_arcs(&itinerary)) {
            Some(existing) => existing.generated_by.push(k),
            None => distinct.push(Solution {
                itinerary,
                generated_by: vec![k],
            }),
        }
    }

    let mut diagnostic = NoSolutionDiagnostic {
        reachable: !distinct.is_empty(),
        candidates: distinct.len(),
        rejected_by: BTreeMap::new(),
    };
    let survivors: Vec<Solution> = distinct
        .into_iter()
        .filter(|s| match check_plan(&s.itinerary, &request) {
            Ok(()) => true,
            Err(reason) => {
                *diagnostic.rejected_by.entry(reason).or_default() += 1;
                false
            }
        })
        .collect();
    if survivors.is_empty() {
        return Err(RouteError::NoSolution(diagnostic));
    }

    Ok(SolutionSet {
        request_id: request.content_id(network.snapshot_id()),
        snapshot_id: network.snapshot_id(),
        solutions: rank_solutions(survivors, RankKey::default_for(request.plan))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    Cost,
    Duration,
    Safety,
    Dependability,
    FinalScore,
}

impl RankKey {
    pub fn default_for(plan: Plan) -> Self {
        match plan {
            Plan::Express => RankKey::Duration,
            _ => RankKey::Cost,
        }
    }
}

impl FromStr for RankKey {
    type Err = RouteError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cost" => Ok(RankKey::Cost),
            "duration" => Ok(RankKey::Duration),
            "safety" => Ok(RankKey::Safety),
            "dependability" => Ok(RankKey::Dependability),
            "final_score" | "final-score" | "score" => Ok(RankKey::FinalScore),
            _ => Err(RouteError::InvalidRequest(format!("unknown sort key `{s}`"))),
        }
    }
}

/// Anything that can be ordered as a solution.
pub trait Ranked {
    fn itinerary(&self) -> &Itinerary;

    /// Signed recommendation key, when scores have been computed.
    fn ranking_key(&self) -> Option<f64> {
        None
    }
}

impl Ranked for Itinerary {
    fn itinerary(&self) -> &Itinerary {
        self
    }
}

impl Ranked for Solution {
    fn itinerary(&self) -> &Itinerary {
        &self.itinerary
    }
}

/// Stable sort by `key`: ascending for cost and duration, descending for the
/// rest. Ties fall back to total cost, then the arc id sequence.
pub fn rank_solutions<T: Ranked>(mut items: Vec<T>, key: RankKey) -> Result<Vec<T>, RouteError> {
    if key == RankKey::FinalScore && items.iter().any(|i| i.ranking_key().is_none()) {
        return Err(RouteError::MissingScores);
    }
    items.sort_by(|x, y| compare_for_key(x, y, key));
    Ok(items)
}

fn compare_for_key<T: Ranked>(x: &T, y: &T, key: RankKey) -> Ordering {
    let (a, b) = (x.itinerary(), y.itinerary());
    let primary = match key {
        RankKey::Cost => a.total_cost().cmp(&b.total_cost()),
        RankKey::Duration => a.total_duration().cmp(&b.total_duration()),
        RankKey::Safety => b.safety().cmp(&a.safety()),
        RankKey::Dependability => b.dependability().cmp(&a.dependability()),
        RankKey::FinalScore => {
            let (ka, kb) = (x.ranking_key().unwrap_or(0.0), y.ranking_key().unwrap_or(0.0));
            kb.total_cmp(&ka)
        }
    };
    primary
        .then_with(|| a.total_cost().cmp(&b.total_cost()))
        .then_with(|| a.arc_ids().cmp(&b.arc_ids()))
}
