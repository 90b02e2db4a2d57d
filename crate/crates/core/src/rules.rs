//! Knowledge rules mined from completed transactions, and the synthesis step
//! that arbitrates between collaborative-filtering suggestions and fired rules.
//!
//! A rule reads "on leg (origin, destination) under plan P, prefer carrier C".
//! Support is the share of completed legs on that origin and destination
//! carried by C under P. Confidence is the share of those legs whose carrier
//! ratings average at least [`GOOD_RATING`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::network::{Itinerary, TransportNetwork};
use crate::route::{Plan, SolutionSet, TransportRequest};
use crate::scoring::{final_score, leg_scores, ItineraryScore, LegScores, ScoringError};
use crate::store::{Tables, TransactionStatus};

/// Mean carrier rating a leg needs to count towards a rule's confidence.
pub const GOOD_RATING: f64 = 4.0;

pub const DEFAULT_MIN_SUPPORT: f64 = 0.05;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.7;

/// Column layout of the rules CSV export.
pub const RULES_CSV_HEADER: &str = "origin,destination,plan,carrier_id,support,confidence";

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("threshold {name} = {value} must lie in (0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("corrupt rules file line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Plan part of a rule antecedent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlanMatch {
    Plan(Plan),
    Any,
}

impl PlanMatch {
    pub fn matches(self, plan: Plan) -> bool {
        match self {
            PlanMatch::Plan(p) => p == plan,
            PlanMatch::Any => true,
        }
    }
}

impl fmt::Display for PlanMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanMatch::Plan(p) => p.fmt(f),
            PlanMatch::Any => f.write_str("any"),
        }
    }
}

impl FromStr for PlanMatch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("any") {
            return Ok(PlanMatch::Any);
        }
        s.parse().map(PlanMatch::Plan).map_err(|e| e.to_string())
    }
}

impl Serialize for PlanMatch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PlanMatch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRule {
    pub rule_id: String,
    pub origin: String,
    pub destination: String,
    pub plan: PlanMatch,
    pub carrier_id: String,
    pub support: f64,
    pub confidence: f64,
    /// Store revision the rule was mined from.
    pub mined_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningThresholds {
    pub min_support: f64,
    pub min_confidence: f64,
}

impl Default for MiningThresholds {
    fn default() -> Self {
        MiningThresholds {
            min_support: DEFAULT_MIN_SUPPORT,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

impl MiningThresholds {
    pub fn new(min_support: f64, min_confidence: f64) -> Result<Self, RuleError> {
        for (name, value) in [("min_support", min_support), ("min_confidence", min_confidence)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(RuleError::InvalidThreshold { name, value });
            }
        }
        Ok(MiningThresholds {
            min_support,
            min_confidence,
        })
    }
}

#[derive(Default)]
struct Tally {
    legs: usize,
    good: usize,
}

/// Mines plan-specific carrier rules from completed transactions, ordered by
/// (origin, destination, plan, carrier).
pub fn mine_rules(store: &Tables, thresholds: MiningThresholds) -> Result<Vec<KnowledgeRule>, RuleError> {
    let thresholds = MiningThresholds::new(thresholds.min_support, thresholds.min_confidence)?;

    // Mean raw carrier score per rated leg, keyed by (transaction, origin, destination).
    let mut leg_ratings: BTreeMap<(&str, &str, &str), (f64, usize)> = BTreeMap::new();
    for r in store.carrier_ratings() {
        let slot = leg_ratings
            .entry((r.transaction_id.as_str(), r.origin.as_str(), r.destination.as_str()))
            .or_default();
        slot.0 += r.scores.mean();
        slot.1 += 1;
    }

    let mut per_leg: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut per_rule: BTreeMap<(&str, &str, Plan, &str), Tally> = BTreeMap::new();
    for t in store
        .transactions()
        .filter(|t| t.status == TransactionStatus::Completed)
    {
        for leg in t.itinerary.legs() {
            let od = (leg.origin.as_str(), leg.destination.as_str());
            *per_leg.entry(od).or_default() += 1;
            let tally = per_rule
                .entry((od.0, od.1, t.plan, leg.carrier_id.as_str()))
                .or_default();
            tally.legs += 1;
            let good = leg_ratings
                .get(&(t.transaction_id.as_str(), od.0, od.1))
                .is_some_and(|&(sum, n)| sum / n as f64 >= GOOD_RATING);
            if good {
                tally.good += 1;
            }
        }
    }

    let rules = per_rule
        .into_iter()
        .filter_map(|((origin, destination, plan, carrier), tally)| {
            let support = tally.legs as f64 / per_leg[&(origin, destination)] as f64;
            let confidence = tally.good as f64 / tally.legs as f64;
            (support >= thresholds.min_support && confidence >= thresholds.min_confidence).then(|| KnowledgeRule {
                rule_id: format!("{origin}:{destination}:{plan}:{carrier}"),
                origin: origin.to_string(),
                destination: destination.to_string(),
                plan: PlanMatch::Plan(plan),
                carrier_id: carrier.to_string(),
                support,
                confidence,
                mined_at: store.revision(),
            })
        })
        .collect();
    Ok(rules)
}

/// For every leg, the rule that fires, if any. Plan-specific rules beat
/// plan-any rules; then higher confidence, then higher support, then carrier id.
pub fn apply_rules<'r>(
    itinerary: &Itinerary,
    plan: Plan,
    rules: &'r [KnowledgeRule],
) -> Vec<Option<&'r KnowledgeRule>> {
    itinerary
        .legs()
        .iter()
        .map(|leg| {
            rules
                .iter()
                .filter(|r| r.origin == leg.origin && r.destination == leg.destination && r.plan.matches(plan))
                .min_by(|x, y| {
                    let specific = |r: &KnowledgeRule| matches!(r.plan, PlanMatch::Plan(_));
                    specific(y)
                        .cmp(&specific(x))
                        .then_with(|| y.confidence.total_cmp(&x.confidence))
                        .then_with(|| y.support.total_cmp(&x.support))
                        .then_with(|| x.carrier_id.cmp(&y.carrier_id))
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Cf,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegRecommendation {
    pub leg_id: String,
    pub origin: String,
    pub destination: String,
    pub current_carrier: String,
    /// Head of the Top-N carriers table for this leg.
    pub cf_suggested: Option<String>,
    pub rule_suggested: Option<String>,
    pub rule_id: Option<String>,
    pub applied: Technique,
    /// Carrier finally recommended for the leg.
    pub suggestion: Option<String>,
    pub scores: LegScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub itinerary_id: String,
    pub itinerary: Itinerary,
    pub scores: ItineraryScore,
    pub legs: Vec<LegRecommendation>,
    pub explanation: String,
}

impl crate::route::Ranked for Recommendation {
    fn itinerary(&self) -> &Itinerary {
        &self.itinerary
    }

    fn ranking_key(&self) -> Option<f64> {
        Some(self.scores.ranking_key)
    }
}

/// Scores `itinerary` and picks a carrier per leg: the CF suggestion unless a
/// rule fires, in which case the rule's carrier is used.
pub fn synthesize(
    network: &TransportNetwork,
    itinerary_id: &str,
    itinerary: &Itinerary,
    candidates: &SolutionSet,
    request: &TransportRequest,
    store: &Tables,
    rules: &[KnowledgeRule],
) -> Result<Recommendation, RuleError> {
    let scores = final_score(itinerary, candidates, &request.preferences, store)?;
    let fired = apply_rules(itinerary, request.plan, rules);

    let mut notes = Vec::with_capacity(itinerary.n_legs());
    let legs: Vec<LegRecommendation> = itinerary
        .legs()
        .iter()
        .zip(fired)
        .map(|(leg, rule)| {
            let cf = store
                .top_carriers(network, &leg.origin, &leg.destination, 1)
                .into_iter()
                .next()
                .map(|s| s.carrier_id);
            let (applied, suggestion) = match rule {
                Some(r) => (Technique::Rule, Some(r.carrier_id.clone())),
                None => (Technique::Cf, cf.clone()),
            };
            notes.push(match (rule, &suggestion) {
                (Some(r), _) => format!(
                    "{}->{}: rule {} (support {:.2}, confidence {:.2}) suggests carrier {}",
                    leg.origin, leg.destination, r.rule_id, r.support, r.confidence, r.carrier_id
                ),
                (None, Some(c)) => format!("{}->{}: top-rated carrier {c}", leg.origin, leg.destination),
                (None, None) => format!("{}->{}: no rated carrier", leg.origin, leg.destination),
            });
            LegRecommendation {
                leg_id: leg.arc_id.clone(),
                origin: leg.origin.clone(),
                destination: leg.destination.clone(),
                current_carrier: leg.carrier_id.clone(),
                cf_suggested: cf,
                rule_suggested: rule.map(|r| r.carrier_id.clone()),
                rule_id: rule.map(|r| r.rule_id.clone()),
                applied,
                suggestion,
                scores: leg_scores(leg, &request.preferences, store),
            }
        })
        .collect();

    Ok(Recommendation {
        itinerary_id: itinerary_id.to_string(),
        itinerary: itinerary.clone(),
        scores,
        legs,
        explanation: notes.join("; "),
    })
}

/// Writes one JSON rule per line.
pub fn write_rules<W: Write>(mut out: W, rules: &[KnowledgeRule]) -> io::Result<()> {
    for rule in rules {
        serde_json::to_writer(&mut out, rule)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_rules<R: BufRead>(input: R) -> Result<Vec<KnowledgeRule>, RuleError> {
    let mut rules = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rules.push(serde_json::from_str(&line).map_err(|e| RuleError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rules)
}

pub fn rules_to_csv<W: Write>(out: W, rules: &[KnowledgeRule]) -> io::Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(RULES_CSV_HEADER.split(','))?;
    for r in rules {
        csv.write_record([
            r.origin.clone(),
            r.destination.clone(),
            r.plan.to_string(),
            r.carrier_id.clone(),
            r.support.to_string(),
            r.confidence.to_string(),
        ])?;
    }
    csv.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route::{sweep_solutions, Plan};
    use crate::store::Store;
    use crate::testutil::*;
    use proptest::prelude::*;

    const SAFE_LEG: &str = "arc_id,origin,destination,carrier_id,cost_eur,duration_h,safety,dependability
S3,ATHENS,AIGIO,3,120.0,5.0,high,average
S2,ATHENS,AIGIO,2,100.0,6.0,high,average
P2,AIGIO,PATRA,2,10.0,2.5,high,average
";

    /// Ten completed Safe-plan legs ATHENS->AIGIO: eight by carrier 3 rated
    /// `rating`, two by carrier 2 rated 3.
    fn history(rating: i64) -> (TransportNetwork, Store) {
        let net = network(SAFE_LEG);
        let mut store = Store::in_memory();
        let (by3, by2) = (path(&net, &["S3"]), path(&net, &["S2"]));
        for i in 0..8 {
            complete_and_rate(&mut store, &format!("user{i}"), Plan::Safe, &by3, rating);
        }
        for i in 0..2 {
            complete_and_rate(&mut store, &format!("other{i}"), Plan::Safe, &by2, 3);
        }
        (net, store)
    }

    fn rule(origin: &str, destination: &str, plan: PlanMatch, carrier: &str, confidence: f64) -> KnowledgeRule {
        KnowledgeRule {
            rule_id: format!("{origin}:{destination}:{plan}:{carrier}"),
            origin: origin.into(),
            destination: destination.into(),
            plan,
            carrier_id: carrier.into(),
            support: 0.5,
            confidence,
            mined_at: 0,
        }
    }

    #[test]
    fn empty_history_has_no_rules() {
        let store = Store::in_memory();
        assert!(mine_rules(&store.snapshot(), MiningThresholds::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mines_the_good_carrier() {
        let (_, store) = history(5);
        let rules = mine_rules(&store.snapshot(), MiningThresholds::default()).unwrap();
        assert_eq!(rules.len(), 1);
        let r = &rules[0];
        assert_eq!((r.origin.as_str(), r.destination.as_str()), ("ATHENS", "AIGIO"));
        assert_eq!(r.plan, PlanMatch::Plan(Plan::Safe));
        assert_eq!(r.carrier_id, "3");
        assert_eq!((r.support, r.confidence), (0.8, 1.0));
    }

    #[test]
    fn mediocre_ratings_mine_nothing() {
        let (_, store) = history(3);
        assert!(mine_rules(&store.snapshot(), MiningThresholds::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unrated_legs_lower_confidence() {
        let net = network(SAFE_LEG);
        let mut store = Store::in_memory();
        let by3 = path(&net, &["S3"]);
        for i in 0..3 {
            complete_and_rate(&mut store, &format!("u{i}"), Plan::Safe, &by3, 5);
        }
        complete(&mut store, "u9", Plan::Safe, &by3);
        let rules = mine_rules(&store.snapshot(), MiningThresholds::default()).unwrap();
        assert_eq!(rules[0].confidence, 0.75);
        let strict = MiningThresholds::new(0.05, 0.8).unwrap();
        assert!(mine_rules(&store.snapshot(), strict).unwrap().is_empty());
    }

    #[test]
    fn threshold_validation() {
        assert!(MiningThresholds::new(0.0, 0.7).is_err());
        assert!(MiningThresholds::new(0.1, 1.5).is_err());
        assert!(MiningThresholds::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn rule_selection_order() {
        let net = network(SAFE_LEG);
        let it = path(&net, &["S3", "P2"]);
        assert_eq!(apply_rules(&it, Plan::Safe, &[]), vec![None, None]);

        let rules = vec![
            rule("ATHENS", "AIGIO", PlanMatch::Plan(Plan::Safe), "2", 0.8),
            rule("ATHENS", "AIGIO", PlanMatch::Plan(Plan::Safe), "3", 0.9),
            rule("ATHENS", "AIGIO", PlanMatch::Plan(Plan::Express), "7", 1.0),
        ];
        let fired = apply_rules(&it, Plan::Safe, &rules);
        assert_eq!(fired[0].map(|r| r.carrier_id.as_str()), Some("3"));
        assert!(fired[1].is_none());

        let rules = vec![
            rule("AIGIO", "PATRA", PlanMatch::Any, "9", 0.9),
            rule("AIGIO", "PATRA", PlanMatch::Plan(Plan::Safe), "2", 0.75),
        ];
        let fired = apply_rules(&it, Plan::Safe, &rules);
        assert_eq!(fired[1].map(|r| r.carrier_id.as_str()), Some("2"));
        let fired = apply_rules(&it, Plan::Economic, &rules);
        assert_eq!(fired[1].map(|r| r.carrier_id.as_str()), Some("9"));
    }

    fn recommend(net: &TransportNetwork, store: &Store, plan: Plan, rules: &[KnowledgeRule]) -> Vec<Recommendation> {
        let request = TransportRequest::new("ATHENS", "AIGIO", plan);
        let set = sweep_solutions(net, &request).unwrap();
        set.itineraries()
            .map(|it| synthesize(net, "I", it, &set, &request, &store.snapshot(), rules).unwrap())
            .collect()
    }

    #[test]
    fn cold_start_synthesis_uses_cf() {
        let net = network(ATHENS_PATRA);
        let store = Store::in_memory();
        let request = TransportRequest::new("ATHENS", "PATRA", Plan::Economic);
        let set = sweep_solutions(&net, &request).unwrap();
        for it in set.itineraries() {
            let rec = synthesize(&net, "I", it, &set, &request, &store.snapshot(), &[]).unwrap();
            for (leg, arc) in rec.legs.iter().zip(it.legs()) {
                assert_eq!(leg.applied, Technique::Cf);
                assert_eq!(leg.cf_suggested.as_deref(), Some(arc.carrier_id.as_str()));
                assert_eq!(leg.suggestion, leg.cf_suggested);
            }
            assert_eq!(rec.scores.o_total, 3.0);
        }
    }

    #[test]
    fn rule_overrides_cf() {
        let (net, mut store) = history(5);
        // Make carrier 2 the CF favourite on ATHENS->AIGIO through a prolific rater.
        let leg = path(&net, &["P2"]);
        for _ in 0..9 {
            complete_and_rate(&mut store, "pro", Plan::Economic, &leg, 3);
        }
        let by2 = path(&net, &["S2"]);
        complete_and_rate(&mut store, "pro", Plan::Economic, &by2, 5);
        let rules = vec![rule("ATHENS", "AIGIO", PlanMatch::Plan(Plan::Safe), "3", 1.0)];

        for rec in recommend(&net, &store, Plan::Safe, &rules) {
            let leg = &rec.legs[0];
            assert_eq!(leg.cf_suggested.as_deref(), Some("2"));
            assert_eq!(leg.applied, Technique::Rule);
            assert_eq!(leg.suggestion.as_deref(), Some("3"));
            assert!(rec.explanation.contains("rule"));
        }
    }

    #[test]
    fn agreeing_rule_is_still_reported() {
        let net = network(SAFE_LEG);
        let store = Store::in_memory();
        // Cold start: both carriers sit at the prior, so CF picks carrier 2 by id.
        let rules = vec![rule("ATHENS", "AIGIO", PlanMatch::Any, "2", 0.9)];
        for rec in recommend(&net, &store, Plan::Safe, &rules) {
            assert_eq!(rec.legs[0].cf_suggested.as_deref(), Some("2"));
            assert_eq!(rec.legs[0].applied, Technique::Rule);
            assert_eq!(rec.legs[0].suggestion.as_deref(), Some("2"));
        }
    }

    #[test]
    fn no_rules_means_pure_cf() {
        let (net, store) = history(5);
        let unrelated = vec![rule("PATRA", "AIGIO", PlanMatch::Any, "2", 0.9)];
        assert_eq!(
            recommend(&net, &store, Plan::Safe, &[]),
            recommend(&net, &store, Plan::Safe, &unrelated)
        );
    }

    #[test]
    fn rule_files_round_trip_and_csv() {
        let (_, store) = history(5);
        let rules = mine_rules(&store.snapshot(), MiningThresholds::default()).unwrap();
        let mut first = Vec::new();
        write_rules(&mut first, &rules).unwrap();
        let again = mine_rules(&store.snapshot(), MiningThresholds::default()).unwrap();
        let mut second = Vec::new();
        write_rules(&mut second, &again).unwrap();
        assert_eq!(first, second);
        assert_eq!(read_rules(first.as_slice()).unwrap(), rules);

        let mut csv = Vec::new();
        rules_to_csv(&mut csv, &rules).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            format!("{RULES_CSV_HEADER}\nATHENS,AIGIO,safe,3,0.8,1\n")
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn thresholds_hold_and_lowering_them_keeps_rules(
            history in prop::collection::vec((0usize..2, 0usize..3, 1i64..=5, 0usize..4), 1..16),
            support in 0.05f64..1.0,
            confidence in 0.05f64..1.0,
            relax in 0.0f64..1.0,
        ) {
            let net = network(SAFE_LEG);
            let mut store = Store::in_memory();
            let paths = [path(&net, &["S3"]), path(&net, &["S2"])];
            let plans = [Plan::Safe, Plan::Economic, Plan::Express];
            for (i, &(p, plan, score, user)) in history.iter().enumerate() {
                if i % 3 == 2 {
                    complete(&mut store, &format!("u{user}"), plans[plan], &paths[p]);
                } else {
                    complete_and_rate(&mut store, &format!("u{user}"), plans[plan], &paths[p], score);
                }
            }
            let strict = MiningThresholds::new(support, confidence).unwrap();
            let loose = MiningThresholds::new(support * relax.max(0.01), confidence * relax.max(0.01)).unwrap();
            let strict_rules = mine_rules(&store.snapshot(), strict).unwrap();
            let loose_rules = mine_rules(&store.snapshot(), loose).unwrap();
            for r in &strict_rules {
                prop_assert!(r.support >= support && r.confidence >= confidence);
                prop_assert!(loose_rules.contains(r));
            }
        }
    }
}
