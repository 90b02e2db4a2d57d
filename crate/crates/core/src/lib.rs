//! Intermodal freight itinerary search and hybrid recommendation.
//!
//! - [`network`]: terminals, carrier arcs, fixed-point money and hours, itineraries.
//! - [`route`]: normalized arc weights, the eleven-step coefficient sweep,
//!   plan filtering and ranking.
//! - [`store`]: append-only tables of transactions, ratings and user reliability.
//! - [`scoring`]: per-leg, itinerary, cost and final scores.
//! - [`rules`]: knowledge-rule mining and CF/rule synthesis.

pub mod network;
pub mod route;
pub mod rules;
pub mod scoring;
pub mod store;

#[cfg(test)]
mod testutil;

pub use network::{
    aggregate_itinerary, parse_ordinal, CarrierArc, Hours, Itinerary, Money, OrdinalLevel, TransportNetwork,
};
pub use route::{
    rank_solutions, sweep_solutions, Plan, Preferences, RankKey, RouteError, Solution, SolutionSet, TransportRequest,
    WeightCoefficients,
};
pub use rules::{mine_rules, synthesize, KnowledgeRule, MiningThresholds, Recommendation};
pub use scoring::{final_score, ItineraryScore};
pub use store::{Store, StoreError, StoreSnapshot};
