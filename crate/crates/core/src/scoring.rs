//! Recommendation scores for itineraries.
//!
//! Per leg, each of time, safety and dependability scores as the mean of the
//! reliability-weighted carrier average and transaction average, scaled by
//! the user's preference coefficient. The itinerary total normalizes the sum
//! of leg scores by `(a + b + c) * n`. Cost enters only through the ratio to
//! the cheapest candidate, and both are combined with the transloading
//! factor into the final score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{CarrierArc, Itinerary, TransportNetwork};
use crate::route::{Preferences, SolutionSet};
use crate::store::{Dimension, Tables};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("an itinerary needs at least one leg, got {0}")]
    InvalidLegCount(usize),
    #[error("cheapest candidate costs nothing; cost score is undefined")]
    ZeroMinCost,
    #[error("itinerary is not among the candidates")]
    NotACandidate,
    #[error("carrier `{carrier}` does not serve {origin}->{destination}")]
    CarrierNotOnLeg {
        carrier: String,
        origin: String,
        destination: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegScores {
    pub o_time: f64,
    pub o_safety: f64,
    pub o_dependability: f64,
}

impl LegScores {
    /// Unnormalized per-leg total.
    pub fn sum(&self) -> f64 {
        self.o_time + self.o_safety + self.o_dependability
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItineraryScore {
    pub o_total: f64,
    pub o_cost: f64,
    pub f: u32,
    /// Squared difference over `f`, as printed in the scoring formula.
    pub o_final_literal: f64,
    /// Signed square over `f`; used for ordering.
    pub ranking_key: f64,
    /// Completed selections of this exact itinerary. Never part of any score.
    pub popularity: usize,
}

pub fn leg_scores(leg: &CarrierArc, prefs: &Preferences, store: &Tables) -> LegScores {
    let detail = |dimension: Dimension, coefficient: f64| {
        let carrier = store.carrier_avg(&leg.carrier_id, &leg.origin, &leg.destination, dimension);
        let transaction = store.transaction_avg(&leg.origin, &leg.destination, dimension);
        (carrier + transaction) * coefficient / 2.0
    };
    LegScores {
        o_time: detail(Dimension::Time, prefs.a()),
        o_safety: detail(Dimension::Safety, prefs.b()),
        o_dependability: detail(Dimension::Dependability, prefs.c()),
    }
}

/// Transloadings for an itinerary of `n_legs`, with a direct route counted as 1.
pub fn transloading_factor(n_legs: usize) -> Result<u32, ScoringError> {
    match n_legs {
        0 => Err(ScoringError::InvalidLegCount(0)),
        1 => Ok(1),
        n => Ok((n - 1) as u32),
    }
}

pub fn itinerary_total(itinerary: &Itinerary, prefs: &Preferences, store: &Tables) -> f64 {
    let sum: f64 = itinerary
        .legs()
        .iter()
        .map(|leg| leg_scores(leg, prefs, store).sum())
        .sum();
    sum / (prefs.sum() * itinerary.n_legs() as f64)
}

pub fn cost_score(itinerary: &Itinerary, candidates: &SolutionSet) -> Result<f64, ScoringError> {
    if !candidates.contains(itinerary) {
        return Err(ScoringError::NotACandidate);
    }
    let min = candidates
        .itineraries()
        .map(|it| it.total_cost())
        .min()
        .ok_or(ScoringError::NotACandidate)?;
    if min.units() == 0 {
        return Err(ScoringError::ZeroMinCost);
    }
    Ok(itinerary.total_cost().units() as f64 / min.units() as f64)
}

pub fn final_score(
    itinerary: &Itinerary,
    candidates: &SolutionSet,
    prefs: &Preferences,
    store: &Tables,
) -> Result<ItineraryScore, ScoringError> {
    let f = transloading_factor(itinerary.n_legs())?;
    let o_cost = cost_score(itinerary, candidates)?;
    let o_total = itinerary_total(itinerary, prefs, store);
    let diff = o_total - o_cost;
    Ok(ItineraryScore {
        o_total,
        o_cost,
        f,
        o_final_literal: diff * diff / f64::from(f),
        ranking_key: diff * diff.abs() / f64::from(f),
        popularity: store.route_popularity(&itinerary.arc_ids()),
    })
}

/// Differences between an alternative carrier and the current leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierDelta {
    pub delta_cost: f64,
    pub delta_duration: f64,
    pub delta_rating: f64,
}

/// Compares `leg` with the cheapest offering of `alternative` on the same
/// origin and destination. Comparing against the leg's own carrier uses the
/// leg itself, so it is always zero.
pub fn compare_with_carrier(
    network: &TransportNetwork,
    leg: &CarrierArc,
    alternative: &str,
    store: &Tables,
) -> Result<CarrierDelta, ScoringError> {
    let standings = store.top_carriers(network, &leg.origin, &leg.destination, usize::MAX);
    let not_on_leg = || ScoringError::CarrierNotOnLeg {
        carrier: alternative.to_string(),
        origin: leg.origin.clone(),
        destination: leg.destination.clone(),
    };
    let alt = standings
        .iter()
        .find(|s| s.carrier_id == alternative)
        .ok_or_else(not_on_leg)?;
    if alternative == leg.carrier_id {
        return Ok(CarrierDelta {
            delta_cost: 0.0,
            delta_duration: 0.0,
            delta_rating: 0.0,
        });
    }
    let current_rating = store.composite_rating(&leg.carrier_id, &leg.origin, &leg.destination);
    Ok(CarrierDelta {
        delta_cost: (alt.cost - leg.cost).as_f64(),
        delta_duration: (alt.duration - leg.duration).as_f64(),
        delta_rating: alt.composite_rating - current_rating,
    })
}
