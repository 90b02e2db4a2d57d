//! Fixtures shared by unit tests.

use crate::network::{aggregate_itinerary, Itinerary, TransportNetwork};
use crate::route::{Plan, Solution, SolutionSet, TransportRequest};
use crate::store::{ScoreTriple, Store, TransactionStatus};

pub const ATHENS_PATRA: &str = "arc_id,origin,destination,carrier_id,cost_eur,duration_h,safety,dependability
A1,ATHENS,AIGIO,3,120.0,5.0,average,average
A2,AIGIO,PATRA,2,10.0,2.5,average,average
A3,ATHENS,PATRA,1,110.0,10.0,average,average
";

pub fn network(csv: &str) -> TransportNetwork {
    TransportNetwork::from_csv(1, csv.as_bytes()).unwrap()
}

pub fn path(net: &TransportNetwork, ids: &[&str]) -> Itinerary {
    aggregate_itinerary(ids.iter().map(|id| net.arc(id).unwrap().clone()).collect()).unwrap()
}

pub fn candidates(paths: &[Itinerary]) -> SolutionSet {
    SolutionSet {
        request_id: "R".into(),
        snapshot_id: 1,
        solutions: paths
            .iter()
            .map(|it| Solution {
                itinerary: it.clone(),
                generated_by: vec![],
            })
            .collect(),
    }
}

pub fn triple(s: i64) -> ScoreTriple {
    ScoreTriple::new(s, s, s).unwrap()
}

/// Proposes, selects and completes `itinerary` for a fresh request.
pub fn complete(store: &mut Store, user: &str, plan: Plan, itinerary: &Itinerary) -> String {
    let mut req = TransportRequest::new(itinerary.origin(), itinerary.destination(), plan);
    req.user_id = user.to_string();
    req.quantity = store.snapshot().revision() as f64;
    if plan == Plan::UserDefined {
        req.user_constraints = Some(Default::default());
    }
    let rid = req.content_id(1);
    store.register_request(&rid, 1, &req).unwrap();
    let tid = store
        .record_proposed(&rid, std::slice::from_ref(itinerary))
        .unwrap()
        .remove(0);
    store.select_and_complete(&tid, TransactionStatus::Selected).unwrap();
    store.select_and_complete(&tid, TransactionStatus::Completed).unwrap();
    tid
}

/// Completes and rates `itinerary` with the same triple on every leg and on the transaction.
pub fn complete_and_rate(store: &mut Store, user: &str, plan: Plan, itinerary: &Itinerary, score: i64) -> String {
    let tid = complete(store, user, plan, itinerary);
    let legs = vec![triple(score); itinerary.n_legs()];
    store.record_rating(user, &tid, &legs, triple(score)).unwrap();
    tid
}
