//! Transport network graph, ordinal quality levels and itinerary aggregation.
//!
//! Money and durations are fixed-point so that sums over legs are exact:
//! [`Money`] counts euro cents and [`Hours`] counts tenths of an hour.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Column layout of the network ingestion CSV.
pub const NETWORK_CSV_HEADER: [&str; 8] = [
    "arc_id",
    "origin",
    "destination",
    "carrier_id",
    "cost_eur",
    "duration_h",
    "safety",
    "dependability",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("unknown ordinal level `{0}`")]
    UnknownOrdinal(String),
    #[error("invalid {what} `{value}`")]
    InvalidAmount { what: &'static str, value: String },
    #[error("invalid token `{0}`")]
    InvalidToken(String),
    #[error("arc `{0}`: origin equals destination")]
    SelfLoop(String),
    #[error("arc `{0}`: duration must be positive")]
    NonPositiveDuration(String),
    #[error("arc `{0}`: cost must be non-negative")]
    NegativeCost(String),
    #[error("duplicate arc id `{0}`")]
    DuplicateArc(String),
    #[error("itinerary has no legs")]
    EmptyItinerary,
    #[error("legs are not connected: `{from}` ends at {at_end}, next leg `{to}` starts at {next_start}")]
    DisconnectedPath {
        from: String,
        to: String,
        at_end: String,
        next_start: String,
    },
    #[error("terminal {0} is visited twice")]
    RepeatedTerminal(String),
    #[error("bad network CSV header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("network CSV line {line}: {message}")]
    Csv { line: u64, message: String },
}

/// Parses a non-negative decimal literal into an integer number of `1/10^scale` units.
/// Digits beyond `scale` must be zero, so the value is represented exactly.
fn parse_fixed(text: &str, scale: u32, what: &'static str) -> Result<i64, NetworkError> {
    let bad = || NetworkError::InvalidAmount {
        what,
        value: text.to_string(),
    };
    let text = text.trim();
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let (kept, dropped) = frac_part.split_at(frac_part.len().min(scale as usize));
    if dropped.bytes().any(|b| b != b'0') {
        return Err(bad());
    }
    let mut value: i64 = 0;
    for b in int_part.bytes().chain(kept.bytes()) {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(i64::from(b - b'0')))
            .ok_or_else(bad)?;
    }
    for _ in kept.len()..scale as usize {
        value = value.checked_mul(10).ok_or_else(bad)?;
    }
    Ok(if negative { -value } else { value })
}

fn fixed_from_f64(value: f64, scale: u32, what: &'static str) -> Result<i64, NetworkError> {
    let factor = 10f64.powi(scale as i32);
    let scaled = value * factor;
    let rounded = scaled.round();
    if !value.is_finite() || (scaled - rounded).abs() > 1e-6 || rounded.abs() > 9e15 {
        return Err(NetworkError::InvalidAmount {
            what,
            value: value.to_string(),
        });
    }
    Ok(rounded as i64)
}

macro_rules! fixed_point {
    ($name:ident, $scale:expr, $what:expr, $doc:expr) => {
        #[doc = $doc]
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(i64);

        impl $name {
            pub const ZERO: $name = $name(0);
            const FACTOR: i64 = 10i64.pow($scale);

            /// Builds a value from its raw count of fixed-point units.
            pub const fn from_units(units: i64) -> Self {
                $name(units)
            }

            pub const fn units(self) -> i64 {
                self.0
            }

            pub fn from_f64(value: f64) -> Result<Self, NetworkError> {
                fixed_from_f64(value, $scale, $what).map($name)
            }

            pub fn as_f64(self) -> f64 {
                self.0 as f64 / Self::FACTOR as f64
            }
        }

        impl FromStr for $name {
            type Err = NetworkError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_fixed(s, $scale, $what).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let sign = if self.0 < 0 { "-" } else { "" };
                let abs = self.0.unsigned_abs();
                let factor = Self::FACTOR as u64;
                write!(
                    f,
                    "{sign}{}.{:0width$}",
                    abs / factor,
                    abs % factor,
                    width = $scale as usize
                )
            }
        }

        impl std::ops::Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl std::ops::Sub for $name {
            type Output = $name;
            fn sub(self, rhs: $name) -> $name {
                $name(self.0 - rhs.0)
            }
        }

        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                iter.fold($name::ZERO, |acc, x| acc + x)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_f64(self.as_f64())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let value = f64::deserialize(deserializer)?;
                $name::from_f64(value).map_err(serde::de::Error::custom)
            }
        }
    };
}

fixed_point!(Money, 2, "amount", "Euro amount held as an integer number of cents.");
fixed_point!(
    Hours,
    1,
    "duration",
    "Duration held as an integer number of tenths of an hour."
);

/// Five-point quality scale used for safety and dependability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrdinalLevel {
    VeryLow = 1,
    Low = 2,
    Average = 3,
    High = 4,
    VeryHigh = 5,
}

impl OrdinalLevel {
    pub const ALL: [OrdinalLevel; 5] = [
        OrdinalLevel::VeryLow,
        OrdinalLevel::Low,
        OrdinalLevel::Average,
        OrdinalLevel::High,
        OrdinalLevel::VeryHigh,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(value: u8) -> Option<Self> {
        Self::ALL.get(usize::from(value).checked_sub(1)?).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            OrdinalLevel::VeryLow => "very low",
            OrdinalLevel::Low => "low",
            OrdinalLevel::Average => "average",
            OrdinalLevel::High => "high",
            OrdinalLevel::VeryHigh => "very high",
        }
    }
}

/// Parses a level label, case-insensitively. `medium` is accepted for `average`.
pub fn parse_ordinal(label: &str) -> Result<OrdinalLevel, NetworkError> {
    let normalized = label
        .trim()
        .to_ascii_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    Ok(match normalized.as_str() {
        "very low" => OrdinalLevel::VeryLow,
        "low" => OrdinalLevel::Low,
        "average" | "medium" => OrdinalLevel::Average,
        "high" => OrdinalLevel::High,
        "very high" => OrdinalLevel::VeryHigh,
        _ => return Err(NetworkError::UnknownOrdinal(label.to_string())),
    })
}

impl FromStr for OrdinalLevel {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ordinal(s)
    }
}

impl fmt::Display for OrdinalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for OrdinalLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for OrdinalLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Label(String),
            Value(u8),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Label(label) => parse_ordinal(&label).map_err(serde::de::Error::custom),
            Repr::Value(v) => OrdinalLevel::from_value(v)
                .ok_or_else(|| serde::de::Error::custom(format!("ordinal level {v} out of range"))),
        }
    }
}

fn check_token(raw: &str) -> Result<String, NetworkError> {
    let token = raw.trim();
    if token.is_empty() || token.chars().any(|c| c.is_whitespace() || c == ',' || c == '/') {
        return Err(NetworkError::InvalidToken(raw.to_string()));
    }
    Ok(token.to_string())
}

/// Terminal ids are uppercase tokens; input is normalized.
pub fn terminal_id(raw: &str) -> Result<String, NetworkError> {
    check_token(raw).map(|t| t.to_uppercase())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CarrierArc {
    pub arc_id: String,
    pub origin: String,
    pub destination: String,
    pub carrier_id: String,
    pub cost: Money,
    pub duration: Hours,
    pub safety: OrdinalLevel,
    pub dependability: OrdinalLevel,
}

impl CarrierArc {
    /// Validates and normalizes a single carrier offering.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        arc_id: &str,
        origin: &str,
        destination: &str,
        carrier_id: &str,
        cost: Money,
        duration: Hours,
        safety: OrdinalLevel,
        dependability: OrdinalLevel,
    ) -> Result<Self, NetworkError> {
        let arc = CarrierArc {
            arc_id: check_token(arc_id)?,
            origin: terminal_id(origin)?,
            destination: terminal_id(destination)?,
            carrier_id: check_token(carrier_id)?,
            cost,
            duration,
            safety,
            dependability,
        };
        arc.validate()?;
        Ok(arc)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.origin == self.destination {
            return Err(NetworkError::SelfLoop(self.arc_id.clone()));
        }
        if self.cost < Money::ZERO {
            return Err(NetworkError::NegativeCost(self.arc_id.clone()));
        }
        if self.duration <= Hours::ZERO {
            return Err(NetworkError::NonPositiveDuration(self.arc_id.clone()));
        }
        Ok(())
    }
}

/// Immutable network snapshot. Arcs are kept sorted by `arc_id`, so an arc's
/// index doubles as its rank in lexicographic id order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportNetwork {
    snapshot_id: u64,
    terminals: BTreeMap<String, Terminal>,
    arcs: Vec<CarrierArc>,
    arc_index: HashMap<String, usize>,
    terminal_index: HashMap<String, usize>,
    outgoing: Vec<Vec<usize>>,
}

impl TransportNetwork {
    /// Builds a snapshot. Terminals are the set of arc endpoints.
    pub fn new(snapshot_id: u64, mut arcs: Vec<CarrierArc>) -> Result<Self, NetworkError> {
        for arc in &arcs {
            arc.validate()?;
        }
        arcs.sort_by(|a, b| a.arc_id.cmp(&b.arc_id));
        if let Some(pair) = arcs.windows(2).find(|w| w[0].arc_id == w[1].arc_id) {
            return Err(NetworkError::DuplicateArc(pair[0].arc_id.clone()));
        }

        let ids: BTreeSet<&str> = arcs
            .iter()
            .flat_map(|a| [a.origin.as_str(), a.destination.as_str()])
            .collect();
        let terminals: BTreeMap<String, Terminal> = ids
            .iter()
            .map(|id| {
                let terminal = Terminal {
                    id: id.to_string(),
                    display_name: display_name(id),
                };
                (id.to_string(), terminal)
            })
            .collect();
        let terminal_index: HashMap<String, usize> =
            terminals.keys().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut outgoing = vec![Vec::new(); terminals.len()];
        for (i, arc) in arcs.iter().enumerate() {
            outgoing[terminal_index[&arc.origin]].push(i);
        }
        let arc_index = arcs.iter().enumerate().map(|(i, a)| (a.arc_id.clone(), i)).collect();

        Ok(TransportNetwork {
            snapshot_id,
            terminals,
            arcs,
            arc_index,
            terminal_index,
            outgoing,
        })
    }

    /// Reads the ingestion CSV. The header must match [`NETWORK_CSV_HEADER`] exactly.
    pub fn from_csv<R: Read>(snapshot_id: u64, reader: R) -> Result<Self, NetworkError> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv
            .headers()
            .map_err(|e| NetworkError::Csv {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if header.iter().ne(NETWORK_CSV_HEADER.iter().copied()) {
            return Err(NetworkError::BadHeader {
                expected: NETWORK_CSV_HEADER.join(","),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }

        let mut arcs = Vec::new();
        for record in csv.records() {
            let record = record.map_err(|e| NetworkError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(i).unwrap_or("");
            let arc = (|| {
                CarrierArc::new(
                    field(0),
                    field(1),
                    field(2),
                    field(3),
                    field(4).parse()?,
                    field(5).parse()?,
                    parse_ordinal(field(6))?,
                    parse_ordinal(field(7))?,
                )
            })()
            .map_err(|e| NetworkError::Csv {
                line,
                message: e.to_string(),
            })?;
            arcs.push(arc);
        }
        Self::new(snapshot_id, arcs)
    }

    /// Canonical CSV rendering, arcs in id order.
    pub fn to_csv(&self) -> String {
        let mut out = NETWORK_CSV_HEADER.join(",");
        out.push('\n');
        for a in &self.arcs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                a.arc_id, a.origin, a.destination, a.carrier_id, a.cost, a.duration, a.safety, a.dependability
            ));
        }
        out
    }

    pub fn snapshot_id(&self) -> u64 {
        self.snapshot_id
    }

    pub fn terminals(&self) -> impl Iterator<Item = &Terminal> {
        self.terminals.values()
    }

    pub fn terminal(&self, id: &str) -> Option<&Terminal> {
        self.terminals.get(id)
    }

    pub fn arcs(&self) -> &[CarrierArc] {
        &self.arcs
    }

    pub fn arc(&self, arc_id: &str) -> Option<&CarrierArc> {
        self.arc_index.get(arc_id).map(|&i| &self.arcs[i])
    }

    /// All offerings from `origin` to `destination`, in arc id order.
    pub fn arcs_between<'a>(
        &'a self,
        origin: &'a str,
        destination: &'a str,
    ) -> impl Iterator<Item = &'a CarrierArc> + 'a {
        self.outgoing_indices(origin)
            .iter()
            .map(|&i| &self.arcs[i])
            .filter(move |a| a.destination == destination)
    }

    pub(crate) fn terminal_index(&self, id: &str) -> Option<usize> {
        self.terminal_index.get(id).copied()
    }

    pub(crate) fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    pub(crate) fn outgoing_from_index(&self, terminal: usize) -> &[usize] {
        &self.outgoing[terminal]
    }

    fn outgoing_indices(&self, id: &str) -> &[usize] {
        match self.terminal_index.get(id) {
            Some(&i) => &self.outgoing[i],
            None => &[],
        }
    }
}

fn display_name(id: &str) -> String {
    let mut chars = id.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

/// An ordered, connected, simple sequence of legs with exact aggregate totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Itinerary {
    legs: Vec<CarrierArc>,
    total_cost: Money,
    total_duration: Hours,
    safety: OrdinalLevel,
    dependability: OrdinalLevel,
}

impl Itinerary {
    pub fn legs(&self) -> &[CarrierArc] {
        &self.legs
    }

    pub fn total_cost(&self) -> Money {
        self.total_cost
    }

    pub fn total_duration(&self) -> Hours {
        self.total_duration
    }

    pub fn safety(&self) -> OrdinalLevel {
        self.safety
    }

    pub fn dependability(&self) -> OrdinalLevel {
        self.dependability
    }

    pub fn n_legs(&self) -> usize {
        self.legs.len()
    }

    pub fn origin(&self) -> &str {
        &self.legs[0].origin
    }

    pub fn destination(&self) -> &str {
        &self.legs[self.legs.len() - 1].destination
    }

    pub fn arc_ids(&self) -> Vec<&str> {
        self.legs.iter().map(|l| l.arc_id.as_str()).collect()
    }

    pub fn has_same_arcs(&self, other: &Itinerary) -> bool {
        self.legs.len() == other.legs.len() && self.legs.iter().zip(&other.legs).all(|(a, b)| a.arc_id == b.arc_id)
    }
}

impl<'de> Deserialize<'de> for Itinerary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            legs: Vec<CarrierArc>,
        }
        let repr = Repr::deserialize(deserializer)?;
        aggregate_itinerary(repr.legs).map_err(serde::de::Error::custom)
    }
}

/// Aggregates legs into an itinerary: exact sums for cost and duration,
/// weakest-link minimum for safety and dependability.
pub fn aggregate_itinerary(legs: Vec<CarrierArc>) -> Result<Itinerary, NetworkError> {
    let first = legs.first().ok_or(NetworkError::EmptyItinerary)?;
    let mut seen = BTreeSet::from([first.origin.as_str()]);
    for (k, leg) in legs.iter().enumerate() {
        if let Some(next) = legs.get(k + 1) {
            if leg.destination != next.origin {
                return Err(NetworkError::DisconnectedPath {
                    from: leg.arc_id.clone(),
                    to: next.arc_id.clone(),
                    at_end: leg.destination.clone(),
                    next_start: next.origin.clone(),
                });
            }
        }
        if !seen.insert(leg.destination.as_str()) {
            return Err(NetworkError::RepeatedTerminal(leg.destination.clone()));
        }
    }

    Ok(Itinerary {
        total_cost: legs.iter().map(|l| l.cost).sum(),
        total_duration: legs.iter().map(|l| l.duration).sum(),
        safety: legs.iter().map(|l| l.safety).min().unwrap_or(OrdinalLevel::VeryLow),
        dependability: legs
            .iter()
            .map(|l| l.dependability)
            .min()
            .unwrap_or(OrdinalLevel::VeryLow),
        legs,
    })
}
