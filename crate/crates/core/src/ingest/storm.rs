//! Storm-event records, raw NOAA type mapping and severity filtering.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::Hazard;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardEvent {
    pub begin_date: NaiveDate,
    pub end_date: NaiveDate,
    pub raw_type: String,
    pub hazard: Hazard,
    pub county: String,
    pub property_damage_usd: f64,
    pub crop_damage_usd: f64,
    pub injuries: u32,
    pub deaths: u32,
}

impl HazardEvent {
    pub fn total_damage_usd(&self) -> f64 {
        self.property_damage_usd + self.crop_damage_usd
    }

    pub fn casualties(&self) -> u32 {
        self.injuries + self.deaths
    }
}

/// Raw NOAA event type → hazard category. Matching ignores ASCII case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeMap(BTreeMap<String, Hazard>);

impl Default for TypeMap {
    fn default() -> Self {
        let pairs = [
            ("Extreme Cold/Wind Chill", Hazard::ExtremeCold),
            ("Cold/Wind Chill", Hazard::ExtremeCold),
            ("Flood", Hazard::Flood),
            ("Flash Flood", Hazard::Flood),
            ("Frost/Freeze", Hazard::Frost),
            ("Hail", Hazard::Hail),
            ("Heat", Hazard::Heat),
            ("Excessive Heat", Hazard::Heat),
            ("Heavy Rain", Hazard::ExtremeRain),
        ];
        TypeMap(pairs.iter().map(|&(k, h)| (k.to_string(), h)).collect())
    }
}

impl TypeMap {
    pub fn new(entries: impl IntoIterator<Item = (String, Hazard)>) -> Self {
        TypeMap(entries.into_iter().collect())
    }

    pub fn lookup(&self, raw_type: &str) -> Option<Hazard> {
        let raw = raw_type.trim();
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(raw))
            .map(|(_, &h)| h)
    }

    /// First raw type mapped to `hazard`, used when writing synthetic data.
    pub fn raw_name(&self, hazard: Hazard) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, &h)| h == hazard)
            .map(|(k, _)| k.as_str())
    }
}

/// What to do with a damage cell that cannot be parsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamagePolicy {
    /// Count as zero and bump the warning counter.
    #[default]
    Zero,
    Error,
}

#[derive(Debug, Clone, Default)]
pub struct StormParse {
    pub events: Vec<HazardEvent>,
    pub dropped_unmapped: usize,
    pub damage_warnings: usize,
}

/// Parses NOAA damage strings such as `25.00K`, `1.5M` or `2B` into USD.
/// An empty cell is zero.
pub fn parse_damage(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Some(0.0);
    }
    let (number, multiplier) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1e3),
        'M' | 'm' => (&s[..s.len() - 1], 1e6),
        'B' | 'b' => (&s[..s.len() - 1], 1e9),
        _ => (s, 1.0),
    };
    let value = if number.is_empty() {
        // NOAA occasionally writes a bare suffix ("K") for "unknown amount".
        0.0
    } else {
        number.trim().parse::<f64>().ok()?
    };
    (value.is_finite() && value >= 0.0).then_some(value * multiplier)
}

fn parse_event_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%m/%d/%Y")
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y-%m-%d"))
        .ok()
}

const REQUIRED: [&str; 8] = [
    "BEGIN_DATE",
    "END_DATE",
    "EVENT_TYPE",
    "CZ_NAME",
    "DAMAGE_PROPERTY",
    "DAMAGE_CROPS",
    "INJURIES_DIRECT",
    "DEATHS_DIRECT",
];

pub fn parse_storm_events<R: Read>(
    source: R,
    type_map: &TypeMap,
    damage_policy: DamagePolicy,
) -> Result<StormParse> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_uppercase())
        .collect();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("storm events CSV lacks a {name} column")))?;
    }
    let [begin_i, end_i, type_i, county_i, prop_i, crop_i, inj_i, death_i] = idx;

    let mut out = StormParse::default();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let row_err = |message: String| Error::Row { line, message };

        let raw_type = cell(type_i).to_string();
        let Some(hazard) = type_map.lookup(&raw_type) else {
            out.dropped_unmapped += 1;
            continue;
        };
        let begin_date = parse_event_date(cell(begin_i))
            .ok_or_else(|| row_err(format!("malformed BEGIN_DATE {:?}", cell(begin_i))))?;
        let end_date = parse_event_date(cell(end_i))
            .ok_or_else(|| row_err(format!("malformed END_DATE {:?}", cell(end_i))))?;
        if end_date < begin_date {
            return Err(row_err(format!("event ends ({end_date}) before it begins ({begin_date})")));
        }

        let mut damage = |i: usize, column: &str| -> Result<f64> {
            match parse_damage(cell(i)) {
                Some(v) => Ok(v),
                None if damage_policy == DamagePolicy::Zero => {
                    out.damage_warnings += 1;
                    Ok(0.0)
                }
                None => Err(row_err(format!("unparseable {column} {:?}", cell(i)))),
            }
        };
        let property_damage_usd = damage(prop_i, "DAMAGE_PROPERTY")?;
        let crop_damage_usd = damage(crop_i, "DAMAGE_CROPS")?;

        let count = |i: usize, column: &str| -> Result<u32> {
            let c = cell(i);
            if c.is_empty() {
                return Ok(0);
            }
            c.parse::<u32>()
                .map_err(|_| row_err(format!("invalid {column} {c:?}")))
        };
        let injuries = count(inj_i, "INJURIES_DIRECT")?;
        let deaths = count(death_i, "DEATHS_DIRECT")?;

        out.events.push(HazardEvent {
            begin_date,
            end_date,
            raw_type,
            hazard,
            county: cell(county_i).to_string(),
            property_damage_usd,
            crop_damage_usd,
            injuries,
            deaths,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityPolicy {
    pub min_damage_usd: f64,
    pub keep_if_casualties: bool,
}

impl Default for SeverityPolicy {
    fn default() -> Self {
        SeverityPolicy {
            min_damage_usd: 10_000.0,
            keep_if_casualties: true,
        }
    }
}

impl SeverityPolicy {
    pub fn is_severe(&self, event: &HazardEvent) -> bool {
        event.total_damage_usd() >= self.min_damage_usd
            || (self.keep_if_casualties && event.casualties() > 0)
    }
}

/// Keeps severe events, preserving order.
pub fn filter_severity(events: &[HazardEvent], policy: &SeverityPolicy) -> Vec<HazardEvent> {
    events.iter().filter(|e| policy.is_severe(e)).cloned().collect()
}

/// Events whose county name matches `county` (ASCII case-insensitive).
pub fn events_for_county(events: &[HazardEvent], county: &str) -> Vec<HazardEvent> {
    events
        .iter()
        .filter(|e| e.county.trim().eq_ignore_ascii_case(county.trim()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "BEGIN_DATE,END_DATE,EVENT_TYPE,CZ_NAME,DAMAGE_PROPERTY,DAMAGE_CROPS,INJURIES_DIRECT,DEATHS_DIRECT\n";

    fn parse(rows: &str) -> StormParse {
        parse_storm_events(format!("{HEADER}{rows}").as_bytes(), &TypeMap::default(), DamagePolicy::Zero)
            .unwrap()
    }

    fn event(damage: f64, injuries: u32) -> HazardEvent {
        let d = NaiveDate::from_ymd_opt(2012, 1, 5).unwrap();
        HazardEvent {
            begin_date: d,
            end_date: d,
            raw_type: "Hail".into(),
            hazard: Hazard::Hail,
            county: "ADAMS".into(),
            property_damage_usd: damage,
            crop_damage_usd: 0.0,
            injuries,
            deaths: 0,
        }
    }

    #[test]
    fn hail_row_with_suffix() {
        let p = parse("01/05/2012,01/05/2012,Hail,ADAMS,25.00K,0.00K,0,0\n");
        assert_eq!(p.events.len(), 1);
        let e = &p.events[0];
        assert_eq!(e.hazard, Hazard::Hail);
        assert_eq!(e.property_damage_usd, 25_000.0);
        assert_eq!(e.crop_damage_usd, 0.0);
        assert_eq!(e.county, "ADAMS");
    }

    #[test]
    fn default_map_covers_excessive_heat() {
        let p = parse("07/01/2012,07/03/2012,Excessive Heat,ADAMS,0,0,0,0\n");
        assert_eq!(p.events[0].hazard, Hazard::Heat);
    }

    #[test]
    fn unmapped_types_are_counted() {
        let p = parse("05/01/2012,05/01/2012,Tornado,ADAMS,1.00M,0,0,0\n05/01/2012,05/01/2012,Drought,ADAMS,0,0,0,0\n");
        assert!(p.events.is_empty());
        assert_eq!(p.dropped_unmapped, 2);
    }

    #[test]
    fn damage_suffixes() {
        assert_eq!(parse_damage("10.00K"), Some(10_000.0));
        assert_eq!(parse_damage("1.5M"), Some(1_500_000.0));
        assert_eq!(parse_damage("2B"), Some(2e9));
        assert_eq!(parse_damage("750"), Some(750.0));
        assert_eq!(parse_damage(""), Some(0.0));
        assert_eq!(parse_damage("lots"), None);
    }

    #[test]
    fn damage_policy_controls_bad_cells() {
        let p = parse("05/01/2012,05/01/2012,Hail,ADAMS,??,0,0,0\n");
        assert_eq!(p.damage_warnings, 1);
        assert_eq!(p.events[0].property_damage_usd, 0.0);

        let strict = parse_storm_events(
            format!("{HEADER}05/01/2012,05/01/2012,Hail,ADAMS,??,0,0,0\n").as_bytes(),
            &TypeMap::default(),
            DamagePolicy::Error,
        );
        assert!(matches!(strict, Err(Error::Row { line: 2, .. })));
    }

    #[test]
    fn missing_required_column() {
        let res = parse_storm_events("BEGIN_DATE,END_DATE\n".as_bytes(), &TypeMap::default(), DamagePolicy::Zero);
        assert!(matches!(res, Err(Error::Parse(_))));
    }

    #[test]
    fn severity_rules() {
        let policy = SeverityPolicy::default();
        assert!(!policy.is_severe(&event(5_000.0, 0)));
        assert!(policy.is_severe(&event(0.0, 1)));
        assert!(policy.is_severe(&event(10_000.0, 0)));
        let no_casualty_rule = SeverityPolicy {
            keep_if_casualties: false,
            ..policy
        };
        assert!(!no_casualty_rule.is_severe(&event(0.0, 3)));
    }

    #[test]
    fn filter_is_idempotent_and_ordered() {
        let events = vec![event(20_000.0, 0), event(1.0, 0), event(0.0, 2), event(15_000.0, 0)];
        let policy = SeverityPolicy::default();
        let once = filter_severity(&events, &policy);
        assert_eq!(once, vec![events[0].clone(), events[2].clone(), events[3].clone()]);
        assert_eq!(filter_severity(&once, &policy), once);
    }
}
