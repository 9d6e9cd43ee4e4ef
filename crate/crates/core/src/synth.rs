//! Synthetic weather and storm-event files with a known generative law.
//!
//! Each latent feature is `a·√2·sin(2πkd/365.25 + phase) + b·e(d)`, where `e`
//! is a unit-variance AR(1) process and `a² + b² = 1`. Hazard `h` occurs on
//! day `d` with probability `1 − exp(−λ)`,
//! `λ = exp(β₀ + β₁·z_{causal(h)}(d − lag))`. Written feature values are the
//! latent values under a per-feature affine map.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{Hazard, NUM_HAZARDS};
use crate::ingest::TypeMap;

pub const SYNTH_COUNTY: &str = "SYNTH";
pub const SYNTH_STATION: &str = "SYNTH0001";
pub const MIN_SYNTH_DAYS: usize = 400;

/// Feature codes and (offset, scale) of the written values.
const FEATURE_UNITS: [(&str, f64, f64); 6] = [
    ("TMAX", 18.0, 9.0),
    ("TMIN", 6.0, 7.0),
    ("PRCP", 2.5, 1.5),
    ("SNWD", 4.0, 3.0),
    ("AWND", 3.5, 1.2),
    ("TAVG", 12.0, 8.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    pub features: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub beta0: f64,
    pub beta1: f64,
    pub lag: usize,
    /// Variance share of the seasonal component, `a²`.
    pub seasonal_share: f64,
    /// AR(1) coefficient of the noise component.
    pub persistence: f64,
    /// Seasonal layout of the features.
    pub seasonality: Seasonality,
    /// Daily probability of each kind of distractor row (unmapped type, light damage).
    pub distractor_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 3000,
            features: 6,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
            beta0: -3.5,
            beta1: 1.2,
            lag: 3,
            seasonal_share: 0.95,
            persistence: 0.97,
            seasonality: Seasonality::Incommensurate,
            distractor_rate: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days < MIN_SYNTH_DAYS {
            return Err(Error::Config(format!("synth needs at least {MIN_SYNTH_DAYS} days, got {}", self.days)));
        }
        if self.features == 0 {
            return Err(Error::Config("synth needs at least one feature".into()));
        }
        if !(0.0..=1.0).contains(&self.seasonal_share) || !(self.persistence.abs() < 1.0) {
            return Err(Error::Config("seasonal_share must lie in [0, 1] and |persistence| below 1".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config("distractor_rate must lie in [0, 1]".into()));
        }
        if !self.beta0.is_finite() || !self.beta1.is_finite() {
            return Err(Error::Config("beta0 and beta1 must be finite".into()));
        }
        Ok(())
    }
}

/// How feature seasonal cycles relate to one another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seasonality {
    /// Feature `i` cycles `i + 1` times a year, so seasonal parts are
    /// mutually orthogonal over whole years.
    Harmonic,
    /// Feature `i` cycles `1 + i/√2` times a year: no two cycles share a
    /// common period, so the calendar seen through one feature does not fix
    /// another feature's phase.
    Incommensurate,
    /// One annual cycle, phase-shifted by `2πi/F`.
    Phased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTruth {
    pub name: String,
    pub offset: f64,
    pub scale: f64,
    /// Seasonal cycles per year.
    pub cycles_per_year: f64,
    /// Seasonal phase in radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardLaw {
    pub hazard: Hazard,
    pub raw_type: String,
    pub causal_feature: String,
    pub causal_index: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub lag: usize,
    /// Realised fraction of days with an event.
    pub event_day_fraction: f64,
}

/// Sidecar describing how a synthetic data set was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub county: String,
    pub station: String,
    pub features: Vec<FeatureTruth>,
    pub hazards: Vec<HazardLaw>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub weather_csv: String,
    pub events_csv: String,
    pub truth: SynthTruth,
    /// Latent feature values, one row per written day.
    pub latent: Vec<Vec<f64>>,
    /// Event occurrence per written day.
    pub occurrences: Vec<[bool; NUM_HAZARDS]>,
}

pub fn feature_name(i: usize) -> String {
    FEATURE_UNITS.get(i).map_or_else(|| format!("X{}", i + 1), |u| u.0.to_string())
}

/// Causal feature index for a hazard.
pub fn causal_feature(hazard: Hazard, features: usize) -> usize {
    hazard.index() % features
}

/// Mean daily event probability under the law, by a grid over the seasonal
/// phase and the noise density.
pub fn expected_event_probability(cfg: &SynthConfig) -> f64 {
    let a = cfg.seasonal_share.sqrt() * 2f64.sqrt();
    let b = (1.0 - cfg.seasonal_share).sqrt();
    let (np, nz) = (720, 801);
    let mut total = 0.0;
    let mut weight = 0.0;
    for i in 0..np {
        let s = a * (std::f64::consts::TAU * i as f64 / np as f64).sin();
        for j in 0..nz {
            let z = -8.0 + 16.0 * j as f64 / (nz - 1) as f64;
            let w = (-0.5 * z * z).exp();
            let lambda = (cfg.beta0 + cfg.beta1 * (s + b * z)).exp();
            total += w * -(-lambda).exp_m1();
            weight += w;
        }
    }
    total / weight
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let f = cfg.features;
    let a = cfg.seasonal_share.sqrt() * 2f64.sqrt();
    let b = (1.0 - cfg.seasonal_share).sqrt();
    let innovation = (1.0 - cfg.persistence * cfg.persistence).sqrt();
    let features: Vec<FeatureTruth> = (0..f)
        .map(|i| {
            let (offset, scale) = FEATURE_UNITS.get(i).map_or((0.0, 1.0), |u| (u.1, u.2));
            FeatureTruth {
                name: feature_name(i),
                offset,
                scale,
                cycles_per_year: match cfg.seasonality {
                    Seasonality::Harmonic => (i + 1) as f64,
                    Seasonality::Incommensurate => 1.0 + i as f64 * std::f64::consts::FRAC_1_SQRT_2,
                    Seasonality::Phased => 1.0,
                },
                phase: match cfg.seasonality {
                    Seasonality::Harmonic | Seasonality::Incommensurate => 0.0,
                    Seasonality::Phased => std::f64::consts::TAU * i as f64 / f as f64,
                },
            }
        })
        .collect();

    // Latent days run from −lag so every written day has a lagged driver.
    let total = cfg.days + cfg.lag;
    let mut feature_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    feature_rng.set_stream(1);
    let mut noise: Vec<f64> = (0..f).map(|_| feature_rng.sample(StandardNormal)).collect();
    let mut latent = Vec::with_capacity(total);
    for t in 0..total {
        if t > 0 {
            for e in noise.iter_mut() {
                let eps: f64 = feature_rng.sample(StandardNormal);
                *e = cfg.persistence * *e + innovation * eps;
            }
        }
        let day = t as f64 - cfg.lag as f64;
        let angle = std::f64::consts::TAU * day / 365.25;
        latent.push(
            features
                .iter()
                .zip(&noise)
                .map(|(ft, e)| a * (ft.cycles_per_year * angle + ft.phase).sin() + b * e)
                .collect::<Vec<f64>>(),
        );
    }

    let type_map = TypeMap::default();
    let mut event_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    event_rng.set_stream(2);
    let mut distractor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    distractor_rng.set_stream(3);

    let date_of = |d: usize| cfg.start_date.checked_add_days(Days::new(d as u64)).ok_or_else(|| Error::Config("date overflow".into()));
    let mut weather = String::from("STATION,NAME,DATE");
    for ft in &features {
        let _ = write!(weather, ",{}", ft.name);
    }
    weather.push('\n');
    let mut events = String::from("BEGIN_DATE,END_DATE,EVENT_TYPE,CZ_NAME,DAMAGE_PROPERTY,DAMAGE_CROPS,INJURIES_DIRECT,DEATHS_DIRECT\n");
    let mut occurrences = Vec::with_capacity(cfg.days);
    let mut event_days = [0usize; NUM_HAZARDS];
    for d in 0..cfg.days {
        let date = date_of(d)?;
        let row = &latent[d + cfg.lag];
        let _ = write!(weather, "{SYNTH_STATION},\"SYNTHETIC STATION\",{date}");
        for (ft, z) in features.iter().zip(row) {
            let _ = write!(weather, ",{:.3}", ft.offset + ft.scale * z);
        }
        weather.push('\n');

        let us_date = date.format("%m/%d/%Y");
        let driver = &latent[d];
        let mut occurred = [false; NUM_HAZARDS];
        for h in Hazard::ALL {
            let lambda = (cfg.beta0 + cfg.beta1 * driver[causal_feature(h, f)]).exp();
            let u: f64 = event_rng.gen();
            if u < -(-lambda).exp_m1() {
                occurred[h.index()] = true;
                event_days[h.index()] += 1;
                let raw = type_map.raw_name(h).expect("every hazard has a raw type");
                let _ = writeln!(events, "{us_date},{us_date},{raw},{SYNTH_COUNTY},25.00K,0.00K,0,0");
            }
        }
        occurrences.push(occurred);
        if distractor_rng.gen::<f64>() < cfg.distractor_rate {
            let _ = writeln!(events, "{us_date},{us_date},Thunderstorm Wind,{SYNTH_COUNTY},50.00K,0.00K,0,0");
        }
        if distractor_rng.gen::<f64>() < cfg.distractor_rate {
            let h = Hazard::ALL[distractor_rng.gen_range(0..NUM_HAZARDS)];
            let raw = type_map.raw_name(h).expect("every hazard has a raw type");
            let _ = writeln!(events, "{us_date},{us_date},{raw},{SYNTH_COUNTY},1.00K,0.00K,0,0");
        }
    }

    let hazards = Hazard::ALL
        .iter()
        .map(|&h| {
            let c = causal_feature(h, f);
            HazardLaw {
                hazard: h,
                raw_type: type_map.raw_name(h).expect("every hazard has a raw type").to_string(),
                causal_feature: features[c].name.clone(),
                causal_index: c,
                beta0: cfg.beta0,
                beta1: cfg.beta1,
                lag: cfg.lag,
                event_day_fraction: event_days[h.index()] as f64 / cfg.days as f64,
            }
        })
        .collect();
    Ok(SynthData {
        weather_csv: weather,
        events_csv: events,
        truth: SynthTruth {
            config: cfg.clone(),
            county: SYNTH_COUNTY.into(),
            station: SYNTH_STATION.into(),
            features,
            hazards,
        },
        latent: latent.split_off(cfg.lag),
        occurrences,
    })
}

pub struct SynthPaths {
    pub weather: std::path::PathBuf,
    pub events: std::path::PathBuf,
    pub truth: std::path::PathBuf,
}

impl SynthData {
    /// Writes `weather.csv`, `events.csv` and `truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<SynthPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let paths = SynthPaths {
            weather: dir.join("weather.csv"),
            events: dir.join("events.csv"),
            truth: dir.join("truth.json"),
        };
        fs::write(&paths.weather, &self.weather_csv).map_err(|e| Error::file(&paths.weather, e))?;
        fs::write(&paths.events, &self.events_csv).map_err(|e| Error::file(&paths.events, e))?;
        let json = serde_json::to_string_pretty(&self.truth)? + "\n";
        fs::write(&paths.truth, json).map_err(|e| Error::file(&paths.truth, e))?;
        Ok(paths)
    }
}
