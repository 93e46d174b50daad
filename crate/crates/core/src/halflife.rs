//! Class half-lives from mean update intervals, exponential validity decay,
//! and threshold filtering.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Day, FactKey, FactTimeline};
use crate::encoder::ActivityClass;
use crate::error::{Error, Result};

/// Initial validity of every fact.
pub const V0: f64 = 1.0;

/// What a never-updated fact contributes to its class average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingIntervalPolicy {
    /// Left out of the average.
    Exclude,
    /// Counted with the full time span of the dataset.
    TimeSpan,
}

/// Half-lives of the two activity classes, in days.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfLifeModel {
    active: BigRational,
    inactive: BigRational,
}

fn positive(days: BigRational) -> Result<BigRational> {
    if days <= BigRational::zero() {
        return Err(Error::InvalidHalfLife(days.to_f64().unwrap_or(0.0)));
    }
    Ok(days)
}

fn rational_from_f64(days: f64) -> Result<BigRational> {
    if !(days.is_finite() && days > 0.0) {
        return Err(Error::InvalidHalfLife(days));
    }
    BigRational::from_float(days).ok_or(Error::InvalidHalfLife(days))
}

impl HalfLifeModel {
    pub fn new(active: BigRational, inactive: BigRational) -> Result<Self> {
        Ok(Self {
            active: positive(active)?,
            inactive: positive(inactive)?,
        })
    }

    pub fn from_days(active: f64, inactive: f64) -> Result<Self> {
        Self::new(rational_from_f64(active)?, rational_from_f64(inactive)?)
    }

    /// Same half-life for both classes.
    pub fn uniform(days: f64) -> Result<Self> {
        Self::from_days(days, days)
    }

    pub fn exact(&self, class: ActivityClass) -> &BigRational {
        match class {
            ActivityClass::Active => &self.active,
            ActivityClass::Inactive => &self.inactive,
        }
    }

    pub fn half_life(&self, class: ActivityClass) -> f64 {
        self.exact(class).to_f64().unwrap_or(f64::INFINITY)
    }

    /// `ln 2 / t_HF`.
    pub fn decay_rate(&self, class: ActivityClass) -> f64 {
        LN_2 / self.half_life(class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfLifeEstimate {
    pub model: HalfLifeModel,
    /// Members with a defined interval, per class.
    pub contributors: [usize; 2],
    pub warnings: Vec<String>,
}

/// Half of the class-average of per-key mean update intervals.
///
/// `classes` assigns each fact key to a class; keys missing from
/// `timelines` are ignored. A class without any contributing key falls
/// back to half the dataset time span and records a warning.
pub fn estimate_half_life(
    classes: &BTreeMap<FactKey, ActivityClass>,
    timelines: &BTreeMap<FactKey, FactTimeline>,
    time_span: u64,
    policy: MissingIntervalPolicy,
) -> Result<HalfLifeEstimate> {
    let span = BigRational::from_integer(BigInt::from(time_span));
    let mut sums = [BigRational::zero(), BigRational::zero()];
    let mut counts = [0usize; 2];
    for (key, class) in classes {
        let Some(tl) = timelines.get(key) else { continue };
        let slot = class.label() as usize;
        let dt = match (tl.mean_interval, policy) {
            (Some(m), _) => ratio_to_big(m),
            (None, MissingIntervalPolicy::TimeSpan) if time_span > 0 => span.clone(),
            (None, _) => continue,
        };
        sums[slot] += dt;
        counts[slot] += 1;
    }
    let mut warnings = Vec::new();
    let fallback = BigRational::new(BigInt::from(time_span.max(1)), BigInt::from(2));
    let mut half = |slot: usize| -> BigRational {
        if counts[slot] == 0 {
            let name = if slot == 0 { "active" } else { "inactive" };
            warnings.push(format!(
                "class `{name}` has no fact with an update interval; using half the time span"
            ));
            return fallback.clone();
        }
        sums[slot].clone() / BigInt::from(counts[slot]) / BigInt::from(2)
    };
    let active = half(0);
    let inactive = half(1);
    Ok(HalfLifeEstimate {
        model: HalfLifeModel::new(active, inactive)?,
        contributors: counts,
        warnings,
    })
}

fn ratio_to_big(r: Ratio<u64>) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// `V0 * exp(-ln2 / t_HF * (t_c - t_i))`.
pub fn validity(update_time: Day, current_time: Day, half_life: f64) -> Result<f64> {
    if current_time < update_time {
        return Err(Error::FutureFact {
            timestamp: update_time,
            current: current_time,
        });
    }
    validity_after((current_time - update_time) as f64, half_life)
}

/// Validity after `elapsed` days.
pub fn validity_after(elapsed: f64, half_life: f64) -> Result<f64> {
    if !(half_life > 0.0) {
        return Err(Error::InvalidHalfLife(half_life));
    }
    let lambda = LN_2 / half_life;
    Ok(V0 * libm::exp(-lambda * elapsed))
}

/// Day on which validity reaches `theta`; `None` when it never does.
pub fn expiration_day(update_time: Day, half_life: f64, theta: f64) -> Option<f64> {
    if theta <= 0.0 {
        return None;
    }
    Some(update_time as f64 + half_life * libm::log2(1.0 / theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityScore {
    pub index: usize,
    pub timestamp: Day,
    pub validity: f64,
    pub elapsed: Day,
    pub class: ActivityClass,
    pub half_life: f64,
    pub outdated: bool,
    pub expiration: Option<f64>,
}

/// Scores every quadruple against the dataset's current time.
///
/// With `zero_superseded`, facts whose tail was later replaced score 0.
pub fn score_facts(
    dataset: &Dataset,
    classes: &[ActivityClass],
    model: &HalfLifeModel,
    zero_superseded: bool,
) -> Result<Vec<ValidityScore>> {
    if classes.len() != dataset.len() {
        return Err(Error::ShapeMismatch {
            op: "score_facts",
            left: [dataset.len(), 1],
            right: [classes.len(), 1],
        });
    }
    let superseded = if zero_superseded {
        dataset.superseded_mask()
    } else {
        alloc::vec![false; dataset.len()]
    };
    dataset
        .quadruples
        .iter()
        .zip(classes)
        .enumerate()
        .map(|(i, (q, &class))| {
            let half_life = model.half_life(class);
            let v = validity(q.timestamp, dataset.t_current, half_life)?;
            Ok(ValidityScore {
                index: i,
                timestamp: q.timestamp,
                validity: if superseded[i] { 0.0 } else { v },
                elapsed: dataset.t_current - q.timestamp,
                class,
                half_life,
                outdated: false,
                expiration: None,
            })
        })
        .collect()
}

/// Marks scores strictly below `theta` as outdated and returns keep-flags.
pub fn flag_outdated(scores: &mut [ValidityScore], theta: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidThreshold(theta));
    }
    Ok(scores
        .iter_mut()
        .map(|s| {
            s.outdated = s.validity < theta;
            s.expiration = expiration_day(s.timestamp, s.half_life, theta);
            !s.outdated
        })
        .collect())
}
