//! Point estimates, plug-in variances and Wald intervals for the sensitive
//! proportion under the three supported designs.
//!
//! | design          | yes-probability                 | estimator                                  |
//! |-----------------|---------------------------------|--------------------------------------------|
//! | Warner          | `λ = pπ + (1-p)(1-π)`           | `(λ̂ - (1-p)) / (2p - 1)`                   |
//! | Simmons, π_Y    | `λ = pπ + (1-p)π_Y`             | `(λ̂ - (1-p)π_Y) / p`                       |
//! | Simmons, two    | `λi = p_i π + (1-p_i)π_Y`       | `((1-p2)λ̂1 - (1-p1)λ̂2) / (p1 - p2)`        |
//!
//! Variances use the divisor `n`. `pi_hat_raw` is reported unclamped;
//! `pi_hat` and the interval endpoints are clamped to `[0, 1]`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::device::PROBABILITY_TOLERANCE;
use crate::store::{ResponseRecord, StoreSchema};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("invalid counts: {n_yes} yes answers out of {n}")]
    InvalidCounts { n_yes: u64, n: u64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("no responses collected{0}")]
    EmptyDataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Warner,
    SimmonsKnown,
    SimmonsTwo,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Warner => "warner",
            Model::SimmonsKnown => "simmons_known",
            Model::SimmonsTwo => "simmons_two",
        }
    }
}

/// Yes-tally over `n` answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    n_yes: u64,
    n: u64,
}

impl Counts {
    pub fn new(n_yes: u64, n: u64) -> Result<Self, EstimateError> {
        if n == 0 || n_yes > n {
            return Err(EstimateError::InvalidCounts { n_yes, n });
        }
        Ok(Counts { n_yes, n })
    }

    pub fn n_yes(&self) -> u64 {
        self.n_yes
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

pub fn lambda_hat(c: Counts) -> f64 {
    c.n_yes as f64 / c.n as f64
}

/// The device parameters an estimate was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Design {
    Warner { p: f64 },
    SimmonsKnown { p: f64, pi_y: f64 },
    SimmonsTwo { p1: f64, p2: f64 },
}

impl Design {
    pub fn model(&self) -> Model {
        match self {
            Design::Warner { .. } => Model::Warner,
            Design::SimmonsKnown { .. } => Model::SimmonsKnown,
            Design::SimmonsTwo { .. } => Model::SimmonsTwo,
        }
    }

    /// Checks the parameter constraints of the design.
    pub fn validate(&self) -> Result<(), EstimateError> {
        match *self {
            Design::Warner { p } => {
                open_unit("p", p)?;
                if (p - 0.5).abs() < PROBABILITY_TOLERANCE {
                    return Err(EstimateError::DegenerateDesign(
                        "Warner design requires p != 1/2".into(),
                    ));
                }
            }
            Design::SimmonsKnown { p, pi_y } => {
                open_unit("p", p)?;
                closed_unit("pi_y", pi_y)?;
            }
            Design::SimmonsTwo { p1, p2 } => {
                open_unit("p1", p1)?;
                open_unit("p2", p2)?;
                if (p1 - p2).abs() < PROBABILITY_TOLERANCE {
                    return Err(EstimateError::DegenerateDesign(
                        "two-device design requires p1 != p2".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn open_unit(name: &'static str, value: f64) -> Result<(), EstimateError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else if value == 0.0 || value == 1.0 {
        Err(EstimateError::DegenerateDesign(format!(
            "{name} = {value} leaves no randomization"
        )))
    } else {
        Err(EstimateError::InvalidParameter { name, value })
    }
}

fn closed_unit(name: &'static str, value: f64) -> Result<(), EstimateError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(EstimateError::InvalidParameter { name, value })
    }
}

fn confidence(conf: f64) -> Result<(), EstimateError> {
    if conf > 0.0 && conf < 1.0 {
        Ok(())
    } else {
        Err(EstimateError::InvalidParameter {
            name: "conf",
            value: conf,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub model: Model,
    pub lambda_hats: Vec<f64>,
    pub pi_hat_raw: f64,
    pub pi_hat: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence_level: f64,
    pub sample_sizes: Vec<u64>,
    pub params: Design,
    /// Set when the variance formula assumes independence the data lacks
    /// (both devices answered by the same respondents).
    pub variance_approximate: bool,
}

impl Estimate {
    fn assemble(
        params: Design,
        lambda_hats: Vec<f64>,
        sample_sizes: Vec<u64>,
        pi_hat_raw: f64,
        variance: f64,
        conf: f64,
    ) -> Self {
        let std_error = variance.sqrt();
        let (ci_low, ci_high) = wald_interval(pi_hat_raw, std_error, conf);
        Estimate {
            model: params.model(),
            lambda_hats,
            pi_hat_raw,
            pi_hat: pi_hat_raw.clamp(0.0, 1.0),
            variance,
            std_error,
            ci_low,
            ci_high,
            confidence_level: conf,
            sample_sizes,
            params,
            variance_approximate: false,
        }
    }
}

/// Inverts the Warner yes-probability. No parameter checks.
pub fn warner_point(lambda: f64, p: f64) -> f64 {
    (lambda - (1.0 - p)) / (2.0 * p - 1.0)
}

pub fn simmons_known_point(lambda: f64, p: f64, pi_y: f64) -> f64 {
    (lambda - (1.0 - p) * pi_y) / p
}

pub fn simmons_two_point(lambda1: f64, lambda2: f64, p1: f64, p2: f64) -> f64 {
    ((1.0 - p2) * lambda1 - (1.0 - p1) * lambda2) / (p1 - p2)
}

pub fn warner_estimate(c: Counts, p: f64, conf: f64) -> Result<Estimate, EstimateError> {
    let design = Design::Warner { p };
    design.validate()?;
    confidence(conf)?;
    let lambda = lambda_hat(c);
    let slope = 2.0 * p - 1.0;
    let pi_hat_raw = warner_point(lambda, p);
    let variance = lambda * (1.0 - lambda) / (c.n as f64 * slope * slope);
    Ok(Estimate::assemble(
        design,
        vec![lambda],
        vec![c.n],
        pi_hat_raw,
        variance,
        conf,
    ))
}

pub fn simmons_known_estimate(
    c: Counts,
    p: f64,
    pi_y: f64,
    conf: f64,
) -> Result<Estimate, EstimateError> {
    let design = Design::SimmonsKnown { p, pi_y };
    design.validate()?;
    confidence(conf)?;
    let lambda = lambda_hat(c);
    let pi_hat_raw = simmons_known_point(lambda, p, pi_y);
    let variance = lambda * (1.0 - lambda) / (c.n as f64 * p * p);
    Ok(Estimate::assemble(
        design,
        vec![lambda],
        vec![c.n],
        pi_hat_raw,
        variance,
        conf,
    ))
}

pub fn simmons_two_sample_estimate(
    c1: Counts,
    c2: Counts,
    p1: f64,
    p2: f64,
    conf: f64,
) -> Result<Estimate, EstimateError> {
    let design = Design::SimmonsTwo { p1, p2 };
    design.validate()?;
    confidence(conf)?;
    let l1 = lambda_hat(c1);
    let l2 = lambda_hat(c2);
    let gap = p1 - p2;
    let pi_hat_raw = simmons_two_point(l1, l2, p1, p2);
    let w1 = 1.0 - p2;
    let w2 = 1.0 - p1;
    let variance = (w1 * w1 * l1 * (1.0 - l1) / c1.n as f64
        + w2 * w2 * l2 * (1.0 - l2) / c2.n as f64)
        / (gap * gap);
    Ok(Estimate::assemble(
        design,
        vec![l1, l2],
        vec![c1.n, c2.n],
        pi_hat_raw,
        variance,
        conf,
    ))
}

/// Two-sided standard normal quantile for confidence level `conf`.
pub fn z_value(conf: f64) -> f64 {
    const TABLE: [(f64, f64); 3] = [(0.90, 1.644854), (0.95, 1.959964), (0.99, 2.575829)];
    TABLE
        .iter()
        .find(|(level, _)| (level - conf).abs() < 1e-12)
        .map(|&(_, z)| z)
        .unwrap_or_else(|| Normal::standard().inverse_cdf(0.5 + conf / 2.0))
}

/// `pi_hat_raw ± z·se`, endpoints clamped to `[0, 1]`.
pub fn wald_interval(pi_hat_raw: f64, std_error: f64, conf: f64) -> (f64, f64) {
    let half = z_value(conf) * std_error;
    (
        (pi_hat_raw - half).clamp(0.0, 1.0),
        (pi_hat_raw + half).clamp(0.0, 1.0),
    )
}

/// Tallies stored records and applies the estimator for `design`.
pub fn estimate_from_store(
    records: &[ResponseRecord],
    schema: StoreSchema,
    design: Design,
    conf: f64,
) -> Result<Estimate, EstimateError> {
    design.validate()?;
    confidence(conf)?;
    let mismatch = |msg: String| EstimateError::SchemaMismatch(msg);
    for (row, record) in records.iter().enumerate() {
        if !schema.accepts(record) {
            return Err(mismatch(format!("row {} does not fit {schema}", row + 1)));
        }
    }
    match (design, schema) {
        (Design::Warner { p }, StoreSchema::Single) => {
            let c = tally(records, |_| true, 0)?;
            warner_estimate(c, p, conf)
        }
        (Design::SimmonsKnown { p, pi_y }, StoreSchema::Single) => {
            let c = tally(records, |_| true, 0)?;
            simmons_known_estimate(c, p, pi_y, conf)
        }
        (Design::SimmonsTwo { p1, p2 }, StoreSchema::Paired) => {
            let c1 = tally(records, |_| true, 0)?;
            let c2 = tally(records, |_| true, 1)?;
            let mut est = simmons_two_sample_estimate(c1, c2, p1, p2, conf)?;
            est.variance_approximate = true;
            Ok(est)
        }
        (Design::SimmonsTwo { p1, p2 }, StoreSchema::Split) => {
            let c1 = tally(records, |r| r.values()[0] == "1", 1)
                .map_err(|e| annotate(e, " for device 1"))?;
            let c2 = tally(records, |r| r.values()[0] == "2", 1)
                .map_err(|e| annotate(e, " for device 2"))?;
            simmons_two_sample_estimate(c1, c2, p1, p2, conf)
        }
        (design, schema) => Err(mismatch(format!(
            "{} design cannot be estimated from {schema} data",
            design.model().name()
        ))),
    }
}

fn annotate(e: EstimateError, suffix: &str) -> EstimateError {
    match e {
        EstimateError::EmptyDataset(_) => EstimateError::EmptyDataset(suffix.to_string()),
        other => other,
    }
}

fn tally(
    records: &[ResponseRecord],
    include: impl Fn(&ResponseRecord) -> bool,
    column: usize,
) -> Result<Counts, EstimateError> {
    let (mut n_yes, mut n) = (0u64, 0u64);
    for record in records.iter().filter(|r| include(r)) {
        n += 1;
        if record.values()[column] == "y" {
            n_yes += 1;
        }
    }
    if n == 0 {
        return Err(EstimateError::EmptyDataset(String::new()));
    }
    Counts::new(n_yes, n)
}
