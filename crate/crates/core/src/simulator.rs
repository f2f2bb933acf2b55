//! Monte Carlo harness: truthful synthetic respondents pushed through the
//! device draw and answer path, then through the estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    make_unrelated, make_warner, validate_device, DeviceError, OutcomeDraw, Probability,
    RandomSource, StatementRole, ValidatedDevice,
};
use crate::estimators::{estimate_from_store, Design, Estimate, EstimateError, Model};
use crate::store::{Answer, ResponseRecord, StoreSchema};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("statement role {0:?} has no truthful answer rule")]
    UnsupportedRole(StatementRole),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// How respondents meet the two devices of a two-device design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Every respondent answers both devices.
    #[default]
    Paired,
    /// Each respondent answers exactly one device.
    Split,
}

/// Truthful answer to the statement a device selected.
pub fn simulate_respondent(
    has_s: bool,
    has_y: bool,
    draw: &OutcomeDraw,
) -> Result<Answer, SimError> {
    match draw.statement.role {
        StatementRole::Sensitive => Ok(has_s.into()),
        StatementRole::Complement => Ok((!has_s).into()),
        StatementRole::Unrelated => Ok(has_y.into()),
        role @ StatementRole::Other => Err(SimError::UnsupportedRole(role)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub true_pi: f64,
    pub true_pi_y: f64,
    pub design: Design,
    /// Respondents per replication, or device-1 sample size in split mode.
    pub n: usize,
    /// Device-2 sample size in split mode; defaults to `n`.
    pub n2: Option<usize>,
    pub replications: usize,
    pub seed: u64,
    pub mode: AssignmentMode,
    pub confidence: f64,
}

impl SimulationConfig {
    pub fn new(design: Design, true_pi: f64, true_pi_y: f64, n: usize) -> Self {
        SimulationConfig {
            true_pi,
            true_pi_y,
            design,
            n,
            n2: None,
            replications: 500,
            seed: 0,
            mode: AssignmentMode::Paired,
            confidence: 0.95,
        }
    }

    fn sizes(&self) -> (usize, usize) {
        (self.n, self.n2.unwrap_or(self.n))
    }

    pub fn schema(&self) -> StoreSchema {
        match (self.design, self.mode) {
            (Design::SimmonsTwo { .. }, AssignmentMode::Paired) => StoreSchema::Paired,
            (Design::SimmonsTwo { .. }, AssignmentMode::Split) => StoreSchema::Split,
            _ => StoreSchema::Single,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.design.validate()?;
        for (name, v) in [("true_pi", self.true_pi), ("true_pi_y", self.true_pi_y)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        let (n1, n2) = self.sizes();
        if n1 == 0 || n2 == 0 {
            return Err(SimError::InvalidConfig(
                "sample sizes must be positive".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "confidence {} outside (0, 1)",
                self.confidence
            )));
        }
        Ok(())
    }

    fn devices(&self) -> Result<Vec<ValidatedDevice>, SimError> {
        let p = |v: f64| Probability::new(v);
        let specs = match self.design {
            Design::Warner { p: pw } => vec![make_warner(p(pw)?, "S", "not S")?],
            Design::SimmonsKnown { p: pu, .. } => vec![make_unrelated(p(pu)?, "S", "Y")?],
            Design::SimmonsTwo { p1, p2 } => vec![
                make_unrelated(p(p1)?, "S", "Y")?,
                make_unrelated(p(p2)?, "S", "Y")?,
            ],
        };
        specs
            .into_iter()
            .map(|s| validate_device(s).map_err(SimError::from))
            .collect()
    }

    /// Yes-probability each device induces in the simulated population.
    pub fn true_lambdas(&self) -> Vec<f64> {
        let (pi, pi_y) = (self.true_pi, self.true_pi_y);
        match self.design {
            Design::Warner { p } => vec![p * pi + (1.0 - p) * (1.0 - pi)],
            Design::SimmonsKnown { p, .. } => vec![p * pi + (1.0 - p) * pi_y],
            Design::SimmonsTwo { p1, p2 } => {
                vec![p1 * pi + (1.0 - p1) * pi_y, p2 * pi + (1.0 - p2) * pi_y]
            }
        }
    }

    /// Variance of the estimator at the true parameters (independence form
    /// for the two-device design).
    pub fn theoretical_variance(&self) -> f64 {
        let lambdas = self.true_lambdas();
        let (n1, n2) = self.sizes();
        let bern = |l: f64| l * (1.0 - l);
        match self.design {
            Design::Warner { p } => bern(lambdas[0]) / (n1 as f64 * (2.0 * p - 1.0).powi(2)),
            Design::SimmonsKnown { p, .. } => bern(lambdas[0]) / (n1 as f64 * p * p),
            Design::SimmonsTwo { p1, p2 } => {
                ((1.0 - p2).powi(2) * bern(lambdas[0]) / n1 as f64
                    + (1.0 - p1).powi(2) * bern(lambdas[1]) / n2 as f64)
                    / (p1 - p2).powi(2)
            }
        }
    }
}

/// One simulated survey.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSurvey {
    pub schema: StoreSchema,
    pub records: Vec<ResponseRecord>,
    pub estimate: Estimate,
}

pub fn run_survey_sim<R: RandomSource + ?Sized>(
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<SimulatedSurvey, SimError> {
    config.validate()?;
    let devices = config.devices()?;
    let schema = config.schema();
    let (n1, n2) = config.sizes();
    let respondent = |rng: &mut R| {
        let has_s = rng.next_unit() < config.true_pi;
        let has_y = rng.next_unit() < config.true_pi_y;
        (has_s, has_y)
    };

    let mut records = Vec::with_capacity(n1 + if schema == StoreSchema::Split { n2 } else { 0 });
    match schema {
        StoreSchema::Single => {
            for _ in 0..n1 {
                let (s, y) = respondent(rng);
                let answer = simulate_respondent(s, y, &devices[0].draw(rng))?;
                records.push(ResponseRecord::single(answer));
            }
        }
        StoreSchema::Paired => {
            for _ in 0..n1 {
                let (s, y) = respondent(rng);
                let a1 = simulate_respondent(s, y, &devices[0].draw(rng))?;
                let a2 = simulate_respondent(s, y, &devices[1].draw(rng))?;
                records.push(ResponseRecord::paired(a1, a2));
            }
        }
        StoreSchema::Split => {
            for (device, size) in [(1u8, n1), (2u8, n2)] {
                for _ in 0..size {
                    let (s, y) = respondent(rng);
                    let draw = devices[usize::from(device - 1)].draw(rng);
                    let answer = simulate_respondent(s, y, &draw)?;
                    records.push(ResponseRecord::split(device, answer));
                }
            }
        }
    }
    let estimate = estimate_from_store(&records, schema, config.design, config.confidence)?;
    Ok(SimulatedSurvey {
        schema,
        records,
        estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub model: Model,
    pub mode: AssignmentMode,
    pub true_pi: f64,
    pub mean_pi_hat: f64,
    pub bias: f64,
    pub empirical_variance: f64,
    pub theoretical_variance: f64,
    pub variance_ratio: f64,
    pub ci_coverage: f64,
    pub replications: usize,
    pub seed: u64,
    pub variance_approximate: bool,
}

/// Generator for replication `index`: same key as the master seed, distinct
/// ChaCha stream per replication.
pub fn replication_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn run_replications(config: &SimulationConfig) -> Result<SimulationReport, SimError> {
    config.validate()?;
    if config.replications < 2 {
        return Err(SimError::InvalidConfig(
            "at least two replications are needed".into(),
        ));
    }
    let outcomes = (0..config.replications)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(config.seed, i);
            let sim = run_survey_sim(config, &mut rng)?;
            let e = sim.estimate;
            let covered = e.ci_low <= config.true_pi && config.true_pi <= e.ci_high;
            Ok((e.pi_hat_raw, covered))
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let reps = outcomes.len() as f64;
    let mean = compensated_sum(outcomes.iter().map(|(x, _)| *x)) / reps;
    let empirical_variance =
        compensated_sum(outcomes.iter().map(|(x, _)| (x - mean).powi(2))) / (reps - 1.0);
    let theoretical_variance = config.theoretical_variance();
    let covered = outcomes.iter().filter(|(_, c)| *c).count();
    Ok(SimulationReport {
        model: config.design.model(),
        mode: config.mode,
        true_pi: config.true_pi,
        mean_pi_hat: mean,
        bias: mean - config.true_pi,
        empirical_variance,
        theoretical_variance,
        variance_ratio: empirical_variance / theoretical_variance,
        ci_coverage: covered as f64 / reps,
        replications: config.replications,
        seed: config.seed,
        variance_approximate: config.schema() == StoreSchema::Paired,
    })
}

/// Neumaier summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
