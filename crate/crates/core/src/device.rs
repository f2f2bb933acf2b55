//! Randomization devices.
//!
//! A device is an ordered list of statements, each with the probability of
//! being shown. Respondents only ever see the statement the device selected;
//! which outcome was selected is never recorded by this module.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for the probability-sum check and the `p = 1/2` rejection.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("outcome probabilities sum to {sum}, expected 1")]
    ProbabilitySum { sum: f64 },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("device has no outcomes")]
    EmptyDevice,
    #[error("statement {index} has empty text")]
    EmptyStatement { index: usize },
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid device layout: {0}")]
    InvalidLayout(String),
}

/// A real number in the closed unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self, DeviceError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(DeviceError::InvalidProbability(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Probability::new(value).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementRole {
    Sensitive,
    Complement,
    Unrelated,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub role: StatementRole,
}

impl Statement {
    pub fn new(text: impl Into<String>, role: StatementRole) -> Self {
        Statement {
            text: text.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    /// Sensitive statement paired with its negation.
    Warner,
    /// Sensitive statement paired with an innocuous, unrelated one.
    UnrelatedQuestion,
    /// Any discrete device, e.g. a seven-colour spinner.
    Generic,
}

/// An unvalidated device description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub kind: DeviceKind,
    pub outcomes: Vec<(Statement, Probability)>,
}

/// Builds a Warner device: `p` for the sensitive statement, `1 - p` for its complement.
pub fn make_warner(
    p: Probability,
    sensitive_text: &str,
    complement_text: &str,
) -> Result<DeviceSpec, DeviceError> {
    make_two_outcome(
        DeviceKind::Warner,
        p,
        sensitive_text,
        (complement_text, StatementRole::Complement),
    )
}

/// Builds an unrelated-question device: `p` for the sensitive statement,
/// `1 - p` for the unrelated one.
pub fn make_unrelated(
    p: Probability,
    sensitive_text: &str,
    unrelated_text: &str,
) -> Result<DeviceSpec, DeviceError> {
    make_two_outcome(
        DeviceKind::UnrelatedQuestion,
        p,
        sensitive_text,
        (unrelated_text, StatementRole::Unrelated),
    )
}

fn make_two_outcome(
    kind: DeviceKind,
    p: Probability,
    sensitive_text: &str,
    (other_text, other_role): (&str, StatementRole),
) -> Result<DeviceSpec, DeviceError> {
    if sensitive_text.trim().is_empty() {
        return Err(DeviceError::EmptyStatement { index: 0 });
    }
    if other_text.trim().is_empty() {
        return Err(DeviceError::EmptyStatement { index: 1 });
    }
    Ok(DeviceSpec {
        kind,
        outcomes: vec![
            (Statement::new(sensitive_text, StatementRole::Sensitive), p),
            (Statement::new(other_text, other_role), p.complement()),
        ],
    })
}

/// Builds a generic device from `(text, probability)` pairs.
pub fn make_generic<'a, I>(outcomes: I) -> Result<DeviceSpec, DeviceError>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let outcomes = outcomes
        .into_iter()
        .map(|(text, q)| {
            Ok((
                Statement::new(text, StatementRole::Other),
                Probability::new(q)?,
            ))
        })
        .collect::<Result<Vec<_>, DeviceError>>()?;
    Ok(DeviceSpec {
        kind: DeviceKind::Generic,
        outcomes,
    })
}

/// A device that passed validation. Immutable, cheap to share.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedDevice {
    spec: DeviceSpec,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl ValidatedDevice {
    pub fn kind(&self) -> DeviceKind {
        self.spec.kind
    }

    pub fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    pub fn outcomes(&self) -> &[(Statement, Probability)] {
        &self.spec.outcomes
    }

    pub fn len(&self) -> usize {
        self.spec.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.outcomes.is_empty()
    }

    /// Probability of the first outcome. For two-outcome designs this is `p`.
    pub fn p(&self) -> f64 {
        self.spec.outcomes[0].1.value()
    }

    pub fn statement(&self, index: usize) -> Option<&Statement> {
        self.spec.outcomes.get(index).map(|(s, _)| s)
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.spec.outcomes.iter().map(|(s, _)| s)
    }

    /// Selects an outcome by inverse CDF: outcome `i` wins iff the uniform
    /// variate lies in `[C(i-1), C(i))`.
    pub fn draw<R: RandomSource + ?Sized>(&self, rng: &mut R) -> OutcomeDraw {
        let u = rng.next_unit();
        let index = self.index_for(u);
        OutcomeDraw {
            index,
            statement: self.spec.outcomes[index].0.clone(),
        }
    }

    fn index_for(&self, u: f64) -> usize {
        // First cumulative value strictly above u. Probabilities only sum to 1
        // within tolerance, so a variate past the final cumulative value falls
        // back to the last outcome that carries any mass.
        let found = self.cumulative.partition_point(|&c| c <= u);
        if found < self.cumulative.len() {
            found
        } else {
            self.spec
                .outcomes
                .iter()
                .rposition(|(_, q)| q.value() > 0.0)
                .expect("validated device has positive mass")
        }
    }
}

/// Checks every device invariant and seals the spec for drawing.
pub fn validate_device(spec: DeviceSpec) -> Result<ValidatedDevice, DeviceError> {
    if spec.outcomes.is_empty() {
        return Err(DeviceError::EmptyDevice);
    }
    for (index, (statement, _)) in spec.outcomes.iter().enumerate() {
        if statement.text.trim().is_empty() {
            return Err(DeviceError::EmptyStatement { index });
        }
    }
    for (_, q) in &spec.outcomes {
        if !(0.0..=1.0).contains(&q.value()) {
            return Err(DeviceError::InvalidProbability(q.value()));
        }
    }
    let sum: f64 = spec.outcomes.iter().map(|(_, q)| q.value()).sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(DeviceError::ProbabilitySum { sum });
    }

    let roles: Vec<StatementRole> = spec.outcomes.iter().map(|(s, _)| s.role).collect();
    match spec.kind {
        DeviceKind::Warner | DeviceKind::UnrelatedQuestion => {
            let expected = if spec.kind == DeviceKind::Warner {
                StatementRole::Complement
            } else {
                StatementRole::Unrelated
            };
            if roles != [StatementRole::Sensitive, expected] {
                return Err(DeviceError::InvalidLayout(format!(
                    "{:?} device needs roles [Sensitive, {:?}], got {:?}",
                    spec.kind, expected, roles
                )));
            }
            let p = spec.outcomes[0].1.value();
            if p <= 0.0 || p >= 1.0 {
                return Err(DeviceError::DegenerateDesign(format!(
                    "p = {p} offers respondents no randomization"
                )));
            }
            if spec.kind == DeviceKind::Warner && (p - 0.5).abs() < PROBABILITY_TOLERANCE {
                return Err(DeviceError::DegenerateDesign(
                    "Warner device requires p != 1/2".to_string(),
                ));
            }
        }
        DeviceKind::Generic => {
            if let Some(role) = roles.iter().find(|r| **r != StatementRole::Other) {
                return Err(DeviceError::InvalidLayout(format!(
                    "generic device outcomes must have role Other, got {role:?}"
                )));
            }
        }
    }

    let cumulative = spec
        .outcomes
        .iter()
        .scan(0.0, |acc, (_, q)| {
            *acc += q.value();
            Some(*acc)
        })
        .collect();
    Ok(ValidatedDevice { spec, cumulative })
}

/// The outcome a device selected. Never persisted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeDraw {
    pub index: usize,
    pub statement: Statement,
}

/// Source of uniform variates on `[0, 1)`.
///
/// Implemented for every `rand` generator, so a seeded `ChaCha20Rng` serves
/// tests and simulation while `OsRng` (or a generator seeded from it) serves
/// live surveys.
pub trait RandomSource {
    fn next_unit(&mut self) -> f64;
}

impl<R: RngCore + ?Sized> RandomSource for R {
    fn next_unit(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
