//! Fuzzy-logic reward calculus.
//!
//! Every shaped (V2) reward is a tree of fuzzy constraints. A leaf maps one
//! geometric measurement to a satisfaction degree in `(0, 1]` with a
//! long-tailed sigmoid, inner nodes combine degrees with the Hamacher t-norm
//! (conjunction) or a normalized weighted sum (disjunction), and the root is
//! rescaled to `(0, 10]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reward value reached when every constraint is satisfied.
pub const REWARD_SCALE: f64 = 10.0;

/// Default fuzzy value at exactly one margin past a bound.
pub const DEFAULT_VALUE_AT_MARGIN: f64 = 0.1;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Degree to which a constraint is satisfied, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct FuzzyValue(f64);

impl FuzzyValue {
    pub const ONE: FuzzyValue = FuzzyValue(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(FuzzyValue(value))
        } else {
            Err(Error::Domain(format!(
                "fuzzy value {value} outside (0, 1]"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    // Keeps the open lower bound when a long tail underflows.
    #[inline]
    fn saturating(value: f64) -> Self {
        FuzzyValue(value.clamp(f64::MIN_POSITIVE, 1.0))
    }
}

impl<'de> Deserialize<'de> for FuzzyValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        FuzzyValue::new(v).map_err(serde::de::Error::custom)
    }
}

/// Bounds-plus-margin shape of a single fuzzy constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub lower: f64,
    pub upper: f64,
    pub margin: f64,
    #[serde(default = "default_value_at_margin")]
    pub value_at_margin: f64,
}

fn default_value_at_margin() -> f64 {
    DEFAULT_VALUE_AT_MARGIN
}

impl ToleranceSpec {
    pub fn new(lower: f64, upper: f64, margin: f64) -> Result<Self> {
        Self::with_value_at_margin(lower, upper, margin, DEFAULT_VALUE_AT_MARGIN)
    }

    pub fn with_value_at_margin(
        lower: f64,
        upper: f64,
        margin: f64,
        value_at_margin: f64,
    ) -> Result<Self> {
        let spec = ToleranceSpec {
            lower,
            upper,
            margin,
            value_at_margin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper) {
            return Err(Error::Parameter(format!(
                "tolerance bounds [{}, {}] are not an ordered finite interval",
                self.lower, self.upper
            )));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Parameter(format!(
                "tolerance margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.value_at_margin > 0.0 && self.value_at_margin < 1.0) {
            return Err(Error::Parameter(format!(
                "value_at_margin must lie in (0, 1), got {}",
                self.value_at_margin
            )));
        }
        Ok(())
    }
}

/// Long-tailed sigmoid `1 / (1 + (x s)^2)` with `s` chosen so that the value
/// at `x = 1` equals `value_at_1`.
///
/// `x` is a violation distance normalized by the margin, so `x = 0` means the
/// constraint is met.
pub fn long_tail_sigmoid(x: f64, value_at_1: f64) -> Result<FuzzyValue> {
    if !(value_at_1 > 0.0 && value_at_1 < 1.0) {
        return Err(Error::Parameter(format!(
            "value_at_1 must lie in (0, 1), got {value_at_1}"
        )));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::Parameter(format!(
            "normalized violation must be non-negative, got {x}"
        )));
    }
    let scale_sq = 1.0 / value_at_1 - 1.0;
    Ok(FuzzyValue::saturating(1.0 / (1.0 + x * x * scale_sq)))
}

/// Fuzzy satisfaction of `lower <= x <= upper`, decaying over `margin`
/// outside the bounds.
pub fn tolerance(x: f64, spec: &ToleranceSpec) -> Result<FuzzyValue> {
    spec.validate()?;
    if x.is_nan() {
        return Err(Error::Parameter("tolerance measurement is NaN".into()));
    }
    let distance = if x < spec.lower {
        spec.lower - x
    } else if x > spec.upper {
        x - spec.upper
    } else {
        return Ok(FuzzyValue::ONE);
    };
    long_tail_sigmoid(distance / spec.margin, spec.value_at_margin)
}

/// Hamacher product `ab / (a + b - ab)`, the fuzzy conjunction.
#[inline]
pub fn hamacher_product(a: FuzzyValue, b: FuzzyValue) -> FuzzyValue {
    let (lo, hi) = if a.get() <= b.get() {
        (a.get(), b.get())
    } else {
        (b.get(), a.get())
    };
    // a + b - ab written as hi + lo(1 - hi): order-independent, and exactly 1
    // when hi = 1, so the identity element survives rounding.
    let denom = hi + lo * (1.0 - hi);
    FuzzyValue::saturating((lo * hi / denom).min(lo))
}

/// Weighted sum disjunction with weights that must be non-negative and sum
/// to one.
pub fn weighted_disjunction(values: &[FuzzyValue], weights: &[f64]) -> Result<FuzzyValue> {
    validate_weights(values.len(), weights)?;
    let sum: f64 = values.iter().zip(weights).map(|(v, w)| v.get() * w).sum();
    Ok(FuzzyValue::saturating(sum))
}

fn validate_weights(n_values: usize, weights: &[f64]) -> Result<()> {
    if n_values == 0 || n_values != weights.len() {
        return Err(Error::Parameter(format!(
            "weighted disjunction needs matching nonzero lengths, got {n_values} values and {} weights",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Parameter(
            "disjunction weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Parameter(format!(
            "disjunction weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Map the final fuzzy value onto the reward range `(0, 10]`.
#[inline]
pub fn scale_reward(f: FuzzyValue) -> f64 {
    REWARD_SCALE * f.get()
}

/// A serializable constraint tree over measurements of type `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint<M> {
    Tolerance {
        measure: M,
        spec: ToleranceSpec,
        /// Treat the constraint as satisfied once the task goal is reached.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        release_on_success: bool,
    },
    Hamacher {
        children: Vec<Constraint<M>>,
    },
    WeightedSum {
        weights: Vec<f64>,
        children: Vec<Constraint<M>>,
    },
}

impl<M> Constraint<M> {
    pub fn tolerance(measure: M, spec: ToleranceSpec) -> Self {
        Constraint::Tolerance {
            measure,
            spec,
            release_on_success: false,
        }
    }

    pub fn released(measure: M, spec: ToleranceSpec) -> Self {
        Constraint::Tolerance {
            measure,
            spec,
            release_on_success: true,
        }
    }

    pub fn and(children: Vec<Constraint<M>>) -> Self {
        Constraint::Hamacher { children }
    }

    pub fn or(weighted: Vec<(f64, Constraint<M>)>) -> Self {
        let (weights, children) = weighted.into_iter().unzip();
        Constraint::WeightedSum { weights, children }
    }

    /// Check structural validity: specs, arities, and weight normalization.
    pub fn validate(&self) -> Result<()> {
        match self {
            Constraint::Tolerance { spec, .. } => spec.validate(),
            Constraint::Hamacher { children } => {
                if children.is_empty() {
                    return Err(Error::Parameter("empty conjunction".into()));
                }
                children.iter().try_for_each(Constraint::validate)
            }
            Constraint::WeightedSum { weights, children } => {
                validate_weights(children.len(), weights)?;
                children.iter().try_for_each(Constraint::validate)
            }
        }
    }

    /// Evaluate the tree. `measure` reads one measurement from the current
    /// state; `solved` releases every constraint flagged `release_on_success`.
    pub fn evaluate<F>(&self, measure: &F, solved: bool) -> Result<FuzzyValue>
    where
        F: Fn(&M) -> f64,
    {
        match self {
            Constraint::Tolerance {
                measure: m,
                spec,
                release_on_success,
            } => {
                if *release_on_success && solved {
                    Ok(FuzzyValue::ONE)
                } else {
                    tolerance(measure(m), spec)
                }
            }
            Constraint::Hamacher { children } => {
                let mut iter = children.iter();
                let first = iter
                    .next()
                    .ok_or_else(|| Error::Parameter("empty conjunction".into()))?
                    .evaluate(measure, solved)?;
                iter.try_fold(first, |acc, c| {
                    Ok(hamacher_product(acc, c.evaluate(measure, solved)?))
                })
            }
            Constraint::WeightedSum { weights, children } => {
                let values = children
                    .iter()
                    .map(|c| c.evaluate(measure, solved))
                    .collect::<Result<Vec<_>>>()?;
                weighted_disjunction(&values, weights)
            }
        }
    }

    /// Values of the root's direct children (the root itself for a leaf).
    pub fn component_values<F>(&self, measure: &F, solved: bool) -> Result<Vec<FuzzyValue>>
    where
        F: Fn(&M) -> f64,
    {
        match self {
            Constraint::Tolerance { .. } => Ok(vec![self.evaluate(measure, solved)?]),
            Constraint::Hamacher { children } | Constraint::WeightedSum { children, .. } => {
                children.iter().map(|c| c.evaluate(measure, solved)).collect()
            }
        }
    }

    pub fn leaves(&self) -> Vec<&M> {
        match self {
            Constraint::Tolerance { measure, .. } => vec![measure],
            Constraint::Hamacher { children } | Constraint::WeightedSum { children, .. } => {
                children.iter().flat_map(Constraint::leaves).collect()
            }
        }
    }
}
