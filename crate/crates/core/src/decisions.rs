//! Decision vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of `[0,1]^n`, read as the success probabilities of `n`
/// independent Bernoulli variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ContinuousDecisions(Vec<f64>);

/// A point of `{0,1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryDecisions(Vec<bool>);

/// Checks that every entry is finite and lies in `[0,1]`.
pub fn validate_continuous(values: Vec<f64>) -> Result<ContinuousDecisions> {
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
    {
        return Err(Error::OutOfUnitInterval { index, value });
    }
    Ok(ContinuousDecisions(values))
}

/// Entry `i` of the result is 1 iff `values[i] >= t`.
pub fn threshold(values: &ContinuousDecisions, t: f64) -> Result<BinaryDecisions> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::param("threshold", format!("{t} is not in (0, 1)")));
    }
    Ok(BinaryDecisions(values.0.iter().map(|&v| v >= t).collect()))
}

impl ContinuousDecisions {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_continuous(values)
    }

    /// Every entry set to `value`, which must lie in `[0,1]`.
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        validate_continuous(vec![value; n])
    }

    /// Clamps each entry into `[0,1]`. Non-finite entries are rejected.
    pub(crate) fn from_clamped(values: Vec<f64>) -> Result<Self> {
        validate_continuous(values.into_iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { v }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn to_binary(&self) -> Option<BinaryDecisions> {
        self.is_binary().then(|| BinaryDecisions(self.0.iter().map(|&v| v == 1.0).collect()))
    }
}

impl TryFrom<Vec<f64>> for ContinuousDecisions {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        validate_continuous(values)
    }
}

impl From<ContinuousDecisions> for Vec<f64> {
    fn from(d: ContinuousDecisions) -> Self {
        d.0
    }
}

impl From<&BinaryDecisions> for ContinuousDecisions {
    fn from(d: &BinaryDecisions) -> Self {
        ContinuousDecisions(d.to_f64())
    }
}

impl BinaryDecisions {
    pub fn new(bits: Vec<bool>) -> Self {
        BinaryDecisions(bits)
    }

    pub fn zeros(n: usize) -> Self {
        BinaryDecisions(vec![false; n])
    }

    /// Bits of `mask`, least significant first. Only for `n <= 64`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        assert!(n <= 64);
        BinaryDecisions((0..n).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Embeds the bits into `[0,1]^n`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl From<Vec<bool>> for BinaryDecisions {
    fn from(bits: Vec<bool>) -> Self {
        BinaryDecisions(bits)
    }
}
