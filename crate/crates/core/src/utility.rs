//! S-curve and logistic utilities, plus the change of variables that turns
//! the S-curve into a strictly concave function of the transformed rate
//! `x̃ = (x / r)^C2`.

use thiserror::Error;

/// Lower rate bound used when a scenario does not provide one, in Kbps.
pub const DEFAULT_MIN_RATE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UtilityError {
    #[error("encoding rate must be positive, got {0}")]
    NonPositiveEncodingRate(f64),
    #[error("C1 must be positive, got {0}")]
    NonPositiveC1(f64),
    #[error("C2 must be at least 1, got {0}")]
    C2BelowOne(f64),
    #[error("rate bounds must satisfy 0 < m < M, got m = {min}, M = {max}")]
    InvalidBounds { min: f64, max: f64 },
    #[error("logistic steepness must be positive, got {0}")]
    NonPositiveSteepness(f64),
    #[error("transformed rate must be non-negative, got {0}")]
    NegativeTransformedRate(f64),
}

/// `U(x) = (1 - exp(-C1 (x/r)^C2)) / (1 - exp(-C1))` on the rate domain `[m, M]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SCurveUtility {
    r: f64,
    c1: f64,
    c2: f64,
    min_rate: f64,
    max_rate: f64,
}

impl SCurveUtility {
    pub fn new(r: f64, c1: f64, c2: f64, min_rate: f64, max_rate: f64) -> Result<Self, UtilityError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(UtilityError::NonPositiveEncodingRate(r));
        }
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(UtilityError::NonPositiveC1(c1));
        }
        if !(c2 >= 1.0) || !c2.is_finite() {
            return Err(UtilityError::C2BelowOne(c2));
        }
        if !(min_rate > 0.0) || !(max_rate > min_rate) || !max_rate.is_finite() {
            return Err(UtilityError::InvalidBounds {
                min: min_rate,
                max: max_rate,
            });
        }
        Ok(Self {
            r,
            c1,
            c2,
            min_rate,
            max_rate,
        })
    }

    /// Bounds default to `m = 1 Kbps` and `M = r`.
    pub fn with_default_bounds(r: f64, c1: f64, c2: f64) -> Result<Self, UtilityError> {
        Self::new(r, c1, c2, DEFAULT_MIN_RATE, r)
    }

    pub fn encoding_rate(&self) -> f64 {
        self.r
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn min_rate(&self) -> f64 {
        self.min_rate
    }

    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    fn normalizer(&self) -> f64 {
        -(-self.c1).exp_m1()
    }

    /// Utility at rate `x` (Kbps).
    pub fn eval(&self, x: f64) -> f64 {
        -(-self.c1 * (x / self.r).powf(self.c2)).exp_m1() / self.normalizer()
    }

    /// `dU/dx`, the marginal utility in the original rate space.
    pub fn marginal(&self, x: f64) -> f64 {
        let z = x / self.r;
        self.c1 * self.c2 * z.powf(self.c2 - 1.0) / self.r * (-self.c1 * z.powf(self.c2)).exp() / self.normalizer()
    }

    /// Supremum of the utility as `x → ∞`.
    pub fn supremum(&self) -> f64 {
        1.0 / self.normalizer()
    }

    /// Rate where the second derivative changes sign; zero when `C2 = 1`.
    pub fn inflection_point(&self) -> f64 {
        if self.c2 == 1.0 {
            return 0.0;
        }
        self.r * ((self.c2 - 1.0) / (self.c1 * self.c2)).powf(1.0 / self.c2)
    }

    /// `x̃ = (x / r)^C2`.
    pub fn transform(&self, x: f64) -> f64 {
        (x / self.r).powf(self.c2)
    }

    /// `x = r x̃^(1/C2)`, without projection onto `[m, M]`.
    pub fn inverse_transform(&self, x_tilde: f64) -> Result<f64, UtilityError> {
        if x_tilde < 0.0 || x_tilde.is_nan() {
            return Err(UtilityError::NegativeTransformedRate(x_tilde));
        }
        Ok(self.rate_of(x_tilde))
    }

    /// Unchecked inverse transform for callers that already hold `x̃ ≥ 0`.
    #[inline]
    pub(crate) fn rate_of(&self, x_tilde: f64) -> f64 {
        self.r * x_tilde.powf(1.0 / self.c2)
    }

    /// Image of `[m, M]` under the transform.
    pub fn transformed_domain(&self) -> (f64, f64) {
        (self.transform(self.min_rate), self.transform(self.max_rate))
    }

    /// Clamps a rate into `[m, M]`.
    pub fn project(&self, x: f64) -> f64 {
        x.clamp(self.min_rate, self.max_rate)
    }

    /// The transformed utility and its first two derivatives at `x̃`.
    pub fn transformed(&self, x_tilde: f64) -> TransformedUtility {
        let n = self.normalizer();
        let e = (-self.c1 * x_tilde).exp();
        TransformedUtility {
            value: -(-self.c1 * x_tilde).exp_m1() / n,
            first: self.c1 * e / n,
            second: -self.c1 * self.c1 * e / n,
        }
    }

    /// `log(C1 C2 / (r (1 - e^{-C1})))`, the constant part of the
    /// closed-form rate response.
    pub fn response_constant(&self) -> f64 {
        (self.c1 * self.c2 / (self.r * self.normalizer())).ln()
    }
}

/// Value and derivatives of `Ũ(x̃) = (1 - e^{-C1 x̃}) / (1 - e^{-C1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedUtility {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// `U(x) = 1 / (1 + exp(-α (x - β)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticUtility {
    alpha: f64,
    beta: f64,
}

impl LogisticUtility {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, UtilityError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(UtilityError::NonPositiveSteepness(alpha));
        }
        Ok(Self { alpha, beta })
    }

    pub fn eval(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.alpha * (x - self.beta)).exp())
    }

    pub fn inflection_point(&self) -> f64 {
        self.beta
    }
}
