use rand::Rng;
use rand_distr::{Distribution, LogNormal, Pareto, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Law of a single cycle weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightLaw {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    Pareto { scale: f64, tail: f64 },
    Lognormal { location: f64, scale: f64 },
}

impl WeightLaw {
    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        let ok = match *self {
            WeightLaw::Constant { value } => finite(value) && value >= 0.0,
            WeightLaw::Uniform { low, high } => finite(low) && finite(high) && low >= 0.0 && high >= low,
            WeightLaw::Pareto { scale, tail } => finite(scale) && finite(tail) && scale > 0.0 && tail > 0.0,
            WeightLaw::Lognormal { location, scale } => finite(location) && finite(scale) && scale >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("{self:?} does not define a law on [0, inf)")))
        }
    }

    /// Infimum of the support.
    pub fn infimum(&self) -> f64 {
        match *self {
            WeightLaw::Constant { value } => value,
            WeightLaw::Uniform { low, .. } => low,
            WeightLaw::Pareto { scale, .. } => scale,
            WeightLaw::Lognormal { .. } => 0.0,
        }
    }

    /// Whether the infimum of the support is positive.
    pub fn is_strictly_positive(&self) -> bool {
        self.infimum() > 0.0
    }

    /// Whether the law puts all of its mass on `(0, inf)`.
    pub fn is_almost_surely_positive(&self) -> bool {
        match *self {
            WeightLaw::Constant { value } => value > 0.0,
            WeightLaw::Uniform { high, .. } => high > 0.0,
            WeightLaw::Pareto { .. } | WeightLaw::Lognormal { .. } => true,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            WeightLaw::Constant { value } => value,
            WeightLaw::Uniform { low, high } => {
                if high > low {
                    Uniform::new(low, high).expect("validated").sample(rng)
                } else {
                    low
                }
            }
            WeightLaw::Pareto { scale, tail } => Pareto::new(scale, tail).expect("validated").sample(rng),
            WeightLaw::Lognormal { location, scale } => {
                LogNormal::new(location, scale).expect("validated").sample(rng)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, DOMAIN_ENV};

    #[test]
    fn rejects_negative_support() {
        assert!(WeightLaw::Constant { value: -1.0 }.validate().is_err());
        assert!(WeightLaw::Uniform { low: -0.5, high: 1.0 }.validate().is_err());
        assert!(WeightLaw::Pareto { scale: 0.0, tail: 2.0 }.validate().is_err());
        assert!(WeightLaw::Uniform { low: 1.0, high: 2.0 }.validate().is_ok());
    }

    #[test]
    fn samples_respect_support() {
        let mut rng = stream(1, DOMAIN_ENV, 0);
        let laws = [
            WeightLaw::Uniform { low: 1.0, high: 2.0 },
            WeightLaw::Pareto { scale: 1.0, tail: 3.0 },
            WeightLaw::Lognormal { location: 0.0, scale: 1.0 },
        ];
        for law in laws {
            for _ in 0..1000 {
                let w = law.sample(&mut rng);
                assert!(w >= law.infimum() && w.is_finite());
            }
        }
    }

    #[test]
    fn json_encoding() {
        let law: WeightLaw = serde_json::from_str(r#"{"kind":"pareto","scale":1,"tail":3}"#).unwrap();
        assert_eq!(law, WeightLaw::Pareto { scale: 1.0, tail: 3.0 });
        assert!(law.is_strictly_positive());
        assert!(!WeightLaw::Lognormal { location: 0.0, scale: 1.0 }.is_strictly_positive());
    }
}
