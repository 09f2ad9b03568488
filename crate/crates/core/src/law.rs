//! The limit law of a total occupancy time: either almost surely infinite,
//! or a point mass at zero mixed with an exponential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LawError {
    #[error("atom weight {0} is outside [0, 1]")]
    AtomWeight(f64),
    #[error("exponential rate {0} is not a positive finite number")]
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OccupancyLaw {
    AlmostSurelyInfinite,
    /// `atom_weight` at zero, the remaining mass on `Exp(rate)`.
    Mixture { atom_weight: f64, rate: f64 },
}

impl OccupancyLaw {
    pub fn mixture(atom_weight: f64, rate: f64) -> Result<Self, LawError> {
        if !(0.0..=1.0).contains(&atom_weight) {
            return Err(LawError::AtomWeight(atom_weight));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(LawError::Rate(rate));
        }
        Ok(OccupancyLaw::Mixture { atom_weight, rate })
    }

    /// A pure exponential law.
    pub fn exponential(rate: f64) -> Result<Self, LawError> {
        Self::mixture(0.0, rate)
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, OccupancyLaw::Mixture { .. })
    }

    pub fn atom_weight(&self) -> Option<f64> {
        match self {
            OccupancyLaw::Mixture { atom_weight, .. } => Some(*atom_weight),
            OccupancyLaw::AlmostSurelyInfinite => None,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            OccupancyLaw::Mixture { rate, .. } => Some(*rate),
            OccupancyLaw::AlmostSurelyInfinite => None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// `E V^p`; infinite for the degenerate law.
    pub fn moment(&self, p: u32) -> f64 {
        match *self {
            OccupancyLaw::AlmostSurelyInfinite => f64::INFINITY,
            OccupancyLaw::Mixture { atom_weight, rate } => {
                if p == 0 {
                    return 1.0;
                }
                let mut m = 1.0 - atom_weight;
                for k in 1..=p {
                    m *= k as f64 / rate;
                }
                m
            }
        }
    }

    /// `E exp(-lambda V)` for `lambda >= 0`.
    pub fn laplace(&self, lambda: f64) -> f64 {
        match *self {
            OccupancyLaw::AlmostSurelyInfinite => {
                if lambda == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            OccupancyLaw::Mixture { atom_weight, rate } => {
                (1.0 - atom_weight) * rate / (rate + lambda) + atom_weight
            }
        }
    }

    /// `P(V <= v)`.
    pub fn cdf(&self, v: f64) -> f64 {
        match *self {
            OccupancyLaw::AlmostSurelyInfinite => 0.0,
            OccupancyLaw::Mixture { atom_weight, rate } => {
                if v < 0.0 {
                    0.0
                } else {
                    atom_weight + (1.0 - atom_weight) * (-(-rate * v).exp_m1())
                }
            }
        }
    }
}
