//! Total occupancy times of thin strips around lines, for Brownian motion
//! and one-dimensional diffusions: limit laws, exact joint moments, and
//! Monte Carlo checks.

pub mod brownian;
pub mod expr;
pub mod law;
pub mod moments;
pub mod montecarlo;
pub mod partialsum;
pub mod quad;
pub mod rng;
pub mod scale;
pub mod stats;

pub use expr::{parse, EvalError, Expr, ParseError};
pub use law::{LawError, OccupancyLaw};
pub use moments::{MgfValue, MomentError, PathType};
pub use montecarlo::{JointBatch, SampleBatch, SimConfig, SimError, StripMode, Target};
pub use partialsum::{IidSpec, PsConfig};
pub use scale::{
    DiffusionSpec, ExtendedMass, LimitAnalysis, LineTarget, QuadPolicy, ScaleError, TransienceClass,
    TransienceMasses,
};
pub use stats::{FitReport, KsResult};
