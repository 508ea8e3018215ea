//! Closed-form denoisers: the memorizing empirical posterior, the
//! generalizing rule posterior, and cube-plus-rule energy models.

mod empirical;
mod energy;
mod rule;

pub use empirical::{EmpiricalDenoiser, NEAREST_SIGMA};
pub use energy::{EnergyConfig, EnergyModel};
pub use rule::{RuleDenoiser, RULE_DENOISER_CAP};
