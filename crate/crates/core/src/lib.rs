//! Thompson sampling for online LQR control with posterior samples drawn by
//! preconditioned unadjusted Langevin dynamics.

#[cfg(test)]
#[macro_use]
mod test_util;

pub mod error;
pub mod langevin;
pub mod lqr;
pub mod noise;
pub mod posterior;
pub mod presets;
pub mod simulator;
pub mod harness;

pub use error::{Error, Result};
pub use langevin::{naive_schedule, sample_with_rejection, step_schedule, ula_chain, ula_trace, SampleOutcome, UlaSchedule};
pub use lqr::{
    average_cost, gain, in_admissible_set, solve_riccati, AdmissibleSet, CostSpec, Membership, MembershipFailure,
    RiccatiSolution, SystemParams,
};
pub use noise::{AsymmetricBuilder, NoiseKind, NoiseModel, PiecewiseCurvature};
pub use posterior::{PotentialState, PrecondMode, Preconditioner};
pub use presets::Preset;
pub use simulator::{
    episode_schedule, regret_series, run_psrl_baseline, run_tsld, Algorithm, EpisodeSchedule, ExcitationSpec,
    RegretSeries, RunRecord, SimConfig,
};
