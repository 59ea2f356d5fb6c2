//! Power-constrained multi-user file downloading as a restless bandit.
//!
//! * [`single`]: frame-based drift-plus-penalty control of one user.
//! * [`multi`]: Lyapunov indexing across `N` users sharing `M` servers.
//! * [`special`]: single-buffer queues, the Max-λ policy and a coupled
//!   dominance verifier.
//! * [`oracle`]: the exact optimum from an occupation-measure LP.
//! * [`sim`], [`metrics`], [`experiment`]: random streams, file-length laws,
//!   metrics and the trial runner.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod multi;
pub mod oracle;
pub mod presets;
pub mod sim;
pub mod single;
pub mod special;

pub use error::{Error, Result, Violation};
pub use experiment::{run_trials, ExperimentDescriptor, ExperimentReport, PolicyKind};
pub use metrics::{Estimate, Metrics, TrialSummary};
pub use model::{Action, FileSize, SystemConfig, SystemState, UserParams};
pub use oracle::{build_occupation_lp, optimal_value, relative_error, OccupationLp};
pub use sim::{FileLengthLaw, FileLengthMode, RngStream};
pub use special::ZooPolicy;
