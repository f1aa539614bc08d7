//! Exact and out-of-core Walsh-Hadamard transforms.
//!
//! The transform is `y_i = sum_j (-1)^{popcount(i & j)} x_j` in natural
//! order, computed in place over `i64` (exact, overflow-checked) or `f64`.

pub mod aligned;
pub mod dataset;
pub mod error;
pub mod external;
pub mod iobench;
pub mod noisy;
pub mod parallel;
pub mod perf;
pub mod signal;
pub mod subspace;
pub mod transform;

pub use dataset::{BlockSpec, DatasetFile, Metadata, OpenFlags};
pub use error::{Error, Result};
pub use external::{run_external, ExternalMode, ExternalOptions, ExternalReport, PassPlan};
pub use noisy::{Coefficient, NoiseKind, NoisySignalSpec, SnrReport};
pub use parallel::{ParallelPlan, ParallelStats};
pub use perf::{PerfEstimate, PerfParams};
pub use signal::{Domain, Element, Samples, Scalar, ScalarKind, Signal};
pub use subspace::LinearMap;
pub use transform::{fwht_inplace, inverse_wht_inplace, wht_bruteforce};
