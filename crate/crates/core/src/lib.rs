//! Finite-horizon, state-constrained optimal control through a convexified
//! Lax-type formula.
//!
//! The pipeline is:
//!
//! 1. [`problem`]: describe `ẋ = f(s, x, a)`, stage cost `L`, terminal cost `g`,
//!    state constraint `c ≤ 0` and the admissible control set `A`.
//! 2. [`transform`]: move to the velocity control `b = -f(s, x, a)`, build
//!    `Conv(B(s, x))` and the conjugate stage cost `H*`.
//! 3. [`discretize`] + [`solver`]: transcribe the relaxed problem on a time grid
//!    and solve it as a convex program.
//! 4. [`decompose`] + [`rollout`]: split each relaxed velocity into admissible
//!    controls, schedule the switches, integrate the real dynamics and measure
//!    the gaps.
//! 5. [`oracle`]: grid dynamic programming and brute-force enumeration used as
//!    independent references.

pub mod decompose;
pub mod discretize;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod lp;
pub mod oracle;
pub mod pipeline;
pub mod problem;
pub mod rollout;
pub mod solver;
pub mod transform;

pub use error::{Error, Result};
pub use problem::{make_builtin, ProblemSpec};
