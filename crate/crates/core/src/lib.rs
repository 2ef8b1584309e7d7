//! Regulation-aware overtaking for two-vehicle autonomous racing.
//!
//! The crate is organized bottom-up:
//!
//! - [`track`]: arc-length parameterized racing line, curvature, and the
//!   tightened admissible corridor in Frenet coordinates.
//! - [`vehicle`]: kinematic bicycle dynamics in the Frenet frame, RK4
//!   discretization, and time-optimal reference speed profiles.
//! - [`mld`]: right-of-way and collision-avoidance rules, both as directly
//!   evaluable logic and as exact mixed-integer linear constraint blocks.
//! - [`miqp`]: a convex-QP branch-and-bound solver for the mixed-integer
//!   quadratic subproblems, plus an exhaustive enumeration oracle.
//! - [`rcmpc`]: the per-player regulation-compliant MPC problem and its
//!   mixed-integer SQP solver.
//! - [`game`]: iterative best response over the two-player racing game and
//!   the receding-horizon attacker policy.
//! - [`sim`]: closed-loop episodes, outcome classification, batch runs, and
//!   independent compliance/collision audits.

pub mod game;
pub mod mld;
pub mod miqp;
pub mod rcmpc;
pub mod sim;
pub mod track;
pub mod vehicle;
