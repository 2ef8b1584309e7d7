//! Kinematic bicycle dynamics in Frenet coordinates, RK4 discretization,
//! time-optimal reference speed profiles, and state-dependent references.
//!
//! State layout follows the CoG-referenced kinematic bicycle:
//! `(s, n, e_psi, v, delta_steer)` with inputs `(a, omega)`:
//!
//! ```text
//! s'     = v cos(e_psi + beta) / (1 - kappa(s) n)
//! n'     = v sin(e_psi + beta)
//! e_psi' = (v/L) cos(beta) tan(delta) - kappa(s) s'
//! v'     = a
//! delta' = omega
//! beta   = atan((l_r/L) tan(delta))
//! ```

use crate::track::{RacingLine, TrackError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("Frenet singularity: 1 - kappa*n = {0} <= 0 at s={1}, n={2}")]
    Singularity(f64, f64, f64),
    #[error("steering angle {0} too close to +/- pi/2")]
    SteeringOutOfDomain(f64),
    #[error("non-finite state produced by integration")]
    NonFinite,
    #[error(transparent)]
    Track(#[from] TrackError),
}

/// Geometric and actuation limits of one vehicle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Wheelbase L.
    pub wheelbase: f64,
    /// Distance from the rear axle to the CoG (l_r).
    pub rear_axle_to_cog: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// |delta_steer| bound.
    pub delta_max: f64,
    /// |omega| bound on the steering rate.
    pub omega_max: f64,
    /// Longitudinal acceleration budget for the reference speed profile.
    pub a_long_max: f64,
    /// Lateral acceleration budget for the reference speed profile.
    pub a_lat_max: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rear_axle_to_cog > 0.0 && self.rear_axle_to_cog < self.wheelbase) {
            return Err(format!(
                "need 0 < l_r < L (got l_r={}, L={})",
                self.rear_axle_to_cog, self.wheelbase
            ));
        }
        let bounds = [
            self.v_min,
            self.v_max,
            self.a_min,
            self.a_max,
            self.delta_max,
            self.omega_max,
        ];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err("all bounds must be finite".into());
        }
        if self.a_long_max <= 0.0 || self.a_lat_max <= 0.0 {
            return Err("a_long_max and a_lat_max must be > 0".into());
        }
        Ok(())
    }
}

/// Frenet-frame vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub s: f64,
    pub n: f64,
    pub e_psi: f64,
    pub v: f64,
    pub delta_steer: f64,
}

impl VehicleState {
    pub const DIM: usize = 5;

    pub fn to_array(self) -> [f64; 5] {
        [self.s, self.n, self.e_psi, self.v, self.delta_steer]
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self {
            s: x[0],
            n: x[1],
            e_psi: x[2],
            v: x[3],
            delta_steer: x[4],
        }
    }
}

/// Acceleration and steering-rate command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const DIM: usize = 2;

    pub const ZERO: ControlInput = ControlInput { a: 0.0, omega: 0.0 };
}

/// Kinematic side-slip angle at the CoG: `beta = atan((l_r/L) tan(delta))`.
pub fn side_slip(delta_steer: f64, p: &VehicleParams) -> Result<f64, ModelError> {
    if (delta_steer.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-9
        || delta_steer.abs() > std::f64::consts::FRAC_PI_2
    {
        return Err(ModelError::SteeringOutOfDomain(delta_steer));
    }
    Ok(((p.rear_axle_to_cog / p.wheelbase) * delta_steer.tan()).atan())
}

/// Continuous-time state derivative of the Frenet kinematic bicycle.
pub fn continuous_dynamics(
    x: &VehicleState,
    u: &ControlInput,
    track: &RacingLine,
    p: &VehicleParams,
) -> Result<[f64; 5], ModelError> {
    let kappa = track.kappa(x.s)?;
    let denom = 1.0 - kappa * x.n;
    if denom <= 0.0 {
        return Err(ModelError::Singularity(denom, x.s, x.n));
    }
    let beta = side_slip(x.delta_steer, p)?;
    let s_dot = x.v * (x.e_psi + beta).cos() / denom;
    let n_dot = x.v * (x.e_psi + beta).sin();
    let epsi_dot = (x.v / p.wheelbase) * beta.cos() * x.delta_steer.tan() - kappa * s_dot;
    Ok([s_dot, n_dot, epsi_dot, u.a, u.omega])
}

/// Classical RK4 step with zero-order-hold input; this is both the
/// prediction model and the simulation integrator.
pub fn rk4_step(
    x: &VehicleState,
    u: &ControlInput,
    ts: f64,
    track: &RacingLine,
    p: &VehicleParams,
) -> Result<VehicleState, ModelError> {
    let xa = x.to_array();
    let k1 = continuous_dynamics(x, u, track, p)?;
    let k2 = continuous_dynamics(&shifted(xa, &k1, ts / 2.0), u, track, p)?;
    let k3 = continuous_dynamics(&shifted(xa, &k2, ts / 2.0), u, track, p)?;
    let k4 = continuous_dynamics(&shifted(xa, &k3, ts), u, track, p)?;
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = xa[i] + ts / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if !out[i].is_finite() {
            return Err(ModelError::NonFinite);
        }
    }
    Ok(VehicleState::from_array(out))
}

fn shifted(x: [f64; 5], k: &[f64; 5], h: f64) -> VehicleState {
    VehicleState::from_array([
        x[0] + h * k[0],
        x[1] + h * k[1],
        x[2] + h * k[2],
        x[3] + h * k[3],
        x[4] + h * k[4],
    ])
}

/// Reference speed along the racing line, sampled on the track grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub samples: Vec<(f64, f64)>,
    pub closed: bool,
    pub total_length: f64,
}

impl SpeedProfile {
    /// Reference speed at `s` by linear interpolation (wrapped when closed).
    pub fn v_ref(&self, s: f64) -> f64 {
        let sw = if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s.clamp(self.samples[0].0, self.samples.last().unwrap().0)
        };
        let idx = self.samples.partition_point(|x| x.0 <= sw);
        let i = idx.saturating_sub(1).min(self.samples.len() - 2);
        let (s0, v0) = self.samples[i];
        let (s1, v1) = self.samples[i + 1];
        v0 + (v1 - v0) * ((sw - s0) / (s1 - s0)).clamp(0.0, 1.0)
    }

    /// dv/ds at `s` by central finite difference on the sample table.
    pub fn slope(&self, s: f64) -> f64 {
        let n = self.samples.len();
        let sw = if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s.clamp(self.samples[0].0, self.samples.last().unwrap().0)
        };
        let idx = self.samples.partition_point(|x| x.0 <= sw);
        let i = idx.saturating_sub(1).min(n - 2);
        let (prev, next) = if self.closed {
            // Neighbors across the wrap: last interior sample pairs with the
            // first (endpoints coincide on closed tracks).
            let prev = if i == 0 { n - 2 } else { i - 1 };
            (prev, (i + 2).min(n - 1) % (n - 1).max(1))
        } else {
            (i.saturating_sub(1), (i + 2).min(n - 1))
        };
        let (sp, vp) = self.samples[prev];
        let (sn, vn) = self.samples[next];
        let mut ds = sn - sp;
        if self.closed && ds <= 0.0 {
            ds += self.total_length;
        }
        if ds.abs() < 1e-12 {
            0.0
        } else {
            (vn - vp) / ds
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,v_ref\n");
        for (s, v) in &self.samples {
            out.push_str(&format!("{s},{v}\n"));
        }
        out
    }

    pub fn validate(&self, track: &RacingLine, p: &VehicleParams) -> Result<(), String> {
        for &(s, v) in &self.samples {
            if v <= 0.0 {
                return Err(format!("v_ref must be > 0 (s={s})"));
            }
            let kappa = track.kappa(s).map_err(|e| e.to_string())?;
            if v * v * kappa.abs() > p.a_lat_max * (1.0 + 1e-9) {
                return Err(format!("lateral budget violated at s={s}"));
            }
        }
        for w in self.samples.windows(2) {
            let ds = w[1].0 - w[0].0;
            let accel = (w[1].1.powi(2) - w[0].1.powi(2)) / (2.0 * ds);
            if accel.abs() > p.a_long_max * (1.0 + 1e-9) {
                return Err(format!(
                    "longitudinal budget violated between s={} and s={}",
                    w[0].0, w[1].0
                ));
            }
        }
        Ok(())
    }
}

/// Forward-backward time-optimal speed profile on the track grid.
///
/// Speeds are first capped by `min(v_max, sqrt(a_lat_max/|kappa|))`, then a
/// forward pass limits acceleration and a backward pass limits deceleration,
/// both by `a_long_max`. Closed tracks iterate the passes to a fixed point
/// across the wrap.
pub fn time_optimal_speed_profile(track: &RacingLine, p: &VehicleParams) -> SpeedProfile {
    let n = track.samples.len();
    let mut v: Vec<f64> = track
        .samples
        .iter()
        .map(|x| {
            let lat_cap = if x.kappa.abs() > 1e-12 {
                (p.a_lat_max / x.kappa.abs()).sqrt()
            } else {
                f64::INFINITY
            };
            p.v_max.min(lat_cap)
        })
        .collect();

    let passes = if track.closed { 4 } else { 1 };
    for _ in 0..passes {
        let mut changed = false;
        // Forward: limit acceleration.
        for i in 0..n - 1 {
            let ds = track.samples[i + 1].s - track.samples[i].s;
            let reach = (v[i] * v[i] + 2.0 * p.a_long_max * ds).sqrt();
            if v[i + 1] > reach {
                v[i + 1] = reach;
                changed = true;
            }
        }
        if track.closed && v[0] > v[n - 1] {
            v[0] = v[n - 1];
            changed = true;
        }
        // Backward: limit deceleration.
        for i in (0..n - 1).rev() {
            let ds = track.samples[i + 1].s - track.samples[i].s;
            let reach = (v[i + 1] * v[i + 1] + 2.0 * p.a_long_max * ds).sqrt();
            if v[i] > reach {
                v[i] = reach;
                changed = true;
            }
        }
        if track.closed && v[n - 1] > v[0] {
            v[n - 1] = v[0];
            changed = true;
        }
        if !changed {
            break;
        }
    }

    SpeedProfile {
        samples: track
            .samples
            .iter()
            .zip(v)
            .map(|(x, vi)| (x.s, vi))
            .collect(),
        closed: track.closed,
        total_length: track.total_length,
    }
}

/// State-dependent reference for the tracking cost: on the racing line, at
/// profile speed, with curvature-matched steering.
pub fn reference_at(
    x: &VehicleState,
    track: &RacingLine,
    profile: &SpeedProfile,
    p: &VehicleParams,
) -> (VehicleState, ControlInput) {
    let kappa = track.kappa(x.s).unwrap_or(0.0);
    let v_ref = profile.v_ref(x.s);
    // On the line (n=0, e_psi=0) the yaw-error rate vanishes when
    // (v/L) cos(beta) tan(delta) = kappa * v cos(beta), i.e. tan(delta) = kappa L.
    let delta_ref = (kappa * p.wheelbase).atan();
    let r_x = VehicleState {
        s: x.s,
        n: 0.0,
        e_psi: 0.0,
        v: v_ref,
        delta_steer: delta_ref,
    };
    // a = dv/dt = v * dv/ds along the profile.
    let r_u = ControlInput {
        a: (v_ref * profile.slope(x.s)).clamp(p.a_min, p.a_max),
        omega: 0.0,
    };
    (r_x, r_u)
}
