//! Racing line, curvature, and the tightened admissible corridor.
//!
//! Everything downstream works in Frenet coordinates relative to the racing
//! line: `s` is arc length along the line, `n` is the signed lateral offset
//! (positive to the left). Boundaries and curvature are stored as sampled
//! tables with linear interpolation; closed tracks wrap `s` modulo the total
//! length.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("track samples must be strictly increasing in s (sample {index})")]
    NonMonotoneSamples { index: usize },
    #[error("track needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("first sample must be at s=0 (got {0})")]
    FirstSampleNotZero(f64),
    #[error("corridor empty after tightening at s={s}: n_left={n_left}, n_right={n_right}")]
    EmptyCorridor { s: f64, n_left: f64, n_right: f64 },
    #[error("closed track endpoint mismatch in {field}: {at_zero} vs {at_end}")]
    ClosedEndpointMismatch {
        field: &'static str,
        at_zero: f64,
        at_end: f64,
    },
    #[error("tightening margin must be >= 0 (got {0})")]
    NegativeMargin(f64),
    #[error("s={0} outside [0, {1}] on an open track")]
    OutOfRange(f64, f64),
    #[error("non-finite value in track data at sample {index}")]
    NonFinite { index: usize },
    #[error("failed to read track file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad track csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad track csv field: {0}")]
    BadField(String),
}

/// One row of the sampled racing-line table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub s: f64,
    pub kappa: f64,
    /// Raw geometric boundary offsets (left positive, right negative).
    pub beta_left: f64,
    pub beta_right: f64,
    /// Tightened corridor offsets.
    pub n_left: f64,
    pub n_right: f64,
}

/// Arc-length parameterized racing line with curvature and corridor tables.
#[derive(Debug, Clone)]
pub struct RacingLine {
    pub total_length: f64,
    pub closed: bool,
    pub samples: Vec<TrackSample>,
    pub tightening_margin: f64,
}

/// A position in the Frenet frame of the racing line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetPosition {
    pub s: f64,
    pub n: f64,
}

impl FrenetPosition {
    pub fn new(s: f64, n: f64) -> Self {
        Self { s, n }
    }
}

/// Analytic generators and the file loader accepted by [`build_track`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackSpec {
    /// Straight corridor of constant half-width.
    Straight { length: f64, half_width: f64 },
    /// Circle of constant radius; closed, corridor of constant half-width.
    Circle { radius: f64, half_width: f64 },
    /// Closed loop whose racing line shifts laterally across a corridor of
    /// constant total width. `shift` is the peak lateral offset of the line
    /// from the corridor center; `ramp_length` the arc length of each
    /// cosine-shaped transition. Curvature follows from the lateral shift.
    Chicane {
        length: f64,
        half_width: f64,
        shift: f64,
        ramp_length: f64,
    },
    /// CSV file with header `s,kappa,beta_left,beta_right`.
    File { path: String, closed: bool },
}

/// Default table pitch for analytic generators, in meters.
pub const DEFAULT_SAMPLE_PITCH: f64 = 0.5;

const CLOSED_MATCH_TOL: f64 = 1e-9;

/// Lateral offset of the chicane racing line from the corridor center, and
/// its first two derivatives with respect to arc length.
///
/// Layout over one lap: straight lead-in, ramp to `+shift`, hold, ramp to
/// `-shift`, hold, ramp back to zero, straight lead-out. All segment lengths
/// derive from `length` and `ramp_length` so the profile closes with zero
/// slope at both ends.
fn chicane_offset(s: f64, length: f64, shift: f64, ramp: f64) -> (f64, f64, f64) {
    let hold = (length - 3.0 * ramp) / 4.0;
    // Segment boundaries: [0,hold) straight, ramp up, hold at +shift,
    // ramp down (2*ramp long, +shift -> -shift), hold at -shift, ramp up to 0...
    // Using: straight(hold), ramp(+), hold, double-ramp(-), hold, ramp(0..),
    // where the middle transition spans 2*shift over `ramp`.
    let segs = [
        (hold, 0.0, 0.0),           // lead-in at 0
        (ramp, 0.0, shift),         // up to +shift
        (hold, shift, shift),       // hold +
        (ramp, shift, -shift),      // across to -shift
        (hold, -shift, -shift),     // hold -
        (ramp, -shift, 0.0),        // back to 0
        (hold, 0.0, 0.0),           // lead-out at 0
    ];
    let mut base = 0.0;
    for (len, y0, y1) in segs {
        if s <= base + len || base + len >= length - 1e-9 {
            if (y1 - y0).abs() < 1e-12 {
                return (y0, 0.0, 0.0);
            }
            let tau = ((s - base) / len).clamp(0.0, 1.0);
            let phase = std::f64::consts::PI * tau;
            let y = y0 + (y1 - y0) * 0.5 * (1.0 - phase.cos());
            let dy = (y1 - y0) * 0.5 * std::f64::consts::PI / len * phase.sin();
            let ddy = (y1 - y0) * 0.5 * (std::f64::consts::PI / len).powi(2) * phase.cos();
            return (y, dy, ddy);
        }
        base += len;
    }
    (0.0, 0.0, 0.0)
}

/// Build and validate a racing line from a specification.
pub fn build_track(spec: &TrackSpec, tightening_margin: f64) -> Result<RacingLine, TrackError> {
    build_track_with_pitch(spec, tightening_margin, DEFAULT_SAMPLE_PITCH)
}

/// [`build_track`] with an explicit table pitch for the analytic generators.
pub fn build_track_with_pitch(
    spec: &TrackSpec,
    tightening_margin: f64,
    pitch: f64,
) -> Result<RacingLine, TrackError> {
    if tightening_margin < 0.0 {
        return Err(TrackError::NegativeMargin(tightening_margin));
    }
    let (raw, closed): (Vec<(f64, f64, f64, f64)>, bool) = match spec {
        TrackSpec::Straight { length, half_width } => (
            sample_grid(*length, pitch)
                .map(|s| (s, 0.0, *half_width, -*half_width))
                .collect(),
            false,
        ),
        TrackSpec::Circle { radius, half_width } => {
            let length = 2.0 * std::f64::consts::PI * radius;
            (
                sample_grid(length, pitch)
                    .map(|s| (s, 1.0 / radius, *half_width, -*half_width))
                    .collect(),
                true,
            )
        }
        TrackSpec::Chicane {
            length,
            half_width,
            shift,
            ramp_length,
        } => (
            sample_grid(*length, pitch)
                .map(|s| {
                    let (y, dy, ddy) = chicane_offset(s, *length, *shift, *ramp_length);
                    let kappa = ddy / (1.0 + dy * dy).powf(1.5);
                    (s, kappa, *half_width - y, -*half_width - y)
                })
                .collect(),
            true,
        ),
        TrackSpec::File { path, closed } => (load_boundary_csv(Path::new(path))?, *closed),
    };

    let samples: Vec<TrackSample> = raw
        .into_iter()
        .map(|(s, kappa, beta_left, beta_right)| TrackSample {
            s,
            kappa,
            beta_left,
            beta_right,
            n_left: beta_left - tightening_margin,
            n_right: beta_right + tightening_margin,
        })
        .collect();

    let track = RacingLine {
        total_length: samples.last().map(|x| x.s).unwrap_or(0.0),
        closed,
        samples,
        tightening_margin,
    };
    track.validate()?;
    Ok(track)
}

fn sample_grid(length: f64, pitch: f64) -> impl Iterator<Item = f64> {
    let n = (length / pitch).round().max(1.0) as usize;
    let step = length / n as f64;
    (0..=n).map(move |i| if i == n { length } else { i as f64 * step })
}

fn load_boundary_csv(path: &Path) -> Result<Vec<(f64, f64, f64, f64)>, TrackError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64, TrackError> {
            record
                .get(i)
                .ok_or_else(|| TrackError::BadField(format!("missing column {i}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| TrackError::BadField(format!("column {i}: {e}")))
        };
        rows.push((field(0)?, field(1)?, field(2)?, field(3)?));
    }
    Ok(rows)
}

impl RacingLine {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.samples.len() < 2 {
            return Err(TrackError::TooFewSamples(self.samples.len()));
        }
        if self.samples[0].s.abs() > 1e-12 {
            return Err(TrackError::FirstSampleNotZero(self.samples[0].s));
        }
        for (i, sample) in self.samples.iter().enumerate() {
            let vals = [
                sample.s,
                sample.kappa,
                sample.beta_left,
                sample.beta_right,
                sample.n_left,
                sample.n_right,
            ];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(TrackError::NonFinite { index: i });
            }
            if i > 0 && sample.s <= self.samples[i - 1].s {
                return Err(TrackError::NonMonotoneSamples { index: i });
            }
            if sample.n_right >= sample.n_left {
                return Err(TrackError::EmptyCorridor {
                    s: sample.s,
                    n_left: sample.n_left,
                    n_right: sample.n_right,
                });
            }
            debug_assert!(sample.n_left <= sample.beta_left + 1e-12);
            debug_assert!(sample.n_right >= sample.beta_right - 1e-12);
        }
        if self.closed {
            let a = &self.samples[0];
            let b = self.samples.last().unwrap();
            for (field, x, y) in [
                ("kappa", a.kappa, b.kappa),
                ("n_left", a.n_left, b.n_left),
                ("n_right", a.n_right, b.n_right),
            ] {
                if (x - y).abs() > CLOSED_MATCH_TOL * (1.0 + x.abs().max(y.abs())) {
                    return Err(TrackError::ClosedEndpointMismatch {
                        field,
                        at_zero: x,
                        at_end: y,
                    });
                }
            }
        }
        Ok(())
    }

    /// Wrap `s` into `[0, total_length)` for closed tracks; identity for open.
    pub fn wrap_s(&self, s: f64) -> f64 {
        if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s
        }
    }

    fn segment_index(&self, s_wrapped: f64) -> usize {
        // Last index i with samples[i].s <= s; partition_point is fine on the
        // strictly increasing table.
        let idx = self.samples.partition_point(|x| x.s <= s_wrapped);
        idx.saturating_sub(1).min(self.samples.len() - 2)
    }

    /// Curvature and tightened corridor at `s` by linear interpolation.
    pub fn query(&self, s: f64) -> Result<(f64, f64, f64), TrackError> {
        let (kappa, n_left, _, n_right, _) = self.query_with_slopes(s)?;
        Ok((kappa, n_left, n_right))
    }

    /// Like [`query`](Self::query), also returning d(n_left)/ds and
    /// d(n_right)/ds of the interpolated tables (the segment slopes), which
    /// the constraint linearization needs.
    pub fn query_with_slopes(&self, s: f64) -> Result<(f64, f64, f64, f64, f64), TrackError> {
        if !self.closed && (s < -1e-9 || s > self.total_length + 1e-9) {
            return Err(TrackError::OutOfRange(s, self.total_length));
        }
        let sw = self.wrap_s(s.clamp(
            if self.closed { f64::NEG_INFINITY } else { 0.0 },
            if self.closed { f64::INFINITY } else { self.total_length },
        ));
        let i = self.segment_index(sw);
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        let dl = b.s - a.s;
        let t = ((sw - a.s) / dl).clamp(0.0, 1.0);
        let kappa = a.kappa + t * (b.kappa - a.kappa);
        let left_slope = (b.n_left - a.n_left) / dl;
        let right_slope = (b.n_right - a.n_right) / dl;
        Ok((
            kappa,
            a.n_left + t * (b.n_left - a.n_left),
            left_slope,
            a.n_right + t * (b.n_right - a.n_right),
            right_slope,
        ))
    }

    /// Curvature at `s` (convenience wrapper over [`query`](Self::query)).
    pub fn kappa(&self, s: f64) -> Result<f64, TrackError> {
        Ok(self.query(s)?.0)
    }

    /// Corridor boundaries and their table slopes with `s` clamped into the
    /// table extent on open tracks (constant extension beyond the ends) and
    /// wrapped on closed ones. Returns `(n_left, dn_left/ds, n_right,
    /// dn_right/ds)`. Constraint evaluation uses this so that solver iterates
    /// slightly past the extent stay well defined.
    pub fn corridor_clamped(&self, s: f64) -> (f64, f64, f64, f64) {
        let sc = if self.closed {
            s
        } else {
            s.clamp(0.0, self.total_length)
        };
        let (_, nl, dnl, nr, dnr) = self
            .query_with_slopes(sc)
            .expect("clamped query cannot fail");
        if !self.closed && (s < 0.0 || s > self.total_length) {
            (nl, 0.0, nr, 0.0)
        } else {
            (nl, dnl, nr, dnr)
        }
    }

    /// Curvature with the same clamping rule as [`corridor_clamped`](Self::corridor_clamped).
    pub fn kappa_clamped(&self, s: f64) -> f64 {
        let sc = if self.closed {
            s
        } else {
            s.clamp(0.0, self.total_length)
        };
        self.query(sc).expect("clamped query cannot fail").0
    }

    /// Signed distances to the left and right tightened margins:
    /// `(n_left(s) - n, n - n_right(s))`. Negative outside the corridor.
    pub fn lateral_clearance(&self, q: FrenetPosition) -> Result<(f64, f64), TrackError> {
        let (_, n_left, n_right) = self.query(q.s)?;
        Ok((n_left - q.n, q.n - n_right))
    }

    /// True iff `q` lies within the tightened corridor (boundary inclusive).
    pub fn contains(&self, q: FrenetPosition) -> Result<bool, TrackError> {
        let (dl, dr) = self.lateral_clearance(q)?;
        Ok(dl >= 0.0 && dr >= 0.0)
    }

    /// Continuous longitudinal gap `s_d - s_a` accounting for lap wrap.
    pub fn unwrap_gap(&self, s_d: f64, s_a: f64, lap_d: i64, lap_a: i64) -> f64 {
        if self.closed {
            (lap_d as f64 * self.total_length + s_d) - (lap_a as f64 * self.total_length + s_a)
        } else {
            s_d - s_a
        }
    }

    /// Extremes of the interpolated `n_left` table over an `s` interval
    /// (whole track if the interval covers a full lap or the track is open
    /// and the interval exceeds its extent). Used for big-M bounds.
    pub fn n_left_range(&self, s_lo: f64, s_hi: f64) -> (f64, f64) {
        self.table_range(s_lo, s_hi, |x| x.n_left)
    }

    pub fn n_right_range(&self, s_lo: f64, s_hi: f64) -> (f64, f64) {
        self.table_range(s_lo, s_hi, |x| x.n_right)
    }

    fn table_range(&self, s_lo: f64, s_hi: f64, get: impl Fn(&TrackSample) -> f64) -> (f64, f64) {
        // Piecewise-linear extremes occur at sample knots or at the window
        // endpoints. Windows covering a full lap (or any window on an open
        // track, where big-M boxes span the whole extent anyway) reduce to a
        // scan over all knots.
        let whole = !self.closed || s_hi - s_lo >= self.total_length;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        if whole {
            for x in &self.samples {
                lo = lo.min(get(x));
                hi = hi.max(get(x));
            }
        } else {
            for x in &self.samples {
                let mut s = x.s;
                while s < s_lo {
                    s += self.total_length;
                }
                if s <= s_hi {
                    lo = lo.min(get(x));
                    hi = hi.max(get(x));
                }
            }
            for &endpoint in &[s_lo, s_hi] {
                if let Ok((_, nl, _, nr, _)) = self.query_with_slopes(endpoint) {
                    let synth = TrackSample {
                        s: endpoint,
                        kappa: 0.0,
                        beta_left: nl,
                        beta_right: nr,
                        n_left: nl,
                        n_right: nr,
                    };
                    lo = lo.min(get(&synth));
                    hi = hi.max(get(&synth));
                }
            }
        }
        (lo, hi)
    }

    /// Export the table as CSV with header `s,kappa,beta_left,beta_right`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,kappa,beta_left,beta_right\n");
        for x in &self.samples {
            out.push_str(&format!(
                "{},{},{},{}\n",
                x.s, x.kappa, x.beta_left, x.beta_right
            ));
        }
        out
    }
}
