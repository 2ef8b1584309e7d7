//! Right-of-way and collision-avoidance regulation, twice over.
//!
//! The rules live here in two interchangeable forms:
//!
//! 1. **Direct logic** — [`compliance_oracle`], [`crossing_update`], and
//!    [`ca_satisfied`] evaluate the conditional rules exactly, with no
//!    auxiliary variables. These are the ground truth used by audits and by
//!    the encoding-equivalence test suites.
//! 2. **Mixed-integer constraint blocks** — [`assemble_gamma_row`],
//!    [`assemble_gamma_sh`], and [`assemble_gamma_ca`] produce big-M
//!    inequality systems in which every binary and auxiliary variable enters
//!    affinely, suitable for embedding in a mixed-integer QP.
//!
//! Conventions. The joint continuous input of every block is the 8-vector
//! `[s_D, n_D, s_A, n_A, sbar_D, nbar_D, sbar_A, nbar_A]` (current defender
//! and attacker positions followed by the latched crossing positions), with
//! all `s` values unwrapped (lap-continuous). Feasibility of a residual
//! vector means every component `<= 0`.

use crate::track::{FrenetPosition, RacingLine};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MldError {
    #[error("state box has a non-finite or inverted interval: {0}")]
    BadBox(&'static str),
    #[error("regulation context invalid: {0}")]
    BadContext(String),
}

/// Indices of the joint continuous input vector shared by all blocks.
pub mod joint {
    pub const S_D: usize = 0;
    pub const N_D: usize = 1;
    pub const S_A: usize = 2;
    pub const N_A: usize = 3;
    pub const SBAR_D: usize = 4;
    pub const NBAR_D: usize = 5;
    pub const SBAR_A: usize = 6;
    pub const NBAR_A: usize = 7;
    pub const DIM: usize = 8;
}

/// Layout of the defender's stacked binaries `delta^row`.
pub mod row_delta {
    pub const S_PLUS: usize = 0;
    pub const S_MINUS: usize = 1;
    pub const N_PLUS: usize = 2;
    pub const N_MINUS: usize = 3;
    /// `delta_s = delta_{s+} AND delta_{s-}`.
    pub const S: usize = 4;
    pub const G_LEFT: usize = 5;
    pub const G_RIGHT: usize = 6;
    /// Right-of-way active on the left (`delta_s AND delta_{n+}`).
    pub const LEFT: usize = 7;
    pub const RIGHT: usize = 8;
    pub const COUNT: usize = 9;
}

/// Layout of the defender's stacked auxiliaries `z = [z^row; z_sh]`.
pub mod def_aux {
    pub const G_LEFT: usize = 0;
    pub const G_RIGHT: usize = 1;
    /// Four sample-and-hold components start here.
    pub const SH: usize = 2;
    pub const COUNT: usize = 6;
}

/// Layout of the attacker's collision-avoidance binaries `delta^CA`.
pub mod ca_delta {
    pub const S_PLUS: usize = 0;
    pub const S_MINUS: usize = 1;
    pub const N_PLUS: usize = 2;
    pub const N_MINUS: usize = 3;
    pub const COUNT: usize = 4;
}

/// The four relative-position families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    SPlus,
    SMinus,
    NPlus,
    NMinus,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::SPlus, Family::SMinus, Family::NPlus, Family::NMinus];

    fn delta_index(self) -> usize {
        match self {
            Family::SPlus => row_delta::S_PLUS,
            Family::SMinus => row_delta::S_MINUS,
            Family::NPlus => row_delta::N_PLUS,
            Family::NMinus => row_delta::N_MINUS,
        }
    }
}

/// AND-pairs of the regulation logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AndPair {
    /// `delta_s = delta_{s+} AND delta_{s-}`
    SPlusSMinus,
    /// `delta_l = delta_s AND delta_{n+}`
    SAndNPlus,
    /// `delta_r = delta_s AND delta_{n-}`
    SAndNMinus,
}

impl AndPair {
    pub const ALL: [AndPair; 3] = [AndPair::SPlusSMinus, AndPair::SAndNPlus, AndPair::SAndNMinus];

    fn indices(self) -> (usize, usize, usize) {
        match self {
            AndPair::SPlusSMinus => (row_delta::S_PLUS, row_delta::S_MINUS, row_delta::S),
            AndPair::SAndNPlus => (row_delta::S, row_delta::N_PLUS, row_delta::LEFT),
            AndPair::SAndNMinus => (row_delta::S, row_delta::N_MINUS, row_delta::RIGHT),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Joint defender/attacker position (also reused for the crossing position).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPosition {
    pub q_d: FrenetPosition,
    pub q_a: FrenetPosition,
}

impl JointPosition {
    pub fn new(q_d: FrenetPosition, q_a: FrenetPosition) -> Self {
        Self { q_d, q_a }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q_d.s, self.q_d.n, self.q_a.s, self.q_a.n]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self {
            q_d: FrenetPosition::new(x[0], x[1]),
            q_a: FrenetPosition::new(x[2], x[3]),
        }
    }
}

/// Per-variable bounds on the reachable joint states, used to size big-M
/// constants. All `s` entries are unwrapped coordinates.
#[derive(Debug, Clone, Copy)]
pub struct StateBox {
    pub s_d: (f64, f64),
    pub n_d: (f64, f64),
    pub s_a: (f64, f64),
    pub n_a: (f64, f64),
    pub sbar_d: (f64, f64),
    pub nbar_d: (f64, f64),
    pub sbar_a: (f64, f64),
    pub nbar_a: (f64, f64),
}

impl StateBox {
    /// A box that is symmetric in the two vehicles and in current/crossing
    /// coordinates, the common case for scenario setup.
    pub fn symmetric(s: (f64, f64), n: (f64, f64)) -> Self {
        Self {
            s_d: s,
            n_d: n,
            s_a: s,
            n_a: n,
            sbar_d: s,
            nbar_d: n,
            sbar_a: s,
            nbar_a: n,
        }
    }

    fn validate(&self) -> Result<(), MldError> {
        for (name, (lo, hi)) in [
            ("s_d", self.s_d),
            ("n_d", self.n_d),
            ("s_a", self.s_a),
            ("n_a", self.n_a),
            ("sbar_d", self.sbar_d),
            ("nbar_d", self.nbar_d),
            ("sbar_a", self.sbar_a),
            ("nbar_a", self.nbar_a),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(MldError::BadBox(name));
            }
        }
        Ok(())
    }
}

/// Big-M bounds per constraint family, inflated outward by 1%.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BigMTable {
    /// `(m, M)` with `m <= h <= M` for the four implication families.
    pub s_plus: (f64, f64),
    pub s_minus: (f64, f64),
    pub n_plus: (f64, f64),
    pub n_minus: (f64, f64),
    /// `M_g*` bounding `|Delta_g^row - Delta_*(q)|`.
    pub g_left: f64,
    pub g_right: f64,
    /// `M_*` for the granted-space rows `-Delta_*(q_D) + z_g* <= M_*(1-delta_*)`.
    pub row_left: f64,
    pub row_right: f64,
    /// Componentwise `m_sh <= qbar - qtilde <= M_sh`.
    pub sh_lower: [f64; 4],
    pub sh_upper: [f64; 4],
    /// `M^CA` for the four collision families (s+, s-, n+, n-).
    pub ca: [f64; 4],
}

impl BigMTable {
    fn family(&self, fam: Family) -> (f64, f64) {
        match fam {
            Family::SPlus => self.s_plus,
            Family::SMinus => self.s_minus,
            Family::NPlus => self.n_plus,
            Family::NMinus => self.n_minus,
        }
    }
}

/// Thresholds, tolerance, and big-M bounds for the regulation encoding.
///
/// The binary/auxiliary layouts are fixed at compile time in [`row_delta`],
/// [`def_aux`], and [`ca_delta`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegulationContext {
    /// Right-of-way longitudinal activation threshold.
    pub delta_s_row: f64,
    /// Right-of-way lateral side-assignment threshold.
    pub delta_n_row: f64,
    /// Lateral space owed on the overtaking side.
    pub delta_g_row: f64,
    /// Collision-avoidance longitudinal margin.
    pub delta_s_ca: f64,
    /// Collision-avoidance lateral margin.
    pub delta_n_ca: f64,
    /// Strictness tolerance of the implication encoding.
    pub epsilon: f64,
    pub big_m: BigMTable,
}

impl RegulationContext {
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(
        delta_s_row: f64,
        delta_n_row: f64,
        delta_g_row: f64,
        delta_s_ca: f64,
        delta_n_ca: f64,
    ) -> Self {
        Self {
            delta_s_row,
            delta_n_row,
            delta_g_row,
            delta_s_ca,
            delta_n_ca,
            epsilon: Self::DEFAULT_EPSILON,
            big_m: BigMTable::default(),
        }
    }

    /// Thresholds as multiples of the car dimensions: 2.0 lengths / 0.5
    /// widths / 1.5 widths for right-of-way, 1.5 lengths and widths for the
    /// collision margins.
    pub fn from_car_dimensions(car_length: f64, car_width: f64) -> Self {
        Self::new(
            2.0 * car_length,
            0.5 * car_width,
            1.5 * car_width,
            1.5 * car_length,
            1.5 * car_width,
        )
    }

    pub fn validate(&self) -> Result<(), MldError> {
        let thresholds = [
            self.delta_s_row,
            self.delta_n_row,
            self.delta_g_row,
            self.delta_s_ca,
            self.delta_n_ca,
        ];
        if thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(MldError::BadContext("all thresholds must be > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(MldError::BadContext("epsilon must be > 0".into()));
        }
        for (fam, (m, big)) in [
            ("s+", self.big_m.s_plus),
            ("s-", self.big_m.s_minus),
            ("n+", self.big_m.n_plus),
            ("n-", self.big_m.n_minus),
        ] {
            if m > big {
                return Err(MldError::BadContext(format!("m > M for family {fam}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Direct evaluation
// ---------------------------------------------------------------------------

/// The four relative-position functions
/// `h_{s±} = ±(s_D - s_A) - Δs_row`, `h_{n±} = ±(n_D - n_A) + Δn_row`,
/// returned in layout order `(s+, s-, n+, n-)`.
pub fn eval_h_sn(gap_s: f64, n_d: f64, n_a: f64, ctx: &RegulationContext) -> [f64; 4] {
    [
        gap_s - ctx.delta_s_row,
        -gap_s - ctx.delta_s_row,
        (n_d - n_a) + ctx.delta_n_row,
        -(n_d - n_a) + ctx.delta_n_row,
    ]
}

/// Effective granted space at the crossing position:
/// `z_g* = min(Δg_row, Δ_*(qbar_D))`.
pub fn granted_space(
    q_bar_d: FrenetPosition,
    track: &RacingLine,
    ctx: &RegulationContext,
) -> (f64, f64) {
    let (nl, _, nr, _) = track.corridor_clamped(q_bar_d.s);
    (
        ctx.delta_g_row.min(nl - q_bar_d.n),
        ctx.delta_g_row.min(q_bar_d.n - nr),
    )
}

/// Granted-space residuals `h_*^row = -Δ_*(q_D) + Δ_g*(qbar_D)` for both
/// sides; compliance on an active side requires the residual `<= 0`.
pub fn eval_h_row(
    q_d: FrenetPosition,
    q_bar_d: FrenetPosition,
    track: &RacingLine,
    ctx: &RegulationContext,
) -> (f64, f64) {
    let (z_gl, z_gr) = granted_space(q_bar_d, track, ctx);
    let (nl, _, nr, _) = track.corridor_clamped(q_d.s);
    (-(nl - q_d.n) + z_gl, -(q_d.n - nr) + z_gr)
}

/// Direct evaluation of the right-of-way conditional: if the vehicles are
/// longitudinally engaged and the crossing fixed a side, the defender must
/// leave the granted space on that side. `s` coordinates must be unwrapped
/// by the caller.
pub fn compliance_oracle(
    qe: &JointPosition,
    q_bar: &JointPosition,
    track: &RacingLine,
    ctx: &RegulationContext,
) -> bool {
    let h_now = eval_h_sn(qe.q_d.s - qe.q_a.s, qe.q_d.n, qe.q_a.n, ctx);
    let engaged = h_now[0] <= 0.0 && h_now[1] <= 0.0;
    if !engaged {
        return true;
    }
    let h_bar = eval_h_sn(q_bar.q_d.s - q_bar.q_a.s, q_bar.q_d.n, q_bar.q_a.n, ctx);
    let (h_l, h_r) = eval_h_row(qe.q_d, q_bar.q_d, track, ctx);
    if h_bar[2] <= 0.0 && h_l > 0.0 {
        return false;
    }
    if h_bar[3] <= 0.0 && h_r > 0.0 {
        return false;
    }
    true
}

/// Sample-and-hold update of the crossing position: hold the latched value
/// while the longitudinal gap is within `Δs_row` (boundary inclusive), track
/// the current joint position otherwise.
pub fn crossing_update(
    q_bar: &JointPosition,
    qe: &JointPosition,
    ctx: &RegulationContext,
) -> JointPosition {
    let h_s_plus = (qe.q_d.s - qe.q_a.s) - ctx.delta_s_row;
    if h_s_plus <= 0.0 {
        *q_bar
    } else {
        *qe
    }
}

/// The collision-avoidance disjunction: separated iff at least one of the
/// four margins holds.
pub fn ca_satisfied(qe: &JointPosition, ctx: &RegulationContext) -> bool {
    eval_h_ca(qe, ctx).iter().any(|h| *h <= 0.0)
}

/// `h_{s±}^CA = ±(s_D - s_A) + Δs_CA`, `h_{n±}^CA = ±(n_D - n_A) + Δn_CA`
/// in layout order.
pub fn eval_h_ca(qe: &JointPosition, ctx: &RegulationContext) -> [f64; 4] {
    let gap = qe.q_d.s - qe.q_a.s;
    let dn = qe.q_d.n - qe.q_a.n;
    [
        gap + ctx.delta_s_ca,
        -gap + ctx.delta_s_ca,
        dn + ctx.delta_n_ca,
        -dn + ctx.delta_n_ca,
    ]
}

// ---------------------------------------------------------------------------
// Big-M computation
// ---------------------------------------------------------------------------

fn inflate(m: f64, big: f64) -> (f64, f64) {
    (m - 0.01 * m.abs(), big + 0.01 * big.abs())
}

/// Interval-arithmetic extremes of every encoded function over the state
/// box, inflated outward by 1%. Track-dependent terms use the corridor
/// extremes over the box's `s` windows. Only the thresholds of `ctx` are
/// read; the returned table is meant to be stored back into it.
pub fn compute_big_m(
    track: &RacingLine,
    ctx: &RegulationContext,
    state_box: &StateBox,
) -> Result<BigMTable, MldError> {
    state_box.validate()?;
    let b = state_box;

    let gap = (b.s_d.0 - b.s_a.1, b.s_d.1 - b.s_a.0);
    let dn_bar = (b.nbar_d.0 - b.nbar_a.1, b.nbar_d.1 - b.nbar_a.0);

    // s± are evaluated at the current joint position, n± at the crossing.
    let s_plus = inflate(gap.0 - ctx.delta_s_row, gap.1 - ctx.delta_s_row);
    let s_minus = inflate(-gap.1 - ctx.delta_s_row, -gap.0 - ctx.delta_s_row);
    let n_plus = inflate(dn_bar.0 + ctx.delta_n_row, dn_bar.1 + ctx.delta_n_row);
    let n_minus = inflate(-dn_bar.1 + ctx.delta_n_row, -dn_bar.0 + ctx.delta_n_row);

    // Clearances at the crossing position for the min-encoding bounds.
    let (nl_lo_bar, nl_hi_bar) = track.n_left_range(b.sbar_d.0, b.sbar_d.1);
    let (nr_lo_bar, nr_hi_bar) = track.n_right_range(b.sbar_d.0, b.sbar_d.1);
    let d_left_bar = (nl_lo_bar - b.nbar_d.1, nl_hi_bar - b.nbar_d.0);
    let d_right_bar = (b.nbar_d.0 - nr_hi_bar, b.nbar_d.1 - nr_lo_bar);
    let g_left = (ctx.delta_g_row - d_left_bar.0)
        .abs()
        .max((ctx.delta_g_row - d_left_bar.1).abs());
    let g_right = (ctx.delta_g_row - d_right_bar.0)
        .abs()
        .max((ctx.delta_g_row - d_right_bar.1).abs());

    // Granted rows: -Δ_*(q_D) + z_g* with z_g* <= Δg.
    let (nl_lo, nl_hi) = track.n_left_range(b.s_d.0, b.s_d.1);
    let (nr_lo, nr_hi) = track.n_right_range(b.s_d.0, b.s_d.1);
    let d_left = (nl_lo - b.n_d.1, nl_hi - b.n_d.0);
    let d_right = (b.n_d.0 - nr_hi, b.n_d.1 - nr_lo);
    let row_left = -d_left.0 + ctx.delta_g_row;
    let row_right = -d_right.0 + ctx.delta_g_row;

    // Componentwise crossing drift qbar - qtilde.
    let qt = [b.s_d, b.n_d, b.s_a, b.n_a];
    let qb = [b.sbar_d, b.nbar_d, b.sbar_a, b.nbar_a];
    let mut sh_lower = [0.0; 4];
    let mut sh_upper = [0.0; 4];
    for c in 0..4 {
        let (lo, hi) = inflate(qb[c].0 - qt[c].1, qb[c].1 - qt[c].0);
        sh_lower[c] = lo;
        sh_upper[c] = hi;
    }

    let dn = (b.n_d.0 - b.n_a.1, b.n_d.1 - b.n_a.0);
    let ca = [
        inflate(0.0, gap.1 + ctx.delta_s_ca).1,
        inflate(0.0, -gap.0 + ctx.delta_s_ca).1,
        inflate(0.0, dn.1 + ctx.delta_n_ca).1,
        inflate(0.0, -dn.0 + ctx.delta_n_ca).1,
    ];

    Ok(BigMTable {
        s_plus,
        s_minus,
        n_plus,
        n_minus,
        g_left: inflate(0.0, g_left).1,
        g_right: inflate(0.0, g_right).1,
        row_left: inflate(0.0, row_left.max(0.0)).1,
        row_right: inflate(0.0, row_right.max(0.0)).1,
        sh_lower,
        sh_upper,
        ca,
    })
}

// ---------------------------------------------------------------------------
// Constraint blocks
// ---------------------------------------------------------------------------

type BaseFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type JacFn = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;

/// A stack of mixed-integer inequality rows, affine in the binaries and
/// auxiliaries with constant coefficients:
/// `residual(x, δ, z) = base(x) + B δ + C z`, feasible iff every component
/// is `<= 0`.
#[derive(Clone)]
pub struct ConstraintBlock {
    pub n_rows: usize,
    pub n_bin: usize,
    pub n_aux: usize,
    base: BaseFn,
    jac: JacFn,
    bin_mat: DMatrix<f64>,
    aux_mat: DMatrix<f64>,
}

impl std::fmt::Debug for ConstraintBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintBlock")
            .field("n_rows", &self.n_rows)
            .field("n_bin", &self.n_bin)
            .field("n_aux", &self.n_aux)
            .finish()
    }
}

impl ConstraintBlock {
    /// Binaries and auxiliaries enter affinely by construction.
    pub fn binary_linearity(&self) -> bool {
        true
    }

    /// Evaluate `base(x)` into `out` (length `n_rows`).
    pub fn eval_base(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), joint::DIM);
        debug_assert_eq!(out.len(), self.n_rows);
        (self.base)(x, out);
    }

    /// Full residual `base(x) + B δ + C z`.
    pub fn eval(&self, x: &[f64], delta: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        self.eval_base(x, &mut out);
        debug_assert_eq!(delta.len(), self.n_bin);
        debug_assert_eq!(z.len(), self.n_aux);
        for r in 0..self.n_rows {
            for (j, dj) in delta.iter().enumerate() {
                out[r] += self.bin_mat[(r, j)] * dj;
            }
            for (j, zj) in z.iter().enumerate() {
                out[r] += self.aux_mat[(r, j)] * zj;
            }
        }
        out
    }

    /// Jacobian of `base` with respect to the joint continuous vector.
    pub fn jac_cont(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_rows, joint::DIM);
        (self.jac)(x, &mut out);
        out
    }

    pub fn bin_matrix(&self) -> &DMatrix<f64> {
        &self.bin_mat
    }

    pub fn aux_matrix(&self) -> &DMatrix<f64> {
        &self.aux_mat
    }

    /// Vertical stack; all parts must share the binary/auxiliary layout.
    pub fn stack(parts: Vec<ConstraintBlock>) -> ConstraintBlock {
        assert!(!parts.is_empty());
        let n_bin = parts[0].n_bin;
        let n_aux = parts[0].n_aux;
        assert!(parts.iter().all(|p| p.n_bin == n_bin && p.n_aux == n_aux));
        let n_rows: usize = parts.iter().map(|p| p.n_rows).sum();
        let mut bin_mat = DMatrix::zeros(n_rows, n_bin);
        let mut aux_mat = DMatrix::zeros(n_rows, n_aux);
        let mut offset = 0;
        for p in &parts {
            bin_mat.rows_mut(offset, p.n_rows).copy_from(&p.bin_mat);
            aux_mat.rows_mut(offset, p.n_rows).copy_from(&p.aux_mat);
            offset += p.n_rows;
        }
        let offsets: Vec<usize> = parts
            .iter()
            .scan(0, |acc, p| {
                let o = *acc;
                *acc += p.n_rows;
                Some(o)
            })
            .collect();
        let parts = Arc::new(parts);
        let parts_b = Arc::clone(&parts);
        let offsets_b = offsets.clone();
        let base: BaseFn = Arc::new(move |x, out| {
            for (p, &o) in parts_b.iter().zip(&offsets_b) {
                p.eval_base(x, &mut out[o..o + p.n_rows]);
            }
        });
        let jac: JacFn = Arc::new(move |x, out| {
            for (p, &o) in parts.iter().zip(&offsets) {
                let j = p.jac_cont(x);
                out.rows_mut(o, p.n_rows).copy_from(&j);
            }
        });
        ConstraintBlock {
            n_rows,
            n_bin,
            n_aux,
            base,
            jac,
            bin_mat,
            aux_mat,
        }
    }
}

/// Implication rows for one family in the defender layout:
/// `h <= M (1-δ)` and `h >= ε + (m-ε) δ`, rearranged to `<= 0` residuals.
/// The `n±` families read the crossing position, `s±` the current one.
pub fn encode_implication(fam: Family, ctx: &RegulationContext) -> ConstraintBlock {
    let (m, big) = ctx.big_m.family(fam);
    let eps = ctx.epsilon;
    let (ip, im, offset) = match fam {
        Family::SPlus => (joint::S_D, joint::S_A, -ctx.delta_s_row),
        Family::SMinus => (joint::S_A, joint::S_D, -ctx.delta_s_row),
        Family::NPlus => (joint::NBAR_D, joint::NBAR_A, ctx.delta_n_row),
        Family::NMinus => (joint::NBAR_A, joint::NBAR_D, ctx.delta_n_row),
    };
    let d = fam.delta_index();
    let mut bin_mat = DMatrix::zeros(2, row_delta::COUNT);
    bin_mat[(0, d)] = big;
    bin_mat[(1, d)] = m - eps;
    let base: BaseFn = Arc::new(move |x, out| {
        let h = x[ip] - x[im] + offset;
        out[0] = h - big;
        out[1] = eps - h;
    });
    let jac: JacFn = Arc::new(move |_x, out| {
        out[(0, ip)] = 1.0;
        out[(0, im)] = -1.0;
        out[(1, ip)] = -1.0;
        out[(1, im)] = 1.0;
    });
    ConstraintBlock {
        n_rows: 2,
        n_bin: row_delta::COUNT,
        n_aux: def_aux::COUNT,
        base,
        jac,
        bin_mat,
        aux_mat: DMatrix::zeros(2, def_aux::COUNT),
    }
}

/// Three-row AND linkage `δ_ab = δ_a ∧ δ_b` in the defender layout.
pub fn encode_and(pair: AndPair, _ctx: &RegulationContext) -> ConstraintBlock {
    let (a, b, ab) = pair.indices();
    let mut bin_mat = DMatrix::zeros(3, row_delta::COUNT);
    // δ_ab - δ_a <= 0
    bin_mat[(0, ab)] = 1.0;
    bin_mat[(0, a)] = -1.0;
    // δ_ab - δ_b <= 0
    bin_mat[(1, ab)] = 1.0;
    bin_mat[(1, b)] = -1.0;
    // δ_a + δ_b - δ_ab - 1 <= 0
    bin_mat[(2, a)] = 1.0;
    bin_mat[(2, b)] = 1.0;
    bin_mat[(2, ab)] = -1.0;
    let base: BaseFn = Arc::new(move |_x, out| {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -1.0;
    });
    let jac: JacFn = Arc::new(|_x, _out| {});
    ConstraintBlock {
        n_rows: 3,
        n_bin: row_delta::COUNT,
        n_aux: def_aux::COUNT,
        base,
        jac,
        bin_mat,
        aux_mat: DMatrix::zeros(3, def_aux::COUNT),
    }
}

/// Four rows binding `z_g* = min(Δg_row, Δ_*(qbar_D))` through `δ_g*`.
pub fn encode_min(side: Side, track: &Arc<RacingLine>, ctx: &RegulationContext) -> ConstraintBlock {
    let (m_g, d_idx, z_idx) = match side {
        Side::Left => (ctx.big_m.g_left, row_delta::G_LEFT, def_aux::G_LEFT),
        Side::Right => (ctx.big_m.g_right, row_delta::G_RIGHT, def_aux::G_RIGHT),
    };
    let dg = ctx.delta_g_row;
    let mut bin_mat = DMatrix::zeros(4, row_delta::COUNT);
    let mut aux_mat = DMatrix::zeros(4, def_aux::COUNT);
    // z <= Δg
    aux_mat[(0, z_idx)] = 1.0;
    // Δg - M_g (1-δ) <= z
    bin_mat[(1, d_idx)] = m_g;
    aux_mat[(1, z_idx)] = -1.0;
    // z <= Δ_*(qbar_D)
    aux_mat[(2, z_idx)] = 1.0;
    // Δ_*(qbar_D) - M_g δ <= z
    bin_mat[(3, d_idx)] = -m_g;
    aux_mat[(3, z_idx)] = -1.0;

    let tr = Arc::clone(track);
    let base: BaseFn = Arc::new(move |x, out| {
        let (nl, _, nr, _) = tr.corridor_clamped(x[joint::SBAR_D]);
        let clearance = match side {
            Side::Left => nl - x[joint::NBAR_D],
            Side::Right => x[joint::NBAR_D] - nr,
        };
        out[0] = -dg;
        out[1] = dg - m_g;
        out[2] = -clearance;
        out[3] = clearance;
    });
    let tr = Arc::clone(track);
    let jac: JacFn = Arc::new(move |x, out| {
        let (_, dnl, _, dnr) = tr.corridor_clamped(x[joint::SBAR_D]);
        // d(clearance)/d(sbar_d), d(clearance)/d(nbar_d)
        let (dds, ddn) = match side {
            Side::Left => (dnl, -1.0),
            Side::Right => (-dnr, 1.0),
        };
        out[(2, joint::SBAR_D)] = -dds;
        out[(2, joint::NBAR_D)] = -ddn;
        out[(3, joint::SBAR_D)] = dds;
        out[(3, joint::NBAR_D)] = ddn;
    });
    ConstraintBlock {
        n_rows: 4,
        n_bin: row_delta::COUNT,
        n_aux: def_aux::COUNT,
        base,
        jac,
        bin_mat,
        aux_mat,
    }
}

/// The two granted-space rows `-Δ_*(q_D) + z_g* <= M_* (1-δ_*)`.
fn granted_rows(track: &Arc<RacingLine>, ctx: &RegulationContext) -> ConstraintBlock {
    let (m_l, m_r) = (ctx.big_m.row_left, ctx.big_m.row_right);
    let mut bin_mat = DMatrix::zeros(2, row_delta::COUNT);
    let mut aux_mat = DMatrix::zeros(2, def_aux::COUNT);
    bin_mat[(0, row_delta::LEFT)] = m_l;
    aux_mat[(0, def_aux::G_LEFT)] = 1.0;
    bin_mat[(1, row_delta::RIGHT)] = m_r;
    aux_mat[(1, def_aux::G_RIGHT)] = 1.0;
    let tr = Arc::clone(track);
    let base: BaseFn = Arc::new(move |x, out| {
        let (nl, _, nr, _) = tr.corridor_clamped(x[joint::S_D]);
        out[0] = -(nl - x[joint::N_D]) - m_l;
        out[1] = -(x[joint::N_D] - nr) - m_r;
    });
    let tr = Arc::clone(track);
    let jac: JacFn = Arc::new(move |x, out| {
        let (_, dnl, _, dnr) = tr.corridor_clamped(x[joint::S_D]);
        out[(0, joint::S_D)] = -dnl;
        out[(0, joint::N_D)] = 1.0;
        out[(1, joint::S_D)] = dnr;
        out[(1, joint::N_D)] = -1.0;
    });
    ConstraintBlock {
        n_rows: 2,
        n_bin: row_delta::COUNT,
        n_aux: def_aux::COUNT,
        base,
        jac,
        bin_mat,
        aux_mat,
    }
}

/// The full 27-row right-of-way block `γ^row(q̃, q̄, δ^row, z^row) <= 0`.
pub fn assemble_gamma_row(track: &Arc<RacingLine>, ctx: &RegulationContext) -> ConstraintBlock {
    let mut parts = Vec::with_capacity(10);
    for fam in Family::ALL {
        parts.push(encode_implication(fam, ctx));
    }
    for pair in AndPair::ALL {
        parts.push(encode_and(pair, ctx));
    }
    parts.push(encode_min(Side::Left, track, ctx));
    parts.push(encode_min(Side::Right, track, ctx));
    parts.push(granted_rows(track, ctx));
    ConstraintBlock::stack(parts)
}

/// Sample-and-hold transition `f_sh(q̃_k, z_sh,k) = q̃_k + z_sh,k`.
pub fn f_sh(q_tilde: [f64; 4], z_sh: [f64; 4]) -> [f64; 4] {
    [
        q_tilde[0] + z_sh[0],
        q_tilde[1] + z_sh[1],
        q_tilde[2] + z_sh[2],
        q_tilde[3] + z_sh[3],
    ]
}

/// The 18-row sample-and-hold block `γ^sh`: sixteen rows binding
/// `z_sh = (q̄ - q̃) δ_{s+}` componentwise plus the `s+` implication rows.
pub fn assemble_gamma_sh(ctx: &RegulationContext) -> ConstraintBlock {
    let m_lo = ctx.big_m.sh_lower;
    let m_hi = ctx.big_m.sh_upper;
    let n_rows = 16;
    let mut bin_mat = DMatrix::zeros(n_rows, row_delta::COUNT);
    let mut aux_mat = DMatrix::zeros(n_rows, def_aux::COUNT);
    for c in 0..4 {
        let r = 4 * c;
        let z = def_aux::SH + c;
        // z <= M δ
        aux_mat[(r, z)] = 1.0;
        bin_mat[(r, row_delta::S_PLUS)] = -m_hi[c];
        // m δ <= z
        aux_mat[(r + 1, z)] = -1.0;
        bin_mat[(r + 1, row_delta::S_PLUS)] = m_lo[c];
        // (q̄-q̃) - M (1-δ) <= z
        aux_mat[(r + 2, z)] = -1.0;
        bin_mat[(r + 2, row_delta::S_PLUS)] = m_hi[c];
        // z <= (q̄-q̃) - m (1-δ)
        aux_mat[(r + 3, z)] = 1.0;
        bin_mat[(r + 3, row_delta::S_PLUS)] = -m_lo[c];
    }
    let base: BaseFn = Arc::new(move |x, out| {
        for c in 0..4 {
            let d = x[4 + c] - x[c];
            let r = 4 * c;
            out[r] = 0.0;
            out[r + 1] = 0.0;
            out[r + 2] = d - m_hi[c];
            out[r + 3] = -d + m_lo[c];
        }
    });
    let jac: JacFn = Arc::new(move |_x, out| {
        for c in 0..4 {
            let r = 4 * c;
            out[(r + 2, 4 + c)] = 1.0;
            out[(r + 2, c)] = -1.0;
            out[(r + 3, 4 + c)] = -1.0;
            out[(r + 3, c)] = 1.0;
        }
    });
    let bilinear = ConstraintBlock {
        n_rows,
        n_bin: row_delta::COUNT,
        n_aux: def_aux::COUNT,
        base,
        jac,
        bin_mat,
        aux_mat,
    };
    ConstraintBlock::stack(vec![bilinear, encode_implication(Family::SPlus, ctx)])
}

/// The five-row collision-avoidance block `γ^CA`: four big-M rows plus the
/// cover row `Σ δ >= 1`. Attacker layout: 4 binaries, no auxiliaries.
pub fn assemble_gamma_ca(ctx: &RegulationContext) -> ConstraintBlock {
    let m = ctx.big_m.ca;
    let ds = ctx.delta_s_ca;
    let dn = ctx.delta_n_ca;
    let mut bin_mat = DMatrix::zeros(5, ca_delta::COUNT);
    for (i, &mi) in m.iter().enumerate() {
        bin_mat[(i, i)] = mi;
        bin_mat[(4, i)] = -1.0;
    }
    let base: BaseFn = Arc::new(move |x, out| {
        let gap = x[joint::S_D] - x[joint::S_A];
        let lat = x[joint::N_D] - x[joint::N_A];
        out[0] = gap + ds - m[0];
        out[1] = -gap + ds - m[1];
        out[2] = lat + dn - m[2];
        out[3] = -lat + dn - m[3];
        out[4] = 1.0;
    });
    let jac: JacFn = Arc::new(|_x, out| {
        out[(0, joint::S_D)] = 1.0;
        out[(0, joint::S_A)] = -1.0;
        out[(1, joint::S_D)] = -1.0;
        out[(1, joint::S_A)] = 1.0;
        out[(2, joint::N_D)] = 1.0;
        out[(2, joint::N_A)] = -1.0;
        out[(3, joint::N_D)] = -1.0;
        out[(3, joint::N_A)] = 1.0;
    });
    ConstraintBlock {
        n_rows: 5,
        n_bin: ca_delta::COUNT,
        n_aux: 0,
        base,
        jac,
        bin_mat,
        aux_mat: DMatrix::zeros(5, 0),
    }
}

// ---------------------------------------------------------------------------
// Enumeration (test and audit machinery)
// ---------------------------------------------------------------------------

/// Exhaustive feasibility of a block at a fixed continuous point: every
/// binary assignment is tried; for each, the auxiliaries reduce to
/// per-component interval feasibility because no row couples two of them.
///
/// Returns the lexicographically first feasible assignment together with a
/// witness auxiliary vector, or `None`.
pub fn enumerate_feasible(
    block: &ConstraintBlock,
    x: &[f64],
    tol: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut base = vec![0.0; block.n_rows];
    block.eval_base(x, &mut base);
    let n_bin = block.n_bin;
    let mut delta = vec![0.0; n_bin];
    'outer: for pattern in 0..(1usize << n_bin) {
        for (j, d) in delta.iter_mut().enumerate() {
            *d = if pattern & (1 << (n_bin - 1 - j)) != 0 {
                1.0
            } else {
                0.0
            };
        }
        let mut lo = vec![f64::NEG_INFINITY; block.n_aux];
        let mut hi = vec![f64::INFINITY; block.n_aux];
        for r in 0..block.n_rows {
            let mut rhs = base[r];
            for j in 0..n_bin {
                rhs += block.bin_mat[(r, j)] * delta[j];
            }
            // At most one auxiliary per row by construction.
            let mut aux_col = None;
            for j in 0..block.n_aux {
                let c = block.aux_mat[(r, j)];
                if c != 0.0 {
                    debug_assert!(aux_col.is_none(), "row couples two auxiliaries");
                    aux_col = Some((j, c));
                }
            }
            match aux_col {
                None => {
                    if rhs > tol {
                        continue 'outer;
                    }
                }
                Some((j, c)) => {
                    // rhs + c z <= 0
                    let bound = -rhs / c;
                    if c > 0.0 {
                        hi[j] = hi[j].min(bound);
                    } else {
                        lo[j] = lo[j].max(bound);
                    }
                }
            }
        }
        let mut z = vec![0.0; block.n_aux];
        for j in 0..block.n_aux {
            if lo[j] > hi[j] + tol {
                continue 'outer;
            }
            z[j] = if lo[j].is_finite() && hi[j].is_finite() {
                0.5 * (lo[j] + hi[j])
            } else if lo[j].is_finite() {
                lo[j]
            } else if hi[j].is_finite() {
                hi[j]
            } else {
                0.0
            };
        }
        return Some((delta.clone(), z));
    }
    None
}

/// Convenience wrapper: is any `(δ, z)` completion feasible at `x`?
pub fn block_feasible(block: &ConstraintBlock, x: &[f64], tol: f64) -> bool {
    enumerate_feasible(block, x, tol).is_some()
}

/// Assemble the joint continuous vector in block layout.
pub fn joint_vector(qe: &JointPosition, q_bar: &JointPosition) -> [f64; 8] {
    [
        qe.q_d.s, qe.q_d.n, qe.q_a.s, qe.q_a.n, q_bar.q_d.s, q_bar.q_d.n, q_bar.q_a.s,
        q_bar.q_a.n,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{build_track, TrackSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx_plain() -> RegulationContext {
        // Δs=2, Δn=0.5, Δg=1.0 with generous synthetic bounds.
        let mut ctx = RegulationContext::new(2.0, 0.5, 1.0, 1.5, 0.8);
        ctx.big_m = BigMTable {
            s_plus: (-110.0, 110.0),
            s_minus: (-110.0, 110.0),
            n_plus: (-12.0, 12.0),
            n_minus: (-12.0, 12.0),
            g_left: 15.0,
            g_right: 15.0,
            row_left: 15.0,
            row_right: 15.0,
            sh_lower: [-120.0, -12.0, -120.0, -12.0],
            sh_upper: [120.0, 12.0, 120.0, 12.0],
            ca: [110.0, 110.0, 12.0, 12.0],
        };
        ctx
    }

    fn straight() -> Arc<RacingLine> {
        Arc::new(
            build_track(
                &TrackSpec::Straight {
                    length: 100.0,
                    half_width: 3.0,
                },
                0.5,
            )
            .unwrap(),
        )
    }

    fn wide_box() -> StateBox {
        StateBox::symmetric((0.0, 100.0), (-3.0, 3.0))
    }

    #[test]
    fn h_sn_examples() {
        let ctx = ctx_plain();
        let h = eval_h_sn(1.0, 0.0, 1.0, &ctx);
        assert_eq!(h, [-1.0, -3.0, -0.5, 1.5]);
        assert_eq!(eval_h_sn(2.0, 0.0, 0.0, &ctx)[0], 0.0);
        let h = eval_h_sn(0.0, 0.7, 0.7, &ctx);
        assert_eq!(h[2], 0.5);
        assert_eq!(h[3], 0.5);
    }

    #[test]
    fn granted_space_caps_by_availability() {
        let track = straight();
        let mut ctx = ctx_plain();
        ctx.delta_g_row = 1.2;
        // n_left = 2.5: at n = 0.5 clearance = 2.0 -> capped at 1.2.
        let (z_gl, _) = granted_space(FrenetPosition::new(10.0, 0.5), &track, &ctx);
        assert_eq!(z_gl, 1.2);
        // At n = 1.7 clearance = 0.8 -> availability caps.
        let (z_gl, _) = granted_space(FrenetPosition::new(10.0, 1.7), &track, &ctx);
        assert_relative_eq!(z_gl, 0.8, epsilon = 1e-12);
        // On the left boundary no space is owed.
        let (z_gl, _) = granted_space(FrenetPosition::new(10.0, 2.5), &track, &ctx);
        assert_eq!(z_gl, 0.0);
    }

    #[test]
    fn h_row_examples() {
        let track = straight();
        let ctx = ctx_plain(); // Δg = 1.0, n_left = 2.5
        let q_bar = FrenetPosition::new(10.0, 0.0);
        // Compliant-left iff n_d <= 1.5.
        let (h_l, _) = eval_h_row(FrenetPosition::new(10.0, 2.0), q_bar, &track, &ctx);
        assert_relative_eq!(h_l, 0.5, epsilon = 1e-12);
        let (h_l, _) = eval_h_row(FrenetPosition::new(10.0, 1.5), q_bar, &track, &ctx);
        assert_relative_eq!(h_l, 0.0, epsilon = 1e-12);
        // Crossing with only 0.4 available: threshold becomes n_d <= 2.1.
        let q_bar = FrenetPosition::new(10.0, 2.1);
        let (h_l, _) = eval_h_row(FrenetPosition::new(10.0, 2.1), q_bar, &track, &ctx);
        assert_relative_eq!(h_l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn compliance_oracle_examples() {
        let track = straight();
        let ctx = ctx_plain();
        // Attacker alongside-left within Δs; crossing had space; defender too far left.
        let qe = JointPosition::new(FrenetPosition::new(10.0, 2.0), FrenetPosition::new(9.0, 2.6));
        let q_bar =
            JointPosition::new(FrenetPosition::new(9.5, 0.0), FrenetPosition::new(7.5, 0.8));
        assert!(!compliance_oracle(&qe, &q_bar, &track, &ctx));
        // Gap beyond Δs: compliant regardless.
        let far = JointPosition::new(FrenetPosition::new(50.0, 2.0), FrenetPosition::new(9.0, 2.6));
        assert!(compliance_oracle(&far, &q_bar, &track, &ctx));
        // Defender yielding enough: compliant.
        let qe = JointPosition::new(FrenetPosition::new(10.0, 1.2), FrenetPosition::new(9.0, 2.6));
        assert!(compliance_oracle(&qe, &q_bar, &track, &ctx));
    }

    #[test]
    fn crossing_update_examples() {
        let ctx = ctx_plain();
        let q_bar =
            JointPosition::new(FrenetPosition::new(5.0, 0.1), FrenetPosition::new(3.0, -0.2));
        let near = JointPosition::new(FrenetPosition::new(10.0, 0.0), FrenetPosition::new(9.0, 0.0));
        assert_eq!(crossing_update(&q_bar, &near, &ctx), q_bar);
        let far = JointPosition::new(FrenetPosition::new(10.0, 0.0), FrenetPosition::new(5.0, 0.0));
        assert_eq!(crossing_update(&q_bar, &far, &ctx), far);
        let boundary =
            JointPosition::new(FrenetPosition::new(11.0, 0.0), FrenetPosition::new(9.0, 0.0));
        assert_eq!(crossing_update(&q_bar, &boundary, &ctx), q_bar);
    }

    #[test]
    fn big_m_examples() {
        let track = straight();
        let ctx = RegulationContext::new(2.0, 0.5, 1.0, 1.5, 0.8);
        let sbox = StateBox {
            s_d: (0.0, 98.0),
            n_d: (-2.5, 2.5),
            s_a: (0.0, 102.0),
            n_a: (-2.5, 2.5),
            sbar_d: (0.0, 98.0),
            nbar_d: (-2.5, 2.5),
            sbar_a: (0.0, 102.0),
            nbar_a: (-2.5, 2.5),
        };
        let table = compute_big_m(&track, &ctx, &sbox).unwrap();
        // gap range [-102, 98] -> h_{s+} in [-104, 96], then 1% outward.
        assert_relative_eq!(table.s_plus.1, 96.0 * 1.01, epsilon = 1e-9);
        assert_relative_eq!(table.s_plus.0, -104.0 * 1.01, epsilon = 1e-9);
        // n difference range [-5, 5] -> h_{n+} in [-4.5, 5.5].
        assert_relative_eq!(table.n_plus.1, 5.5 * 1.01, epsilon = 1e-9);
        assert_relative_eq!(table.n_plus.0, -4.5 * 1.01, epsilon = 1e-9);
    }

    #[test]
    fn big_m_dominates_sampled_h() {
        let track = straight();
        let mut ctx = RegulationContext::new(2.0, 0.5, 1.0, 1.5, 0.8);
        let sbox = StateBox::symmetric((0.0, 100.0), (-2.5, 2.5));
        ctx.big_m = compute_big_m(&track, &ctx, &sbox).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sample = |r: &mut ChaCha8Rng| JointPosition {
            q_d: FrenetPosition::new(r.gen_range(0.0..100.0), r.gen_range(-2.5..2.5)),
            q_a: FrenetPosition::new(r.gen_range(0.0..100.0), r.gen_range(-2.5..2.5)),
        };
        for _ in 0..20_000 {
            let qe = sample(&mut rng);
            let q_bar = sample(&mut rng);
            let h_now = eval_h_sn(qe.q_d.s - qe.q_a.s, qe.q_d.n, qe.q_a.n, &ctx);
            let h_bar = eval_h_sn(q_bar.q_d.s - q_bar.q_a.s, q_bar.q_d.n, q_bar.q_a.n, &ctx);
            for (h, (m, big)) in [
                (h_now[0], ctx.big_m.s_plus),
                (h_now[1], ctx.big_m.s_minus),
                (h_bar[2], ctx.big_m.n_plus),
                (h_bar[3], ctx.big_m.n_minus),
            ] {
                assert!(m <= h && h <= big, "h={h} outside [{m}, {big}]");
            }
            let h_ca = eval_h_ca(&qe, &ctx);
            for (h, m_ca) in h_ca.iter().zip(ctx.big_m.ca) {
                assert!(*h <= m_ca);
            }
            let qt = qe.to_array();
            let qb = q_bar.to_array();
            for c in 0..4 {
                let d = qb[c] - qt[c];
                assert!(ctx.big_m.sh_lower[c] <= d && d <= ctx.big_m.sh_upper[c]);
            }
        }
    }

    #[test]
    fn implication_truth_table() {
        let ctx = ctx_plain();
        let block = encode_implication(Family::SPlus, &ctx);
        let check = |gap: f64, d: f64| -> bool {
            let x = [gap, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            let mut delta = vec![0.0; row_delta::COUNT];
            delta[row_delta::S_PLUS] = d;
            let r = block.eval(&x, &delta, &vec![0.0; def_aux::COUNT]);
            r.iter().all(|v| *v <= 1e-12)
        };
        // h = gap - 2
        assert!(check(1.0, 1.0) && !check(1.0, 0.0)); // h = -1
        assert!(check(2.0, 1.0) && !check(2.0, 0.0)); // h = 0: boundary -> δ=1
        assert!(!check(3.0, 1.0) && check(3.0, 0.0)); // h = 1

        // Grid sweep: δ equals the indicator away from the (0, ε) dead band.
        let eps = ctx.epsilon;
        let mut h = -5.0;
        while h <= 5.0 {
            let gap = h + 2.0;
            let one = check(gap, 1.0);
            let zero = check(gap, 0.0);
            if h <= 0.0 {
                assert!(one && !zero, "h={h}");
            } else if h >= eps {
                assert!(!one && zero, "h={h}");
            }
            h += 0.01;
        }
        // Inside the dead band both assignments are excluded.
        assert!(!check(2.0 + eps / 2.0, 0.0) && !check(2.0 + eps / 2.0, 1.0));
    }

    #[test]
    fn and_truth_table() {
        let ctx = ctx_plain();
        let block = encode_and(AndPair::SPlusSMinus, &ctx);
        let x = [0.0; 8];
        let z = vec![0.0; def_aux::COUNT];
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                for ab in [0.0, 1.0] {
                    let mut delta = vec![0.0; row_delta::COUNT];
                    delta[row_delta::S_PLUS] = a;
                    delta[row_delta::S_MINUS] = b;
                    delta[row_delta::S] = ab;
                    let feasible = block.eval(&x, &delta, &z).iter().all(|v| *v <= 1e-12);
                    assert_eq!(feasible, ab == a * b, "a={a} b={b} ab={ab}");
                }
            }
        }
    }

    #[test]
    fn min_encoding_selects_the_smaller() {
        let track = straight();
        let mut ctx = ctx_plain();
        ctx.delta_g_row = 1.2;
        let block = encode_min(Side::Left, &track, &ctx);
        // Enumerate (δ_gl, z) over δ ∈ {0,1} with interval reduction done by
        // enumerate_feasible on a block restricted to this one binary.
        let case = |nbar: f64| -> Vec<(f64, f64)> {
            let x = [0.0, 0.0, 0.0, 0.0, 10.0, nbar, 0.0, 0.0];
            let mut out = Vec::new();
            for d in [0.0, 1.0] {
                let mut base = vec![0.0; block.n_rows];
                block.eval_base(&x, &mut base);
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                let mut ok = true;
                for r in 0..block.n_rows {
                    let rhs = base[r] + block.bin_matrix()[(r, row_delta::G_LEFT)] * d;
                    let c = block.aux_matrix()[(r, def_aux::G_LEFT)];
                    if c > 0.0 {
                        hi = hi.min(-rhs / c);
                    } else if c < 0.0 {
                        lo = lo.max(-rhs / c);
                    } else if rhs > 1e-12 {
                        ok = false;
                    }
                }
                if ok && lo <= hi + 1e-12 {
                    out.push((d, 0.5 * (lo + hi)));
                }
            }
            out
        };
        // Clearance 2.5 - 0.5 = 2.0 > Δg -> unique (δ=1, z=1.2).
        let sols = case(0.5);
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].0, 1.0);
        assert_relative_eq!(sols[0].1, 1.2, epsilon = 1e-9);
        // Clearance 0.8 < Δg -> unique (δ=0, z=0.8).
        let sols = case(1.7);
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].0, 0.0);
        assert_relative_eq!(sols[0].1, 0.8, epsilon = 1e-9);
        // Tie: both assignments feasible, z unambiguous.
        let sols = case(1.3);
        assert_eq!(sols.len(), 2);
        assert_relative_eq!(sols[0].1, 1.2, epsilon = 1e-9);
        assert_relative_eq!(sols[1].1, 1.2, epsilon = 1e-9);
    }

    fn random_joint(rng: &mut ChaCha8Rng, s_range: f64, n_range: f64) -> JointPosition {
        JointPosition {
            q_d: FrenetPosition::new(rng.gen_range(0.0..s_range), rng.gen_range(-n_range..n_range)),
            q_a: FrenetPosition::new(rng.gen_range(0.0..s_range), rng.gen_range(-n_range..n_range)),
        }
    }

    /// Mix of wide-scatter states and near-threshold states so active,
    /// inactive, and boundary regimes all appear.
    pub fn sample_states(
        rng: &mut ChaCha8Rng,
        ctx: &RegulationContext,
        count: usize,
    ) -> Vec<(JointPosition, JointPosition)> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let (mut qe, mut q_bar) =
                (random_joint(rng, 100.0, 2.5), random_joint(rng, 100.0, 2.5));
            if i % 2 == 0 {
                qe.q_a.s =
                    qe.q_d.s - rng.gen_range(-1.5 * ctx.delta_s_row..1.5 * ctx.delta_s_row);
                q_bar.q_a.s = q_bar.q_d.s - rng.gen_range(0.8..1.2) * ctx.delta_s_row;
            }
            if i % 3 == 0 {
                q_bar.q_a.n = q_bar.q_d.n + rng.gen_range(-1.0..1.0) * 2.0 * ctx.delta_n_row;
            }
            out.push((qe, q_bar));
        }
        out
    }

    #[test]
    fn gamma_row_matches_oracle() {
        let track = straight();
        let mut ctx = RegulationContext::new(2.0, 0.5, 1.0, 1.5, 0.8);
        ctx.big_m = compute_big_m(&track, &ctx, &wide_box()).unwrap();
        let block = assemble_gamma_row(&track, &ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (qe, q_bar) in sample_states(&mut rng, &ctx, 1000) {
            let x = joint_vector(&qe, &q_bar);
            let mld = block_feasible(&block, &x, 1e-9);
            let oracle = compliance_oracle(&qe, &q_bar, &track, &ctx);
            assert_eq!(mld, oracle, "qe={qe:?} q_bar={q_bar:?}");
        }
    }

    #[test]
    fn gamma_row_relaxed_when_not_engaged() {
        let track = straight();
        let mut ctx = ctx_plain();
        ctx.big_m = compute_big_m(&track, &ctx, &wide_box()).unwrap();
        let block = assemble_gamma_row(&track, &ctx);
        // Gap 10 > Δs: defender parked anywhere is feasible, δ_l = δ_r = 0.
        let qe = JointPosition::new(FrenetPosition::new(20.0, 2.4), FrenetPosition::new(10.0, 0.0));
        let q_bar =
            JointPosition::new(FrenetPosition::new(12.0, 0.0), FrenetPosition::new(10.0, 1.0));
        let (delta, _) = enumerate_feasible(&block, &joint_vector(&qe, &q_bar), 1e-9).unwrap();
        assert_eq!(delta[row_delta::LEFT], 0.0);
        assert_eq!(delta[row_delta::RIGHT], 0.0);
    }

    /// Feasibility of one exact binary assignment via interval reduction.
    fn assignment_feasible(block: &ConstraintBlock, x: &[f64], delta: &[f64], tol: f64) -> bool {
        let mut base = vec![0.0; block.n_rows];
        block.eval_base(x, &mut base);
        let mut lo = vec![f64::NEG_INFINITY; block.n_aux];
        let mut hi = vec![f64::INFINITY; block.n_aux];
        for r in 0..block.n_rows {
            let mut rhs = base[r];
            for (j, dj) in delta.iter().enumerate() {
                rhs += block.bin_matrix()[(r, j)] * dj;
            }
            let mut aux = None;
            for j in 0..block.n_aux {
                let c = block.aux_matrix()[(r, j)];
                if c != 0.0 {
                    aux = Some((j, c));
                }
            }
            match aux {
                None => {
                    if rhs > tol {
                        return false;
                    }
                }
                Some((j, c)) => {
                    if c > 0.0 {
                        hi[j] = hi[j].min(-rhs / c);
                    } else {
                        lo[j] = lo[j].max(-rhs / c);
                    }
                }
            }
        }
        lo.iter().zip(&hi).all(|(l, h)| *l <= h + tol)
    }

    #[test]
    fn gamma_row_forces_left_delta_when_active() {
        let track = straight();
        let mut ctx = ctx_plain();
        ctx.big_m = compute_big_m(&track, &ctx, &wide_box()).unwrap();
        let block = assemble_gamma_row(&track, &ctx);
        // Engaged, crossing latched on the left side, defender compliant.
        let qe = JointPosition::new(FrenetPosition::new(10.0, 0.0), FrenetPosition::new(9.0, 1.2));
        let q_bar =
            JointPosition::new(FrenetPosition::new(9.5, 0.0), FrenetPosition::new(7.5, 0.9));
        let x = joint_vector(&qe, &q_bar);
        let mut any_feasible = false;
        for pattern in 0..(1usize << row_delta::COUNT) {
            let delta: Vec<f64> = (0..row_delta::COUNT)
                .map(|j| ((pattern >> (row_delta::COUNT - 1 - j)) & 1) as f64)
                .collect();
            if assignment_feasible(&block, &x, &delta, 1e-9) {
                any_feasible = true;
                assert_eq!(delta[row_delta::LEFT], 1.0, "delta={delta:?}");
                assert!(!(delta[row_delta::LEFT] == 1.0 && delta[row_delta::RIGHT] == 1.0));
            }
        }
        assert!(any_feasible);
    }

    #[test]
    fn gamma_sh_recursion_matches_crossing_update() {
        let ctx = ctx_plain();
        let block = assemble_gamma_sh(&ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // Dyadic grid keeps the recursion arithmetic exact.
        let grid = |r: &mut ChaCha8Rng, lo: f64, hi: f64| {
            (r.gen_range((lo * 64.0) as i64..(hi * 64.0) as i64)) as f64 / 64.0
        };
        for _ in 0..50 {
            let mut q_bar = JointPosition::new(
                FrenetPosition::new(grid(&mut rng, 0.0, 50.0), grid(&mut rng, -2.0, 2.0)),
                FrenetPosition::new(grid(&mut rng, 0.0, 50.0), grid(&mut rng, -2.0, 2.0)),
            );
            let mut q_bar_mld = q_bar;
            for _ in 0..50 {
                let qe = JointPosition::new(
                    FrenetPosition::new(grid(&mut rng, 0.0, 50.0), grid(&mut rng, -2.0, 2.0)),
                    FrenetPosition::new(grid(&mut rng, 0.0, 50.0), grid(&mut rng, -2.0, 2.0)),
                );
                q_bar = crossing_update(&q_bar, &qe, &ctx);
                let x = joint_vector(&qe, &q_bar_mld);
                let (_, z) = enumerate_feasible(&block, &x, 0.0).expect("sh block infeasible");
                let next = f_sh(
                    qe.to_array(),
                    [
                        z[def_aux::SH],
                        z[def_aux::SH + 1],
                        z[def_aux::SH + 2],
                        z[def_aux::SH + 3],
                    ],
                );
                q_bar_mld = JointPosition::from_array(next);
                assert_eq!(q_bar_mld, q_bar);
            }
        }
    }

    #[test]
    fn gamma_ca_examples() {
        let ctx = ctx_plain();
        let block = assemble_gamma_ca(&ctx);
        // Attacker fully ahead: longitudinal separation satisfied.
        let qe = JointPosition::new(FrenetPosition::new(10.0, 0.0), FrenetPosition::new(20.0, 0.0));
        assert!(block_feasible(&block, &joint_vector(&qe, &qe), 1e-9));
        assert!(ca_satisfied(&qe, &ctx));
        // Fully overlapping: excluded.
        let qe = JointPosition::new(FrenetPosition::new(10.0, 0.0), FrenetPosition::new(10.2, 0.1));
        assert!(!block_feasible(&block, &joint_vector(&qe, &qe), 1e-9));
        assert!(!ca_satisfied(&qe, &ctx));
    }

    #[test]
    fn gamma_ca_matches_predicate() {
        let mut ctx = ctx_plain();
        let track = straight();
        ctx.big_m = compute_big_m(&track, &ctx, &wide_box()).unwrap();
        let block = assemble_gamma_ca(&ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for i in 0..1000 {
            let mut qe = random_joint(&mut rng, 100.0, 2.5);
            if i % 2 == 0 {
                qe.q_a.s = qe.q_d.s + rng.gen_range(-2.0 * ctx.delta_s_ca..2.0 * ctx.delta_s_ca);
            }
            let x = joint_vector(&qe, &qe);
            assert_eq!(block_feasible(&block, &x, 1e-9), ca_satisfied(&qe, &ctx));
        }
    }

    #[test]
    fn blocks_are_affine_in_binaries_and_auxiliaries() {
        let track = straight();
        let mut ctx = ctx_plain();
        ctx.big_m = compute_big_m(&track, &ctx, &wide_box()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for block in [
            assemble_gamma_row(&track, &ctx),
            assemble_gamma_sh(&ctx),
            assemble_gamma_ca(&ctx),
        ] {
            assert!(block.binary_linearity());
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            // Second differences along every (δ, z) direction vanish.
            for j in 0..block.n_bin + block.n_aux {
                let probe = |t: f64| -> Vec<f64> {
                    let mut d = vec![0.0; block.n_bin];
                    let mut z = vec![0.0; block.n_aux];
                    if j < block.n_bin {
                        d[j] = t;
                    } else {
                        z[j - block.n_bin] = t;
                    }
                    block.eval(&x, &d, &z)
                };
                let f0 = probe(0.0);
                let f1 = probe(0.5);
                let f2 = probe(1.0);
                for r in 0..block.n_rows {
                    let second_diff = f2[r] - 2.0 * f1[r] + f0[r];
                    assert!(second_diff.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn layout_indices_are_disjoint_and_total() {
        let mut seen = [false; row_delta::COUNT];
        for idx in [
            row_delta::S_PLUS,
            row_delta::S_MINUS,
            row_delta::N_PLUS,
            row_delta::N_MINUS,
            row_delta::S,
            row_delta::G_LEFT,
            row_delta::G_RIGHT,
            row_delta::LEFT,
            row_delta::RIGHT,
        ] {
            assert!(!seen[idx]);
            seen[idx] = true;
        }
        assert!(seen.iter().all(|s| *s));
        assert_eq!(def_aux::SH + 4, def_aux::COUNT);
    }
}
