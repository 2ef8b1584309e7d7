//! Primal-dual interior-point method for the convex QP relaxations.
//!
//! Mehrotra predictor-corrector on the slack form
//!
//! ```text
//!     min 1/2 x'Hx + g'x   s.t.  A_eq x = b_eq,  A x + s = b,  s >= 0
//! ```
//!
//! The Newton systems are reduced to the regularized augmented form
//! `[H + A'WA + rho I, A_eq'; A_eq, -rho I]`, which is symmetric
//! quasi-definite and factors without pivoting; one step of iterative
//! refinement against the unregularized operators recovers accuracy.
//! Infeasibility is decided by an elastic phase-1 problem rather than by
//! divergence heuristics, so branch-and-bound pruning stays sound.

use super::ldl::{AdjacencyGraph, BandedLdl};
use super::{MiqpProblem, ReducedQp, SolverError};
use nalgebra::DVector;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-9;
const RHO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    Infeasible,
    Failed,
}

pub(crate) struct IpmResult {
    pub x: Vec<f64>,
    /// Reduced-space objective (caller adds the substitution constant).
    pub obj: f64,
    pub iterations: usize,
    pub status: IpmStatus,
}

/// Outcome of a single QP relaxation solve.
#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Solve the continuous relaxation of `p` (integrality ignored, variable
/// bounds kept).
pub fn solve_qp_relaxation(p: &MiqpProblem) -> Result<QpOutcome, SolverError> {
    p.check_dims()?;
    let lower: Vec<f64> = p.lower.iter().cloned().collect();
    let upper: Vec<f64> = p.upper.iter().cloned().collect();
    let qp = ReducedQp::build(p, &lower, &upper);
    let res = solve_reduced(&qp, None);
    match res.status {
        IpmStatus::Converged => {
            let x = qp.expand(&res.x);
            Ok(QpOutcome::Optimal(QpSolution {
                objective: p.objective(&x),
                x,
                iterations: res.iterations,
            }))
        }
        IpmStatus::Infeasible => Ok(QpOutcome::Infeasible),
        IpmStatus::Failed => Err(SolverError::Numerical(
            "interior point method failed to converge".into(),
        )),
    }
}

/// Entry point used by branch-and-bound: solve a reduced problem with an
/// optional warm start, falling back to phase-1 for infeasibility detection.
pub(crate) fn solve_reduced(qp: &ReducedQp, warm: Option<&[f64]>) -> IpmResult {
    if qp.inconsistent {
        return IpmResult {
            x: vec![0.0; qp.n],
            obj: 0.0,
            iterations: 0,
            status: IpmStatus::Infeasible,
        };
    }
    if qp.n == 0 {
        return IpmResult {
            x: Vec::new(),
            obj: 0.0,
            iterations: 0,
            status: IpmStatus::Converged,
        };
    }
    let mut res = ipm_core(
        &qp.h,
        &qp.g,
        &qp.eq_rows,
        &qp.eq_rhs,
        &qp.in_rows,
        &qp.in_rhs,
        warm,
    );
    if res.status == IpmStatus::Failed {
        // Decide feasibility with the elastic problem, then retry once from
        // its solution.
        match phase1(qp) {
            Phase1Outcome::Feasible(x1) => {
                res = ipm_core(
                    &qp.h,
                    &qp.g,
                    &qp.eq_rows,
                    &qp.eq_rhs,
                    &qp.in_rows,
                    &qp.in_rhs,
                    Some(&x1),
                );
                if res.status == IpmStatus::Failed {
                    return res;
                }
            }
            Phase1Outcome::Infeasible => {
                return IpmResult {
                    x: vec![0.0; qp.n],
                    obj: 0.0,
                    iterations: res.iterations,
                    status: IpmStatus::Infeasible,
                };
            }
            Phase1Outcome::Undecided => return res,
        }
    }
    res
}

enum Phase1Outcome {
    Feasible(Vec<f64>),
    Infeasible,
    Undecided,
}

/// Elastic feasibility problem: minimize the total constraint violation
/// `sum t + sum (t+ + t-)` with a tiny quadratic tie-breaker on x.
fn phase1(qp: &ReducedQp) -> Phase1Outcome {
    let n = qp.n;
    let m = qp.in_rows.len();
    let p = qp.eq_rows.len();
    let n1 = n + m + 2 * p;
    let mut h = nalgebra::DMatrix::zeros(n1, n1);
    for j in 0..n {
        h[(j, j)] = 1e-8;
    }
    let mut g = DVector::zeros(n1);
    for j in n..n1 {
        g[j] = 1.0;
    }
    // A x - t <= b ; -t <= 0 ; -t± <= 0
    let mut in_rows = Vec::with_capacity(2 * m + 2 * p);
    let mut in_rhs = Vec::with_capacity(2 * m + 2 * p);
    for (r, row) in qp.in_rows.iter().enumerate() {
        let mut elastic = row.clone();
        elastic.push((n + r, -1.0));
        in_rows.push(elastic);
        in_rhs.push(qp.in_rhs[r]);
    }
    for j in n..n1 {
        in_rows.push(vec![(j, -1.0)]);
        in_rhs.push(0.0);
    }
    // A_eq x + t+ - t- = b_eq
    let mut eq_rows = Vec::with_capacity(p);
    for (r, row) in qp.eq_rows.iter().enumerate() {
        let mut elastic = row.clone();
        elastic.push((n + m + 2 * r, 1.0));
        elastic.push((n + m + 2 * r + 1, -1.0));
        eq_rows.push(elastic);
    }
    let res = ipm_core(&h, &g, &eq_rows, &qp.eq_rhs, &in_rows, &in_rhs, None);
    if res.status != IpmStatus::Converged {
        return Phase1Outcome::Undecided;
    }
    let violation: f64 = res.x[n..].iter().sum();
    let scale = 1.0
        + qp.in_rhs
            .iter()
            .chain(qp.eq_rhs.iter())
            .fold(0.0f64, |a, b| a.max(b.abs()));
    if violation <= 1e-7 * scale {
        Phase1Outcome::Feasible(res.x[..n].to_vec())
    } else {
        Phase1Outcome::Infeasible
    }
}

/// KKT scaffolding shared across iterations: RCM permutation, band width,
/// and the banded buffer.
struct KktScaffold {
    n_kkt: usize,
    /// position of original index in permuted order
    pos: Vec<usize>,
    bw: usize,
    ldl: BandedLdl,
    h_entries: Vec<(usize, usize, f64)>,
}

fn build_scaffold(
    h: &nalgebra::DMatrix<f64>,
    eq_rows: &[Vec<(usize, f64)>],
    in_rows: &[Vec<(usize, f64)>],
) -> KktScaffold {
    let n = h.nrows();
    let p = eq_rows.len();
    let n_kkt = n + p;
    let mut graph = AdjacencyGraph::new(n_kkt);
    let mut h_entries = Vec::new();
    for i in 0..n {
        for j in 0..=i {
            if h[(i, j)] != 0.0 {
                h_entries.push((i, j, h[(i, j)]));
                graph.add_edge(i, j);
            }
        }
    }
    for row in in_rows {
        for a in 0..row.len() {
            for b in 0..a {
                graph.add_edge(row[a].0, row[b].0);
            }
        }
    }
    for (r, row) in eq_rows.iter().enumerate() {
        for &(j, _) in row {
            graph.add_edge(n + r, j);
        }
    }
    let perm = graph.reverse_cuthill_mckee();
    let mut pos = vec![0usize; n_kkt];
    for (p_new, &old) in perm.iter().enumerate() {
        pos[old] = p_new;
    }
    let mut bw = 0usize;
    for (i, j, _) in &h_entries {
        bw = bw.max(pos[*i].abs_diff(pos[*j]));
    }
    for row in in_rows {
        for a in 0..row.len() {
            for b in 0..a {
                bw = bw.max(pos[row[a].0].abs_diff(pos[row[b].0]));
            }
        }
    }
    for (r, row) in eq_rows.iter().enumerate() {
        for &(j, _) in row {
            bw = bw.max(pos[n + r].abs_diff(pos[j]));
        }
    }
    let ldl = BandedLdl::new(n_kkt, bw);
    KktScaffold {
        n_kkt,
        pos,
        bw,
        ldl,
        h_entries,
    }
}

#[allow(clippy::too_many_arguments)]
fn ipm_core(
    h: &nalgebra::DMatrix<f64>,
    g: &DVector<f64>,
    eq_rows: &[Vec<(usize, f64)>],
    eq_rhs: &[f64],
    in_rows: &[Vec<(usize, f64)>],
    in_rhs: &[f64],
    warm: Option<&[f64]>,
) -> IpmResult {
    let n = h.nrows();
    let p = eq_rows.len();
    let m = in_rows.len();
    let mut scaffold = build_scaffold(h, eq_rows, in_rows);

    let obj = |x: &[f64]| -> f64 {
        let mut v = 0.0;
        for i in 0..n {
            v += g[i] * x[i];
            for j in 0..n {
                v += 0.5 * x[i] * h[(i, j)] * x[j];
            }
        }
        v
    };

    // Starting point.
    let mut x: Vec<f64> = match warm {
        Some(w) => w.to_vec(),
        None => vec![0.0; n],
    };
    let slack_floor = if warm.is_some() { 1e-2 } else { 1.0 };
    let mut s = vec![0.0; m];
    let mut z = vec![0.0; m];
    for r in 0..m {
        let ax: f64 = in_rows[r].iter().map(|&(j, v)| v * x[j]).sum();
        s[r] = (in_rhs[r] - ax).max(slack_floor);
        z[r] = slack_floor;
    }
    let mut y = vec![0.0; p];

    // Pure equality/unconstrained problems: one KKT solve.
    if m == 0 {
        let mut rhs = vec![0.0; n + p];
        for i in 0..n {
            rhs[i] = -g[i];
        }
        for r in 0..p {
            rhs[n + r] = eq_rhs[r];
        }
        let w = vec![0.0; 0];
        match kkt_solve_refined(
            &mut scaffold,
            h,
            eq_rows,
            in_rows,
            &w,
            &rhs,
            2,
        ) {
            Some(sol) => {
                let x = sol[..n].to_vec();
                let o = obj(&x);
                return IpmResult {
                    x,
                    obj: o,
                    iterations: 1,
                    status: IpmStatus::Converged,
                };
            }
            None => {
                return IpmResult {
                    x,
                    obj: 0.0,
                    iterations: 0,
                    status: IpmStatus::Failed,
                }
            }
        }
    }

    let scale_d = 1.0 + g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let scale_p = 1.0
        + in_rhs
            .iter()
            .chain(eq_rhs.iter())
            .fold(0.0f64, |a, b| a.max(b.abs()));

    let mut rd = vec![0.0; n];
    let mut rp = vec![0.0; p];
    let mut ri = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mut rhs = vec![0.0; n + p];
    let mut dx_aff = vec![0.0; n];
    let mut ds_aff = vec![0.0; m];
    let mut dz_aff = vec![0.0; m];

    for iter in 0..MAX_ITER {
        // Residuals.
        for i in 0..n {
            let mut v = g[i];
            for j in 0..n {
                v += h[(i, j)] * x[j];
            }
            rd[i] = v;
        }
        for (r, row) in eq_rows.iter().enumerate() {
            for &(j, v) in row {
                rd[j] += v * y[r];
            }
            let ax: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
            rp[r] = ax - eq_rhs[r];
        }
        for (r, row) in in_rows.iter().enumerate() {
            for &(j, v) in row {
                rd[j] += v * z[r];
            }
            let ax: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
            ri[r] = ax + s[r] - in_rhs[r];
        }
        let mu = if m > 0 {
            s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m as f64
        } else {
            0.0
        };
        let norm_rd = rd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let norm_rp = rp
            .iter()
            .chain(ri.iter())
            .fold(0.0f64, |a, b| a.max(b.abs()));
        if norm_rd <= TOL * scale_d && norm_rp <= TOL * scale_p && mu <= TOL {
            return IpmResult {
                obj: obj(&x),
                x,
                iterations: iter,
                status: IpmStatus::Converged,
            };
        }
        // Hopeless divergence: give up early and let phase-1 decide.
        let dual_mag = z.iter().chain(y.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
        if dual_mag > 1e13 {
            break;
        }

        for r in 0..m {
            w[r] = z[r] / s[r];
        }

        // Predictor (affine) direction: rc = s.z
        for i in 0..n {
            rhs[i] = -rd[i];
        }
        for (r, row) in in_rows.iter().enumerate() {
            // rhs_x += a_r * (rc_r - z_r * ri_r)/s_r with rc = s z
            let coeff = (s[r] * z[r] - z[r] * ri[r]) / s[r];
            for &(j, v) in row {
                rhs[j] += v * coeff;
            }
        }
        for r in 0..p {
            rhs[n + r] = -rp[r];
        }
        let sol = match kkt_solve_refined(&mut scaffold, h, eq_rows, in_rows, &w, &rhs, 1) {
            Some(sol) => sol,
            None => break,
        };
        dx_aff.copy_from_slice(&sol[..n]);
        for (r, row) in in_rows.iter().enumerate() {
            let adx: f64 = row.iter().map(|&(j, v)| v * dx_aff[j]).sum();
            ds_aff[r] = -ri[r] - adx;
            dz_aff[r] = (-(s[r] * z[r]) - z[r] * ds_aff[r]) / s[r];
        }
        let alpha_p_aff = max_step(&s, &ds_aff, 1.0);
        let alpha_d_aff = max_step(&z, &dz_aff, 1.0);
        let mut mu_aff = 0.0;
        for r in 0..m {
            mu_aff += (s[r] + alpha_p_aff * ds_aff[r]) * (z[r] + alpha_d_aff * dz_aff[r]);
        }
        mu_aff /= m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(1e-8, 1.0);

        // Corrector: rc = s.z + ds_aff.dz_aff - sigma mu
        for i in 0..n {
            rhs[i] = -rd[i];
        }
        for (r, row) in in_rows.iter().enumerate() {
            let rc = s[r] * z[r] + ds_aff[r] * dz_aff[r] - sigma * mu;
            let coeff = (rc - z[r] * ri[r]) / s[r];
            for &(j, v) in row {
                rhs[j] += v * coeff;
            }
        }
        for r in 0..p {
            rhs[n + r] = -rp[r];
        }
        let sol = match kkt_solve_refined(&mut scaffold, h, eq_rows, in_rows, &w, &rhs, 1) {
            Some(sol) => sol,
            None => break,
        };
        let dx = &sol[..n];
        let dy = &sol[n..n + p];
        let mut ds = vec![0.0; m];
        let mut dz = vec![0.0; m];
        for (r, row) in in_rows.iter().enumerate() {
            let adx: f64 = row.iter().map(|&(j, v)| v * dx[j]).sum();
            ds[r] = -ri[r] - adx;
            let rc = s[r] * z[r] + ds_aff[r] * dz_aff[r] - sigma * mu;
            dz[r] = (-rc - z[r] * ds[r]) / s[r];
        }
        let tau = if mu > 1e-6 { 0.995 } else { 0.9995 };
        let alpha_p = max_step(&s, &ds, tau).min(1.0);
        let alpha_d = max_step(&z, &dz, tau).min(1.0);
        for i in 0..n {
            x[i] += alpha_p * dx[i];
        }
        for r in 0..m {
            s[r] = (s[r] + alpha_p * ds[r]).max(1e-300);
            z[r] = (z[r] + alpha_d * dz[r]).max(1e-300);
        }
        for r in 0..p {
            y[r] += alpha_d * dy[r];
        }
    }

    IpmResult {
        obj: obj(&x),
        x,
        iterations: MAX_ITER,
        status: IpmStatus::Failed,
    }
}

fn max_step(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    let mut alpha = 1.0f64;
    for (a, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-tau * a / d);
        }
    }
    alpha
}

/// Assemble, factor, and solve the regularized augmented system, then apply
/// `refine` rounds of iterative refinement against the unregularized
/// operators. Returns `None` on factorization breakdown.
fn kkt_solve_refined(
    scaffold: &mut KktScaffold,
    h: &nalgebra::DMatrix<f64>,
    eq_rows: &[Vec<(usize, f64)>],
    in_rows: &[Vec<(usize, f64)>],
    w: &[f64],
    rhs: &[f64],
    refine: usize,
) -> Option<Vec<f64>> {
    let n = h.nrows();
    let p = eq_rows.len();
    let n_kkt = scaffold.n_kkt;
    let pos = scaffold.pos.clone();
    let mut rho = RHO;
    for _attempt in 0..4 {
        scaffold.ldl.clear();
        for &(i, j, v) in &scaffold.h_entries {
            let (pi, pj) = (pos[i], pos[j]);
            let (a, b) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            scaffold.ldl.add(a, b, v);
        }
        for i in 0..n {
            scaffold.ldl.add(pos[i], pos[i], rho);
        }
        for (r, row) in in_rows.iter().enumerate() {
            let wr = w[r];
            if wr == 0.0 {
                continue;
            }
            for a in 0..row.len() {
                let (ja, va) = row[a];
                for b in 0..=a {
                    let (jb, vb) = row[b];
                    let (pi, pj) = (pos[ja], pos[jb]);
                    let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
                    scaffold.ldl.add(hi, lo, wr * va * vb);
                }
            }
        }
        for (r, row) in eq_rows.iter().enumerate() {
            let pr = pos[n + r];
            for &(j, v) in row {
                let pj = pos[j];
                let (hi, lo) = if pr >= pj { (pr, pj) } else { (pj, pr) };
                scaffold.ldl.add(hi, lo, v);
            }
            scaffold.ldl.add(pr, pr, -rho.max(1e-10));
        }
        if !scaffold.ldl.factor() {
            rho *= 100.0;
            continue;
        }

        // Permuted solve + refinement in original indexing.
        let apply = |v: &[f64], out: &mut [f64]| {
            // out = K0 v with K0 the unregularized KKT operator.
            for o in out.iter_mut() {
                *o = 0.0;
            }
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += h[(i, j)] * v[j];
                }
                out[i] = acc;
            }
            for (r, row) in in_rows.iter().enumerate() {
                if w[r] == 0.0 {
                    continue;
                }
                let av: f64 = row.iter().map(|&(j, c)| c * v[j]).sum();
                for &(j, c) in row {
                    out[j] += w[r] * c * av;
                }
            }
            for (r, row) in eq_rows.iter().enumerate() {
                let mut av = 0.0;
                for &(j, c) in row {
                    out[j] += c * v[n + r];
                    av += c * v[j];
                }
                out[n + r] = av;
            }
        };

        let solve_perm = |ldl: &BandedLdl, b: &[f64]| -> Vec<f64> {
            let mut pb = vec![0.0; n_kkt];
            for i in 0..n_kkt {
                pb[pos[i]] = b[i];
            }
            ldl.solve(&mut pb);
            let mut out = vec![0.0; n_kkt];
            for i in 0..n_kkt {
                out[i] = pb[pos[i]];
            }
            out
        };

        let mut sol = solve_perm(&scaffold.ldl, rhs);
        let mut residual = vec![0.0; n_kkt];
        for _ in 0..refine {
            apply(&sol, &mut residual);
            let mut max_r: f64 = 0.0;
            for i in 0..n_kkt {
                residual[i] = rhs[i] - residual[i];
                max_r = max_r.max(residual[i].abs());
            }
            if max_r < 1e-13 {
                break;
            }
            let corr = solve_perm(&scaffold.ldl, &residual);
            for i in 0..n_kkt {
                sol[i] += corr[i];
            }
        }
        if sol.iter().all(|v| v.is_finite()) {
            return Some(sol);
        }
        rho *= 100.0;
    }
    None
}
