//! Single-shooting SQP over the stacked inputs `w = (u_0, …, u_{N-1})`.
//!
//! Gauss–Newton Hessian of the tracking cost, linearized constraints, a
//! Goldfarb–Idnani subproblem with an elastic retry, and an l1 exact-penalty
//! Armijo line search.

use nalgebra::DMatrix;

use super::dynamics::{rk4, rk4_with_jacobians, EgoInput, StateVec, NU, NX};
use super::ocp::{audit_inputs, OcpProblem, OcpSolution, SolveStatus};
use super::qp::{Qp, QpStatus};
use crate::error::{Error, Result};

const STEP_TOL: f64 = 1e-5;
const VIOLATION_TOL: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-6;
const ELASTIC_WEIGHT: f64 = 1e4;

struct Constraint {
    value: f64,
    grad: Vec<f64>,
    /// Offset past `N - 1` of a terminal band row.
    band: Option<usize>,
}

struct Linearization {
    states: Vec<StateVec>,
    cost: f64,
    cost_grad: Vec<f64>,
    hessian: DMatrix<f64>,
    constraints: Vec<Constraint>,
}

struct Shooting<'a> {
    p: &'a OcpProblem,
    n: usize,
    nw: usize,
    /// Look-ahead steps simulated past `n` with the last input held.
    ext: usize,
}

/// Linear state bounds with more slack than this are left out of the QP.
const SPEED_SCREEN: f64 = 3.0;
const STEER_SCREEN: f64 = 0.2;

impl<'a> Shooting<'a> {
    fn new(p: &'a OcpProblem) -> Self {
        let n = p.horizon();
        let available = p
            .targets
            .iter()
            .map(|t| t.means.len() - 1 - n)
            .min()
            .unwrap_or(usize::MAX);
        Self {
            p,
            n,
            nw: NU * n,
            ext: p.config.terminal_lookahead.min(available),
        }
    }

    fn input(w: &[f64], j: usize) -> [f64; NU] {
        [w[NU * j], w[NU * j + 1], w[NU * j + 2]]
    }

    fn held(&self, j: usize) -> usize {
        j.min(self.n - 1)
    }

    fn simulate(&self, w: &[f64]) -> Option<Vec<StateVec>> {
        let cfg = &self.p.config;
        let mut xs = Vec::with_capacity(self.n + self.ext + 1);
        xs.push(self.p.initial.to_array());
        for j in 0..self.n + self.ext {
            let x = rk4(
                &xs[j],
                &Self::input(w, self.held(j)),
                cfg.sampling_time,
                cfg.wheelbase,
            );
            if !(x[4].abs() < std::f64::consts::FRAC_PI_2) || x.iter().any(|v| !v.is_finite()) {
                return None;
            }
            xs.push(x);
        }
        Some(xs)
    }

    fn stage_weight(&self, j: usize) -> f64 {
        if j == self.n {
            self.n as f64
        } else {
            1.0
        }
    }

    fn cost(&self, xs: &[StateVec], w: &[f64]) -> f64 {
        let cfg = &self.p.config;
        let mut f = 0.0;
        for (j, x) in xs.iter().enumerate().take(self.n + 1) {
            let p = self.p.path.position(x[6]);
            let (vr, _) = self.p.path.v_ref(x[6]);
            f += self.stage_weight(j)
                * (cfg.q_position[0] * (x[0] - p[0]).powi(2)
                    + cfg.q_position[1] * (x[1] - p[1]).powi(2)
                    + cfg.q_speed * (x[2] - vr).powi(2));
        }
        for j in 0..self.n {
            for k in 0..NU {
                f += cfg.r_input[k] * w[NU * j + k].powi(2);
            }
        }
        f
    }

    /// Sum of constraint violations of the solver's (margin-tightened) constraint set.
    fn violation(&self, xs: &[StateVec]) -> f64 {
        let cfg = &self.p.config;
        let band = cfg.terminal_band - cfg.terminal_margin;
        let mut v = 0.0;
        for (j, x) in xs.iter().enumerate().skip(1) {
            v += (-x[2]).max(0.0) + (x[2] - cfg.v_max).max(0.0);
            v += (x[4].abs() - cfg.delta_max).max(0.0) + (-x[5]).max(0.0);
            for t in &self.p.targets {
                let m = t.means[j];
                let d = (x[0] - m[0]).hypot(x[1] - m[1]);
                let need = cfg.safety_distance(x[2]) + t.d_sigma[j] + cfg.solver_margin(j);
                v += (need - d).max(0.0);
            }
            if j >= self.n {
                let p = self.p.path.position(x[6]);
                v += ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2) - band * band).max(0.0);
            }
        }
        v
    }

    /// `band_weights` are the previous multipliers of the band rows; their
    /// curvature `2λ·JₑᵀJₑ` is positive semidefinite and enters the Hessian.
    fn linearize(&self, w: &[f64], band_weights: &[f64]) -> Option<Linearization> {
        let cfg = &self.p.config;
        let (n, nw) = (self.n, self.nw);
        let steps = n + self.ext;
        let mut xs = Vec::with_capacity(steps + 1);
        xs.push(self.p.initial.to_array());
        // sens[j] is dx_j/dw, row-major NX × nw.
        let mut sens = vec![vec![0.0; NX * nw]; steps + 1];
        for j in 0..steps {
            let k_in = self.held(j);
            let (x, a, b) = rk4_with_jacobians(
                &xs[j],
                &Self::input(w, k_in),
                cfg.sampling_time,
                cfg.wheelbase,
            );
            if !(x[4].abs() < std::f64::consts::FRAC_PI_2) || x.iter().any(|v| !v.is_finite()) {
                return None;
            }
            xs.push(x);
            let cols = NU * j.min(n);
            let (prev, next) = sens.split_at_mut(j + 1);
            let (prev, next) = (&prev[j], &mut next[0]);
            for r in 0..NX {
                let row = &mut next[r * nw..(r + 1) * nw];
                for k in 0..NX {
                    let ark = a[r][k];
                    if ark != 0.0 {
                        let src = &prev[k * nw..k * nw + cols];
                        for (dst, s) in row[..cols].iter_mut().zip(src) {
                            *dst += ark * s;
                        }
                    }
                }
                for (dst, s) in row[NU * k_in..NU * k_in + NU].iter_mut().zip(&b[r]) {
                    *dst += s;
                }
            }
        }

        let row = |j: usize, r: usize| &sens[j][r * nw..(r + 1) * nw];
        // Residual rows of stage j only touch the first NU·j inputs.
        let mut hessian = DMatrix::<f64>::zeros(nw, nw);
        let mut cost_grad = vec![0.0; nw];
        let mut a = vec![0.0; nw];
        for j in 1..=n {
            let x = &xs[j];
            let wj = self.stage_weight(j);
            let (p, t) = self.p.path.eval(x[6]);
            let (vr, dvr) = self.p.path.v_ref(x[6]);
            let (s0, s1, s2, s6) = (row(j, 0), row(j, 1), row(j, 2), row(j, 6));
            let m = NU * j;
            let parts = [
                (wj * cfg.q_position[0], x[0] - p[0], s0, t[0]),
                (wj * cfg.q_position[1], x[1] - p[1], s1, t[1]),
                (wj * cfg.q_speed, x[2] - vr, s2, dvr),
            ];
            for (weight, res, sx, slope) in parts {
                for c in 0..m {
                    a[c] = sx[c] - slope * s6[c];
                }
                let scale = 2.0 * weight;
                for c in 0..m {
                    let ac = scale * a[c];
                    cost_grad[c] += ac * res;
                    if ac != 0.0 {
                        let col = &mut hessian.as_mut_slice()[c * nw..c * nw + m];
                        for (h, ar) in col.iter_mut().zip(&a[..m]) {
                            *h += ac * ar;
                        }
                    }
                }
            }
        }
        for j in 0..n {
            for k in 0..NU {
                let i = NU * j + k;
                hessian[(i, i)] += 2.0 * cfg.r_input[k];
                cost_grad[i] += 2.0 * cfg.r_input[k] * w[i];
            }
        }

        let mut constraints = Vec::new();
        let mut push = |value: f64, grad: Vec<f64>| {
            constraints.push(Constraint {
                value,
                grad,
                band: None,
            })
        };
        let scaled = |r: &[f64], s: f64| r.iter().map(|v| v * s).collect::<Vec<f64>>();
        let band = cfg.terminal_band - cfg.terminal_margin;
        let mut bands = Vec::new();
        for j in 1..=steps {
            let x = &xs[j];
            if x[2] <= SPEED_SCREEN {
                push(x[2], row(j, 2).to_vec());
            }
            if cfg.v_max - x[2] <= SPEED_SCREEN {
                push(cfg.v_max - x[2], scaled(row(j, 2), -1.0));
            }
            if cfg.delta_max - x[4] <= STEER_SCREEN {
                push(cfg.delta_max - x[4], scaled(row(j, 4), -1.0));
            }
            if cfg.delta_max + x[4] <= STEER_SCREEN {
                push(cfg.delta_max + x[4], row(j, 4).to_vec());
            }
            if x[5] <= SPEED_SCREEN {
                push(x[5], row(j, 5).to_vec());
            }
            for t in &self.p.targets {
                let m = t.means[j];
                let (dx, dy) = (x[0] - m[0], x[1] - m[1]);
                let d = dx.hypot(dy);
                let base = d - t.d_sigma[j] - cfg.solver_margin(j);
                let g_speed = base - cfg.safety_time_gap * x[2];
                let g_floor = base - cfg.d_min;
                if g_speed.min(g_floor) > cfg.screening_distance {
                    continue;
                }
                let (nx_, ny_) = if d > 1e-9 {
                    (dx / d, dy / d)
                } else {
                    (1.0, 0.0)
                };
                let grad_d: Vec<f64> = (0..nw)
                    .map(|c| nx_ * row(j, 0)[c] + ny_ * row(j, 1)[c])
                    .collect();
                if g_speed <= cfg.screening_distance {
                    let g = grad_d
                        .iter()
                        .zip(row(j, 2))
                        .map(|(a, b)| a - cfg.safety_time_gap * b)
                        .collect();
                    push(g_speed, g);
                }
                if g_floor <= cfg.screening_distance {
                    push(g_floor, grad_d);
                }
            }
            if j >= n {
                let (p, t) = self.p.path.eval(x[6]);
                let (ex, ey) = (x[0] - p[0], x[1] - p[1]);
                let jx: Vec<f64> = (0..nw)
                    .map(|c| row(j, 0)[c] - t[0] * row(j, 6)[c])
                    .collect();
                let jy: Vec<f64> = (0..nw)
                    .map(|c| row(j, 1)[c] - t[1] * row(j, 6)[c])
                    .collect();
                let g = jx
                    .iter()
                    .zip(&jy)
                    .map(|(a, b)| -2.0 * (ex * a + ey * b))
                    .collect();
                bands.push((j - n, band * band - ex * ex - ey * ey, g));
                let lam = band_weights.get(j - n).copied().unwrap_or(0.0);
                if lam > 0.0 {
                    for r in 0..nw {
                        for c in 0..nw {
                            hessian[(r, c)] += 2.0 * lam * (jx[r] * jx[c] + jy[r] * jy[c]);
                        }
                    }
                }
            }
        }
        constraints.extend(bands.into_iter().map(|(b, value, grad)| Constraint {
            value,
            grad,
            band: Some(b),
        }));

        let cost = self.cost(&xs, w);
        Some(Linearization {
            states: xs,
            cost,
            cost_grad,
            hessian,
            constraints,
        })
    }
}

struct Step {
    d: Vec<f64>,
    multiplier_max: f64,
    linear_violation: f64,
    band_multipliers: Vec<f64>,
}

fn band_multipliers(lin: &Linearization, multipliers: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for (c, m) in lin.constraints.iter().zip(multipliers) {
        if let Some(b) = c.band {
            if out.len() <= b {
                out.resize(b + 1, 0.0);
            }
            out[b] = m.max(0.0);
        }
    }
    out
}

fn qp_step(lin: &Linearization, w: &[f64], lo: &[f64], hi: &[f64]) -> Option<Step> {
    let nw = w.len();
    let lo_d: Vec<f64> = (0..nw).map(|i| lo[i] - w[i]).collect();
    let hi_d: Vec<f64> = (0..nw).map(|i| hi[i] - w[i]).collect();
    let qp = Qp {
        h: lin.hessian.clone(),
        g: lin.cost_grad.clone(),
        rows: lin.constraints.iter().map(|c| c.grad.clone()).collect(),
        rhs: lin.constraints.iter().map(|c| -c.value).collect(),
        lo: lo_d.clone(),
        hi: hi_d.clone(),
    };
    let sol = qp.solve();
    if sol.status == QpStatus::Optimal {
        let multiplier_max = sol
            .row_multipliers
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        return Some(Step {
            band_multipliers: band_multipliers(lin, &sol.row_multipliers),
            d: sol.x,
            multiplier_max,
            linear_violation: 0.0,
        });
    }

    // Elastic retry: one shared slack t >= 0 relaxes every linearized row.
    let mut h = DMatrix::<f64>::zeros(nw + 1, nw + 1);
    h.view_mut((0, 0), (nw, nw)).copy_from(&lin.hessian);
    h[(nw, nw)] = 1.0;
    let mut g = lin.cost_grad.clone();
    g.push(ELASTIC_WEIGHT);
    let rows = lin
        .constraints
        .iter()
        .map(|c| {
            let mut r = c.grad.clone();
            r.push(1.0);
            r
        })
        .collect();
    let mut lo_e = lo_d;
    lo_e.push(0.0);
    let mut hi_e = hi_d;
    hi_e.push(f64::INFINITY);
    let elastic = Qp {
        h,
        g,
        rows,
        rhs: qp.rhs,
        lo: lo_e,
        hi: hi_e,
    };
    let sol = elastic.solve();
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let mut d = sol.x;
    d.pop();
    let linear_violation = lin
        .constraints
        .iter()
        .map(|c| (-(c.value + c.grad.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>())).max(0.0))
        .sum();
    let multiplier_max = sol
        .row_multipliers
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    Some(Step {
        band_multipliers: band_multipliers(lin, &sol.row_multipliers),
        d,
        multiplier_max,
        linear_violation,
    })
}

/// Solves the OCP from `warm_start` (already shifted by the caller) or from
/// the problem's default inputs.
pub fn solve_ocp(problem: &OcpProblem, warm_start: Option<&[EgoInput]>) -> Result<OcpSolution> {
    let sh = Shooting::new(problem);
    let cfg = &problem.config;
    let (lo_u, hi_u) = cfg.input_bounds();
    let lo: Vec<f64> = (0..sh.nw).map(|i| lo_u[i % NU]).collect();
    let hi: Vec<f64> = (0..sh.nw).map(|i| hi_u[i % NU]).collect();

    let initial = match warm_start {
        Some(ws) if ws.len() != sh.n => {
            return Err(Error::Dimension {
                expected: sh.n,
                got: ws.len(),
            })
        }
        Some(ws) => ws.to_vec(),
        None => problem.default_inputs(),
    };
    let mut w: Vec<f64> = initial.iter().flat_map(|u| u.to_array()).collect();
    for i in 0..sh.nw {
        w[i] = w[i].clamp(lo[i], hi[i]);
    }
    if sh.simulate(&w).is_none() {
        w = problem
            .default_inputs()
            .iter()
            .flat_map(|u| u.to_array())
            .collect();
    }

    let mut rho = 1.0f64;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let mut band_weights = Vec::new();
    while iterations < cfg.max_iterations {
        let Some(lin) = sh.linearize(&w, &band_weights) else {
            break;
        };
        if history.is_empty() {
            history.push(lin.cost);
        }
        let viol = sh.violation(&lin.states);
        iterations += 1;
        let Some(step) = qp_step(&lin, &w, &lo, &hi) else {
            break;
        };
        band_weights = step.band_multipliers.clone();
        let dmax = step.d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dmax <= STEP_TOL && viol <= VIOLATION_TOL {
            converged = true;
            break;
        }
        rho = rho.max(2.0 * step.multiplier_max);
        let slope = |rho: f64| {
            lin.cost_grad
                .iter()
                .zip(&step.d)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                - rho * (viol - step.linear_violation)
        };
        while slope(rho) > -1e-12 && viol > step.linear_violation + VIOLATION_TOL && rho < 1e12 {
            rho *= 10.0;
        }
        let dir = slope(rho);
        let merit0 = lin.cost + rho * viol;
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let trial: Vec<f64> = (0..sh.nw)
                .map(|i| (w[i] + alpha * step.d[i]).clamp(lo[i], hi[i]))
                .collect();
            if let Some(xs) = sh.simulate(&trial) {
                let f = sh.cost(&xs, &trial);
                let merit = f + rho * sh.violation(&xs);
                if merit <= merit0 + ARMIJO * alpha * dir.min(0.0) {
                    accepted = Some((trial, f, merit));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, f, merit)) = accepted else {
            // No merit decrease along the step: stationary up to round-off.
            converged = viol <= VIOLATION_TOL;
            break;
        };
        w = trial;
        history.push(f);
        if (merit0 - merit).abs() <= 1e-12 * (1.0 + merit0.abs())
            && viol <= VIOLATION_TOL
            && dmax <= 1e3 * STEP_TOL
        {
            converged = true;
            break;
        }
    }

    let inputs: Vec<EgoInput> = (0..sh.n)
        .map(|j| EgoInput::from_array(Shooting::input(&w, j)))
        .collect();
    let audit = audit_inputs(problem, &inputs);
    let states = problem.simulate(&inputs).unwrap_or_default();
    let final_viol = sh
        .simulate(&w)
        .map(|xs| sh.violation(&xs))
        .unwrap_or(f64::INFINITY);
    // An unconverged iterate is still usable when it passes the audit.
    let status = if !audit.passed {
        SolveStatus::Infeasible
    } else if converged && final_viol <= VIOLATION_TOL.max(cfg.audit_tolerance) {
        SolveStatus::Feasible
    } else {
        SolveStatus::MaxIter
    };
    let objective = if states.is_empty() {
        f64::INFINITY
    } else {
        problem.objective(&states, &inputs)
    };
    Ok(OcpSolution {
        inputs,
        states,
        status,
        iterations,
        objective,
        objective_history: history,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::Intention;
    use crate::mpc::ocp::DistanceConstraintSpec;
    use crate::mpc::{EgoState, MpcConfig, PathReference};

    fn straight(v0: f64, targets: Vec<DistanceConstraintSpec>) -> OcpProblem {
        let path =
            PathReference::with_constant_speed(vec![[1.75, -40.0], [1.75, 60.0]], 10.0).unwrap();
        let x0 = EgoState {
            px: 1.75,
            py: -40.0,
            v: v0,
            psi: std::f64::consts::FRAC_PI_2,
            delta: 0.0,
            vs: v0,
            s: 0.0,
        };
        OcpProblem::new(x0, path, MpcConfig::default(), targets).unwrap()
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let spec = DistanceConstraintSpec::new(
            Intention::StraightOn,
            vec![[2.5, -25.0]; 41],
            vec![0.3; 41],
        )
        .unwrap();
        let p = straight(9.0, vec![spec]);
        let sh = Shooting::new(&p);
        let w: Vec<f64> = (0..sh.nw)
            .map(|i| 0.1 * ((i * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let lin = sh.linearize(&w, &[]).unwrap();
        let h = 1e-6;
        for c in [0, 5, 37, 90, 119] {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[c] += h;
            wm[c] -= h;
            let (xp, xm) = (sh.simulate(&wp).unwrap(), sh.simulate(&wm).unwrap());
            let fd = (sh.cost(&xp, &wp) - sh.cost(&xm, &wm)) / (2.0 * h);
            assert!(
                (fd - lin.cost_grad[c]).abs() < 1e-4 * (1.0 + fd.abs()),
                "grad {c}: {fd} vs {}",
                lin.cost_grad[c]
            );
        }
    }

    #[test]
    fn empty_intersection_tracks_the_path() {
        let p = straight(10.0, vec![]);
        let s = solve_ocp(&p, None).unwrap();
        assert_eq!(s.status, SolveStatus::Feasible, "{s:?}");
        let last = s.states.last().unwrap();
        let r = p.path.position(last.s);
        assert!((last.px - r[0]).hypot(last.py - r[1]) <= 0.1);
        assert!(s.audit.passed);
    }

    #[test]
    fn optimum_as_warm_start_converges_immediately() {
        let p = straight(8.0, vec![]);
        let s = solve_ocp(&p, None).unwrap();
        let again = solve_ocp(&p, Some(&s.inputs)).unwrap();
        assert_eq!(again.status, SolveStatus::Feasible);
        assert!(again.iterations <= 2, "{}", again.iterations);
    }

    #[test]
    fn parked_target_forces_deceleration() {
        let spec = DistanceConstraintSpec::new(
            Intention::StraightOn,
            vec![[1.75, -20.0]; 41],
            vec![0.0; 41],
        )
        .unwrap();
        let p = straight(10.0, vec![spec.clone()]);
        let s = solve_ocp(&p, None).unwrap();
        assert_eq!(s.status, SolveStatus::Feasible, "{:?}", s.audit);
        assert!(s.states.last().unwrap().v < 10.0);
        for (j, x) in s.states.iter().enumerate().skip(1) {
            let d = (x.px - 1.75).hypot(x.py + 20.0);
            assert!(d >= spec.d_ref(j, x.v, &p.config) - 1e-6);
        }
    }

    #[test]
    fn objective_is_non_increasing_from_a_feasible_start() {
        let spec = DistanceConstraintSpec::new(
            Intention::TurnRight,
            vec![[6.0, -22.0]; 41],
            vec![0.5; 41],
        )
        .unwrap();
        let p = straight(6.0, vec![spec]);
        let s = solve_ocp(&p, None).unwrap();
        for w in s.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", s.objective_history);
        }
    }

    #[test]
    fn unavoidable_collision_is_infeasible() {
        let spec = DistanceConstraintSpec::new(
            Intention::StraightOn,
            vec![[1.75, -37.0]; 41],
            vec![0.0; 41],
        )
        .unwrap();
        let p = straight(12.0, vec![spec]);
        let s = solve_ocp(&p, None).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(!s.is_admissible());
    }

    #[test]
    fn wrong_warm_start_length_is_rejected() {
        let p = straight(5.0, vec![]);
        assert!(solve_ocp(&p, Some(&[EgoInput::default(); 3])).is_err());
    }
}
