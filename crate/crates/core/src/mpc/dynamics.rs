//! Kinematic single-track ego model with a double-integrator path parameter.
//!
//! State `[p_x, p_y, v, ψ, δ, v_s, s]`, input `[u_a, u_δ, u_s]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NX: usize = 7;
pub const NU: usize = 3;

pub type StateVec = [f64; NX];
pub type InputVec = [f64; NU];
pub type StateJac = [[f64; NX]; NX];
pub type InputJac = [[f64; NU]; NX];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub psi: f64,
    pub delta: f64,
    pub vs: f64,
    pub s: f64,
}

impl EgoState {
    pub fn to_array(&self) -> StateVec {
        [
            self.px, self.py, self.v, self.psi, self.delta, self.vs, self.s,
        ]
    }

    pub fn from_array(x: StateVec) -> Self {
        Self {
            px: x[0],
            py: x[1],
            v: x[2],
            psi: x[3],
            delta: x[4],
            vs: x[5],
            s: x[6],
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoInput {
    /// Acceleration, m/s².
    pub ua: f64,
    /// Steering rate, rad/s.
    pub udelta: f64,
    /// Path-parameter acceleration.
    pub us: f64,
}

impl EgoInput {
    pub fn to_array(&self) -> InputVec {
        [self.ua, self.udelta, self.us]
    }

    pub fn from_array(u: InputVec) -> Self {
        Self {
            ua: u[0],
            udelta: u[1],
            us: u[2],
        }
    }
}

fn check_steering(delta: f64) -> Result<()> {
    if !(delta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "steering angle {delta} rad is outside (-π/2, π/2)"
        )));
    }
    Ok(())
}

/// Continuous-time state derivative.
pub fn ego_continuous_dynamics(x: &EgoState, u: &EgoInput, wheelbase: f64) -> Result<StateVec> {
    check_steering(x.delta)?;
    Ok(deriv(&x.to_array(), &u.to_array(), wheelbase))
}

#[inline]
pub(crate) fn deriv(x: &StateVec, u: &InputVec, l: f64) -> StateVec {
    let (s, c) = x[3].sin_cos();
    [
        x[2] * c,
        x[2] * s,
        u[0],
        x[2] / l * x[4].tan(),
        u[1],
        u[2],
        x[5],
    ]
}

/// One classical Runge–Kutta step of length `ts`.
pub fn discretize(x: &EgoState, u: &EgoInput, ts: f64, wheelbase: f64) -> Result<EgoState> {
    check_steering(x.delta)?;
    let u = u.to_array();
    // δ evolves linearly, so checking both ends covers every stage.
    check_steering(x.delta + ts * u[1])?;
    Ok(EgoState::from_array(rk4(&x.to_array(), &u, ts, wheelbase)))
}

#[inline]
pub(crate) fn rk4(x: &StateVec, u: &InputVec, h: f64, l: f64) -> StateVec {
    let k1 = deriv(x, u, l);
    let k2 = deriv(&axpy(x, 0.5 * h, &k1), u, l);
    let k3 = deriv(&axpy(x, 0.5 * h, &k2), u, l);
    let k4 = deriv(&axpy(x, h, &k3), u, l);
    std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

#[inline]
fn axpy(x: &StateVec, a: f64, y: &StateVec) -> StateVec {
    std::array::from_fn(|i| x[i] + a * y[i])
}

/// ∂f/∂x of the continuous dynamics. ∂f/∂u is a constant selection.
#[inline]
fn deriv_jac(x: &StateVec, l: f64) -> StateJac {
    let (s, c) = x[3].sin_cos();
    let t = x[4].tan();
    let mut a = [[0.0; NX]; NX];
    a[0][2] = c;
    a[0][3] = -x[2] * s;
    a[1][2] = s;
    a[1][3] = x[2] * c;
    a[3][2] = t / l;
    a[3][4] = x[2] / (l * x[4].cos().powi(2));
    a[6][5] = 1.0;
    a
}

fn matmul_xx(a: &StateJac, b: &StateJac) -> StateJac {
    let mut out = [[0.0; NX]; NX];
    for i in 0..NX {
        for k in 0..NX {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..NX {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
    }
    out
}

fn matmul_xu(a: &StateJac, b: &InputJac) -> InputJac {
    let mut out = [[0.0; NU]; NX];
    for i in 0..NX {
        for k in 0..NX {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..NU {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
    }
    out
}

/// RK4 step together with its exact Jacobians `(∂x⁺/∂x, ∂x⁺/∂u)`.
pub(crate) fn rk4_with_jacobians(
    x: &StateVec,
    u: &InputVec,
    h: f64,
    l: f64,
) -> (StateVec, StateJac, InputJac) {
    let mut fu = [[0.0; NU]; NX];
    fu[2][0] = 1.0;
    fu[4][1] = 1.0;
    fu[5][2] = 1.0;
    let eye: StateJac =
        std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 }));

    let k1 = deriv(x, u, l);
    let x2 = axpy(x, 0.5 * h, &k1);
    let k2 = deriv(&x2, u, l);
    let x3 = axpy(x, 0.5 * h, &k2);
    let k3 = deriv(&x3, u, l);
    let x4 = axpy(x, h, &k3);
    let k4 = deriv(&x4, u, l);

    // Stage derivatives: dk/dx and dk/du.
    let dk1x = deriv_jac(x, l);
    let dk1u = fu;

    let a2 = deriv_jac(&x2, l);
    let dk2x = matmul_xx(&a2, &add_scaled_xx(&eye, 0.5 * h, &dk1x));
    let dk2u = add_xu(&matmul_xu(&a2, &scale_xu(0.5 * h, &dk1u)), &fu);

    let a3 = deriv_jac(&x3, l);
    let dk3x = matmul_xx(&a3, &add_scaled_xx(&eye, 0.5 * h, &dk2x));
    let dk3u = add_xu(&matmul_xu(&a3, &scale_xu(0.5 * h, &dk2u)), &fu);

    let a4 = deriv_jac(&x4, l);
    let dk4x = matmul_xx(&a4, &add_scaled_xx(&eye, h, &dk3x));
    let dk4u = add_xu(&matmul_xu(&a4, &scale_xu(h, &dk3u)), &fu);

    let next =
        std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    let ax = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            eye[i][j] + h / 6.0 * (dk1x[i][j] + 2.0 * dk2x[i][j] + 2.0 * dk3x[i][j] + dk4x[i][j])
        })
    });
    let bu = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            h / 6.0 * (dk1u[i][j] + 2.0 * dk2u[i][j] + 2.0 * dk3u[i][j] + dk4u[i][j])
        })
    });
    (next, ax, bu)
}

fn add_scaled_xx(a: &StateJac, s: f64, b: &StateJac) -> StateJac {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] + s * b[i][j]))
}

fn scale_xu(s: f64, b: &InputJac) -> InputJac {
    std::array::from_fn(|i| std::array::from_fn(|j| s * b[i][j]))
}

fn add_xu(a: &InputJac, b: &InputJac) -> InputJac {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] + b[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: f64, psi: f64, delta: f64) -> EgoState {
        EgoState {
            px: 0.0,
            py: 0.0,
            v,
            psi,
            delta,
            vs: 0.0,
            s: 0.0,
        }
    }

    #[test]
    fn standstill_and_straight_motion() {
        let d = ego_continuous_dynamics(&state(0.0, 0.4, 0.2), &EgoInput::default(), 2.7).unwrap();
        assert_eq!([d[0], d[1], d[3]], [0.0, 0.0, 0.0]);
        let d = ego_continuous_dynamics(&state(10.0, 0.0, 0.0), &EgoInput::default(), 2.7).unwrap();
        assert_eq!((d[0], d[1], d[3]), (10.0, 0.0, 0.0));
    }

    #[test]
    fn steering_singularity_is_a_domain_error() {
        let r = ego_continuous_dynamics(
            &state(1.0, 0.0, std::f64::consts::FRAC_PI_2),
            &EgoInput::default(),
            2.7,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
        let r = discretize(
            &state(1.0, 0.0, 1.5),
            &EgoInput {
                udelta: 10.0,
                ..EgoInput::default()
            },
            0.04,
            2.7,
        );
        assert!(r.is_err());
    }

    #[test]
    fn fixed_point_and_exact_straight_step() {
        let x = state(0.0, 0.3, 0.0);
        assert_eq!(discretize(&x, &EgoInput::default(), 0.04, 2.7).unwrap(), x);
        let x = state(10.0, 0.0, 0.0);
        let n = discretize(&x, &EgoInput::default(), 0.04, 2.7).unwrap();
        assert!((n.px - 0.4).abs() < 1e-12 && n.py.abs() < 1e-12);
    }

    #[test]
    fn constant_steering_closes_the_circle() {
        let (l, v, delta) = (2.7, 5.0, 0.3f64);
        let period = 2.0 * std::f64::consts::PI * l / (v * delta.tan());
        let steps = 1000;
        let ts = period / steps as f64;
        let mut x = state(v, 0.0, delta);
        for _ in 0..steps {
            x = discretize(&x, &EgoInput::default(), ts, l).unwrap();
        }
        assert!(x.px.hypot(x.py) < 1e-6, "{x:?}");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let x = [1.0, -2.0, 7.0, 0.4, 0.2, 5.0, 3.0];
        let u = [0.5, -0.1, 0.3];
        let (_, a, b) = rk4_with_jacobians(&x, &u, 0.04, 2.7);
        let h = 1e-6;
        for j in 0..NX {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (rk4(&xp, &u, 0.04, 2.7), rk4(&xm, &u, 0.04, 2.7));
            for i in 0..NX {
                assert!(
                    ((fp[i] - fm[i]) / (2.0 * h) - a[i][j]).abs() < 1e-7,
                    "A[{i}][{j}]"
                );
            }
        }
        for j in 0..NU {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (rk4(&x, &up, 0.04, 2.7), rk4(&x, &um, 0.04, 2.7));
            for i in 0..NX {
                assert!(
                    ((fp[i] - fm[i]) / (2.0 * h) - b[i][j]).abs() < 1e-7,
                    "B[{i}][{j}]"
                );
            }
        }
    }
}
