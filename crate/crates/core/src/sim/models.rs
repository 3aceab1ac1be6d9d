//! The two case-study plants: a single-zone building and a bilinear DC motor.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use crate::problem::{BilinearDynamics, BilinearMpcProblem, Polyhedron, StageCost};
use crate::scalar::{lit, Real};

fn cast<T: Real>(m: DMatrix<f64>) -> DMatrix<T> {
    m.map(lit)
}

fn cast_v<T: Real>(v: DVector<f64>) -> DVector<T> {
    v.map(lit)
}

/// Sampling period of the building model in minutes.
pub const BUILDING_STEP_MINUTES: f64 = 15.0;
pub const BUILDING_HORIZON: usize = 10;
pub const COMFORT_BAND: (f64, f64) = (22.0, 24.0);

/// Room model with states (indoor air, indoor wall, external wall, supply air)
/// temperatures, valve position input and (solar kW/m², outdoor °C) disturbances.
pub fn building_dynamics<T: Real>() -> BilinearDynamics<T> {
    BilinearDynamics {
        a: cast(dmatrix![
            0.8411, 0.0371, 0.0567, 0.045;
            0.1293, 0.8535, 0.0055, 0.003;
            0.0989, 0.0032, 0.7841, 0.002;
            0.042,  0.0,    0.0,    0.938
        ]),
        b: cast(dmatrix![1.611; 0.021; 0.018; 4.139]),
        c: vec![cast(dmatrix![
            0.0,   0.0, 0.0, 0.0;
            0.0,   0.0, 0.0, 0.0;
            0.0,   0.0, 0.0, 0.0;
            0.303, 0.0, 0.0, -0.282
        ])],
        bw: cast(
            dmatrix![
                22.2170,  1.7912;
                1.5376,   0.6944;
                103.1813, 0.1032;
                0.0,      0.0
            ] * 1e-3,
        ),
    }
}

/// Energy-minimizing building problem: `ℓ = u²` with a `1e−6` state weight,
/// `T_in ∈ [22, 24]`, `u ∈ [0, 1]`, horizon 10. The forecast is zero.
pub fn building_model<T: Real>() -> BilinearMpcProblem<T> {
    let inf = f64::INFINITY;
    let q = DMatrix::<f64>::identity(4, 4) * 1e-6;
    BilinearMpcProblem {
        dynamics: building_dynamics(),
        state_set: Polyhedron::from_bounds(
            &[COMFORT_BAND.0, -inf, -inf, -inf],
            &[COMFORT_BAND.1, inf, inf, inf],
        ),
        input_set: Polyhedron::from_bounds(&[0.0], &[1.0]),
        cost: StageCost {
            state_weight: cast(q.clone()),
            state_linear: DVector::zeros(4),
            input_weight: cast(dmatrix![2.0]),
            input_linear: DVector::zeros(1),
            terminal_weight: cast(q),
            terminal_linear: DVector::zeros(4),
            constant: T::zero(),
        },
        horizon: BUILDING_HORIZON,
        disturbance: DMatrix::zeros(2, BUILDING_HORIZON),
    }
}

/// Physical constants of the DC motor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorParams {
    pub ra: f64,
    pub la: f64,
    pub km: f64,
    pub b: f64,
    pub j: f64,
    pub vs: f64,
    pub te: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            ra: 10.0,
            la: 0.06,
            km: 0.2297,
            b: 0.0024,
            j: 0.008949,
            vs: 60.0,
            te: 1.46,
        }
    }
}

pub const MOTOR_DT: f64 = 0.01;
pub const MOTOR_HORIZON: usize = 3;
pub const SPEED_BAND: (f64, f64) = (16.0, 20.0);
pub const MOTOR_INPUT_BAND: (f64, f64) = (0.0, 4.0);
/// Weight on the armature current, present only to make `Q` definite.
pub const MOTOR_CURRENT_WEIGHT: f64 = 1e-6;
pub const MOTOR_INPUT_WEIGHT: f64 = 1e-4;

/// Euler discretization of the motor ODE; the constant voltage and load torque
/// enter through `B_w` with `w ≡ 1`.
pub fn motor_dynamics<T: Real>(p: &MotorParams, dt: f64) -> BilinearDynamics<T> {
    BilinearDynamics {
        a: cast(dmatrix![1.0 - dt * p.ra / p.la, 0.0; 0.0, 1.0 - dt * p.b / p.j]),
        b: DMatrix::zeros(2, 1),
        c: vec![cast(dmatrix![0.0, -dt * p.km / p.la; dt * p.km / p.j, 0.0])],
        bw: cast(dmatrix![dt * p.vs / p.la; -dt * p.te / p.j]),
    }
}

/// Linear cost terms of `(x₂ − v_ref)²` in the `½xᵀQx + qᵀx` convention.
pub fn motor_tracking_linear<T: Real>(v_ref: f64) -> DVector<T> {
    cast_v(dvector![0.0, -2.0 * v_ref])
}

/// Speed tracking problem with horizon `N = 3`.
pub fn motor_model<T: Real>(dt: f64, v_ref: f64) -> BilinearMpcProblem<T> {
    motor_model_with(&MotorParams::default(), dt, v_ref, MOTOR_HORIZON)
}

pub fn motor_model_with<T: Real>(p: &MotorParams, dt: f64, v_ref: f64, horizon: usize) -> BilinearMpcProblem<T> {
    let inf = f64::INFINITY;
    let q = dmatrix![MOTOR_CURRENT_WEIGHT, 0.0; 0.0, 2.0];
    BilinearMpcProblem {
        dynamics: motor_dynamics(p, dt),
        state_set: Polyhedron::from_bounds(&[-inf, SPEED_BAND.0], &[inf, SPEED_BAND.1]),
        input_set: Polyhedron::from_bounds(&[MOTOR_INPUT_BAND.0], &[MOTOR_INPUT_BAND.1]),
        cost: StageCost {
            state_weight: cast(q.clone()),
            state_linear: motor_tracking_linear(v_ref),
            input_weight: cast(dmatrix![MOTOR_INPUT_WEIGHT]),
            input_linear: DVector::zeros(1),
            terminal_weight: cast(q),
            terminal_linear: motor_tracking_linear(v_ref),
            constant: lit(v_ref * v_ref),
        },
        horizon,
        disturbance: DMatrix::from_element(1, horizon, T::one()),
    }
}

/// Steady state `(current, speed)` and input holding speed `v` with the
/// continuous-time model: the two equilibrium equations reduce to the quadratic
/// `K_m V_s u − R_a (B v + T_e) − K_m² v u² = 0`. Returns the smaller root.
pub fn motor_equilibrium(p: &MotorParams, v: f64) -> Option<(f64, f64)> {
    let a = -p.km * p.km * v;
    let b = p.km * p.vs;
    let c = -p.ra * (p.b * v + p.te);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let r1 = (-b + disc.sqrt()) / (2.0 * a);
    let r2 = (-b - disc.sqrt()) / (2.0 * a);
    let u = r1.min(r2);
    if u <= 0.0 {
        return None;
    }
    let current = (p.b * v + p.te) / (p.km * u);
    Some((u, current))
}
