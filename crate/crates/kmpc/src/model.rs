//! Discrete-time controlled systems and closed-loop simulation.
//!
//! A [`SystemModel`] is a deterministic transition map `x⁺ = f(x, u)` together
//! with its dimensions and axis-aligned state/input constraint boxes. The
//! inverted pendulum used by the shipped case study lives here as well.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reach::IntervalHull;
use crate::rng::uniform_in_box;

type StepFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync;

/// Deterministic discrete-time plant with constraint boxes.
#[derive(Clone)]
pub struct SystemModel {
    n_x: usize,
    n_u: usize,
    step: Arc<StepFn>,
    jacobians: Option<Arc<JacFn>>,
    x_con: IntervalHull,
    u_con: IntervalHull,
}

impl SystemModel {
    pub fn new(
        n_x: usize,
        n_u: usize,
        x_con: IntervalHull,
        u_con: IntervalHull,
        step: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::invalid("n_x", "state dimension must be positive"));
        }
        if n_u == 0 {
            return Err(Error::invalid("n_u", "input dimension must be positive"));
        }
        if x_con.dim() != n_x {
            return Err(Error::invalid("x_con", "box dimension must match n_x"));
        }
        if u_con.dim() != n_u {
            return Err(Error::invalid("u_con", "box dimension must match n_u"));
        }
        Ok(SystemModel {
            n_x,
            n_u,
            step: Arc::new(step),
            jacobians: None,
            x_con,
            u_con,
        })
    }

    /// Attach closed-form Jacobians of the step map. Solvers fall back to
    /// central finite differences when absent.
    pub fn with_jacobians(
        mut self,
        jac: impl Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>)
            + Send
            + Sync
            + 'static,
    ) -> Self {
        self.jacobians = Some(Arc::new(jac));
        self
    }

    /// Replace the constraint boxes (dimensions must match).
    pub fn with_constraints(mut self, x_con: IntervalHull, u_con: IntervalHull) -> Result<Self> {
        if x_con.dim() != self.n_x || u_con.dim() != self.n_u {
            return Err(Error::invalid("constraints", "box dimensions must match model"));
        }
        self.x_con = x_con;
        self.u_con = u_con;
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn x_con(&self) -> &IntervalHull {
        &self.x_con
    }

    pub fn u_con(&self) -> &IntervalHull {
        &self.u_con
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.n_x);
        debug_assert_eq!(u.len(), self.n_u);
        (self.step)(x, u)
    }

    /// Jacobians (A, B) of the step map at `(x, u)`: closed form when the
    /// model carries one, otherwise central finite differences.
    pub fn step_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(jac) = &self.jacobians {
            jac(x, u)
        } else {
            self.fd_jacobians(x, u, 1e-6)
        }
    }

    /// Central finite-difference Jacobians with explicit perturbation size.
    pub fn fd_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut a = DMatrix::zeros(self.n_x, self.n_x);
        let mut b = DMatrix::zeros(self.n_x, self.n_u);
        let mut xp = x.clone();
        let mut xm = x.clone();
        for j in 0..self.n_x {
            let hj = h * x[j].abs().max(1.0);
            xp[j] = x[j] + hj;
            xm[j] = x[j] - hj;
            let col = (self.step(&xp, u) - self.step(&xm, u)) / (2.0 * hj);
            a.set_column(j, &col);
            xp[j] = x[j];
            xm[j] = x[j];
        }
        let mut up = u.clone();
        let mut um = u.clone();
        for j in 0..self.n_u {
            let hj = h * u[j].abs().max(1.0);
            up[j] = u[j] + hj;
            um[j] = u[j] - hj;
            let col = (self.step(x, &up) - self.step(x, &um)) / (2.0 * hj);
            b.set_column(j, &col);
            up[j] = u[j];
            um[j] = u[j];
        }
        (a, b)
    }
}

/// Tag identifying what computes a controller's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    ImplicitMpc,
    KernelInterpolant,
    LinearGain,
}

/// State-feedback law. Evaluation is deterministic; implementations that
/// carry warm-start state are single-consumer and must be `reset` before
/// reuse on an unrelated trajectory.
pub trait Controller: Send {
    fn kind(&self) -> ControllerKind;

    fn evaluate(&mut self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Clear any cross-call state (warm starts). No-op by default.
    fn reset(&mut self) {}
}

/// Builds independent controller instances for concurrent rollouts.
pub trait ControllerFactory: Sync {
    fn make(&self) -> Box<dyn Controller>;
}

impl<F, C> ControllerFactory for F
where
    F: Fn() -> C + Sync,
    C: Controller + 'static,
{
    fn make(&self) -> Box<dyn Controller> {
        Box::new(self())
    }
}

/// Static linear feedback `u = Kx`.
#[derive(Debug, Clone)]
pub struct LinearGainController {
    gain: DMatrix<f64>,
}

impl LinearGainController {
    pub fn new(gain: DMatrix<f64>) -> Self {
        LinearGainController { gain }
    }
}

impl Controller for LinearGainController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::LinearGain
    }

    fn evaluate(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.gain * x)
    }
}

/// Per-step input disturbance source for rollouts.
pub enum Disturbance {
    /// No disturbance; the declared box is `{0}`.
    None,
    /// Replays a recorded sequence (used to re-simulate stored trajectories).
    Replay(Vec<DVector<f64>>),
    /// Iid uniform draws from a box, one per step.
    Uniform { bounds: IntervalHull, rng: ChaCha8Rng },
}

impl Disturbance {
    pub fn uniform(bounds: IntervalHull, rng: ChaCha8Rng) -> Self {
        Disturbance::Uniform { bounds, rng }
    }

    fn next(&mut self, step: usize, n_u: usize) -> DVector<f64> {
        match self {
            Disturbance::None => DVector::zeros(n_u),
            Disturbance::Replay(seq) => seq
                .get(step)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(n_u)),
            Disturbance::Uniform { bounds, rng } => uniform_in_box(rng, bounds),
        }
    }
}

/// Closed-loop trace: `n + 1` states, `n` inputs, `n` disturbances.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least x0")
    }
}

/// Simulate `n_steps` of the closed loop from `x0`. The controller is reset
/// first so results do not depend on what it was used for before; the applied
/// input at step `j` is `inputs[j] + disturbances[j]`.
pub fn rollout(
    model: &SystemModel,
    ctrl: &mut dyn Controller,
    x0: &DVector<f64>,
    n_steps: usize,
    dist: &mut Disturbance,
) -> Result<Trajectory> {
    if x0.len() != model.n_x() {
        return Err(Error::invalid("x0", "dimension mismatch"));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("x0", "initial state must be finite"));
    }
    ctrl.reset();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    let mut disturbances = Vec::with_capacity(n_steps);
    states.push(x0.clone());
    for j in 0..n_steps {
        let u = ctrl.evaluate(&states[j]).map_err(|e| e.at_step(j))?;
        let r = dist.next(j, model.n_u());
        let applied = &u + &r;
        states.push(model.step(&states[j], &applied));
        inputs.push(u);
        disturbances.push(r);
    }
    Ok(Trajectory {
        states,
        inputs,
        disturbances,
    })
}

/// Physical parameters of the damped pendulum (upright position at the
/// origin, explicit-Euler discretization with interval `dt`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PendulumParams {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub damping: f64,
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            gravity: 9.81,
            length: 1.0,
            mass: 1.0,
            damping: 0.1,
            dt: 0.1,
        }
    }
}

/// Inverted pendulum: state `(θ, ω)` with θ = 0 upright,
///
/// ```text
/// θ⁺ = θ + dt·ω
/// ω⁺ = ω + dt·((g/l)·sin θ − b·ω + u/(m·l²))
/// ```
///
/// Default constraint boxes are `X_con = [−2π, 2π] × [−10, 10]` and
/// `U_con = [−5, 5]`.
pub fn pendulum_model(params: PendulumParams) -> Result<SystemModel> {
    for (name, v) in [
        ("gravity", params.gravity),
        ("length", params.length),
        ("mass", params.mass),
        ("damping", params.damping),
        ("dt", params.dt),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    let PendulumParams {
        gravity: g,
        length: l,
        mass: m,
        damping: b,
        dt,
    } = params;
    let inertia = m * l * l;
    let x_con = IntervalHull::new(
        vec![-2.0 * std::f64::consts::PI, -10.0],
        vec![2.0 * std::f64::consts::PI, 10.0],
    )?;
    let u_con = IntervalHull::new(vec![-5.0], vec![5.0])?;
    let step = move |x: &DVector<f64>, u: &DVector<f64>| {
        let (theta, omega) = (x[0], x[1]);
        DVector::from_vec(vec![
            theta + dt * omega,
            omega + dt * ((g / l) * theta.sin() - b * omega + u[0] / inertia),
        ])
    };
    let jac = move |x: &DVector<f64>, _u: &DVector<f64>| {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, dt * (g / l) * x[0].cos(), 1.0 - dt * b]);
        let b_mat = DMatrix::from_row_slice(2, 1, &[0.0, dt / inertia]);
        (a, b_mat)
    };
    Ok(SystemModel::new(2, 1, x_con, u_con, step)?.with_jacobians(jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn pendulum() -> SystemModel {
        pendulum_model(PendulumParams::default()).unwrap()
    }

    #[test]
    fn pendulum_rejects_nonpositive_params() {
        let bad = PendulumParams {
            mass: 0.0,
            ..PendulumParams::default()
        };
        assert!(pendulum_model(bad).is_err());
        let bad = PendulumParams {
            dt: -0.1,
            ..PendulumParams::default()
        };
        assert!(pendulum_model(bad).is_err());
    }

    #[test]
    fn upright_origin_is_fixed_point() {
        let model = pendulum();
        let x = model.step(&DVector::zeros(2), &DVector::zeros(1));
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn hanging_position_is_equilibrium() {
        let model = pendulum();
        let x0 = DVector::from_vec(vec![-PI, 0.0]);
        let x1 = model.step(&x0, &DVector::zeros(1));
        assert_abs_diff_eq!(x1[0], -PI, epsilon = 1e-12);
        assert_abs_diff_eq!(x1[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let model = pendulum();
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let u = DVector::from_vec(vec![0.4]);
        let (a, b) = model.step_jacobians(&x, &u);
        let (a_fd, b_fd) = model.fd_jacobians(&x, &u, 1e-6);
        assert!((&a - &a_fd).amax() <= 1e-5 * a.amax());
        assert!((&b - &b_fd).amax() <= 1e-5 * b.amax());
    }

    #[test]
    fn empty_rollout_holds_only_x0() {
        let model = pendulum();
        let mut ctrl = LinearGainController::new(DMatrix::zeros(1, 2));
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let traj = rollout(&model, &mut ctrl, &x0, 0, &mut Disturbance::None).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert!(traj.inputs.is_empty());
        assert_eq!(traj.states[0], x0);
    }

    #[test]
    fn replayed_disturbances_reproduce_states_exactly() {
        let model = pendulum();
        let x0 = DVector::from_vec(vec![-1.0, 0.5]);
        let gain = DMatrix::from_row_slice(1, 2, &[-3.0, -1.0]);
        let bounds = IntervalHull::new(vec![-0.5], vec![0.5]).unwrap();
        let rng = crate::rng::stream_rng(11, crate::rng::Phase::InitialStates, 0);
        let mut dist = Disturbance::uniform(bounds, rng);
        let mut ctrl = LinearGainController::new(gain.clone());
        let traj = rollout(&model, &mut ctrl, &x0, 25, &mut dist).unwrap();

        let mut replay = Disturbance::Replay(traj.disturbances.clone());
        let mut ctrl2 = LinearGainController::new(gain);
        let again = rollout(&model, &mut ctrl2, &x0, 25, &mut replay).unwrap();
        for (a, b) in traj.states.iter().zip(again.states.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rollout_reports_failing_step() {
        struct FailAt(usize, usize);
        impl Controller for FailAt {
            fn kind(&self) -> ControllerKind {
                ControllerKind::LinearGain
            }
            fn evaluate(&mut self, _x: &DVector<f64>) -> Result<DVector<f64>> {
                if self.0 == self.1 {
                    Err(Error::Solver("boom".into()))
                } else {
                    self.0 += 1;
                    Ok(DVector::zeros(1))
                }
            }
            fn reset(&mut self) {
                self.0 = 0;
            }
        }
        let model = pendulum();
        let err = rollout(
            &model,
            &mut FailAt(0, 3),
            &DVector::zeros(2),
            10,
            &mut Disturbance::None,
        )
        .unwrap_err();
        match err {
            Error::ControllerFailure { step, .. } => assert_eq!(step, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn step_lipschitz_estimate_is_bounded() {
        let model = pendulum();
        let mut rng = crate::rng::stream_rng(3, crate::rng::Phase::InitialStates, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let x1 = uniform_in_box(&mut rng, model.x_con());
            let x2 = uniform_in_box(&mut rng, model.x_con());
            let u = uniform_in_box(&mut rng, model.u_con());
            let num = (model.step(&x1, &u) - model.step(&x2, &u)).norm();
            let den = (&x1 - &x2).norm();
            if den > 1e-9 {
                worst = worst.max(num / den);
            }
        }
        // Euler map of a smooth field on a compact box: modest constant.
        assert!(worst < 3.0, "Lipschitz estimate {worst}");
    }
}
