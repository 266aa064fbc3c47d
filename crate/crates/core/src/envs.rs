//! Self-contained continuous-control tasks with dense and sparse reward
//! variants. Dense and sparse variants of a task share the exact same
//! dynamics; only the reward differs. All tasks run a fixed horizon with
//! no early termination.

use serde::Deserialize;
use std::f64::consts::PI;

use crate::mvn::RngState;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_limits: Vec<f64>,
    pub horizon: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut RngState) -> Vec<f64>;
    /// Advances one step. Actions are clamped to the limits; non-finite
    /// actions are rejected.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, StepOutcome)>;
    fn clone_box(&self) -> Box<dyn Environment>;
}

fn check_action(action: &[f64], spec: &EnvSpec) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    let mut out = Vec::with_capacity(action.len());
    for (&a, &lim) in action.iter().zip(&spec.action_limits) {
        if !a.is_finite() {
            return Err(Error::NonFiniteAction { value: a });
        }
        out.push(a.clamp(-lim, lim));
    }
    Ok(out)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a = PI;
    }
    a
}

// ---------------------------------------------------------------------------
// Cartpole swingup
// ---------------------------------------------------------------------------

/// Cartpole swingup parameters. Angle is measured from upright; the pole
/// starts hanging (theta ~ pi). Sparse reward: +1 per step while
/// cos(theta) > success_cos and the cart stays on the track.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half-length of the pole.
    pub pole_length: f64,
    pub gravity: f64,
    pub force_limit: f64,
    pub track_limit: f64,
    pub success_cos: f64,
    pub max_cart_speed: f64,
    pub max_pole_speed: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            force_limit: 10.0,
            track_limit: 3.0,
            success_cos: 0.8,
            max_cart_speed: 10.0,
            max_pole_speed: 15.0,
            dt: 0.02,
            horizon: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CartpoleSwingup {
    pub params: CartpoleParams,
    pub sparse: bool,
    spec: EnvSpec,
    // [x, x_dot, theta, theta_dot], theta = 0 upright
    state: [f64; 4],
    steps: usize,
}

impl CartpoleSwingup {
    pub fn new(sparse: bool, params: CartpoleParams) -> Self {
        let spec = EnvSpec {
            state_dim: 5,
            action_dim: 1,
            action_limits: vec![params.force_limit],
            horizon: params.horizon,
            dt: params.dt,
        };
        CartpoleSwingup {
            params,
            sparse,
            spec,
            state: [0.0, 0.0, PI, 0.0],
            steps: 0,
        }
    }

    pub fn set_state(&mut self, x: f64, x_dot: f64, theta: f64, theta_dot: f64) {
        self.state = [x, x_dot, wrap_angle(theta), theta_dot];
    }

    fn observe(&self) -> Vec<f64> {
        let [x, x_dot, theta, theta_dot] = self.state;
        vec![x, x_dot, theta.cos(), theta.sin(), theta_dot]
    }

    fn success(&self) -> bool {
        self.state[2].cos() > self.params.success_cos
            && self.state[0].abs() < self.params.track_limit
    }

    /// Semi-implicit Euler step of the standard cart-pole equations.
    fn integrate(&mut self, force: f64) {
        let p = &self.params;
        let [x, x_dot, theta, theta_dot] = self.state;
        let total = p.cart_mass + p.pole_mass;
        let sin = theta.sin();
        let cos = theta.cos();
        let tmp = (force + p.pole_mass * p.pole_length * theta_dot * theta_dot * sin) / total;
        let theta_acc = (p.gravity * sin - cos * tmp)
            / (p.pole_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
        let x_acc = tmp - p.pole_mass * p.pole_length * theta_acc * cos / total;

        let mut x_dot = (x_dot + p.dt * x_acc).clamp(-p.max_cart_speed, p.max_cart_speed);
        let theta_dot =
            (theta_dot + p.dt * theta_acc).clamp(-p.max_pole_speed, p.max_pole_speed);
        let mut x = x + p.dt * x_dot;
        // walls at the track ends
        if x.abs() > p.track_limit {
            x = x.clamp(-p.track_limit, p.track_limit);
            x_dot = 0.0;
        }
        let theta = wrap_angle(theta + p.dt * theta_dot);
        self.state = [x, x_dot, theta, theta_dot];
    }
}

impl Environment for CartpoleSwingup {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        // hanging down with small uniform noise around rest
        let u = |rng: &mut RngState| 0.05 * (2.0 * rng.uniform() - 1.0);
        self.state = [u(rng), u(rng), wrap_angle(PI + u(rng)), u(rng)];
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, StepOutcome)> {
        let a = check_action(action, &self.spec)?;
        self.integrate(a[0]);
        self.steps += 1;
        let reward = if self.sparse {
            if self.success() {
                1.0
            } else {
                0.0
            }
        } else {
            // shaped: pole elevation, in [-1, 1]
            self.state[2].cos()
        };
        let done = self.steps >= self.spec.horizon;
        Ok((self.observe(), StepOutcome { reward, done }))
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Double pendulum swingup
// ---------------------------------------------------------------------------

/// Two-link pendulum with generalized torques on both absolute joint
/// angles, integrated with RK4. Angles are measured from the downward
/// vertical. Sparse reward: +1 per step while the tip is above
/// `success_height` times the total length.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DoublePendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity: f64,
    pub torque_limit: f64,
    /// Success threshold as a fraction of l1 + l2.
    pub success_height: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        DoublePendulumParams {
            m1: 1.0,
            m2: 1.0,
            l1: 0.5,
            l2: 0.5,
            gravity: 9.81,
            torque_limit: 12.0,
            success_height: 0.8,
            max_speed: 4.0 * PI,
            dt: 0.02,
            horizon: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DoublePendulumSwingup {
    pub params: DoublePendulumParams,
    pub sparse: bool,
    spec: EnvSpec,
    // [theta1, theta2, w1, w2], absolute angles from downward vertical
    state: [f64; 4],
    steps: usize,
}

impl DoublePendulumSwingup {
    pub fn new(sparse: bool, params: DoublePendulumParams) -> Self {
        let spec = EnvSpec {
            state_dim: 6,
            action_dim: 2,
            action_limits: vec![params.torque_limit; 2],
            horizon: params.horizon,
            dt: params.dt,
        };
        DoublePendulumSwingup {
            params,
            sparse,
            spec,
            state: [0.0; 4],
            steps: 0,
        }
    }

    pub fn set_state(&mut self, th1: f64, th2: f64, w1: f64, w2: f64) {
        self.state = [wrap_angle(th1), wrap_angle(th2), w1, w2];
    }

    /// Tip height above the pivot, in [-(l1+l2), l1+l2].
    pub fn tip_height(&self) -> f64 {
        let p = &self.params;
        -p.l1 * self.state[0].cos() - p.l2 * self.state[1].cos()
    }

    /// Total mechanical energy, for integration checks.
    pub fn energy(&self) -> f64 {
        let p = &self.params;
        let [t1, t2, w1, w2] = self.state;
        let ke = 0.5 * (p.m1 + p.m2) * p.l1 * p.l1 * w1 * w1
            + 0.5 * p.m2 * p.l2 * p.l2 * w2 * w2
            + p.m2 * p.l1 * p.l2 * w1 * w2 * (t1 - t2).cos();
        let pe = -(p.m1 + p.m2) * p.gravity * p.l1 * t1.cos() - p.m2 * p.gravity * p.l2 * t2.cos();
        ke + pe
    }

    fn accel(&self, s: &[f64; 4], tau: &[f64; 2]) -> [f64; 4] {
        let p = &self.params;
        let [t1, t2, w1, w2] = *s;
        let d = t1 - t2;
        let m11 = (p.m1 + p.m2) * p.l1 * p.l1;
        let m12 = p.m2 * p.l1 * p.l2 * d.cos();
        let m22 = p.m2 * p.l2 * p.l2;
        let c1 = p.m2 * p.l1 * p.l2 * w2 * w2 * d.sin();
        let c2 = -p.m2 * p.l1 * p.l2 * w1 * w1 * d.sin();
        let g1 = (p.m1 + p.m2) * p.gravity * p.l1 * t1.sin();
        let g2 = p.m2 * p.gravity * p.l2 * t2.sin();
        let r1 = tau[0] - c1 - g1;
        let r2 = tau[1] - c2 - g2;
        let det = m11 * m22 - m12 * m12;
        let a1 = (m22 * r1 - m12 * r2) / det;
        let a2 = (m11 * r2 - m12 * r1) / det;
        [w1, w2, a1, a2]
    }

    fn integrate(&mut self, tau: [f64; 2]) {
        let p = &self.params;
        let dt = p.dt;
        let s0 = self.state;
        let deriv = |s: &[f64; 4]| -> [f64; 4] { self.accel(s, &tau) };
        let k1 = deriv(&s0);
        let k2 = deriv(&rk_add(&s0, &k1, dt / 2.0));
        let k3 = deriv(&rk_add(&s0, &k2, dt / 2.0));
        let k4 = deriv(&rk_add(&s0, &k3, dt));
        let mut s = s0;
        for i in 0..4 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s[0] = wrap_angle(s[0]);
        s[1] = wrap_angle(s[1]);
        s[2] = s[2].clamp(-p.max_speed, p.max_speed);
        s[3] = s[3].clamp(-p.max_speed, p.max_speed);
        self.state = s;
    }

    fn observe(&self) -> Vec<f64> {
        let [t1, t2, w1, w2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), w1, w2]
    }

    fn success(&self) -> bool {
        let p = &self.params;
        self.tip_height() > p.success_height * (p.l1 + p.l2)
    }
}

fn rk_add(s: &[f64; 4], k: &[f64; 4], h: f64) -> [f64; 4] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

impl Environment for DoublePendulumSwingup {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        let u = |rng: &mut RngState| 0.05 * (2.0 * rng.uniform() - 1.0);
        self.state = [u(rng), u(rng), u(rng), u(rng)];
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, StepOutcome)> {
        let a = check_action(action, &self.spec)?;
        self.integrate([a[0], a[1]]);
        self.steps += 1;
        let p = &self.params;
        let reward = if self.sparse {
            if self.success() {
                1.0
            } else {
                0.0
            }
        } else {
            // shaped: normalized tip height, in [-1, 1]
            self.tip_height() / (p.l1 + p.l2)
        };
        let done = self.steps >= self.spec.horizon;
        Ok((self.observe(), StepOutcome { reward, done }))
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Planar runner
// ---------------------------------------------------------------------------

/// Simplified planar locomotion analogue: a body with two torque-driven
/// paddle joints. A paddle generates forward thrust proportional to its
/// angular speed and sin^2 of its angle, with the recovery stroke
/// (negative angular velocity) producing a fraction of the thrust, so
/// cyclic paddling yields net forward motion. Sparse reward: +1 per step
/// while the body is beyond `distance_threshold`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PlanarRunnerParams {
    pub body_mass: f64,
    pub joint_inertia: f64,
    pub joint_damping: f64,
    pub torque_limit: f64,
    pub thrust_gain: f64,
    /// Thrust fraction kept during the recovery stroke.
    pub recovery_fraction: f64,
    pub drag: f64,
    pub distance_threshold: f64,
    pub max_joint_speed: f64,
    pub max_body_speed: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for PlanarRunnerParams {
    fn default() -> Self {
        PlanarRunnerParams {
            body_mass: 1.0,
            joint_inertia: 0.1,
            joint_damping: 0.1,
            torque_limit: 1.0,
            thrust_gain: 0.6,
            recovery_fraction: 0.3,
            drag: 1.0,
            distance_threshold: 3.0,
            max_joint_speed: 4.0 * PI,
            max_body_speed: 5.0,
            dt: 0.02,
            horizon: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanarRunner {
    pub params: PlanarRunnerParams,
    pub sparse: bool,
    spec: EnvSpec,
    // [x, x_dot, th1, w1, th2, w2]
    state: [f64; 6],
    steps: usize,
}

impl PlanarRunner {
    pub fn new(sparse: bool, params: PlanarRunnerParams) -> Self {
        let spec = EnvSpec {
            state_dim: 8,
            action_dim: 2,
            action_limits: vec![params.torque_limit; 2],
            horizon: params.horizon,
            dt: params.dt,
        };
        PlanarRunner {
            params,
            sparse,
            spec,
            state: [0.0; 6],
            steps: 0,
        }
    }

    pub fn set_state(&mut self, x: f64, x_dot: f64, th1: f64, w1: f64, th2: f64, w2: f64) {
        self.state = [x, x_dot, wrap_angle(th1), w1, wrap_angle(th2), w2];
    }

    pub fn body_x(&self) -> f64 {
        self.state[0]
    }

    fn integrate(&mut self, tau: [f64; 2]) {
        let p = &self.params;
        let [x, x_dot, th1, w1, th2, w2] = self.state;
        let mut thrust = 0.0;
        let joints = [(th1, w1, tau[0]), (th2, w2, tau[1])];
        let mut next = [0.0f64; 4];
        for (i, &(th, w, t)) in joints.iter().enumerate() {
            let acc = (t - p.joint_damping * w) / p.joint_inertia;
            let w_new = (w + p.dt * acc).clamp(-p.max_joint_speed, p.max_joint_speed);
            let th_new = wrap_angle(th + p.dt * w_new);
            let stroke = p.thrust_gain * w_new * th_new.sin() * th_new.sin();
            thrust += if w_new > 0.0 {
                stroke
            } else {
                p.recovery_fraction * stroke
            };
            next[2 * i] = th_new;
            next[2 * i + 1] = w_new;
        }
        let x_acc = (thrust - p.drag * x_dot) / p.body_mass;
        let x_dot = (x_dot + p.dt * x_acc).clamp(-p.max_body_speed, p.max_body_speed);
        let x = x + p.dt * x_dot;
        self.state = [x, x_dot, next[0], next[1], next[2], next[3]];
    }

    fn observe(&self) -> Vec<f64> {
        let [x, x_dot, th1, w1, th2, w2] = self.state;
        vec![x, x_dot, th1.cos(), th1.sin(), w1, th2.cos(), th2.sin(), w2]
    }
}

impl Environment for PlanarRunner {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        let u = |rng: &mut RngState| 0.05 * (2.0 * rng.uniform() - 1.0);
        self.state = [0.0, 0.0, u(rng), u(rng), u(rng), u(rng)];
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, StepOutcome)> {
        let a = check_action(action, &self.spec)?;
        self.integrate([a[0], a[1]]);
        self.steps += 1;
        let p = &self.params;
        let reward = if self.sparse {
            if self.state[0] > p.distance_threshold {
                1.0
            } else {
                0.0
            }
        } else {
            // shaped: forward velocity, bounded by max_body_speed
            self.state[1]
        };
        let done = self.steps >= self.spec.horizon;
        Ok((self.observe(), StepOutcome { reward, done }))
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

pub const ENV_NAMES: &[&str] = &[
    "cartpole-swingup",
    "sparse-cartpole-swingup",
    "double-pendulum-swingup",
    "sparse-double-pendulum-swingup",
    "planar-runner",
    "sparse-planar-runner",
];

/// Builds an environment by name, with optional TOML parameter overrides
/// (masses, thresholds, horizon, ...).
pub fn make_env(name: &str, overrides: Option<&str>) -> Result<Box<dyn Environment>> {
    let parse = |text: Option<&str>| -> Result<toml::Table> {
        match text {
            None => Ok(toml::Table::new()),
            Some(t) => t
                .parse::<toml::Table>()
                .map_err(|e| Error::ConfigInvalid(format!("bad env overrides: {e}"))),
        }
    };
    let sparse = name.starts_with("sparse-");
    let base = name.strip_prefix("sparse-").unwrap_or(name);
    let table = parse(overrides)?;
    let from_table = |table: toml::Table| -> Result<toml::Value> {
        Ok(toml::Value::Table(table))
    };
    match base {
        "cartpole-swingup" => {
            let params: CartpoleParams = from_table(table)?
                .try_into()
                .map_err(|e| Error::ConfigInvalid(format!("cartpole params: {e}")))?;
            Ok(Box::new(CartpoleSwingup::new(sparse, params)))
        }
        "double-pendulum-swingup" => {
            let params: DoublePendulumParams = from_table(table)?
                .try_into()
                .map_err(|e| Error::ConfigInvalid(format!("double pendulum params: {e}")))?;
            Ok(Box::new(DoublePendulumSwingup::new(sparse, params)))
        }
        "planar-runner" => {
            let params: PlanarRunnerParams = from_table(table)?
                .try_into()
                .map_err(|e| Error::ConfigInvalid(format!("planar runner params: {e}")))?;
            Ok(Box::new(PlanarRunner::new(sparse, params)))
        }
        _ => Err(Error::EnvNotFound(name.to_string())),
    }
}
