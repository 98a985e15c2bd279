//! Fixed-step simulation of evaluated state-space models and planar pose
//! integration.
//!
//! Classical fourth-order Runge-Kutta throughout: the model states integrate
//! `dx/dt = A x + B u(t)` under a zero-order-hold command input, and the
//! planar pose integrates unicycle kinematics from the simulated forward and
//! yaw velocities with per-interval linear interpolation.

use std::fmt;

use nalgebra::DVector;

use crate::models::command_to_voltage;
use crate::statespace::NumericStateSpace;

/// RK4 is refused when `dt * max|eig(A)|` exceeds this margin.
pub const STABILITY_MARGIN: f64 = 2.5;

/// State norm beyond which the integration is declared unstable.
pub const STATE_NORM_LIMIT: f64 = 1e9;

/// A timestamped velocity command pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandSample {
    pub t: f64,
    /// Translational command [m/s].
    pub v_t: f64,
    /// Rotational command [rad/s].
    pub v_r: f64,
}

/// Command trace: strictly increasing timestamps starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandTrace {
    samples: Vec<CommandSample>,
}

/// Invalid command trace.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceError {
    Empty,
    FirstSampleNotZero { t0: f64 },
    NonMonotoneTime { index: usize },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::Empty => write!(f, "command trace has no samples"),
            TraceError::FirstSampleNotZero { t0 } => {
                write!(f, "command trace must start at t = 0, got {t0}")
            }
            TraceError::NonMonotoneTime { index } => {
                write!(f, "command trace timestamps must increase (sample {index})")
            }
        }
    }
}

impl std::error::Error for TraceError {}

impl CommandTrace {
    pub fn new(samples: Vec<CommandSample>) -> Result<Self, TraceError> {
        let first = samples.first().ok_or(TraceError::Empty)?;
        if first.t != 0.0 {
            return Err(TraceError::FirstSampleNotZero { t0: first.t });
        }
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(TraceError::NonMonotoneTime { index: i + 1 });
            }
        }
        Ok(CommandTrace { samples })
    }

    pub fn samples(&self) -> &[CommandSample] {
        &self.samples
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Zero-order hold: the command at the latest sample time <= t; the
    /// first sample before t = 0 and the last one after the trace ends.
    pub fn command_at(&self, t: f64) -> (f64, f64) {
        let idx = self.samples.partition_point(|s| s.t <= t);
        let s = if idx == 0 {
            &self.samples[0]
        } else {
            &self.samples[idx - 1]
        };
        (s.v_t, s.v_r)
    }
}

/// Planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

/// Simulated trajectories. `poses` is filled by [`simulate_maneuver`] (or an
/// explicit [`integrate_pose`] call) and empty after a bare [`integrate`];
/// when present it has one entry per time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub poses: Vec<Pose>,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// One output channel as a flat series.
    pub fn output_channel(&self, channel: usize) -> Vec<f64> {
        self.outputs.iter().map(|y| y[channel]).collect()
    }

    /// Linear interpolation of every channel onto new sample times. Times
    /// outside the simulated range clamp to the endpoints.
    pub fn resampled(&self, times: &[f64]) -> SimResult {
        let interp_vec = |series: &Vec<DVector<f64>>, t: f64| -> DVector<f64> {
            let (i, w) = self.bracket(t);
            if w == 0.0 {
                series[i].clone()
            } else {
                &series[i] * (1.0 - w) + &series[i + 1] * w
            }
        };
        let mut states = Vec::with_capacity(times.len());
        let mut outputs = Vec::with_capacity(times.len());
        let mut poses = Vec::with_capacity(times.len());
        for &t in times {
            states.push(interp_vec(&self.states, t));
            outputs.push(interp_vec(&self.outputs, t));
            if !self.poses.is_empty() {
                let (i, w) = self.bracket(t);
                let p = if w == 0.0 {
                    self.poses[i]
                } else {
                    let (a, b) = (self.poses[i], self.poses[i + 1]);
                    Pose {
                        x: a.x * (1.0 - w) + b.x * w,
                        y: a.y * (1.0 - w) + b.y * w,
                        psi: a.psi * (1.0 - w) + b.psi * w,
                    }
                };
                poses.push(p);
            }
        }
        SimResult {
            times: times.to_vec(),
            states,
            outputs,
            poses,
        }
    }

    /// Index and interpolation weight of `t` in the time grid.
    fn bracket(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, 0.0);
        }
        let idx = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[idx], self.times[idx + 1]);
        (idx, (t - t0) / (t1 - t0))
    }
}

/// Simulation failure.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// dt is non-positive or violates the RK4 stability guard for this model.
    BadTimeStep { detail: String },
    /// The state norm exceeded [`STATE_NORM_LIMIT`] at time `t`.
    UnstableStep { t: f64 },
    /// The model contains non-finite entries.
    NotFinite,
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::BadTimeStep { detail } => write!(f, "bad time step: {detail}"),
            SimError::UnstableStep { t } => {
                write!(f, "integration diverged at t = {t:.6} s")
            }
            SimError::NotFinite => write!(f, "model matrices contain non-finite entries"),
        }
    }
}

impl std::error::Error for SimError {}

/// Integrates `dx/dt = A x + B u(t)` with classical RK4 from `x0` to
/// `t_end`, recording states and outputs `y = C x + D u` at every step.
///
/// The step must satisfy `dt * max|eig(A)| < 2.5`, checked numerically.
pub fn integrate(
    model: &NumericStateSpace,
    input: impl Fn(f64) -> DVector<f64>,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<SimResult, SimError> {
    check_step(model, dt)?;
    let n_steps = if t_end <= 0.0 {
        0
    } else {
        (t_end / dt + 1e-9).floor() as usize
    };
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut outputs = Vec::with_capacity(n_steps + 1);

    let a = &model.a;
    let b = &model.b;
    let deriv = |x: &DVector<f64>, u: &DVector<f64>| a * x + b * u;

    let mut x = x0.clone();
    for step in 0..=n_steps {
        let t = step as f64 * dt;
        let u = input(t);
        times.push(t);
        outputs.push(&model.c * &x + &model.d * &u);
        states.push(x.clone());
        if step == n_steps {
            break;
        }
        let u_mid = input(t + 0.5 * dt);
        let u_end = input(t + dt);
        let k1 = deriv(&x, &u);
        let k2 = deriv(&(&x + &k1 * (0.5 * dt)), &u_mid);
        let k3 = deriv(&(&x + &k2 * (0.5 * dt)), &u_mid);
        let k4 = deriv(&(&x + &k3 * dt), &u_end);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if x.norm() > STATE_NORM_LIMIT {
            return Err(SimError::UnstableStep { t: t + dt });
        }
    }
    Ok(SimResult {
        times,
        states,
        outputs,
        poses: Vec::new(),
    })
}

fn check_step(model: &NumericStateSpace, dt: f64) -> Result<(), SimError> {
    if !(dt > 0.0) {
        return Err(SimError::BadTimeStep {
            detail: format!("dt must be positive, got {dt}"),
        });
    }
    if !model.a.iter().all(|v| v.is_finite())
        || !model.b.iter().all(|v| v.is_finite())
        || !model.c.iter().all(|v| v.is_finite())
        || !model.d.iter().all(|v| v.is_finite())
    {
        return Err(SimError::NotFinite);
    }
    let max_eig = model
        .a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0f64, f64::max);
    if dt * max_eig >= STABILITY_MARGIN {
        return Err(SimError::BadTimeStep {
            detail: format!(
                "dt*max|eig(A)| = {:.3} exceeds the stability margin {STABILITY_MARGIN}",
                dt * max_eig
            ),
        });
    }
    Ok(())
}

/// Integrates planar unicycle kinematics `x' = v cos(psi)`, `y' = v sin(psi)`,
/// `psi' = omega` with RK4, linearly interpolating the velocity series
/// within each interval. Input series share one fixed step `dt`; the output
/// has one pose per input sample, starting at `pose0`.
pub fn integrate_pose(v: &[f64], omega: &[f64], dt: f64, pose0: Pose) -> Vec<Pose> {
    assert_eq!(v.len(), omega.len(), "velocity series lengths differ");
    let mut poses = Vec::with_capacity(v.len());
    let mut pose = pose0;
    poses.push(pose);
    for i in 1..v.len() {
        let (v0, v1) = (v[i - 1], v[i]);
        let (w0, w1) = (omega[i - 1], omega[i]);
        let vm = 0.5 * (v0 + v1);
        let wm = 0.5 * (w0 + w1);
        let f = |p: &Pose, vv: f64, ww: f64| (vv * p.psi.cos(), vv * p.psi.sin(), ww);
        let step = |p: &Pose, d: (f64, f64, f64), h: f64| Pose {
            x: p.x + d.0 * h,
            y: p.y + d.1 * h,
            psi: p.psi + d.2 * h,
        };
        let k1 = f(&pose, v0, w0);
        let k2 = f(&step(&pose, k1, 0.5 * dt), vm, wm);
        let k3 = f(&step(&pose, k2, 0.5 * dt), vm, wm);
        let k4 = f(&step(&pose, k3, dt), v1, w1);
        pose = Pose {
            x: pose.x + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            y: pose.y + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            psi: pose.psi + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
        };
        poses.push(pose);
    }
    poses
}

/// Options for [`simulate_maneuver`]: initial state and pose default to rest
/// at the origin.
#[derive(Debug, Clone, Default)]
pub struct ManeuverOptions {
    pub x0: Option<DVector<f64>>,
    pub pose0: Pose,
}

/// Drives a robot model with a command trace: commands map to source
/// voltages (zero-order hold between samples), the state-space model
/// integrates with RK4, and the forward/yaw output channels integrate into
/// the planar trajectory.
pub fn simulate_maneuver(
    model: &NumericStateSpace,
    c_gain: f64,
    trace: &CommandTrace,
    dt: f64,
    v_channel: usize,
    omega_channel: usize,
    options: &ManeuverOptions,
) -> Result<SimResult, SimError> {
    let x0 = options
        .x0
        .clone()
        .unwrap_or_else(|| DVector::zeros(model.num_states()));
    let input = |t: f64| {
        let (v_t, v_r) = trace.command_at(t);
        let (vs1, vs2) = command_to_voltage(v_t, v_r, c_gain);
        DVector::from_vec(vec![vs1, vs2])
    };
    let mut result = integrate(model, input, &x0, trace.duration(), dt)?;
    let v = result.output_channel(v_channel);
    let w = result.output_channel(omega_channel);
    result.poses = integrate_pose(&v, &w, dt, options.pose0);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn identity_model(n: usize) -> NumericStateSpace {
        NumericStateSpace {
            state_labels: (0..n).map(|i| format!("x{i}")).collect(),
            input_labels: (0..n).map(|i| format!("u{i}")).collect(),
            output_labels: (0..n).map(|i| format!("y{i}")).collect(),
            a: DMatrix::zeros(n, n),
            b: DMatrix::identity(n, n),
            c: DMatrix::identity(n, n),
            d: DMatrix::zeros(n, n),
        }
    }

    #[test]
    fn constant_input_integrates_linearly() {
        let model = identity_model(2);
        let u = DVector::from_vec(vec![0.3, -1.7]);
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let result = integrate(&model, |_| u.clone(), &x0, 1.0, 1e-3).unwrap();
        let last = result.states.last().unwrap();
        assert!((last[0] - (1.0 + 0.3)).abs() < 1e-10);
        assert!((last[1] - (2.0 - 1.7)).abs() < 1e-10);
    }

    #[test]
    fn scalar_decay_matches_analytic_solution() {
        let model = NumericStateSpace {
            state_labels: vec!["x".into()],
            input_labels: vec!["u".into()],
            output_labels: vec!["x".into()],
            a: DMatrix::from_element(1, 1, -1.0),
            b: DMatrix::zeros(1, 1),
            c: DMatrix::identity(1, 1),
            d: DMatrix::zeros(1, 1),
        };
        let x0 = DVector::from_element(1, 1.0);
        let result = integrate(&model, |_| DVector::zeros(1), &x0, 1.0, 1e-3).unwrap();
        let x1 = result.states.last().unwrap()[0];
        assert!((x1 - (-1.0f64).exp()).abs() < 1e-10, "{x1}");
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        let model = identity_model(1);
        let x0 = DVector::zeros(1);
        let err = integrate(&model, |_| DVector::zeros(1), &x0, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, SimError::BadTimeStep { .. }));
    }

    #[test]
    fn stiff_step_is_rejected_by_the_guard() {
        let model = NumericStateSpace {
            state_labels: vec!["x".into()],
            input_labels: vec!["u".into()],
            output_labels: vec!["x".into()],
            a: DMatrix::from_element(1, 1, -5000.0),
            b: DMatrix::zeros(1, 1),
            c: DMatrix::identity(1, 1),
            d: DMatrix::zeros(1, 1),
        };
        let x0 = DVector::zeros(1);
        let err = integrate(&model, |_| DVector::zeros(1), &x0, 1.0, 1e-3).unwrap_err();
        assert!(matches!(err, SimError::BadTimeStep { .. }), "{err}");
    }

    #[test]
    fn straight_line_pose() {
        let n = 1001;
        let v = vec![0.7; n];
        let w = vec![0.0; n];
        let poses = integrate_pose(&v, &w, 1e-3, Pose::default());
        let last = poses.last().unwrap();
        assert!((last.x - 0.7).abs() < 1e-9);
        assert!(last.y.abs() < 1e-12);
        assert!(last.psi.abs() < 1e-12);
    }

    #[test]
    fn constant_turn_rate_closes_a_circle() {
        let (v, w) = (0.8, 0.5);
        let period = std::f64::consts::TAU / w;
        let dt = 1e-3;
        let n = (period / dt).round() as usize + 1;
        let vs = vec![v; n];
        let ws = vec![w; n];
        let poses = integrate_pose(&vs, &ws, dt, Pose::default());
        let radius = v / w;
        // Sample near one full period (grid may overshoot by < dt).
        let idx = (period / dt).floor() as usize;
        let p = poses[idx];
        let closure = (p.x * p.x + p.y * p.y).sqrt();
        assert!(closure <= 1e-6 * radius + v * dt, "closure error {closure}");
        // Mid-circle the trajectory is a diameter away.
        let mid = poses[idx / 2];
        let mid_dist = (mid.x * mid.x + mid.y * mid.y).sqrt();
        assert!((mid_dist - 2.0 * radius).abs() < 1e-3 + 2.0 * v * dt);
    }

    #[test]
    fn turn_in_place_keeps_position() {
        let n = 501;
        let v = vec![0.0; n];
        let w = vec![1.3; n];
        let poses = integrate_pose(&v, &w, 1e-3, Pose::default());
        let last = poses.last().unwrap();
        assert_eq!(last.x, 0.0);
        assert_eq!(last.y, 0.0);
        assert!((last.psi - 1.3 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn pose_integration_is_rotation_equivariant() {
        let n = 800;
        let v: Vec<f64> = (0..n)
            .map(|i| 0.5 + 0.3 * (i as f64 * 0.01).sin())
            .collect();
        let w: Vec<f64> = (0..n).map(|i| 0.4 * (i as f64 * 0.02).cos()).collect();
        let phi = 0.73;
        let base = integrate_pose(&v, &w, 1e-2, Pose::default());
        let rotated = integrate_pose(
            &v,
            &w,
            1e-2,
            Pose {
                x: 0.0,
                y: 0.0,
                psi: phi,
            },
        );
        for (p, q) in base.iter().zip(&rotated) {
            let rx = phi.cos() * p.x - phi.sin() * p.y;
            let ry = phi.sin() * p.x + phi.cos() * p.y;
            assert!((q.x - rx).abs() < 1e-12);
            assert!((q.y - ry).abs() < 1e-12);
            assert!((q.psi - (p.psi + phi)).abs() < 1e-12);
        }
    }

    #[test]
    fn command_trace_validation() {
        assert!(matches!(CommandTrace::new(vec![]), Err(TraceError::Empty)));
        let t0 = CommandTrace::new(vec![CommandSample {
            t: 0.5,
            v_t: 0.0,
            v_r: 0.0,
        }]);
        assert!(matches!(t0, Err(TraceError::FirstSampleNotZero { .. })));
        let back = CommandTrace::new(vec![
            CommandSample {
                t: 0.0,
                v_t: 0.0,
                v_r: 0.0,
            },
            CommandSample {
                t: 1.0,
                v_t: 0.0,
                v_r: 0.0,
            },
            CommandSample {
                t: 0.5,
                v_t: 0.0,
                v_r: 0.0,
            },
        ]);
        assert!(matches!(
            back,
            Err(TraceError::NonMonotoneTime { index: 2 })
        ));
    }

    #[test]
    fn zero_order_hold_lookup() {
        let trace = CommandTrace::new(vec![
            CommandSample {
                t: 0.0,
                v_t: 0.1,
                v_r: 0.0,
            },
            CommandSample {
                t: 1.0,
                v_t: 0.5,
                v_r: -0.2,
            },
        ])
        .unwrap();
        assert_eq!(trace.command_at(0.0), (0.1, 0.0));
        assert_eq!(trace.command_at(0.999), (0.1, 0.0));
        assert_eq!(trace.command_at(1.0), (0.5, -0.2));
        assert_eq!(trace.command_at(5.0), (0.5, -0.2));
    }

    #[test]
    fn resampling_reproduces_linear_signals_exactly() {
        let model = identity_model(1);
        let x0 = DVector::zeros(1);
        let result = integrate(&model, |_| DVector::from_element(1, 2.0), &x0, 1.0, 1e-2).unwrap();
        let sampled = result.resampled(&[0.0, 0.255, 0.5, 0.995]);
        for (t, y) in sampled.times.iter().zip(&sampled.outputs) {
            assert!((y[0] - 2.0 * t).abs() < 1e-9, "t={t}");
        }
    }
}
