//! Closed-loop assembly, fixed-step RK4 integration, the two-link reference
//! scenario and a closed-form two-link model used as an independent check.

use std::fmt;

use nalgebra::{SVector, Vector3};
use serde::Serialize;

use crate::chain::{
    evaluate_dynamics, forward_poses, solve_accelerations, ChainDynamics, ChainKinematics, ChainModel, Friction,
    JointModel,
};
use crate::controller::{
    joint_torque_command, required_forces_with, required_joint_motion, ControlGains, DesiredSample, DesiredTrajectory,
    JointTrajectory, RequiredForces,
};
use crate::error::{Error, Result};
use crate::observer::{
    joint_observed_rate, joint_observer_rates, link_observed_velocity, link_observer_rates, JointObserverState,
    LinkObserverState, ObserverGains,
};
use crate::spatial::{Dim, LinkModel, Space, STANDARD_GRAVITY};
use crate::stability::{
    lyapunov_total, AuditSample, ErrorStateVector, JointError, LinkError, LyapunovValue, StabilityBounds,
};

/// Plant, observer and pose-signal states of the whole loop.
///
/// `link_pose` holds the body-frame quasi-pose `P_i` with `Ṗ_i = ^{B_i}V`,
/// which is the position signal the link observers compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState<const D: usize> {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub joint_obs: Vec<JointObserverState>,
    pub link_obs: Vec<LinkObserverState<D>>,
    pub link_pose: Vec<SVector<f64, D>>,
}

impl<const D: usize> ClosedLoopState<D>
where
    Dim<D>: Space<D>,
{
    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn packed_len(n: usize) -> usize {
        n * (4 + 3 * D)
    }

    /// Initial state with the observers matched to the plant except for the
    /// joint position estimates: `z = 0`, `P̂ = P + pose_offset`, `Z = 0`.
    pub fn with_observers(
        chain: &ChainModel<D>,
        q: Vec<f64>,
        qd: Vec<f64>,
        q_hat: Vec<f64>,
        pose_offset: Option<Vec<SVector<f64, D>>>,
    ) -> Result<Self> {
        chain.check_len("initial joint velocities", qd.len())?;
        chain.check_len("initial joint estimates", q_hat.len())?;
        let poses = forward_poses(chain, &q)?;
        let offset = pose_offset.unwrap_or_else(|| vec![SVector::zeros(); chain.dof()]);
        chain.check_len("initial pose offsets", offset.len())?;
        let link_pose: Vec<_> = poses.base[1..].to_vec();
        let link_obs = link_pose
            .iter()
            .zip(&offset)
            .map(|(p, o)| LinkObserverState::new(p + o, SVector::zeros()))
            .collect();
        Ok(Self {
            joint_obs: q_hat.iter().map(|&qh| JointObserverState::new(qh, 0.0)).collect(),
            q,
            qd,
            link_obs,
            link_pose,
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::packed_len(self.dof()));
        out.extend(&self.q);
        out.extend(&self.qd);
        for j in &self.joint_obs {
            out.extend([j.q_hat, j.z]);
        }
        for l in &self.link_obs {
            out.extend(l.p_hat.iter());
            out.extend(l.z.iter());
        }
        for p in &self.link_pose {
            out.extend(p.iter());
        }
        out
    }

    pub fn from_slice(n: usize, x: &[f64]) -> Result<Self> {
        if x.len() != Self::packed_len(n) {
            return Err(Error::DimensionMismatch {
                what: "packed state",
                expected: Self::packed_len(n),
                found: x.len(),
            });
        }
        let vec = |at: usize| SVector::<f64, D>::from_column_slice(&x[at..at + D]);
        let obs = 2 * n;
        let link = 4 * n;
        let pose = link + 2 * n * D;
        Ok(Self {
            q: x[..n].to_vec(),
            qd: x[n..2 * n].to_vec(),
            joint_obs: (0..n)
                .map(|i| JointObserverState::new(x[obs + 2 * i], x[obs + 2 * i + 1]))
                .collect(),
            link_obs: (0..n)
                .map(|i| LinkObserverState::new(vec(link + 2 * i * D), vec(link + (2 * i + 1) * D)))
                .collect(),
            link_pose: (0..n).map(|i| vec(pose + i * D)).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }
}

/// Observer and control gains of the loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSet {
    pub observer: ObserverGains,
    pub control: ControlGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig<const D: usize> {
    pub chain: ChainModel<D>,
    pub gains: GainSet,
    pub trajectory: DesiredTrajectory,
    pub initial: ClosedLoopState<D>,
    pub t_end: f64,
    pub dt: f64,
    /// Every `stride`-th step is kept in the output trajectory.
    pub stride: usize,
    /// Design bound on `‖^{B_i}V‖` used by the gain certificate.
    pub velocity_bounds: Vec<f64>,
}

impl<const D: usize> ScenarioConfig<D>
where
    Dim<D>: Space<D>,
{
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "t_end must be at least dt, got {}",
                self.t_end
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        let c = &self.chain;
        c.check_len("observer link gains", self.gains.observer.link.len())?;
        c.check_len("observer joint gains", self.gains.observer.joint.len())?;
        c.check_len("control gains", self.gains.control.dof())?;
        c.check_len("desired trajectory", self.trajectory.dof())?;
        c.check_len("velocity bounds", self.velocity_bounds.len())?;
        c.check_len("initial joint angles", self.initial.q.len())?;
        c.check_len("initial joint velocities", self.initial.qd.len())?;
        c.check_len("initial joint observers", self.initial.joint_obs.len())?;
        c.check_len("initial link observers", self.initial.link_obs.len())?;
        c.check_len("initial link poses", self.initial.link_pose.len())?;
        for (i, j) in c.joints().iter().enumerate() {
            let expected = j.rotor_inertia.recip() + self.gains.observer.joint[i].ell;
            if (self.gains.observer.joint[i].big_l - expected).abs() > 1e-12 * expected {
                return Err(Error::InvalidGain {
                    name: "L".into(),
                    reason: format!("joint {} must equal ell + 1/I_m", i + 1),
                });
            }
        }
        if !self.initial.is_finite() {
            return Err(Error::InvalidArgument("initial state is not finite".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// All signals of one closed-loop evaluation.
#[derive(Debug, Clone)]
pub struct LoopEvaluation<const D: usize> {
    pub rates: ClosedLoopState<D>,
    pub desired: DesiredSample,
    pub qd_hat: Vec<f64>,
    pub v_hat: Vec<SVector<f64, D>>,
    pub qd_r: Vec<f64>,
    pub qdd_r: Vec<f64>,
    pub v_r: crate::chain::FrameSet<D>,
    pub v_r_dot: crate::chain::FrameSet<D>,
    pub required: RequiredForces<D>,
    pub tau: Vec<f64>,
    pub qdd: Vec<f64>,
    pub plant: ChainDynamics<D>,
}

impl<const D: usize> LoopEvaluation<D>
where
    Dim<D>: Space<D>,
{
    pub fn error_state(&self, state: &ClosedLoopState<D>, gains: &GainSet) -> ErrorStateVector<D> {
        let n = state.dof();
        let links = (1..=n)
            .map(|i| LinkError {
                control: self.v_r.base[i] - self.plant.velocities.base[i],
                observer: self.v_hat[i - 1] - self.plant.velocities.base[i],
            })
            .collect();
        let joints = (0..n)
            .map(|i| {
                JointError::new(
                    self.qd_r[i] - state.qd[i],
                    self.qd_hat[i] - state.qd[i],
                    state.joint_obs[i].q_hat - state.q[i],
                    gains.observer.joint[i].ell,
                )
            })
            .collect();
        ErrorStateVector { links, joints }
    }

    fn power(&self, frame_base: bool, i: usize) -> f64 {
        let (vr, v, fr, f) = if frame_base {
            (
                &self.v_r.base[i],
                &self.plant.velocities.base[i],
                &self.required.forces.base[i],
                &self.plant.forces.base[i],
            )
        } else {
            (
                &self.v_r.tip[i],
                &self.plant.velocities.tip[i],
                &self.required.forces.tip[i],
                &self.plant.forces.tip[i],
            )
        };
        (vr - v).dot(&(fr - f))
    }

    /// Largest magnitude among the signals the error state is differenced from.
    pub fn signal_scale(&self, state: &ClosedLoopState<D>) -> f64 {
        let n = state.dof();
        let joints = (0..n).flat_map(|i| {
            [
                state.q[i],
                state.qd[i],
                state.joint_obs[i].q_hat,
                self.qd_hat[i],
                self.qd_r[i],
            ]
        });
        let links = (1..=n).flat_map(|i| {
            [
                self.plant.velocities.base[i].norm(),
                self.v_r.base[i].norm(),
                self.v_hat[i - 1].norm(),
            ]
        });
        joints.chain(links).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `nu_weight` bounds the quadratic form of `ν` (its largest weight).
    pub fn audit_sample(
        &self,
        t: f64,
        state: &ClosedLoopState<D>,
        chain: &ChainModel<D>,
        gains: &GainSet,
        nu_weight: f64,
    ) -> Result<(AuditSample, LyapunovValue)> {
        let n = state.dof();
        let x = self.error_state(state, gains);
        let nu = lyapunov_total(chain, &gains.observer, &x)?;
        let p_base: Vec<f64> = (1..=n).map(|i| self.power(true, i)).collect();
        let p_tip: Vec<f64> = (0..=n).map(|i| self.power(false, i)).collect();
        let mut link_identity = Vec::with_capacity(n);
        let mut joint_identity = Vec::with_capacity(n);
        let mut link_sum = 0.0;
        let mut joint_sum = 0.0;
        for i in 1..=n {
            let dv = self.v_r.base[i] - self.plant.velocities.base[i];
            let lhs_link = dv.dot(&(self.required.net[i - 1] - self.plant.net_forces[i - 1]));
            let lhs_joint = x.joints[i - 1].control * (self.required.actuation[i - 1] - self.plant.actuation[i - 1]);
            link_identity.push(lhs_link - (p_base[i - 1] - p_tip[i]));
            joint_identity.push(lhs_joint - (p_base[i - 1] - p_tip[i - 1]));
            link_sum += lhs_link;
            joint_sum += lhs_joint;
        }
        let x_norm_sq = x.norm_squared();
        let resolution = f64::EPSILON * self.signal_scale(state);
        let sample = AuditSample {
            t,
            nu: nu.total,
            nu_link: nu.link.clone(),
            nu_joint: nu.joint.clone(),
            x_norm_sq,
            link_x_norm_sq: x.links.iter().map(LinkError::norm_squared).collect(),
            joint_x_norm_sq: x.joints.iter().map(JointError::norm_squared).collect(),
            p_base,
            p_tip,
            link_identity_residual: link_identity,
            joint_identity_residual: joint_identity,
            vpf_residual: link_sum - joint_sum,
            link_velocity_norm: (1..=n).map(|i| self.plant.velocities.base[i].norm()).collect(),
            nu_rounding: nu_weight * resolution * (x_norm_sq.sqrt() + resolution),
        };
        Ok((sample, nu))
    }
}

fn check_finite(t: f64, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t, what: what.into() })
    }
}

/// Evaluates the closed loop at `(t, state)`.
pub fn evaluate_closed_loop<const D: usize>(
    config: &ScenarioConfig<D>,
    t: f64,
    state: &ClosedLoopState<D>,
) -> Result<LoopEvaluation<D>>
where
    Dim<D>: Space<D>,
{
    let chain = &config.chain;
    let gains = &config.gains;
    let n = chain.dof();
    if !state.is_finite() {
        return Err(Error::NonFinite {
            t,
            what: "state".into(),
        });
    }

    // measurements
    let kin = ChainKinematics::new(chain, &state.q)?;

    // observed velocities
    let qd_hat: Vec<f64> = (0..n)
        .map(|i| joint_observed_rate(&state.joint_obs[i], state.q[i], &gains.observer.joint[i]))
        .collect();
    let v_hat: Vec<SVector<f64, D>> = (0..n)
        .map(|i| {
            link_observed_velocity(
                &state.link_obs[i],
                &state.link_pose[i],
                chain.link(i),
                gains.observer.link[i],
            )
        })
        .collect();

    // required motion, velocities and forces
    let desired = config.trajectory.sample(t);
    let q_hat: Vec<f64> = state.joint_obs.iter().map(|j| j.q_hat).collect();
    let (qd_r, qdd_r) = required_joint_motion(&desired, &q_hat, &qd_hat, &gains.control.lambda);
    let (v_r, v_r_dot) = kin.propagate_velocities(&qd_r, &qdd_r, &qd_hat);
    let required = required_forces_with(chain, &kin, &v_r, &v_r_dot, &v_hat, &gains.control.link);
    let tau: Vec<f64> = (0..n)
        .map(|i| {
            joint_torque_command(
                qdd_r[i],
                qd_r[i],
                qd_hat[i],
                required.actuation[i],
                chain.joint(i),
                gains.control.k[i],
            )
        })
        .collect();
    check_finite(t, "joint torque command", &tau)?;

    // plant
    let qdd = solve_accelerations(chain, &kin, &state.qd, &tau)?;
    let qdd: Vec<f64> = qdd.iter().copied().collect();
    check_finite(t, "joint accelerations", &qdd)?;
    let plant = evaluate_dynamics(chain, &kin, &state.qd, &qdd);

    // observer rates from plant-side signals
    let mut joint_rates = Vec::with_capacity(n);
    let mut link_rates = Vec::with_capacity(n);
    for (i, &tau_i) in tau.iter().enumerate() {
        let (jr, _) = joint_observer_rates(
            &state.joint_obs[i],
            tau_i,
            plant.actuation[i],
            state.q[i],
            chain.joint(i),
            &gains.observer.joint[i],
        );
        joint_rates.push(jr);
        let (lr, _) = link_observer_rates(
            &state.link_obs[i],
            &plant.net_forces[i],
            &state.link_pose[i],
            &kin.orientation(i + 1),
            chain.link(i),
            gains.observer.link[i],
        );
        link_rates.push(lr);
    }
    let rates = ClosedLoopState {
        q: state.qd.clone(),
        qd: qdd.clone(),
        joint_obs: joint_rates,
        link_obs: link_rates,
        link_pose: plant.velocities.base[1..].to_vec(),
    };
    if !rates.is_finite() {
        return Err(Error::NonFinite {
            t,
            what: "closed-loop rates".into(),
        });
    }
    Ok(LoopEvaluation {
        rates,
        desired,
        qd_hat,
        v_hat,
        qd_r,
        qdd_r,
        v_r,
        v_r_dot,
        required,
        tau,
        qdd,
        plant,
    })
}

/// Packed-state right-hand side of the closed loop.
pub fn closed_loop_rates<const D: usize>(config: &ScenarioConfig<D>, t: f64, x: &[f64]) -> Result<Vec<f64>>
where
    Dim<D>: Space<D>,
{
    let state = ClosedLoopState::from_slice(config.chain.dof(), x)?;
    Ok(evaluate_closed_loop(config, t, &state)?.rates.to_vec())
}

/// One classic fourth-order Runge-Kutta step, given the stage-1 slope.
pub fn rk4_step_with<F>(f: &mut F, t: f64, x: &[f64], k1: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let stage = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + h * ki).collect() };
    let k2 = f(t + 0.5 * dt, &stage(k1, 0.5 * dt))?;
    let k3 = f(t + 0.5 * dt, &stage(&k2, 0.5 * dt))?;
    let k4 = f(t + dt, &stage(&k3, dt))?;
    Ok((0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub fn rk4_step<F>(f: &mut F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(t, x)?;
    rk4_step_with(f, t, x, &k1, dt)
}

/// Uniformly sampled solution; `times[k] = k · dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Integration stopped on a non-finite value; `partial` ends at the last
/// finite state.
#[derive(Debug, Clone, PartialEq)]
pub struct Aborted {
    pub error: Error,
    pub partial: Trajectory,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.partial.times.last().copied().unwrap_or(0.0);
        write!(f, "{} (last finite state at t = {last})", self.error)
    }
}

impl std::error::Error for Aborted {}

pub fn integrate_rk4<F>(mut f: F, x0: &[f64], t_end: f64, dt: f64) -> std::result::Result<Trajectory, Aborted>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
    };
    if !(dt > 0.0) {
        return Err(Aborted {
            error: Error::InvalidArgument(format!("dt must be positive, got {dt}")),
            partial: traj,
        });
    }
    let steps = (t_end / dt).round() as usize;
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t = k as f64 * dt;
        let next = match rk4_step(&mut f, t, &x, dt) {
            Ok(next) => next,
            Err(error) => return Err(Aborted { error, partial: traj }),
        };
        let t_next = (k + 1) as f64 * dt;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Aborted {
                error: Error::NonFinite {
                    t: t_next,
                    what: "state".into(),
                },
                partial: traj,
            });
        }
        x = next;
        traj.times.push(t_next);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub q_d: Vec<f64>,
    /// `q − q_d`
    pub e: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub qd_hat: Vec<f64>,
    pub qd: Vec<f64>,
    pub tau: Vec<f64>,
    pub nu: f64,
    pub nu_link: Vec<f64>,
    pub nu_joint: Vec<f64>,
    pub vpf_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationRun<const D: usize> {
    /// Every `stride`-th step, including `t = 0` and the final step.
    pub records: Vec<TrajectoryRecord>,
    /// Every step.
    pub audit: Vec<AuditSample>,
    pub final_state: ClosedLoopState<D>,
    pub max_abs_torque: f64,
}

/// Runs the scenario with RK4, recording output rows and audit samples from
/// the first-stage evaluation of every step.
pub fn simulate<const D: usize>(config: &ScenarioConfig<D>) -> Result<SimulationRun<D>>
where
    Dim<D>: Space<D>,
{
    config.validate()?;
    let n = config.chain.dof();
    let steps = config.steps();
    let mut state = config.initial.clone();
    let mut x = state.to_vec();
    let mut records = Vec::with_capacity(steps / config.stride + 2);
    let mut audit = Vec::with_capacity(steps + 1);
    let mut max_abs_torque: f64 = 0.0;
    let nu_weight = StabilityBounds::new(
        &config.chain,
        &config.gains.observer,
        &config.gains.control,
        &config.velocity_bounds,
    )?
    .alpha_big_m;
    let mut rhs = |t: f64, x: &[f64]| closed_loop_rates(config, t, x);
    for k in 0..=steps {
        let t = k as f64 * config.dt;
        let eval = evaluate_closed_loop(config, t, &state)?;
        let (sample, nu) = eval.audit_sample(t, &state, &config.chain, &config.gains, nu_weight)?;
        max_abs_torque = eval.tau.iter().fold(max_abs_torque, |m, v| m.max(v.abs()));
        if k % config.stride == 0 || k == steps {
            records.push(TrajectoryRecord {
                t,
                q: state.q.clone(),
                q_d: eval.desired.q.clone(),
                e: (0..n).map(|i| state.q[i] - eval.desired.q[i]).collect(),
                q_hat: state.joint_obs.iter().map(|j| j.q_hat).collect(),
                qd_hat: eval.qd_hat.clone(),
                qd: state.qd.clone(),
                tau: eval.tau.clone(),
                nu: nu.total,
                nu_link: nu.link,
                nu_joint: nu.joint,
                vpf_residual: sample.vpf_residual,
            });
        }
        audit.push(sample);
        if k == steps {
            break;
        }
        let k1 = eval.rates.to_vec();
        x = rk4_step_with(&mut rhs, t, &x, &k1, config.dt)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                t: t + config.dt,
                what: "state".into(),
            });
        }
        state = ClosedLoopState::from_slice(n, &x)?;
    }
    Ok(SimulationRun {
        records,
        audit,
        final_state: state,
        max_abs_torque,
    })
}

pub const REFERENCE_T_END: f64 = 20.0;
pub const REFERENCE_DT: f64 = 1e-4;

/// The two-link planar arm with unit point-mass links, rotor inertia 0.1,
/// `tanh` friction and its observer/controller gains.
pub fn two_dof_scenario() -> ScenarioConfig<3> {
    let link = LinkModel::planar(1.0, 1.0, 1.0, 1.0).expect("reference link is valid");
    let joint = JointModel::new(0.1, Friction::Tanh { gain: 1.0, slope: 1.0 });
    let chain =
        ChainModel::new(vec![joint.clone(), joint], vec![link.clone(), link]).expect("reference chain is valid");
    let observer =
        ObserverGains::new(vec![200.0, 200.0], &[200.0, 200.0], chain.joints()).expect("reference observer gains");
    let control =
        ControlGains::new(vec![10.0, 10.0], vec![10.0, 10.0], vec![100.0, 100.0]).expect("reference control gains");
    let trajectory = DesiredTrajectory::new(vec![
        JointTrajectory::OffsetCosine {
            offset: 0.8,
            amplitude: 1.0,
            period: 8.0,
        },
        JointTrajectory::OffsetCosine {
            offset: 0.8,
            amplitude: 1.0,
            period: 10.0,
        },
    ])
    .expect("reference trajectory");
    let q_hat = trajectory.sample(0.0).q;
    let initial = ClosedLoopState::with_observers(&chain, vec![0.0, 0.0], vec![0.0, 0.0], q_hat, None)
        .expect("reference initial state");
    ScenarioConfig {
        chain,
        gains: GainSet { observer, control },
        trajectory,
        initial,
        t_end: REFERENCE_T_END,
        dt: REFERENCE_DT,
        stride: 100,
        velocity_bounds: vec![5.0, 5.0],
    }
}

/// Parameters of a planar two-link arm for the closed-form model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoLinkParams {
    pub mass: [f64; 2],
    /// Length of link 1 (joint 1 to joint 2).
    pub length1: f64,
    /// Joint-to-centre-of-mass distance.
    pub com: [f64; 2],
    /// Rotational inertia about the centre of mass.
    pub inertia: [f64; 2],
    pub rotor_inertia: [f64; 2],
    pub gravity: f64,
    #[serde(skip)]
    pub friction: [Friction; 2],
}

impl TwoLinkParams {
    /// Extracts the closed-form parameters from a decomposed chain, rejecting
    /// anything that is not a plain two-link planar arm.
    pub fn from_chain(chain: &ChainModel<3>) -> Result<Self> {
        let reject = |why: &str| Err(Error::InvalidModel(format!("oracle requires 2-DoF planar arm: {why}")));
        if chain.dof() != 2 {
            return reject("chain must have exactly two joints");
        }
        let identity = nalgebra::Isometry3::identity();
        if *chain.base() != identity || chain.joints().iter().any(|j| j.mount != identity) {
            return reject("base and joint mounts must be identity");
        }
        let gravity = *chain.link(0).gravity();
        for (i, link) in chain.links().iter().enumerate() {
            let tip = link.tip();
            if tip.rotation.angle() != 0.0 || tip.translation.vector.y != 0.0 {
                return reject(&format!("link {} tip must lie on its x axis", i + 1));
            }
            if link.com().y != 0.0 {
                return reject(&format!("link {} centre of mass must lie on its x axis", i + 1));
            }
            if *link.gravity() != gravity {
                return reject("links must share one gravity vector");
            }
        }
        if gravity.x != 0.0 || gravity.z != 0.0 || gravity.y > 0.0 {
            return reject("gravity must point along -y");
        }
        let l = |i: usize| chain.link(i);
        Ok(Self {
            mass: [l(0).mass(), l(1).mass()],
            length1: l(0).tip().translation.vector.x,
            com: [l(0).com().x, l(1).com().x],
            inertia: [l(0).inertia_com()[(2, 2)], l(1).inertia_com()[(2, 2)]],
            rotor_inertia: [chain.joint(0).rotor_inertia, chain.joint(1).rotor_inertia],
            gravity: -gravity.y,
            friction: [chain.joint(0).friction, chain.joint(1).friction],
        })
    }

    /// The reference arm with point masses at the distal ends.
    pub fn reference() -> Self {
        Self {
            mass: [1.0, 1.0],
            length1: 1.0,
            com: [1.0, 1.0],
            inertia: [1.0, 1.0],
            rotor_inertia: [0.1, 0.1],
            gravity: STANDARD_GRAVITY,
            friction: [Friction::default(); 2],
        }
    }
}

/// Closed-form two-link dynamics `H q̈ + c + g + f(q̇) = τ` from the
/// Lagrangian, solved for `q̈`.
pub fn lagrangian_oracle(p: &TwoLinkParams, q: [f64; 2], qd: [f64; 2], tau: [f64; 2]) -> [f64; 2] {
    let [m1, m2] = p.mass;
    let [lc1, lc2] = p.com;
    let [i1, i2] = p.inertia;
    let l1 = p.length1;
    let g = p.gravity;
    let (s2, c2) = q[1].sin_cos();
    let h11 = i1 + m1 * lc1 * lc1 + i2 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + p.rotor_inertia[0];
    let h12 = i2 + m2 * (lc2 * lc2 + l1 * lc2 * c2);
    let h22 = i2 + m2 * lc2 * lc2 + p.rotor_inertia[1];
    let hq = m2 * l1 * lc2 * s2;
    let cor = [-hq * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), hq * qd[0] * qd[0]];
    let c12 = (q[0] + q[1]).cos();
    let grav = [
        (m1 * lc1 + m2 * l1) * g * q[0].cos() + m2 * lc2 * g * c12,
        m2 * lc2 * g * c12,
    ];
    let r = [
        tau[0] - cor[0] - grav[0] - p.friction[0].eval(qd[0]),
        tau[1] - cor[1] - grav[1] - p.friction[1].eval(qd[1]),
    ];
    let det = h11 * h22 - h12 * h12;
    [(h22 * r[0] - h12 * r[1]) / det, (h11 * r[1] - h12 * r[0]) / det]
}

/// Lagrangian gravity torques, exposed for tests.
pub fn lagrangian_gravity(p: &TwoLinkParams, q: [f64; 2]) -> [f64; 2] {
    let c12 = (q[0] + q[1]).cos();
    let g = p.gravity;
    [
        (p.mass[0] * p.com[0] + p.mass[1] * p.length1) * g * q[0].cos() + p.mass[1] * p.com[1] * g * c12,
        p.mass[1] * p.com[1] * g * c12,
    ]
}

/// Planar position of `{B_i}`'s origin, used in tests.
pub fn base_origin(kin: &ChainKinematics<3>, i: usize) -> Vector3<f64> {
    kin.base_poses[i].translation.vector
}
