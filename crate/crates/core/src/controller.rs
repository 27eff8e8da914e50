//! The decomposed control law driven by observed velocities: required joint
//! motion, required link velocities and forces, and joint torque commands.

use std::f64::consts::TAU;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainKinematics, ChainModel, FrameSet, JointModel};
use crate::error::{Error, Result};
use crate::spatial::{angular_part, Dim, Kind, Space};

/// Desired motion of a single joint, available in closed form up to the
/// second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointTrajectory {
    Constant {
        value: f64,
    },
    /// `offset − amplitude · cos(2π t / period)`
    OffsetCosine {
        offset: f64,
        amplitude: f64,
        period: f64,
    },
}

impl JointTrajectory {
    /// `(q_d, q̇_d, q̈_d)` at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            JointTrajectory::Constant { value } => (value, 0.0, 0.0),
            JointTrajectory::OffsetCosine {
                offset,
                amplitude,
                period,
            } => {
                let w = TAU / period;
                let (s, c) = (w * t).sin_cos();
                (offset - amplitude * c, amplitude * w * s, amplitude * w * w * c)
            }
        }
    }

    /// Bound on `|q_d|`.
    pub fn position_bound(&self) -> f64 {
        match *self {
            JointTrajectory::Constant { value } => value.abs(),
            JointTrajectory::OffsetCosine { offset, amplitude, .. } => offset.abs() + amplitude.abs(),
        }
    }

    /// Bound on `|q̇_d|`.
    pub fn rate_bound(&self) -> f64 {
        match *self {
            JointTrajectory::Constant { .. } => 0.0,
            JointTrajectory::OffsetCosine { amplitude, period, .. } => amplitude.abs() * TAU / period,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            JointTrajectory::Constant { value } => value.is_finite(),
            JointTrajectory::OffsetCosine {
                offset,
                amplitude,
                period,
            } => offset.is_finite() && amplitude.is_finite() && period.is_finite() && period > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid joint trajectory {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesiredSample {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesiredTrajectory {
    pub joints: Vec<JointTrajectory>,
}

impl DesiredTrajectory {
    pub fn new(joints: Vec<JointTrajectory>) -> Result<Self> {
        for j in &joints {
            j.validate()?;
        }
        Ok(Self { joints })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn sample(&self, t: f64) -> DesiredSample {
        let mut out = DesiredSample::default();
        for j in &self.joints {
            let (q, qd, qdd) = j.eval(t);
            out.q.push(q);
            out.qd.push(qd);
            out.qdd.push(qdd);
        }
        out
    }

    /// Per-joint `M_d`.
    pub fn position_bounds(&self) -> Vec<f64> {
        self.joints.iter().map(JointTrajectory::position_bound).collect()
    }

    /// Per-joint `M'_d`.
    pub fn rate_bounds(&self) -> Vec<f64> {
        self.joints.iter().map(JointTrajectory::rate_bound).collect()
    }
}

/// Scalar control gains: `λ`, `k` per joint and `K_B` per link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlGains {
    pub lambda: Vec<f64>,
    pub k: Vec<f64>,
    pub link: Vec<f64>,
}

impl ControlGains {
    pub fn new(lambda: Vec<f64>, k: Vec<f64>, link: Vec<f64>) -> Result<Self> {
        let n = lambda.len();
        for (what, v) in [("k", &k), ("K_B", &link)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: v.len(),
                });
            }
        }
        for (name, v) in [("lambda", &lambda), ("k", &k), ("K_B", &link)] {
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidGain {
                    name: name.into(),
                    reason: format!("must be positive, got {bad}"),
                });
            }
        }
        Ok(Self { lambda, k, link })
    }

    pub fn dof(&self) -> usize {
        self.lambda.len()
    }
}

/// `q̇_r = q̇_d + λ(q_d − q̂)` and `q̈_r = q̈_d + λ(q̇_d − q̂̇)`.
pub fn required_joint_motion(
    desired: &DesiredSample,
    q_hat: &[f64],
    qd_hat: &[f64],
    lambda: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = desired.q.len();
    let qd_r = (0..n)
        .map(|i| desired.qd[i] + lambda[i] * (desired.q[i] - q_hat[i]))
        .collect();
    let qdd_r = (0..n)
        .map(|i| desired.qdd[i] + lambda[i] * (desired.qd[i] - qd_hat[i]))
        .collect();
    (qd_r, qdd_r)
}

/// Required velocities `V_r` and their derivatives at every frame, with the
/// transform derivative driven by `udot_rates`.
pub fn required_velocity_recursion<const D: usize>(
    chain: &ChainModel<D>,
    q: &[f64],
    qd_r: &[f64],
    qdd_r: &[f64],
    udot_rates: &[f64],
) -> Result<(FrameSet<D>, FrameSet<D>)>
where
    Dim<D>: Space<D>,
{
    chain.check_len("required joint velocities", qd_r.len())?;
    chain.check_len("required joint accelerations", qdd_r.len())?;
    chain.check_len("transform rates", udot_rates.len())?;
    let kin = ChainKinematics::new(chain, q)?;
    Ok(kin.propagate_velocities(qd_r, qdd_r, udot_rates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequiredForces<const D: usize> {
    /// `F*_r` of link `i` at index `i-1`.
    pub net: Vec<SVector<f64, D>>,
    /// `F_r` at every frame; `base[0]` is the wrench delivered to the base.
    pub forces: FrameSet<D>,
    /// `τ_{ar,i}`
    pub actuation: Vec<f64>,
}

impl<const D: usize> RequiredForces<D> {
    pub fn base_force(&self) -> SVector<f64, D> {
        self.forces.base[0]
    }
}

pub(crate) fn required_forces_with<const D: usize>(
    chain: &ChainModel<D>,
    kin: &ChainKinematics<D>,
    v_r: &FrameSet<D>,
    v_r_dot: &FrameSet<D>,
    v_hat: &[SVector<f64, D>],
    k_b: &[f64],
) -> RequiredForces<D>
where
    Dim<D>: Space<D>,
{
    let net: Vec<_> = (1..=chain.dof())
        .map(|i| {
            let link = chain.link(i - 1);
            let omega_hat = angular_part::<D>(&v_hat[i - 1]);
            link.mass_matrix() * v_r_dot.base[i]
                + link.coriolis_matrix(&omega_hat) * v_r.base[i]
                + link.gravity_vector(&kin.orientation(i))
                + (v_r.base[i] - v_hat[i - 1]) * k_b[i - 1]
        })
        .collect();
    let (forces, actuation) = kin.propagate_forces(&net);
    RequiredForces { net, forces, actuation }
}

/// `F*_r = M V̇_r + C(ω̂) V_r + G + K_B (V_r − V̂)` per link, then the inward
/// force recursion and `τ_{ar,i} = zᵀ F_r`.
pub fn required_forces<const D: usize>(
    chain: &ChainModel<D>,
    q: &[f64],
    v_r: &FrameSet<D>,
    v_r_dot: &FrameSet<D>,
    v_hat: &[SVector<f64, D>],
    k_b: &[f64],
) -> Result<RequiredForces<D>>
where
    Dim<D>: Space<D>,
{
    for set in [v_r, v_r_dot] {
        if set.kind != Kind::Velocity {
            return Err(Error::KindMismatch {
                expected: Kind::Velocity,
                found: set.kind,
            });
        }
        chain.check_len("required velocity frames", set.dof())?;
    }
    chain.check_len("observed link velocities", v_hat.len())?;
    chain.check_len("link velocity gains", k_b.len())?;
    let kin = ChainKinematics::new(chain, q)?;
    Ok(required_forces_with(chain, &kin, v_r, v_r_dot, v_hat, k_b))
}

/// `τ = I_m q̈_r + f_c(q̇_r) + τ_ar + k (q̇_r − q̂̇)`.
pub fn joint_torque_command(qdd_r: f64, qd_r: f64, qd_hat: f64, tau_ar: f64, joint: &JointModel, k: f64) -> f64 {
    joint.rotor_inertia * qdd_r + joint.friction.eval(qd_r) + tau_ar + k * (qd_r - qd_hat)
}
