//! The virtually decomposed open chain: frame bookkeeping, the velocity and
//! force recursions, joint dynamics, and forward dynamics.
//!
//! Frames are `{B_0}` (fixed base) followed by `{B_i}`, `{T_i}` for each link
//! `i = 1..n`. `{T_0}` is treated as an alias of `{B_0}`, which lets joint 1
//! use the same recursion as every other joint.

use nalgebra::{DMatrix, DVector, Isometry3, Rotation3, SMatrix, SVector, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{
    joint_axis, joint_transform, transform_matrix, Dim, Frame, Kind, LinkModel, Space, SpatialVector,
};

/// Joint friction model `f_c`: increasing, odd, globally Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Friction {
    None,
    /// `gain · tanh(slope · x)`
    Tanh {
        gain: f64,
        slope: f64,
    },
    /// `viscous · x`
    Viscous {
        viscous: f64,
    },
    /// Smoothed Coulomb plus viscous: `coulomb · tanh(slope · x) + viscous · x`
    CoulombViscous {
        coulomb: f64,
        viscous: f64,
        slope: f64,
    },
}

impl Default for Friction {
    fn default() -> Self {
        Friction::Tanh { gain: 1.0, slope: 1.0 }
    }
}

impl Friction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Friction::None => 0.0,
            Friction::Tanh { gain, slope } => gain * (slope * x).tanh(),
            Friction::Viscous { viscous } => viscous * x,
            Friction::CoulombViscous {
                coulomb,
                viscous,
                slope,
            } => coulomb * (slope * x).tanh() + viscous * x,
        }
    }

    /// Global Lipschitz constant `m_c`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Friction::None => 0.0,
            Friction::Tanh { gain, slope } => gain * slope,
            Friction::Viscous { viscous } => viscous,
            Friction::CoulombViscous {
                coulomb,
                viscous,
                slope,
            } => coulomb * slope + viscous,
        }
    }

    fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!(
                    "friction {name} must be non-negative, got {v}"
                )))
            }
        };
        match *self {
            Friction::None => Ok(()),
            Friction::Tanh { gain, slope } => nonneg("gain", gain).and(nonneg("slope", slope)),
            Friction::Viscous { viscous } => nonneg("viscous", viscous),
            Friction::CoulombViscous {
                coulomb,
                viscous,
                slope,
            } => nonneg("coulomb", coulomb)
                .and(nonneg("viscous", viscous))
                .and(nonneg("slope", slope)),
        }
    }
}

/// One revolute joint: rotor inertia, friction, and the fixed mounting of
/// `{B_i}` relative to the preceding frame (`{T_{i-1}}`, or `{B_0}` for joint 1)
/// at zero joint angle. The joint rotates `{B_i}` about its own z axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub rotor_inertia: f64,
    pub friction: Friction,
    pub mount: Isometry3<f64>,
}

impl JointModel {
    pub fn new(rotor_inertia: f64, friction: Friction) -> Self {
        Self {
            rotor_inertia,
            friction,
            mount: Isometry3::identity(),
        }
    }

    pub fn with_mount(mut self, mount: Isometry3<f64>) -> Self {
        self.mount = mount;
        self
    }

    /// `τ = I_m q̈ + f_c(q̇) + τ_a`.
    pub fn torque(&self, qdd: f64, qd: f64, tau_a: f64) -> f64 {
        self.rotor_inertia * qdd + self.friction.eval(qd) + tau_a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel<const D: usize> {
    joints: Vec<JointModel>,
    links: Vec<LinkModel<D>>,
    base: Isometry3<f64>,
}

impl<const D: usize> ChainModel<D>
where
    Dim<D>: Space<D>,
{
    pub fn new(joints: Vec<JointModel>, links: Vec<LinkModel<D>>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidModel("chain needs at least one joint".into()));
        }
        if joints.len() != links.len() {
            return Err(Error::DimensionMismatch {
                what: "links",
                expected: joints.len(),
                found: links.len(),
            });
        }
        for (i, joint) in joints.iter().enumerate() {
            if !(joint.rotor_inertia > 0.0) || !joint.rotor_inertia.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "joint {} rotor inertia must be positive, got {}",
                    i + 1,
                    joint.rotor_inertia
                )));
            }
            joint.friction.validate()?;
            if !<Dim<D> as Space<D>>::admits(&joint.mount) {
                return Err(Error::InvalidModel(format!(
                    "joint {} mount leaves the plane of motion",
                    i + 1
                )));
            }
        }
        Ok(Self {
            joints,
            links,
            base: Isometry3::identity(),
        })
    }

    /// World pose of `{B_0}`.
    pub fn with_base(mut self, base: Isometry3<f64>) -> Result<Self> {
        if !<Dim<D> as Space<D>>::admits(&base) {
            return Err(Error::InvalidModel("base pose leaves the plane of motion".into()));
        }
        self.base = base;
        Ok(self)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointModel] {
        &self.joints
    }

    pub fn links(&self) -> &[LinkModel<D>] {
        &self.links
    }

    pub fn base(&self) -> &Isometry3<f64> {
        &self.base
    }

    pub fn joint(&self, i: usize) -> &JointModel {
        &self.joints[i]
    }

    pub fn link(&self, i: usize) -> &LinkModel<D> {
        &self.links[i]
    }

    pub(crate) fn check_len(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.dof() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dof(),
                found,
            });
        }
        Ok(())
    }

    /// `^{B_{i-1}}U_{B_i}` at zero joint angle for every joint. The joint
    /// rotation contributes an orthogonal factor, so the norm of this matrix
    /// does not depend on the joint angle.
    pub fn inter_base_transforms(&self) -> Vec<SMatrix<f64, D, D>> {
        (0..self.dof())
            .map(|i| {
                let prev_tip = if i == 0 {
                    SMatrix::identity()
                } else {
                    transform_matrix::<D>(self.links[i - 1].tip())
                };
                prev_tip * transform_matrix::<D>(&self.joints[i].mount)
            })
            .collect()
    }
}

/// Per-frame vectors of one kind for a whole chain.
///
/// `base[i]` holds `{B_i}` for `i = 0..=n`; `tip[i]` holds `{T_i}` with
/// `tip[0]` equal to `base[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet<const D: usize> {
    pub kind: Kind,
    pub base: Vec<SVector<f64, D>>,
    pub tip: Vec<SVector<f64, D>>,
}

impl<const D: usize> FrameSet<D> {
    pub fn zeros(kind: Kind, n: usize) -> Self {
        Self {
            kind,
            base: vec![SVector::zeros(); n + 1],
            tip: vec![SVector::zeros(); n + 1],
        }
    }

    pub fn dof(&self) -> usize {
        self.base.len() - 1
    }

    pub fn get(&self, frame: Frame) -> Option<SpatialVector<D>> {
        let data = match frame {
            Frame::Base(i) => self.base.get(i)?,
            Frame::Tip(i) => self.tip.get(i)?,
        };
        Some(SpatialVector::new(frame, self.kind, *data))
    }
}

/// Joint-angle dependent transforms and frame poses of a chain.
#[derive(Debug, Clone)]
pub struct ChainKinematics<const D: usize> {
    /// `^{T_{i-1}}U_{B_i}(q_i)`, index `i-1`.
    pub joint_transforms: Vec<SMatrix<f64, D, D>>,
    /// `∂/∂q_i ^{T_{i-1}}U_{B_i}(q_i)`, index `i-1`.
    pub joint_transform_rates: Vec<SMatrix<f64, D, D>>,
    /// `^{B_i}U_{T_i}`, index `i-1`.
    pub tip_transforms: Vec<SMatrix<f64, D, D>>,
    /// World poses of `{B_0}..{B_n}`.
    pub base_poses: Vec<Isometry3<f64>>,
    /// World poses of `{T_0}..{T_n}`.
    pub tip_poses: Vec<Isometry3<f64>>,
    /// Accumulated in-plane rotation of `{B_0}..{B_n}`.
    pub headings: Vec<f64>,
}

fn planar_heading(iso: &Isometry3<f64>) -> f64 {
    iso.rotation.scaled_axis().z
}

impl<const D: usize> ChainKinematics<D>
where
    Dim<D>: Space<D>,
{
    pub fn new(chain: &ChainModel<D>, q: &[f64]) -> Result<Self> {
        chain.check_len("joint angles", q.len())?;
        let n = chain.dof();
        let mut kin = Self {
            joint_transforms: Vec::with_capacity(n),
            joint_transform_rates: Vec::with_capacity(n),
            tip_transforms: Vec::with_capacity(n),
            base_poses: Vec::with_capacity(n + 1),
            tip_poses: Vec::with_capacity(n + 1),
            headings: Vec::with_capacity(n + 1),
        };
        kin.base_poses.push(chain.base);
        kin.tip_poses.push(chain.base);
        kin.headings.push(planar_heading(&chain.base));
        for (i, (joint, link)) in chain.joints.iter().zip(&chain.links).enumerate() {
            let (u, du) = joint_transform::<D>(&joint.mount, q[i]);
            kin.joint_transforms.push(u);
            kin.joint_transform_rates.push(du);
            kin.tip_transforms.push(transform_matrix::<D>(link.tip()));

            let rot = Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[i]),
            );
            let base_pose = kin.tip_poses[i] * joint.mount * rot;
            let heading = kin.headings[i] + planar_heading(&joint.mount) + q[i];
            kin.base_poses.push(base_pose);
            kin.tip_poses.push(base_pose * link.tip());
            kin.headings.push(heading);
        }
        Ok(kin)
    }

    pub fn dof(&self) -> usize {
        self.joint_transforms.len()
    }

    /// World orientation of `{B_i}`, `i >= 1`.
    pub fn orientation(&self, i: usize) -> Rotation3<f64> {
        self.base_poses[i].rotation.to_rotation_matrix()
    }

    /// Heading of `{T_i}` (equal to that of `{B_i}` plus the tip rotation).
    fn tip_heading(&self, i: usize) -> f64 {
        if i == 0 {
            self.headings[0]
        } else {
            self.headings[i] + planar_heading(&(self.base_poses[i].inverse() * self.tip_poses[i]))
        }
    }

    pub fn poses(&self) -> FrameSet<D> {
        let n = self.dof();
        let mut set = FrameSet::zeros(Kind::Pose, n);
        for i in 0..=n {
            set.base[i] = <Dim<D> as Space<D>>::pose_vector(&self.base_poses[i], self.headings[i]);
            set.tip[i] = <Dim<D> as Space<D>>::pose_vector(&self.tip_poses[i], self.tip_heading(i));
        }
        set
    }

    /// Outward recursion `^{B_i}V = z q̇_i + Uᵀ ^{T_{i-1}}V`, `^{T_i}V = ^{B_i}U_{T_i}ᵀ ^{B_i}V`
    /// and its time derivative, with `U̇` built from `transform_rates`.
    pub fn propagate_velocities(
        &self,
        rates: &[f64],
        accelerations: &[f64],
        transform_rates: &[f64],
    ) -> (FrameSet<D>, FrameSet<D>) {
        let n = self.dof();
        let z = joint_axis::<D>();
        let mut vel = FrameSet::zeros(Kind::Velocity, n);
        let mut acc = FrameSet::zeros(Kind::Velocity, n);
        for i in 1..=n {
            let u_t = self.joint_transforms[i - 1].transpose();
            let du_t = self.joint_transform_rates[i - 1].transpose() * transform_rates[i - 1];
            let v_prev = vel.tip[i - 1];
            let a_prev = acc.tip[i - 1];
            vel.base[i] = z * rates[i - 1] + u_t * v_prev;
            acc.base[i] = z * accelerations[i - 1] + du_t * v_prev + u_t * a_prev;
            let tip_t = self.tip_transforms[i - 1].transpose();
            vel.tip[i] = tip_t * vel.base[i];
            acc.tip[i] = tip_t * acc.base[i];
        }
        vel.tip[0] = vel.base[0];
        acc.tip[0] = acc.base[0];
        (vel, acc)
    }

    /// Inward recursion `^{B_i}F = ^{B_i}F* + ^{B_i}U_{T_i} ^{T_i}F` with
    /// `^{T_n}F = 0`; returns the frame forces and `τ_{ai} = zᵀ ^{B_i}F`.
    /// `net[i-1]` is the net force of link `i`.
    pub fn propagate_forces(&self, net: &[SVector<f64, D>]) -> (FrameSet<D>, Vec<f64>) {
        let n = self.dof();
        let z = joint_axis::<D>();
        let mut f = FrameSet::zeros(Kind::Force, n);
        for i in (1..=n).rev() {
            f.base[i] = net[i - 1] + self.tip_transforms[i - 1] * f.tip[i];
            f.tip[i - 1] = self.joint_transforms[i - 1] * f.base[i];
        }
        f.base[0] = f.tip[0];
        let tau_a = (1..=n).map(|i| z.dot(&f.base[i])).collect();
        (f, tau_a)
    }

    /// Net forces `F*_i = M V̇ + C(ω) V + G` of every link.
    pub fn net_forces(&self, chain: &ChainModel<D>, vel: &FrameSet<D>, acc: &FrameSet<D>) -> Vec<SVector<f64, D>> {
        (1..=self.dof())
            .map(|i| chain.links[i - 1].net_force(&vel.base[i], &acc.base[i], &self.orientation(i)))
            .collect()
    }
}

pub fn forward_poses<const D: usize>(chain: &ChainModel<D>, q: &[f64]) -> Result<FrameSet<D>>
where
    Dim<D>: Space<D>,
{
    Ok(ChainKinematics::new(chain, q)?.poses())
}

pub fn forward_velocities<const D: usize>(chain: &ChainModel<D>, q: &[f64], qd: &[f64]) -> Result<FrameSet<D>>
where
    Dim<D>: Space<D>,
{
    chain.check_len("joint velocities", qd.len())?;
    let kin = ChainKinematics::new(chain, q)?;
    let zeros = vec![0.0; chain.dof()];
    Ok(kin.propagate_velocities(qd, &zeros, qd).0)
}

/// Backward force recursion from the links' net forces (`Base(1..=n)` of `net`).
pub fn backward_forces<const D: usize>(
    chain: &ChainModel<D>,
    q: &[f64],
    net: &FrameSet<D>,
) -> Result<(FrameSet<D>, DVector<f64>)>
where
    Dim<D>: Space<D>,
{
    if net.kind != Kind::Force {
        return Err(Error::KindMismatch {
            expected: Kind::Force,
            found: net.kind,
        });
    }
    if net.dof() != chain.dof() {
        return Err(Error::DimensionMismatch {
            what: "net force frames",
            expected: chain.dof(),
            found: net.dof(),
        });
    }
    let kin = ChainKinematics::new(chain, q)?;
    let (f, tau_a) = kin.propagate_forces(&net.base[1..]);
    Ok((f, DVector::from_vec(tau_a)))
}

/// All plant-side quantities of one evaluation of the chain dynamics.
#[derive(Debug, Clone)]
pub struct ChainDynamics<const D: usize> {
    pub velocities: FrameSet<D>,
    pub accelerations: FrameSet<D>,
    pub net_forces: Vec<SVector<f64, D>>,
    pub forces: FrameSet<D>,
    pub actuation: Vec<f64>,
    pub torques: Vec<f64>,
}

pub(crate) fn evaluate_dynamics<const D: usize>(
    chain: &ChainModel<D>,
    kin: &ChainKinematics<D>,
    qd: &[f64],
    qdd: &[f64],
) -> ChainDynamics<D>
where
    Dim<D>: Space<D>,
{
    let (vel, acc) = kin.propagate_velocities(qd, qdd, qd);
    let net = kin.net_forces(chain, &vel, &acc);
    let (forces, actuation) = kin.propagate_forces(&net);
    let torques = (0..chain.dof())
        .map(|i| chain.joints[i].torque(qdd[i], qd[i], actuation[i]))
        .collect();
    ChainDynamics {
        velocities: vel,
        accelerations: acc,
        net_forces: net,
        forces,
        actuation,
        torques,
    }
}

pub fn inverse_dynamics<const D: usize>(
    chain: &ChainModel<D>,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
) -> Result<DVector<f64>>
where
    Dim<D>: Space<D>,
{
    chain.check_len("joint velocities", qd.len())?;
    chain.check_len("joint accelerations", qdd.len())?;
    let kin = ChainKinematics::new(chain, q)?;
    Ok(DVector::from_vec(evaluate_dynamics(chain, &kin, qd, qdd).torques))
}

/// Joint-space inertia matrix and bias torque, assembled column by column
/// from the inverse recursion.
pub(crate) fn joint_space_model<const D: usize>(
    chain: &ChainModel<D>,
    kin: &ChainKinematics<D>,
    qd: &[f64],
) -> (DMatrix<f64>, DVector<f64>)
where
    Dim<D>: Space<D>,
{
    let n = chain.dof();
    let mut qdd = vec![0.0; n];
    let bias = DVector::from_vec(evaluate_dynamics(chain, kin, qd, &qdd).torques);
    // columns at rest so large velocity terms cannot cancel into them
    let rest = vec![0.0; n];
    let gravity = DVector::from_vec(evaluate_dynamics(chain, kin, &rest, &qdd).torques);
    let mut inertia = DMatrix::zeros(n, n);
    for j in 0..n {
        qdd[j] = 1.0;
        let col = DVector::from_vec(evaluate_dynamics(chain, kin, &rest, &qdd).torques) - &gravity;
        inertia.set_column(j, &col);
        qdd[j] = 0.0;
    }
    // symmetric by construction up to rounding
    let inertia = (&inertia + inertia.transpose()) * 0.5;
    (inertia, bias)
}

pub(crate) fn solve_accelerations<const D: usize>(
    chain: &ChainModel<D>,
    kin: &ChainKinematics<D>,
    qd: &[f64],
    tau: &[f64],
) -> Result<DVector<f64>>
where
    Dim<D>: Space<D>,
{
    let (inertia, bias) = joint_space_model(chain, kin, qd);
    let rhs = DVector::from_column_slice(tau) - bias;
    let chol = inertia.cholesky().ok_or(Error::SingularInertia)?;
    Ok(chol.solve(&rhs))
}

pub fn forward_dynamics<const D: usize>(
    chain: &ChainModel<D>,
    q: &[f64],
    qd: &[f64],
    tau: &[f64],
) -> Result<DVector<f64>>
where
    Dim<D>: Space<D>,
{
    chain.check_len("joint velocities", qd.len())?;
    chain.check_len("joint torques", tau.len())?;
    let kin = ChainKinematics::new(chain, q)?;
    solve_accelerations(chain, &kin, qd, tau)
}

/// Kinetic plus potential energy of the links (rotor energy excluded).
pub fn link_energy<const D: usize>(chain: &ChainModel<D>, q: &[f64], qd: &[f64]) -> Result<f64>
where
    Dim<D>: Space<D>,
{
    chain.check_len("joint velocities", qd.len())?;
    let kin = ChainKinematics::new(chain, q)?;
    let zeros = vec![0.0; chain.dof()];
    let (vel, _) = kin.propagate_velocities(qd, &zeros, qd);
    Ok((1..=chain.dof())
        .map(|i| {
            let link = &chain.links[i - 1];
            link.kinetic_energy(&vel.base[i]) + link.potential_energy(&kin.base_poses[i])
        })
        .sum())
}
