//! Frame-attached velocity and force vectors, force/moment transformation
//! matrices, and the dynamics of a single rigid body.
//!
//! Vectors use the `[linear; angular]` ordering. The full spatial form has
//! six components `[v_x, v_y, v_z, ω_x, ω_y, ω_z]`; the planar form keeps the
//! in-plane subset `[v_x, v_y, ω_z]`. Every quantity is computed once in the
//! six-dimensional form and projected, so the planar and spatial code paths
//! share the same formulas.

use std::fmt;

use nalgebra::{
    Isometry3, Matrix3, Matrix6, Rotation3, SMatrix, SVector, Translation3, UnitQuaternion, Vector2, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravitational acceleration (m/s²).
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Frame label within a virtually decomposed chain.
///
/// `Base(i)` is `{B_i}` at the joint end of link `i` (`Base(0)` is the fixed
/// system base). `Tip(i)` is `{T_i}` at the distal end of link `i`; `Tip(0)`
/// is an alias of the system base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    Base(usize),
    Tip(usize),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Base(i) => write!(f, "B{i}"),
            Frame::Tip(i) => write!(f, "T{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Velocity,
    Force,
    Pose,
}

/// Marker for the vector-space dimension of a chain: `Dim<3>` is planar,
/// `Dim<6>` is spatial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dim<const D: usize>;

pub type Planar = Dim<3>;
pub type Spatial = Dim<6>;

/// Projection between the six-dimensional spatial form and the form used by
/// a chain of dimension `D`.
pub trait Space<const D: usize> {
    /// Indices of the angular components inside the six-vector that survive
    /// the projection.
    const ANGULAR_AXES: &'static [usize];

    fn project(v: &Vector6<f64>) -> SVector<f64, D>;

    fn project_matrix(m: &Matrix6<f64>) -> SMatrix<f64, D, D>;

    fn embed(v: &SVector<f64, D>) -> Vector6<f64>;

    /// Pose coordinates of a frame. `heading` is the accumulated rotation
    /// about the plane normal, used so that planar angles are not wrapped.
    fn pose_vector(iso: &Isometry3<f64>, heading: f64) -> SVector<f64, D>;

    /// Whether a rigid transform keeps the motion inside this space.
    fn admits(iso: &Isometry3<f64>) -> bool;
}

const PLANAR_INDICES: [usize; 3] = [0, 1, 5];

impl Space<3> for Dim<3> {
    const ANGULAR_AXES: &'static [usize] = &[2];

    fn project(v: &Vector6<f64>) -> SVector<f64, 3> {
        SVector::<f64, 3>::new(v[0], v[1], v[5])
    }

    fn project_matrix(m: &Matrix6<f64>) -> SMatrix<f64, 3, 3> {
        SMatrix::<f64, 3, 3>::from_fn(|r, c| m[(PLANAR_INDICES[r], PLANAR_INDICES[c])])
    }

    fn embed(v: &SVector<f64, 3>) -> Vector6<f64> {
        Vector6::new(v[0], v[1], 0.0, 0.0, 0.0, v[2])
    }

    fn pose_vector(iso: &Isometry3<f64>, heading: f64) -> SVector<f64, 3> {
        let p = iso.translation.vector;
        SVector::<f64, 3>::new(p.x, p.y, heading)
    }

    fn admits(iso: &Isometry3<f64>) -> bool {
        let axis_ok = iso
            .rotation
            .axis()
            .is_none_or(|a| a.x.abs() < 1e-12 && a.y.abs() < 1e-12);
        axis_ok && iso.translation.vector.z.abs() < 1e-12
    }
}

impl Space<6> for Dim<6> {
    const ANGULAR_AXES: &'static [usize] = &[0, 1, 2];

    fn project(v: &Vector6<f64>) -> SVector<f64, 6> {
        *v
    }

    fn project_matrix(m: &Matrix6<f64>) -> SMatrix<f64, 6, 6> {
        *m
    }

    fn embed(v: &SVector<f64, 6>) -> Vector6<f64> {
        *v
    }

    fn pose_vector(iso: &Isometry3<f64>, _heading: f64) -> SVector<f64, 6> {
        let p = iso.translation.vector;
        let r = iso.rotation.scaled_axis();
        Vector6::new(p.x, p.y, p.z, r.x, r.y, r.z)
    }

    fn admits(_iso: &Isometry3<f64>) -> bool {
        true
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn blocks(tl: &Matrix3<f64>, tr: &Matrix3<f64>, bl: &Matrix3<f64>, br: &Matrix3<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(tl);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(tr);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(bl);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(br);
    m
}

/// Six-dimensional `^A U_B` for a frame `B` whose pose relative to `A` is `iso`.
pub fn force_transform6(iso: &Isometry3<f64>) -> Matrix6<f64> {
    let r = iso.rotation.to_rotation_matrix().into_inner();
    let p = iso.translation.vector;
    blocks(&r, &Matrix3::zeros(), &(skew(&p) * r), &r)
}

/// Derivative of `^A U_B` with respect to a rotation of `B` about its own z axis,
/// evaluated at the rotation angle `q` (with `B` located at the origin of `A`).
fn joint_rotation_rate6(q: f64) -> Matrix6<f64> {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), q).into_inner();
    let d = rz * skew(&Vector3::z());
    blocks(&d, &Matrix3::zeros(), &Matrix3::zeros(), &d)
}

pub(crate) fn joint_axis<const D: usize>() -> SVector<f64, D>
where
    Dim<D>: Space<D>,
{
    <Dim<D> as Space<D>>::project(&Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0))
}

/// Angular velocity of a `D`-vector as a three-vector.
pub fn angular_part<const D: usize>(v: &SVector<f64, D>) -> Vector3<f64>
where
    Dim<D>: Space<D>,
{
    let full = <Dim<D> as Space<D>>::embed(v);
    Vector3::new(full[3], full[4], full[5])
}

pub(crate) fn transform_matrix<const D: usize>(iso: &Isometry3<f64>) -> SMatrix<f64, D, D>
where
    Dim<D>: Space<D>,
{
    <Dim<D> as Space<D>>::project_matrix(&force_transform6(iso))
}

/// `^{P}U_{B}(q)` and its derivative in `q` for a revolute joint that rotates
/// frame `B` about its z axis after the fixed mounting transform `mount`.
pub(crate) fn joint_transform<const D: usize>(
    mount: &Isometry3<f64>,
    q: f64,
) -> (SMatrix<f64, D, D>, SMatrix<f64, D, D>)
where
    Dim<D>: Space<D>,
{
    let rot = Isometry3::from_parts(
        Translation3::identity(),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q),
    );
    let u_mount = force_transform6(mount);
    let u = u_mount * force_transform6(&rot);
    let du = u_mount * joint_rotation_rate6(q);
    (
        <Dim<D> as Space<D>>::project_matrix(&u),
        <Dim<D> as Space<D>>::project_matrix(&du),
    )
}

/// Rotation about the world z axis; the orientation of a planar frame.
pub fn planar_rotation(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
}

/// Planar rigid transform: rotation about z by `angle` after translating by `offset`.
pub fn planar_isometry(angle: f64, offset: Vector2<f64>) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(offset.x, offset.y, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
    )
}

/// A linear/angular velocity, force/moment, or pose vector attached to a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialVector<const D: usize> {
    pub frame: Frame,
    pub kind: Kind,
    pub data: SVector<f64, D>,
}

impl<const D: usize> SpatialVector<D> {
    pub fn new(frame: Frame, kind: Kind, data: SVector<f64, D>) -> Self {
        Self { frame, kind, data }
    }

    pub fn velocity(frame: Frame, data: SVector<f64, D>) -> Self {
        Self::new(frame, Kind::Velocity, data)
    }

    pub fn force(frame: Frame, data: SVector<f64, D>) -> Self {
        Self::new(frame, Kind::Force, data)
    }

    pub fn pose(frame: Frame, data: SVector<f64, D>) -> Self {
        Self::new(frame, Kind::Pose, data)
    }

    fn require_frame(&self, frame: Frame) -> Result<()> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame,
                found: self.frame,
            });
        }
        Ok(())
    }

    fn require_kind(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }

    /// Difference of two vectors of the same kind expressed in the same frame.
    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        other.require_frame(self.frame)?;
        other.require_kind(self.kind)?;
        Ok(Self::new(self.frame, self.kind, self.data - other.data))
    }

    /// Power pairing `V·F` of a velocity and a force in a common frame.
    pub fn power(&self, force: &Self) -> Result<f64> {
        self.require_kind(Kind::Velocity)?;
        force.require_kind(Kind::Force)?;
        force.require_frame(self.frame)?;
        Ok(self.data.dot(&force.data))
    }
}

/// `^A U_B`: maps a force/moment vector expressed in `{B}` to the same vector
/// expressed in `{A}`; its transpose maps velocities from `{A}` to `{B}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformMatrix<const D: usize> {
    pub from_frame: Frame,
    pub to_frame: Frame,
    pub data: SMatrix<f64, D, D>,
}

impl<const D: usize> TransformMatrix<D>
where
    Dim<D>: Space<D>,
{
    /// Transform between two frames of a common rigid body, where `iso` is the
    /// pose of `to_frame` relative to `from_frame`.
    pub fn from_isometry(from_frame: Frame, to_frame: Frame, iso: &Isometry3<f64>) -> Result<Self> {
        if !<Dim<D> as Space<D>>::admits(iso) {
            return Err(Error::InvalidModel(format!(
                "transform {from_frame}->{to_frame} leaves the plane of motion"
            )));
        }
        Ok(Self {
            from_frame,
            to_frame,
            data: transform_matrix::<D>(iso),
        })
    }

    pub fn identity(from_frame: Frame, to_frame: Frame) -> Self {
        Self {
            from_frame,
            to_frame,
            data: SMatrix::identity(),
        }
    }
}

impl TransformMatrix<3> {
    /// Planar `^A U_B` for `{B}` rotated by `rotation` and located at `offset`
    /// (in `{A}` coordinates).
    pub fn planar(from_frame: Frame, to_frame: Frame, rotation: f64, offset: Vector2<f64>) -> Self {
        Self {
            from_frame,
            to_frame,
            data: transform_matrix::<3>(&planar_isometry(rotation, offset)),
        }
    }
}

/// `^B V = ^A U_Bᵀ ^A V`.
pub fn transform_velocity<const D: usize>(u: &TransformMatrix<D>, v: &SpatialVector<D>) -> Result<SpatialVector<D>> {
    v.require_kind(Kind::Velocity)?;
    v.require_frame(u.from_frame)?;
    Ok(SpatialVector::velocity(u.to_frame, u.data.transpose() * v.data))
}

/// `^A F = ^A U_B ^B F`.
pub fn transform_force<const D: usize>(u: &TransformMatrix<D>, f: &SpatialVector<D>) -> Result<SpatialVector<D>> {
    f.require_kind(Kind::Force)?;
    f.require_frame(u.to_frame)?;
    Ok(SpatialVector::force(u.from_frame, u.data * f.data))
}

/// Physical parameters of one rigid link, with dynamics expressed in its
/// base frame `{B_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel<const D: usize> {
    mass: f64,
    com: Vector3<f64>,
    inertia_com: Matrix3<f64>,
    tip: Isometry3<f64>,
    gravity: Vector3<f64>,
    mass_matrix: SMatrix<f64, D, D>,
    mass_matrix_inv: SMatrix<f64, D, D>,
    coriolis_bound: f64,
}

impl<const D: usize> LinkModel<D>
where
    Dim<D>: Space<D>,
{
    /// Builds a link from its mass, center of mass and rotational inertia
    /// about the center of mass (both in `{B_i}`), and the pose of `{T_i}`
    /// relative to `{B_i}`. Gravity defaults to `-9.81` along the world y axis.
    pub fn new(mass: f64, com: Vector3<f64>, inertia_com: Matrix3<f64>, tip: Isometry3<f64>) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidModel(format!("link mass must be positive, got {mass}")));
        }
        if !<Dim<D> as Space<D>>::admits(&tip) {
            return Err(Error::InvalidModel(
                "link tip transform leaves the plane of motion".into(),
            ));
        }
        let mass_matrix = <Dim<D> as Space<D>>::project_matrix(&mass_matrix6(mass, &com, &inertia_com));
        if (mass_matrix - mass_matrix.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidModel("link mass matrix is not symmetric".into()));
        }
        let chol = mass_matrix
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("link mass matrix is not positive definite".into()))?;
        let mut link = Self {
            mass,
            com,
            inertia_com,
            tip,
            gravity: Vector3::new(0.0, -STANDARD_GRAVITY, 0.0),
            mass_matrix,
            mass_matrix_inv: chol.inverse(),
            coriolis_bound: 0.0,
        };
        link.coriolis_bound = link.exact_coriolis_bound();
        Ok(link)
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }

    /// Overrides the stored Coriolis bound `M_c`. Values below the bound the
    /// model actually has are rejected.
    pub fn with_coriolis_bound(mut self, bound: f64) -> Result<Self> {
        let exact = self.exact_coriolis_bound();
        if !(bound >= exact * (1.0 - 1e-12)) {
            return Err(Error::InvalidModel(format!(
                "coriolis bound {bound} is below the model's bound {exact}"
            )));
        }
        self.coriolis_bound = bound;
        Ok(self)
    }

    fn exact_coriolis_bound(&self) -> f64 {
        let axes = <Dim<D> as Space<D>>::ANGULAR_AXES;
        let squares: f64 = axes
            .iter()
            .map(|&k| {
                let mut w = Vector3::zeros();
                w[k] = 1.0;
                let c = self.coriolis_matrix(&w);
                let norm = nalgebra::DMatrix::from_column_slice(D, D, c.as_slice())
                    .singular_values()
                    .max();
                norm * norm
            })
            .sum();
        squares.sqrt()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn com(&self) -> &Vector3<f64> {
        &self.com
    }

    pub fn inertia_com(&self) -> &Matrix3<f64> {
        &self.inertia_com
    }

    pub fn tip(&self) -> &Isometry3<f64> {
        &self.tip
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn mass_matrix(&self) -> &SMatrix<f64, D, D> {
        &self.mass_matrix
    }

    pub fn mass_matrix_inv(&self) -> &SMatrix<f64, D, D> {
        &self.mass_matrix_inv
    }

    /// `M_c` with `‖C(ω)‖ ≤ M_c ‖ω‖`.
    pub fn coriolis_bound(&self) -> f64 {
        self.coriolis_bound
    }

    /// Skew-symmetric Coriolis/centrifugal matrix `C(ω)`, linear in `ω`.
    pub fn coriolis_matrix(&self, omega: &Vector3<f64>) -> SMatrix<f64, D, D> {
        <Dim<D> as Space<D>>::project_matrix(&coriolis6(self.mass, &self.com, &self.inertia_com, omega))
    }

    /// `C(ω)` with `ω` taken from the angular part of a velocity vector.
    pub fn coriolis_from_velocity(&self, v: &SVector<f64, D>) -> SMatrix<f64, D, D> {
        self.coriolis_matrix(&angular_part::<D>(v))
    }

    /// Gravity term `G` in `{B_i}` for a frame with world orientation `orientation`.
    pub fn gravity_vector(&self, orientation: &Rotation3<f64>) -> SVector<f64, D> {
        let f = orientation.transpose() * (self.gravity * self.mass);
        let n = self.com.cross(&f);
        <Dim<D> as Space<D>>::project(&-Vector6::new(f.x, f.y, f.z, n.x, n.y, n.z))
    }

    /// Net force/moment `F* = M V̇ + C(ω) V + G`.
    pub fn net_force(
        &self,
        velocity: &SVector<f64, D>,
        acceleration: &SVector<f64, D>,
        orientation: &Rotation3<f64>,
    ) -> SVector<f64, D> {
        self.mass_matrix * acceleration
            + self.coriolis_from_velocity(velocity) * velocity
            + self.gravity_vector(orientation)
    }

    /// Kinetic energy `½ Vᵀ M V`.
    pub fn kinetic_energy(&self, velocity: &SVector<f64, D>) -> f64 {
        0.5 * velocity.dot(&(self.mass_matrix * velocity))
    }

    /// Potential energy of the link in the uniform gravity field, given the
    /// world pose of `{B_i}`.
    pub fn potential_energy(&self, pose: &Isometry3<f64>) -> f64 {
        let com_world = pose * nalgebra::Point3::from(self.com);
        -self.mass * self.gravity.dot(&com_world.coords)
    }
}

impl LinkModel<3> {
    /// Planar link with its center of mass `com_offset` along the link x axis,
    /// rotational inertia `inertia` about the center of mass, and tip frame
    /// `length` along x.
    pub fn planar(mass: f64, com_offset: f64, inertia: f64, length: f64) -> Result<Self> {
        let mut inertia_com = Matrix3::zeros();
        inertia_com[(2, 2)] = inertia;
        Self::new(
            mass,
            Vector3::new(com_offset, 0.0, 0.0),
            inertia_com,
            planar_isometry(0.0, Vector2::new(length, 0.0)),
        )
    }
}

/// `M = [[m I, -m c×], [m c×, I_c - m c× c×]]` about the frame origin.
pub fn mass_matrix6(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>) -> Matrix6<f64> {
    let c = skew(com);
    blocks(
        &(Matrix3::identity() * mass),
        &(-c * mass),
        &(c * mass),
        &(inertia_com - c * c * mass),
    )
}

/// Skew-symmetric body-frame Coriolis matrix
/// `C(ω) = [[m ω×, -m ω× c×], [m c× ω×, -(I_o ω)×]]`.
pub fn coriolis6(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>, omega: &Vector3<f64>) -> Matrix6<f64> {
    let c = skew(com);
    let w = skew(omega);
    let inertia_origin = inertia_com - c * c * mass;
    blocks(
        &(w * mass),
        &(-w * c * mass),
        &(c * w * mass),
        &(-skew(&(inertia_origin * omega))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    type V3 = SVector<f64, 3>;

    fn reference_link() -> LinkModel<3> {
        LinkModel::planar(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn a() -> Frame {
        Frame::Base(0)
    }
    fn b() -> Frame {
        Frame::Base(1)
    }

    #[test]
    fn planar_transform_examples() {
        let u = TransformMatrix::planar(a(), b(), 0.0, Vector2::new(1.0, 0.0));
        let expected = SMatrix::<f64, 3, 3>::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0);
        assert_relative_eq!(u.data, expected, epsilon = 1e-15);

        let id = TransformMatrix::planar(a(), b(), 0.0, Vector2::zeros());
        assert_relative_eq!(id.data, SMatrix::<f64, 3, 3>::identity(), epsilon = 1e-15);

        let flip = TransformMatrix::planar(a(), b(), PI, Vector2::zeros());
        let expected = SMatrix::<f64, 3, 3>::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(flip.data, expected, epsilon = 1e-15);
    }

    #[test]
    fn rigid_point_kinematics() {
        // Offset point velocity must equal v + ω × p, independently computed.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let angle = rng.random_range(-PI..PI);
            let p = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let v = V3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let u = TransformMatrix::planar(a(), b(), angle, p);
            let vb = transform_velocity(&u, &SpatialVector::velocity(a(), v)).unwrap();
            let point_vel = Vector2::new(v[0] - v[2] * p.y, v[1] + v[2] * p.x);
            let (c, s) = (angle.cos(), angle.sin());
            let in_b = Vector2::new(c * point_vel.x + s * point_vel.y, -s * point_vel.x + c * point_vel.y);
            assert_relative_eq!(vb.data[0], in_b.x, epsilon = 1e-12);
            assert_relative_eq!(vb.data[1], in_b.y, epsilon = 1e-12);
            assert_relative_eq!(vb.data[2], v[2], epsilon = 1e-12);
        }
    }

    #[test]
    fn velocity_and_force_examples() {
        let u = TransformMatrix::planar(a(), b(), 0.0, Vector2::new(1.0, 0.0));
        let id = TransformMatrix::<3>::identity(a(), b());

        let v = transform_velocity(&id, &SpatialVector::velocity(a(), V3::new(1.0, 2.0, 3.0))).unwrap();
        assert_eq!(v.data, V3::new(1.0, 2.0, 3.0));
        assert_eq!(v.frame, b());

        let v = transform_velocity(&u, &SpatialVector::velocity(a(), V3::new(0.0, 0.0, 1.0))).unwrap();
        assert_relative_eq!(v.data, V3::new(0.0, 1.0, 1.0));
        let v = transform_velocity(&u, &SpatialVector::velocity(a(), V3::new(1.0, 0.0, 0.0))).unwrap();
        assert_relative_eq!(v.data, V3::new(1.0, 0.0, 0.0));

        let f = transform_force(&id, &SpatialVector::force(b(), V3::new(1.0, 0.0, 5.0))).unwrap();
        assert_eq!(f.data, V3::new(1.0, 0.0, 5.0));
        assert_eq!(f.frame, a());
        let f = transform_force(&u, &SpatialVector::force(b(), V3::new(0.0, 1.0, 0.0))).unwrap();
        assert_relative_eq!(f.data, V3::new(0.0, 1.0, 1.0));
    }

    #[test]
    fn transforms_reject_wrong_frame_or_kind() {
        let u = TransformMatrix::<3>::identity(a(), b());
        let wrong_frame = SpatialVector::velocity(b(), V3::zeros());
        assert!(matches!(
            transform_velocity(&u, &wrong_frame),
            Err(Error::FrameMismatch { .. })
        ));
        let wrong_kind = SpatialVector::force(a(), V3::zeros());
        assert!(matches!(
            transform_velocity(&u, &wrong_kind),
            Err(Error::KindMismatch { .. })
        ));
        assert!(transform_force(&u, &SpatialVector::force(a(), V3::zeros())).is_err());
        assert!(transform_force(&u, &SpatialVector::velocity(b(), V3::zeros())).is_err());
    }

    #[test]
    fn power_invariance_planar_and_spatial() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let iso = planar_isometry(
                rng.random_range(-PI..PI),
                Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            );
            let u = TransformMatrix::<3>::from_isometry(a(), b(), &iso).unwrap();
            let v = SpatialVector::velocity(a(), V3::from_fn(|_, _| rng.random_range(-5.0..5.0)));
            let f = SpatialVector::force(b(), V3::from_fn(|_, _| rng.random_range(-5.0..5.0)));
            let lhs = transform_velocity(&u, &v).unwrap().power(&f).unwrap();
            let rhs = v.power(&transform_force(&u, &f).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));

            let axis = nalgebra::Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let iso6 = Isometry3::from_parts(
                Translation3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
                UnitQuaternion::from_axis_angle(&axis, rng.random_range(-PI..PI)),
            );
            let u6 = TransformMatrix::<6>::from_isometry(a(), b(), &iso6).unwrap();
            let v6 = SpatialVector::velocity(a(), Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0)));
            let f6 = SpatialVector::force(b(), Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0)));
            let lhs = transform_velocity(&u6, &v6).unwrap().power(&f6).unwrap();
            let rhs = v6.power(&transform_force(&u6, &f6).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn out_of_plane_transform_rejected() {
        let iso = Isometry3::translation(0.0, 0.0, 1.0);
        assert!(TransformMatrix::<3>::from_isometry(a(), b(), &iso).is_err());
        assert!(TransformMatrix::<6>::from_isometry(a(), b(), &iso).is_ok());
    }

    #[test]
    fn reference_link_matrices() {
        let link = reference_link();
        let m = SMatrix::<f64, 3, 3>::new(1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 2.0);
        assert_relative_eq!(*link.mass_matrix(), m, epsilon = 1e-15);

        let c1 = link.coriolis_matrix(&Vector3::z());
        let expected = SMatrix::<f64, 3, 3>::new(0.0, -1.0, -1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert_relative_eq!(c1, expected, epsilon = 1e-15);
        assert_eq!(link.coriolis_matrix(&Vector3::zeros()), SMatrix::<f64, 3, 3>::zeros());

        let c2 = link.coriolis_matrix(&(Vector3::z() * 2.0));
        assert_relative_eq!(c2, expected * 2.0, epsilon = 1e-15);
        assert_relative_eq!(c2.singular_values().max(), 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(link.coriolis_bound(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gravity_examples() {
        let link = reference_link();
        let g0 = link.gravity_vector(&planar_rotation(0.0));
        assert_relative_eq!(g0, V3::new(0.0, 9.81, 9.81), epsilon = 1e-12);
        let g90 = link.gravity_vector(&planar_rotation(PI / 2.0));
        assert!(g90[2].abs() < 1e-12);
        assert_relative_eq!(g90[0], 9.81, epsilon = 1e-12);
        for &theta in &[0.3, -1.2, 2.9] {
            let g1 = link.gravity_vector(&planar_rotation(theta));
            let g2 = link.gravity_vector(&planar_rotation(theta + 2.0 * PI));
            assert_relative_eq!(g1, g2, epsilon = 1e-12);
            assert_relative_eq!(g1[2], 9.81 * theta.cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn net_force_examples() {
        let link = reference_link();
        let r = planar_rotation(PI / 2.0);
        let gravity_free = reference_link().with_gravity(Vector3::zeros());
        assert_eq!(gravity_free.net_force(&V3::zeros(), &V3::zeros(), &r), V3::zeros());
        assert!(link.net_force(&V3::zeros(), &V3::zeros(), &r)[2].abs() < 1e-12);

        let f = link.net_force(&V3::zeros(), &V3::new(1.0, 0.0, 0.0), &r);
        assert_relative_eq!(f, V3::new(1.0 + 9.81, 0.0, 0.0), epsilon = 1e-12);
        let f = gravity_free.net_force(&V3::zeros(), &V3::new(1.0, 0.0, 0.0), &r);
        assert_relative_eq!(f, V3::new(1.0, 0.0, 0.0), epsilon = 1e-12);

        let f = gravity_free.net_force(&V3::new(0.0, 0.0, 1.0), &V3::zeros(), &r);
        assert_relative_eq!(f, V3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn net_force_superposition_in_acceleration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let link = reference_link();
        for _ in 0..100 {
            let v = V3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let a1 = V3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let a2 = V3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let r = planar_rotation(rng.random_range(-PI..PI));
            let base = link.net_force(&v, &V3::zeros(), &r);
            let lhs = link.net_force(&v, &(a1 * 2.0 + a2 * 3.0), &r) - base;
            let rhs = (link.net_force(&v, &a1, &r) - base) * 2.0 + (link.net_force(&v, &a2, &r) - base) * 3.0;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-11);
        }
    }

    fn random_spatial_link(rng: &mut ChaCha8Rng) -> LinkModel<6> {
        let mass = rng.random_range(0.5..3.0);
        let com = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a = Matrix3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let inertia = a * a.transpose() + Matrix3::identity() * 0.1;
        LinkModel::<6>::new(mass, com, inertia, Isometry3::identity()).unwrap()
    }

    #[test]
    fn coriolis_structure_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let planar = reference_link();
        for _ in 0..1000 {
            let link = random_spatial_link(&mut rng);
            let w1 = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let w2 = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let (a1, a2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));

            let c = link.coriolis_matrix(&w1);
            assert!((c + c.transpose()).abs().max() == 0.0);
            let lin = link.coriolis_matrix(&(w1 * a1 + w2 * a2))
                - (link.coriolis_matrix(&w1) * a1 + link.coriolis_matrix(&w2) * a2);
            assert!(lin.abs().max() <= 1e-14 * (1.0 + c.abs().max()) * 10.0);
            assert!(c.singular_values().max() <= link.coriolis_bound() * w1.norm() * (1.0 + 1e-12));

            let wz = Vector3::new(0.0, 0.0, w1.z);
            let cp = planar.coriolis_matrix(&wz);
            assert!((cp + cp.transpose()).abs().max() == 0.0);
            assert!(cp.singular_values().max() <= planar.coriolis_bound() * wz.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spatial_dynamics_match_newton_euler() {
        // Body-frame Newton-Euler about the frame origin, written directly from
        // momenta, compared against M V̇ + C V.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let link = random_spatial_link(&mut rng).with_gravity(Vector3::zeros());
            let v = Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let vd = Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let (lin, ang) = (v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned());
            let m = link.mass();
            let c = *link.com();
            let io = link.inertia_com() - skew(&c) * skew(&c) * m;
            let p = (lin + ang.cross(&c)) * m;
            let h = io * ang + c.cross(&lin) * m;
            let bias_f = ang.cross(&p);
            let bias_n = ang.cross(&h) + lin.cross(&p);
            let mv = mass_matrix6(m, &c, link.inertia_com()) * vd;
            let expected = mv + Vector6::new(bias_f.x, bias_f.y, bias_f.z, bias_n.x, bias_n.y, bias_n.z);
            let got = link.net_force(&v, &vd, &Rotation3::identity());
            assert_relative_eq!(got, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn coriolis_bound_override_validated() {
        let link = reference_link();
        assert!(link.clone().with_coriolis_bound(1.0).is_err());
        assert_eq!(link.with_coriolis_bound(2.0).unwrap().coriolis_bound(), 2.0);
    }

    #[test]
    fn invalid_links_rejected() {
        assert!(LinkModel::planar(0.0, 1.0, 1.0, 1.0).is_err());
        // point mass with no rotational inertia has a singular planar mass matrix
        assert!(LinkModel::planar(1.0, 1.0, 0.0, 1.0).is_err());
    }
}
