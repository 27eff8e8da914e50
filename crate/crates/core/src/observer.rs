//! Decentralized velocity observers, one per link and one per joint.

use nalgebra::{Rotation3, SVector};
use serde::{Deserialize, Serialize};

use crate::chain::JointModel;
use crate::error::{Error, Result};
use crate::spatial::{angular_part, Dim, LinkModel, Space};

/// Link observer state: pose estimate `P̂` and auxiliary velocity `Z`,
/// both expressed in `{B_i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkObserverState<const D: usize> {
    pub p_hat: SVector<f64, D>,
    pub z: SVector<f64, D>,
}

impl<const D: usize> LinkObserverState<D> {
    pub fn new(p_hat: SVector<f64, D>, z: SVector<f64, D>) -> Self {
        Self { p_hat, z }
    }

    pub fn is_finite(&self) -> bool {
        self.p_hat.iter().chain(self.z.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointObserverState {
    pub q_hat: f64,
    pub z: f64,
}

impl JointObserverState {
    pub fn new(q_hat: f64, z: f64) -> Self {
        Self { q_hat, z }
    }

    pub fn is_finite(&self) -> bool {
        self.q_hat.is_finite() && self.z.is_finite()
    }
}

/// Joint observer gains. `big_l` is always `ell + 1/I_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointObserverGain {
    pub ell: f64,
    pub big_l: f64,
}

impl JointObserverGain {
    pub fn new(ell: f64, joint: &JointModel) -> Result<Self> {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::InvalidGain {
                name: "ell".into(),
                reason: format!("must be positive, got {ell}"),
            });
        }
        Ok(Self {
            ell,
            big_l: ell + 1.0 / joint.rotor_inertia,
        })
    }
}

/// Scalar (diagonal) link gains `L_B` and per-joint gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverGains {
    pub link: Vec<f64>,
    pub joint: Vec<JointObserverGain>,
}

impl ObserverGains {
    pub fn new(link: Vec<f64>, ell: &[f64], joints: &[JointModel]) -> Result<Self> {
        if link.len() != joints.len() || ell.len() != joints.len() {
            return Err(Error::DimensionMismatch {
                what: "observer gains",
                expected: joints.len(),
                found: if link.len() != joints.len() {
                    link.len()
                } else {
                    ell.len()
                },
            });
        }
        for &lb in &link {
            if !(lb > 0.0) || !lb.is_finite() {
                return Err(Error::InvalidGain {
                    name: "L_B".into(),
                    reason: format!("must be positive, got {lb}"),
                });
            }
        }
        let joint = ell
            .iter()
            .zip(joints)
            .map(|(&e, j)| JointObserverGain::new(e, j))
            .collect::<Result<_>>()?;
        Ok(Self { link, joint })
    }
}

/// `V̂ = Z − M⁻¹ L_B (P̂ − P)`.
pub fn link_observed_velocity<const D: usize>(
    state: &LinkObserverState<D>,
    p_meas: &SVector<f64, D>,
    link: &LinkModel<D>,
    l_b: f64,
) -> SVector<f64, D>
where
    Dim<D>: Space<D>,
{
    state.z - link.mass_matrix_inv() * ((state.p_hat - p_meas) * l_b)
}

/// Rates `(P̂̇, Ż)` of the link observer and the observed velocity `V̂ = P̂̇`.
/// `orientation` is the world orientation of `{B_i}`, used for gravity.
pub fn link_observer_rates<const D: usize>(
    state: &LinkObserverState<D>,
    f_star: &SVector<f64, D>,
    p_meas: &SVector<f64, D>,
    orientation: &Rotation3<f64>,
    link: &LinkModel<D>,
    l_b: f64,
) -> (LinkObserverState<D>, SVector<f64, D>)
where
    Dim<D>: Space<D>,
{
    let v_hat = link_observed_velocity(state, p_meas, link, l_b);
    let omega_hat = angular_part::<D>(&v_hat);
    let rhs = f_star - link.coriolis_matrix(&omega_hat) * v_hat - link.gravity_vector(orientation);
    let z_dot = link.mass_matrix_inv() * rhs;
    (LinkObserverState::new(v_hat, z_dot), v_hat)
}

/// `q̂̇ = z − L (q̂ − q)`.
pub fn joint_observed_rate(state: &JointObserverState, q_meas: f64, gain: &JointObserverGain) -> f64 {
    state.z - gain.big_l * (state.q_hat - q_meas)
}

/// Rates `(q̂̇, ż)` of the joint observer; the first component is also the
/// observed joint velocity.
pub fn joint_observer_rates(
    state: &JointObserverState,
    tau: f64,
    tau_a: f64,
    q_meas: f64,
    joint: &JointModel,
    gain: &JointObserverGain,
) -> (JointObserverState, f64) {
    let qd_hat = joint_observed_rate(state, q_meas, gain);
    let z_dot = (tau - tau_a - joint.friction.eval(qd_hat) - gain.ell * (state.q_hat - q_meas)) / joint.rotor_inertia;
    (JointObserverState::new(qd_hat, z_dot), qd_hat)
}

/// `s = (q̂̇ − q̇) + ℓ (q̂ − q)`.
pub fn joint_composite_error(rate_error: f64, position_error: f64, ell: f64) -> f64 {
    rate_error + ell * position_error
}

/// Observer estimation errors of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct JointObserverError {
    /// `q̂ − q`
    pub position: f64,
    /// `q̂̇ − q̇`
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverFunctionals {
    pub link: Vec<f64>,
    pub joint: Vec<f64>,
    pub s: Vec<f64>,
}

/// `½ eᵀ M e` for the link velocity error `e = V̂ − V`.
pub fn link_observer_functional<const D: usize>(error: &SVector<f64, D>, link: &LinkModel<D>) -> f64
where
    Dim<D>: Space<D>,
{
    0.5 * error.dot(&(link.mass_matrix() * error))
}

/// `½ I_m (q̂̇ − q̇)² + ½ ℓ (q̂ − q)² + ½ I_m s²`.
pub fn joint_observer_functional(error: &JointObserverError, joint: &JointModel, gain: &JointObserverGain) -> f64 {
    let s = joint_composite_error(error.rate, error.position, gain.ell);
    let im = joint.rotor_inertia;
    0.5 * im * error.rate * error.rate + 0.5 * gain.ell * error.position * error.position + 0.5 * im * s * s
}

pub fn observer_error_functionals<const D: usize>(
    link_errors: &[SVector<f64, D>],
    joint_errors: &[JointObserverError],
    links: &[LinkModel<D>],
    joints: &[JointModel],
    gains: &ObserverGains,
) -> Result<ObserverFunctionals>
where
    Dim<D>: Space<D>,
{
    let n = links.len();
    for (what, found) in [
        ("link observer errors", link_errors.len()),
        ("joint observer errors", joint_errors.len()),
        ("joints", joints.len()),
        ("joint observer gains", gains.joint.len()),
    ] {
        if found != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                found,
            });
        }
    }
    Ok(ObserverFunctionals {
        link: link_errors
            .iter()
            .zip(links)
            .map(|(e, l)| link_observer_functional(e, l))
            .collect(),
        joint: joint_errors
            .iter()
            .zip(joints.iter().zip(&gains.joint))
            .map(|(e, (j, g))| joint_observer_functional(e, j, g))
            .collect(),
        s: joint_errors
            .iter()
            .zip(&gains.joint)
            .map(|(e, g)| joint_composite_error(e.rate, e.position, g.ell))
            .collect(),
    })
}
