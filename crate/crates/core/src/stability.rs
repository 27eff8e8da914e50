//! Gain certificates, attraction radius, the closed-loop Lyapunov function
//! and trajectory decay audits.

use nalgebra::{DMatrix, DVector, SVector};
use serde::Serialize;

use crate::chain::{ChainModel, JointModel};
use crate::controller::{ControlGains, DesiredTrajectory};
use crate::error::{Error, Result};
use crate::observer::{joint_composite_error, ObserverGains};
use crate::spatial::{Dim, LinkModel, Space, SpatialVector};

/// `p = (V_r − V) · (F_r − F)` with all four vectors in one frame.
pub fn virtual_power_flow<const D: usize>(
    v_r: &SpatialVector<D>,
    v: &SpatialVector<D>,
    f_r: &SpatialVector<D>,
    f: &SpatialVector<D>,
) -> Result<f64> {
    let dv = v_r.checked_sub(v)?;
    let df = f_r.checked_sub(f)?;
    dv.power(&df)
}

/// One strict inequality with its signed margin (lhs − rhs).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub margin: f64,
}

impl Condition {
    fn new(name: impl Into<String>, margin: f64) -> Self {
        Self {
            name: name.into(),
            margin,
        }
    }

    pub fn holds(&self) -> bool {
        self.margin > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub conditions: Vec<Condition>,
}

impl Verdict {
    fn from_conditions(conditions: Vec<Condition>) -> Self {
        Self {
            pass: conditions.iter().all(Condition::holds),
            conditions,
        }
    }

    pub fn violations(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.holds())
    }
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGain {
            name: name.into(),
            reason: format!("must be positive, got {value}"),
        })
    }
}

fn require_nonnegative(name: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be non-negative, got {value}"
        )))
    }
}

/// Threshold `y(1 + y/2) + K_B/2` with `y = M_c M_v`.
pub fn link_observer_gain_threshold(k_b: f64, m_c: f64, m_v: f64) -> f64 {
    let y = m_c * m_v;
    y * (1.0 + 0.5 * y) + 0.5 * k_b
}

/// Largest link velocity for which the link gain condition still holds:
/// `(√(1 + 2L_B − K_B) − 1) / M_c`.
pub fn certified_velocity_bound(k_b: f64, l_b: f64, m_c: f64) -> Result<f64> {
    let radicand = 1.0 + 2.0 * l_b - k_b;
    if radicand < 0.0 {
        return Err(Error::InvalidGain {
            name: "L_B".into(),
            reason: format!("1 + 2 L_B - K_B = {radicand} is negative"),
        });
    }
    if m_c == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((radicand.sqrt() - 1.0) / m_c)
}

pub fn check_link_gains(k_b: f64, l_b: f64, m_c: f64, m_v: f64) -> Result<Verdict> {
    require_positive("K_B", k_b)?;
    require_positive("L_B", l_b)?;
    require_nonnegative("M_c", m_c)?;
    require_nonnegative("M_v", m_v)?;
    Ok(Verdict::from_conditions(vec![
        Condition::new("link gain condition: K_B > 1", k_b - 1.0),
        Condition::new(
            "link gain condition: L_B > M_c*M_v*(1 + M_c*M_v/2) + K_B/2",
            l_b - link_observer_gain_threshold(k_b, m_c, m_v),
        ),
    ]))
}

pub fn check_joint_gains(k: f64, ell: f64, rotor_inertia: f64, m_c: f64) -> Result<Verdict> {
    require_positive("k", k)?;
    require_positive("I_m", rotor_inertia)?;
    require_nonnegative("m_c", m_c)?;
    if !ell.is_finite() {
        return Err(Error::InvalidGain {
            name: "ell".into(),
            reason: format!("must be finite, got {ell}"),
        });
    }
    let big_l = ell + 1.0 / rotor_inertia;
    Ok(Verdict::from_conditions(vec![
        Condition::new(
            "joint gain condition: 2*I_m*L > max(2, m_c^2 + k)",
            2.0 * rotor_inertia * big_l - f64::max(2.0, m_c * m_c + k),
        ),
        Condition::new("joint gain condition: ell > 0", ell),
    ]))
}

/// Model and gain dependent constants used by the certificates and audits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityBounds {
    /// `M_c` per link.
    pub coriolis: Vec<f64>,
    /// Design velocity bound `M_v` per link.
    pub velocity: Vec<f64>,
    /// `m_c` per joint.
    pub friction_lipschitz: Vec<f64>,
    pub m_u: f64,
    pub alpha_m: f64,
    pub alpha_big_m: f64,
    pub alpha_p: f64,
    /// `min{½(K_B − 1), M_{i,2}, ½}` per link.
    pub link_rates: Vec<f64>,
    /// `min{½k, I_m L − (m_c² + k)/2, ½}` per joint.
    pub joint_rates: Vec<f64>,
}

fn symmetric_eigen_range(m: DMatrix<f64>) -> (f64, f64) {
    let eig = m.symmetric_eigen().eigenvalues;
    (eig.min(), eig.max())
}

fn spectral_norm(m: DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

impl StabilityBounds {
    pub fn new<const D: usize>(
        chain: &ChainModel<D>,
        observer: &ObserverGains,
        control: &ControlGains,
        velocity_bounds: &[f64],
    ) -> Result<Self>
    where
        Dim<D>: Space<D>,
    {
        let n = chain.dof();
        chain.check_len("velocity bounds", velocity_bounds.len())?;
        chain.check_len("observer gains", observer.link.len())?;
        chain.check_len("control gains", control.dof())?;
        let coriolis: Vec<f64> = chain.links().iter().map(LinkModel::coriolis_bound).collect();
        let friction_lipschitz: Vec<f64> = chain.joints().iter().map(|j| j.friction.lipschitz()).collect();
        let m_u = chain
            .inter_base_transforms()
            .into_iter()
            .map(|u| spectral_norm(DMatrix::from_column_slice(D, D, u.as_slice())))
            .fold(1.0, f64::max);

        let mut alpha_m = f64::INFINITY;
        let mut alpha_big_m = 0.0f64;
        for i in 0..n {
            let m = chain.link(i).mass_matrix();
            let (lo, hi) = symmetric_eigen_range(DMatrix::from_column_slice(D, D, m.as_slice()));
            let im = chain.joint(i).rotor_inertia;
            let ell = observer.joint[i].ell;
            alpha_m = alpha_m.min(lo).min(im);
            alpha_big_m = alpha_big_m.max(hi).max(im + 2.0 / ell);
        }

        let link_rates: Vec<f64> = (0..n)
            .map(|i| {
                let k_b = control.link[i];
                let m2 = observer.link[i] - link_observer_gain_threshold(k_b, coriolis[i], velocity_bounds[i]);
                (0.5 * (k_b - 1.0)).min(m2).min(0.5)
            })
            .collect();
        let joint_rates: Vec<f64> = (0..n)
            .map(|i| {
                let j = chain.joint(i);
                let k = control.k[i];
                let m_i = j.rotor_inertia * observer.joint[i].big_l - 0.5 * (friction_lipschitz[i].powi(2) + k);
                (0.5 * k).min(m_i).min(0.5)
            })
            .collect();
        let alpha_p = link_rates.iter().chain(joint_rates.iter()).copied().fold(0.5, f64::min);

        Ok(Self {
            coriolis,
            velocity: velocity_bounds.to_vec(),
            friction_lipschitz,
            m_u,
            alpha_m,
            alpha_big_m,
            alpha_p,
            link_rates,
            joint_rates,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractionRadius {
    /// Minimum over links; `<= 0` means the guaranteed region is empty.
    pub radius: f64,
    pub per_link: Vec<f64>,
}

impl AttractionRadius {
    pub fn is_empty(&self) -> bool {
        !(self.radius > 0.0)
    }
}

/// Radius of the ball of initial error states from which convergence is
/// guaranteed.
pub fn attraction_radius(
    bounds: &StabilityBounds,
    k_b: &[f64],
    l_b: &[f64],
    rate_bounds: &[f64],
    lambda: &[f64],
) -> Result<AttractionRadius> {
    let n = bounds.coriolis.len();
    for (what, len) in [
        ("K_B", k_b.len()),
        ("L_B", l_b.len()),
        ("trajectory rate bounds", rate_bounds.len()),
        ("lambda", lambda.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    let inv_alpha = 1.0 / bounds.alpha_big_m;
    for &l in lambda {
        if !(4.0 * l > inv_alpha) {
            return Err(Error::Hypothesis(format!(
                "convergence hypothesis: 4*lambda > 1/alpha_M ({} <= {})",
                4.0 * l,
                inv_alpha
            )));
        }
    }
    let scale = (bounds.alpha_m / bounds.alpha_big_m).sqrt();
    let mut feed = 0.0;
    let mut gain = 0.0;
    let mut per_link = Vec::with_capacity(n);
    for i in 0..n {
        let mu = bounds.m_u.powi(i as i32 + 1);
        feed += mu * rate_bounds[i];
        gain += mu * 16.0 * lambda[i] / (4.0 * lambda[i] - inv_alpha);
        let vmax = certified_velocity_bound(k_b[i], l_b[i], bounds.coriolis[i])?;
        per_link.push(scale * (vmax - feed) / (1.0 + gain));
    }
    let radius = per_link.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AttractionRadius { radius, per_link })
}

/// Error coordinates of one link subsystem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkError<const D: usize> {
    /// `V_r − V`
    pub control: SVector<f64, D>,
    /// `V̂ − V`
    pub observer: SVector<f64, D>,
}

/// Error coordinates of one joint subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointError {
    /// `q̇_r − q̇`
    pub control: f64,
    /// `q̂̇ − q̇`
    pub observer: f64,
    /// `s = (q̂̇ − q̇) + ℓ (q̂ − q)`
    pub s: f64,
}

impl JointError {
    pub fn new(control: f64, observer: f64, position: f64, ell: f64) -> Self {
        Self {
            control,
            observer,
            s: joint_composite_error(observer, position, ell),
        }
    }

    /// `q̂ − q` recovered from `s`.
    pub fn position(&self, ell: f64) -> f64 {
        (self.s - self.observer) / ell
    }

    pub fn norm_squared(&self) -> f64 {
        self.control * self.control + self.observer * self.observer + self.s * self.s
    }
}

impl<const D: usize> LinkError<D> {
    pub fn norm_squared(&self) -> f64 {
        self.control.norm_squared() + self.observer.norm_squared()
    }
}

/// The closed-loop error state `x`, grouped per subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStateVector<const D: usize> {
    pub links: Vec<LinkError<D>>,
    pub joints: Vec<JointError>,
}

impl<const D: usize> ErrorStateVector<D> {
    pub fn zeros(n: usize) -> Self {
        Self {
            links: vec![
                LinkError {
                    control: SVector::zeros(),
                    observer: SVector::zeros()
                };
                n
            ],
            joints: vec![
                JointError {
                    control: 0.0,
                    observer: 0.0,
                    s: 0.0
                };
                n
            ],
        }
    }

    /// Flattened as `[(V_r − V), (V̂ − V), q̇_r − q̇, q̂̇ − q̇, s]` per subsystem.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.links.len() * (2 * D + 3));
        for (l, j) in self.links.iter().zip(&self.joints) {
            out.extend(l.control.iter());
            out.extend(l.observer.iter());
            out.extend([j.control, j.observer, j.s]);
        }
        DVector::from_vec(out)
    }

    pub fn norm_squared(&self) -> f64 {
        self.links.iter().map(LinkError::norm_squared).sum::<f64>()
            + self.joints.iter().map(JointError::norm_squared).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovValue {
    pub total: f64,
    pub link: Vec<f64>,
    pub joint: Vec<f64>,
}

/// `½ΔV_rᵀ M ΔV_r + ½ΔV̂ᵀ M ΔV̂`
pub fn link_lyapunov<const D: usize>(err: &LinkError<D>, link: &LinkModel<D>) -> f64
where
    Dim<D>: Space<D>,
{
    let m = link.mass_matrix();
    0.5 * err.control.dot(&(m * err.control)) + 0.5 * err.observer.dot(&(m * err.observer))
}

/// `½I_m (q̇_r − q̇)² + ½I_m (q̂̇ − q̇)² + ½ℓ (q̂ − q)² + ½I_m s²`
pub fn joint_lyapunov(err: &JointError, joint: &JointModel, ell: f64) -> f64 {
    let im = joint.rotor_inertia;
    let eq = err.position(ell);
    0.5 * im * (err.control * err.control + err.observer * err.observer + err.s * err.s) + 0.5 * ell * eq * eq
}

pub fn lyapunov_total<const D: usize>(
    chain: &ChainModel<D>,
    observer: &ObserverGains,
    x: &ErrorStateVector<D>,
) -> Result<LyapunovValue>
where
    Dim<D>: Space<D>,
{
    chain.check_len("link error states", x.links.len())?;
    chain.check_len("joint error states", x.joints.len())?;
    let link: Vec<f64> = x
        .links
        .iter()
        .zip(chain.links())
        .map(|(e, l)| link_lyapunov(e, l))
        .collect();
    let joint: Vec<f64> = x
        .joints
        .iter()
        .enumerate()
        .map(|(i, e)| joint_lyapunov(e, chain.joint(i), observer.joint[i].ell))
        .collect();
    let total = link.iter().sum::<f64>() + joint.iter().sum::<f64>();
    Ok(LyapunovValue { total, link, joint })
}

/// Everything the decay audit needs from one time step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSample {
    pub t: f64,
    pub nu: f64,
    pub nu_link: Vec<f64>,
    pub nu_joint: Vec<f64>,
    pub x_norm_sq: f64,
    pub link_x_norm_sq: Vec<f64>,
    pub joint_x_norm_sq: Vec<f64>,
    /// `p_{B_i}`, `i = 1..n`
    pub p_base: Vec<f64>,
    /// `p_{T_i}`, `i = 0..n` (`p_{T_0} = p_{B_0}`)
    pub p_tip: Vec<f64>,
    /// `ΔV_{B_i}ᵀ(F*_r − F*) − (p_{B_i} − p_{T_i})`
    pub link_identity_residual: Vec<f64>,
    /// `(q̇_{ir} − q̇_i)(τ_{ar,i} − τ_{a,i}) − (p_{B_i} − p_{T_{i−1}})`
    pub joint_identity_residual: Vec<f64>,
    /// `Σ_i ΔV_{B_i}ᵀ(F*_r − F*) − Σ_i (q̇_{ir} − q̇_i)(τ_{ar,i} − τ_{a,i})`
    pub vpf_residual: f64,
    /// `‖^{B_i}V‖`
    pub link_velocity_norm: Vec<f64>,
    /// Absolute rounding error of `nu`: the error state is formed from
    /// differences of signals much larger than itself, so it carries an
    /// absolute error of order `ε` times the signal magnitude.
    pub nu_rounding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCriteria {
    pub alpha_p: f64,
    pub link_rates: Vec<f64>,
    pub joint_rates: Vec<f64>,
    /// Time window for the log-linear fit of `ν`.
    pub fit_window: (f64, f64),
}

impl DecayCriteria {
    pub fn from_bounds(bounds: &StabilityBounds, fit_window: (f64, f64)) -> Self {
        Self {
            alpha_p: bounds.alpha_p,
            link_rates: bounds.link_rates.clone(),
            joint_rates: bounds.joint_rates.clone(),
            fit_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstStep {
    pub t: f64,
    /// `ν̇ + α_p‖x‖² − tol`; positive means a violation.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub samples: usize,
    pub audited_steps: usize,
    pub violations: usize,
    pub worst: Option<WorstStep>,
    pub max_vpf_residual: f64,
    pub max_link_identity_residual: f64,
    pub max_joint_identity_residual: f64,
    pub link_subsystem_violations: Vec<usize>,
    pub joint_subsystem_violations: Vec<usize>,
    /// Least-squares slope of `ln ν` over the fit window.
    pub fitted_rate: Option<f64>,
    pub nu_initial: f64,
    pub nu_final: f64,
    pub realized_velocity_bound: Vec<f64>,
}

/// Relative spacing error accepted between consecutive sample times.
const SAMPLING_TOLERANCE: f64 = 1e-6;
/// Safety factor on the central-difference truncation error `dt²/6 |ν⃛|`.
const TRUNCATION_FACTOR: f64 = 10.0;
/// Rounding floor, in units of the per-sample rounding estimate over `dt`.
const ROUNDING_FACTOR: f64 = 64.0;

fn central_rates(values: &[f64], dt: f64) -> Vec<f64> {
    (1..values.len() - 1)
        .map(|k| (values[k + 1] - values[k - 1]) / (2.0 * dt))
        .collect()
}

/// Per-step tolerance for the central difference at index `k` (1-based
/// interior), from local third differences plus a rounding floor.
fn difference_tolerances(values: &[f64], rounding: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let third: Vec<f64> = if n >= 5 {
        (2..n - 2)
            .map(|j| {
                (values[j + 2] - 2.0 * values[j + 1] + 2.0 * values[j - 1] - values[j - 2]).abs() / (2.0 * dt.powi(3))
            })
            .collect()
    } else {
        Vec::new()
    };
    (1..n - 1)
        .map(|k| {
            // third[j - 2] is centred at index j
            let lo = k.saturating_sub(2).max(2);
            let hi = (k + 2).min(n.saturating_sub(3));
            let local = if lo <= hi && !third.is_empty() {
                (lo..=hi).map(|j| third[j - 2]).fold(0.0, f64::max)
            } else {
                0.0
            };
            let scale = values[k - 1].abs().max(values[k].abs()).max(values[k + 1].abs());
            let floor = (f64::EPSILON * scale)
                .max(rounding[k - 1])
                .max(rounding[k])
                .max(rounding[k + 1]);
            TRUNCATION_FACTOR * dt * dt * local + ROUNDING_FACTOR * floor / dt
        })
        .collect()
}

fn log_linear_slope(samples: &[AuditSample], window: (f64, f64)) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.t >= window.0 && s.t <= window.1 && s.nu > 0.0)
        .map(|s| (s.t, s.nu.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Audits `ν̇ ≤ −α_p‖x‖²` by central differences, the power-flow
/// identities, per-subsystem dissipation, and the exponential trend of `ν`.
pub fn decay_audit(samples: &[AuditSample], dt: f64, criteria: &DecayCriteria) -> Result<DecayReport> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    for (k, w) in samples.windows(2).enumerate() {
        let step = w[1].t - w[0].t;
        if (step - dt).abs() > SAMPLING_TOLERANCE * dt {
            return Err(Error::NonUniformSampling { index: k + 1, step, dt });
        }
    }
    let n_sub = criteria.link_rates.len();
    let mut report = DecayReport {
        samples: samples.len(),
        audited_steps: 0,
        violations: 0,
        worst: None,
        max_vpf_residual: 0.0,
        max_link_identity_residual: 0.0,
        max_joint_identity_residual: 0.0,
        link_subsystem_violations: vec![0; n_sub],
        joint_subsystem_violations: vec![0; criteria.joint_rates.len()],
        fitted_rate: log_linear_slope(samples, criteria.fit_window),
        nu_initial: samples.first().map_or(0.0, |s| s.nu),
        nu_final: samples.last().map_or(0.0, |s| s.nu),
        realized_velocity_bound: vec![0.0; n_sub],
    };
    for s in samples {
        report.max_vpf_residual = report.max_vpf_residual.max(s.vpf_residual.abs());
        for r in &s.link_identity_residual {
            report.max_link_identity_residual = report.max_link_identity_residual.max(r.abs());
        }
        for r in &s.joint_identity_residual {
            report.max_joint_identity_residual = report.max_joint_identity_residual.max(r.abs());
        }
        for (m, v) in report.realized_velocity_bound.iter_mut().zip(&s.link_velocity_norm) {
            *m = m.max(*v);
        }
    }
    if samples.len() < 3 {
        return Ok(report);
    }

    let rounding: Vec<f64> = samples.iter().map(|s| s.nu_rounding).collect();
    let nu: Vec<f64> = samples.iter().map(|s| s.nu).collect();
    let rates = central_rates(&nu, dt);
    let tols = difference_tolerances(&nu, &rounding, dt);
    report.audited_steps = rates.len();
    for (idx, (rate, tol)) in rates.iter().zip(&tols).enumerate() {
        let s = &samples[idx + 1];
        let excess = rate + criteria.alpha_p * s.x_norm_sq - tol;
        if excess > 0.0 {
            report.violations += 1;
        }
        if report.worst.as_ref().is_none_or(|w| excess > w.excess) {
            report.worst = Some(WorstStep { t: s.t, excess });
        }
    }

    for i in 0..n_sub {
        let series: Vec<f64> = samples.iter().map(|s| s.nu_link[i]).collect();
        let rates = central_rates(&series, dt);
        let tols = difference_tolerances(&series, &rounding, dt);
        for (idx, (rate, tol)) in rates.iter().zip(&tols).enumerate() {
            let s = &samples[idx + 1];
            let supply = s.p_base[i] - s.p_tip[i + 1];
            if rate + criteria.link_rates[i] * s.link_x_norm_sq[i] - supply > *tol {
                report.link_subsystem_violations[i] += 1;
            }
        }
    }
    for i in 0..criteria.joint_rates.len() {
        let series: Vec<f64> = samples.iter().map(|s| s.nu_joint[i]).collect();
        let rates = central_rates(&series, dt);
        let tols = difference_tolerances(&series, &rounding, dt);
        for (idx, (rate, tol)) in rates.iter().zip(&tols).enumerate() {
            let s = &samples[idx + 1];
            let supply = s.p_tip[i] - s.p_base[i];
            if rate + criteria.joint_rates[i] * s.joint_x_norm_sq[i] - supply > *tol {
                report.joint_subsystem_violations[i] += 1;
            }
        }
    }
    Ok(report)
}

/// Combined verdict on a gain set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCertificate {
    pub links: Vec<Verdict>,
    pub joints: Vec<Verdict>,
    /// `4λ_i > 1/α_M` and a non-empty attraction region.
    pub convergence: Verdict,
    pub bounds: StabilityBounds,
    pub certified_velocity_bound: Vec<f64>,
    pub radius: Option<AttractionRadius>,
    pub pass: bool,
}

impl GainCertificate {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, v) in self.links.iter().enumerate() {
            out.extend(v.violations().map(|c| format!("link {}: {}", i + 1, c.name)));
        }
        for (i, v) in self.joints.iter().enumerate() {
            out.extend(v.violations().map(|c| format!("joint {}: {}", i + 1, c.name)));
        }
        out.extend(self.convergence.violations().map(|c| c.name.clone()));
        out
    }
}

pub fn certify<const D: usize>(
    chain: &ChainModel<D>,
    observer: &ObserverGains,
    control: &ControlGains,
    velocity_bounds: &[f64],
    trajectory: &DesiredTrajectory,
) -> Result<GainCertificate>
where
    Dim<D>: Space<D>,
{
    chain.check_len("desired trajectory", trajectory.dof())?;
    let bounds = StabilityBounds::new(chain, observer, control, velocity_bounds)?;
    let n = chain.dof();
    let links = (0..n)
        .map(|i| {
            check_link_gains(
                control.link[i],
                observer.link[i],
                bounds.coriolis[i],
                velocity_bounds[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let joints = (0..n)
        .map(|i| {
            check_joint_gains(
                control.k[i],
                observer.joint[i].ell,
                chain.joint(i).rotor_inertia,
                bounds.friction_lipschitz[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let certified_velocity_bound = (0..n)
        .map(|i| certified_velocity_bound(control.link[i], observer.link[i], bounds.coriolis[i]).unwrap_or(f64::NAN))
        .collect();

    let inv_alpha = 1.0 / bounds.alpha_big_m;
    let mut conditions: Vec<Condition> = control
        .lambda
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Condition::new(
                format!("joint {}: convergence hypothesis: 4*lambda > 1/alpha_M", i + 1),
                4.0 * l - inv_alpha,
            )
        })
        .collect();
    let radius = attraction_radius(
        &bounds,
        &control.link,
        &observer.link,
        &trajectory.rate_bounds(),
        &control.lambda,
    )
    .ok();
    conditions.push(Condition::new(
        "attraction region non-empty: r > 0",
        radius.as_ref().map_or(f64::NEG_INFINITY, |r| r.radius),
    ));
    let convergence = Verdict::from_conditions(conditions);
    let pass = links.iter().chain(joints.iter()).all(|v| v.pass) && convergence.pass;
    Ok(GainCertificate {
        links,
        joints,
        convergence,
        bounds,
        certified_velocity_bound,
        radius,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Friction;
    use crate::controller::JointTrajectory;
    use crate::spatial::{Frame, Kind};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn reference() -> (ChainModel<3>, ObserverGains, ControlGains, DesiredTrajectory) {
        let link = LinkModel::planar(1.0, 1.0, 1.0, 1.0).unwrap();
        let joint = JointModel::new(0.1, Friction::default());
        let chain = ChainModel::new(vec![joint.clone(), joint], vec![link.clone(), link]).unwrap();
        let obs = ObserverGains::new(vec![200.0, 200.0], &[200.0, 200.0], chain.joints()).unwrap();
        let ctrl = ControlGains::new(vec![10.0, 10.0], vec![10.0, 10.0], vec![100.0, 100.0]).unwrap();
        let traj = DesiredTrajectory::new(vec![
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
        .unwrap();
        (chain, obs, ctrl, traj)
    }

    #[test]
    fn power_flow_examples() {
        let f = Frame::Base(1);
        let v = |x: f64| SpatialVector::velocity(f, Vector3::new(x, 0.0, 0.0));
        let w = |x: f64| SpatialVector::force(f, Vector3::new(x, 0.0, 0.0));
        assert_eq!(virtual_power_flow(&v(1.0), &v(1.0), &w(3.0), &w(0.0)).unwrap(), 0.0);
        assert_eq!(virtual_power_flow(&v(4.0), &v(1.0), &w(3.0), &w(3.0)).unwrap(), 0.0);
        assert_eq!(virtual_power_flow(&v(1.0), &v(0.0), &w(2.0), &w(0.0)).unwrap(), 2.0);
        let other = SpatialVector::force(Frame::Tip(1), Vector3::zeros());
        assert!(virtual_power_flow(&v(1.0), &v(0.0), &w(2.0), &other).is_err());
        let wrong = SpatialVector::new(f, Kind::Pose, Vector3::zeros());
        assert!(virtual_power_flow(&v(1.0), &wrong, &w(2.0), &w(0.0)).is_err());
    }

    #[test]
    fn link_gain_examples() {
        let v = check_link_gains(100.0, 200.0, SQRT_2, 5.0).unwrap();
        assert!(v.pass);
        let threshold = link_observer_gain_threshold(100.0, SQRT_2, 5.0);
        assert_relative_eq!(threshold, 5.0 * SQRT_2 + 25.0 + 50.0, epsilon = 1e-12);
        assert_relative_eq!(threshold, 82.071_067_811_865_47, epsilon = 1e-9);

        let v = check_link_gains(1.0, 200.0, SQRT_2, 5.0).unwrap();
        assert!(!v.pass);
        assert_eq!(v.violations().next().unwrap().name, "link gain condition: K_B > 1");

        assert_relative_eq!(link_observer_gain_threshold(100.0, SQRT_2, 0.0), 50.0);
        assert!(check_link_gains(0.0, 200.0, SQRT_2, 5.0).is_err());
        assert!(check_link_gains(100.0, -1.0, SQRT_2, 5.0).is_err());

        // the link condition is exactly M_v below the certified bound
        let vmax = certified_velocity_bound(100.0, 200.0, SQRT_2).unwrap();
        assert_relative_eq!(vmax, (301f64.sqrt() - 1.0) / SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(vmax, 11.560_737_365_198_75, epsilon = 1e-9);
        assert!(
            check_link_gains(100.0, 200.0, SQRT_2, vmax * (1.0 - 1e-9))
                .unwrap()
                .pass
        );
        assert!(
            !check_link_gains(100.0, 200.0, SQRT_2, vmax * (1.0 + 1e-9))
                .unwrap()
                .pass
        );
    }

    #[test]
    fn joint_gain_examples() {
        let v = check_joint_gains(10.0, 200.0, 0.1, 1.0).unwrap();
        assert!(v.pass);
        assert_relative_eq!(v.conditions[0].margin, 31.0, epsilon = 1e-12);
        let v = check_joint_gains(10.0, 0.0, 0.1, 1.0).unwrap();
        assert!(!v.pass);
        let v = check_joint_gains(10.0, 4.99, 0.1, 1.0).unwrap();
        assert!(!v.pass);
        assert_relative_eq!(v.conditions[0].margin, 2.998 - 11.0, epsilon = 1e-12);
        assert!(check_joint_gains(0.0, 200.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn reference_bounds_and_radius() {
        let (chain, obs, ctrl, traj) = reference();
        let b = StabilityBounds::new(&chain, &obs, &ctrl, &[5.0, 5.0]).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(b.alpha_m, 0.1, epsilon = 1e-12);
        assert_relative_eq!(b.alpha_big_m, golden + 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.m_u, golden, epsilon = 1e-12);
        assert_relative_eq!(b.coriolis[0], SQRT_2, epsilon = 1e-12);
        assert_eq!(b.alpha_p, 0.5);

        let r = attraction_radius(&b, &ctrl.link, &obs.link, &traj.rate_bounds(), &ctrl.lambda).unwrap();
        // independent evaluation of the radius formula
        let s = (0.1 / (golden + 1.0)).sqrt();
        let vmax = (301f64.sqrt() - 1.0) / SQRT_2;
        let c = 16.0 * 10.0 / (40.0 - 1.0 / (golden + 1.0));
        let r1 = s * (vmax - golden * PI / 4.0) / (1.0 + golden * c);
        let r2 = s * (vmax - golden * PI / 4.0 - golden * golden * PI / 5.0) / (1.0 + (golden + golden * golden) * c);
        assert_relative_eq!(r.per_link[0], r1, epsilon = 1e-12);
        assert_relative_eq!(r.per_link[1], r2, epsilon = 1e-12);
        assert_relative_eq!(r.radius, r1.min(r2));
        assert!(r.radius > 0.0);

        let cert = certify(&chain, &obs, &ctrl, &[5.0, 5.0], &traj).unwrap();
        assert!(cert.pass, "{:?}", cert.violations());
    }

    #[test]
    fn radius_degenerate_cases() {
        let (chain, obs, ctrl, _) = reference();
        let b = StabilityBounds::new(&chain, &obs, &ctrl, &[5.0, 5.0]).unwrap();
        let r = attraction_radius(&b, &ctrl.link, &obs.link, &[1e6, 1e6], &ctrl.lambda).unwrap();
        assert!(r.is_empty());
        let tiny = [0.01, 0.01];
        assert!(matches!(
            attraction_radius(&b, &ctrl.link, &obs.link, &[0.0, 0.0], &tiny),
            Err(Error::Hypothesis(_))
        ));
        assert!(attraction_radius(&b, &[500.0, 500.0], &[10.0, 10.0], &[0.0, 0.0], &ctrl.lambda).is_err());
    }

    #[test]
    fn radius_nondecreasing_in_observer_gain() {
        let (chain, _, ctrl, traj) = reference();
        let mut prev = f64::NEG_INFINITY;
        for step in 0..200 {
            let l_b = 60.0 + 10.0 * step as f64;
            let obs = ObserverGains::new(vec![l_b, l_b], &[200.0, 200.0], chain.joints()).unwrap();
            let b = StabilityBounds::new(&chain, &obs, &ctrl, &[5.0, 5.0]).unwrap();
            let r = attraction_radius(&b, &ctrl.link, &obs.link, &traj.rate_bounds(), &ctrl.lambda).unwrap();
            assert!(r.radius >= prev);
            prev = r.radius;
        }
    }

    #[test]
    fn certificate_flags_violations() {
        let (chain, obs, _, traj) = reference();
        let ctrl = ControlGains::new(vec![10.0, 10.0], vec![10.0, 10.0], vec![0.5, 100.0]).unwrap();
        let cert = certify(&chain, &obs, &ctrl, &[5.0, 5.0], &traj).unwrap();
        assert!(!cert.pass);
        assert!(cert.violations().iter().any(|v| v.contains("K_B > 1")));

        let ctrl = ControlGains::new(vec![0.05, 10.0], vec![10.0, 10.0], vec![100.0, 100.0]).unwrap();
        let cert = certify(&chain, &obs, &ctrl, &[5.0, 5.0], &traj).unwrap();
        assert!(!cert.pass);
        assert!(cert.violations().iter().any(|v| v.contains("4*lambda > 1/alpha_M")));
    }

    fn random_error(rng: &mut ChaCha8Rng, n: usize, ell: f64) -> ErrorStateVector<3> {
        let mut r = || rng.random_range(-5.0..5.0);
        let mut x = ErrorStateVector::zeros(n);
        for i in 0..n {
            x.links[i].control = Vector3::new(r(), r(), r());
            x.links[i].observer = Vector3::new(r(), r(), r());
            x.joints[i] = JointError::new(r(), r(), r() * 0.1, ell);
        }
        x
    }

    #[test]
    fn lyapunov_examples_and_sandwich() {
        let (chain, obs, ctrl, _) = reference();
        let zero = lyapunov_total(&chain, &obs, &ErrorStateVector::zeros(2)).unwrap();
        assert_eq!(zero.total, 0.0);

        let mut x = ErrorStateVector::zeros(2);
        x.joints[0].control = 1.0;
        assert_relative_eq!(lyapunov_total(&chain, &obs, &x).unwrap().total, 0.05, epsilon = 1e-15);

        let b = StabilityBounds::new(&chain, &obs, &ctrl, &[5.0, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let x = random_error(&mut rng, 2, 200.0);
            let nu = lyapunov_total(&chain, &obs, &x).unwrap().total;
            let n2 = x.norm_squared();
            assert_relative_eq!(n2, x.to_vector().norm_squared(), max_relative = 1e-12);
            assert_eq!(x.to_vector().len(), 2 * (2 * 3 + 3));
            assert!(0.5 * b.alpha_m * n2 <= nu * (1.0 + 1e-12));
            assert!(nu <= 0.5 * b.alpha_big_m * n2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sandwich_with_small_observer_gain() {
        // ℓ small enough that I_m + 2/ℓ exceeds the link inertia eigenvalues
        let link = LinkModel::planar(1.0, 1.0, 1.0, 1.0).unwrap();
        let joint = JointModel::new(0.1, Friction::default());
        let chain = ChainModel::new(vec![joint], vec![link]).unwrap();
        let obs = ObserverGains::new(vec![200.0], &[0.5], chain.joints()).unwrap();
        let ctrl = ControlGains::new(vec![10.0], vec![10.0], vec![100.0]).unwrap();
        let b = StabilityBounds::new(&chain, &obs, &ctrl, &[5.0]).unwrap();
        assert_relative_eq!(b.alpha_big_m, 4.1, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut tightest: f64 = 0.0;
        for _ in 0..2000 {
            let x = random_error(&mut rng, 1, 0.5);
            let nu = lyapunov_total(&chain, &obs, &x).unwrap().total;
            assert!(nu <= 0.5 * b.alpha_big_m * x.norm_squared() * (1.0 + 1e-12));
            tightest = tightest.max(nu / (0.5 * x.norm_squared()));
        }
        // the pair (q̂̇ − q̇, s) = (1, −1) attains I_m + 2/ℓ exactly
        let mut x = ErrorStateVector::<3>::zeros(1);
        x.joints[0] = JointError {
            control: 0.0,
            observer: 1.0,
            s: -1.0,
        };
        let nu = lyapunov_total(&chain, &obs, &x).unwrap().total;
        assert_relative_eq!(nu / (0.5 * x.norm_squared()), 4.1, epsilon = 1e-12);
        assert!(tightest > 0.1 + 1.0 / 0.5);
    }

    fn synthetic(nu: impl Fn(f64) -> f64, x2: impl Fn(f64) -> f64, dt: f64, n: usize) -> Vec<AuditSample> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                AuditSample {
                    t,
                    nu: nu(t),
                    nu_link: vec![0.0],
                    nu_joint: vec![0.0],
                    x_norm_sq: x2(t),
                    link_x_norm_sq: vec![0.0],
                    joint_x_norm_sq: vec![0.0],
                    p_base: vec![0.0],
                    p_tip: vec![0.0, 0.0],
                    link_identity_residual: vec![0.0],
                    joint_identity_residual: vec![0.0],
                    vpf_residual: 0.0,
                    link_velocity_norm: vec![0.0],
                    nu_rounding: 0.0,
                }
            })
            .collect()
    }

    fn criteria() -> DecayCriteria {
        DecayCriteria {
            alpha_p: 0.5,
            link_rates: vec![0.5],
            joint_rates: vec![0.5],
            fit_window: (0.0, 1.0),
        }
    }

    #[test]
    fn audit_zero_trajectory() {
        let s = synthetic(|_| 0.0, |_| 0.0, 1e-3, 100);
        let r = decay_audit(&s, 1e-3, &criteria()).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.audited_steps, 98);
        assert_eq!(r.fitted_rate, None);
    }

    #[test]
    fn audit_detects_decay_and_growth() {
        // ν = e^{-2t} with ‖x‖² = 2ν/α_M-like scaling: ν̇ = −2ν ≤ −½‖x‖² when ‖x‖² = 2ν
        let s = synthetic(|t| (-2.0 * t).exp(), |t| 2.0 * (-2.0 * t).exp(), 1e-3, 1001);
        let r = decay_audit(&s, 1e-3, &criteria()).unwrap();
        assert_eq!(r.violations, 0);
        assert_relative_eq!(r.fitted_rate.unwrap(), -2.0, epsilon = 1e-9);

        // decays, but too slowly for the claimed rate
        let s = synthetic(|t| (-0.1 * t).exp(), |t| 2.0 * (-0.1 * t).exp(), 1e-3, 1001);
        let r = decay_audit(&s, 1e-3, &criteria()).unwrap();
        assert_eq!(r.violations, 999);
        assert!(r.worst.unwrap().excess > 0.0);

        let s = synthetic(|t| (0.5 * t).exp(), |_| 0.0, 1e-3, 100);
        assert!(decay_audit(&s, 1e-3, &criteria()).unwrap().violations > 0);
    }

    #[test]
    fn audit_rejects_nonuniform_sampling() {
        let mut s = synthetic(|t| (-t).exp(), |_| 0.0, 1e-3, 10);
        s[5].t += 1e-4;
        assert!(matches!(
            decay_audit(&s, 1e-3, &criteria()),
            Err(Error::NonUniformSampling { index: 5, .. })
        ));
    }

    #[test]
    fn difference_tolerance_covers_truncation() {
        // central differences of sin on a coarse grid stay within tolerance
        let dt = 1e-2;
        let vals: Vec<f64> = (0..400).map(|k| (3.0 * k as f64 * dt).sin()).collect();
        let rates = central_rates(&vals, dt);
        let tols = difference_tolerances(&vals, &vec![0.0; vals.len()], dt);
        for (k, (r, tol)) in rates.iter().zip(&tols).enumerate() {
            let exact = 3.0 * (3.0 * (k + 1) as f64 * dt).cos();
            assert!((r - exact).abs() <= *tol, "k={k}");
        }
    }
}
