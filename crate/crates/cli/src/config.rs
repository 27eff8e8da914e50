//! JSON scenario files for planar chains.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use vdc_core::chain::{ChainModel, Friction, JointModel};
use vdc_core::controller::{ControlGains, DesiredTrajectory, JointTrajectory};
use vdc_core::observer::ObserverGains;
use vdc_core::sim::{ClosedLoopState, GainSet, ScenarioConfig, REFERENCE_DT, REFERENCE_T_END};
use vdc_core::spatial::{LinkModel, STANDARD_GRAVITY};

#[derive(Debug, thiserror::Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    /// Dotted path of the offending entry, e.g. `gains.lambda`.
    pub key: String,
    pub message: String,
}

fn err(key: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError {
        key: key.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub chain: ChainConfig,
    pub gains: GainConfig,
    pub trajectory: Vec<JointTrajectory>,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Magnitude of gravity, acting along −y of the base frame.
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub links: Vec<LinkConfig>,
    pub joints: Vec<JointConfig>,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub mass: f64,
    /// Distance from the joint to the centre of mass along the link.
    pub com_offset: f64,
    /// Rotational inertia about the centre of mass.
    pub inertia: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub rotor_inertia: f64,
    #[serde(default)]
    pub friction: Friction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    pub ell: Vec<f64>,
    pub link_observer: Vec<f64>,
    pub link_control: Vec<f64>,
    pub k: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Design bound on each link's base-frame velocity norm.
    pub link_velocity_bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Defaults to zeros.
    pub q: Option<Vec<f64>>,
    /// Defaults to zeros.
    pub qd: Option<Vec<f64>>,
    /// Defaults to the desired position at t = 0.
    pub q_hat: Option<Vec<f64>>,
    /// Offset of each link observer's pose estimate; defaults to zeros.
    pub pose_offset: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_t_end() -> f64 {
    REFERENCE_T_END
}

fn default_dt() -> f64 {
    REFERENCE_DT
}

fn default_stride() -> usize {
    100
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: default_dt(),
            stride: default_stride(),
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            err(key, e.inner())
        })
    }

    /// The two-link reference arm.
    pub fn two_dof() -> Self {
        let link = LinkConfig {
            mass: 1.0,
            com_offset: 1.0,
            inertia: 1.0,
            length: 1.0,
        };
        let joint = JointConfig {
            rotor_inertia: 0.1,
            friction: Friction::Tanh { gain: 1.0, slope: 1.0 },
        };
        Self {
            chain: ChainConfig {
                gravity: STANDARD_GRAVITY,
                links: vec![link.clone(), link],
                joints: vec![joint.clone(), joint],
            },
            gains: GainConfig {
                ell: vec![200.0; 2],
                link_observer: vec![200.0; 2],
                link_control: vec![100.0; 2],
                k: vec![10.0; 2],
                lambda: vec![10.0; 2],
                link_velocity_bound: vec![5.0; 2],
            },
            trajectory: vec![
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
            ],
            initial: InitialConfig::default(),
            integration: IntegrationConfig::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn dof(&self) -> usize {
        self.chain.joints.len()
    }

    fn check_len(&self, key: &str, found: usize) -> Result<(), ConfigError> {
        if found == self.dof() {
            Ok(())
        } else {
            Err(err(
                key,
                format!("expected {} entries (one per joint), found {found}", self.dof()),
            ))
        }
    }

    pub fn build(&self) -> Result<ScenarioConfig<3>, ConfigError> {
        let n = self.dof();
        if n == 0 {
            return Err(err("chain.joints", "at least one joint is required"));
        }
        self.check_len("chain.links", self.chain.links.len())?;
        let g = &self.gains;
        for (key, v) in [
            ("gains.ell", &g.ell),
            ("gains.link_observer", &g.link_observer),
            ("gains.link_control", &g.link_control),
            ("gains.k", &g.k),
            ("gains.lambda", &g.lambda),
            ("gains.link_velocity_bound", &g.link_velocity_bound),
        ] {
            self.check_len(key, v.len())?;
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(err(format!("{key}[{i}]"), format!("must be finite, got {x}")));
            }
        }
        self.check_len("trajectory", self.trajectory.len())?;
        if !(self.chain.gravity.is_finite() && self.chain.gravity >= 0.0) {
            return Err(err("chain.gravity", "must be a non-negative magnitude"));
        }

        let links = self
            .chain
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                LinkModel::planar(l.mass, l.com_offset, l.inertia, l.length)
                    .map(|m| m.with_gravity(Vector3::new(0.0, -self.chain.gravity, 0.0)))
                    .map_err(|e| err(format!("chain.links[{i}]"), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let joints = self
            .chain
            .joints
            .iter()
            .map(|j| JointModel::new(j.rotor_inertia, j.friction))
            .collect();
        let chain = ChainModel::new(joints, links).map_err(|e| err("chain", e))?;
        let observer =
            ObserverGains::new(g.link_observer.clone(), &g.ell, chain.joints()).map_err(|e| err("gains", e))?;
        let control =
            ControlGains::new(g.lambda.clone(), g.k.clone(), g.link_control.clone()).map_err(|e| err("gains", e))?;
        let trajectory = DesiredTrajectory::new(self.trajectory.clone()).map_err(|e| err("trajectory", e))?;

        let init = &self.initial;
        let q = init.q.clone().unwrap_or_else(|| vec![0.0; n]);
        let qd = init.qd.clone().unwrap_or_else(|| vec![0.0; n]);
        let q_hat = init.q_hat.clone().unwrap_or_else(|| trajectory.sample(0.0).q);
        self.check_len("initial.q", q.len())?;
        self.check_len("initial.qd", qd.len())?;
        self.check_len("initial.q_hat", q_hat.len())?;
        let offset = match &init.pose_offset {
            Some(o) => {
                self.check_len("initial.pose_offset", o.len())?;
                Some(o.iter().map(|p| Vector3::from(*p)).collect())
            }
            None => None,
        };
        let initial = ClosedLoopState::with_observers(&chain, q, qd, q_hat, offset).map_err(|e| err("initial", e))?;

        let it = &self.integration;
        if !(it.dt > 0.0 && it.dt.is_finite()) {
            return Err(err("integration.dt", format!("must be positive, got {}", it.dt)));
        }
        if !(it.t_end >= it.dt && it.t_end.is_finite()) {
            return Err(err(
                "integration.t_end",
                format!("must be at least dt, got {}", it.t_end),
            ));
        }
        if it.stride == 0 {
            return Err(err("integration.stride", "must be at least 1"));
        }
        let config = ScenarioConfig {
            chain,
            gains: GainSet { observer, control },
            trajectory,
            initial,
            t_end: it.t_end,
            dt: it.dt,
            stride: it.stride,
            velocity_bounds: g.link_velocity_bound.clone(),
        };
        config.validate().map_err(|e| err("<scenario>", e))?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vdc_core::sim::two_dof_scenario;

    #[test]
    fn builtin_matches_library_scenario() {
        assert_eq!(ScenarioFile::two_dof().build().unwrap(), two_dof_scenario());
    }

    #[test]
    fn json_round_trip() {
        let file = ScenarioFile::two_dof();
        assert_eq!(ScenarioFile::parse(&file.to_json()).unwrap(), file);
    }

    #[test]
    fn errors_name_the_key() {
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioFile::two_dof().to_json()).unwrap();
        v["gains"].as_object_mut().unwrap().remove("lambda");
        let e = ScenarioFile::parse(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("lambda"), "{e}");

        let mut v: serde_json::Value = serde_json::from_str(&ScenarioFile::two_dof().to_json()).unwrap();
        v["chain"]["links"][1]["mass"] = serde_json::json!("heavy");
        let e = ScenarioFile::parse(&v.to_string()).unwrap_err();
        assert_eq!(e.key, "chain.links[1].mass");

        let mut v: serde_json::Value = serde_json::from_str(&ScenarioFile::two_dof().to_json()).unwrap();
        v["gains"]["typo"] = serde_json::json!(1);
        let e = ScenarioFile::parse(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("typo"), "{e}");

        let mut file = ScenarioFile::two_dof();
        file.gains.k = vec![10.0];
        assert_eq!(file.build().unwrap_err().key, "gains.k");

        let mut file = ScenarioFile::two_dof();
        file.integration.dt = 0.0;
        assert_eq!(file.build().unwrap_err().key, "integration.dt");

        let mut file = ScenarioFile::two_dof();
        file.chain.links[0].mass = -1.0;
        assert_eq!(file.build().unwrap_err().key, "chain.links[0]");
    }
}
