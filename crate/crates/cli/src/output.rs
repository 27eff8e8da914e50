//! Run manifests and the files written by each command.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use vdc_core::sim::TrajectoryRecord;
use vdc_core::stability::GainCertificate;

/// Provenance stamped at the top of every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: String,
    pub config_sha256: String,
    pub out: Option<String>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(args: &[String], config: String, config_bytes: &[u8], out: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: args.iter().map(|a| quote(a)).collect::<Vec<_>>().join(" "),
            config,
            config_sha256: hex::encode(Sha256::digest(config_bytes)),
            out: out.map(|p| p.display().to_string()),
            seed,
        }
    }

    /// `# key: value` lines.
    pub fn comment_header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool: {} {}", self.tool, self.version);
        let _ = writeln!(s, "# command: {}", self.command);
        let _ = writeln!(s, "# config: {}", self.config);
        let _ = writeln!(s, "# config_sha256: {}", self.config_sha256);
        if let Some(out) = &self.out {
            let _ = writeln!(s, "# out: {out}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed: {seed}");
        }
        s
    }
}

fn quote(arg: &str) -> String {
    let plain = !arg.is_empty() && arg.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=:+,".contains(c));
    if plain {
        arg.to_string()
    } else {
        format!("'{}'", arg.replace('\'', r"'\''"))
    }
}

/// Full double precision: 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_csv(manifest: &RunManifest, records: &[TrajectoryRecord], n: usize) -> String {
    let mut out = manifest.comment_header();
    let mut cols = vec!["t".to_string()];
    for name in ["q", "q_d", "e", "q_hat", "qd_hat", "qd", "tau"] {
        cols.extend((1..=n).map(|i| format!("{name}_{i}")));
    }
    cols.push("nu".into());
    cols.extend((1..=n).map(|i| format!("nu_link_{i}")));
    cols.extend((1..=n).map(|i| format!("nu_joint_{i}")));
    cols.push("vpf_residual".into());
    out.push_str(&cols.join(","));
    out.push('\n');
    for r in records {
        let mut row = vec![num(r.t)];
        for v in [&r.q, &r.q_d, &r.e, &r.q_hat, &r.qd_hat, &r.qd, &r.tau] {
            row.extend(v.iter().map(|x| num(*x)));
        }
        row.push(num(r.nu));
        row.extend(r.nu_link.iter().map(|x| num(*x)));
        row.extend(r.nu_joint.iter().map(|x| num(*x)));
        row.push(num(r.vpf_residual));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn certificate_report(cert: &GainCertificate) -> String {
    let mut s = String::new();
    let verdict = |pass: bool| if pass { "PASS" } else { "FAIL" };
    let groups = cert
        .links
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("link {}", i + 1), v))
        .chain(
            cert.joints
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("joint {}", i + 1), v)),
        );
    for (who, v) in groups {
        for c in &v.conditions {
            let _ = writeln!(s, "{who}: {}  margin {:.6}  {}", c.name, c.margin, verdict(c.holds()));
        }
    }
    for c in &cert.convergence.conditions {
        let _ = writeln!(s, "{}  margin {:.6}  {}", c.name, c.margin, verdict(c.holds()));
    }
    let b = &cert.bounds;
    let _ = writeln!(
        s,
        "alpha_m = {:.6}  alpha_M = {:.6}  alpha_p = {:.6}  M_U = {:.6}",
        b.alpha_m, b.alpha_big_m, b.alpha_p, b.m_u
    );
    let _ = writeln!(s, "coriolis bounds M_c = {:?}", b.coriolis);
    let _ = writeln!(
        s,
        "certified link velocity bounds = {:?}",
        cert.certified_velocity_bound
    );
    match &cert.radius {
        Some(r) => {
            let _ = writeln!(s, "attraction radius r = {:.6} (per link {:?})", r.radius, r.per_link);
        }
        None => {
            let _ = writeln!(s, "attraction radius r: undefined");
        }
    }
    let _ = writeln!(s, "verdict: {}", verdict(cert.pass));
    s
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    std::fs::write(path, contents)
}
