//! Independent post-hoc check of a certificate stack: per-agent KYP
//! membership, `P > 0`, and the dense coupled matrix.

use std::fmt;

use serde::Serialize;

use crate::admm::CERTIFY_FRACTION;
use crate::dissipativity::{assemble_kyp, kyp_membership};
use crate::linalg::sym_eigen;
use crate::model::{offsets, DissipativityCertificate, Network};
use crate::stability::assemble_qbar;

/// Largest admissible KYP eigenvalue.
pub const KYP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentCheck {
    /// 1-based agent index.
    pub index: usize,
    pub kyp_lambda_max: f64,
    pub p_lambda_min: f64,
    /// Set when the certificate does not match the declared supply rate or
    /// the agent's dimensions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub agents: Vec<AgentCheck>,
    pub lambda_max_qbar: f64,
    /// `lambda_max(Qbar)` must not exceed this.
    pub threshold: f64,
    pub global_passed: bool,
    /// 1-based agent carrying most of the top eigenvector of `Qbar` when
    /// the global test fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qbar_culprit: Option<usize>,
    pub passed: bool,
}

impl VerificationReport {
    /// What failed, e.g. `agent 2: KYP lambda_max 3.1e-2`.
    pub fn culprits(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .agents
            .iter()
            .filter(|a| !a.passed)
            .map(|a| match &a.problem {
                Some(p) => format!("agent {}: {p}", a.index),
                None if a.kyp_lambda_max.is_nan() || a.kyp_lambda_max > KYP_TOL => {
                    format!("agent {}: KYP lambda_max {:.3e}", a.index, a.kyp_lambda_max)
                }
                None => format!("agent {}: P lambda_min {:.3e}", a.index, a.p_lambda_min),
            })
            .collect();
        if !self.global_passed {
            let mut msg = format!(
                "network: lambda_max(Qbar) {:.3e} above {:.3e}",
                self.lambda_max_qbar, self.threshold
            );
            if let Some(i) = self.qbar_culprit {
                msg.push_str(&format!(", concentrated on agent {i}"));
            }
            out.push(msg);
        }
        out
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.agents {
            writeln!(
                f,
                "agent {:>3}  KYP lambda_max {:>11.3e}  P lambda_min {:>11.3e}  {}",
                a.index,
                a.kyp_lambda_max,
                a.p_lambda_min,
                if a.passed { "ok" } else { "FAIL" }
            )?;
        }
        writeln!(
            f,
            "network    lambda_max(Qbar) {:.3e} (needs <= {:.3e})  {}",
            self.lambda_max_qbar,
            self.threshold,
            if self.global_passed { "ok" } else { "FAIL" }
        )?;
        for c in self.culprits() {
            writeln!(f, "  failed: {c}")?;
        }
        write!(
            f,
            "verdict: {}",
            if self.passed { "certified" } else { "not certified" }
        )
    }
}

/// Passes iff every agent has `P > 0` and either `lambda_max(KYP) <= KYP_TOL`
/// or a declared supply rate that the certificate uses verbatim, and
/// `lambda_max(Qbar) <= -CERTIFY_FRACTION * epsilon`.
pub fn verify_certificate(net: &Network, certs: &[DissipativityCertificate], epsilon: f64) -> VerificationReport {
    let threshold = -CERTIFY_FRACTION * epsilon;
    let agents: Vec<AgentCheck> = net
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let Some(x) = certs.get(i) else {
                return AgentCheck {
                    index: i + 1,
                    kyp_lambda_max: f64::NAN,
                    p_lambda_min: f64::NAN,
                    problem: Some("no certificate".into()),
                    passed: false,
                };
            };
            let mut problem = assemble_kyp(agent, x).err().map(|e| e.to_string());
            if let (None, Some(qsr)) = (&problem, agent.fixed_qsr()) {
                if x.q != qsr.q || x.s != qsr.s || x.r != qsr.r {
                    problem = Some("(Q, S, R) differ from the declared supply rate".into());
                }
            }
            let m = kyp_membership(agent, x, 0.0, 0.0);
            let kyp_ok = agent.fixed_qsr().is_some() || m.kyp_lambda_max <= KYP_TOL;
            AgentCheck {
                index: i + 1,
                kyp_lambda_max: m.kyp_lambda_max,
                p_lambda_min: m.p_lambda_min,
                passed: problem.is_none() && kyp_ok && m.p_lambda_min > 0.0,
                problem,
            }
        })
        .collect();
    let qbar = if certs.len() == net.len() && agents.iter().all(|a| a.problem.is_none()) {
        assemble_qbar(certs, &net.h).and_then(|q| sym_eigen(&q.matrix)).ok()
    } else {
        None
    };
    let (lambda_max_qbar, top) = match &qbar {
        Some(e) if !e.eigenvalues.is_empty() => {
            let k = e.eigenvalues.imax();
            (e.eigenvalues[k], Some(e.eigenvectors.column(k).into_owned()))
        }
        Some(_) => (f64::NEG_INFINITY, None),
        None => (f64::NAN, None),
    };
    let global_passed = lambda_max_qbar <= threshold;
    let qbar_culprit = match top {
        Some(v) if !global_passed => {
            let dims: Vec<usize> = net.agents.iter().map(|a| a.l()).collect();
            let offs = offsets(&dims);
            (0..net.len())
                .map(|i| (i, v.rows(offs[i], dims[i]).norm_squared()))
                .fold(None, |best: Option<(usize, f64)>, (i, w)| match best {
                    Some((_, bw)) if bw >= w => best,
                    _ => Some((i, w)),
                })
                .map(|(i, _)| i + 1)
        }
        _ => None,
    };
    let passed = global_passed && agents.iter().all(|a| a.passed) && certs.len() == net.len();
    VerificationReport {
        agents,
        lambda_max_qbar,
        threshold,
        global_passed,
        qbar_culprit,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::{AgentDynamics, Interconnection};

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn skew() -> Network {
        let lag = || AgentDynamics::new(s(-1.0), s(1.0), s(1.0), s(0.0));
        let agents = vec![lag(), lag()];
        let h = Interconnection::empty_for(&agents)
            .with_block(0, 1, s(-1.0))
            .with_block(1, 0, s(1.0));
        Network::new(agents, h)
    }

    fn hand() -> Vec<DissipativityCertificate> {
        vec![DissipativityCertificate::new(s(0.5), s(-0.5), s(0.5), s(0.0)); 2]
    }

    #[test]
    fn hand_certificate_passes() {
        let r = verify_certificate(&skew(), &hand(), 1e-4);
        assert!(r.passed, "{r}");
        assert!((r.lambda_max_qbar + 0.5).abs() < 1e-12);
        assert!(r.culprits().is_empty());
    }

    #[test]
    fn zero_certificate_fails() {
        let zero = vec![DissipativityCertificate::new(s(0.0), s(0.0), s(0.0), s(0.0)); 2];
        let r = verify_certificate(&skew(), &zero, 1e-4);
        assert!(!r.passed);
        assert!(!r.global_passed);
    }

    #[test]
    fn tampered_q_names_the_agent() {
        let mut c = hand();
        c[1].q = s(-2.0);
        let r = verify_certificate(&skew(), &c, 1e-4);
        assert!(!r.passed);
        assert!(r.agents[0].passed && !r.agents[1].passed);
        assert!(r.culprits()[0].starts_with("agent 2:"), "{:?}", r.culprits());
        // a tamper that keeps the agent's own LMI but breaks the coupling
        let mut c = hand();
        c[0].q = s(0.5);
        let r = verify_certificate(&skew(), &c, 1e-4);
        assert!(!r.passed && r.agents.iter().all(|a| a.passed));
        assert_eq!(r.qbar_culprit, Some(1));
    }

    #[test]
    fn misshaped_certificate_is_reported() {
        let mut c = hand();
        c[0].p = Mat::zeros(2, 2);
        let r = verify_certificate(&skew(), &c, 1e-4);
        assert!(!r.passed && r.agents[0].problem.is_some());
        assert!(!verify_certificate(&skew(), &c[..1], 1e-4).passed);
    }
}
