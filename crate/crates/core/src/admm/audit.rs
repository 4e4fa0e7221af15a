//! Message log for everything crossing an agent boundary, and the check
//! that no dynamics matrix entry ever leaves its agent.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};

use crate::error::Result;
use crate::model::Network;

/// Values that appear in public seeds and identities; they carry no
/// information about any agent and are never treated as tainted.
const PUBLIC_CONSTANTS: [f64; 5] = [0.0, 1.0, -1.0, 0.5, -0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Agent(usize),
    Clique(usize),
    Equality,
    Coordinator,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Agent(i) => write!(f, "agent:{}", i + 1),
            Endpoint::Clique(p) => write!(f, "clique:{}", p + 1),
            Endpoint::Equality => f.write_str("equality"),
            Endpoint::Coordinator => f.write_str("coordinator"),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The only payload kinds the solvers may send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Certificate,
    CloneSlice,
    DualSlice,
    ScalarResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub from: Endpoint,
    pub to: Endpoint,
    pub kind: MessageKind,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub records: Vec<MessageRecord>,
    /// Messages whose payload matched a dynamics entry.
    pub violations: Vec<String>,
}

impl AuditLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Collects messages and scans each payload as it is sent.
#[derive(Debug, Clone)]
pub struct AuditBus {
    tainted: HashSet<u64>,
    enabled: bool,
    log: AuditLog,
}

fn key(v: f64) -> u64 {
    v.abs().to_bits()
}

impl AuditBus {
    /// Every entry of every agent's `(A, B, C, D)` is tainted, except public
    /// constants and values the network itself declares (fixed supply rates).
    pub fn new(net: &Network, enabled: bool) -> Self {
        let mut bus = Self {
            tainted: HashSet::new(),
            enabled,
            log: AuditLog::default(),
        };
        bus.taint(net);
        bus
    }

    /// Also taints the dynamics of `net`, e.g. a rescaled copy of the
    /// network being solved.
    pub fn taint(&mut self, net: &Network) {
        let mut public: HashSet<u64> = PUBLIC_CONSTANTS.iter().map(|&v| key(v)).collect();
        for a in &net.agents {
            if let Some(qsr) = a.fixed_qsr() {
                public.extend(
                    [&qsr.q, &qsr.s, &qsr.r]
                        .into_iter()
                        .flat_map(|m| m.iter().map(|&v| key(v))),
                );
            }
        }
        let values = net
            .agents
            .iter()
            .flat_map(|a| [a.a(), a.b(), a.c(), a.d()])
            .flat_map(|m| m.iter().map(|&v| key(v)))
            .filter(|k| !public.contains(k));
        self.tainted.extend(values);
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn post(&mut self, from: Endpoint, to: Endpoint, kind: MessageKind, payload: &[f64]) {
        if !self.enabled {
            return;
        }
        self.log.records.push(MessageRecord {
            from,
            to,
            kind,
            bytes: std::mem::size_of_val(payload),
        });
        let hits = payload.iter().filter(|&&v| self.tainted.contains(&key(v))).count();
        if hits > 0 {
            self.log.violations.push(format!(
                "{from} -> {to} ({kind:?}): {hits} value(s) match dynamics entries"
            ));
        }
    }

    pub fn into_log(self) -> Option<AuditLog> {
        self.enabled.then_some(self.log)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub messages: usize,
    pub bytes: usize,
    pub by_kind: BTreeMap<String, usize>,
    pub violations: Vec<String>,
}

pub fn audit_messages(log: &AuditLog) -> AuditReport {
    let mut by_kind = BTreeMap::new();
    for r in &log.records {
        let name = serde_json::to_value(r.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        *by_kind.entry(name).or_insert(0) += 1;
    }
    AuditReport {
        passed: log.violations.is_empty(),
        messages: log.records.len(),
        bytes: log.records.iter().map(|r| r.bytes).sum(),
        by_kind,
        violations: log.violations.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::{AgentDynamics, Interconnection};

    fn net() -> Network {
        let a = AgentDynamics::new(
            Mat::from_element(1, 1, -0.7844),
            Mat::from_element(1, 1, 2.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 0.0),
        );
        let agents = vec![a];
        let h = Interconnection::empty_for(&agents);
        Network::new(agents, h)
    }

    #[test]
    fn clean_payloads_pass() {
        let mut bus = AuditBus::new(&net(), true);
        bus.post(
            Endpoint::Agent(0),
            Endpoint::Coordinator,
            MessageKind::Certificate,
            &[1.0, 0.0, 0.5, 0.123],
        );
        let report = audit_messages(&bus.into_log().unwrap());
        assert!(report.passed);
        assert_eq!(report.bytes, 32);
        assert_eq!(report.by_kind["certificate"], 1);
    }

    #[test]
    fn leaked_dynamics_are_flagged() {
        let net = net();
        let mut bus = AuditBus::new(&net, true);
        let leaked: Vec<f64> = net.agents[0].a().iter().map(|v| -v).collect();
        bus.post(
            Endpoint::Agent(0),
            Endpoint::Coordinator,
            MessageKind::CloneSlice,
            &leaked,
        );
        let report = audit_messages(&bus.into_log().unwrap());
        assert!(!report.passed);
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn rescaled_dynamics_are_tainted() {
        let net = net();
        let scaled_b = 2.5 * 1.7;
        let mut bus = AuditBus::new(&net, true);
        bus.post(
            Endpoint::Agent(0),
            Endpoint::Coordinator,
            MessageKind::Certificate,
            &[scaled_b],
        );
        let agents = vec![AgentDynamics::new(
            net.agents[0].a().clone(),
            Mat::from_element(1, 1, scaled_b),
            net.agents[0].c().clone(),
            net.agents[0].d().clone(),
        )];
        let h = Interconnection::empty_for(&agents);
        bus.taint(&Network::new(agents, h));
        bus.post(
            Endpoint::Agent(0),
            Endpoint::Coordinator,
            MessageKind::Certificate,
            &[scaled_b],
        );
        assert_eq!(bus.into_log().unwrap().violations.len(), 1);
    }

    #[test]
    fn disabled_bus_keeps_nothing() {
        let mut bus = AuditBus::new(&net(), false);
        bus.post(
            Endpoint::Agent(0),
            Endpoint::Coordinator,
            MessageKind::Certificate,
            &[2.5],
        );
        assert!(bus.into_log().is_none());
    }

    #[test]
    fn jsonl_shape() {
        let mut bus = AuditBus::new(&net(), true);
        bus.post(
            Endpoint::Clique(1),
            Endpoint::Coordinator,
            MessageKind::ScalarResidual,
            &[1e-3],
        );
        let mut buf = Vec::new();
        bus.into_log().unwrap().write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"from":"clique:2","to":"coordinator","kind":"scalar-residual","bytes":8}"#
        );
    }
}
