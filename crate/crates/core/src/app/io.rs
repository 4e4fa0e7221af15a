//! JSON network and certificate files. Matrices are row-major nested arrays;
//! agents are numbered from 1 in file order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{AgentDynamics, DissipativityCertificate, Interconnection, Network, Qsr, SolverConfig};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QsrFile {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
    #[serde(default)]
    pub fixed_qsr: Option<QsrFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub i: usize,
    pub j: usize,
    pub block: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub agents: Vec<AgentFile>,
    #[serde(rename = "H", default)]
    pub h: Vec<BlockFile>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateEntry {
    pub index: usize,
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub agents: Vec<CertificateEntry>,
    /// `lambda_max(Qbar)` at the certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max_qbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

pub fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Reads a `rows x cols` matrix; zero-width matrices may be written as
/// `rows` empty arrays or as `[]`.
pub fn from_rows(v: &Rows, rows: usize, cols: usize, what: &str) -> Result<Mat> {
    if cols == 0 && v.is_empty() || rows == 0 && v.is_empty() {
        return Ok(Mat::zeros(rows, cols));
    }
    if v.len() != rows || v.iter().any(|r| r.len() != cols) {
        let got = v.first().map_or(0, Vec::len);
        return Err(Error::Dimension(format!(
            "{what} should be {rows}x{cols}, got {}x{got}",
            v.len()
        )));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| v[i][j]))
}

fn symmetrized(m: Mat) -> Mat {
    (&m + m.transpose()) * 0.5
}

fn check_index(index: usize, expected: usize, what: &str) -> Result<()> {
    if index != expected {
        return Err(Error::InvalidNetwork(format!(
            "{what} {expected} is numbered {index}; agents are numbered 1..N in order"
        )));
    }
    Ok(())
}

impl NetworkFile {
    pub fn from_network(net: &Network, solver: &SolverConfig) -> Self {
        let agents = net
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentFile {
                index: i + 1,
                n: a.n(),
                m: a.m(),
                l: a.l(),
                a: to_rows(a.a()),
                b: to_rows(a.b()),
                c: to_rows(a.c()),
                d: to_rows(a.d()),
                fixed_qsr: a.fixed_qsr().map(|q| QsrFile {
                    q: to_rows(&q.q),
                    s: to_rows(&q.s),
                    r: to_rows(&q.r),
                }),
            })
            .collect();
        let h = net
            .h
            .blocks()
            .map(|((i, j), b)| BlockFile {
                i: i + 1,
                j: j + 1,
                block: to_rows(b),
            })
            .collect();
        Self {
            agents,
            h,
            solver: solver.clone(),
        }
    }

    /// Builds the network. Dimensions are checked against the declared
    /// `n, m, l`; symmetric fields are symmetrized on the way in.
    pub fn to_network(&self) -> Result<Network> {
        let mut agents = Vec::with_capacity(self.agents.len());
        for (k, af) in self.agents.iter().enumerate() {
            check_index(af.index, k + 1, "agent")?;
            let name = |f: &str| format!("agent {} {f}", af.index);
            let (n, m, l) = (af.n, af.m, af.l);
            let mut agent = AgentDynamics::new(
                from_rows(&af.a, n, n, &name("A"))?,
                from_rows(&af.b, n, m, &name("B"))?,
                from_rows(&af.c, l, n, &name("C"))?,
                from_rows(&af.d, l, m, &name("D"))?,
            );
            if let Some(q) = &af.fixed_qsr {
                agent = agent.with_fixed_qsr(Qsr {
                    q: symmetrized(from_rows(&q.q, l, l, &name("fixed Q"))?),
                    s: from_rows(&q.s, l, m, &name("fixed S"))?,
                    r: symmetrized(from_rows(&q.r, m, m, &name("fixed R"))?),
                });
            }
            agents.push(agent);
        }
        let mut h = Interconnection::empty_for(&agents);
        for b in &self.h {
            let len = agents.len();
            if b.i == 0 || b.j == 0 || b.i > len || b.j > len {
                return Err(Error::OutOfRange {
                    index: b.i.max(b.j),
                    len,
                });
            }
            let (i, j) = (b.i - 1, b.j - 1);
            if h.block(i, j).is_some() {
                return Err(Error::InvalidNetwork(format!("H block ({}, {}) given twice", b.i, b.j)));
            }
            let block = from_rows(
                &b.block,
                agents[i].m(),
                agents[j].l(),
                &format!("H block ({}, {})", b.i, b.j),
            )?;
            h.insert(i, j, block);
        }
        Ok(Network::new(agents, h))
    }
}

impl CertificateFile {
    pub fn new(certs: &[DissipativityCertificate], lambda_max_qbar: Option<f64>, epsilon: Option<f64>) -> Self {
        let agents = certs
            .iter()
            .enumerate()
            .map(|(i, c)| CertificateEntry {
                index: i + 1,
                p: to_rows(&c.p),
                q: to_rows(&c.q),
                s: to_rows(&c.s),
                r: to_rows(&c.r),
            })
            .collect();
        Self {
            agents,
            lambda_max_qbar,
            epsilon,
        }
    }

    /// Certificates shaped for `net`; `P, Q, R` are symmetrized.
    pub fn to_certificates(&self, net: &Network) -> Result<Vec<DissipativityCertificate>> {
        if self.agents.len() != net.len() {
            return Err(Error::Dimension(format!(
                "{} certificates for {} agents",
                self.agents.len(),
                net.len()
            )));
        }
        self.agents
            .iter()
            .zip(&net.agents)
            .enumerate()
            .map(|(k, (e, a))| {
                check_index(e.index, k + 1, "certificate")?;
                let name = |f: &str| format!("certificate {} {f}", e.index);
                let (n, m, l) = (a.n(), a.m(), a.l());
                Ok(DissipativityCertificate::new(
                    symmetrized(from_rows(&e.p, n, n, &name("P"))?),
                    symmetrized(from_rows(&e.q, l, l, &name("Q"))?),
                    from_rows(&e.s, l, m, &name("S"))?,
                    symmetrized(from_rows(&e.r, m, m, &name("R"))?),
                ))
            })
            .collect()
    }
}

pub fn parse_network(json: &str) -> Result<(Network, SolverConfig)> {
    let file: NetworkFile = serde_json::from_str(json)?;
    Ok((file.to_network()?, file.solver))
}

pub fn read_network(path: &Path) -> Result<(Network, SolverConfig)> {
    parse_network(&std::fs::read_to_string(path)?)
}

pub fn write_network(path: &Path, net: &Network, solver: &SolverConfig) -> Result<()> {
    write_json(path, &NetworkFile::from_network(net, solver))
}

pub fn read_certificates(path: &Path, net: &Network) -> Result<Vec<DissipativityCertificate>> {
    let file: CertificateFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.to_certificates(net)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SKEW: &str = r#"{
        "agents": [
            {"index": 1, "n": 1, "m": 1, "l": 1, "A": [[-1]], "B": [[1]], "C": [[1]], "D": [[0]], "fixed_qsr": null},
            {"index": 2, "n": 1, "m": 1, "l": 1, "A": [[-1]], "B": [[1]], "C": [[1]], "D": [[0]],
             "fixed_qsr": {"Q": [[0]], "S": [[0.5]], "R": [[0]]}}
        ],
        "H": [{"i": 1, "j": 2, "block": [[-1]]}, {"i": 2, "j": 1, "block": [[1]]}],
        "solver": {"max_iter": 50}
    }"#;

    #[test]
    fn parse_and_round_trip() {
        let (net, cfg) = parse_network(SKEW).unwrap();
        assert_eq!(net.len(), 2);
        assert_eq!(cfg.max_iter, 50);
        assert!(net.is_fixed(1));
        assert_eq!(net.h.block(0, 1).unwrap()[(0, 0)], -1.0);
        let text = serde_json::to_string(&NetworkFile::from_network(&net, &cfg)).unwrap();
        let (back, cfg2) = parse_network(&text).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(
            NetworkFile::from_network(&back, &cfg2),
            NetworkFile::from_network(&net, &cfg)
        );
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(parse_network(&SKEW.replace(r#""A": [[-1]], "B""#, r#""A": [[-1, 0]], "B""#)).is_err());
        assert!(parse_network(&SKEW.replace(r#""index": 2"#, r#""index": 3"#)).is_err());
        assert!(parse_network(&SKEW.replace(r#""i": 1, "j": 2"#, r#""i": 1, "j": 7"#)).is_err());
        assert!(parse_network(&SKEW.replace(r#""max_iter""#, r#""bogus""#)).is_err());
    }

    #[test]
    fn zero_width_blocks() {
        let m = from_rows(&vec![], 2, 0, "D").unwrap();
        assert_eq!(m.shape(), (2, 0));
        assert_eq!(from_rows(&vec![vec![], vec![]], 2, 0, "D").unwrap().shape(), (2, 0));
    }

    #[test]
    fn certificates_round_trip() {
        let (net, _) = parse_network(SKEW).unwrap();
        let s = |v| Mat::from_element(1, 1, v);
        let certs = vec![
            DissipativityCertificate::new(s(0.5), s(-0.5), s(0.5), s(0.0)),
            DissipativityCertificate::new(s(1.0), s(0.0), s(0.5), s(0.0)),
        ];
        let file = CertificateFile::new(&certs, Some(-0.5), None);
        let text = serde_json::to_string(&file).unwrap();
        assert!(!text.contains("epsilon"));
        let back: CertificateFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_certificates(&net).unwrap(), certs);
    }
}
