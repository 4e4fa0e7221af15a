//! Bookkeeping of the consensus variable `J`: which local copies each block
//! feeds, and the averaging and dual updates over them.

use crate::chordal::CliqueDecomposition;
use crate::error::{Error, Result};
use crate::linalg::{BlockShape, Mat};
use crate::model::{Network, ParamKind, Symbol};

/// A local copy of one `J` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Consumer {
    /// Agent-local certificate projection.
    Agent { agent: usize, kind: ParamKind },
    /// Clique projection, `pos` is the position in the clique's variable.
    Clique { clique: usize, pos: usize },
    /// Equality projection, `pos` is the position in its variable.
    Equality { pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexMaps {
    /// `J` blocks: each agent's `P` (and `Q, S, R` if free), then every slot.
    pub blocks: Vec<Symbol>,
    pub shapes: Vec<BlockShape>,
    /// Consumers of each block: agents first, then cliques, then the equality.
    pub consumers: Vec<Vec<Consumer>>,
}

impl IndexMaps {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn position(&self, s: Symbol) -> Option<usize> {
        self.blocks.iter().position(|&b| b == s)
    }

    /// Agent consumers of block `a`.
    pub fn tilde(&self, a: usize) -> Vec<(usize, ParamKind)> {
        self.consumers[a]
            .iter()
            .filter_map(|c| match *c {
                Consumer::Agent { agent, kind } => Some((agent, kind)),
                _ => None,
            })
            .collect()
    }

    /// Clique consumers of block `a`, as `(clique, position)`.
    pub fn bar(&self, a: usize) -> Vec<(usize, usize)> {
        self.consumers[a]
            .iter()
            .filter_map(|c| match *c {
                Consumer::Clique { clique, pos } => Some((clique, pos)),
                _ => None,
            })
            .collect()
    }

    /// Equality consumers of block `a`, as positions.
    pub fn hat(&self, a: usize) -> Vec<usize> {
        self.consumers[a]
            .iter()
            .filter_map(|c| match *c {
                Consumer::Equality { pos } => Some(pos),
                _ => None,
            })
            .collect()
    }
}

pub fn build_index_maps(net: &Network, dec: &CliqueDecomposition) -> Result<IndexMaps> {
    let mut blocks = Vec::new();
    for i in 0..net.len() {
        if net.is_fixed(i) {
            blocks.push(Symbol::p(i));
        } else {
            blocks.extend(ParamKind::ALL.map(|kind| Symbol::Param { agent: i, kind }));
        }
    }
    blocks.extend((0..dec.slots.len()).map(|slot| Symbol::Y { slot }));
    let shape = dec.symbol_shape(net);
    let shapes = blocks.iter().map(|&s| shape(s)).collect();

    let index = |s: Symbol| -> Result<usize> {
        blocks
            .iter()
            .position(|&b| b == s)
            .ok_or_else(|| Error::InvalidNetwork(format!("{s} is not a consensus block")))
    };
    let mut consumers = vec![Vec::new(); blocks.len()];
    for (a, &s) in blocks.iter().enumerate() {
        if let Symbol::Param { agent, kind } = s {
            consumers[a].push(Consumer::Agent { agent, kind });
        }
    }
    for p in 0..dec.num_cliques() {
        for (pos, s) in dec.clique_symbols(p).into_iter().enumerate() {
            consumers[index(s)?].push(Consumer::Clique { clique: p, pos });
        }
    }
    for (pos, s) in dec.equality_symbols().into_iter().enumerate() {
        consumers[index(s)?].push(Consumer::Equality { pos });
    }
    if let Some(a) = consumers.iter().position(Vec::is_empty) {
        return Err(Error::NoConsumers(blocks[a].to_string()));
    }
    Ok(IndexMaps {
        blocks,
        shapes,
        consumers,
    })
}

/// Average of the local copies, summed in the given order.
pub fn j_update(copies: &[&Mat]) -> Result<Mat> {
    let (first, rest) = copies
        .split_first()
        .ok_or_else(|| Error::NoConsumers("empty copy list".into()))?;
    let mut sum = (*first).clone();
    for m in rest {
        if m.shape() != sum.shape() {
            return Err(Error::Dimension(format!(
                "copy is {:?}, expected {:?}",
                m.shape(),
                sum.shape()
            )));
        }
        sum += *m;
    }
    Ok(sum / copies.len() as f64)
}

/// Scaled dual step `U + (local - J)`.
pub fn dual_update(dual: &Mat, local: &Mat, clone: &Mat) -> Result<Mat> {
    if dual.shape() != local.shape() || local.shape() != clone.shape() {
        return Err(Error::Dimension(format!(
            "dual {:?}, local {:?}, clone {:?}",
            dual.shape(),
            local.shape(),
            clone.shape()
        )));
    }
    Ok(dual + local - clone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chordal::build_decomposition;
    use crate::model::{AgentDynamics, Interconnection};

    fn lag() -> AgentDynamics {
        let s = |v| Mat::from_element(1, 1, v);
        AgentDynamics::new(s(-1.0), s(1.0), s(1.0), s(0.0))
    }

    #[test]
    fn single_agent_maps() {
        let agents = vec![lag()];
        let net = Network::new(agents.clone(), Interconnection::empty_for(&agents));
        let dec = build_decomposition(&net).unwrap();
        let maps = build_index_maps(&net, &dec).unwrap();
        assert_eq!(maps.len(), 4);
        for a in 0..4 {
            assert_eq!(maps.tilde(a).len(), 1);
            assert!(maps.hat(a).is_empty());
        }
        let q = maps.position(Symbol::q(0)).unwrap();
        assert_eq!(maps.bar(q), vec![(0, 0)]);
        assert!(maps.bar(maps.position(Symbol::p(0)).unwrap()).is_empty());
    }

    #[test]
    fn every_clique_and_equality_variable_is_mapped() {
        let agents = vec![lag(), lag(), lag()];
        let s = |v| Mat::from_element(1, 1, v);
        let h = Interconnection::empty_for(&agents)
            .with_block(1, 0, s(1.0))
            .with_block(2, 1, s(1.0));
        let net = Network::new(agents, h);
        let dec = build_decomposition(&net).unwrap();
        let maps = build_index_maps(&net, &dec).unwrap();
        for p in 0..dec.num_cliques() {
            let n = dec.clique_symbols(p).len();
            let mut seen: Vec<usize> = (0..maps.len())
                .flat_map(|a| maps.bar(a).into_iter().filter(|&(c, _)| c == p).map(|(_, pos)| pos))
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
        let mut seen: Vec<usize> = (0..maps.len()).flat_map(|a| maps.hat(a)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..dec.equality_symbols().len()).collect::<Vec<_>>());
    }

    #[test]
    fn averaging_and_duals() {
        let a = Mat::from_element(1, 1, 1.0);
        let b = Mat::from_element(1, 1, 4.0);
        assert_eq!(j_update(&[&a, &b]).unwrap()[(0, 0)], 2.5);
        assert!(j_update(&[]).is_err());
        assert_eq!(dual_update(&a, &b, &a).unwrap()[(0, 0)], 4.0);
        assert!(dual_update(&a, &Mat::zeros(2, 2), &a).is_err());
    }
}
