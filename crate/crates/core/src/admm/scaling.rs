//! Input-channel rescaling. Agent `i` sees `e_i = c_i e~_i`, so
//! `B~ = c_i B`, `D~ = c_i D` and `H~_ij = H_ij / c_i`. The coupled matrix
//! `Qbar` is unchanged under `S~ = c_i S`, `R~ = c_i^2 R`, and each KYP
//! matrix changes by a congruence, so certificates map one-to-one.

use crate::model::{AgentDynamics, DissipativityCertificate, Interconnection, Network, Qsr};

#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub factors: Vec<f64>,
}

impl InputScaling {
    pub fn identity(n: usize) -> Self {
        Self { factors: vec![1.0; n] }
    }

    /// `c_i = sqrt(|H_i.|_F)`, the square root of the norm of everything
    /// agent `i` receives; 1 for agents without inputs from the network.
    pub fn balancing(net: &Network) -> Self {
        let factors = (0..net.len())
            .map(|i| {
                let s: f64 = net
                    .h
                    .blocks()
                    .filter(|((a, _), _)| *a == i)
                    .map(|(_, b)| b.norm_squared())
                    .sum();
                if s > 0.0 && s.is_finite() {
                    s.sqrt().sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { factors }
    }

    pub fn for_config(net: &Network, enabled: bool) -> Self {
        if enabled {
            Self::balancing(net)
        } else {
            Self::identity(net.len())
        }
    }

    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(|&c| c == 1.0)
    }

    pub fn apply(&self, net: &Network) -> Network {
        let agents: Vec<AgentDynamics> = net
            .agents
            .iter()
            .zip(&self.factors)
            .map(|(a, &c)| {
                let scaled = AgentDynamics::new(a.a().clone(), a.b() * c, a.c().clone(), a.d() * c);
                match a.fixed_qsr() {
                    Some(qsr) => scaled.with_fixed_qsr(Qsr {
                        q: qsr.q.clone(),
                        s: &qsr.s * c,
                        r: &qsr.r * (c * c),
                    }),
                    None => scaled,
                }
            })
            .collect();
        let mut h = Interconnection::new(net.h.input_dims().to_vec(), net.h.output_dims().to_vec());
        for ((i, j), b) in net.h.blocks() {
            h.insert(i, j, b / self.factors[i]);
        }
        Network::new(agents, h)
    }

    /// Maps certificates of the scaled network back to `net`. Declared
    /// supply rates are restored verbatim.
    pub fn restore(&self, net: &Network, x: &[DissipativityCertificate]) -> Vec<DissipativityCertificate> {
        x.iter()
            .zip(&self.factors)
            .zip(&net.agents)
            .map(|((xi, &c), a)| match a.fixed_qsr() {
                Some(qsr) => DissipativityCertificate::from_qsr(xi.p.clone(), qsr),
                None if c == 1.0 => xi.clone(),
                None => DissipativityCertificate::new(xi.p.clone(), xi.q.clone(), &xi.s / c, &xi.r / (c * c)),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_eigenvalue, Mat};
    use crate::stability::assemble_qbar;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn qbar_is_invariant() {
        let agents = vec![
            AgentDynamics::new(s(-1.0), s(1.0), s(1.0), s(0.2)),
            AgentDynamics::new(s(-2.0), s(0.5), s(1.0), s(0.0)).with_fixed_qsr(Qsr::passive(1)),
        ];
        let h = Interconnection::empty_for(&agents)
            .with_block(0, 1, s(9.0))
            .with_block(1, 0, s(-4.0));
        let net = Network::new(agents, h);
        let sc = InputScaling::balancing(&net);
        assert_eq!(sc.factors, vec![3.0, 2.0]);
        let scaled = sc.apply(&net);
        let x = vec![
            DissipativityCertificate::new(s(1.0), s(-0.3), s(0.4), s(0.7)),
            DissipativityCertificate::from_qsr(s(2.0), scaled.agents[1].fixed_qsr().unwrap()),
        ];
        let back = sc.restore(&net, &x);
        let a = assemble_qbar(&x, &scaled.h).unwrap().matrix;
        let b = assemble_qbar(&back, &net.h).unwrap().matrix;
        assert!((max_eigenvalue(&a).unwrap() - max_eigenvalue(&b).unwrap()).abs() < 1e-12);
        assert_eq!(back[1].s, s(0.5));
        assert!((back[0].r[(0, 0)] - 0.7 / 9.0).abs() < 1e-15);
    }
}
