//! Per-agent QSR machinery: the KYP matrix, membership tests, projection onto
//! the set of certificates an agent admits, and the declared-supply-rate
//! bypass.
//!
//! Everything here runs inside one agent: the realization matrices never
//! leave this module's values except as (P, Q, S, R) numbers.

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, min_eigenvalue, BlockLayout, BlockShape, Mat};
use crate::model::{AgentDynamics, DissipativityCertificate, ParamKind, SolverConfig};
use crate::projections::{
    project_psd_floor, AffineConeProblem, BlockLmi, ProblemBuilder, ProjectionOptions, Term, WarmStart,
};

/// The `(n+m)`-side KYP matrix
/// `[[A'P + PA - C'QC, PB - C'S - C'QD], [*, -R - S'D - D'S - D'QD]]`.
pub fn assemble_kyp(agent: &AgentDynamics, x: &DissipativityCertificate) -> Result<Mat> {
    x.check(agent, f64::INFINITY)?;
    let (a, b, c, d) = (agent.a(), agent.b(), agent.c(), agent.d());
    let (n, m) = (agent.n(), agent.m());
    let (p, q, s, r) = (&x.p, &x.q, &x.s, &x.r);
    let top_left = a.transpose() * p + p * a - c.transpose() * q * c;
    let top_right = p * b - c.transpose() * s - c.transpose() * q * d;
    let bottom_right = -r - s.transpose() * d - d.transpose() * s - d.transpose() * q * d;
    let mut k = Mat::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&top_left);
    k.view_mut((0, n), (n, m)).copy_from(&top_right);
    k.view_mut((n, 0), (m, n)).copy_from(&top_right.transpose());
    k.view_mut((n, n), (m, m)).copy_from(&bottom_right);
    Ok(crate::linalg::symmetrize(&k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// Largest eigenvalue of the KYP matrix.
    pub kyp_lambda_max: f64,
    /// Smallest eigenvalue of P.
    pub p_lambda_min: f64,
}

/// `member` iff `lambda_max(KYP) <= tol` and `lambda_min(P) >= delta_pd - tol`.
pub fn kyp_membership(agent: &AgentDynamics, x: &DissipativityCertificate, delta_pd: f64, tol: f64) -> Membership {
    let kyp = assemble_kyp(agent, x).and_then(|k| max_eigenvalue(&k));
    let pmin = min_eigenvalue(&x.p);
    match (kyp, pmin) {
        (Ok(k), Ok(p)) => Membership {
            member: k <= tol && p >= delta_pd - tol,
            kyp_lambda_max: k,
            p_lambda_min: p,
        },
        _ => Membership {
            member: false,
            kyp_lambda_max: f64::NAN,
            p_lambda_min: f64::NAN,
        },
    }
}

/// Layout `[P, Q, S, R]` of one agent's certificate.
pub fn certificate_layout(agent: &AgentDynamics) -> BlockLayout {
    BlockLayout::new(vec![
        BlockShape::Symmetric(agent.n()),
        BlockShape::Symmetric(agent.l()),
        BlockShape::General(agent.l(), agent.m()),
        BlockShape::Symmetric(agent.m()),
    ])
}

/// The agent's KYP constraint as a block LMI over `[P, Q, S, R]`.
pub fn kyp_lmi(agent: &AgentDynamics) -> BlockLmi {
    let (a, b, c, d) = (agent.a(), agent.b(), agent.c(), agent.d());
    let (p, q, s, r) = (0, 1, 2, 3);
    let ct = c.transpose();
    let dt = d.transpose();
    let mut lmi = BlockLmi::new(vec![agent.n(), agent.m()]);
    lmi.block_mut(0, 0)
        .push(Term::var(p).left(a.transpose()))
        .push(Term::var(p).right(a.clone()))
        .push(Term::var(q).left(ct.clone()).right(c.clone()).scaled(-1.0));
    lmi.block_mut(0, 1)
        .push(Term::var(p).right(b.clone()))
        .push(Term::var(s).left(ct.clone()).scaled(-1.0))
        .push(Term::var(q).left(ct).right(d.clone()).scaled(-1.0));
    lmi.block_mut(1, 1)
        .push(Term::var(r).scaled(-1.0))
        .push(Term::var(s).transposed().right(d.clone()).scaled(-1.0))
        .push(Term::var(s).left(dt.clone()).scaled(-1.0))
        .push(Term::var(q).left(dt).right(d.clone()).scaled(-1.0));
    lmi
}

/// Projection onto `{X : KYP(X) <= 0, P >= delta_pd I}` for one agent, set
/// up once and reused across iterations.
#[derive(Debug, Clone)]
pub struct KypProblem {
    problem: AffineConeProblem,
}

impl KypProblem {
    pub fn new(agent: &AgentDynamics, delta_pd: f64) -> Result<Self> {
        let mut b = ProblemBuilder::new(certificate_layout(agent));
        b.nsd(kyp_lmi(agent)).floor(0, delta_pd);
        Ok(Self { problem: b.build()? })
    }

    /// Number of scalar coordinates of the projection.
    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn project(
        &self,
        seed: &DissipativityCertificate,
        opts: &ProjectionOptions,
        warm: Option<&mut WarmStart>,
    ) -> Result<DissipativityCertificate> {
        let blocks = [seed.p.clone(), seed.q.clone(), seed.s.clone(), seed.r.clone()];
        let mut out = self.problem.project_blocks(&blocks, opts, warm)?.into_iter();
        let mut next = || out.next().expect("four blocks");
        Ok(DissipativityCertificate::new(next(), next(), next(), next()))
    }
}

/// Euclidean projection of `seed` onto the agent's certificate set.
pub fn project_kyp(
    agent: &AgentDynamics,
    seed: &DissipativityCertificate,
    cfg: &SolverConfig,
) -> Result<DissipativityCertificate> {
    if agent.fixed_qsr().is_some() {
        return Err(Error::InvalidParameter(
            "agent declares a fixed supply rate; use fixed_certificate".into(),
        ));
    }
    seed.check(agent, f64::INFINITY)?;
    KypProblem::new(agent, cfg.delta_pd)?.project(seed, &ProjectionOptions::from_config(cfg), None)
}

/// Certificate of an agent with a declared supply rate: the floored `P` seed
/// together with the declared `(Q, S, R)`, which no projection ever alters.
pub fn fixed_certificate(agent: &AgentDynamics, p_seed: &Mat, delta_pd: f64) -> Result<DissipativityCertificate> {
    let qsr = agent
        .fixed_qsr()
        .ok_or_else(|| Error::InvalidParameter("agent has no declared supply rate".into()))?;
    if (p_seed.nrows(), p_seed.ncols()) != (agent.n(), agent.n()) {
        return Err(Error::Dimension(format!(
            "P seed is {}x{}, expected {}x{}",
            p_seed.nrows(),
            p_seed.ncols(),
            agent.n(),
            agent.n()
        )));
    }
    let p = project_psd_floor(p_seed, delta_pd)?;
    Ok(DissipativityCertificate::from_qsr(p, qsr))
}

/// The default starting point: the passivity seed `(I, 0, I/2, 0)` mapped into
/// the agent's certificate set.
pub fn initial_certificate(
    agent: &AgentDynamics,
    cfg: &SolverConfig,
    problem: Option<&KypProblem>,
) -> Result<DissipativityCertificate> {
    let (n, m, l) = (agent.n(), agent.m(), agent.l());
    let seed = DissipativityCertificate::new(
        Mat::identity(n, n),
        Mat::zeros(l, l),
        crate::linalg::eye(l, m) * 0.5,
        Mat::zeros(m, m),
    );
    if agent.fixed_qsr().is_some() {
        return fixed_certificate(agent, &seed.p, cfg.delta_pd);
    }
    let opts = ProjectionOptions::from_config(cfg);
    match problem {
        Some(p) => p.project(&seed, &opts, None),
        None => KypProblem::new(agent, cfg.delta_pd)?.project(&seed, &opts, None),
    }
}

/// Blocks of a certificate by kind, in the fixed `[P, Q, S, R]` order.
pub fn certificate_blocks(x: &DissipativityCertificate) -> [&Mat; 4] {
    ParamKind::ALL.map(|k| x.block(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Qsr;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn lag() -> AgentDynamics {
        AgentDynamics::new(s(-1.0), s(1.0), s(1.0), s(0.0))
    }

    fn cert(p: f64, q: f64, sv: f64, r: f64) -> DissipativityCertificate {
        DissipativityCertificate::new(s(p), s(q), s(sv), s(r))
    }

    #[test]
    fn kyp_examples() {
        let k = assemble_kyp(&lag(), &cert(0.5, 0.0, 0.5, 0.0)).unwrap();
        assert_eq!(k, Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]));
        let k = assemble_kyp(&lag(), &cert(1.0, -1.0, 0.0, 1.0)).unwrap();
        assert_eq!(k, Mat::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let zero = AgentDynamics::new(Mat::zeros(2, 2), Mat::zeros(2, 1), Mat::zeros(1, 2), Mat::zeros(1, 1));
        let x = DissipativityCertificate::new(Mat::identity(2, 2), s(0.0), Mat::zeros(1, 1), s(0.0));
        assert_eq!(assemble_kyp(&zero, &x).unwrap(), Mat::zeros(3, 3));
        assert!(assemble_kyp(&lag(), &DissipativityCertificate::zeros(2, 1, 1)).is_err());
    }

    #[test]
    fn lmi_builder_matches_direct_assembly() {
        let agent = AgentDynamics::new(
            Mat::from_row_slice(2, 2, &[-1.0, 0.4, -0.3, -2.0]),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]),
            Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]),
            Mat::from_row_slice(2, 2, &[0.2, -0.1, 0.0, 0.3]),
        );
        let x = DissipativityCertificate::new(
            Mat::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]),
            Mat::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, 0.2]),
            Mat::from_row_slice(2, 2, &[0.5, -0.7, 0.1, 0.9]),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]),
        );
        let via_lmi = kyp_lmi(&agent).eval(&[x.p.clone(), x.q.clone(), x.s.clone(), x.r.clone()]);
        assert!((via_lmi - assemble_kyp(&agent, &x).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn membership_examples() {
        let m = kyp_membership(&lag(), &cert(0.5, 0.0, 0.5, 0.0), 1e-6, 1e-9);
        assert!(m.member);
        assert!(m.kyp_lambda_max.abs() < 1e-15);
        assert!(!kyp_membership(&lag(), &cert(0.5, 0.0, 1.0, 0.0), 1e-6, 1e-9).member);
        assert!(!kyp_membership(&lag(), &cert(0.0, 0.0, 0.0, 0.0), 1e-6, 1e-9).member);
    }

    #[test]
    fn projection_of_member_is_identity() {
        let cfg = SolverConfig::default();
        let x = cert(1.0, -1.0, 0.0, 1.0);
        assert_eq!(project_kyp(&lag(), &x, &cfg).unwrap(), x);
    }

    #[test]
    fn projection_of_zero_seed_lands_near_floor() {
        let cfg = SolverConfig::default();
        let x = project_kyp(&lag(), &cert(0.0, 0.0, 0.0, 0.0), &cfg).unwrap();
        assert!(kyp_membership(&lag(), &x, cfg.delta_pd, 10.0 * cfg.proj_tol).member);
        for v in [x.p[(0, 0)], x.q[(0, 0)], x.s[(0, 0)], x.r[(0, 0)]] {
            assert!(v.abs() < 1e-5, "{x:?}");
        }
    }

    #[test]
    fn fixed_agents() {
        let passive = lag().with_fixed_qsr(Qsr::passive(1));
        let x = fixed_certificate(&passive, &s(1.0), 1e-6).unwrap();
        assert_eq!(x, cert(1.0, 0.0, 0.5, 0.0));
        let x = fixed_certificate(&passive, &s(-3.0), 1e-6).unwrap();
        assert_eq!(x.p, s(1e-6));
        let gain = lag().with_fixed_qsr(Qsr::l2_gain(1, 1, 2.0));
        let x = fixed_certificate(&gain, &s(0.7), 1e-6).unwrap();
        assert_eq!(x, cert(0.7, -1.0, 0.0, 4.0));
        assert!(fixed_certificate(&lag(), &s(1.0), 1e-6).is_err());
        assert!(project_kyp(&passive, &cert(1.0, 0.0, 0.5, 0.0), &SolverConfig::default()).is_err());
    }
}
