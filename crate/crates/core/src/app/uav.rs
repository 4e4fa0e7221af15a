//! Planar UAV swarm: subgroups of one leader and two followers, every UAV under
//! the same LQR state feedback.
//!
//! Each UAV is one agent with the closed-loop matrix `A - BK`, full-state
//! output (`C = I`, `D = 0`) and the coupling `BK` applied through the
//! interconnection. A follower receives `BK` times its subgroup leader's
//! state; subgroup leaders other than the first receive `BK` times the first
//! leader's state. The desired-position input `BK x_d` is exogenous and does
//! not enter the interconnection.

use crate::error::{Error, Result};
use nalgebra::DVector;

use crate::linalg::Mat;
use crate::model::{AgentDynamics, Interconnection, Network};

pub const UAV_STATES: usize = 6;
pub const UAVS_PER_SUBGROUP: usize = 3;

/// How subgroup leaders are coupled to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeaderTopology {
    /// Every leader follows the first subgroup's leader.
    #[default]
    Star,
    /// Leader `k` follows leader `k - 1`.
    Chain,
}

impl std::str::FromStr for LeaderTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Self::Star),
            "chain" => Ok(Self::Chain),
            other => Err(Error::InvalidParameter(format!("unknown leader topology '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavParams {
    pub mass: f64,
    pub inertia: f64,
    pub wing_length: f64,
    pub gravity: f64,
    /// 2x6 state-feedback gain.
    pub gain: Mat,
    pub num_subgroups: usize,
    pub topology: LeaderTopology,
}

impl Default for UavParams {
    fn default() -> Self {
        Self {
            mass: 3.0,
            inertia: 1.0,
            wing_length: 0.2,
            gravity: 9.81,
            gain: lqr_gain(),
            num_subgroups: 4,
            topology: LeaderTopology::Star,
        }
    }
}

/// LQR gain of the reference design.
pub fn lqr_gain() -> Mat {
    Mat::from_row_slice(
        2,
        6,
        &[
            7.07, 7.07, -49.00, 8.70, 5.12, -15.81, //
            -7.07, 7.07, 49.00, -8.70, 5.12, 15.81,
        ],
    )
}

impl UavParams {
    pub fn with_subgroups(num_subgroups: usize) -> Self {
        Self {
            num_subgroups,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("wing_length", self.wing_length),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.gain.nrows(), self.gain.ncols()) != (2, UAV_STATES) {
            return Err(Error::InvalidParameter(format!(
                "gain must be 2x6, got {}x{}",
                self.gain.nrows(),
                self.gain.ncols()
            )));
        }
        if !(1..=4).contains(&self.num_subgroups) {
            return Err(Error::InvalidParameter(format!(
                "num_subgroups must be in 1..=4, got {}",
                self.num_subgroups
            )));
        }
        Ok(())
    }

    /// Open-loop state matrix.
    pub fn a(&self) -> Mat {
        let mut a = Mat::zeros(UAV_STATES, UAV_STATES);
        for k in 0..3 {
            a[(k, k + 3)] = 1.0;
        }
        a[(3, 2)] = -self.gravity;
        a
    }

    /// Input matrix (two rotor thrusts).
    pub fn b(&self) -> Mat {
        let mut b = Mat::zeros(UAV_STATES, 2);
        b[(4, 0)] = 1.0 / self.mass;
        b[(4, 1)] = 1.0 / self.mass;
        b[(5, 0)] = -self.wing_length / self.inertia;
        b[(5, 1)] = self.wing_length / self.inertia;
        b
    }

    pub fn bk(&self) -> Mat {
        self.b() * &self.gain
    }

    pub fn a_cl(&self) -> Mat {
        self.a() - self.bk()
    }

    pub fn num_uavs(&self) -> usize {
        self.num_subgroups * UAVS_PER_SUBGROUP
    }
}

/// Agent index of the leader of subgroup `g` (0-based).
pub fn leader(g: usize) -> usize {
    g * UAVS_PER_SUBGROUP
}

pub fn build_uav_network(params: &UavParams) -> Result<Network> {
    params.validate()?;
    let a_cl = params.a_cl();
    let bk = params.bk();
    let eye = Mat::identity(UAV_STATES, UAV_STATES);
    let agents: Vec<AgentDynamics> = (0..params.num_uavs())
        .map(|_| {
            AgentDynamics::new(
                a_cl.clone(),
                eye.clone(),
                eye.clone(),
                Mat::zeros(UAV_STATES, UAV_STATES),
            )
        })
        .collect();
    let mut h = Interconnection::empty_for(&agents);
    for g in 0..params.num_subgroups {
        let l = leader(g);
        for f in 1..UAVS_PER_SUBGROUP {
            h.insert(l + f, l, bk.clone());
        }
        if g > 0 {
            let source = match params.topology {
                LeaderTopology::Star => leader(0),
                LeaderTopology::Chain => leader(g - 1),
            };
            h.insert(l, source, bk.clone());
        }
    }
    Ok(Network::new(agents, h))
}

/// Stacked exogenous input `u_i = BK x_i^d` for a step to the formation
/// position `(2 k, 1)` of UAV `k`, other desired states zero.
pub fn formation_input(params: &UavParams) -> DVector<f64> {
    let bk = params.bk();
    let mut u = DVector::zeros(params.num_uavs() * UAV_STATES);
    for k in 0..params.num_uavs() {
        let mut xd = DVector::zeros(UAV_STATES);
        xd[0] = 2.0 * k as f64;
        xd[1] = 1.0;
        u.rows_mut(k * UAV_STATES, UAV_STATES).copy_from(&(&bk * xd));
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::simulate::{simulate_network, SimulationSpec};

    #[test]
    fn formation_step_stays_bounded() {
        let p = UavParams::default();
        let net = build_uav_network(&p).unwrap();
        let u = formation_input(&p);
        let sim = simulate_network(&net, |_| u.clone(), &SimulationSpec::new(20.0, 1e-3).record_every(1000)).unwrap();
        assert!(sim.bounded, "peak {}", sim.max_output);
        assert!(sim.max_output > 1.0);
    }

    #[test]
    fn input_matrix_and_gain() {
        let p = UavParams::default();
        let b = p.b();
        let expect = Mat::from_row_slice(6, 2, &[0., 0., 0., 0., 0., 0., 0., 0., 1. / 3., 1. / 3., -0.2, 0.2]);
        assert!((b - expect).amax() < 1e-15);
        assert_eq!(
            p.gain.row(0).iter().copied().collect::<Vec<_>>(),
            vec![7.07, 7.07, -49.00, 8.70, 5.12, -15.81]
        );
    }

    #[test]
    fn closed_loop_is_hurwitz() {
        let eig = UavParams::default().a_cl().complex_eigenvalues();
        assert!(eig.iter().all(|z| z.re < 0.0), "{eig:?}");
    }

    #[test]
    fn structure_counts() {
        for groups in 1..=4 {
            let net = build_uav_network(&UavParams::with_subgroups(groups)).unwrap();
            assert_eq!(net.len(), 3 * groups);
            assert_eq!(net.h.num_blocks(), 2 * groups + (groups - 1));
            assert!(net.validate(1e-10).is_ok());
        }
        let net = build_uav_network(&UavParams::with_subgroups(1)).unwrap();
        assert_eq!(net.h.num_blocks(), 2);
        assert!(build_uav_network(&UavParams::with_subgroups(5)).is_err());
    }
}
