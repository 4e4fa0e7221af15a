//! Fixed-step RK4 simulation of the interconnected network
//! `x_i' = A_i x_i + B_i e_i`, `y_i = C_i x_i + D_i e_i`, `e = u + H y`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{block_diag, Network};

/// Output norm beyond which a trajectory counts as unbounded.
pub const BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Sample times, one per recorded step.
    pub times: Vec<f64>,
    /// Stacked outputs `y` at each sample time.
    pub outputs: Vec<DVector<f64>>,
    /// Largest `|y|_inf` seen.
    pub max_output: f64,
    pub bounded: bool,
    /// Time at which the state became non-finite or left the bound.
    pub diverged_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub horizon: f64,
    pub step: f64,
    /// Record every this many steps (the last step is always recorded).
    pub record_every: usize,
    /// Stacked initial state; zero if absent.
    pub initial_state: Option<DVector<f64>>,
}

impl SimulationSpec {
    pub fn new(horizon: f64, step: f64) -> Self {
        Self {
            horizon,
            step,
            record_every: 1,
            initial_state: None,
        }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn from_state(mut self, x0: DVector<f64>) -> Self {
        self.initial_state = Some(x0);
        self
    }
}

/// Integrates under the stacked exogenous input `u(t)` (length `sum m_i`).
pub fn simulate_network(
    net: &Network,
    input: impl Fn(f64) -> DVector<f64>,
    spec: &SimulationSpec,
) -> Result<Simulation> {
    let (horizon, step) = (spec.horizon, spec.step);
    if !(step > 0.0 && step.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need step > 0 and horizon >= 0, got {step}, {horizon}"
        )));
    }
    let a = block_diag(net.agents.iter().map(|g| g.a()));
    let b = block_diag(net.agents.iter().map(|g| g.b()));
    let c = block_diag(net.agents.iter().map(|g| g.c()));
    let d = block_diag(net.agents.iter().map(|g| g.d()));
    let h = net.h.dense();
    let (nx, ne, ny) = (a.nrows(), b.ncols(), c.nrows());
    // y = (I - D H)^-1 (C x + D u) resolves the algebraic loop
    let loop_inv = (Mat::identity(ny, ny) - &d * &h)
        .try_inverse()
        .ok_or_else(|| Error::InvalidNetwork("I - D H is singular; the interconnection is ill-posed".into()))?;
    let outputs_of = |x: &DVector<f64>, u: &DVector<f64>| -> DVector<f64> { &loop_inv * (&c * x + &d * u) };
    let field = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        let u = input(t);
        let y = outputs_of(x, &u);
        &a * x + &b * (u + &h * y)
    };
    let check = |u: DVector<f64>| -> Result<DVector<f64>> {
        if u.len() != ne {
            return Err(Error::Dimension(format!(
                "input has {} entries, expected {ne}",
                u.len()
            )));
        }
        Ok(u)
    };

    let steps = (horizon / step).ceil() as usize;
    let every = spec.record_every.max(1);
    let mut x = match &spec.initial_state {
        Some(x0) if x0.len() != nx => {
            return Err(Error::Dimension(format!(
                "initial state has {} entries, expected {nx}",
                x0.len()
            )));
        }
        Some(x0) => x0.clone(),
        None => DVector::zeros(nx),
    };
    let mut sim = Simulation {
        times: Vec::new(),
        outputs: Vec::new(),
        max_output: 0.0,
        bounded: true,
        diverged_at: None,
    };
    for k in 0..=steps {
        let t = k as f64 * step;
        let y = outputs_of(&x, &check(input(t))?);
        let peak = y.amax();
        if !peak.is_finite() || !x.iter().all(|v| v.is_finite()) || peak >= BOUND {
            sim.bounded = false;
            sim.diverged_at = Some(t);
            sim.max_output = if peak.is_finite() {
                sim.max_output.max(peak)
            } else {
                f64::INFINITY
            };
            break;
        }
        sim.max_output = sim.max_output.max(peak);
        if k % every == 0 || k == steps {
            sim.times.push(t);
            sim.outputs.push(y);
        }
        if k == steps {
            break;
        }
        let k1 = field(t, &x);
        let k2 = field(t + 0.5 * step, &(&x + &k1 * (0.5 * step)));
        let k3 = field(t + 0.5 * step, &(&x + &k2 * (0.5 * step)));
        let k4 = field(t + step, &(&x + &k3 * step));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
    }
    Ok(sim)
}
