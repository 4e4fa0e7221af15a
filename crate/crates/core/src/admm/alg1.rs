//! ADMM with agent-local certificate projections and one global projection
//! onto the stability set.

use std::time::Instant;

use rayon::prelude::*;

use crate::admm::audit::{AuditBus, Endpoint, MessageKind};
use crate::admm::scaling::InputScaling;
use crate::admm::{
    agent_project, cert_values, check_inputs, dense_check, kyp_problems, max_ms, thread_pool, timed, Algorithm,
    RunOutcome, RunStatus, TraceRow,
};
use crate::dissipativity::initial_certificate;
use crate::error::Result;
use crate::model::{DissipativityCertificate, Network, SolverConfig};
use crate::projections::{ProjectionOptions, WarmStart};
use crate::stability::GlobalStabilityProblem;

/// Iterates
/// `X_i = Pi_Pi(Z_i - T_i)`, `Z = Pi_Q(Xh + T)`, `T_i += Xh_i - Z_i`, where
/// `Xh = alpha X + (1 - alpha) Z` is the relaxed iterate,
/// from `X = Z` at the default seeds and `T = 0`, checking the dense
/// certificate every `check_every` iterations.
pub fn run_alg1(net: &Network, cfg: &SolverConfig) -> Result<RunOutcome> {
    check_inputs(net, cfg)?;
    let start = Instant::now();
    let n = net.len();
    let epsilon = cfg.effective_epsilon(&net.h);
    let scaling = InputScaling::for_config(net, cfg.input_scaling);
    let original = net;
    let scaled = scaling.apply(net);
    let net = &scaled;
    let pool = thread_pool(cfg)?;
    let kyp = kyp_problems(net, cfg)?;
    let global = GlobalStabilityProblem::new(net, epsilon)?;
    let opts = ProjectionOptions::from_config(cfg);
    let max_projection_dim = kyp
        .iter()
        .flatten()
        .map(|p| p.dim())
        .max()
        .unwrap_or(0)
        .max(global.dim());

    let mut x = (0..n)
        .map(|i| initial_certificate(&net.agents[i], cfg, kyp[i].as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut z = x.clone();
    let mut t: Vec<DissipativityCertificate> = net.agents.iter().map(DissipativityCertificate::zeros_for).collect();
    let mut warm_agents = vec![WarmStart::default(); n];
    let mut warm_global = WarmStart::default();
    let mut bus = AuditBus::new(original, cfg.audit);
    bus.taint(net);
    let mut trace = Vec::new();

    let outcome =
        |status, iterations, certificates: Vec<DissipativityCertificate>, lambda_max, trace, bus: AuditBus, message| {
            RunOutcome {
                algorithm: Algorithm::Alg1,
                status,
                iterations,
                certificates: scaling.restore(original, &certificates),
                lambda_max,
                epsilon,
                trace,
                audit: bus.into_log(),
                max_projection_dim,
                wall_s: start.elapsed().as_secs_f64(),
                message,
            }
        };

    let (ok, lam) = dense_check(original, &scaling, &x, cfg, epsilon)?;
    if ok {
        return Ok(outcome(RunStatus::Certified, 0, x, Some(lam), trace, bus, None));
    }
    let mut last_lambda = Some(lam);

    for k in 1..=cfg.max_iter {
        let step = (|| -> Result<TraceRow> {
            // Agent-local projections, in parallel.
            let results: Vec<(Result<DissipativityCertificate>, f64)> = pool.install(|| {
                warm_agents
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, warm)| {
                        timed(|| {
                            agent_project(
                                net,
                                i,
                                kyp[i].as_ref(),
                                &z[i].axpy(-1.0, &t[i]),
                                &opts,
                                cfg.delta_pd,
                                warm,
                            )
                        })
                    })
                    .collect()
            });
            let t_x = max_ms(results.iter().map(|r| r.1));
            for (i, (r, _)) in results.into_iter().enumerate() {
                x[i] = r?;
                bus.post(
                    Endpoint::Agent(i),
                    Endpoint::Coordinator,
                    MessageKind::Certificate,
                    &cert_values(&x[i]),
                );
                bus.post(
                    Endpoint::Agent(i),
                    Endpoint::Coordinator,
                    MessageKind::DualSlice,
                    &cert_values(&t[i]),
                );
            }

            // Global projection of the relaxed iterate plus dual.
            let alpha = cfg.relaxation;
            let xh: Vec<DissipativityCertificate> = if alpha == 1.0 {
                x.clone()
            } else {
                x.iter()
                    .zip(&z)
                    .map(|(xi, zi)| zi.axpy(alpha, &xi.axpy(-1.0, zi)))
                    .collect()
            };
            let seed: Vec<DissipativityCertificate> = xh.iter().zip(&t).map(|(a, b)| a.axpy(1.0, b)).collect();
            let (z_new, t_z) = timed(|| global.project(net, &seed, &opts, Some(&mut warm_global)));
            let z_new = z_new?;
            for (i, zi) in z_new.iter().enumerate() {
                bus.post(
                    Endpoint::Coordinator,
                    Endpoint::Agent(i),
                    MessageKind::CloneSlice,
                    &cert_values(zi),
                );
            }

            // Dual updates, agent-local.
            let duals: Vec<((DissipativityCertificate, f64, f64), f64)> = pool.install(|| {
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        timed(|| {
                            let primal = x[i].axpy(-1.0, &z_new[i]).squared_norm();
                            let dual = z_new[i].axpy(-1.0, &z[i]).squared_norm();
                            (t[i].axpy(1.0, &xh[i].axpy(-1.0, &z_new[i])), primal, dual)
                        })
                    })
                    .collect()
            });
            let t_d = max_ms(duals.iter().map(|d| d.1));
            let (mut primal, mut dual) = (0.0, 0.0);
            for (i, ((ti, p, d), _)) in duals.into_iter().enumerate() {
                t[i] = ti;
                primal += p;
                dual += d;
                bus.post(
                    Endpoint::Agent(i),
                    Endpoint::Coordinator,
                    MessageKind::ScalarResidual,
                    &[p, d],
                );
            }
            z = z_new;
            Ok(TraceRow {
                k,
                primal_res: primal.sqrt(),
                dual_res: dual.sqrt(),
                lambda_max_qbar: None,
                t_p_ms: t_x,
                t_j_ms: t_z,
                t_d_ms: t_d,
            })
        })();
        let mut row = match step {
            Ok(row) => row,
            Err(e) => {
                let e = e.at_iteration(k);
                return Ok(outcome(
                    RunStatus::Error,
                    k,
                    x,
                    last_lambda,
                    trace,
                    bus,
                    Some(e.to_string()),
                ));
            }
        };
        if k % cfg.check_every == 0 || k == cfg.max_iter {
            let (ok, lam) = dense_check(original, &scaling, &x, cfg, epsilon).map_err(|e| e.at_iteration(k))?;
            row.lambda_max_qbar = Some(lam);
            last_lambda = Some(lam);
            trace.push(row);
            if ok {
                return Ok(outcome(RunStatus::Certified, k, x, Some(lam), trace, bus, None));
            }
        } else {
            trace.push(row);
        }
    }
    let message = Some(format!("no certificate after {} iterations", cfg.max_iter));
    Ok(outcome(
        RunStatus::MaxIter,
        cfg.max_iter,
        x,
        last_lambda,
        trace,
        bus,
        message,
    ))
}
