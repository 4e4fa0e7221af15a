//! Consensus ADMM over the clique decomposition: agent, clique and equality
//! projections run side by side and agree through the shared variable `J`.

use std::time::Instant;

use rayon::prelude::*;

use crate::admm::audit::{AuditBus, Endpoint, MessageKind};
use crate::admm::index_maps::{build_index_maps, dual_update, j_update, Consumer, IndexMaps};
use crate::admm::scaling::InputScaling;
use crate::admm::{
    agent_project, cert_values, check_inputs, dense_check, kyp_problems, max_ms, thread_pool, timed, Algorithm,
    RunOutcome, RunStatus, TraceRow,
};
use crate::chordal::DecomposedStability;
use crate::dissipativity::initial_certificate;
use crate::error::Result;
use crate::linalg::{eye, BlockShape, Mat};
use crate::model::{DissipativityCertificate, Network, ParamKind, SolverConfig, Symbol};
use crate::projections::{ProjectionOptions, WarmStart};

fn values<'a>(blocks: impl IntoIterator<Item = &'a Mat>) -> Vec<f64> {
    blocks.into_iter().flat_map(|m| m.iter().copied()).collect()
}

fn initial_block(shape: BlockShape) -> Mat {
    let (r, c) = shape.dims();
    eye(r, c)
}

fn sum_sq_diff(a: &[Mat], b: &[&Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - *y).norm_squared()).sum()
}

/// Where each local variable's blocks live in `J`.
struct Routing {
    /// `agent[i][kind]`: block of `J`, if the parameter is free or is `P`.
    agent: Vec<[Option<usize>; 4]>,
    clique: Vec<Vec<usize>>,
    equality: Vec<usize>,
}

impl Routing {
    fn new(net: &Network, maps: &IndexMaps, cliques: usize, equality_len: usize) -> Self {
        let mut agent = vec![[None; 4]; net.len()];
        let mut clique: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cliques];
        let mut equality = Vec::new();
        for (a, cons) in maps.consumers.iter().enumerate() {
            for c in cons {
                match *c {
                    Consumer::Agent { agent: i, kind } => agent[i][kind.index()] = Some(a),
                    Consumer::Clique { clique: p, pos } => clique[p].push((pos, a)),
                    Consumer::Equality { pos } => equality.push((pos, a)),
                }
            }
        }
        let order = |mut v: Vec<(usize, usize)>| {
            v.sort_unstable();
            v.into_iter().map(|(_, a)| a).collect::<Vec<_>>()
        };
        let routing = Self {
            agent,
            clique: clique.into_iter().map(order).collect(),
            equality: order(equality),
        };
        debug_assert_eq!(routing.equality.len(), equality_len);
        routing
    }
}

/// Iterates, from `J` at the default seeds with every `Y` at the identity
/// and all duals zero:
/// local projections of `J - dual` (agents, cliques and the equalities in
/// parallel), then `J` as the mean of `local + dual` over each block's
/// consumers, then `dual += local - J`.
pub fn run_alg2(net: &Network, cfg: &SolverConfig) -> Result<RunOutcome> {
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
    let stab = DecomposedStability::new(net, epsilon)?;
    let dec = &stab.decomposition;
    let maps = build_index_maps(net, dec)?;
    let m = dec.num_cliques();
    let route = Routing::new(net, &maps, m, stab.equality.symbols().len());
    let opts = ProjectionOptions::from_config(cfg);
    let max_projection_dim = kyp
        .iter()
        .flatten()
        .map(|p| p.dim())
        .max()
        .unwrap_or(0)
        .max(stab.max_projection_dim());

    let mut x = (0..n)
        .map(|i| initial_certificate(&net.agents[i], cfg, kyp[i].as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut j: Vec<Mat> = maps
        .blocks
        .iter()
        .zip(&maps.shapes)
        .map(|(s, &shape)| match *s {
            Symbol::Param { agent, kind } => x[agent].block(kind).clone(),
            Symbol::Y { .. } => initial_block(shape),
        })
        .collect();
    let gather = |j: &[Mat], idx: &[usize]| -> Vec<Mat> { idx.iter().map(|&a| j[a].clone()).collect() };
    let mut t: Vec<DissipativityCertificate> = net.agents.iter().map(DissipativityCertificate::zeros_for).collect();
    let mut z: Vec<Vec<Mat>> = route.clique.iter().map(|idx| gather(&j, idx)).collect();
    let mut u: Vec<Vec<Mat>> = z.iter().map(|b| b.iter().map(|m| m * 0.0).collect()).collect();
    let mut w: Vec<Mat> = gather(&j, &route.equality);
    let mut v: Vec<Mat> = w.iter().map(|m| m * 0.0).collect();
    let mut warm_agents = vec![WarmStart::default(); n];
    let mut warm_cliques = vec![WarmStart::default(); m];
    let mut bus = AuditBus::new(original, cfg.audit);
    bus.taint(net);
    let mut trace = Vec::new();

    let outcome =
        |status, iterations, certificates: Vec<DissipativityCertificate>, lambda_max, trace, bus: AuditBus, message| {
            RunOutcome {
                algorithm: Algorithm::Alg2,
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
            // Local projections: agents, cliques and the equalities all run
            // concurrently in the model, so the phase costs the slowest task.
            let agent_seed = |i: usize| -> DissipativityCertificate {
                let mut s = x[i].clone();
                for kind in ParamKind::ALL {
                    if let Some(a) = route.agent[i][kind.index()] {
                        *s.block_mut(kind) = &j[a] - t[i].block(kind);
                    }
                }
                s
            };
            let agents: Vec<(Result<DissipativityCertificate>, f64)> = pool.install(|| {
                warm_agents
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, warm)| {
                        timed(|| agent_project(net, i, kyp[i].as_ref(), &agent_seed(i), &opts, cfg.delta_pd, warm))
                    })
                    .collect()
            });
            let cliques: Vec<(Result<Vec<Mat>>, f64)> = pool.install(|| {
                warm_cliques
                    .par_iter_mut()
                    .enumerate()
                    .map(|(p, warm)| {
                        timed(|| {
                            let seed: Vec<Mat> = route.clique[p].iter().zip(&u[p]).map(|(&a, up)| &j[a] - up).collect();
                            stab.cliques[p].project(&seed, &opts, Some(warm))
                        })
                    })
                    .collect()
            });
            let (w_new, t_w) = timed(|| {
                let seed: Vec<Mat> = route.equality.iter().zip(&v).map(|(&a, va)| &j[a] - va).collect();
                stab.equality.project(&seed)
            });
            let t_p = max_ms(
                agents
                    .iter()
                    .map(|r| r.1)
                    .chain(cliques.iter().map(|r| r.1))
                    .chain([t_w]),
            );
            for (i, (r, _)) in agents.into_iter().enumerate() {
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
            for (p, (r, _)) in cliques.into_iter().enumerate() {
                z[p] = r?;
                bus.post(
                    Endpoint::Clique(p),
                    Endpoint::Coordinator,
                    MessageKind::CloneSlice,
                    &values(&z[p]),
                );
                bus.post(
                    Endpoint::Clique(p),
                    Endpoint::Coordinator,
                    MessageKind::DualSlice,
                    &values(&u[p]),
                );
            }
            w = w_new?;
            bus.post(
                Endpoint::Equality,
                Endpoint::Coordinator,
                MessageKind::CloneSlice,
                &values(&w),
            );
            bus.post(
                Endpoint::Equality,
                Endpoint::Coordinator,
                MessageKind::DualSlice,
                &values(&v),
            );

            // Relaxed locals `alpha * local + (1 - alpha) * J`.
            let alpha = cfg.relaxation;
            let relax = |local: &Mat, a: usize| -> Mat {
                if alpha == 1.0 {
                    local.clone()
                } else {
                    local * alpha + &j[a] * (1.0 - alpha)
                }
            };
            let xh: Vec<DissipativityCertificate> = (0..n)
                .map(|i| {
                    let mut c = x[i].clone();
                    for kind in ParamKind::ALL {
                        if let Some(a) = route.agent[i][kind.index()] {
                            *c.block_mut(kind) = relax(x[i].block(kind), a);
                        }
                    }
                    c
                })
                .collect();
            let zh: Vec<Vec<Mat>> = (0..m)
                .map(|p| route.clique[p].iter().zip(&z[p]).map(|(&a, zp)| relax(zp, a)).collect())
                .collect();
            let wh: Vec<Mat> = route.equality.iter().zip(&w).map(|(&a, wa)| relax(wa, a)).collect();

            // Consensus: average `local + dual` over each block's consumers.
            let (j_new, t_j) = timed(|| -> Result<Vec<Mat>> {
                maps.consumers
                    .iter()
                    .map(|cons| {
                        let copies: Vec<Mat> = cons
                            .iter()
                            .map(|c| match *c {
                                Consumer::Agent { agent, kind } => xh[agent].block(kind) + t[agent].block(kind),
                                Consumer::Clique { clique, pos } => &zh[clique][pos] + &u[clique][pos],
                                Consumer::Equality { pos } => &wh[pos] + &v[pos],
                            })
                            .collect();
                        j_update(&copies.iter().collect::<Vec<_>>())
                    })
                    .collect()
            });
            let j_new = j_new?;
            let dual_sq: f64 = maps
                .consumers
                .iter()
                .enumerate()
                .map(|(a, cons)| cons.len() as f64 * (&j_new[a] - &j[a]).norm_squared())
                .sum();
            j = j_new;
            for i in 0..n {
                let slice: Vec<&Mat> = route.agent[i].iter().flatten().map(|&a| &j[a]).collect();
                bus.post(
                    Endpoint::Coordinator,
                    Endpoint::Agent(i),
                    MessageKind::CloneSlice,
                    &values(slice),
                );
            }
            for p in 0..m {
                let slice: Vec<&Mat> = route.clique[p].iter().map(|&a| &j[a]).collect();
                bus.post(
                    Endpoint::Coordinator,
                    Endpoint::Clique(p),
                    MessageKind::CloneSlice,
                    &values(slice),
                );
            }
            let slice: Vec<&Mat> = route.equality.iter().map(|&a| &j[a]).collect();
            bus.post(
                Endpoint::Coordinator,
                Endpoint::Equality,
                MessageKind::CloneSlice,
                &values(slice),
            );

            // Dual updates, each at its owner.
            let (agent_duals, cliques_duals, eq_dual) = pool.install(|| {
                let agent_duals: Vec<(Result<(DissipativityCertificate, f64)>, f64)> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        timed(|| {
                            let mut ti = t[i].clone();
                            let mut sq = 0.0;
                            for kind in ParamKind::ALL {
                                if let Some(a) = route.agent[i][kind.index()] {
                                    sq += (x[i].block(kind) - &j[a]).norm_squared();
                                    *ti.block_mut(kind) = dual_update(t[i].block(kind), xh[i].block(kind), &j[a])?;
                                }
                            }
                            Ok((ti, sq))
                        })
                    })
                    .collect();
                let clique_duals: Vec<(Result<(Vec<Mat>, f64)>, f64)> = (0..m)
                    .into_par_iter()
                    .map(|p| {
                        timed(|| {
                            let jp: Vec<&Mat> = route.clique[p].iter().map(|&a| &j[a]).collect();
                            let sq = sum_sq_diff(&z[p], &jp);
                            let up = u[p]
                                .iter()
                                .zip(&zh[p])
                                .zip(&jp)
                                .map(|((up, zp), jp)| dual_update(up, zp, jp))
                                .collect::<Result<Vec<_>>>()?;
                            Ok((up, sq))
                        })
                    })
                    .collect();
                let eq_dual = timed(|| -> Result<(Vec<Mat>, f64)> {
                    let jh: Vec<&Mat> = route.equality.iter().map(|&a| &j[a]).collect();
                    let sq = sum_sq_diff(&w, &jh);
                    let vn = v
                        .iter()
                        .zip(&wh)
                        .zip(&jh)
                        .map(|((va, wa), ja)| dual_update(va, wa, ja))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((vn, sq))
                });
                (agent_duals, clique_duals, eq_dual)
            });
            let t_d = max_ms(
                agent_duals
                    .iter()
                    .map(|r| r.1)
                    .chain(cliques_duals.iter().map(|r| r.1))
                    .chain([eq_dual.1]),
            );
            let mut primal_sq = 0.0;
            for (i, (r, _)) in agent_duals.into_iter().enumerate() {
                let (ti, sq) = r?;
                t[i] = ti;
                primal_sq += sq;
                bus.post(
                    Endpoint::Agent(i),
                    Endpoint::Coordinator,
                    MessageKind::ScalarResidual,
                    &[sq],
                );
            }
            for (p, (r, _)) in cliques_duals.into_iter().enumerate() {
                let (up, sq) = r?;
                u[p] = up;
                primal_sq += sq;
                bus.post(
                    Endpoint::Clique(p),
                    Endpoint::Coordinator,
                    MessageKind::ScalarResidual,
                    &[sq],
                );
            }
            let (vn, sq) = eq_dual.0?;
            v = vn;
            primal_sq += sq;
            bus.post(
                Endpoint::Equality,
                Endpoint::Coordinator,
                MessageKind::ScalarResidual,
                &[sq],
            );
            Ok(TraceRow {
                k,
                primal_res: primal_sq.sqrt(),
                dual_res: dual_sq.sqrt(),
                lambda_max_qbar: None,
                t_p_ms: t_p,
                t_j_ms: t_j,
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
