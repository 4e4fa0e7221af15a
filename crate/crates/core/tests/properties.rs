//! Invariant checks on randomly generated inputs.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dissipnet::admm::{dual_update, j_update, InputScaling};
use dissipnet::app::io::NetworkFile;
use dissipnet::chordal::{chordal_completion, decompose_nsd, maximal_cliques, reconstruct, StructureGraph};
use dissipnet::linalg::{max_eigenvalue, Mat};
use dissipnet::model::{
    diag_block, stack_certificates, validate_network, AgentDynamics, DissipativityCertificate, Interconnection,
    Network, SolverConfig,
};
use dissipnet::projections::project_nsd;
use dissipnet::stability::{assemble_qbar, qbar_block};

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0))
}

fn sym(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let m = mat(rng, n, n);
    (&m + m.transpose()) * 0.5
}

/// A random network of single-state agents and matching certificates.
fn network(rng: &mut ChaCha8Rng, n: usize) -> (Network, Vec<DissipativityCertificate>) {
    let l: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    let m: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    let agents: Vec<AgentDynamics> = (0..n)
        .map(|i| {
            AgentDynamics::new(
                Mat::from_element(1, 1, -1.0),
                mat(rng, 1, m[i]),
                mat(rng, l[i], 1),
                mat(rng, l[i], m[i]),
            )
        })
        .collect();
    let mut h = Interconnection::new(m.clone(), l.clone());
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.4) {
                h.insert(i, j, mat(rng, m[i], l[j]));
            }
        }
    }
    let certs = (0..n)
        .map(|i| {
            DissipativityCertificate::new(
                Mat::identity(1, 1),
                sym(rng, l[i]),
                mat(rng, l[i], m[i]),
                sym(rng, m[i]),
            )
        })
        .collect();
    (Network::new(agents, h), certs)
}

fn chordal(rng: &mut ChaCha8Rng, n: usize) -> (StructureGraph, Vec<Vec<usize>>) {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut edges = Vec::new();
    for v in 0..n {
        let mut g = vec![v];
        if let Some(base) = (!groups.is_empty()).then(|| groups[rng.gen_range(0..groups.len())].clone()) {
            for u in base.into_iter().filter(|_| rng.gen_bool(0.6)) {
                edges.push((u, v));
                g.push(u);
            }
        }
        groups.push(g);
    }
    (StructureGraph::from_edges(n, edges), groups)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nsd_projection_is_idempotent_and_optimal(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sym(&mut rng, n);
        let p = project_nsd(&s).unwrap();
        prop_assert!(max_eigenvalue(&p).unwrap() <= 1e-12);
        prop_assert!((project_nsd(&p).unwrap() - &p).amax() <= 1e-12);
        for _ in 0..4 {
            let f = mat(&mut rng, n, n);
            let y = -(&f * f.transpose());
            let vi = (&s - &p).dot(&(y - &p));
            prop_assert!(vi <= 1e-10, "variational inequality {vi}");
        }
    }

    #[test]
    fn stacking_and_slicing_are_inverse(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, certs) = network(&mut rng, n);
        let (q, s, r) = stack_certificates(&certs).unwrap();
        let l: Vec<usize> = certs.iter().map(|c| c.q.nrows()).collect();
        let m: Vec<usize> = certs.iter().map(|c| c.r.nrows()).collect();
        for (k, c) in certs.iter().enumerate() {
            prop_assert_eq!(&diag_block(&q, &l, &l, k), &c.q);
            prop_assert_eq!(&diag_block(&s, &l, &m, k), &c.s);
            prop_assert_eq!(&diag_block(&r, &m, &m, k), &c.r);
        }
    }

    #[test]
    fn blockwise_qbar_matches_dense(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, certs) = network(&mut rng, n);
        let dense = assemble_qbar(&certs, &net.h).unwrap();
        for i in 0..n {
            for j in 0..n {
                let b = qbar_block(i, j, &certs, &net.h).unwrap();
                prop_assert!((&b - dense.block(i, j)).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn consensus_is_a_fixed_point(seed in any::<u64>(), copies in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = mat(&mut rng, 2, 3);
        let refs: Vec<&Mat> = std::iter::repeat(&x).take(copies).collect();
        let z = j_update(&refs).unwrap();
        prop_assert!((&z - &x).amax() <= 1e-15 * (1.0 + x.amax()));
        let u = mat(&mut rng, 2, 3);
        prop_assert_eq!(dual_update(&u, &x, &x).unwrap(), u);
    }

    #[test]
    fn average_lies_between_copies(seed in any::<u64>(), copies in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ms: Vec<Mat> = (0..copies).map(|_| mat(&mut rng, 2, 2)).collect();
        let z = j_update(&ms.iter().collect::<Vec<_>>()).unwrap();
        for k in 0..4 {
            let lo = ms.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min);
            let hi = ms.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(z[k] >= lo - 1e-12 && z[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn clique_decomposition_round_trips(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, groups) = chordal(&mut rng, n);
        let g = g.certify_chordal().expect("chordal by construction");
        let cliques = maximal_cliques(&g).unwrap();
        let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=2)).collect();
        let off = dissipnet::model::offsets(&dims);
        let mut z = Mat::zeros(off[n], off[n]);
        for grp in &groups {
            let idx: Vec<usize> = grp.iter().flat_map(|&v| off[v]..off[v] + dims[v]).collect();
            let f = mat(&mut rng, idx.len(), 1);
            for (a, &r) in idx.iter().enumerate() {
                for (b, &c) in idx.iter().enumerate() {
                    z[(r, c)] -= f[a] * f[b];
                }
            }
        }
        let zs = decompose_nsd(&z, &g, &cliques, &dims).unwrap();
        for zp in &zs {
            prop_assert!(max_eigenvalue(zp).unwrap() <= 1e-10 * (1.0 + z.amax()));
        }
        prop_assert!((reconstruct(&cliques, &dims, &zs).unwrap() - &z).norm() <= 1e-9);
    }

    #[test]
    fn chordal_completion_is_idempotent(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|_| rng.gen_bool(0.35))
            .collect();
        let first = chordal_completion(&StructureGraph::from_edges(n, edges));
        prop_assert!(first.graph.is_chordal());
        let second = chordal_completion(&first.graph);
        prop_assert!(second.fill_in.is_empty());
        prop_assert_eq!(second.graph.edges(), first.graph.edges());
    }

    #[test]
    fn file_round_trip_keeps_validation(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, _) = network(&mut rng, n);
        let back = NetworkFile::from_network(&net, &SolverConfig::default()).to_network().unwrap();
        prop_assert_eq!(validate_network(&back, 1e-10), validate_network(&net, 1e-10));
        prop_assert_eq!(back.h.dense(), net.h.dense());
        let again = NetworkFile::from_network(&back, &SolverConfig::default()).to_network().unwrap();
        prop_assert_eq!(again.h.dense(), back.h.dense());
    }

    #[test]
    fn input_scaling_preserves_qbar(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, certs) = network(&mut rng, n);
        let scaling = InputScaling::balancing(&net);
        let scaled = scaling.apply(&net);
        let restored = scaling.restore(&net, &certs);
        let a = assemble_qbar(&certs, &scaled.h).unwrap();
        let b = assemble_qbar(&restored, &net.h).unwrap();
        for i in 0..n {
            for j in 0..n {
                let d = (a.block(i, j) - b.block(i, j)).amax();
                prop_assert!(d <= 1e-12 * (1.0 + a.block(i, j).amax()), "block ({i}, {j}) off by {d}");
            }
        }
    }
}
