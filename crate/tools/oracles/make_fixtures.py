#!/usr/bin/env python3
"""Generate the network fixtures used by the acceptance suite and confirm
their feasibility verdicts with a centralized SDP (cvxpy), independently of
the Rust solver.

Also computes the grid brute-force projection oracle for the scalar lag
agent (A=-1, B=1, C=1, D=0) used to freeze expected projection values.

Run from the repository root:

    python3 tools/oracles/make_fixtures.py

Outputs land in crates/core/tests/fixtures/.
"""

import json
import os
import sys

import cvxpy as cp
import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "..", "crates", "core", "tests", "fixtures")
DELTA_PD = 1e-6


def mat(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return [[float(v) for v in row] for row in a]


def agent_json(index, A, B, C, D, fixed=None):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    C = np.atleast_2d(C)
    D = np.atleast_2d(D)
    return {
        "index": index,
        "n": A.shape[0],
        "m": B.shape[1],
        "l": C.shape[0],
        "A": mat(A),
        "B": mat(B),
        "C": mat(C),
        "D": mat(D),
        "fixed_qsr": None
        if fixed is None
        else {"Q": mat(fixed[0]), "S": mat(fixed[1]), "R": mat(fixed[2])},
    }


def network_json(agents, blocks):
    return {
        "agents": agents,
        "H": [{"i": i, "j": j, "block": mat(b)} for (i, j, b) in blocks],
        "solver": {},
    }


# ---------------------------------------------------------------- SDP oracle


def sdp_margin(net):
    """max t s.t. KYP_i <= 0, P_i >= t I, Qbar <= -t I, |entries| <= 1.

    The feasibility problem is a cone, so it is feasible iff t* > 0 (box
    normalization only bounds the scale). Fixed-QSR agents keep their
    declared blocks as constants.
    """
    agents = net["agents"]
    N = len(agents)
    t = cp.Variable()
    cons = []
    Qs, Ss, Rs = [], [], []
    allvars = []
    for ag in agents:
        A = np.array(ag["A"])
        B = np.array(ag["B"])
        C = np.array(ag["C"])
        D = np.array(ag["D"])
        n, m, l = A.shape[0], B.shape[1], C.shape[0]
        P = cp.Variable((n, n), symmetric=True)
        allvars.append(P)
        if ag["fixed_qsr"] is None:
            Q = cp.Variable((l, l), symmetric=True)
            S = cp.Variable((l, m))
            R = cp.Variable((m, m), symmetric=True)
            allvars += [Q, S, R]
        else:
            Q = np.array(ag["fixed_qsr"]["Q"])
            S = np.array(ag["fixed_qsr"]["S"])
            R = np.array(ag["fixed_qsr"]["R"])
        Qs.append(Q)
        Ss.append(S)
        Rs.append(R)
        top_left = A.T @ P + P @ A - C.T @ Q @ C
        top_right = P @ B - C.T @ S - C.T @ Q @ D
        bot = -R - S.T @ D - D.T @ S - D.T @ Q @ D
        K = cp.bmat([[top_left, top_right], [top_right.T, bot]])
        K = (K + K.T) / 2
        cons.append(K << 0)
        cons.append(P >> t * np.eye(n))
    ls = [np.array(a["C"]).shape[0] for a in agents]
    ms = [np.array(a["B"]).shape[1] for a in agents]
    Hb = {(b["i"] - 1, b["j"] - 1): np.array(b["block"]) for b in net["H"]}
    rows = []
    for i in range(N):
        row = []
        for j in range(N):
            expr = np.zeros((ls[i], ls[j]))
            terms = []
            if i == j:
                terms.append(Qs[i])
            if (i, j) in Hb:
                terms.append(Ss[i] @ Hb[(i, j)])
            if (j, i) in Hb:
                terms.append(Hb[(j, i)].T @ Ss[j].T)
            for k in range(N):
                if (k, i) in Hb and (k, j) in Hb:
                    terms.append(Hb[(k, i)].T @ Rs[k] @ Hb[(k, j)])
            for tt in terms:
                expr = expr + tt
            row.append(expr)
        rows.append(row)
    Qbar = cp.bmat(rows)
    Qbar = (Qbar + Qbar.T) / 2
    cons.append(Qbar << -t * np.eye(sum(ls)))
    for v in allvars:
        cons += [v <= 1, v >= -1]
    prob = cp.Problem(cp.Maximize(t), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(t.value), prob.status


# ------------------------------------------------------------- instances


def lag():
    return (-np.eye(1), np.eye(1), np.eye(1), np.zeros((1, 1)))


def skew_pair():
    agents = [agent_json(1, *lag()), agent_json(2, *lag())]
    return network_json(agents, [(1, 2, [[-1.0]]), (2, 1, [[1.0]])])


def random_agent(rng, n, k):
    alpha = rng.uniform(0.5, 2.0)
    W = rng.normal(size=(n, n))
    A = -alpha * np.eye(n) + 0.8 * (W - W.T) / 2
    B = rng.normal(size=(n, k))
    C = rng.normal(size=(k, n))
    D = np.zeros((k, k))
    b = np.linalg.norm(B, 2)
    c = np.linalg.norm(C, 2)
    gamma = 1.01 * b * c / alpha
    p = c * c / alpha
    return (A, B, C, D), gamma, p


def small_gain_network(rng, dims, pattern):
    """Hurwitz agents with H scaled so ||Gamma H|| = 0.5 (small-gain margin).

    Returns the network and a hand certificate (P=pI, Q=-I, S=0, R=g^2 I).
    """
    agents, gammas, ps = [], [], []
    for idx, (n, k) in enumerate(dims):
        mats, g, p = random_agent(rng, n, k)
        agents.append(agent_json(idx + 1, *mats))
        gammas.append(g)
        ps.append(p)
    ks = [d[1] for d in dims]
    blocks = [(i, j, rng.normal(size=(ks[i - 1], ks[j - 1]))) for (i, j) in pattern]
    offs = np.cumsum([0] + ks)
    H = np.zeros((offs[-1], offs[-1]))
    for (i, j, b) in blocks:
        H[offs[i - 1]:offs[i], offs[j - 1]:offs[j]] = b
    G = np.diag(np.concatenate([np.full(k, g) for k, g in zip(ks, gammas)]))
    scale = 0.5 / np.linalg.norm(G @ H, 2)
    blocks = [(i, j, b * scale) for (i, j, b) in blocks]
    cert = []
    for (n, k), g, p in zip(dims, gammas, ps):
        cert.append({
            "P": mat(p * np.eye(n)),
            "Q": mat(-np.eye(k)),
            "S": mat(np.zeros((k, k))),
            "R": mat(g * g * np.eye(k)),
        })
    return network_json(agents, blocks), cert


def feasible_suite():
    rng = np.random.default_rng(20240611)
    specs = [
        ("chain3", [(1, 1), (2, 1), (2, 1)], [(2, 1), (3, 2)]),
        ("bidir_ring4", [(1, 1)] * 4, [(1, 2), (2, 1), (2, 3), (3, 2), (3, 4), (4, 3), (4, 1), (1, 4)]),
        ("directed_ring4", [(2, 1), (1, 1), (2, 2), (1, 1)], [(2, 1), (3, 2), (4, 3), (1, 4)]),
        ("fan_in4", [(1, 1), (2, 1), (1, 1), (3, 2)], [(1, 2), (1, 3), (1, 4)]),
        ("fan_out5", [(2, 2), (1, 1), (1, 1), (2, 1), (1, 1)], [(2, 1), (3, 1), (4, 1), (5, 1)]),
        ("two_triangles4", [(1, 1), (2, 1), (2, 1), (1, 1)], [(1, 2), (1, 3), (4, 2), (4, 3)]),
        ("random6", [(2, 1), (1, 1), (3, 2), (1, 1), (2, 1), (1, 2)],
         [(1, 2), (2, 3), (3, 1), (4, 3), (5, 4), (6, 5), (6, 2), (4, 6)]),
        ("random8", [(1, 1), (2, 1), (1, 1), (2, 2), (1, 1), (3, 1), (1, 1), (2, 1)],
         [(2, 1), (3, 2), (4, 2), (5, 4), (6, 5), (7, 6), (8, 7), (1, 8), (5, 3), (7, 4)]),
        ("chain5_mimo", [(3, 2), (2, 2), (3, 2), (2, 2), (3, 2)], [(2, 1), (3, 2), (4, 3), (5, 4), (1, 5)]),
    ]
    out = []
    for name, dims, pattern in specs:
        net, cert = small_gain_network(rng, dims, pattern)
        out.append((name, net, cert))
    # Output-strictly-passive agent with declared dissipativity, coupled to a
    # free lag agent in negative feedback.
    agents = [
        agent_json(1, *lag(), fixed=([[-0.5]], [[0.5]], [[0.0]])),
        agent_json(2, *lag()),
    ]
    net = network_json(agents, [(1, 2, [[-1.0]]), (2, 1, [[1.0]])])
    cert = [
        {"P": [[0.5]], "Q": [[-0.5]], "S": [[0.5]], "R": [[0.0]]},
        {"P": [[0.5]], "Q": [[-0.5]], "S": [[0.5]], "R": [[0.0]]},
    ]
    out.append(("fixed_passive_pair", net, cert))
    return out


def infeasible_suite():
    out = []
    for name, k in [("positive_pair_k2", 2.0), ("positive_pair_k1_5", 1.5)]:
        agents = [agent_json(1, *lag()), agent_json(2, *lag())]
        out.append((name, network_json(agents, [(1, 2, [[k]]), (2, 1, [[k]])])))
    agents = [agent_json(1, np.eye(1), np.eye(1), np.eye(1), np.zeros((1, 1)))]
    out.append(("unstable_single", network_json(agents, [])))
    agents = [agent_json(i, *lag()) for i in (1, 2, 3)]
    out.append(("positive_ring3", network_json(agents, [(2, 1, [[1.5]]), (3, 2, [[1.5]]), (1, 3, [[1.5]])])))
    A = np.diag([-1.0, -2.0])
    agents = [agent_json(i, A, np.eye(2), np.eye(2), np.zeros((2, 2))) for i in (1, 2)]
    out.append(("positive_mimo_pair", network_json(agents, [(1, 2, 3 * np.eye(2)), (2, 1, 3 * np.eye(2))])))
    return out


def closed_loop_max_real(net):
    agents = net["agents"]
    ns = [np.array(a["A"]).shape[0] for a in agents]
    ms = [np.array(a["B"]).shape[1] for a in agents]
    ls = [np.array(a["C"]).shape[0] for a in agents]
    from scipy.linalg import block_diag

    A = block_diag(*[np.array(a["A"]) for a in agents])
    B = block_diag(*[np.array(a["B"]) for a in agents])
    C = block_diag(*[np.array(a["C"]) for a in agents])
    H = np.zeros((sum(ms), sum(ls)))
    mo = np.cumsum([0] + ms)
    lo = np.cumsum([0] + ls)
    for b in net["H"]:
        i, j = b["i"] - 1, b["j"] - 1
        H[mo[i]:mo[i + 1], lo[j]:lo[j + 1]] = np.array(b["block"])
    return float(np.max(np.linalg.eigvals(A + B @ H @ C).real))


# ------------------------------------------------------------ grid oracle


def grid_project_lag(seed, lo=-2.0, hi=2.0, step=0.01):
    """Brute-force nearest grid point of {KYP <= 0, P >= delta} for the
    scalar lag agent. R is minimized in closed form on the grid for each
    (P, Q, S) triple: the feasible R's form a half-line R >= S^2/(-a).
    """
    p0, q0, s0, r0 = seed
    n = int(round((hi - lo) / step)) + 1
    g = lo + step * np.arange(n)
    Q, S = np.meshgrid(g, g, indexing="ij")
    best = (np.inf, None)
    for P in g:
        if P < DELTA_PD:
            continue
        a = -2 * P - Q  # KYP (1,1)
        b = P - S  # KYP (1,2)
        with np.errstate(divide="ignore", invalid="ignore"):
            rmin = np.where(a < -1e-12, b * b / np.maximum(-a, 1e-300), np.where(np.abs(b) < 1e-12, 0.0, np.inf))
        rmin = np.where(a > 1e-12, np.inf, rmin)
        rmin = np.maximum(rmin, 0.0)
        # nearest grid R >= rmin to r0
        rr = np.clip(np.round((r0 - lo) / step), 0, n - 1)
        rcand = lo + step * rr
        ceil_idx = np.ceil((rmin - lo) / step - 1e-9)
        rceil = lo + step * ceil_idx
        R = np.where(rcand >= rmin - 1e-12, rcand, rceil)
        ok = np.isfinite(rmin) & (R <= hi + 1e-12)
        d = (P - p0) ** 2 + (Q - q0) ** 2 + (S - s0) ** 2 + (R - r0) ** 2
        d = np.where(ok, d, np.inf)
        idx = np.unravel_index(np.argmin(d), d.shape)
        if d[idx] < best[0]:
            best = (d[idx], (float(P), float(Q[idx]), float(S[idx]), float(R[idx])))
    return best[1]


GRID_SEEDS = [
    (0.5, 1.0, 0.5, 0.0),
    (0.0, 0.0, 0.0, 0.0),
    (1.0, 1.0, -1.0, 0.5),
    (0.3, -0.2, 0.8, -0.5),
    (-1.0, 0.5, 0.0, 0.0),
    (1.5, -1.0, 1.0, 0.2),
    (0.2, 0.2, -0.3, -0.1),
    (0.8, -1.5, 0.8, 1.0),
    (-0.5, -0.5, -0.5, -0.5),
    (1.0, 0.0, 0.0, 0.0),
]


def main():
    os.makedirs(OUT, exist_ok=True)
    manifest = {"feasible": [], "infeasible": []}

    net = skew_pair()
    t, st = sdp_margin(net)
    print("skew_pair", t, st)
    with open(os.path.join(OUT, "skew_pair.json"), "w") as f:
        json.dump(net, f, indent=1)

    for name, net, cert in feasible_suite():
        t, st = sdp_margin(net)
        cl = closed_loop_max_real(net)
        print(f"feasible {name}: sdp t*={t:.4g} ({st}), closed-loop max Re={cl:.4g}")
        assert t > 1e-4, name
        with open(os.path.join(OUT, f"feasible_{name}.json"), "w") as f:
            json.dump(net, f, indent=1)
        with open(os.path.join(OUT, f"feasible_{name}.cert.json"), "w") as f:
            json.dump({"agents": [dict(index=i + 1, **c) for i, c in enumerate(cert)]}, f, indent=1)
        manifest["feasible"].append({"name": name, "sdp_margin": t})

    for name, net in infeasible_suite():
        t, st = sdp_margin(net)
        cl = closed_loop_max_real(net)
        print(f"infeasible {name}: sdp t*={t:.4g} ({st}), closed-loop max Re={cl:.4g}")
        assert t < 1e-7 and cl > 0, name
        with open(os.path.join(OUT, f"infeasible_{name}.json"), "w") as f:
            json.dump(net, f, indent=1)
        manifest["infeasible"].append({"name": name, "sdp_margin": t, "closed_loop_max_re": cl})

    grid = []
    for seed in GRID_SEEDS:
        proj = grid_project_lag(seed)
        print("grid", seed, "->", proj)
        grid.append({"seed": list(seed), "projection": list(proj)})
    manifest["lag_grid_projection"] = grid

    with open(os.path.join(OUT, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


if __name__ == "__main__":
    sys.exit(main())
