"""Batch command-line interface.

    conechain <command> --config cfg.json [--seed N] [--out DIR] [--format csv|json]

Exit status: 0 success, 2 invalid input, 3 certification failure,
64 unknown command, 66 unreadable or empty config.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import chain as ch
from . import cones, jellium as jl, sampling
from .errors import CertificationError, ConeChainError

COMMANDS = ("diameter", "contraction", "rank-one", "free-energy", "derivatives",
            "correlations", "truncated", "clt", "calibrate")

USAGE = ("usage: conechain {" + ",".join(COMMANDS) + "} --config PATH "
         "[--seed N] [--out DIR] [--format csv|json]")

EXIT_OK, EXIT_INVALID, EXIT_CERT, EXIT_USAGE, EXIT_NOINPUT = 0, 2, 3, 64, 66


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config helpers

def _num(cfg, key, default=None, positive=False, integer=False):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing field '{key}'")
        return default
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"field '{key}' must be a number")
    if not math.isfinite(val):
        raise ConfigError(f"field '{key}' must be finite")
    if integer and int(val) != val:
        raise ConfigError(f"field '{key}' must be an integer")
    if positive and val <= 0:
        raise ConfigError(f"field '{key}' must be positive")
    return int(val) if integer else float(val)


def _matrix(obj, name="matrix"):
    try:
        M = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{name}' is not a numeric matrix") from exc
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.size == 0:
        raise ConfigError(f"'{name}' must be a non-empty square matrix")
    if not np.all(np.isfinite(M)) or np.any(M < 0):
        raise ConfigError(f"'{name}' must have finite nonnegative entries")
    return M


def _base_matrix(cfg):
    if "matrix" in cfg:
        return _matrix(cfg["matrix"])
    if "two_state" in cfg:
        ts = cfg["two_state"]
        return ch.two_state_matrix(_num(ts, "beta", positive=True), _num(ts, "eps", positive=True))
    raise ConfigError("matrix-chain model needs 'matrix' or 'two_state'")


def _matrix_chain(cfg, beta=None):
    """Homogeneous chain from a matrix or a two_state entry; beta overrides two_state.beta."""
    n = _num(cfg, "N", positive=True, integer=True)
    if "matrices" in cfg:
        mats = [_matrix(m, "matrices") for m in cfg["matrices"]]
        if len(mats) != n:
            raise ConfigError("'matrices' length must equal N")
        d = mats[0].shape[0]
        u = np.ones(d) / math.sqrt(d)
        return ch.ChainModel(u, u.copy(), tuple(mats))
    if beta is not None and "two_state" in cfg:
        T = ch.two_state_matrix(beta, _num(cfg["two_state"], "eps", positive=True))
    else:
        T = _base_matrix(cfg)
    return ch.homogeneous_chain(T, n)


def jellium_system(cfg, beta=None, N=None):
    """JelliumSystem from a config dict; the background is rescaled to neutrality."""
    N = _num(cfg, "N", positive=True, integer=True) if N is None else N
    L = _num(cfg, "L", positive=True)
    beta = _num(cfg, "beta", positive=True) if beta is None else beta
    q = cfg.get("charges", 1.0)
    charges = np.full(N, float(q)) if isinstance(q, (int, float)) else np.asarray(q, dtype=float)
    if len(charges) != N or np.any(charges <= 0):
        raise ConfigError("charges must be positive, one per particle")
    bgc = cfg.get("background", {"kind": "constant"})
    kind = bgc.get("kind", "constant")
    if kind == "constant":
        bg = jl.ConstantBackground(L, 1.0)
    elif kind == "sinusoidal":
        amp = _num(bgc, "amplitude", 0.0)
        if not 0 <= amp < 1:
            raise ConfigError("sinusoidal amplitude must lie in [0, 1)")
        bg = jl.SinusoidalBackground(L, 1.0, amp, _num(bgc, "frequency", 1.0, positive=True), _num(bgc, "phase", 0.0))
    elif kind == "tabulated":
        if "path" not in bgc:
            raise ConfigError("tabulated background needs 'path'")
        bg = jl.read_tabulated_background(bgc["path"], L)
    else:
        raise ConfigError(f"unknown background kind '{kind}'")
    return jl.neutral_system(L, beta, charges, bg)


def _grid_opts(cfg):
    g = cfg.get("grid", {})
    return (_num(g, "points_per_interval", 4, positive=True, integer=True),
            _num(g, "tail_tolerance", 1e-14, positive=True))


def _jellium_setup(cfg, beta=None, N=None, window_beta=None):
    system = jellium_system(cfg, beta, N)
    rep = jl.assumption_check(system)
    if not (rep.h1 and rep.h2):
        raise ConfigError(f"assumptions fail: {rep.witness}")
    layout = jl.equilibrium_positions(system)
    ppi, tol = _grid_opts(cfg)
    grid = jl.make_grid(system, layout, ppi, tol, beta=window_beta)
    return system, layout, grid


def _jellium_certificate(cfg, seed, system, layout, grid, kernels):
    """Cone parameters (from config if given, else calibrated) and the certified contraction."""
    rays = _num(cfg, "rays", 300, positive=True, integer=True)
    if "cone" in cfg:
        params = jl.JelliumConeParams.from_dict(cfg["cone"])
    else:
        params = jl.calibrate_cone_parameters(system, layout, grid, kernels, seed=seed)
    cert = jl.certify_contraction(system, layout, grid, params, kernels, rays=rays, seed=seed)
    if not cert.certified:
        raise CertificationError(f"image diameter is infinite; witness {cert.witness}")
    return params, cert


def _chain_for(cfg, seed):
    """(chain, certified kappa) for either model."""
    model = cfg.get("model", "matrix-chain")
    if model == "matrix-chain":
        c = _matrix_chain(cfg)
        if c.kappa is None:
            R = max(cones.projective_diameter(T).value for T in c.operators)
            c = ch.ChainModel(c.u, c.v, c.operators, R=R, kappa=cones.contraction_bound(R))
        return c, c.kappa, {}
    if model == "jellium":
        system, layout, grid = _jellium_setup(cfg)
        kernels = [jl.build_transfer_kernel(system, layout, grid, p) for p in range(system.N, 1, -1)]
        params, cert = _jellium_certificate(cfg, seed, system, layout, grid, kernels)
        c = jl.build_jellium_chain(system, layout, grid, R=cert.delta, kappa=cert.kappa, kernels=kernels)
        return c, cert.kappa, {"delta": cert.delta}
    raise ConfigError(f"unknown model '{model}'")


# ---------------------------------------------------------------------------
# commands: each returns (columns, rows, summary, extra json)

def cmd_diameter(cfg, seed):
    if cfg.get("model") == "jellium":
        _, kappa, info = _chain_for(cfg, seed)
        return ["diameter", "kappa"], [[info["delta"], kappa]], f"diameter={info['delta']:.12g} kappa={kappa:.12g}", {}
    T = _base_matrix(cfg)
    est = cones.projective_diameter(T, budget=_num(cfg, "budget", 200, positive=True, integer=True), seed=seed)
    if not math.isfinite(est.value):
        raise CertificationError(f"infinite diameter; witness {est.witness}")
    k = cones.contraction_bound(est.value)
    return ["diameter", "exact", "kappa"], [[est.value, int(est.exact), k]], f"diameter={est.value:.12g} kappa={k:.12g}", {}


def cmd_contraction(cfg, seed):
    T = _base_matrix(cfg)
    est = cones.projective_diameter(T)
    bound = cones.contraction_bound(est.value)
    meas = cones.measured_contraction(T, pairs=_num(cfg, "pairs", 1000, positive=True, integer=True), seed=seed)
    opt = cones.optimized_contraction(T)
    if meas.value > bound + 1e-9:
        raise CertificationError(f"measured contraction {meas.value} exceeds bound {bound}")
    return (["bound", "measured", "optimized"], [[bound, meas.value, opt]],
            f"bound={bound:.12g} measured={meas.value:.12g} optimized={opt:.12g}", {})


def cmd_rank_one(cfg, seed):
    if "matrices" in cfg or "N" in cfg:
        c = _matrix_chain(cfg)
        res = cones.rank_one_chain(list(c.operators))
        d, cert = res.operator.distance, res.operator.certificate
    else:
        T = _base_matrix(cfg)
        r = cones.rank_one_approx(T)
        d, cert = r.distance, r.certificate
    if d > cert * (1 + 1e-12) + 1e-12:
        raise CertificationError(f"rank-one distance {d} exceeds certificate {cert}")
    return ["distance", "certificate"], [[d, cert]], f"distance={d:.12g} certificate={cert:.12g}", {}


def cmd_free_energy(cfg, seed):
    if cfg.get("model") == "jellium":
        system, layout, grid = _jellium_setup(cfg)
        c = jl.build_jellium_chain(system, layout, grid, include_energy=True)
        lz = ch.log_partition_function(c)
        f = -lz / (system.N * system.beta)
        return ["log_z", "free_energy"], [[lz, f]], f"log_z={lz:.12g} free_energy={f:.12g}", {}
    c = _matrix_chain(cfg)
    lz = ch.log_partition_function(c)
    f = lz / c.n_operators
    cols, row = ["log_z", "f_n"], [lz, f]
    if "two_state" in cfg:
        lam = ch.two_state_eigenvalue(cfg["two_state"]["beta"], cfg["two_state"]["eps"])
        cols += ["log_lambda", "error"]
        row += [math.log(lam), f - math.log(lam)]
    return cols, [row], f"f_n={f:.12g}", {}


def cmd_derivatives(cfg, seed):
    k_max = _num(cfg, "k_max", 3, positive=True, integer=True)
    beta0 = _num(cfg, "beta0", 1.0, positive=True)
    if cfg.get("model") == "jellium":
        sizes = [int(s) for s in cfg.get("sizes", [cfg.get("N", 20)])]
        h = 1e-3 * max(1.0, beta0)
        reports = []
        for N in sizes:
            # keep the density fixed: L scales with N
            base = dict(cfg, N=N, L=_num(cfg, "L", positive=True) * N / _num(cfg, "N", positive=True, integer=True))
            system, layout, grid = _jellium_setup(base, beta=beta0, window_beta=beta0 - 2 * h)
            builder = jl.chain_builder(system, layout, grid)
            reports.append(ch.derivative_estimates(builder, beta0, k_max, [N], h=h, convention="jellium"))
        est = np.vstack([r.estimates for r in reports])
    else:
        if "two_state" not in cfg:
            raise ConfigError("derivatives on a matrix chain need 'two_state'")
        sizes = [int(s) for s in cfg.get("sizes", [cfg["N"]])]
        rep = ch.derivative_estimates(lambda b, n: _matrix_chain(dict(cfg, N=n), beta=b), beta0, k_max, sizes)
        est = rep.estimates
    rows = [[n] + list(e) for n, e in zip(sizes, est)]
    cols = ["N"] + [f"d{k}" for k in range(1, k_max + 1)]
    return cols, rows, "derivatives " + " ".join(f"{v:.12g}" for v in est[-1]), {}


def cmd_correlations(cfg, seed):
    c, kappa, _ = _chain_for(cfg, seed)
    anchor = _num(cfg, "anchor", max(1, c.n_sites // 4), integer=True)
    gaps = [int(g) for g in cfg.get("gaps", range(1, min(9, c.n_sites - anchor)))]
    if not gaps or anchor < 0 or anchor + max(gaps) >= c.n_sites:
        raise ConfigError("anchor and gaps must stay inside the chain")
    prof = ch.correlation_profile(c, anchor, gaps)
    rows = [[g, s, r] for g, s, r in zip(prof.gaps, prof.sup_difference, prof.ratio_deviation)]
    # ratio deviations saturate at 1 where ordering forbids a pair of cells, so fit the sup difference
    pos = prof.sup_difference > 0
    rate = ch.geometric_fit(prof.gaps[pos], prof.sup_difference[pos])[0] if pos.sum() >= 2 else float("nan")
    return (["gap", "sup_difference", "ratio_deviation"], rows,
            f"fitted_rate={rate:.12g} kappa={kappa:.12g}", {"kappa": kappa, "fitted_rate": rate})


def cmd_truncated(cfg, seed):
    c, kappa, _ = _chain_for(cfg, seed)
    anchor = _num(cfg, "anchor", max(1, c.n_sites // 4), integer=True)
    gaps = [int(g) for g in cfg.get("gaps", range(1, min(9, c.n_sites - anchor)))]
    if not gaps or anchor < 0 or anchor + max(gaps) >= c.n_sites:
        raise ConfigError("anchor and gaps must stay inside the chain")
    rows = []
    one = ch.marginal_density(c, [anchor])
    for g in gaps:
        b = anchor + g
        tabs = {(anchor,): one, (b,): ch.marginal_density(c, [b]), (anchor, b): ch.marginal_density(c, [anchor, b])}
        tr = ch.truncated_marginals(tabs)[(anchor, b)]
        rows.append([g, float(np.max(np.abs(tr.values)))])
    return ["gap", "sup_truncated"], rows, f"sup_truncated_at_max_gap={rows[-1][1]:.12g}", {"kappa": kappa}


def cmd_clt(cfg, seed):
    model = cfg.get("model", "jellium")
    if model == "jellium":
        system, layout, grid = _jellium_setup(cfg)
        c = jl.build_jellium_chain(system, layout, grid)
    else:
        c = _matrix_chain(cfg)
    n = _num(cfg, "n_samples", 10_000, positive=True, integer=True)
    obs = sampling.ObservableSpec.position(c)
    batch = sampling.sample_positions(c, seed=seed, n_samples=n)
    r = sampling.clt_report(c, batch, obs)
    row = [seed, r.N, r.n_samples, r.gamma, r.sigma2, r.ks]
    return ["seed", "N", "n_samples", "gamma", "sigma2", "ks"], [row], f"ks={r.ks:.12g} sigma2={r.sigma2:.12g}", {}


def cmd_calibrate(cfg, seed):
    if cfg.get("model", "jellium") != "jellium":
        raise ConfigError("calibrate applies to the jellium model")
    system, layout, grid = _jellium_setup(cfg)
    kernels = [jl.build_transfer_kernel(system, layout, grid, p) for p in range(system.N, 1, -1)]
    cfg = {k: v for k, v in cfg.items() if k != "cone"}
    params, cert = _jellium_certificate(cfg, seed, system, layout, grid, kernels)
    extra = {"cone": params.to_dict(), "kappa": cert.kappa, "delta": cert.delta, "rays": cert.rays}
    return ["delta", "kappa"], [[cert.delta, cert.kappa]], f"kappa={cert.kappa:.12g}", extra


HANDLERS = {"diameter": cmd_diameter, "contraction": cmd_contraction, "rank-one": cmd_rank_one,
            "free-energy": cmd_free_energy, "derivatives": cmd_derivatives, "correlations": cmd_correlations,
            "truncated": cmd_truncated, "clt": cmd_clt, "calibrate": cmd_calibrate}


# ---------------------------------------------------------------------------
# output

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.15e}"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_output(out_dir: Path, command, fmt, meta, cols, rows, extra):
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{command}.json"
        doc = {"meta": meta, "columns": cols, "rows": rows, **extra}
        path.write_text(json.dumps(_jsonable(doc), indent=2) + "\n")
        return path
    path = out_dir / f"{command}.csv"
    lines = ["# " + " ".join(f"{k}={v}" for k, v in meta.items()), ",".join(cols)]
    lines += [",".join(_fmt(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    if extra:
        (out_dir / f"{command}.json").write_text(json.dumps(_jsonable({"meta": meta, **extra}), indent=2) + "\n")
    return path


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return EXIT_OK if argv else EXIT_USAGE
    command = argv[0]
    if command not in COMMANDS:
        print(f"unknown command '{command}'", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return EXIT_USAGE
    parser = argparse.ArgumentParser(prog=f"conechain {command}")
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=".")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    try:
        args = parser.parse_args(argv[1:])
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.seed < 0 or args.seed >= 2**64:
        print("seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        raw = Path(args.config).read_bytes()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    if not raw.strip():
        print(f"config {args.config} is empty", file=sys.stderr)
        return EXIT_NOINPUT
    try:
        cfg = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    if not isinstance(cfg, dict):
        print("config must be a JSON object", file=sys.stderr)
        return EXIT_INVALID
    meta = {"command": command, "config_sha256": hashlib.sha256(raw).hexdigest(), "seed": args.seed}
    try:
        cols, rows, summary, extra = HANDLERS[command](cfg, args.seed)
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (ConeChainError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    write_output(Path(args.out), command, args.format, meta, cols, rows, extra)
    print(f"{command}: {summary}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
