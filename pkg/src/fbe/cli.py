"""Experiment driver: reproducible command-line runs with machine-readable
output.

Subcommands
    coeffs    second-order bound coefficients for a configured model
    bound     first- and second-order bounds for configured heats
    protocol  full achievability runs, one row per (lambda, Q)
    sweep     scaling fits over a lambda ladder (JSON report)
    verify    library invariant suites; nonzero exit on any failure

The same config always produces the same bytes: floats are written with 17
significant digits, rows keep config order, and every row carries the config
hash and library version.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, bounds, models, observables, protocol, thermal
from .errors import (
    ConfigError,
    FBEError,
    InsufficientPoints,
    NoClosedForm,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4

# config field holding the bath size, per model kind; sweeps rebuild the
# model at each ladder point by overwriting this field with lambda
SIZE_FIELD = {
    "iid_two_level": "sites",
    "ising_chain": "spins",
    "spin_half_bath": "sites",
    "fermi_gas_well": "scale",
}

MODEL_CLASSES = {
    "iid_two_level": models.IIDTwoLevelModel,
    "ising_chain": models.IsingChainModel,
    "spin_half_bath": models.SpinHalfBathModel,
    "fermi_gas_well": models.FermiGasWellModel,
}

log = logging.getLogger("fbe")


def fmt(value) -> str:
    """Fixed 17-significant-digit float formatting; CSV cell values."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def fmt_vector(vec) -> str:
    return " ".join(fmt(float(v)) for v in np.asarray(vec, dtype=np.float64))


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# config loading


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON: line {exc.lineno} column "
            f"{exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(
            f"config field 'schema' must equal {SCHEMA_VERSION}, "
            f"got {cfg.get('schema')!r}"
        )
    return cfg


def build_model(cfg: dict, lam=None):
    spec = cfg.get("model")
    if not isinstance(spec, dict):
        raise ConfigError("config field 'model' must be an object")
    kind = spec.get("kind")
    if kind not in MODEL_CLASSES:
        raise ConfigError(
            f"model field 'kind' must be one of {sorted(MODEL_CLASSES)}, "
            f"got {kind!r}"
        )
    cls = MODEL_CLASSES[kind]
    allowed = {f.name for f in dataclasses.fields(cls)} - {"kind"}
    params = {k: v for k, v in spec.items() if k != "kind"}
    for name in params:
        if name not in allowed:
            raise ConfigError(f"model field {name!r} unknown for kind {kind!r}")
    if lam is not None:
        size_field = SIZE_FIELD[kind]
        params[size_field] = lam if kind == "fermi_gas_well" else int(lam)
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"model parameters invalid: {exc}") from exc


def parse_theta0(cfg: dict, model) -> np.ndarray:
    raw = cfg.get("theta0")
    if not isinstance(raw, list) or not all(
        isinstance(v, (int, float)) for v in raw
    ):
        raise ConfigError("config field 'theta0' must be a list of numbers")
    theta0 = np.array(raw, dtype=np.float64)
    if theta0.size != len(model.labels):
        raise ConfigError(
            f"theta0 has {theta0.size} entries; model {model.kind!r} has "
            f"{len(model.labels)} slots"
        )
    return theta0


HEAT_FIELDS = ("dQ_A2", "dQ_B1", "dQ_B2")


def parse_heats(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"config field {where!r} must be an object")
    for name in obj:
        if name not in HEAT_FIELDS:
            raise ConfigError(
                f"{where} field {name!r} unknown; expected one of {HEAT_FIELDS}"
            )
        if not isinstance(obj[name], (int, float)):
            raise ConfigError(f"{where} field {name!r} must be a number")
    return {k: float(v) for k, v in obj.items()}


def parse_lambdas(cfg: dict) -> list:
    raw = cfg.get("lambdas")
    if not isinstance(raw, list) or not raw or not all(
        isinstance(v, (int, float)) for v in raw
    ):
        raise ConfigError("config field 'lambdas' must be a nonempty number list")
    lams = [float(v) for v in raw]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ConfigError("config field 'lambdas' must be strictly increasing")
    return lams


def heat_vector_at(cfg: dict, lam: float, theta0, labels, obs=None) -> bounds.HeatVector:
    """Fixed heats, or the scaling rule Q(lambda) = qhat * lambda^p."""
    beta0, gamma0 = bounds.default_norm_scales(theta0, labels, obs)
    rule = cfg.get("heat_rule")
    if rule is not None:
        if not isinstance(rule, dict):
            raise ConfigError("config field 'heat_rule' must be an object")
        direction = parse_heats(rule.get("direction"), "heat_rule.direction")
        p = rule.get("exponent")
        if not isinstance(p, (int, float)) or not 0.0 < float(p) < 1.0:
            raise ConfigError("heat_rule field 'exponent' must lie in (0, 1)")
        scaled = {k: v * lam ** float(p) for k, v in direction.items()}
        return bounds.HeatVector(beta0=beta0, gamma0=gamma0, **scaled)
    heats = cfg.get("heats")
    if heats is None:
        raise ConfigError("config needs either 'heats' or 'heat_rule'")
    return bounds.HeatVector(beta0=beta0, gamma0=gamma0, **parse_heats(heats, "heats"))


def heat_exponent(cfg: dict) -> float:
    rule = cfg.get("heat_rule")
    if rule is None:
        raise ConfigError("sweep runs need a 'heat_rule' scaling rule")
    p = rule.get("exponent")
    if not isinstance(p, (int, float)) or not 0.0 < float(p) < 1.0:
        raise ConfigError("heat_rule field 'exponent' must lie in (0, 1)")
    return float(p)


def densities_for(cfg: dict, model, theta0):
    mode = cfg.get("densities", "analytic")
    if mode == "analytic":
        return models.analytic_densities(model, theta0), "analytic"
    if mode == "numeric":
        obs = models.instantiate(model, theta0)
        return bounds.estimate_densities(obs, theta0), "numeric"
    raise ConfigError(
        f"config field 'densities' must be 'analytic' or 'numeric', got {mode!r}"
    )


def solver_tol(cfg: dict) -> float:
    tols = cfg.get("tolerances", {})
    if not isinstance(tols, dict):
        raise ConfigError("config field 'tolerances' must be an object")
    tol = tols.get("solver", protocol.SOLVER_TOL)
    if not isinstance(tol, (int, float)) or tol <= 0:
        raise ConfigError("tolerances field 'solver' must be a positive number")
    return float(tol)


# ---------------------------------------------------------------------------
# output


def write_csv(header, rows, stream) -> None:
    writer = csv.writer(stream, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(cell) for cell in row])


def write_rows(header, rows, args) -> None:
    if args.format == "csv":
        buf = io.StringIO()
        write_csv(header, rows, buf)
        payload = buf.getvalue()
    else:
        records = [
            {name: fmt(cell) for name, cell in zip(header, row)} for row in rows
        ]
        payload = json.dumps(records, indent=2) + "\n"
    _emit(payload, args.out)


def _emit(payload: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(payload)
        log.info("wrote %d bytes to %s", len(payload), out_path)
    else:
        sys.stdout.write(payload)


# ---------------------------------------------------------------------------
# coeffs


def cmd_coeffs(cfg: dict, args) -> int:
    model = build_model(cfg)
    theta0 = parse_theta0(cfg, model)
    dens, source = densities_for(cfg, model, theta0)
    co = bounds.second_order_coefficients(dens)

    c_ab = np.zeros(2)
    c_ab[: co.C_AB.size] = co.C_AB
    c_bb = np.zeros((2, 2))
    nb = co.C_BB.shape[0]
    c_bb[:nb, :nb] = co.C_BB

    try:
        ref = models.analytic_reference(model, theta0).get("C_AA")
    except NoClosedForm:
        ref = None
    rel_dev = "" if ref is None else abs(co.C_AA - ref) / abs(ref)

    header = [
        "model", "theta0", "C_AA", "C_AB1", "C_AB2",
        "C_BB11", "C_BB12", "C_BB22", "source",
        "reference_C_AA", "rel_dev", "config", "version",
    ]
    row = [
        model.kind, fmt_vector(theta0), co.C_AA, c_ab[0], c_ab[1],
        c_bb[0, 0], c_bb[0, 1], c_bb[1, 1], source,
        "" if ref is None else ref, rel_dev, config_hash(cfg), __version__,
    ]
    write_rows(header, [row], args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bound


def cmd_bound(cfg: dict, args) -> int:
    lams = parse_lambdas(cfg)
    rows = []
    chash = config_hash(cfg)
    header = [
        "model", "lambda", "dQ_A2", "dQ_B1", "dQ_B2", "q_norm",
        "gcb", "fgcb", "correction", "window_low", "window_high",
        "in_window", "config", "version",
    ]
    for lam in lams:
        model = build_model(cfg, lam)
        theta0 = parse_theta0(cfg, model)
        labels = model.labels
        dens, _ = densities_for(cfg, model, theta0)
        co = bounds.second_order_coefficients(dens)
        hv = heat_vector_at(cfg, lam, theta0, labels)
        q = hv.slot_heats(labels)
        gcb = bounds.generalized_carnot_bound(q, theta0, labels)
        fgcb = bounds.fine_grained_bound(q, theta0, labels, lam, co)
        # heat-norm window of the second-order regime: lambda^(5/8) .. lambda
        w_lo = lam ** 0.625
        w_hi = lam
        rows.append([
            model.kind, lam, hv.dQ_A2, hv.dQ_B1, hv.dQ_B2, hv.norm,
            gcb, fgcb, gcb - fgcb, w_lo, w_hi,
            w_lo <= hv.norm <= w_hi, chash, __version__,
        ])
    write_rows(header, rows, args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# protocol


PROTOCOL_HEADER = [
    "model", "lambda", "engine", "error", "message",
    "theta0", "theta_lam", "xi", "xi_residual",
    "target_dQ_A2", "target_dQ_B1", "target_dQ_B2",
    "achieved_heats", "work", "gcb_target", "fgcb_target",
    "gcb_achieved", "fgcb_achieved", "D_to_ideal", "D_to_initial",
    "second_law_lhs", "second_law_gap", "eta_gap",
    "entropy_initial", "entropy_final", "path", "segments",
    "mass_matched", "q_norm", "in_window", "sign_ok",
    "config", "version",
]


def _protocol_row(cfg, lam, engine, chash):
    model = build_model(cfg, lam)
    theta0 = parse_theta0(cfg, model)
    obs = models.instantiate(model, theta0)
    hv = heat_vector_at(cfg, lam, theta0, model.labels, obs)
    rep = protocol.achievability_report(
        obs, theta0, hv, engine=engine, solver_tol=solver_tol(cfg)
    )
    return [
        model.kind, lam, engine, "", "",
        fmt_vector(rep.theta0), fmt_vector(rep.theta_lam),
        fmt_vector(rep.xi), rep.xi_residual,
        hv.dQ_A2, hv.dQ_B1, hv.dQ_B2,
        fmt_vector(rep.achieved_heats), rep.work,
        rep.gcb_target, rep.fgcb_target,
        rep.gcb_achieved, rep.fgcb_achieved,
        rep.D_to_ideal, rep.D_to_initial,
        rep.second_law_lhs, rep.second_law_gap, rep.eta_gap,
        rep.entropy_initial, rep.entropy_final, rep.path, rep.segments,
        rep.mass_matched, rep.q_norm, rep.in_window, rep.sign_ok,
        chash, __version__,
    ]


def _protocol_error_row(cfg, lam, engine, chash, exc):
    row = ["" for _ in PROTOCOL_HEADER]
    row[0] = cfg["model"]["kind"]
    row[1] = lam
    row[2] = engine
    row[3] = type(exc).__name__
    row[4] = str(exc)
    row[-2] = chash
    row[-1] = __version__
    return row


def cmd_protocol(cfg: dict, args) -> int:
    lams = parse_lambdas(cfg)
    engine = cfg.get("engine", "auto")
    chash = config_hash(cfg)
    rows = []
    failures = 0
    for lam in lams:
        try:
            rows.append(_protocol_row(cfg, lam, engine, chash))
        except FBEError as exc:
            # record the failure and keep sweeping the remaining points
            log.info("protocol run lambda=%s failed: %s", lam, exc)
            rows.append(_protocol_error_row(cfg, lam, engine, chash, exc))
            failures += 1
    write_rows(PROTOCOL_HEADER, rows, args)
    return EXIT_NUMERICAL if failures == len(lams) else EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _sweep_point(payload):
    """Worker body; (config json, lambda) -> plain-float metric dict."""
    cfg_json, lam = payload
    cfg = json.loads(cfg_json)
    model = build_model(cfg, lam)
    theta0 = parse_theta0(cfg, model)
    obs = models.instantiate(model, theta0)
    hv = heat_vector_at(cfg, lam, theta0, model.labels, obs)
    rep = protocol.achievability_report(
        obs, theta0, hv, engine=cfg.get("engine", "auto"),
        solver_tol=solver_tol(cfg)
    )
    qn2 = rep.q_norm ** 2
    target = rep.target_heats
    achieved = rep.achieved_heats[1:]
    return {
        "lambda": float(lam),
        "q_norm": rep.q_norm,
        "work": rep.work,
        "gcb_target": rep.gcb_target,
        "fgcb_target": rep.fgcb_target,
        "D_to_ideal": rep.D_to_ideal,
        "D_to_initial": rep.D_to_initial,
        "heat_mismatch": float(np.linalg.norm(achieved - target)),
        "heat_metric": float(np.linalg.norm(achieved - target)) / (qn2 / lam),
        "deficit_metric": (rep.gcb_target - rep.work) * lam / qn2,
        "second_law_gap": rep.second_law_gap,
        "path": rep.path,
    }


def _loglog_fit(x, y):
    """Least-squares slope/intercept of log2 y against log2 x."""
    lx = np.log2(np.asarray(x, dtype=np.float64))
    ly = np.log2(np.asarray(y, dtype=np.float64))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return float(coef[0]), float(coef[1]), rms


def cmd_sweep(cfg: dict, args) -> int:
    lams = parse_lambdas(cfg)
    if len(lams) < 5:
        raise InsufficientPoints(
            f"scaling fits need at least 5 lambda points, got {len(lams)}"
        )
    p = heat_exponent(cfg)
    chash = config_hash(cfg)
    cfg_json = json.dumps(cfg, sort_keys=True)

    payloads = [(cfg_json, lam) for lam in lams]
    if args.jobs > 1:
        # gathered via ordered map, so emission order matches the config
        # regardless of completion order
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            points = list(pool.map(_sweep_point, payloads))
    else:
        points = [_sweep_point(pl) for pl in payloads]

    d_slope, d_icept, d_rms = _loglog_fit(
        [pt["lambda"] for pt in points], [pt["D_to_ideal"] for pt in points]
    )
    h_slope, h_icept, h_rms = _loglog_fit(
        [pt["lambda"] for pt in points], [pt["heat_metric"] for pt in points]
    )

    # the deficit metric should plateau at the coefficient quadratic form
    # q^T M q / ||Q||^2 (scale-free under Q = qhat lambda^p)
    top = max(lams)
    model = build_model(cfg, top)
    theta0 = parse_theta0(cfg, model)
    dens, dens_source = densities_for(cfg, model, theta0)
    co = bounds.second_order_coefficients(dens)
    hv = heat_vector_at(cfg, top, theta0, model.labels)
    q = hv.slot_heats(model.labels)
    quad = float(q @ co.M @ q) / hv.norm ** 2
    plateau = points[-1]["deficit_metric"]

    report = {
        "schema": SCHEMA_VERSION,
        "config": chash,
        "version": __version__,
        "exponent": p,
        "expected_D_slope": max(-0.5, 2.0 * p - 2.0),
        "fits": {
            "D_slope": d_slope,
            "D_intercept": d_icept,
            "D_rms_residual": d_rms,
            "heat_metric_slope": h_slope,
            "heat_metric_intercept": h_icept,
            "heat_metric_rms_residual": h_rms,
        },
        "deficit_plateau": plateau,
        "coefficient_quadratic": quad,
        "plateau_rel_dev": abs(plateau - quad) / abs(quad),
        "densities": dens_source,
        "points": points,
    }
    _emit(json.dumps(report, indent=2) + "\n", args.out)

    if args.emit_plot_data:
        series_rows = []
        for pt in points:
            for series in ("D_to_ideal", "heat_metric", "deficit_metric"):
                series_rows.append([series, pt["lambda"], pt[series], chash, __version__])
        buf = io.StringIO()
        write_csv(["series", "lambda", "value", "config", "version"], series_rows, buf)
        with open(args.emit_plot_data, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        log.info("wrote plot data to %s", args.emit_plot_data)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _rand_herm(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (A + A.conj().T) / 2


def _verify_pythagorean(rng):
    worst = 0.0
    A1 = observables.Quantity("A", 1)
    B1 = observables.Quantity("B", 1)
    for _ in range(40):
        d = int(rng.integers(4, 11))
        obs = observables.DenseSet([_rand_herm(rng, d), _rand_herm(rng, d)], (A1, B1))
        A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = A @ A.conj().T + 0.05 * np.eye(d)
        rho /= np.trace(rho).real
        theta_ref = rng.normal(scale=0.5, size=2)
        split = protocol.pythagorean_check(obs, rho, theta_ref)
        worst = max(worst, split.defect / (1.0 + split.D_total))
    return worst


def _verify_fisher_hessian():
    worst = 0.0
    for model in (
        models.IIDTwoLevelModel(sites=24),
        models.SpinHalfBathModel(sites=8, mix=0.4),
    ):
        theta0 = np.full(len(model.labels), 0.9)
        theta0[1:] *= 0.6
        obs = models.instantiate(model, theta0)
        J = thermal.fisher_matrix(obs, theta0)
        h = 1e-4
        K = theta0.size
        H = np.zeros((K, K))
        for i in range(K):
            for j in range(K):
                tpp = theta0.copy(); tpp[i] += h; tpp[j] += h
                tpm = theta0.copy(); tpm[i] += h; tpm[j] -= h
                tmp = theta0.copy(); tmp[i] -= h; tmp[j] += h
                tmm = theta0.copy(); tmm[i] -= h; tmm[j] -= h
                H[i, j] = (
                    thermal.free_entropy(obs, tpp) - thermal.free_entropy(obs, tpm)
                    - thermal.free_entropy(obs, tmp) + thermal.free_entropy(obs, tmm)
                ) / (4 * h * h)
        worst = max(worst, float(np.max(np.abs(H - J)) / np.max(np.abs(J))))
    return worst


def _verify_entropy_preservation():
    model = models.SpinHalfBathModel(sites=6, mix=0.4)
    theta0 = np.array([1.0, -0.8])
    obs = models.instantiate(model, theta0)
    fin = protocol.solve_final_temperature(obs, theta0, bounds.HeatVector(dQ_B1=0.05))
    _, rho = protocol.build_optimal_protocol(
        obs, theta0, fin.theta, engine="dense", return_state=True
    )
    w = np.linalg.eigvalsh(rho)
    w = w[w > 1e-300]
    s_final = float(-(w * np.log(w)).sum())
    s0 = thermal.thermal_entropy(obs, theta0)
    return abs(s_final - s0) / abs(s0)


def _verify_fgcb_order(rng):
    worst = -np.inf
    model = models.FermiGasWellModel(scale=40.0)
    theta0 = np.array([2.0, 1.0, -4.0, -2.0])
    dens = models.analytic_densities(model, theta0)
    co = bounds.second_order_coefficients(dens)
    labels = model.labels
    for _ in range(200):
        q = rng.normal(scale=3.0, size=3)
        gcb = bounds.generalized_carnot_bound(q, theta0, labels)
        fgcb = bounds.fine_grained_bound(q, theta0, labels, 40.0, co)
        worst = max(worst, fgcb - gcb)
    return worst


def cmd_verify(cfg, args) -> int:
    rng = np.random.default_rng(args.seed)
    checks = [
        ("pythagorean_split", _verify_pythagorean(rng), 1e-9),
        ("fisher_equals_hessian", _verify_fisher_hessian(), 1e-4),
        ("protocol_entropy_preserved", _verify_entropy_preservation(), 1e-12),
        ("fgcb_below_gcb", _verify_fgcb_order(rng), 1e-12),
    ]
    chash = "" if cfg is None else config_hash(cfg)
    header = ["invariant", "residual", "threshold", "passed", "config", "version"]
    rows = []
    failed = 0
    for name, residual, threshold in checks:
        ok = residual <= threshold
        if not ok:
            failed += 1
        rows.append([name, residual, threshold, ok, chash, __version__])
    write_rows(header, rows, args)
    return EXIT_INVARIANT if failed else EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbe",
        description="finite-bath engine bounds: experiment driver",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("coeffs", True), ("bound", True), ("protocol", True),
        ("sweep", True), ("verify", False),
    ):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=needs_config)
        cmd.add_argument("--out", default=None)
        cmd.add_argument("--format", choices=("csv", "json"), default="csv")
        cmd.add_argument("--jobs", type=int, default=1)
        cmd.add_argument("--seed", type=int, default=0)
        cmd.add_argument("--emit-plot-data", default=None)
    return parser


COMMANDS = {
    "coeffs": cmd_coeffs,
    "bound": cmd_bound,
    "protocol": cmd_protocol,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("FBE_LOG", "error"), logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is None and args.command != "verify":
            raise ConfigError(f"{args.command} needs --config")
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InsufficientPoints) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FBEError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
