"""Command-line interface: ``marginlab <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 a verification
check failed.  Randomized commands require ``--seed``.  ``--config FILE`` reads
``key=value`` lines (``#`` comments); flags given on the command line win.
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as B
from . import constructions as K
from . import harness as H
from . import projection as P
from . import svm
from .core import GENERATOR_ID, STRICT, WEAK, RngStream, empirical_margin_loss, \
    exact_margin_error, exact_out_of_sample_error, sample_from
from .sparsefmt import read_distribution, read_hyperplane, write_distribution, \
    write_hyperplane

CONFIG_KEYS = ("seed", "trials", "out_dir", "R", "theta", "m", "delta", "tau", "epsilon",
               "c_k", "C", "mode", "L", "jobs")
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
# refuse to write distribution files larger than this unless --force
MAX_EXPORT_ATOMS = 1_000_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def read_config(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{n}: expected key=value")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r} (allowed: {', '.join(CONFIG_KEYS)})")
        out[key] = val
    return out


# ----------------------------------------------------------------------------
# shared option groups
# ----------------------------------------------------------------------------

def _common(p, seed=False):
    p.add_argument("--config", help="key=value file with defaults")
    p.add_argument("--out-dir", dest="out_dir", default=".", help="output directory")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")


def _geometry(p, m=True, R=None, theta=1.0):
    p.add_argument("--R", type=float, default=R, help="data radius")
    p.add_argument("--theta", type=float, default=theta, help="margin")
    if m:
        p.add_argument("--m", type=float, default=None, help="sample size")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="marginlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("version", help="print version and generator identifiers")

    p = sub.add_parser("bounds", help="evaluate every bound at one point")
    _common(p)
    _geometry(p, R=10.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--L", type=float, default=0.0, help="in-sample margin loss")
    p.add_argument("--C", type=float, default=1.0, help="constant in front of every bound")
    p.add_argument("--tau", type=float, default=None, help="lower-bound tau (default L)")
    p.add_argument("--csv", action="store_true", help="also write bounds.csv")

    p = sub.add_parser("construct", help="build a lower-bound instance and export it")
    p.add_argument("kind", choices=("small-tau", "large-tau", "adversarial"))
    _common(p, seed=True)
    _construct_args(p)
    p.add_argument("--force", action="store_true",
                   help=f"export even above {MAX_EXPORT_ATOMS} atoms")

    p = sub.add_parser("witness", help="sample from an instance and build its witness")
    p.add_argument("kind", choices=("small-tau", "large-tau", "adversarial"))
    _common(p, seed=True)
    _construct_args(p)
    p.add_argument("--mode", choices=(STRICT, WEAK), default=STRICT)

    p = sub.add_parser("verify", help="Monte Carlo checks of tail bounds and identities")
    p.add_argument("check", choices=("norm", "dot", "mgf", "sums", "rounding", "distortion",
                                     "compat", "reverse-chernoff", "coupon"))
    _common(p, seed=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--k", default=None, help="projection dimension(s), comma separated")
    p.add_argument("--t", default=None, help="deviation(s), comma separated")
    p.add_argument("--kind", default=None,
                   help="mgf: square|product; sums: chi_square|product|both")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--samples", type=int, default=None, help="mgf sample count")
    p.add_argument("--tol", type=float, default=0.02, help="mgf relative tolerance")
    p.add_argument("--dim", type=int, default=3, help="source dimension for norm/dot")
    _geometry(p, R=None, theta=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--p", type=float, default=None, help="reverse-chernoff success rate")
    p.add_argument("--u", type=int, default=None)
    p.add_argument("--coupon-t", dest="coupon_t", type=int, default=None)
    p.add_argument("--mode", choices=P.DISTORTION_MODES, default="out_of_sample")
    p.add_argument("--dist", help="distribution file (distortion)")
    p.add_argument("--model", help="hyperplane file (distortion)")

    p = sub.add_parser("svm", help="train or evaluate a soft-margin SVM")
    p.add_argument("action", choices=("train", "eval"))
    _common(p, seed=True)
    p.add_argument("--dist", required=False, help="distribution file to sample from")
    p.add_argument("--m", type=float, default=None)
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--eta0", type=float, default=0.1)
    p.add_argument("--decay", type=float, default=0.01)
    p.add_argument("--model", help="model path (eval input / train output)")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--mode", choices=(STRICT, WEAK), default=STRICT)

    p = sub.add_parser("experiment", help="gap experiments, adversary games, bound sweeps")
    p.add_argument("kind", choices=("gap", "adversary", "sweep"))
    _common(p, seed=True)
    p.add_argument("--kind", dest="construction", choices=("small_tau", "large_tau"),
                   default="small_tau", help="gap: which construction")
    p.add_argument("--trials", type=int, default=None)
    _construct_args(p)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--Ls", default=None, help="sweep: L grid (default 20 points on [0, 2/ln m])")
    p.add_argument("--ms", default=None, help="sweep: m values, comma separated")
    p.add_argument("--learner", choices=("majority", "svm"), default="majority")
    p.add_argument("--no-figure", dest="figure", action="store_false")
    return ap


def _construct_args(p):
    _geometry(p, R=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--c_k", "--c-k", dest="c_k", type=float, default=None)
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------

def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + n for n in missing)}")


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _m(args) -> int:
    m = int(args.m)
    if m != args.m:
        raise UsageError("--m must be an integer for this command")
    return m


def _kind(name: str) -> str:
    return name.replace("-", "_")


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_version(args) -> int:
    print(f"marginlab {__version__} generator={GENERATOR_ID}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    _require(args, "R", "theta", "m")
    inp = B.BoundInputs(args.R, args.theta, args.m, args.delta, args.L, args.C)
    rows = B.compare_all(inp, args.tau)
    print(f"{'bound':<20}{'value':>16}  vacuous")
    for r in rows:
        print(f"{r.name:<20}{r.value:>16.7f}  {int(r.vacuous)}")
    if args.csv:
        table = [{"bound": r.name, "value": r.value, "vacuous": r.vacuous, "R": args.R,
                  "theta": args.theta, "m": args.m, "delta": args.delta, "L": args.L,
                  "C": args.C} for r in rows]
        H.emit_csv(table, _out(args, "bounds.csv"))
    return EXIT_OK


def _build(args, rng=None):
    kind = args.kind
    if kind == "small-tau":
        _require(args, "R", "theta", "m")
        return K.build_small_tau(args.R, args.theta, _m(args),
                                 args.epsilon if args.epsilon is not None else 0.001,
                                 args.C if args.C is not None else 4.0)
    if kind == "large-tau":
        _require(args, "R", "theta", "m", "tau")
        return K.build_large_tau(args.R, args.theta, args.tau, _m(args),
                                 args.c_k if args.c_k is not None else 0.25)
    _require(args, "R", "theta")
    k = K.adversarial_k(args.R, args.theta)
    if args.alpha is not None or args.beta is not None:
        params = (args.alpha or 0.0, args.beta or 0.0, args.epsilon or 0.0)
    else:
        _require(args, "tau", "m")
        params = K.adversary_params(args.tau, k, _m(args))
    ell = rng.spawn("ell").choice(np.array([-1, 1]), size=k)
    return K.build_adversarial(ell, args.R, args.theta, *params)


def _seeded(args) -> RngStream:
    if args.seed is None:
        raise UsageError("--seed is required for randomized commands")
    return RngStream.derive(args.seed, f"cli/{args.command}")


def cmd_construct(args) -> int:
    rng = _seeded(args) if args.kind == "adversarial" else None
    inst = _build(args, rng)
    D = inst.D
    print(f"{args.kind}: atoms={D.n_atoms} dim={D.dim}", end="")
    for name in ("u", "t", "k", "alpha", "beta", "epsilon"):
        if hasattr(inst, name):
            print(f" {name}={getattr(inst, name)}", end="")
    print()
    if D.n_atoms > MAX_EXPORT_ATOMS and not args.force:
        print(f"not exporting {D.n_atoms} atoms (use --force)", file=sys.stderr)
        return EXIT_OK
    path = _out(args, f"{_kind(args.kind)}.dist")
    meta = {"kind": _kind(args.kind), "R": args.R, "theta": args.theta}
    if args.kind == "adversarial":
        meta["ell"] = "".join("+" if x > 0 else "-" for x in inst.ell)
        write_hyperplane(inst.w, _out(args, "adversarial_w.model"), meta)
    write_distribution(D, path, meta)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_witness(args) -> int:
    rng = _seeded(args)
    inst = _build(args, rng)
    if args.kind == "adversarial":
        _require(args, "m")
        S = sample_from(inst.D, _m(args), rng.spawn("sample"))
        w = inst.w
    else:
        S = sample_from(inst.D, inst.m, rng.spawn("sample"))
        w = (K.witness_small_tau(inst, S) if args.kind == "small-tau"
             else K.witness_large_tau(inst, S))
        if w is None:
            print("witness not found: too few unseen points in this sample")
            return EXIT_OK
    ls = empirical_margin_loss(S, w, args.theta, args.mode)
    ld = exact_out_of_sample_error(inst.D, w)
    print(f"norm={w.norm:.12g} L_S^theta={ls:.12g} L_D={ld:.12g} gap={ld - ls:.12g}")
    path = _out(args, f"{_kind(args.kind)}_witness.model")
    write_hyperplane(w, path, {"kind": _kind(args.kind), "seed": args.seed,
                               "sample_margin_loss": ls, "out_of_sample_error": ld})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    rng = _seeded(args)
    verdicts = []
    c = args.check
    if c in ("norm", "dot", "sums"):
        ks = _ints(args.k or "50,200,800")
        ts = _floats(args.t or "0.05,0.1,0.2")
        trials = args.trials or 100_000
        kinds = ["chi_square", "product"] if (args.kind or "both") == "both" else [args.kind]
        src = rng.spawn("vectors")
        u = src.standard_normal(args.dim)
        u /= np.linalg.norm(u)
        v = src.standard_normal(args.dim)
        v /= np.linalg.norm(v)
        for k in ks:
            for t in ts:
                r = rng.spawn(f"{c}/{k}/{t!r}")
                if c == "norm":
                    verdicts.append(P.verify_norm_tail(u, k, t, trials, r))
                elif c == "dot":
                    verdicts.append(P.verify_dot_tail(u, v, k, t, trials, r))
                else:
                    verdicts += [P.verify_sum_tails(kd, k, t, trials, r.spawn(kd)) for kd in kinds]
    elif c == "mgf":
        kind = args.kind or "square"
        alpha = 0.2 if args.alpha is None else args.alpha
        chk = P.verify_mgf(kind, alpha, args.samples or 1_000_000, rng)
        ok = chk.relative_error <= args.tol
        print(f"{'PASS' if ok else 'FAIL'} mgf [kind={kind} alpha={alpha:g}] exact={chk.exact:.6f} "
              f"estimate={chk.estimate:.6f} relative error={chk.relative_error:.4%}")
        return EXIT_OK if ok else EXIT_VERIFY
    elif c == "rounding":
        results = [P.verify_rounding(k, args.trials or 100_000, rng.spawn("rounding", k))
                   for k in _ints(args.k or "4,16,64")]
        for r in results:
            print(r.describe())
        return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY
    elif c == "distortion":
        verdicts += _verify_distortion(args, rng)
    elif c == "compat":
        D = (read_distribution(args.dist)[0] if args.dist
             else P.four_atom_distribution(args.R or 1.0))
        k = _ints(args.k or "2")[0]
        verdicts.append(P.verify_compatibility(D, k, int(args.m or 500),
                                               args.delta if args.delta else 0.1,
                                               args.trials or 100, rng))
    elif c == "reverse-chernoff":
        m, p, d = int(args.m or 2000), args.p or 0.05, args.delta or 0.2
        chk = K.verify_reverse_chernoff(m, p, d, args.trials or 100_000, rng)
        verdicts.append(chk.verdict)
        e = chk.estimate
        print(f"Pr[Bin({m},{p:g}) <= {chk.threshold:g}] estimate {e.point:.6g} "
              f"[{e.lower:.6g}, {e.upper:.6g}]")
    elif c == "coupon":
        u, t = args.u or 4, args.coupon_t or 2
        model = K.coupon_expectation(u, t)
        draws = K.simulate_coupon(u, t, args.trials or 100_000, rng.spawn("mean"))
        mean, se = float(draws.mean()), float(draws.std(ddof=1) / math.sqrt(draws.size))
        ok = abs(mean - model.expectation) <= 3 * se
        print(f"{'PASS' if ok else 'FAIL'} coupon-mean [u={u} t={t}] simulated={mean:.6f} "
              f"exact={model.expectation:.6f} (3se {3 * se:.3g})")
        m = int(args.m or max(1, math.floor(model.expectation / 2)))
        verdicts.append(K.verify_coupon_tail(u, t, m, args.trials or 100_000, rng.spawn("tail")))
        if not ok:
            for v in verdicts:
                print(v.describe())
            return EXIT_VERIFY
    for v in verdicts:
        print(v.describe())
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_VERIFY


def _verify_distortion(args, rng):
    if args.dist:
        D, _ = read_distribution(args.dist)
        if not args.model:
            raise UsageError("--dist needs --model")
        w, _ = read_hyperplane(args.model)
        theta = args.theta or D.radius / 4
    else:
        R, theta = args.R or 2.0, args.theta or 1.0
        ell = rng.spawn("ell").choice(np.array([-1, 1]), size=K.adversarial_k(R, theta))
        inst = K.build_adversarial(ell, R, theta, 0.2, 0.4, 0.0)
        D, w = inst.D, inst.w
    out = []
    for k in _ints(args.k or "200,800"):
        out.append(P.estimate_margin_distortion(D, w, theta, k, args.trials or 20_000,
                                                rng.spawn("distortion", k), args.mode))
    return out


def cmd_svm(args) -> int:
    rng = _seeded(args)
    _require(args, "dist", "m")
    D, _ = read_distribution(args.dist)
    S = sample_from(D, _m(args), rng.spawn("sample"))
    if args.action == "train":
        cfg = svm.TrainConfig(args.lam, args.epochs, args.eta0, args.decay, seed=args.seed)
        res = svm.train_soft_margin(S, cfg)
        path = Path(args.model) if args.model else _out(args, "svm.model")
        svm.save_model(res, path, {"m": S.m})
        print(f"objective {res.objective[0]:.6g} -> {res.final_objective:.6g}; "
              f"||w|| = {res.w.norm:.6g}; wrote {path}")
        return EXIT_OK
    _require(args, "model")
    w, _ = read_hyperplane(args.model)
    if w.norm == 0:
        raise RuntimeError("model has zero weights")
    w = svm.normalize(w)
    prof = svm.margin_profile(S, w)
    theta = args.theta if args.theta is not None else max(prof.quantile(0.1), 1e-12)
    print(f"L_D={exact_out_of_sample_error(D, w):.12g} "
          f"L_D^theta={exact_margin_error(D, w, theta, args.mode):.12g} "
          f"L_S^theta={prof.loss(theta, args.mode):.12g} theta={theta:.6g}")
    rows = [{"rank": i, "margin": x} for i, x in enumerate(prof.margins)]
    H.emit_csv(rows, _out(args, "margin_profile.csv"), columns=("rank", "margin"))
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.kind == "sweep":
        return _sweep(args)
    if args.seed is None:
        raise UsageError("--seed is required for randomized commands")
    trials = 100 if args.trials is None else args.trials
    if args.kind == "gap":
        kind = args.construction
        _require(args, "R", "theta", "m")
        params = {"R": args.R, "theta": args.theta, "m": _m(args)}
        if kind == "small_tau":
            params.update(epsilon=args.epsilon, C=args.C)
        else:
            _require(args, "tau")
            params.update(tau=args.tau, c_k=args.c_k)
        records, summ = H.run_gap_experiment(kind, params, trials, args.seed, args.jobs)
        path = _out(args, f"gap_{kind}.csv")
        H.emit_csv(records, path, meta={"seed": args.seed, "trials": trials, "kind": kind,
                                        **{k: v for k, v in params.items() if v is not None}})
        s = summ.success
        print(f"{kind}: n={summ.n} gap floor={summ.gap_floor:.6g} success={s.point:.4f} "
              f"[{s.lower:.4f}, {s.upper:.4f}] mean gap={summ.mean_gap:.6g}")
        if summ.unseen_at_least_t is not None:
            print(f"fraction with >= t unseen points: {summ.unseen_at_least_t.point:.4f}")
        if args.figure and records:
            gaps = [r.gap if r.witness_found else float("nan") for r in records]
            H.emit_svg_lines({"gap": (list(range(len(records))), gaps),
                              "floor": ([0, len(records) - 1], [summ.gap_floor] * 2)},
                             _out(args, f"gap_{kind}.svg"), title=f"{kind} gap per trial",
                             xlabel="trial", ylabel="L_D - L_S^theta")
        print(f"wrote {path}")
        return EXIT_OK
    # adversary
    _require(args, "R", "theta", "m", "tau")
    learner = K.majority_vote_learner if args.learner == "majority" else svm.svm_learner()
    res = K.run_adversary_game(learner, args.R, args.theta, args.tau, _m(args), trials,
                               args.seed, args.jobs)
    path = _out(args, "adversary.csv")
    H.emit_csv(res.records, path, meta={"seed": args.seed, "trials": trials, "R": args.R,
                                        "theta": args.theta, "m": _m(args), "tau": args.tau,
                                        "learner": args.learner})
    ok = res.psi_mean >= res.floor - 3 * res.psi_se
    print(f"k={res.k} alpha={res.alpha:.6g} beta={res.beta:.6g} epsilon={res.epsilon:.6g}")
    print(f"mean psi={res.psi_mean:.6g} (se {res.psi_se:.3g}) floor={res.floor:.6g} "
          f"{'>=' if ok else '<'} floor - 3se; mean error={res.error_mean:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def _sweep(args) -> int:
    _require(args, "R", "theta")
    ms = _floats(args.ms) if args.ms else [args.m or 1e8]
    C = 1.0 if args.C is None else args.C
    rows = []
    for m in ms:
        Ls = _floats(args.Ls) if args.Ls else list(np.linspace(0, 2 / math.log(m), 20))
        rows += H.run_bound_sweep(args.R, [args.theta], [m], Ls, [args.delta], C)
    path = _out(args, "sweep.csv")
    H.emit_csv(rows, path, columns=H.SWEEP_COLUMNS)
    bad = H.crossover_mismatches(rows)
    print(f"{len(rows)} rows; {len(bad)} grid point(s) where bound_main < bound_bm "
          f"disagrees with L < 1/ln m")
    for r in bad:
        print(f"  m={r['m']:g} L={r['L']:.6g} (1/ln m = {1 / math.log(r['m']):.6g})")
    if args.figure:
        H.emit_svg_lines(H.sweep_series(rows), _out(args, "sweep.svg"),
                         title="bound vs in-sample margin loss", xlabel="L", ylabel="bound")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"version": cmd_version, "bounds": cmd_bounds, "construct": cmd_construct,
            "witness": cmd_witness, "verify": cmd_verify, "svm": cmd_svm,
            "experiment": cmd_experiment}


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return args
    cfg = read_config(cfg_path)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in cfg.items():
        if key in dests:
            a = dests[key]
            defaults[key] = a.type(val) if a.type else val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _warn(message, category, filename, lineno, file=None, line=None):
    print(f"marginlab: warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    warnings.showwarning = _warn
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not args.command:
            raise UsageError(parser.format_usage().rstrip())
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"marginlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
