"""Command-line front end: ``python -m effdf <command> ...``.

Exit status is 0 on success, 2 on a usage error and 1 on a runtime error.
No output file is left behind on failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import experiments as ex
from . import io
from .engine import NOISE_LAWS, DataModel
from .errors import EffDfError
from .fitters import OLS, AxisSubset, BestSubset, ForwardStepwise, PointSet, Ridge
from .linalg import DesignMatrix

COMMANDS = ("estimate", "heatmap", "subset-curve", "scaling", "divergence")
DEFAULT_REPLICATES = {
    "estimate": 100_000,
    "heatmap": ex.HEATMAP_REPLICATES,
    "subset-curve": ex.CURVE_REPLICATES,
    "scaling": ex.CURVE_REPLICATES,
    "divergence": ex.CURVE_REPLICATES,
}


class UsageError(ValueError):
    """Bad flag value; reported through ``parser.error`` (exit 2)."""


@dataclass
class RunConfig:
    command: str
    seed: int
    replicates: int
    workers: int
    out_path: str
    format: str
    estimator: str
    timestamp: bool
    params: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Value parsers.


def parse_floats(text: str, sep: str = ",") -> list:
    try:
        vals = [float(t) for t in text.split(sep) if t.strip() != ""]
    except ValueError:
        raise UsageError(f"not a list of numbers: {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"expected finite numbers, got {text!r}")
    return vals


def parse_ks(text: str) -> list:
    """``"0-15"`` or ``"1,3,5"`` (ranges inclusive, may be mixed)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part[1:]:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            elif part:
                out.append(int(part))
        except ValueError:
            raise UsageError(f"bad subset size list {text!r}") from None
    if not out or min(out) < 0:
        raise UsageError(f"bad subset size list {text!r}")
    return sorted(set(out))


def parse_spec(text: str):
    """``kind:key=value,...`` -> (kind, {key: value})."""
    kind, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"expected key=value in {text!r}, got {item!r}")
        params[key.strip()] = value.strip()
    return kind.strip().lower(), params


def parse_points(text: str) -> np.ndarray:
    """Points separated by ``/``, coordinates by ``;``: ``-1/1`` or ``0;1/1;0``."""
    pts = [parse_floats(p, ";") for p in text.split("/")]
    if len({len(p) for p in pts}) != 1:
        raise UsageError(f"points have different dimensions: {text!r}")
    return np.array(pts, dtype=float)


def load_matrix_csv(path: str) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read matrix from {path!r}: {exc}") from None
    return A


def parse_design(text: str | None, default_seed: int | None = None) -> DesignMatrix | None:
    if text is None:
        return None
    kind, params = parse_spec(text)
    if kind == "gaussian":
        unknown = set(params) - {"n", "p", "seed"}
        if unknown:
            raise UsageError(f"unknown design parameter(s) {sorted(unknown)}")
        try:
            n, p = int(params.get("n", 50)), int(params.get("p", 15))
            seed = int(params.get("seed", default_seed if default_seed is not None else 0))
        except ValueError:
            raise UsageError(f"bad design spec {text!r}") from None
        if n < 1 or p < 1:
            raise UsageError("design needs n >= 1 and p >= 1")
        return ex.gaussian_design(n, p, seed)
    try:
        return DesignMatrix(load_matrix_csv(text))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_fitter(text: str, design: DesignMatrix | None, n: int | None):
    """Fitter from the mini-language; see ``--fitter`` help."""
    kind, params = parse_spec(text)
    allowed = {"ols": set(), "ridge": {"lambda"}, "bsr": {"k"}, "fsr": {"k"}, "axis": {"k"},
               "points": {"file", "values"}}
    if kind not in allowed:
        raise UsageError(f"unknown fitter kind {kind!r}; choose from {sorted(allowed)}")
    unknown = set(params) - allowed[kind]
    if unknown:
        raise UsageError(f"unknown parameter(s) {sorted(unknown)} for fitter {kind!r}")
    try:
        k = int(params["k"]) if "k" in params else None
        lam = float(params["lambda"]) if "lambda" in params else None
    except ValueError:
        raise UsageError(f"bad fitter parameter in {text!r}") from None
    if kind in ("bsr", "fsr", "axis") and k is None:
        raise UsageError(f"fitter {kind!r} needs k=")
    if kind == "ridge" and lam is None:
        raise UsageError("ridge needs lambda=")
    if kind == "points":
        if ("file" in params) == ("values" in params):
            raise UsageError("points needs exactly one of file= or values=")
        P = load_matrix_csv(params["file"]) if "file" in params else parse_points(params["values"])
        return PointSet(P)
    if kind == "axis" or (kind == "bsr" and design is None):
        if n is None:
            raise UsageError(f"fitter {kind!r} without a design needs --mu")
        if not 0 <= k <= n:
            raise UsageError(f"k={k} out of range for n={n}")
        return AxisSubset(k)
    if design is None:
        if n is None:
            raise UsageError("need --design or --mu to size the identity design")
        design = DesignMatrix.identity(n)
    if kind in ("bsr", "fsr") and not 0 <= k <= design.p:
        raise UsageError(f"k={k} out of range for p={design.p}")
    if kind == "ridge" and lam < 0:
        raise UsageError("ridge lambda must be >= 0")
    return {"ols": lambda: OLS(design), "ridge": lambda: Ridge(design, lam),
            "bsr": lambda: BestSubset(design, k), "fsr": lambda: ForwardStepwise(design, k)}[kind]()


# --------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    common.add_argument("--replicates", type=int, default=None,
                        help="Monte Carlo replicates per point (command-specific default)")
    common.add_argument("--workers", type=int, default=1, help="worker processes, 0 = all cores")
    common.add_argument("--out", default="-", help="output path, '-' for stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--estimator", choices=("cov", "opt", "both"), default="cov")
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit timestamp and wallclock so reruns are byte-identical")

    parser = argparse.ArgumentParser(prog="effdf", description="Monte Carlo effective degrees of freedom.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("estimate", parents=[common], help="DF of one fitter at one mean")
    p.add_argument("--fitter", required=True,
                   help="ols | ridge:lambda=L | bsr:k=K | fsr:k=K | axis:k=K | "
                        "points:values=-1/1 | points:file=pts.csv")
    p.add_argument("--design", help="gaussian:n=50,p=15,seed=S or a headerless CSV file")
    p.add_argument("--mu", help="comma-separated mean (default: standardized X @ 1 for a design)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--noise", choices=sorted(NOISE_LAWS), default="gaussian")
    p.add_argument("--no-oracle", action="store_true", help="skip the reference value")

    p = sub.add_parser("heatmap", parents=[common], help="DF of 1-best-subset over a grid of means")
    p.add_argument("--grid-range", default="-5,5", help="lo,hi for both axes")
    p.add_argument("--grid-step", type=float, default=ex.HEATMAP_STEP)
    p.add_argument("--pixels", help="only these means, e.g. '0,5/5,5'")
    p.add_argument("--svg", help="also render the grid to this SVG file")
    p.add_argument("--no-oracle", action="store_true", help="skip quadrature references")

    p = sub.add_parser("subset-curve", parents=[common], help="DF against subset size")
    p.add_argument("--method", choices=("bsr", "fsr"), default="bsr")
    p.add_argument("--design", help="gaussian:n=50,p=15,seed=S or a headerless CSV file")
    p.add_argument("--design-seed", type=int, default=0, help="seed for the default Gaussian design")
    p.add_argument("--k", default=None, help="subset sizes, e.g. 0-15 or 1,5,15 (default all)")
    p.add_argument("--search", action="store_true",
                   help="scan design seeds from --design-seed until DF exceeds p by 2 SE")
    p.add_argument("--max-seeds", type=int, default=ex.MAX_DESIGN_SEEDS)
    p.add_argument("--search-replicates", type=int, default=ex.SEARCH_REPLICATES)

    p = sub.add_parser("scaling", parents=[common], help="mu = (A, A) sweep for 1-best-subset")
    p.add_argument("--A-values", dest="A_values", default="100,1000,10000")

    p = sub.add_parser("divergence", parents=[common], help="finite point set as sigma shrinks")
    p.add_argument("--sigma-values", default="1,0.1,0.01")
    p.add_argument("--points", default="-1/1", help="points separated by '/', coordinates by ';'")
    p.add_argument("--mu", default=None, help="comma-separated mean (default: origin)")
    return parser


_VALUE_FLAGS = {"--mu", "--grid-range", "--pixels", "--points", "--A-values", "--sigma-values",
                "--fitter", "--design", "--k"}


def _attach_negative_values(argv) -> list:
    # argparse reads "-1,2" as an option; bind it to the preceding flag.
    out, i = [], 0
    argv = list(argv)
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and not argv[i + 1].startswith("--"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def parse_cli(argv) -> RunConfig:
    parser = build_parser()
    args = parser.parse_args(_attach_negative_values(argv))
    try:
        return _config(args)
    except (ValueError, EffDfError) as exc:
        parser.error(str(exc))


def _config(args) -> RunConfig:
    cmd = args.command
    R = DEFAULT_REPLICATES[cmd] if args.replicates is None else args.replicates
    if R < 2:
        raise UsageError(f"--replicates must be >= 2, got {R}")
    if args.workers < 0:
        raise UsageError(f"--workers must be >= 0, got {args.workers}")
    params = {}
    if cmd == "estimate":
        if not (args.sigma > 0 and math.isfinite(args.sigma)):
            raise UsageError(f"--sigma must be positive, got {args.sigma}")
        design = parse_design(args.design)
        if args.mu is not None:
            mu = np.array(parse_floats(args.mu))
        elif design is not None:
            mu = ex.standardized_mean(design)
        else:
            raise UsageError("--mu is required without --design")
        if design is not None and design.n != mu.shape[0]:
            raise UsageError(f"--mu has {mu.shape[0]} entries, design has {design.n} rows")
        fitter = build_fitter(args.fitter, design, mu.shape[0])
        if fitter.n is not None and fitter.n != mu.shape[0]:
            raise UsageError(f"fitter works in R^{fitter.n}, --mu has {mu.shape[0]} entries")
        params.update(model=DataModel(mu, args.sigma, args.noise), fitter=fitter,
                      fitter_spec=args.fitter, oracle=not args.no_oracle)
    elif cmd == "heatmap":
        lo, hi = _pair(args.grid_range, "--grid-range")
        if not args.grid_step > 0:
            raise UsageError(f"--grid-step must be positive, got {args.grid_step}")
        if hi < lo:
            raise UsageError("--grid-range needs lo <= hi")
        pixels = None
        if args.pixels:
            pixels = parse_points(args.pixels.replace(",", ";"))
            if pixels.shape[1] != 2:
                raise UsageError("--pixels needs two coordinates per point")
            pixels = [tuple(p) for p in pixels]
        params.update(grid_range=(lo, hi), step=args.grid_step, pixels=pixels, svg=args.svg,
                      oracle=not args.no_oracle)
    elif cmd == "subset-curve":
        design = parse_design(args.design) if args.design else None
        if args.search and args.design:
            raise UsageError("--search scans Gaussian designs; drop --design")
        if args.max_seeds < 1 or args.search_replicates < 2:
            raise UsageError("--max-seeds must be >= 1 and --search-replicates >= 2")
        if design is None:
            design = ex.gaussian_design(50, 15, args.design_seed)
        ks = parse_ks(args.k) if args.k else None
        if ks is not None and max(ks) > design.p:
            raise UsageError(f"--k exceeds p={design.p}")
        params.update(design=design, design_spec=args.design, design_seed=args.design_seed,
                      method=args.method, ks=ks, search=args.search, max_seeds=args.max_seeds,
                      search_replicates=args.search_replicates)
    elif cmd == "scaling":
        params["A_values"] = parse_floats(args.A_values)
    elif cmd == "divergence":
        sigmas = parse_floats(args.sigma_values)
        if any(s <= 0 for s in sigmas):
            raise UsageError("--sigma-values must be positive")
        pts = parse_points(args.points)
        mu = parse_floats(args.mu) if args.mu else [0.0] * pts.shape[1]
        if len(mu) != pts.shape[1]:
            raise UsageError("--mu and --points differ in dimension")
        try:
            PointSet(pts)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        params.update(sigmas=sigmas, points=pts, mu=mu)
    return RunConfig(cmd, args.seed, R, args.workers, args.out, args.format, args.estimator,
                     not args.no_timestamp, params)


def _pair(text, flag):
    vals = parse_floats(text)
    if len(vals) != 2:
        raise UsageError(f"{flag} needs two numbers, got {text!r}")
    return vals


# --------------------------------------------------------------------------


def run(cfg: RunConfig):
    """Execute a parsed configuration; returns (rows, metadata)."""
    P, R, s, est, w = cfg.params, cfg.replicates, cfg.seed, cfg.estimator, cfg.workers
    meta = {}
    if cfg.command == "estimate":
        rows = ex.run_estimate(P["model"], P["fitter"], R, s, est, w, P["oracle"])
        for r in rows:
            r.point = {"fitter": P["fitter_spec"], **r.point}
        meta["fitter"] = P["fitter_spec"]
    elif cfg.command == "heatmap":
        rows = ex.run_heatmap(P["grid_range"], P["step"], R, s, est, w, P["pixels"], P["oracle"])
        meta.update(grid_range=list(P["grid_range"]), grid_step=P["step"])
    elif cfg.command == "subset-curve":
        design = P["design"]
        if P["search"]:
            found = ex.search_design_seed(50, 15, P["design_seed"], P["max_seeds"],
                                          P["search_replicates"], s, P["method"], w)
            meta.update(searched_seeds=list(found.tried))
            if found.design_seed is None:
                raise RuntimeError(f"no design in seeds {found.tried} shows DF above p at 2 SE")
            meta["design_seed"] = found.design_seed
            design = ex.gaussian_design(50, 15, found.design_seed)
        elif P["design_spec"] is None:
            meta["design_seed"] = P["design_seed"]
        rows = ex.run_subset_curve(design, P["method"], P["ks"], R, s, est, w)
        meta.update(method=P["method"], n=design.n, p=design.p)
    elif cfg.command == "scaling":
        rows = ex.run_scaling(P["A_values"], R, s, est, w)
    else:
        rows = ex.run_divergence(P["sigmas"], P["points"], P["mu"], R, s, est, w)
    return rows, meta


def main(argv=None) -> int:
    cfg = parse_cli(sys.argv[1:] if argv is None else argv)
    try:
        rows, extra = run(cfg)
        meta = io.build_metadata(cfg.command, cfg.seed, cfg.replicates, cfg.timestamp,
                                 estimator=cfg.estimator, **extra)
        text = io.format_rows(rows, cfg.format, meta, timing=cfg.timestamp)
        svg = cfg.params.get("svg")
        svg_text = io.render_heatmap_svg(rows) if svg else None
        io.atomic_write(cfg.out_path, text)
        if svg:
            try:
                io.atomic_write(svg, svg_text)
            except OSError:
                if cfg.out_path != "-" and os.path.exists(cfg.out_path):
                    os.unlink(cfg.out_path)
                raise
    except (EffDfError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"effdf: error: {exc}", file=sys.stderr)
        return 1
    return 0
