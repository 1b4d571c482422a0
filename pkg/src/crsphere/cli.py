"""Command-line front end.

Subcommands: ``decompose``, ``tangency``, ``flow``, ``slice`` and ``verify``.
Every command except ``verify`` writes its outputs plus ``manifest.json``
(config hash, library versions, timings) into ``--out-dir``.

Exit codes: 0 success, 2 precondition violation, 3 numerical certificate
failure, 4 I/O or parse error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import config
from .errors import (
    ConfigError,
    CRSphereError,
    DeformationTooLarge,
    FixedPointDiverged,
    NotBurnsEpstein,
    NotInfinitesimallyEmbeddable,
    ParseError,
    SignLost,
    StepRejected,
)
from .harmonics import (
    Polynomial,
    QuadratureGrid,
    SphereFunction,
    block_norm2,
    grid_project,
    harmonic_decompose,
)
from .scalars import GaussQ

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_CERTIFICATE = 3
EXIT_IO = 4

CACHE_ENV = "CRSPHERE_CACHE_DIR"


# ---------------------------------------------------------------------------
# Polynomial text input
# ---------------------------------------------------------------------------

class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens = []
        self._scan()
        self.i = 0

    def _where(self, pos):
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def _scan(self):
        t, n = self.text, len(self.text)
        i = 0
        while i < n:
            c = t[i]
            if c.isspace():
                i += 1
                continue
            if c == "#":
                while i < n and t[i] != "\n":
                    i += 1
                continue
            if c.isdigit() or (c == "." and i + 1 < n and t[i + 1].isdigit()):
                j = i
                while j < n and (t[j].isdigit() or t[j] == "."):
                    j += 1
                self.tokens.append(("num", t[i:j], i))
                i = j
                continue
            if c.isalpha() or c == "_":
                j = i
                while j < n and (t[j].isalnum() or t[j] == "_"):
                    j += 1
                word = t[i:j]
                if word not in ("z", "w", "conj", "i"):
                    raise ParseError(f"unknown identifier {word!r}", *self._where(i))
                self.tokens.append(("id", word, i))
                i = j
                continue
            if c in "+-*/^()":
                self.tokens.append(("op", c, i))
                i += 1
                continue
            raise ParseError(f"unexpected character {c!r}", *self._where(i))
        self.tokens.append(("end", "", n))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind, value=None):
        tok = self.take()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            got = tok[1] if tok[0] != "end" else "end of input"
            raise ParseError(f"expected {want!r}, found {got!r}", *self._where(tok[2]))
        return tok

    def error(self, tok, msg):
        return ParseError(msg, *self._where(tok[2]))


def parse_polynomial(text: str) -> Polynomial:
    """Parse z, w, conj(.), i, rational literals, +, -, *, /, ^ and parentheses.

    Grammar::

        expr   := term (("+" | "-") term)*
        term   := unary (("*" | "/") unary)*
        unary  := ("+" | "-") unary | power
        power  := atom ("^" integer)?
        atom   := number | "z" | "w" | "i" | "conj" "(" expr ")" | "(" expr ")"

    The right operand of ``/`` must be a nonzero constant.
    """
    lx = _Lexer(text)
    if lx.peek()[0] == "end":
        raise lx.error(lx.peek(), "empty input")
    out = _expr(lx)
    tok = lx.peek()
    if tok[0] != "end":
        raise lx.error(tok, f"unexpected {tok[1]!r}")
    return out


def _expr(lx):
    acc = _term(lx)
    while lx.peek()[0] == "op" and lx.peek()[1] in "+-":
        op = lx.take()[1]
        rhs = _term(lx)
        acc = acc + rhs if op == "+" else acc - rhs
    return acc


def _term(lx):
    acc = _unary(lx)
    while lx.peek()[0] == "op" and lx.peek()[1] in "*/":
        op = lx.take()
        rhs = _unary(lx)
        if op[1] == "*":
            acc = acc * rhs
            continue
        if rhs.degree() > 0:
            raise lx.error(op, "divisor must be a constant")
        c = rhs.terms.get((0, 0, 0, 0))
        if c is None:
            raise lx.error(op, "division by zero")
        acc = acc * Polynomial.constant(GaussQ(1) / c)
    return acc


def _unary(lx):
    tok = lx.peek()
    if tok[0] == "op" and tok[1] in "+-":
        lx.take()
        val = _unary(lx)
        return -val if tok[1] == "-" else val
    return _power(lx)


def _power(lx):
    base = _atom(lx)
    if lx.peek()[0] == "op" and lx.peek()[1] == "^":
        lx.take()
        tok = lx.take()
        if tok[0] != "num" or not tok[1].isdigit():
            raise lx.error(tok, "exponent must be a non-negative integer")
        base = base ** int(tok[1])
    return base


def _number(lx, tok):
    try:
        return Fraction(tok[1])
    except ValueError:
        raise lx.error(tok, f"malformed number {tok[1]!r}") from None


def _atom(lx):
    tok = lx.take()
    kind, val, _ = tok
    if kind == "num":
        return Polynomial.constant(GaussQ(_number(lx, tok)))
    if kind == "id":
        if val == "z":
            return Polynomial.z()
        if val == "w":
            return Polynomial.w()
        if val == "i":
            return Polynomial.constant(GaussQ(0, 1))
        lx.expect("op", "(")
        inner = _expr(lx)
        lx.expect("op", ")")
        return inner.conj()
    if kind == "op" and val == "(":
        inner = _expr(lx)
        lx.expect("op", ")")
        return inner
    got = val if kind != "end" else "end of input"
    raise lx.error(tok, f"unexpected {got!r}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    N: int | None = 12
    K: int = 5
    lam: float = -1.0
    dt: float = 1e-3
    t_end: float = 1.0
    mode: str = "exact"
    s: int = 10
    series_kind: str = "formal"
    target: float = 1e-6
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    input: str | None = None
    out_dir: str = "."

    def validate(self):
        if self.N is not None and (not isinstance(self.N, int) or self.N < 1):
            raise ConfigError("N", f"truncation must be a positive integer, got {self.N!r}")
        if not isinstance(self.K, int) or self.K < 0:
            raise ConfigError("K", f"series order must be a non-negative integer, got {self.K!r}")
        if not isinstance(self.s, int) or self.s < 0:
            raise ConfigError("s", f"Folland-Stein order must be a non-negative integer, got {self.s!r}")
        if not math.isfinite(self.lam):
            raise ConfigError("lam", "lambda must be finite")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt", f"time step must be positive, got {self.dt!r}")
        if not (0 <= self.t_end <= 1):
            raise ConfigError("t_end", f"end time must lie in [0, 1], got {self.t_end!r}")
        if self.t_end > 0:
            n = round(self.t_end / self.dt)
            if abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
                raise ConfigError("t_end", f"{self.t_end} is not a multiple of dt = {self.dt}")
        if self.mode not in ("exact", "float"):
            raise ConfigError("mode", f"scalar mode must be 'exact' or 'float', got {self.mode!r}")
        if self.series_kind not in ("formal", "be"):
            raise ConfigError("series_kind", f"must be 'formal' or 'be', got {self.series_kind!r}")
        if not (self.target > 0):
            raise ConfigError("target", f"residual target must be positive, got {self.target!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"seed must be a non-negative integer, got {self.seed!r}")
        known = {f.name for f in dataclasses.fields(config.Tolerances)}
        for key, val in self.tolerances.items():
            if key not in known:
                raise ConfigError(f"tolerances.{key}", "unknown tolerance")
            if not isinstance(val, (int, float)) or val < 0:
                raise ConfigError(f"tolerances.{key}", f"must be a non-negative number, got {val!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir", None)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise _IOFailure(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "top-level JSON value must be an object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in names:
            raise ConfigError(key, "unknown configuration field")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    return cfg.validate()


class _IOFailure(CRSphereError):
    pass


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------

def _read_text(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _IOFailure(f"cannot read {path}: {exc}") from exc


def _read_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc


def read_function(path, weight=0, truncation=None) -> SphereFunction:
    """A SphereFunction from JSON, grid samples JSON, or polynomial text."""
    text = _read_text(path)
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
        if "samples" in data:
            return _from_samples(data, weight)
        try:
            u = SphereFunction.from_json(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"not a SphereFunction document: {exc}") from exc
        return u.with_weight(weight)
    return harmonic_decompose(parse_polynomial(text), weight=weight, truncation=truncation)


def _from_samples(data, weight):
    try:
        D = int(data["grid_degree"])
        N = int(data["N"])
        re = np.asarray(data["samples"]["re"], dtype=float)
        im = np.asarray(data["samples"].get("im", np.zeros_like(re)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed grid-sample document: {exc}") from exc
    grid = QuadratureGrid.for_degree(D)
    if re.size != np.prod(grid.shape):
        raise ParseError(f"expected {int(np.prod(grid.shape))} samples for grid degree {D}, "
                         f"got {re.size}")
    return grid_project((re + 1j * im).reshape(grid.shape), grid, N, weight=weight)


def _write(out_dir: Path, name: str, content: str, outputs: list):
    path = out_dir / name
    try:
        path.write_text(content)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc
    outputs.append(name)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    return str(x)


def _versions():
    import flint
    import scipy
    from importlib import metadata
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "python-flint": flint.__version__, "package": pkg}


def _manifest(out_dir, command, cfg, timings, outputs, status):
    manifest = {"command": command, "config": cfg.to_dict(), "config_hash": cfg.hash(),
                "versions": _versions(), "timings": timings, "outputs": sorted(outputs),
                "exit_code": status}
    _write(out_dir, "manifest.json", _dumps(manifest), [])


def _block_table(u: SphereFunction) -> str:
    lines = ["  p  q  dim  l2_norm"]
    for (p, q) in u.support():
        lines.append(f"{p:3d}{q:3d}{p + q + 1:5d}  {math.sqrt(float(block_norm2(u, p, q))):.6g}")
    if len(lines) == 1:
        lines.append("  (no blocks)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _prepare(cfg: RunConfig):
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create {out}: {exc}") from exc
    return out


def _as_mode(u: SphereFunction, cfg: RunConfig):
    return u.to_float() if cfg.mode == "float" else u


def cmd_decompose(cfg: RunConfig, echo=print) -> int:
    out = _prepare(cfg)
    t0 = time.perf_counter()
    u = _as_mode(read_function(cfg.input, 0, None), cfg)
    outputs = []
    _write(out, "decomposition.json", _dumps(u.to_json()), outputs)
    echo(_block_table(u))
    _manifest(out, "decompose", cfg, {"total": time.perf_counter() - t0}, outputs, EXIT_OK)
    return EXIT_OK


def _series_cache_path(cfg: RunConfig, phidot: SphereFunction):
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    key = hashlib.sha256((cfg.hash() + json.dumps(phidot.to_json(), sort_keys=True,
                                                  default=str)).encode()).hexdigest()
    return Path(root) / f"series-{key}.json"


def cmd_tangency(cfg: RunConfig, echo=print) -> int:
    from .tangency import TangencySeries, be_series, formal_series, polynomial_residual_series
    out = _prepare(cfg)
    timings = {}
    t0 = time.perf_counter()
    phidot = _as_mode(read_function(cfg.input, 2, cfg.N), cfg)
    cache = _series_cache_path(cfg, phidot)
    series = None
    if cache is not None and cache.exists():
        series = TangencySeries.from_json(json.loads(cache.read_text()))
        timings["cache_hit"] = True
    if series is None:
        with config.tolerances(**cfg.tolerances):
            if cfg.series_kind == "be":
                series = be_series(phidot, _lam_value(cfg), cfg.K, cfg.N, s=cfg.s)
            else:
                series = formal_series(phidot, cfg.K, cfg.N, s=cfg.s)
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            cache.write_text(_dumps(series.to_json()))
    timings["solve"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    res = polynomial_residual_series(series)
    if phidot.exact:
        res_norms = [0.0 if r.is_zero() else r.norm() for r in res]
    else:
        res_norms = [r.norm() for r in res]
    timings["residual"] = time.perf_counter() - t1
    outputs = []
    _write(out, "series.json", _dumps(series.to_json()), outputs)
    _write(out, "norms.csv", series.norms_csv(), outputs)
    nonzero_phi = [k + 1 for k, ph in enumerate(series.phi_coeffs)
                   if k >= 1 and not ph.is_zero(None if ph.exact else config.get().zero)]
    report = {"residual_l2_by_order": res_norms, "max_residual": max(res_norms),
              "exact": phidot.exact, "truncated": series.truncated,
              "nonzero_phi_orders": nonzero_phi, "certificate": series.certificate,
              "radius_estimate": series.radius_estimate}
    _write(out, "residual.json", _dumps(report), outputs)
    tol = 0.0 if phidot.exact else config.get().residual
    ok = max(res_norms) <= tol
    echo(f"series kind={series.kind} K={series.K} truncated={series.truncated}")
    echo(f"nonzero phi^(k), k >= 2: {nonzero_phi if nonzero_phi else 'none'}")
    echo(f"max residual over orders 0..{series.K}: {max(res_norms):.3e}")
    status = EXIT_OK if ok else EXIT_CERTIFICATE
    _manifest(out, "tangency", cfg, timings, outputs, status)
    return status


def _lam_value(cfg: RunConfig):
    lam = cfg.lam
    if cfg.mode == "exact":
        fr = Fraction(lam).limit_denominator(10 ** 9)
        if float(fr) == lam:
            return fr
    return lam


def cmd_flow(cfg: RunConfig, echo=print) -> int:
    from . import flow
    from .tangency import TangencySeries, Trajectory
    out = _prepare(cfg)
    data = _read_json(cfg.input)
    try:
        source = (Trajectory.from_json(data) if data.get("kind") == "trajectory"
                  else TangencySeries.from_json(data))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"not a series or trajectory document: {exc}") from exc
    if isinstance(source, TangencySeries):
        cert = source.certificate
        if not cert or not cert.get("strict_sign"):
            echo("refusing to integrate: the series carries no strict-sign certificate for "
                 "Re f_t (produce it with `tangency --series-kind be`)")
            return EXIT_PRECONDITION
    N = cfg.N if cfg.N is not None else 12
    t0 = time.perf_counter()
    with config.tolerances(**cfg.tolerances):
        states = flow.integrate(source, cfg.t_end, cfg.dt, N,
                                sample_every=max(1, int(round(0.01 / cfg.dt))))
    timings = {"integrate": time.perf_counter() - t0}
    outputs = []
    _write(out, "trajectory.csv", flow.trajectory_csv(states), outputs)
    _write(out, "trajectory.json", _dumps(flow.trajectory_json(states)), outputs)
    max_res = max(s.info["cr_residual"] for s in states)
    ok = max_res <= cfg.target
    echo(f"steps={int(round(cfg.t_end / cfg.dt))} N={N} final t={states[-1].t:.6g} "
         f"max cr_residual={max_res:.3e} target={cfg.target:.1e} "
         f"{'within target' if ok else 'EXCEEDS target'}")
    status = EXIT_OK if ok else EXIT_CERTIFICATE
    _manifest(out, "flow", cfg, timings, outputs, status)
    return status


def cmd_slice(cfg: RunConfig, echo=print) -> int:
    from .slice import cone_report, slice_decompose
    out = _prepare(cfg)
    t0 = time.perf_counter()
    phidot = _as_mode(read_function(cfg.input, 2, cfg.N), cfg)
    dec = slice_decompose(phidot)
    report = cone_report(phidot)
    outputs = []
    _write(out, "slice.json", _dumps(dec.to_json()), outputs)
    _write(out, "cones.json", _dumps(report), outputs)
    for name in ("BE", "BE_prime", "CD", "CD_prime"):
        echo(f"{name:9s} {'yes' if report[name] else 'no'}")
    echo(f"residual_norm {dec.residual_norm:.3e}")
    _manifest(out, "slice", cfg, {"total": time.perf_counter() - t0}, outputs, EXIT_OK)
    return EXIT_OK


def cmd_verify(selected=None, echo=print) -> int:
    from .acceptance import run_all
    results = run_all(selected, echo=echo)
    passed = sum(r.passed for r in results)
    echo(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_CERTIFICATE


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crsphere", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("input", help="input file")
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--N", type=int, help="truncation degree")
        p.add_argument("--mode", choices=["exact", "float"], help="scalar mode")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                       help="override a tolerance (repeatable)")

    common(sub.add_parser("decompose", help="harmonic decomposition of a polynomial or samples"))
    p = sub.add_parser("tangency", help="solve the tangency equation as a power series")
    common(p)
    p.add_argument("--K", type=int, help="series order")
    p.add_argument("--lam", type=float, help="constant offset lambda (be series)")
    p.add_argument("--s", type=int, help="Folland-Stein order for norms")
    p.add_argument("--series-kind", dest="series_kind", choices=["formal", "be"])
    p = sub.add_parser("flow", help="integrate the embedding flow from a series file")
    common(p)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--target", type=float, help="CR residual target")
    common(sub.add_parser("slice", help="slice decomposition and cone report"))
    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", type=int, action="append", help="criterion number (repeatable)")
    return ap


def _parse_tols(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError("tolerances", f"expected NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"tolerances.{k.strip()}", f"not a number: {v!r}") from None
    return out


COMMANDS = {"decompose": cmd_decompose, "tangency": cmd_tangency, "flow": cmd_flow,
            "slice": cmd_slice}


def main(argv=None, echo=print) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args.only, echo)
    err = lambda msg: print(msg, file=sys.stderr)
    try:
        overrides = {k: getattr(args, k, None) for k in
                     ("N", "K", "lam", "dt", "t_end", "mode", "s", "series_kind", "target",
                      "seed", "out_dir")}
        overrides["input"] = args.input
        tols = _parse_tols(args.tol)
        if tols:
            overrides["tolerances"] = tols
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, echo)
    except ParseError as exc:
        err(f"parse error: {exc}")
        return EXIT_IO
    except _IOFailure as exc:
        err(f"I/O error: {exc}")
        return EXIT_IO
    except ConfigError as exc:
        err(f"invalid configuration: {exc}")
        return EXIT_PRECONDITION
    except (NotInfinitesimallyEmbeddable, NotBurnsEpstein) as exc:
        err(f"precondition violated: {exc}")
        return EXIT_PRECONDITION
    except DeformationTooLarge as exc:
        err(f"precondition violated: {exc}")
        return EXIT_PRECONDITION
    except (SignLost, StepRejected, FixedPointDiverged) as exc:
        err(f"certificate failure: {exc}")
        return EXIT_CERTIFICATE


if __name__ == "__main__":
    sys.exit(main())
