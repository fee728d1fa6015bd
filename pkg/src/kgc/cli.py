"""Batch driver: ``kgc wave|kg|verify|planewave``.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 runtime failure of the model (Jacobian collapse, regular window exceeded).
"""

from __future__ import annotations

import argparse
import configparser
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import scenarios
from .errors import ConfigError, JacobianCollapse, KGCError, RegularWindowExceeded
from .io import atomic_write, content_hash, field_to_bytes, manifest_text, timeseries_csv
from .lattice import PhysicalConstants
from .material import run
from .oracles import PlaneWaveOracle, PlaneWaveParams
from .parallel import set_threads
from .verify import SUITES, run_suite, summary_table

OK, CHECK_FAILED, CONFIG_ERROR, RUNTIME_FAILURE = 0, 1, 2, 3
ROOT = "run"


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# config


class Config:
    """Flat ``key = value`` text with optional ``[section]`` headers.

    Keys before the first header belong to the ``run`` section.  Lookups
    take ``section.key`` or a bare key (searched in every section).
    """

    def __init__(self, text: str, source: str = "<config>"):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str.lower
        try:
            parser.read_string(f"[{ROOT}]\n" + text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from exc
        self.values = {s: dict(parser[s]) for s in parser.sections()}
        self.text = text
        if self.raw("units") != "natural":
            raise ConfigError("declare `units = natural`; other unit systems are not supported")

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        try:
            return cls(Path(path).read_text(), str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def raw(self, key: str, default: str | None = None) -> str | None:
        if "." in key:
            sec, name = key.split(".", 1)
            return self.values.get(sec, {}).get(name, default)
        for sec in self.values.values():
            if key in sec:
                return sec[key]
        return default

    def get(self, key: str, default=None, kind=float):
        val = self.raw(key)
        if val is None:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            if kind is bool:
                if val.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(val)
                return val.lower() in ("true", "yes", "1")
            if kind is tuple:
                return tuple(float(x) for x in val.replace(",", " ").split())
            return kind(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r} (a bare number in natural units)") from exc

    def echo(self) -> dict:
        return {f"config.{s}.{k}": v for s, sec in sorted(self.values.items())
                for k, v in sorted(sec.items())}


def constants_from(cfg: Config) -> PhysicalConstants:
    return PhysicalConstants(cfg.get("c", 1.0), cfg.get("hbar", 1.0), cfg.get("m", 1.0))


# ---------------------------------------------------------------------------
# outputs


class RunRecord:
    def __init__(self, command: str, args, cfg: Config | None = None):
        self.entries = {"command": command, "tool_version": tool_version(), "seed": args.seed}
        if cfg is not None:
            self.entries.update(cfg.echo())
        self.out = Path(args.out_dir)
        self.series: list = []
        self.dumps: dict = {}
        self.checks: dict = {}
        self.start = time.time()

    def absorb(self, outcome: scenarios.Outcome, prefix: str = ""):
        for k, v in outcome.metrics.items():
            if k != "runtime":
                self.entries[f"{prefix}{k}"] = v
        for k, v in outcome.checks.items():
            self.checks[f"{prefix}{k}"] = v
        self.series += [(t, f"{prefix}{name}", v) for t, name, v in outcome.series]
        for name, (values, lat) in outcome.fields.items():
            self.dumps[f"{prefix}{name}"] = field_to_bytes(values, lat)

    def finish(self, status: str) -> None:
        """Write fields, series and the manifest (last, atomically).

        The manifest holds only reproducible content so repeated runs
        compare bitwise; wall-clock times go to ``timing.txt``.
        """
        hashes = {}
        for name, blob in sorted(self.dumps.items()):
            atomic_write(self.out / "fields" / f"{name}.kgf", blob)
            hashes[f"field.{name}.sha1"] = content_hash(blob)
        csv = timeseries_csv(self.series)
        atomic_write(self.out / "timeseries.csv", csv)
        manifest = dict(self.entries)
        manifest.update(hashes)
        manifest["timeseries.sha1"] = content_hash(csv)
        for k, v in sorted(self.checks.items()):
            manifest[f"check.{k}"] = "PASS" if v else "FAIL"
        manifest["status"] = status
        atomic_write(self.out / "timing.txt",
                     manifest_text({"start_wall_time": _stamp(self.start),
                                    "end_wall_time": _stamp(time.time())}))
        atomic_write(self.out / "manifest.txt", manifest_text(manifest))


def _stamp(t: float) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _failure(record: RunRecord, exc: KGCError) -> int:
    record.entries["failure"] = type(exc).__name__
    for attr in ("site", "label", "t", "value", "tau", "stage", "congruence"):
        if getattr(exc, attr, None) is not None:
            record.entries[f"failure.{attr}"] = getattr(exc, attr)
    record.entries["failure.message"] = str(exc)
    record.finish("runtime-failure")
    print(f"runtime failure: {exc}", file=sys.stderr)
    return RUNTIME_FAILURE


def _verdict(record: RunRecord) -> int:
    ok = all(record.checks.values())
    record.finish("ok" if ok else "check-failed")
    for k, v in sorted(record.checks.items()):
        print(f"{k}: {'PASS' if v else 'FAIL'}")
    return OK if ok else CHECK_FAILED


# ---------------------------------------------------------------------------
# commands


def cmd_wave(args) -> int:
    cfg = Config.load(args.config)
    if cfg.raw("mode") != "wave":
        raise ConfigError("wave command needs `mode = wave`")
    k = constants_from(cfg)
    d = cfg.get("d", 1, int)
    N = cfg.get("n", 256, int)
    t_end = cfg.get("t_end", 1.0)
    length = cfg.get("length", 1.0)
    if "dt" in {key for s in cfg.values.values() for key in s}:
        cfl = cfg.get("dt") * k.c * N / length
    else:
        cfl = cfg.get("cfl", 0.25)
    profile = cfg.get("profile", "monotone", str)
    kernel = cfg.get("kernel", "multilinear", str)
    tol = cfg.get("tolerance", 1e-2)
    if d not in (1, 2, 3):
        raise ConfigError(f"d must be 1, 2 or 3, got {d}")
    record = RunRecord("wave", args, cfg)
    try:
        if profile == "monotone":
            if d != 1:
                raise ConfigError("the monotone d'Alembert profile is one-dimensional")
            out = scenarios.wave_dalembert(N, cfl, t_end, cfg.get("eps", 0.5), length, kernel, tol, k)
        elif profile == "drifting":
            out = scenarios.wave_drifting(d, N, t_end, cfl, cfg.get("amplitude", 1.0),
                                          cfg.get("eps", 0.02), kernel, tol, k)
        elif profile == "focusing":
            if d != 1:
                raise ConfigError("the focusing profile is one-dimensional")
            sim, state = scenarios.wave_focusing(N, cfg.get("b", 0.7), t_end=t_end, constants=k,
                                                 cfl=cfl)
            run(state, sim)
            out = scenarios.Outcome("wave-focusing", checks={"collapse_expected": False})
        else:
            raise ConfigError(f"unknown wave profile {profile!r}")
    except (JacobianCollapse, RegularWindowExceeded) as exc:
        return _failure(record, exc)
    record.absorb(out)
    return _verdict(record)


def cmd_kg(args) -> int:
    cfg = Config.load(args.config)
    if cfg.raw("mode") != "kg":
        raise ConfigError("kg command needs `mode = kg`")
    k = constants_from(cfg)
    kvec = cfg.get("k", (0.6,), tuple)
    if len(kvec) not in (1, 2, 3):
        raise ConfigError("k must have 1, 2 or 3 components")
    path = cfg.get("path", "both", str)
    if path not in ("material", "amplitude-first", "both"):
        raise ConfigError(f"path must be material, amplitude-first or both, got {path!r}")
    N = cfg.get("n", 256, int)
    window = cfg.get("window", 0.4)
    n_steps = cfg.get("n_steps", 100, int)
    kernel = cfg.get("kernel", "multilinear", str)
    if kernel not in ("nearest", "multilinear", "direct"):
        raise ConfigError(f"unknown reconstruction kernel {kernel!r}")
    record = RunRecord("kg", args, cfg)
    try:
        if path in ("amplitude-first", "both"):
            out = scenarios.kg_planewave_amplitude(kvec, cfg.get("amplitude_n", 32, int),
                                                   cfg.get("periods", 1.0),
                                                   cfg.get("steps_per_period", 500, int), k)
            record.absorb(out, "amplitude_first.")
            if cfg.get("clock", True, bool):
                record.absorb(scenarios.kg_clock(kvec, constants=k), "clock.")
        if path in ("material", "both"):
            record.absorb(scenarios.kg_planewave_material(kvec, N, window, n_steps, kernel, k),
                          "material.")
            if cfg.get("complex", False, bool):
                record.absorb(scenarios.kg_quadrature(kvec, N, window, n_steps, k), "complex.")
    except (JacobianCollapse, RegularWindowExceeded) as exc:
        return _failure(record, exc)
    return _verdict(record)


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return CONFIG_ERROR
    results = run_suite(args.suite)
    sys.stdout.write(summary_table(results))
    record = RunRecord(f"verify {args.suite}", args)
    for r in results:
        record.checks[f"{r.module}.{r.name}"] = r.ok
        record.entries[f"detail.{r.module}.{r.name}"] = r.detail
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"FAILED {r.module}/{r.name}: {r.detail}", file=sys.stderr)
    record.finish("ok" if not failed else "check-failed")
    return CHECK_FAILED if failed else OK


def cmd_planewave(args) -> int:
    """Closed-form table: t, q - a, T, tau for one label."""
    k = PhysicalConstants(args.c, args.hbar, args.m)
    pw = PlaneWaveParams.on_shell(tuple(args.k), k, args.phase)
    o = PlaneWaveOracle(pw)
    a = np.array(args.label, dtype=float).reshape(-1, 1) if args.label else np.full((pw.kvec.size, 1), 0.5)
    if a.shape[0] != pw.kvec.size:
        raise ConfigError("--label needs one coordinate per component of --k")
    t_end = args.t_end if args.t_end is not None else 2 * np.pi / pw.omega
    print(f"# omega = {pw.omega!r}, velocity = {tuple(float(v) for v in pw.velocity)}, "
          f"clock period = {2 * np.pi / pw.clock_frequency!r}")
    print("t, " + ", ".join(f"q_{i + 1}" for i in range(a.shape[0])) + ", T, tau")
    for t in map(float, np.linspace(0.0, t_end, args.rows)):
        q = o.trajectory(a, t)[:, 0]
        with np.errstate(divide="ignore"):
            T, tau = float(o.clock(a, t)[0]), float(o.tau(a, t)[0])
        print(f"{t!r}, " + ", ".join(repr(float(x)) for x in q) + f", {T!r}, {tau!r}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgc", description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", default="kgc-out", help="directory for manifests and dumps")
    p.add_argument("--threads", type=int, default=1, help="worker threads for block reductions")
    p.add_argument("--seed", type=int, default=0, help="recorded in manifests; no effect on results")
    sub = p.add_subparsers(dest="command", required=True)
    w = sub.add_parser("wave", help="wave-equation congruence run")
    w.add_argument("config")
    w.set_defaults(fn=cmd_wave)
    g = sub.add_parser("kg", help="Klein-Gordon congruence run")
    g.add_argument("config")
    g.set_defaults(fn=cmd_kg)
    v = sub.add_parser("verify", help="run an invariant suite")
    v.add_argument("suite")
    v.set_defaults(fn=cmd_verify)
    pw = sub.add_parser("planewave", help="print closed-form plane-wave tables")
    pw.add_argument("--k", type=float, nargs="+", default=[0.6])
    pw.add_argument("--m", type=float, default=1.0)
    pw.add_argument("--hbar", type=float, default=1.0)
    pw.add_argument("--c", type=float, default=1.0)
    pw.add_argument("--phase", type=float, default=0.0)
    pw.add_argument("--label", type=float, nargs="+")
    pw.add_argument("--t-end", type=float)
    pw.add_argument("--rows", type=int, default=11)
    pw.set_defaults(fn=cmd_planewave)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CONFIG_ERROR if exc.code else OK
    try:
        set_threads(args.threads)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
