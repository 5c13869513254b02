"""Command-line front end.

Every subcommand takes the same configuration keys, from a ``key = value``
file (``--config``) and/or flags; flags win.  ``--seed`` has no default.

Exit status: 0 ok, 1 configuration error, 2 acceptance check failed,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from . import oracle
from .environment import ConditionedAt, Explicit, Stationary
from .errors import ConfigError, InvariantViolation, UnsupportedInstance
from .sim import Cover, Hit, Regenerations, SimConfig, TimeLimit, run_replication

RUN_COLUMNS = ["replication", "seed", "n", "d", "p", "mu", "mode", "ca", "stop", "elapsed",
               "n_events", "n_jumps"]
REGEN_COLUMNS = ["replication", "k", "tau_tilde", "x_vertex", "range_size"]

# key -> (type, default); None marks a required key
KEYS = {
    "seed": (int, None),
    "d": (int, 1), "n": (int, 5), "p": (float, None), "mu": (float, 1.0), "ca": (float, 1.0),
    "mode": (str, "lazy"), "law": (str, "stationary"), "start": (int, 0),
    "stop": (str, "cover"), "reps": (int, 1000), "workers": (int, 1),
    "format": (str, "csv"), "out": (str, "-"), "summary": (str, ""), "figures": (str, ""),
    "regen_log": (str, ""), "debug": (bool, False),
    "ns": (str, ""), "mus": (str, ""), "ps": (str, ""), "normalizer": (str, ""),
    "max_band": (float, 0.0), "max_mu_ratio": (float, 0.0),
    "K": (int, 100), "kind": (str, "hit"), "x": (int, 0), "y": (int, 1), "init": (str, "stationary"),
    "times": (str, "0,1,5,10,20,50,100"), "T": (float, 20.0), "mode_a": (str, "lazy"),
    "mode_b": (str, "eager"), "threshold": (float, 0.02), "input": (str, ""),
    "reps_cover": (int, 500), "reps_hit": (int, 500), "lower": (bool, True),
}

SUBCOMMANDS = {
    "run": "run replications of one configuration",
    "sweep": "run a grid of n, mu and p values",
    "regen": "regeneration statistics",
    "oracle": "exact values on small cycles",
    "validate": "compare the walker law under two environment modes",
    "fit": "log-log fit and band ratio from a sweep CSV",
    "matthews": "cover time against hit proxy times a harmonic number",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message.replace("\n", " "), "argv")


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _conv(key, raw):
    typ = KEYS[key][0]
    try:
        return _bool(raw) if typ is bool else typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}", key) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dynperc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dynperc {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, helptext in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=helptext, argument_default=argparse.SUPPRESS)
        if name == "oracle":
            sp.add_argument("kind", choices=["hit", "cover", "tv"])
        sp.add_argument("--config", metavar="FILE")
        for key in KEYS:
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, metavar=key.upper())
    return parser


def load_config(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'", "config")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}", key)
        if not value:
            raise ConfigError(f"{path}:{lineno}: empty value for {key!r}", key)
        out[key] = _conv(key, value)
    return out


def effective_config(args: argparse.Namespace) -> dict:
    given = {k: v for k, v in vars(args).items() if k in KEYS}
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    cfg.update({k: _conv(k, v) for k, v in given.items()})
    if "seed" not in cfg:
        raise ConfigError("seed is required (--seed or 'seed = ...')", "seed")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer", "seed")
    if "p" not in cfg:
        cfg["p"] = ex.DEFAULT_P.get(cfg.get("d", KEYS["d"][1]), 0.3)
    for key, (_, default) in KEYS.items():
        cfg.setdefault(key, default)
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg['format']!r}", "format")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1", "workers")
    if args.command == "oracle":
        cfg["kind"] = args.kind
    return cfg


# -- parsing helpers -------------------------------------------------------------


def parse_law(text: str, start: int, torus):
    s = text.strip().lower()
    if s == "stationary":
        return Stationary()
    if s == "conditioned":
        return ConditionedAt(start)
    if s.startswith("conditioned:"):
        return ConditionedAt(_int(s.split(":", 1)[1], "law"))
    if s == "closed":
        return Explicit.all_closed(torus)
    if s == "open":
        return Explicit.all_open(torus)
    if s.startswith("hex:"):
        return Explicit.from_hex(torus, text.split(":", 1)[1].strip())
    raise ConfigError(f"unknown law {text!r}", "law")


def parse_stop(text: str, torus, start: int):
    s = text.strip().lower()
    if s == "cover":
        return Cover()
    if s == "antipode":
        return Hit(torus.antipode(start))
    kind, _, arg = s.partition(":")
    if kind == "hit" and arg:
        return Hit(_int(arg, "stop"))
    if kind == "time" and arg:
        try:
            return TimeLimit(float(arg))
        except ValueError:
            raise ConfigError(f"bad time limit {arg!r}", "stop") from None
    if kind == "regen" and arg:
        return Regenerations(_int(arg, "stop"))
    raise ConfigError(f"unknown stop {text!r}", "stop")


def _int(s, param):
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"{param}: expected an integer, got {s!r}", param) from None


def _list(s, typ, param):
    try:
        return [typ(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{param}: cannot parse list {s!r}", param) from None


def sim_config(cfg: dict, **over):
    c = {**cfg, **over}
    from .lattice import Torus
    torus = Torus(c["d"], c["n"])
    law = parse_law(c["law"], c["start"], torus)
    stop = parse_stop(c["stop"], torus, c["start"])
    regen = isinstance(stop, Regenerations)
    return SimConfig(d=c["d"], n=c["n"], p=c["p"], mu=c["mu"], ca=c["ca"], mode=c["mode"],
                     law=law, start=c["start"], seed=c["seed"], regen_tracking=regen,
                     debug=c["debug"]), stop


# -- output -----------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".9g")
    return str(x)


def header_lines(cfg: dict, command: str) -> list[str]:
    lines = [f"# dynperc {__version__} {command}"]
    for k in sorted(cfg):
        lines.append(f"# {k} = {cfg[k]}")
    return lines


def _round(obj):
    if isinstance(obj, float):
        return float(format(obj, ".9g")) if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item())
    return obj


def render_csv(cfg, command, columns, rows) -> str:
    buf = io.StringIO()
    buf.write("\n".join(header_lines(cfg, command)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def render_json(cfg, command, payload) -> str:
    doc = {"header": {"version": f"dynperc {__version__}", "command": command,
                      "config": dict(sorted(cfg.items()))}}
    doc.update(payload)
    return json.dumps(_round(doc), indent=2, sort_keys=False) + "\n"


def write_text(path: str, text: str):
    if path in ("", "-"):
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _summary_path(cfg):
    if cfg["summary"]:
        return cfg["summary"]
    if cfg["out"] not in ("", "-"):
        out = Path(cfg["out"])
        return str(out.with_name(out.stem + ".summary.json"))
    return ""


def _figure(cfg, name):
    if not cfg["figures"]:
        return None
    return str(Path(cfg["figures"]) / name)


def run_row(rep, seed, config, stop, elapsed, events, jumps):
    return [rep, seed, config.n, config.d, config.p, config.mu, config.mode, config.ca, str(stop),
            float(elapsed), int(events), int(jumps)]


# -- subcommands ----------------------------------------------------------------------


def cmd_run(cfg):
    config, stop = sim_config(cfg)
    if cfg["regen_log"] and not isinstance(stop, Regenerations):
        config = config.with_(regen_tracking=True)
    rows, regen_rows = [], []
    if cfg["regen_log"]:
        for i in range(cfg["reps"]):
            res = run_replication(config, stop, ex.replication_rng(config.seed, i))
            rows.append(run_row(i, ex.replication_seed(config.seed, i), config, stop,
                                res.elapsed, res.n_events, res.n_jumps))
            ranges = list(res.regen_range) + [-1]
            for k, (t, x) in enumerate(zip(res.regen_t, res.regen_x)):
                r = ranges[k] if ranges[k] >= 0 else ""
                regen_rows.append([i, k, float(t), int(x), r])
        samples = np.array([r[9] for r in rows])
        est = ex.EstimateRecord.from_samples(str(stop), samples, ex.config_params(config, stop))
        write_text(cfg["regen_log"], render_csv(cfg, "run", REGEN_COLUMNS, regen_rows))
    else:
        mc = ex.run_mc(config, stop, cfg["reps"], cfg["workers"])
        est = mc.estimate
        for i in range(cfg["reps"]):
            rows.append(run_row(i, mc.seeds[i], config, stop, mc.samples[i], mc.n_events[i],
                                mc.n_jumps[i]))
    if cfg["format"] == "csv":
        write_text(cfg["out"], render_csv(cfg, "run", RUN_COLUMNS, rows))
    else:
        write_text(cfg["out"], render_json(cfg, "run", {
            "estimate": est.to_dict(), "rows": [dict(zip(RUN_COLUMNS, r)) for r in rows]}))
    return 0


def cmd_sweep(cfg):
    ns = _list(cfg["ns"], int, "ns") or [cfg["n"]]
    mus = _list(cfg["mus"], float, "mus") or [cfg["mu"]]
    ps = _list(cfg["ps"], float, "ps") or [cfg["p"]]
    rows, cells = [], []
    for idx, (p, mu, n) in enumerate(itertools.product(ps, mus, ns)):
        config, stop = sim_config(cfg, n=n, mu=mu, p=p)
        config = config.with_(seed=ex.derive_seed(cfg["seed"], idx))
        mc = ex.run_mc(config, stop, cfg["reps"], cfg["workers"])
        cell = f"cell{idx:03d}"
        for i in range(cfg["reps"]):
            rows.append([cell] + run_row(i, mc.seeds[i], config, stop, mc.samples[i],
                                         mc.n_events[i], mc.n_jumps[i]))
        cells.append({"cell": cell, "n": n, "mu": mu, "p": p, "estimate": mc.estimate})
    summary = _sweep_summary(cfg, cells)
    out_text = (render_csv(cfg, "sweep", ["cell"] + RUN_COLUMNS, rows) if cfg["format"] == "csv"
                else render_json(cfg, "sweep", {"rows": [dict(zip(["cell"] + RUN_COLUMNS, r))
                                                         for r in rows]}))
    write_text(cfg["out"], out_text)
    spath = _summary_path(cfg)
    text = render_json(cfg, "sweep", summary)
    if spath:
        write_text(spath, text)
    return 0 if summary["passed"] else 2


def _group_summary(cfg, groups, fig_prefix):
    """Fits, bands and mu-ratios for ``{(p, mu): [(n, EstimateRecord)]}``."""
    fits, bands, flags = [], [], []
    d = cfg["d"]
    for (p, mu), series in sorted(groups.items()):
        ns = sorted({n for n, _ in series})
        if len(ns) >= 3:
            fit = ex.fit_loglog([(n, r.mean) for n, r in series])
            fits.append({"p": p, "mu": mu, **fit.to_dict()})
            path = _figure(cfg, f"{fig_prefix}_scaling_p{p:g}_mu{mu:g}.png")
            if path:
                from .plotting import plot_scaling
                plot_scaling([n for n, _ in series], [r.mean for _, r in series],
                             [r.stderr for _, r in series], fit, f"d={d} p={p:g} mu={mu:g}", path)
            if cfg["normalizer"]:
                band = ex.scaling_band(series, cfg["normalizer"], d=d, mu=mu)
                ok = not cfg["max_band"] or band.ratio <= cfg["max_band"]
                bands.append({"p": p, "mu": mu, **band.to_dict(), "passed": ok})
                flags.append(ok)
                path = _figure(cfg, f"{fig_prefix}_band_p{p:g}_mu{mu:g}.png")
                if path:
                    from .plotting import plot_band
                    plot_band(band, f"d={d} p={p:g} mu={mu:g}", path)
    mu_ratios = []
    by_pn = {}
    for (p, mu), series in groups.items():
        for n, r in series:
            by_pn.setdefault((p, n), {})[mu] = r
    for (p, n), recs in sorted(by_pn.items()):
        if len(recs) >= 2:
            ratio = ex.mu_scaling(recs)
            ok = not cfg["max_mu_ratio"] or ratio <= cfg["max_mu_ratio"]
            mu_ratios.append({"p": p, "n": n, "mus": sorted(recs), "ratio": ratio, "passed": ok})
            flags.append(ok)
    return fits, bands, mu_ratios, all(flags)


def _sweep_summary(cfg, cells):
    groups = {}
    for c in cells:
        groups.setdefault((c["p"], c["mu"]), []).append((c["n"], c["estimate"]))
    fits, bands, mu_ratios, ok = _group_summary(cfg, groups, "sweep")
    return {"cells": [{"cell": c["cell"], "n": c["n"], "mu": c["mu"], "p": c["p"],
                       "estimate": c["estimate"].to_dict()} for c in cells],
            "fits": fits, "bands": bands, "mu_ratios": mu_ratios, "passed": ok}


def cmd_fit(cfg):
    if not cfg["input"]:
        raise ConfigError("fit needs --input (a sweep or run CSV)", "input")
    try:
        text = Path(cfg["input"]).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc.strerror}", "input") from None
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = {"n", "d", "p", "mu", "elapsed"} - set(reader.fieldnames or [])
    if missing:
        raise ConfigError(f"input lacks columns {sorted(missing)}", "input")
    samples = {}
    dims = set()
    for row in reader:
        dims.add(int(row["d"]))
        samples.setdefault((float(row["p"]), float(row["mu"]), int(row["n"])), []).append(
            float(row["elapsed"]))
    if len(dims) != 1:
        raise ConfigError("input mixes dimensions", "d")
    cfg = {**cfg, "d": dims.pop()}
    groups = {}
    for (p, mu, n), xs in sorted(samples.items()):
        rec = ex.EstimateRecord.from_samples(f"n={n}", xs, {"d": cfg["d"], "p": p, "mu": mu})
        groups.setdefault((p, mu), []).append((n, rec))
    fits, bands, mu_ratios, ok = _group_summary(cfg, groups, "fit")
    if not fits:
        raise ConfigError("fit needs at least 3 distinct n in one (p, mu) group", "n")
    write_text(cfg["out"], render_json(cfg, "fit", {
        "fits": fits, "bands": bands, "mu_ratios": mu_ratios, "passed": ok}))
    return 0 if ok else 2


def cmd_regen(cfg):
    config, _ = sim_config({**cfg, "stop": "cover"})
    config = config.with_(law=ConditionedAt(config.start), regen_tracking=True)
    st, logs = ex.regen_statistics(config, cfg["K"], cfg["reps"], cfg["workers"], keep_logs=True)
    rows = []
    for i, (t, x, ranges) in enumerate(logs):
        for k in range(len(t)):
            rows.append([i, k, float(t[k]), int(x[k]), int(ranges[k]) if k < len(ranges) else ""])
    write_text(cfg["out"], render_csv(cfg, "regen", REGEN_COLUMNS, rows)
               if cfg["format"] == "csv" else
               render_json(cfg, "regen", {"rows": [dict(zip(REGEN_COLUMNS, r)) for r in rows]}))
    spath = _summary_path(cfg)
    if spath:
        write_text(spath, render_json(cfg, "regen", {"stats": st.to_dict()}))
    if cfg["figures"]:
        from .plotting import plot_histogram, plot_survival
        if st.tail is not None:
            plot_survival(st.tail, f"n={config.n} mu={config.mu:g}", _figure(cfg, "survival.png"))
        for k, h in st.histograms.items():
            plot_histogram(h, f"position at k={k}", _figure(cfg, f"position_k{k}.png"))
    return 0


def cmd_oracle(cfg):
    if cfg["d"] != 1:
        raise UnsupportedInstance("exact chain supports d=1 only")
    from .lattice import Torus
    torus = Torus(1, cfg["n"])
    law = parse_law(cfg["init"], cfg["x"], torus)
    if cfg["kind"] == "hit":
        res = oracle.exact_hitting(cfg["n"], cfg["p"], cfg["mu"], cfg["x"], cfg["y"], law,
                                   full=True)
        payload = res.to_dict()
    elif cfg["kind"] == "cover":
        payload = oracle.exact_cover(cfg["n"], cfg["p"], cfg["mu"], cfg["x"], law,
                                     full=True).to_dict()
    else:
        times = _list(cfg["times"], float, "times")
        tv = oracle.exact_tv_curve(cfg["n"], cfg["p"], cfg["mu"], cfg["x"], law, times)
        chain_states = cfg["n"] * 2 ** cfg["n"]
        payload = {"instance": {"kind": "tv", "d": 1, "n": cfg["n"], "p": cfg["p"],
                                "mu": cfg["mu"], "x": cfg["x"], "init": cfg["init"]},
                   "method": "uniformization", "value": tv, "times": times,
                   "residual": oracle.TAIL, "states": chain_states}
        path = _figure(cfg, "tv.png")
        if path:
            from .plotting import plot_tv
            plot_tv(times, tv, f"n={cfg['n']} p={cfg['p']:g} mu={cfg['mu']:g}", path)
    write_text(cfg["out"], render_json(cfg, "oracle", payload))
    return 0


def cmd_validate(cfg):
    config, _ = sim_config({**cfg, "stop": "cover"})
    rep = ex.validate_modes(config, cfg["T"], cfg["reps"], cfg["mode_a"], cfg["mode_b"],
                            cfg["threshold"], cfg["workers"])
    write_text(cfg["out"], render_json(cfg, "validate", rep.to_dict()))
    return 0 if rep.passed else 2


def cmd_matthews(cfg):
    config, _ = sim_config({**cfg, "stop": "cover"})
    rep = ex.matthews_report(config, cfg["reps_cover"], cfg["reps_hit"], cfg["workers"],
                             lower=cfg["lower"])
    write_text(cfg["out"], render_json(cfg, "matthews", rep.to_dict()))
    return 0 if rep.passed else 2


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "regen": cmd_regen, "oracle": cmd_oracle,
            "validate": cmd_validate, "fit": cmd_fit, "matthews": cmd_matthews}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise ConfigError("a subcommand is required: " + ", ".join(SUBCOMMANDS), "command")
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, UnsupportedInstance) as exc:
        param = getattr(exc, "param", None)
        prefix = f"error [{param}]" if param else "error"
        print(f"{prefix}: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [out]: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
