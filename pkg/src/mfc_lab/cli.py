"""Command line entry point: ``mfc-lab run | list | compare``.

Exit status is 0 on success, 2 on a configuration error and 3 when a run
diverged (its trace is still written).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from mfc_lab import kernels
from mfc_lab.controller import canonical_kind
from mfc_lab.errors import ConfigError, check_keys
from mfc_lab.metrics import compute_metrics
from mfc_lab.plant import builtin_bank
from mfc_lab.scenario import (
    COLUMNS, SCENARIO_NAMES, ScenarioConfig, builtin_scenario, default_controller,
    run_closed_loop,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

OUT_ENV = "MFC_LAB_OUT"
DEFAULT_OUT = "mfc_lab_out"

_BUILTIN_KEYS = ("scenario", "controller", "ts", "horizon", "actuator_limit")


@dataclass
class RunManifest:
    config_path: str | None
    output_dir: str
    files: list = field(default_factory=list)
    config_digest: str = ""
    config: dict = field(default_factory=dict)
    diverged: bool = False
    kernels: str = ""

    def to_dict(self):
        return dataclasses.asdict(self)


def parse_config(text):
    """Parse a JSON config document into a validated :class:`ScenarioConfig`.

    Either ``{"scenario": name, ...}`` for a builtin scenario (optionally with
    ``controller``, ``ts``, ``horizon``, ``actuator_limit``) or a full document
    in the shape produced by ``ScenarioConfig.to_dict``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    if "scenario" not in doc:
        return ScenarioConfig.from_dict(doc)
    check_keys(doc, _BUILTIN_KEYS, "config")
    if not isinstance(doc["scenario"], str):
        raise ConfigError("scenario: expected a name")
    ctrl = doc.get("controller", "istar_pi")
    if not isinstance(ctrl, (str, dict)):
        raise ConfigError("controller: expected a kind name or an object")
    cfg = builtin_scenario(doc["scenario"], ctrl)
    overrides = {}
    for key in ("ts", "horizon", "actuator_limit"):
        if key in doc:
            v = doc[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{key}: expected a number, got {v!r}")
            overrides[key] = float(v)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def load_config(args):
    """Scenario config from ``--config`` or ``--scenario`` plus flag overrides."""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config!r} ({exc.strerror})") from None
        cfg = parse_config(text)
    elif args.scenario:
        cfg = builtin_scenario(args.scenario, getattr(args, "controller", None) or "istar_pi")
    else:
        raise ConfigError("one of --config or --scenario is required")
    if args.config and getattr(args, "controller", None):
        cfg = dataclasses.replace(cfg, controller=default_controller(args.controller, cfg.ts))
    overrides = {k: getattr(args, k) for k in ("ts", "horizon") if getattr(args, k) is not None}
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def write_trace_csv(trace, path):
    """Trace as CSV with a fixed header, ``repr`` floats and ``\\n`` line ends."""
    cols = [getattr(trace, c) for c in COLUMNS]
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(len(trace)):
            row = [repr(float(c[i])) for c in cols]
            row[COLUMNS.index("p")] = str(int(trace.p[i]))
            w.writerow(row)


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def plot_trace(trace, path):
    """Static SVG of y, y* and u against t with schedule events marked."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "mfc-lab"}):
        fig, (ax_y, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
        ax_y.plot(trace.t, trace.y_ref, "k--", lw=1, label="y*")
        ax_y.plot(trace.t, trace.y, lw=1.2, label="y")
        ax_u.plot(trace.t, trace.u, color="tab:red", lw=1, label="u")
        for te in trace.config.schedule.switch_times():
            for ax in (ax_y, ax_u):
                ax.axvline(te, color="grey", ls=":", lw=0.8)
        ax_y.set_ylabel("output")
        ax_u.set_ylabel("input")
        ax_u.set_xlabel("t [s]")
        ax_y.legend(loc="best")
        title = f"{trace.config.name} / {trace.config.controller['kind']}"
        if trace.diverged:
            title += f" (diverged at {trace.diverged_at:.4g} s)"
        ax_y.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def output_dir(args, name):
    base = args.out or os.environ.get(OUT_ENV) or os.path.join(DEFAULT_OUT, name)
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(args):
    cfg = load_config(args)
    out = output_dir(args, cfg.name)
    trace = run_closed_loop(cfg)
    report = compute_metrics(trace)
    files = {"trace": "trace.csv", "metrics": "metrics.json", "plot": "plot.svg"}
    write_trace_csv(trace, out / files["trace"])
    write_json(report.to_dict(), out / files["metrics"])
    if not args.no_plot:
        plot_trace(trace, out / files["plot"])
    else:
        del files["plot"]
    manifest = RunManifest(
        config_path=args.config,
        output_dir=str(out),
        files=sorted(files.values()),
        config_digest=cfg.digest(),
        config=cfg.to_dict(),
        diverged=trace.diverged,
        kernels=kernels.BACKEND,
    )
    write_json(manifest.to_dict(), out / "manifest.json")
    status = "diverged" if trace.diverged else "ok"
    print(f"{cfg.name} [{cfg.controller['kind']}] {status}: {len(trace)} samples -> {out}")
    return manifest


def cmd_list(args):
    bank = builtin_bank()
    print("bank:")
    for i, s in enumerate(bank):
        print(f"  {i:2d} {s.label:4s} {s.kind:14s} {s.transfer_function}")
        print(f"       {s.signature}")
    print("scenarios:")
    for name in SCENARIO_NAMES:
        cfg = builtin_scenario(name)
        print(f"  {name:7s} ts={cfg.ts:g} horizon={cfg.horizon:g}  {cfg.description}")


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    return f"{v:.4g}"


def cmd_compare(args):
    kinds = [k.strip() for k in (args.controllers or "").split(",") if k.strip()]
    if len(kinds) < 2:
        raise ConfigError("--controllers needs at least two comma-separated kinds")
    args.controller = None
    base = load_config(args)
    rows = []
    for k in kinds:
        cfg = dataclasses.replace(base, controller=default_controller(k, base.ts))
        report = compute_metrics(run_closed_loop(cfg))
        rows.append({"controller": canonical_kind(k), **report.to_dict()})
    head = ("controller", "ise", "iae", "overshoot_pct", "undershoot_pct", "settling_time", "diverged")
    print(f"scenario {base.name}")
    print(" ".join(f"{h:>14s}" for h in head))
    for r in rows:
        print(f"{r['controller']:>14s} " + " ".join(f"{_fmt(r[h]):>14s}" for h in head[1:]))
    if args.out or os.environ.get(OUT_ENV):
        write_json({"scenario": base.name, "config_digest": base.digest(), "rows": rows},
                   output_dir(args, base.name) / "compare.json")
    return rows


def build_parser():
    ap = argparse.ArgumentParser(prog="mfc-lab", description="Model-free control experiments on switching plants")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", choices=SCENARIO_NAMES, help="builtin scenario name")
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT}/<name>)")
        p.add_argument("--ts", type=float, help="override the sample time [s]")
        p.add_argument("--horizon", type=float, help="override the horizon [s]")

    run = sub.add_parser("run", help="simulate one scenario and write trace, metrics and plot")
    common(run)
    run.add_argument("--controller", help="classic_pi | ipi | istar_pi (tuned defaults)")
    run.add_argument("--no-plot", action="store_true", help="skip the SVG plot")
    run.set_defaults(func=cmd_run)

    ls = sub.add_parser("list", help="print the builtin bank and scenarios")
    ls.set_defaults(func=cmd_list)

    cmp_ = sub.add_parser("compare", help="metrics table for several controllers on one scenario")
    common(cmp_)
    cmp_.add_argument("--controllers", default="classic_pi,ipi,istar_pi", help="comma-separated kinds")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except ConfigError as exc:
        print(f"mfc-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(result, RunManifest) and result.diverged:
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
