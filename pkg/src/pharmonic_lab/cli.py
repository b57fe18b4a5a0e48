"""pharmonic-lab: run scenario pipelines and list them."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import jsonschema

from .scenarios import SCENARIOS

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_num = {"type": "number"}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": sorted(SCENARIOS)},
        "seed": {"type": "integer", "minimum": 0},
        "p": {**_num, "minimum": 2.0, "maximum": 3.0},
        "p_list": {"type": "array", "minItems": 1, "items": {**_num, "minimum": 2.0, "maximum": 3.0}},
        "m": {"type": "integer", "minimum": 2, "maximum": 6},
        "h": {**_num, "exclusiveMinimum": 0.0, "maximum": 0.2},
        "delta": {**_num, "exclusiveMinimum": 0.0, "exclusiveMaximum": 1.0},
        "deltas": {"type": "array", "minItems": 2,
                   "items": {**_num, "exclusiveMinimum": 0.0, "exclusiveMaximum": 1.0}},
        "K": {**_num, "exclusiveMinimum": 0.0, "maximum": 5.0},
        "C": {**_num, "exclusiveMinimum": 0.0},
        "sigma": {**_num, "exclusiveMinimum": 0.0},
        "M": {"anyOf": [{"type": "null"}, {**_num, "minimum": 1.0}]},
        "k_max": {"type": "integer", "minimum": 1, "maximum": 500},
        "tol": {**_num, "exclusiveMinimum": 0.0, "exclusiveMaximum": 1.0},
        "energy": {**_num, "exclusiveMinimum": 0.0, "maximum": 1.0},
        "bc": {"enum": ["equator", "constant"]},
        "n_pairs": {"type": "integer", "minimum": 1, "maximum": 1000},
        "n_cases": {"type": "integer", "minimum": 1, "maximum": 1000},
        "n_theta": {"type": "integer", "minimum": 8, "maximum": 1024},
        "out": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def _validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(x) for x in exc.absolute_path) or "config"
        raise ConfigError(f"{where}: {exc.message}") from None


def load_config(path: str | None, overrides: dict) -> tuple[dict, Path]:
    """File values, then flag overrides, then scenario defaults; validated before defaults."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be an object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    _validate(raw)
    if "scenario" not in raw:
        raise ConfigError("scenario: required (in the config or via --scenario)")
    spec = SCENARIOS[raw["scenario"]]
    if spec.seeded and "seed" not in raw:
        raise ConfigError(f"seed: required for the randomized scenario {spec.name}")
    out = Path(raw.pop("out", f"runs/{spec.name}"))
    unused = sorted(set(raw) - set(spec.defaults) - {"scenario", "seed"})
    if unused:
        raise ConfigError(f"{unused[0]}: not a parameter of scenario {spec.name}")
    cfg = {**spec.defaults, **raw}
    cfg.setdefault("seed", 0)
    return cfg, out


def run_experiment(cfg: dict, out: Path) -> int:
    from .report import write_outputs
    spec = SCENARIOS[cfg["scenario"]]
    start = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    result = spec.run(cfg)
    meta = {"started": start.isoformat(), "finished": datetime.now(timezone.utc).isoformat(),
            "seconds": round(time.perf_counter() - t0, 3), "argv": sys.argv[1:]}
    path = write_outputs(out, result, cfg, meta)
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} {c.op} {c.threshold:.6g}")
    print(f"report: {path}")
    return EXIT_OK if result.passed else EXIT_FAIL


def list_scenarios(as_json: bool = False) -> str:
    items = [{"name": s.name, "summary": s.summary, "seeded": s.seeded, "parameters": s.defaults,
              "checks": list(s.tags)} for s in SCENARIOS.values()]
    if as_json:
        return json.dumps(items, indent=2)
    lines = []
    for it in items:
        params = ", ".join(f"{k}={v}" for k, v in it["parameters"].items())
        lines.append(f"{it['name']}: {it['summary']}\n  parameters: {params}{' (needs seed)' if it['seeded'] else ''}"
                     f"\n  checks: {', '.join(it['checks'])}")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pharmonic-lab")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--config")
    run.add_argument("--scenario")
    run.add_argument("--p", type=float)
    run.add_argument("--h", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--bc")
    run.add_argument("--delta", type=float)
    run.add_argument("--out")
    ls = sub.add_parser("list", help="list scenarios")
    ls.add_argument("--json", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print(list_scenarios(args.json))
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("scenario", "p", "h", "seed", "bc", "delta", "out")}
    try:
        cfg, out = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
