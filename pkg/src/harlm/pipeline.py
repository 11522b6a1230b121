"""Declarative multi-stage runs with incremental rebuilds.

Config schema (TOML)::

    [pipeline]
    state = "pipeline.state.json"   # optional; relative to the config file
    threads = 0                     # optional, forwarded as --threads

    [vars]                          # optional lists for expansion
    model = ["rf", "svm", "dnn"]

    [[stage]]
    name = "train-{model}"          # unique after expansion
    run = "train"                   # any harlm subcommand
    foreach = ["model"]             # one stage per combination of these vars
    [stage.args]                    # flags without the leading dashes
    model = "{model}"
    features = "work/features.csv"
    seed = 0
    out = "work/{model}.json"

Relative paths resolve against the config file's directory; ``$VAR`` and
``${VAR}`` are expanded from the environment.  In list-valued args, an
element mentioning a var that the stage does not bind is expanded over
every value of that var.  A stage depends on every stage whose ``out`` it
reads.  A stage is skipped when its output exists and the fingerprint of
(subcommand, args, input digests) matches the state file.
"""
from __future__ import annotations

import itertools
import logging
import os
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from harlm.io import atomic_write_text, canonical_json, fingerprint

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("harlm.pipeline")

# args that name files/directories each subcommand reads
STAGE_INPUTS = {
    "fixture": (),
    "ingest": ("root", "label_map"),
    "segment": ("in",),
    "features": ("in",),
    "train": ("features", "test_features", "split"),
    "eval": ("model", "features", "test_features", "split", "template"),
    "promptgen": ("features", "template"),
    "tokenbudget": ("windows",),
    "llm-classify": ("features", "template", "config", "centroids_from"),
    "qa": ("features", "template", "config", "centroids_from"),
    "analyze": ("in",),
    "report": ("in",),
}
# values of these keys are only paths when they end in .json
JSON_ONLY = ("split", "template")
PATH_KEYS = {k for keys in STAGE_INPUTS.values() for k in keys} | {"out", "descriptor_out"}
POSITIONAL = {"analyze": "kind"}


class PipelineError(Exception):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class Stage:
    name: str
    run: str
    args: dict[str, Any]
    inputs: list[Path]
    outputs: list[Path]

    def argv(self) -> list[str]:
        out = [self.run]
        pos = POSITIONAL.get(self.run)
        if pos:
            out.append(str(self.args[pos]))
        for k, v in self.args.items():
            if k == pos:
                continue
            flag = "--" + k.replace("_", "-")
            if isinstance(v, bool):
                if v:
                    out.append(flag)
            elif isinstance(v, list):
                out.append(flag)
                out.extend(str(x) for x in v)
            else:
                out.extend([flag, str(v)])
        return out


_VAR = re.compile(r"(?<!\$)\{(\w+)\}")  # {name}, but not ${ENV}


def _fields(text: str) -> set[str]:
    return set(_VAR.findall(text))


def _sub(text: str, binding: dict[str, str]) -> str:
    def rep(m):
        if m.group(1) not in binding:
            raise PipelineError(f"{text!r} uses {{{m.group(1)}}} which the stage does not bind via foreach")
        return binding[m.group(1)]

    return _VAR.sub(rep, text)


def _fmt(value, binding: dict[str, str]):
    return _sub(value, binding) if isinstance(value, str) else value


def _expand_list(items: list, binding: dict[str, str], vars_: dict[str, list]) -> list:
    out = []
    for item in items:
        if not isinstance(item, str):
            out.append(item)
            continue
        free = [v for v in vars_ if v in _fields(item) and v not in binding]
        for combo in itertools.product(*(vars_[v] for v in free)):
            out.append(_sub(item, {**binding, **dict(zip(free, map(str, combo)))}))
    return out


def _resolve_path(value: str, base: Path) -> Path:
    p = Path(os.path.expandvars(value)).expanduser()
    return Path(os.path.normpath(p if p.is_absolute() else base / p))


def _normalize_key(k: str) -> str:
    return k.replace("-", "_")


def load_config(path: str | Path) -> tuple[dict, list[Stage]]:
    path = Path(path)
    try:
        cfg = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise PipelineError(f"cannot read pipeline config {path}: {exc}") from None
    base = path.parent.resolve()
    vars_ = {k: [str(x) for x in v] for k, v in cfg.get("vars", {}).items()}
    raw_stages = cfg.get("stage", [])
    if not raw_stages:
        raise PipelineError("pipeline config has no [[stage]] entries")
    stages: list[Stage] = []
    for i, st in enumerate(raw_stages):
        if "run" not in st:
            raise PipelineError(f"stage #{i + 1} lacks 'run'")
        run = st["run"]
        if run not in STAGE_INPUTS:
            raise PipelineError(f"stage #{i + 1}: unknown subcommand {run!r}")
        loop = list(st.get("foreach", []))
        unknown = [v for v in loop if v not in vars_]
        if unknown:
            raise PipelineError(f"stage #{i + 1}: foreach names undefined vars {unknown}")
        for combo in itertools.product(*(vars_[v] for v in loop)):
            binding = dict(zip(loop, combo))
            name = _fmt(st.get("name", f"{run}-{i + 1}"), binding)
            args: dict[str, Any] = {}
            for k, v in st.get("args", {}).items():
                key = _normalize_key(k)
                v = _expand_list(v, binding, vars_) if isinstance(v, list) else _fmt(v, binding)
                args[key] = v
            inputs, outputs = [], []
            for key, v in list(args.items()):
                if key not in PATH_KEYS:
                    continue
                vals = v if isinstance(v, list) else [v]
                resolved = []
                for x in vals:
                    x = str(x)
                    if key in JSON_ONLY and not x.endswith(".json"):
                        resolved.append(x)
                        continue
                    if run == "train" and key == "model":
                        resolved.append(x)
                        continue
                    p = _resolve_path(x, base)
                    resolved.append(str(p))
                    (outputs if key in ("out", "descriptor_out") else inputs).append(p)
                args[key] = resolved if isinstance(v, list) else resolved[0]
            if "out" not in args:
                raise PipelineError(f"stage {name!r} has no 'out'")
            stages.append(Stage(name, run, args, inputs, outputs))
    names = [s.name for s in stages]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise PipelineError(f"duplicate stage names {sorted(dup)}")
    meta = dict(cfg.get("pipeline", {}))
    meta["state_path"] = _resolve_path(meta.get("state", f"{path.stem}.state.json"), base)
    return meta, stages


def plan(stages: list[Stage]) -> list[Stage]:
    """Topological order (declaration order among ready stages).

    Raises :class:`PipelineError` on a cycle or an input that is neither
    produced by a stage nor present on disk.
    """
    producer: dict[Path, str] = {}
    for s in stages:
        for o in s.outputs:
            if o in producer:
                raise PipelineError(f"{o} is written by both {producer[o]!r} and {s.name!r}")
            producer[o] = s.name
    deps: dict[str, set[str]] = {}
    for s in stages:
        d = set()
        for p in s.inputs:
            if p in producer:
                d.add(producer[p])
            elif not p.exists():
                raise PipelineError(f"stage {s.name!r}: input {p} is missing and no stage produces it")
        deps[s.name] = d
    order, done = [], set()
    pending = list(stages)
    while pending:
        ready = [s for s in pending if deps[s.name] <= done]
        if not ready:
            raise PipelineError("dependency cycle among stages " + ", ".join(s.name for s in pending))
        for s in ready:
            order.append(s)
            done.add(s.name)
        pending = [s for s in pending if s.name not in done]
    return order


def stage_fingerprint(stage: Stage) -> str:
    from harlm.cli import path_digest

    digests = {str(p): path_digest(p) for p in sorted(stage.inputs) if p.exists()}
    return fingerprint({"run": stage.run, "args": stage.args, "inputs": digests})


def _load_state(path: Path) -> dict:
    import json

    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError:
        log.warning("ignoring unreadable state file %s", path)
        return {}


def run_pipeline(config_path: str | Path, force: bool = False, threads: int | None = None) -> int:
    """Run every stage that is out of date.  Returns an exit code."""
    from harlm.cli import run

    try:
        meta, stages = load_config(config_path)
        order = plan(stages)
    except PipelineError as exc:
        print(f"harlm pipeline: error: {exc}", file=sys.stderr)
        return 2
    state_path: Path = meta["state_path"]
    state = {} if force else _load_state(state_path)
    n_threads = int(meta.get("threads", 0) if threads in (None, 0) else threads)
    for s in order:
        fp = stage_fingerprint(s)
        if state.get(s.name) == fp and all(o.exists() for o in s.outputs):
            print(f"[skip] {s.name}", file=sys.stderr)
            continue
        t0 = time.perf_counter()
        code = run(["--threads", str(n_threads), *s.argv()])
        if code != 0:
            print(f"[fail] {s.name} (exit {code})", file=sys.stderr)
            return code
        state[s.name] = fp
        atomic_write_text(state_path, canonical_json(state) + "\n")
        print(f"[run]  {s.name} ({time.perf_counter() - t0:.2f}s)", file=sys.stderr)
    return 0
