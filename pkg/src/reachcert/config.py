"""Run configuration: JSON schema, validation, and object construction.

The configuration is a single JSON document with a `model` and `spec`
section plus optional `fvi`, `bounds`, `certify`, and `policy` sections.
Validation reports the offending JSON path; parse errors carry the line
number from the decoder.
"""

from __future__ import annotations

import importlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .func_approx import RbfClassConfig, lattice_centers, two_scale_centers
from .fvi import FviConfig
from .model import (BoxSet, MarkovProcess, ReachAvoidSpec, ThermalParams,
                    thermal_process, uniform_eta)

_TOP_LEVEL = {"model", "spec", "fvi", "bounds", "certify", "policy"}


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _require(section: dict, key: str, path: str, kind=None):
    if key not in section:
        if key == "seed":
            _fail(f"{path}.seed", "seed required for reproducibility")
        _fail(f"{path}.{key}", "missing required field")
    value = section[key]
    if kind is not None and not isinstance(value, kind):
        _fail(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}, "
                               f"got {type(value).__name__}")
    return value


def _positive_int(section: dict, key: str, path: str) -> int:
    value = _require(section, key, path, kind=int)
    if isinstance(value, bool) or value < 1:
        _fail(f"{path}.{key}", "expected a positive integer")
    return int(value)


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    for key in ("model", "spec"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required section '{key}'")
    return raw


@dataclass
class RunConfig:
    """Validated configuration with constructed model objects."""

    process: MarkovProcess
    spec: ReachAvoidSpec
    eta: object
    fvi: Optional[FviConfig]
    bounds_resolution: int
    certify: Optional[dict]
    policy: Optional[dict]
    raw: dict


def build_process(section: dict) -> MarkovProcess:
    kind = _require(section, "type", "model", kind=str)
    params = section.get("params", {})
    if kind == "thermal":
        try:
            tp = ThermalParams(
                x_a=float(params.get("x_a", 6.0)),
                b=tuple(params.get("b", (0.0375, 0.025))),
                a_ex=float(params.get("a_ex", 0.0625)),
                c=tuple(params.get("c", (0.65, 0.6))),
                nu=float(params.get("nu", 0.5)),
            )
        except (TypeError, ValueError) as exc:
            _fail("model.params", str(exc))
        return thermal_process(tp)
    if kind == "custom":
        target = _require(section, "factory", "model", kind=str)
        if ":" not in target:
            _fail("model.factory", "expected 'package.module:callable'")
        mod_name, func_name = target.split(":", 1)
        try:
            factory = getattr(importlib.import_module(mod_name), func_name)
        except (ImportError, AttributeError) as exc:
            _fail("model.factory", f"cannot import {target}: {exc}")
        process = factory(**params)
        if not isinstance(process, MarkovProcess):
            _fail("model.factory", "factory must return a MarkovProcess")
        return process
    _fail("model.type", f"unknown model type {kind!r} (expected 'thermal' or 'custom')")


def build_spec(section: dict) -> ReachAvoidSpec:
    def box(key):
        raw = _require(section, key, "spec", kind=list)
        try:
            lower, upper = np.asarray(raw[0], dtype=float), np.asarray(raw[1], dtype=float)
            return BoxSet(lower, upper)
        except Exception as exc:
            _fail(f"spec.{key}", f"expected [lower, upper] vectors: {exc}")

    safe, target = box("safe"), box("target")
    horizon = _positive_int(section, "horizon", "spec")
    x0 = _require(section, "initial_state", "spec", kind=list)
    try:
        return ReachAvoidSpec(safe=safe, target=target, horizon=horizon,
                              initial_state=np.asarray(x0, dtype=float))
    except Exception as exc:
        _fail("spec", str(exc))


def build_rbf(section: dict, spec: ReachAvoidSpec) -> RbfClassConfig:
    width = float(_require(section, "width", "fvi.rbf", kind=(int, float)))
    ridge = float(section.get("ridge", 1e-8))
    if "centers" in section:
        centers = np.asarray(section["centers"], dtype=float)
    else:
        n_basis = _positive_int(section, "n_basis", "fvi.rbf")
        layout = section.get("layout", "two_scale")
        if layout == "two_scale":
            centers = two_scale_centers(spec.safe, spec.target, n_basis)
        elif layout == "lattice":
            centers = lattice_centers(spec.safe, n_basis)
        else:
            _fail("fvi.rbf.layout", f"unknown layout {layout!r}")
    try:
        return RbfClassConfig(centers=centers, width=width, ridge=ridge)
    except ValueError as exc:
        _fail("fvi.rbf", str(exc))


def build_run_config(raw: dict) -> RunConfig:
    process = build_process(raw["model"])
    spec = build_spec(raw["spec"])
    eta = uniform_eta(spec.safe, spec.target)

    fvi_cfg = None
    if "fvi" in raw:
        section = raw["fvi"]
        rbf = build_rbf(_require(section, "rbf", "fvi", kind=dict), spec)
        fvi_cfg = FviConfig(
            n_base=_positive_int(section, "n_base", "fvi"),
            m_succ=_positive_int(section, "m_succ", "fvi"),
            m_init=_positive_int(section, "m_init", "fvi"),
            p=int(section.get("p", 2)),
            rbf=rbf, eta=eta,
            seed=_require(section, "seed", "fvi", kind=int),
        )

    bounds_resolution = 100
    if "bounds" in raw:
        bounds_resolution = _positive_int(raw["bounds"], "resolution", "bounds") \
            if "resolution" in raw["bounds"] else 100

    certify = None
    if "certify" in raw:
        section = raw["certify"]
        certify = {
            "n_base": _positive_int(section, "n_base", "certify"),
            "m_succ": _positive_int(section, "m_succ", "certify"),
            "seed": _require(section, "seed", "certify", kind=int),
            "eps": section.get("eps"),
            "delta0": section.get("delta0", 0.05),
        }
        if fvi_cfg is not None and certify["seed"] == fvi_cfg.seed:
            _fail("certify.seed", "must differ from fvi.seed "
                                  "(holdout independence discipline)")

    policy = None
    if "policy" in raw:
        section = raw["policy"]
        policy = {
            "evaluate_runs": _positive_int(section, "evaluate_runs", "policy")
            if "evaluate_runs" in section else 100000,
            "seed": section.get("seed"),
            "resolution": int(section.get("resolution", 180)),
        }

    return RunConfig(process=process, spec=spec, eta=eta, fvi=fvi_cfg,
                     bounds_resolution=bounds_resolution, certify=certify,
                     policy=policy, raw=raw)
