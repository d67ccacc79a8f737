"""JSON scenario files and report envelopes."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from .linalg import SolverConfig
from .lqr import ControlSystem
from .models import (ChannelModel, DiagonalChannel, Scenario, canonicalize_source,
                     diagonalize_channel)
from .simulation import SimulationConfig

TOP_KEYS = {"source", "channel", "p", "control", "simulation", "solver"}
SOURCE_KEYS = {"A", "Q"}
CHANNEL_KEYS = {"H", "R", "gains"}
CONTROL_KEYS = {"B", "C_cost", "E_cost", "allow_singular_E"}
SIM_KEYS = {"T", "burn_in", "trials", "seed"}
SOLVER_KEYS = {"tolerance", "max_iterations", "divergence_trace_bound"}


class ScenarioFileError(ValueError):
    pass


@dataclass
class LoadedScenario:
    scenario: Scenario | None
    channel: DiagonalChannel
    p: float
    raw_A: np.ndarray
    transform: np.ndarray
    control: ControlSystem | None
    sim: SimulationConfig
    solver: SolverConfig
    digest: str
    notes: list


def digest_bytes(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ScenarioFileError(f"{where}: expected an object")
    extra = set(block) - allowed
    if extra:
        raise ScenarioFileError(f"{where}: unknown key(s) {sorted(extra)}")


def parse_matrix(v, where, size=None):
    """Nested arrays, {"diag": [...]}, or a bare number (1x1)."""
    if isinstance(v, dict):
        _keys(v, {"diag"}, where)
        if "diag" not in v:
            raise ScenarioFileError(f"{where}: diagonal shorthand needs 'diag'")
        M = np.diag(np.asarray(v["diag"], dtype=float))
    elif isinstance(v, (int, float)) and not isinstance(v, bool):
        M = np.array([[float(v)]])
    else:
        try:
            M = np.asarray(v, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ScenarioFileError(f"{where}: not a numeric matrix ({exc})") from None
        if M.ndim == 1:
            M = M[None, :]
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ScenarioFileError(f"{where}: expected a finite 2-D matrix")
    if size is not None and M.shape != size:
        raise ScenarioFileError(f"{where}: expected shape {size}, got {M.shape}")
    return M


def parse_scenario(data: bytes, need_scenario=True) -> LoadedScenario:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _keys(doc, TOP_KEYS, "scenario")
    for req in ("source", "channel", "p"):
        if req not in doc:
            raise ScenarioFileError(f"scenario: missing '{req}'")
    src = doc["source"]
    _keys(src, SOURCE_KEYS, "source")
    if "A" not in src:
        raise ScenarioFileError("source: missing 'A'")
    A = parse_matrix(src["A"], "source.A")
    k = A.shape[0]
    Q = parse_matrix(src["Q"], "source.Q", (k, k)) if "Q" in src else np.eye(k)

    ch = doc["channel"]
    _keys(ch, CHANNEL_KEYS, "channel")
    raw = None
    if "gains" in ch:
        if "H" in ch or "R" in ch:
            raise ScenarioFileError("channel: give either 'gains' or 'H' (and 'R'), not both")
        channel = DiagonalChannel.from_gains(np.asarray(ch["gains"], dtype=float))
    elif "H" in ch:
        H = parse_matrix(ch["H"], "channel.H")
        R = parse_matrix(ch["R"], "channel.R", (H.shape[0],) * 2) if "R" in ch else np.eye(H.shape[0])
        raw = ChannelModel(H, R)
        channel = diagonalize_channel(raw)
    else:
        raise ScenarioFileError("channel: needs 'gains' or 'H'")

    p = doc["p"]
    if not isinstance(p, (int, float)) or isinstance(p, bool) or not math.isfinite(p) or p < 0:
        raise ScenarioFileError("p: must be a finite nonnegative number")

    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        source, T = canonicalize_source(A, Q, strip_stable=True)
    notes.extend(str(w.message) for w in caught)
    if source.k == 0:
        raise ScenarioFileError("source has no unstable modes")

    control = None
    if "control" in doc:
        c = doc["control"]
        _keys(c, CONTROL_KEYS, "control")
        for req in ("B", "C_cost", "E_cost"):
            if req not in c:
                raise ScenarioFileError(f"control: missing '{req}'")
        B = parse_matrix(c["B"], "control.B")
        if B.shape[0] != k:
            raise ScenarioFileError(f"control.B: expected {k} rows")
        Cc = parse_matrix(c["C_cost"], "control.C_cost", (k, k))
        Ec = parse_matrix(c["E_cost"], "control.E_cost", (B.shape[1],) * 2)
        if source.k != k:
            raise ScenarioFileError("control requires a strictly unstable source (no stable modes)")
        # express the plant in the canonical coordinates S' = T S
        Ti = np.linalg.inv(T)
        control = ControlSystem(source.A, T @ B, source.Q, Ti.T @ Cc @ Ti, Ec,
                                bool(c.get("allow_singular_E", False)))

    s = doc.get("simulation", {})
    _keys(s, SIM_KEYS, "simulation")
    try:
        sim = SimulationConfig(int(s.get("T", 100_000)), s.get("burn_in"), int(s.get("trials", 1)),
                               int(s.get("seed", 0)))
    except ValueError as exc:
        raise ScenarioFileError(f"simulation: {exc}") from None
    sv = doc.get("solver", {})
    _keys(sv, SOLVER_KEYS, "solver")
    try:
        solver = SolverConfig(float(sv.get("tolerance", 1e-10)), int(sv.get("max_iterations", 100_000)),
                              sv.get("divergence_trace_bound"))
    except ValueError as exc:
        raise ScenarioFileError(f"solver: {exc}") from None

    scen = None
    if p > 0:
        scen = Scenario(source, channel, float(p), raw)
    elif need_scenario:
        raise ScenarioFileError("p: must be positive for this command")
    return LoadedScenario(scen, channel, float(p), A, T, control, sim, solver, digest_bytes(data), notes)


def load_scenario(path, need_scenario=True) -> LoadedScenario:
    with open(path, "rb") as fh:
        return parse_scenario(fh.read(), need_scenario)


def jsonable(obj):
    """Recursively convert numpy values; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    return obj


def envelope(command, digest, payload):
    return {
        "command": command,
        "input_digest": digest,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "payload": jsonable(payload),
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)


def atomic_write(path, text, force=False):
    """Write via a temp file in the target directory, then rename."""
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists (use --force to overwrite)")
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
