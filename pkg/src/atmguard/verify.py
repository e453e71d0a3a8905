"""Built-in oracle checks behind ``atmguard verify``.

Each check compares a production code path with an independent evaluation
(brute force, quadrature, or a second run) and reports pass/fail.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .atm import IncidentDetectorParams, detect_incident, incident_flags
from .config import ScenarioConfig
from .policy import PolicyTable, check_totality
from .stats import paired_t_test
from .types import DetectorSample, LaneState

U_LEVELS = tuple(range(0, 80, 10))
Q_LEVELS = (0, 5)


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


# ------------------------------------------------------------------ detection

def lane_options(u_levels=U_LEVELS, q_levels=Q_LEVELS) -> list[tuple[int, int]]:
    return list(itertools.product(u_levels, q_levels))


def brute_force_flags(u_t, q_t, u_p, q_p, c1: float, c2: float) -> list[bool]:
    """The three trigger conditions, evaluated lane by lane in plain Python."""
    n = len(u_t)
    out = []
    for i in range(n):
        stopped = u_t[i] == 0
        volume = q_t[i] == 0 and q_p[i] > 0
        others = all(u_t[j] > (1 - c2) * u_p[j] for j in range(n) if j != i)
        drop = u_t[i] < c1 * u_p[i] and others
        out.append(stopped or volume or drop)
    return out


def _grid_oracle(u_t, q_t, u_p, q_p, c1, c2):
    """Array form of :func:`brute_force_flags`, one explicit term per lane pair."""
    n = u_t.shape[-1]
    flags = np.zeros(u_t.shape, dtype=bool)
    for i in range(n):
        others = np.ones(u_t.shape[:-1], dtype=bool)
        for j in range(n):
            if j != i:
                others &= u_t[..., j] > (1 - c2) * u_p[..., j]
        flags[..., i] = ((u_t[..., i] == 0) | ((q_t[..., i] == 0) & (q_p[..., i] > 0))
                         | ((u_t[..., i] < c1 * u_p[..., i]) & others))
    return flags


def detection_grid_disagreements(c1: float = 0.6, c2: float = 0.1, lanes: int = 3,
                                 chunk: int = 256) -> tuple[int, int]:
    """Exhaustive two-interval grid; returns (disagreements, traces checked).

    Every (U, Q) combination per lane in both intervals is evaluated by the
    vectorised detector kernel and by the lane-by-lane oracle.
    """
    opts = np.array(lane_options(), dtype=float)
    states = np.array(list(itertools.product(range(len(opts)), repeat=lanes)))
    u_all, q_all = opts[states, 0], opts[states, 1]  # (S, lanes)
    bad = 0
    total = 0
    for lo in range(0, len(states), chunk):
        u_p = u_all[lo:lo + chunk, None, :]
        q_p = q_all[lo:lo + chunk, None, :]
        u_t, q_t = u_all[None, :, :], q_all[None, :, :]
        shape = (u_p.shape[0], len(states), lanes)
        got = incident_flags(u_t, q_t, u_p, q_p, c1, c2)
        want = _grid_oracle(*(np.broadcast_to(a, shape) for a in (u_t, q_t, u_p, q_p)), c1, c2)
        bad += int(np.count_nonzero(np.any(got != want, axis=-1)))
        total += shape[0] * shape[1]
    return bad, total


def _samples(us, qs, interval):
    return [DetectorSample(0, i, interval, float(u), int(q)) for i, (u, q) in enumerate(zip(us, qs))]


def detection_sample_disagreements(n: int = 20000, seed: int = 0, c1: float = 0.6,
                                   c2: float = 0.1) -> tuple[int, int]:
    """Random grid traces pushed through the sample-level API against the scalar oracle."""
    rng = np.random.default_rng(seed)
    params = IncidentDetectorParams(c1, c2, debounce=1)
    opts = lane_options()
    bad = 0
    for _ in range(n):
        prev = [opts[k] for k in rng.integers(len(opts), size=3)]
        cur = [opts[k] for k in rng.integers(len(opts), size=3)]
        u_p, q_p = zip(*prev)
        u_t, q_t = zip(*cur)
        got = detect_incident(_samples(u_t, q_t, 1), _samples(u_p, q_p, 0), params)
        if got != brute_force_flags(u_t, q_t, u_p, q_p, c1, c2):
            bad += 1
    return bad, n


# ------------------------------------------------------------------ policy

def policy_report(table: PolicyTable) -> tuple[list[dict], list[dict], int]:
    """(inputs with no rule, inputs with a malformed or unstable answer, inputs checked)."""
    missing = check_totality(table)
    unstable = []
    count = 0
    for key in table.input_space():
        count += 1
        if key in missing:
            continue
        first = table.lookup(key)
        again = table.lookup(dict(key))
        well_formed = len(first) == table.lane_count and all(isinstance(s, LaneState) for s in first)
        if first != again or not well_formed:
            unstable.append(key)
    return missing, unstable, count


# ------------------------------------------------------------------ statistics

def t_pdf(x: float, df: int) -> float:
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def t_two_sided_quadrature(t: float, df: int, steps: int = 20000) -> float:
    """Two-sided p from Simpson integration of the t density over [0, |t|]."""
    b = abs(t)
    h = b / steps
    s = t_pdf(0.0, df) + t_pdf(b, df)
    for k in range(1, steps):
        s += (4 if k % 2 else 2) * t_pdf(k * h, df)
    return 1.0 - 2.0 * (s * h / 3.0)


# ------------------------------------------------------------------ determinism

def quick_config() -> ScenarioConfig:
    """A short scenario for smoke and determinism checks."""
    return ScenarioConfig.model_validate({"warmup_s": 60.0, "run_s": 180.0,
                                          "incident": {"start_after_warmup_s": 30.0},
                                          "replications": 2})


# ------------------------------------------------------------------ runner

def _check(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    try:
        ok, detail = fn()
    except Exception as err:  # a crashing check is a failing check
        return CheckResult(name, False, f"{type(err).__name__}: {err}")
    return CheckResult(name, ok, detail)


def run_checks(policy_path: str | None = None, *, determinism: bool = True) -> list[CheckResult]:
    from .experiment import CaseId, replications_csv, run_case

    def grid():
        bad, total = detection_grid_disagreements()
        return bad == 0, f"{total} two-interval traces, {bad} disagreements"

    def sample_api():
        bad, total = detection_sample_disagreements(5000)
        return bad == 0, f"{total} sampled traces through detect_incident, {bad} disagreements"

    def policy():
        table = PolicyTable.load(policy_path)
        missing, unstable, count = policy_report(table)
        if missing:
            return False, f"{len(missing)} of {count} inputs have no rule, e.g. {missing[0]}"
        if unstable:
            return False, f"{len(unstable)} inputs give malformed or unstable answers, e.g. {unstable[0]}"
        return True, f"{count} inputs, one tuple each, lookups repeatable"

    def ttest():
        r = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        q = t_two_sided_quadrature(r.t, r.df)
        same = paired_t_test([3.0, 1.0, 2.0], [3.0, 1.0, 2.0])
        ok = (abs(r.t - 3 * math.sqrt(2)) < 1e-3 and abs(r.p - 0.0132) < 5e-4 and abs(r.p - q) < 1e-6
              and same.p == 1.0)
        return ok, f"t={r.t:.4f} p={r.p:.5f} (quadrature {q:.5f}); a=b gives p={same.p}"

    def double_run():
        cfg = quick_config()
        first = replications_csv(run_case(cfg, CaseId.CASE2, 2))
        second = replications_csv(run_case(cfg, CaseId.CASE2, 2))
        return first == second, "identical replications.csv text" if first == second else "outputs differ"

    checks = [("detection-grid", grid), ("detection-api", sample_api), ("policy-totality", policy),
              ("t-test", ttest)]
    if determinism:
        checks.append(("determinism", double_run))
    return [_check(name, fn) for name, fn in checks]
