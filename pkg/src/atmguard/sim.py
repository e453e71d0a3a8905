"""Discrete-time microsimulation of a one-direction multi-lane freeway segment.

Longitudinal motion follows the Intelligent Driver Model; lane changes use a
safety + incentive rule in the spirit of MOBIL, with mandatory changes forced by
lane control states and by blockages seen ahead. Vehicles are stored as
parallel numpy arrays kept in id order; every per-step computation is
vectorised except the resolution of competing lane changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .demand import Arrivals
from .types import (
    CVReport,
    DetectorSample,
    EventDescriptor,
    EventKind,
    GantryDecision,
    LaneState,
    MILE_M,
    RoadGeometry,
    Vehicle,
    ms_to_mph,
)

OPEN, MERGE, CLOSED = int(LaneState.OPEN), int(LaneState.MERGE), int(LaneState.CLOSED)


@dataclass(frozen=True)
class DriverParams:
    desired_mph: float = 70.0
    desired_jitter_mph: float = 3.0
    time_headway: float = 1.2  # s
    max_accel: float = 1.5  # m/s^2
    comfort_decel: float = 2.0  # m/s^2
    standstill_gap: float = 2.0  # m
    delta: float = 4.0
    coolness: float = 0.99  # weight of the constant-acceleration heuristic in the blend
    length: float = 5.0  # m
    politeness: float = 0.3
    lc_threshold: float = 0.2  # m/s^2
    safe_decel: float = 1.0  # m/s^2, discretionary changes
    mandatory_safe_decel: float = 4.0  # m/s^2
    lc_cooldown_s: float = 4.0
    min_lc_gap: float = 1.0  # m
    courtesy_decel: float = 1.0  # m/s^2 a follower accepts to let an obliged merger in
    courtesy_range: float = 200.0  # m, how far back a yielding driver may be
    courtesy_depth: int = 2  # vehicles considered behind a merger obliged by a lane sign


@dataclass(frozen=True)
class ControlParams:
    sign_visibility_m: float = 805.0
    closure_grace_m: float = 200.0
    incident_sight_m: float = 60.0
    commit_decel: float = 6.0  # drivers who cannot stop below this decel pass the gantry
    stop_margin_m: float = 1.0
    stopped_speed_ms: float = 0.5
    entry_gap_m: float = 3.0
    entry_speed_band_ms: float = 4.5
    entry_headway_s: float = 1.2


class World:
    """Simulation state for one replication. Exclusively owned, single-threaded."""

    def __init__(self, geometry: RoadGeometry, arrivals: Arrivals, *,
                 driver: DriverParams = DriverParams(), control: ControlParams = ControlParams(),
                 dt: float = 0.5, log: Callable[[dict], None] | None = None):
        self.geometry = geometry
        self.driver = driver
        self.control = control
        self.dt = float(dt)
        self.arrivals = arrivals
        self._log = log
        self.step_index = 0
        self.time = 0.0

        self.n_lanes = geometry.lane_count
        self._gx = np.array(geometry.gantry_positions_m)
        self._dx = np.array(geometry.detector_positions_m)
        self._length_m = geometry.length_m
        self.lane_states = np.zeros((len(self._gx), self.n_lanes), dtype=np.int64)
        self.blockages: set[tuple[int, float]] = set()

        self.ids = np.empty(0, dtype=np.int64)
        self.lane = np.empty(0, dtype=np.int64)
        self.x = np.empty(0)
        self.v = np.empty(0)
        self.a = np.empty(0)
        self.v0 = np.empty(0)
        self.is_cv = np.empty(0, dtype=bool)
        self.compliant = np.empty(0, dtype=bool)
        self.pending = np.empty(0, dtype=np.int64)
        self.lc_timer = np.empty(0)
        self.stop_gantry = np.empty(0, dtype=np.int64)
        self.closure_deadline = np.empty(0)
        self.deadline = np.empty(0)
        self.entry_time = np.empty(0)
        self._mandatory = np.empty(0, dtype=bool)
        self._forbid = np.empty((0, self.n_lanes), dtype=bool)
        self._yield_to = np.empty(0, dtype=np.int64)
        self._signed = np.empty(0, dtype=bool)
        self._vcap_cache: dict[float, float] = {}

        self._next_arrival = 0
        self.admitted = 0
        self.exited = 0
        self._det_speeds = [[[] for _ in range(self.n_lanes)] for _ in self._dx]
        self._speed_sum = 0.0
        self._speed_steps = 0
        self._admit()

    # ------------------------------------------------------------------ views
    @property
    def n_vehicles(self) -> int:
        return len(self.ids)

    @property
    def arrived(self) -> int:
        """Vehicles whose arrival time has passed (on the road, queued, or gone)."""
        return int(np.searchsorted(self.arrivals.times, self.time, side="right"))

    @property
    def queued(self) -> int:
        return self.arrived - self.admitted

    def vehicles(self) -> list[Vehicle]:
        return [
            Vehicle(int(self.ids[i]), int(self.lane[i]), float(self.x[i]), float(ms_to_mph(self.v[i])),
                    float(self.a[i]), bool(self.is_cv[i]), float(ms_to_mph(self.v0[i])),
                    None if self.pending[i] < 0 else int(self.pending[i]), bool(self.compliant[i]))
            for i in range(self.n_vehicles)
        ]

    def emit(self, record: dict) -> None:
        if self._log is not None:
            self._log(record)

    # ----------------------------------------------------------- control input
    def apply_lane_states(self, decisions: Sequence[GantryDecision]) -> None:
        """Install the displayed states; they are read from the next step on."""
        if len(decisions) != len(self._gx):
            raise ValueError(f"expected {len(self._gx)} gantry decisions, got {len(decisions)}")
        table = np.zeros_like(self.lane_states)
        for d in decisions:
            if len(d.states) != self.n_lanes:
                raise ValueError(f"gantry {d.gantry}: {len(d.states)} lane states for {self.n_lanes} lanes")
            table[d.gantry] = [int(s) for s in d.states]
        self.lane_states = table

    def apply_incident(self, event: EventDescriptor) -> None:
        """Place the blockage while ``event`` is active and lift it afterwards (idempotent)."""
        if event.kind is EventKind.NONE:
            return
        if event.kind is not EventKind.INCIDENT:
            raise ValueError(f"only incidents are realised as blockages, got {event.kind.value}")
        if not (0 <= event.position <= self.geometry.length) or not (0 <= event.lane < self.n_lanes):
            raise ValueError(f"incident at lane {event.lane}, mile {event.position} is outside the segment")
        key = (int(event.lane), float(event.position) * MILE_M)
        if event.active(self.time):
            if key not in self.blockages:
                self.blockages.add(key)
                self.emit({"t": self.time, "type": "incident", "action": "start",
                           "lane": key[0], "position_mi": event.position})
        elif key in self.blockages and self.time >= event.active_window[1]:
            self.blockages.discard(key)
            self.emit({"t": self.time, "type": "incident", "action": "end",
                       "lane": key[0], "position_mi": event.position})

    # -------------------------------------------------------------- measuring
    def sample_detectors(self, interval: int) -> list[DetectorSample]:
        """Close the current collection interval: one sample per (station, lane)."""
        out = []
        stopped = self.v < self.control.stopped_speed_ms
        tail = self.x - self.driver.length
        for s, xd in enumerate(self._dx):
            on_det = stopped & (tail <= xd) & (self.x >= xd)
            for ln in range(self.n_lanes):
                speeds = self._det_speeds[s][ln]
                q = len(speeds)
                if q:
                    u = math.fsum(speeds) / q
                elif np.any(on_det & (self.lane == ln)):
                    u = 0.0
                else:
                    u = None
                out.append(DetectorSample(s, ln, interval, u, q))
                speeds.clear()
        return out

    def take_network_speed(self) -> float | None:
        """Space-mean speed (mph) averaged over the steps since the last call."""
        if self._speed_steps == 0:
            val = None
        else:
            val = self._speed_sum / self._speed_steps
        self._speed_sum = 0.0
        self._speed_steps = 0
        return val

    def cv_snapshot(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Arrays (ids, lane, position m, speed mph) of connected vehicles, id order."""
        m = self.is_cv
        return self.ids[m], self.lane[m], self.x[m], ms_to_mph(self.v[m])

    def collect_cv_reports(self) -> list[CVReport]:
        ids, lanes, xs, mph = self.cv_snapshot()
        return [CVReport(int(i), int(ln), float(x), float(s), self.time)
                for i, ln, x, s in zip(ids, lanes, xs, mph)]

    # ------------------------------------------------------------------- step
    def step(self) -> None:
        if self.n_vehicles:
            self.lc_timer = self.lc_timer - self.dt
            self._update_obligations()
            self._change_lanes()
            x_old = self.x.copy()
            self._move()
            self._record_crossings(x_old)
            self._remove_exits()
        self.step_index += 1
        self.time = self.step_index * self.dt
        self._admit()
        if self.n_vehicles:
            self._speed_sum += float(ms_to_mph(self.v).mean())
            self._speed_steps += 1

    # ---------------------------------------------------------------- helpers
    def _idm(self, v, v0, gap, dv):
        p = self.driver
        s_star = p.standstill_gap + np.maximum(
            0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfort_decel)))
        ratio = s_star / np.maximum(gap, 0.01)  # an infinite gap gives zero interaction
        r = v / v0
        free = (r * r) * (r * r) if p.delta == 4.0 else r ** p.delta
        acc = p.max_accel * (1.0 - free - ratio * ratio)
        return np.maximum(acc, -20.0)

    def _acc(self, v, v0, gap, vl, al):
        """IDM acceleration blended with the constant-acceleration heuristic.

        Plain IDM brakes far harder than needed when a slower vehicle cuts in
        ahead and is itself accelerating; the heuristic asks what deceleration
        actually avoids a collision if the leader keeps its acceleration, and
        the blend only softens IDM in exactly those situations. Steady-state
        behaviour (and so capacity) is pure IDM.
        """
        p = self.driver
        v, v0, gap, vl, al = (np.asarray(z, dtype=float) for z in (v, v0, gap, vl, al))
        a_idm = self._idm(v, v0, gap, v - vl)
        finite = np.isfinite(gap)
        g = np.where(finite, np.maximum(gap, 0.01), 1.0)
        al_t = np.minimum(al, p.max_accel)
        # every divisor below is guarded, so no floating-point state needs silencing
        reach = vl * (v - vl) <= -2.0 * g * al_t
        denom = vl * vl - 2.0 * g * al_t
        pos = denom > 0
        a_cah = np.where(reach & pos, v * v * al_t / np.where(pos, denom, 1.0),
                         al_t - np.maximum(v - vl, 0.0) ** 2 / (2.0 * g))
        blend = (1.0 - p.coolness) * a_idm + p.coolness * (
            a_cah + p.comfort_decel * np.tanh((a_idm - a_cah) / p.comfort_decel))
        return np.where(~finite | (a_idm >= a_cah), a_idm, np.maximum(blend, -20.0))

    def _free_acc(self, v, v0):
        """``_acc`` with nothing ahead (infinite gap): the free-road term alone."""
        p = self.driver
        r = v / v0
        free = (r * r) * (r * r) if p.delta == 4.0 else r ** p.delta
        return np.maximum(p.max_accel * (1.0 - free), -20.0)

    def _stop_acc(self, v, v0, dist):
        """``_acc`` towards a standing obstacle ``dist`` ahead, evaluated only where it is finite."""
        out = self._free_acc(v, v0)
        near = np.nonzero(np.isfinite(dist))[0]
        if len(near):
            out[near] = self._acc(v[near], v0[near], dist[near], 0.0, 0.0)
        return out

    def _acc_batch(self, *calls):
        """Evaluate several independent ``_acc`` argument sets in one vectorised pass."""
        sizes = [np.size(c[2]) for c in calls]  # the gap argument always has the row shape
        cols = []
        for j in range(5):
            parts = [np.asarray(c[j], dtype=float) for c in calls]
            cols.append(np.concatenate([z if z.ndim else np.full(m, float(z)) for z, m in zip(parts, sizes)]))
        out = self._acc(*cols)
        return np.split(out, np.cumsum(sizes)[:-1])

    def _acc_scalar(self, v: float, v0: float, gap: float, vl: float, al: float) -> float:
        """Scalar twin of ``_acc`` for the sequential conflict check."""
        p = self.driver
        s_star = p.standstill_gap + max(0.0, v * p.time_headway + v * (v - vl) / (2.0 * math.sqrt(p.max_accel * p.comfort_decel)))
        a_idm = max(p.max_accel * (1.0 - (v / v0) ** p.delta - (s_star / max(gap, 0.01)) ** 2), -20.0)
        g = max(gap, 0.01)
        al_t = min(al, p.max_accel)
        denom = vl * vl - 2.0 * g * al_t
        if vl * (v - vl) <= -2.0 * g * al_t and denom > 0:
            a_cah = v * v * al_t / denom
        else:
            a_cah = al_t - max(v - vl, 0.0) ** 2 / (2.0 * g)
        if a_idm >= a_cah:
            return a_idm
        blend = (1.0 - p.coolness) * a_idm + p.coolness * (
            a_cah + p.comfort_decel * math.tanh((a_idm - a_cah) / p.comfort_decel))
        return max(blend, -20.0)

    def _lane_order(self):
        """Per-lane index arrays sorted by position (ascending)."""
        order = np.lexsort((self.ids, self.x, self.lane))
        counts = np.bincount(self.lane, minlength=self.n_lanes)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        return [order[bounds[ln]:bounds[ln + 1]] for ln in range(self.n_lanes)]

    def _leaders(self, lanes_idx):
        n = self.n_vehicles
        leader = np.full(n, -1, dtype=np.int64)
        follower = np.full(n, -1, dtype=np.int64)
        for idx in lanes_idx:
            if len(idx) > 1:
                leader[idx[:-1]] = idx[1:]
                follower[idx[1:]] = idx[:-1]
        return leader, follower

    def _gap_to(self, leader):
        has = leader >= 0
        ld = np.where(has, leader, 0)
        gap = np.where(has, self.x[ld] - self.driver.length - self.x, np.inf)
        vl = np.where(has, self.v[ld], 0.0)
        return gap, vl

    def _blockage_ahead(self, xq, lanes):
        """Distance to the nearest blockage ahead of each query point in its lane."""
        d = np.full(len(xq), np.inf)
        for ln, xb in self.blockages:
            ahead = (lanes == ln) & (xb >= xq)
            d = np.where(ahead, np.minimum(d, xb - xq), d)
        return d

    def _update_obligations(self) -> None:
        c = self.control
        n = self.n_vehicles
        ng = len(self._gx)
        rows = np.arange(n)
        padded = np.vstack([self.lane_states, np.zeros((1, self.n_lanes), dtype=np.int64)])
        nxt = np.searchsorted(self._gx, self.x, side="right")
        cur = nxt - 1  # -1 picks the padded all-open row
        gx_next = np.where(nxt < ng, self._gx[np.minimum(nxt, ng - 1)], np.inf)
        dist = gx_next - self.x
        visible = dist <= c.sign_visibility_m
        next_states = padded[nxt]
        cur_states = padded[cur]
        comp = self.compliant

        forbid = comp[:, None] & ((cur_states != OPEN) | (visible[:, None] & (next_states != OPEN)))
        for ln, xb in self.blockages:
            ahead = (xb >= self.x) & (xb - self.x <= c.incident_sight_m)
            forbid[ahead, ln] = True
        self._forbid = forbid

        own_next = next_states[rows, self.lane]
        own_cur = cur_states[rows, self.lane]
        committed = dist < self.v ** 2 / (2.0 * c.commit_decel)
        must_stop = comp & visible & (own_next != OPEN)
        obliged = must_stop & (~committed | (self.stop_gantry == nxt))
        self.stop_gantry = np.where(obliged, nxt, -1)
        deadline = np.where(obliged, gx_next - c.stop_margin_m, np.inf)

        self._signed = comp & ((own_cur != OPEN) | (visible & (own_next != OPEN)))
        in_closed = comp & (own_cur == CLOSED)
        cd = np.where(np.isnan(self.closure_deadline), self.x + c.closure_grace_m, self.closure_deadline)
        self.closure_deadline = np.where(in_closed, cd, np.nan)
        deadline = np.where(in_closed, np.minimum(deadline, cd), deadline)
        self.deadline = deadline

        blk = self._blockage_ahead(self.x, self.lane)
        # a sign over the current section tells drivers to leave the lane even without a stop line
        self._mandatory = np.isfinite(deadline) | (blk <= c.incident_sight_m) | (comp & (own_cur != OPEN))

    def _change_lanes(self) -> None:
        p = self.driver
        n = self.n_vehicles
        nl = self.n_lanes
        lanes_idx = self._lane_order()
        leader, follower = self._leaders(lanes_idx)
        gap, vl = self._gap_to(leader)
        has_lead = leader >= 0
        ld_i = np.where(has_lead, leader, 0)
        al = np.where(has_lead, self.a[ld_i], 0.0)
        # old follower after we leave: it would follow our current leader
        of = follower
        has_of = of >= 0
        of_i = np.where(has_of, of, 0)
        gap_of_new = np.where(has_lead, self.x[ld_i] - p.length - self.x[of_i], np.inf)

        # one row per (vehicle, adjacent lane): left neighbours first, then right
        order = np.concatenate(lanes_idx)
        counts = np.array([len(ix) for ix in lanes_idx])
        starts = np.concatenate(([0], np.cumsum(counts)))
        xs_sorted = self.x[order]
        sels, tls = [], []
        for side in (-1, 1):
            target = self.lane + side
            ok = (target >= 0) & (target < nl)
            sels.append(np.nonzero(ok)[0])
            tls.append(target[ok])
        n_left = len(sels[0])
        sel = np.concatenate(sels)
        tl = np.concatenate(tls)
        xq = self.x[sel]
        k = np.empty(len(sel), dtype=np.int64)
        for ln in range(nl):
            m = tl == ln
            k[m] = np.searchsorted(xs_sorted[starts[ln]:starts[ln + 1]], xq[m], side="right")
        base = starts[tl]
        has_ld = k < counts[tl]
        has_fo = k > 0
        ld = np.where(has_ld, order[np.minimum(base + k, n - 1)], 0)
        fo = np.where(has_fo, order[np.maximum(base + k - 1, 0)], 0)
        vq, v0q = self.v[sel], self.v0[sel]
        gap_f = np.where(has_ld, self.x[ld] - p.length - xq, np.inf)
        gap_b = np.where(has_fo, xq - p.length - self.x[fo], np.inf)
        acc_cf, a_of_new, a_self = self._acc_batch(
            (self.v, self.v0, gap, vl, al),
            (self.v[of_i], self.v0[of_i], gap_of_new, vl, al),
            (vq, v0q, gap_f, np.where(has_ld, self.v[ld], 0.0), np.where(has_ld, self.a[ld], 0.0)))
        a_blk = self._stop_acc(vq, v0q, self._blockage_ahead(xq, tl))
        acc_cur = np.minimum(acc_cf, self._obstacle_acc(self.x, self.lane, self.v, self.v0, self.deadline))
        # _move reuses these for every vehicle whose leader and lane survive the changes
        self._pre_move = (leader, self.lane.copy(), acc_cur, gap, vl, lanes_idx)
        a_of_new = np.where(has_of, a_of_new, 0.0)
        a_of_cur = np.where(has_of, acc_cf[of_i], 0.0)
        a_self = np.minimum(a_self, a_blk)
        # the changer judges the gap by plain IDM: it does not count on the follower's anticipation
        a_fo_new = np.where(has_fo, self._idm(self.v[fo], self.v0[fo], gap_b, self.v[fo] - vq), np.inf)
        a_fo_cur = np.where(has_fo, acc_cf[fo], 0.0)
        gaps_ok = (gap_f >= p.min_lc_gap) & (gap_b >= p.min_lc_gap)
        allowed = ~self._forbid[sel, tl]

        mand = self._mandatory[sel]
        safe_m = gaps_ok & (a_fo_new >= -p.mandatory_safe_decel) & (a_self >= -p.mandatory_safe_decel)
        ok_m = mand & allowed & safe_m
        safe_d = gaps_ok & (a_fo_new >= -p.safe_decel) & (a_self >= -p.safe_decel)
        gain = a_self - acc_cur[sel] + p.politeness * (
            np.where(has_fo, a_fo_new - a_fo_cur, 0.0) + (a_of_new[sel] - a_of_cur[sel]))
        ok_d = ~mand & allowed & safe_d & (self.lc_timer[sel] <= 0) & (gain > p.lc_threshold)
        score = np.where(ok_m, a_self, np.where(ok_d, gain, -np.inf))
        want = mand & allowed
        asking = want & ~ok_m
        room = np.minimum(gap_f, p.courtesy_range) + np.minimum(gap_b, p.courtesy_range)

        def per_vehicle(values, fill):
            left = np.full(n, fill, dtype=values.dtype)
            right = np.full(n, fill, dtype=values.dtype)
            left[sel[:n_left]] = values[:n_left]
            right[sel[n_left:]] = values[n_left:]
            return left, right

        # best target: the right side only wins on a strictly better score
        sc_l, sc_r = per_vehicle(score, -np.inf)
        tl_l, tl_r = per_vehicle(tl, -1)
        best_lane = np.where(sc_r > sc_l, tl_r, np.where(sc_l > -np.inf, tl_l, -1))

        # obliged vehicles keep a merge target even while no gap is open; a new
        # target goes to the side with more room so the two neighbours share the load
        n_idx = np.arange(n)
        valid = (self.pending >= 0) & ~self._forbid[n_idx, np.maximum(self.pending, 0)]
        self.pending = np.where(valid | (self.pending < 0), self.pending, -1)
        rm_l, rm_r = per_vehicle(np.where(want, room, -np.inf), -np.inf)
        choice = np.where(rm_r > rm_l, tl_r, np.where(rm_l > -np.inf, tl_l, -1))
        self.pending = np.where((self.pending < 0) & (choice >= 0), choice, self.pending)

        # courtesy: the nearest vehicle behind that can comfortably slow down opens a gap
        yield_to = np.full(n, -1, dtype=np.int64)
        reach = np.where(self._signed[sel], p.courtesy_depth, min(1, p.courtesy_depth))
        rows = np.nonzero(asking & (self.pending[sel] == tl))[0]
        for part in (rows[rows < n_left], rows[rows >= n_left]):
            if not len(part):
                continue
            ask = np.ones(len(part), dtype=bool)
            r_sel, r_k, r_base, r_x, r_v, r_reach = sel[part], k[part], base[part], xq[part], vq[part], reach[part]
            for depth in range(1, p.courtesy_depth + 1):
                kk = r_k - depth
                ask &= (kk >= 0) & (depth <= r_reach)
                if not np.any(ask):
                    break
                y = order[np.clip(r_base + kk, 0, n - 1)]
                gap_y = r_x - p.length - self.x[y]
                ask &= gap_y <= p.courtesy_range
                a_y = self._acc(self.v[y], self.v0[y], gap_y, r_v, 0.0)
                yes = ask & (a_y >= -p.courtesy_decel)
                yield_to[y[yes]] = r_sel[yes]
                ask &= ~yes

        cand = np.nonzero(best_lane >= 0)[0]
        if len(cand):
            self._apply_changes(cand, best_lane)
        # a merger that got in is now an ordinary leader
        done = yield_to >= 0
        done[done] = self.lane[yield_to[done]] == self.lane[done]
        self._yield_to = np.where(done, -1, yield_to)
        keep = self._mandatory
        self.pending = np.where(keep, self.pending, -1)

    def _apply_changes(self, cand: np.ndarray, best_lane: np.ndarray) -> None:
        p = self.driver
        # front-most first; ids break ties deterministically
        cand = cand[np.lexsort((self.ids[cand], -self.x[cand]))]
        accepted: dict[int, list[int]] = {}
        for i in cand:
            tl = int(best_lane[i])
            b = p.mandatory_safe_decel if self._mandatory[i] else p.safe_decel
            ok = True
            for j in accepted.get(tl, ()):
                if self.x[j] >= self.x[i]:
                    lead, fol = j, i
                else:
                    lead, fol = i, j
                gap = self.x[lead] - p.length - self.x[fol]
                if gap < p.min_lc_gap:
                    ok = False
                    break
                acc = self._acc_scalar(float(self.v[fol]), float(self.v0[fol]), float(gap), float(self.v[lead]),
                                       float(self.a[lead]))
                if acc < -b:
                    ok = False
                    break
            if not ok:
                continue
            accepted.setdefault(tl, []).append(i)
            self.lane[i] = tl
            self.lc_timer[i] = p.lc_cooldown_s
            self.pending[i] = -1
            self.closure_deadline[i] = np.nan
            self.stop_gantry[i] = -1
            self.deadline[i] = np.inf
            self._mandatory[i] = False

    def _obstacle_acc(self, xq, lanes, v, v0, deadline):
        """Braking towards the nearest blockage or stop line ahead."""
        blk = self._blockage_ahead(xq, lanes)
        return self._stop_acc(v, v0, np.minimum(blk, deadline - xq))

    def _move(self) -> None:
        p = self.driver
        dt = self.dt
        pre = getattr(self, "_pre_move", None)
        if pre is not None and len(pre[1]) == self.n_vehicles and np.array_equal(pre[1], self.lane):
            # nobody changed lanes and nobody has moved yet: neighbours are as they were
            leader, _, acc, gap, vl, lanes_idx = pre
            acc = acc.copy()
            redo = np.empty(0, dtype=np.int64)
        elif pre is not None and len(pre[1]) == self.n_vehicles:
            lanes_idx = self._lane_order()
            leader, _ = self._leaders(lanes_idx)
            gap, vl = self._gap_to(leader)
            acc = pre[2].copy()
            redo = np.nonzero((leader != pre[0]) | (self.lane != pre[1]))[0]
        else:
            lanes_idx = self._lane_order()
            leader, _ = self._leaders(lanes_idx)
            gap, vl = self._gap_to(leader)
            acc = np.empty(len(leader))
            redo = np.arange(len(leader))
        self._pre_move = None
        if len(redo):
            ld = leader[redo]
            al = np.where(ld >= 0, self.a[np.maximum(ld, 0)], 0.0)
            acc[redo] = np.minimum(
                self._acc(self.v[redo], self.v0[redo], gap[redo], vl[redo], al),
                self._obstacle_acc(self.x[redo], self.lane[redo], self.v[redo], self.v0[redo], self.deadline[redo]))
        yt = self._yield_to
        coop = yt >= 0
        if np.any(coop):
            i = np.nonzero(coop)[0]
            j = yt[i]
            ahead = self.x[j] > self.x[i]
            i, j = i[ahead], j[ahead]
            gap_y = self.x[j] - p.length - self.x[i]
            acc[i] = np.minimum(acc[i], np.maximum(
                self._acc(self.v[i], self.v0[i], gap_y, self.v[j], self.a[j]), -p.courtesy_decel))

        v_new = self.v + acc * dt
        stops = v_new < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            dx_stop = np.where(acc < 0, -self.v ** 2 / (2.0 * acc), 0.0)
        dx = np.where(stops, dx_stop, self.v * dt + 0.5 * acc * dt * dt)
        x_new = self.x + np.maximum(dx, 0.0)
        v_new = np.maximum(v_new, 0.0)

        # hard limits: blockages for vehicles behind them, stop lines for obliged vehicles
        hard = np.where(np.isfinite(self.deadline), self.deadline, np.inf)
        for ln, xb in self.blockages:
            behind = (self.lane == ln) & (self.x <= xb)
            hard = np.where(behind, np.minimum(hard, xb), hard)
        for idx in lanes_idx:
            if len(idx) == 0:
                continue
            rev = idx[::-1]  # front-most first
            offs = np.arange(len(rev)) * p.length
            lim_hard = np.maximum(hard[rev], self.x[rev])
            lim = np.minimum(x_new[rev], lim_hard)
            clamped = np.minimum.accumulate(lim + offs) - offs
            hit = clamped < x_new[rev]
            if np.any(hit):
                x_new[rev] = np.where(hit, clamped, x_new[rev])
                ahead = np.concatenate(([rev[0]], rev[:-1]))
                cap = np.where(clamped >= lim_hard, 0.0, v_new[ahead])
                v_new[rev] = np.where(hit, np.minimum(v_new[rev], cap), v_new[rev])
        self.x = x_new
        self.v = v_new
        self.a = acc

    def _record_crossings(self, x_old: np.ndarray) -> None:
        for s, xd in enumerate(self._dx):
            hit = np.nonzero((x_old < xd) & (self.x >= xd))[0]
            buf = self._det_speeds[s]
            for i in hit:
                buf[self.lane[i]].append(float(ms_to_mph(self.v[i])))

    def _remove_exits(self) -> None:
        out = self.x >= self._length_m
        if not np.any(out):
            return
        t = self.time + self.dt
        for i in np.nonzero(out)[0]:
            self.emit({"t": t, "type": "exit", "vehicle": int(self.ids[i]), "lane": int(self.lane[i]),
                       "travel_time": t - float(self.entry_time[i])})
        self.exited += int(out.sum())
        self._keep(~out)

    def _keep(self, m: np.ndarray) -> None:
        for name in ("ids", "lane", "x", "v", "a", "v0", "is_cv", "compliant", "pending", "lc_timer",
                     "stop_gantry", "closure_deadline", "deadline", "entry_time"):
            setattr(self, name, getattr(self, name)[m])
        self._mandatory = self._mandatory[m]
        # yield targets are indices; remap them to the compacted arrays
        remap = np.cumsum(m) - 1
        yt = self._yield_to[m]
        valid = yt >= 0
        valid[valid] = m[yt[valid]]
        self._yield_to = np.where(valid, remap[np.maximum(yt, 0)], -1)

    def _entry_lanes(self, compliant: bool, v_desired: float) -> list[tuple[int, float]]:
        """Lanes a new vehicle may enter now, each with its entry speed.

        A vehicle enters no faster than the last vehicle in the lane and no
        faster than the steady-state speed for the free gap. A lane counts as
        having a sufficient gap once that speed reaches what the lane can offer,
        capped at the speed of maximum flow; drivers then pick among lanes whose
        speed is close to the best, so nobody joins a standing queue while a
        neighbouring lane moves.
        """
        p, c = self.driver, self.control
        forbidden = ()
        if compliant and len(self._gx) and self._gx[0] <= c.sign_visibility_m:
            forbidden = [ln for ln in range(self.n_lanes) if self.lane_states[0, ln] != OPEN]
            if len(forbidden) == self.n_lanes:
                forbidden = ()
        v_cap = self._capacity_speed(v_desired)
        offer, feasible = [], []
        for ln in range(self.n_lanes):
            if ln in forbidden:
                continue
            gap, v_lead = self._entry_gap[ln]
            target = min(v_desired, v_lead, v_cap)
            offer.append(target)
            if gap < p.standstill_gap + c.entry_gap_m:
                continue
            # the equilibrium gap grows with speed, so one comparison settles feasibility
            if self._equilibrium_gap(target, v_desired, c.entry_headway_s) > gap + 1e-9:
                continue
            v_in = min(v_desired, v_lead)
            if self._equilibrium_gap(v_in, v_desired, c.entry_headway_s) > gap:
                v_in = self._equilibrium_speed(gap, v_desired, c.entry_headway_s)
            feasible.append((ln, v_in))
        if not feasible:
            return []
        best = max(offer)
        return [(ln, v) for ln, v in feasible if v >= best - c.entry_speed_band_ms]

    def _capacity_speed(self, v0: float) -> float:
        """Speed at which steady-state IDM flow peaks (cached per desired speed)."""
        key = round(v0, 6)
        hit = self._vcap_cache.get(key)
        if hit is None:
            p, h = self.driver, self.control.entry_headway_s
            vs = np.linspace(0.5, v0 - 1e-3, 400)
            s_e = (p.standstill_gap + vs * h) / np.sqrt(1.0 - (vs / v0) ** p.delta)
            hit = float(vs[np.argmax(vs / (s_e + p.length))])
            self._vcap_cache[key] = hit
        return hit

    def _equilibrium_gap(self, v: float, v0: float, headway: float) -> float:
        """Steady-state IDM gap at speed ``v``."""
        p = self.driver
        if v >= v0:
            return math.inf
        return (p.standstill_gap + v * headway) / math.sqrt(1.0 - (v / v0) ** p.delta)

    def _equilibrium_speed(self, gap: float, v0: float, headway: float) -> float:
        """Steady-state IDM speed at ``gap`` for time headway ``headway`` (bisection)."""
        p = self.driver
        if math.isinf(gap):
            return v0
        lo, hi = 0.0, v0
        for _ in range(30):
            v = 0.5 * (lo + hi)
            s_e = (p.standstill_gap + v * headway) / math.sqrt(1.0 - (v / v0) ** p.delta)
            if s_e <= gap:
                lo = v
            else:
                hi = v
        return lo

    def _refresh_entry_gaps(self) -> None:
        out = []
        for ln in range(self.n_lanes):
            gap, v_lead = math.inf, math.inf
            in_lane = np.nonzero(self.lane == ln)[0]
            if len(in_lane):
                k = in_lane[np.argmin(self.x[in_lane])]
                gap, v_lead = float(self.x[k]) - self.driver.length, float(self.v[k])
            for lb, xb in self.blockages:
                if lb == ln and xb < gap:
                    gap, v_lead = xb, 0.0
            out.append((gap, v_lead))
        self._entry_gap = out

    def _admit(self) -> None:
        arr = self.arrivals
        due = int(np.searchsorted(arr.times, self.time, side="right"))
        if self._next_arrival < due:
            self._refresh_entry_gaps()
        batch = []
        while self._next_arrival < due:
            k = self._next_arrival
            lanes = self._entry_lanes(bool(arr.compliant[k]), float(arr.desired_ms[k]))
            if not lanes:
                break
            ln, v_in = lanes[min(int(arr.lane_u[k] * len(lanes)), len(lanes) - 1)]
            batch.append((k, ln, v_in))
            self._entry_gap[ln] = (-self.driver.length, v_in)
            self._next_arrival += 1
        if batch:
            self._append(batch)

    def _append(self, batch: list[tuple[int, int, float]]) -> None:
        """Add the vehicles admitted this step, given as (arrival index, lane, speed)."""
        arr = self.arrivals
        m = len(batch)
        ks = np.array([b[0] for b in batch], dtype=np.int64)
        vids = np.arange(self.admitted, self.admitted + m, dtype=np.int64)
        self.admitted += m
        lanes = np.array([b[1] for b in batch], dtype=np.int64)
        fresh = {
            "ids": vids, "lane": lanes, "x": np.zeros(m), "v": np.array([b[2] for b in batch], dtype=float),
            "a": np.zeros(m), "v0": arr.desired_ms[ks], "is_cv": arr.is_cv[ks].astype(bool),
            "compliant": arr.compliant[ks].astype(bool), "pending": np.full(m, -1, dtype=np.int64),
            "lc_timer": np.zeros(m), "stop_gantry": np.full(m, -1, dtype=np.int64),
            "closure_deadline": np.full(m, np.nan), "deadline": np.full(m, np.inf),
            "entry_time": np.full(m, self.time), "_mandatory": np.zeros(m, dtype=bool),
            "_yield_to": np.full(m, -1, dtype=np.int64),
        }
        for name, values in fresh.items():
            setattr(self, name, np.concatenate((getattr(self, name), values)))
        for vid, (k, ln, _) in zip(vids, batch):
            self.emit({"t": self.time, "type": "entry", "vehicle": int(vid), "lane": ln,
                       "arrival": float(arr.times[k])})


def mean_network_speed(trace: Iterable[float | None]) -> float:
    """Time-mean over measurement intervals of the space-mean speed (mph)."""
    vals = [s for s in trace if s is not None]
    if not vals:
        raise ValueError("no measurement intervals")
    return math.fsum(vals) / len(vals)


def gantry_lane_occupancy(world: World, gantry: int, lane: int, *, offset_m: float = 0.0) -> int:
    """Vehicles in ``lane`` within the section governed by ``gantry`` (from ``offset_m`` past it)."""
    lo, hi = world.geometry.section(gantry)
    lo_m, hi_m = lo * MILE_M + offset_m, hi * MILE_M
    m = (world.lane == lane) & (world.x >= lo_m) & (world.x < hi_m)
    return int(m.sum())
