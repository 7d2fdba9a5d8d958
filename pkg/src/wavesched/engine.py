"""Deterministic discrete-event simulator.

Time advances completion by completion. Every runnable item (a CTU or a
migration overhead) is a job on some core; cores run their resident jobs
under fair processor sharing, so per-thread speed is core speed divided by
the number of runnable residents and is piecewise constant between events.
At each completion the policy is consulted and its actions applied.

A stalled thread (dependency not yet met, or no ready filter task) keeps its
core binding but neither consumes a share nor keeps the core active; a core
with only stalled residents is idle for power yet still occupied for binding
decisions. A parked thread (out of rows) releases the core entirely.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

from wavesched.platform import Platform
from wavesched.policies import (
    BindTo,
    Idle,
    MigrateSelf,
    Policy,
    PolicySpec,
    SchedState,
    TakeRow,
    make_policy,
)
from wavesched.workload import CostModel, WorkloadSpec, effective_cost, generate
from wavesched.wpp_graph import FILTER_PHASES, GridDims, Phase, TaskId

EV_CTU_START = "CtuStart"
EV_CTU_COMPLETE = "CtuComplete"
EV_ROW_COMPLETE = "RowComplete"
EV_BARRIER = "BarrierReached"
EV_MIGRATION = "Migration"
EV_FRAME_COMPLETE = "FrameComplete"
EV_THREAD_IDLE = "ThreadIdle"
EV_THREAD_RESUME = "ThreadResume"


@dataclass(frozen=True)
class SimEvent:
    time_s: float
    kind: str
    thread: int | None = None
    core: int | None = None
    task: TaskId | None = None
    frame: int | None = None
    src_core: int | None = None


class DeadlockError(RuntimeError):
    def __init__(self, message: str, blocked: list[str]):
        super().__init__(message + ": " + "; ".join(blocked))
        self.blocked = blocked


@dataclass(frozen=True)
class SimConfig:
    dims: GridDims
    frames: int
    workload: WorkloadSpec | tuple[CostModel, ...]
    platform: Platform
    policy: PolicySpec
    simd: bool = False

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if not isinstance(self.workload, WorkloadSpec):
            models = tuple(self.workload)
            if len(models) < self.frames:
                raise ValueError(f"{len(models)} cost tables for {self.frames} frames")
            for m in models:
                if m.dims != self.dims:
                    raise ValueError(
                        f"cost table {m.dims.rows}x{m.dims.cols} does not match "
                        f"grid {self.dims.rows}x{self.dims.cols}"
                    )
            object.__setattr__(self, "workload", models)

    def cost_models(self) -> Sequence[CostModel]:
        if isinstance(self.workload, WorkloadSpec):
            return generate(self.workload, self.dims, self.frames)
        return self.workload


class _Thread:
    __slots__ = (
        "id", "row", "col", "job_remaining", "job_task", "status", "idle_logged",
    )

    def __init__(self, tid: int):
        self.id = tid
        self.row: int | None = None
        self.col = 0
        self.job_remaining: float | None = None  # wu; None = no job
        self.job_task: TaskId | None = None  # None while job runs overhead
        self.status = "stalled"  # run | stalled | wait_little | parked
        self.idle_logged = False


_PHASE_INDEX = {p: k for k, p in enumerate(FILTER_PHASES)}


class _Sim:
    def __init__(self, config: SimConfig):
        self.config = config
        self.platform = config.platform
        self.dims = config.dims
        self.policy: Policy = make_policy(config.policy.kind)
        self.spec = config.policy
        self.models = config.cost_models()
        self.simd = config.simd
        self.events: list[SimEvent] = []
        self.now = 0.0
        self.core_speed = {i: c.speed_wu_per_s for i, c in enumerate(self.platform.cores)}
        self.frame = 0

    # --- event helpers ---

    def emit(self, kind, thread=None, core=None, task=None, src_core=None):
        self.events.append(
            SimEvent(self.now, kind, thread, core, task, self.frame, src_core)
        )

    def _eff(self, wu: float, model: CostModel) -> float:
        return effective_cost(wu, self.simd, model.vector_fraction, model.vector_speedup)

    # --- per-frame state ---

    def _reset_frame(self):
        dims = self.dims
        self.state: SchedState = self.policy.initial_assignment(
            self.spec, self.platform, dims
        )
        self.threads = {t: _Thread(t) for t in self.state.bindings}
        for t, th in self.threads.items():
            th.row = self.state.rows[t]
            th.col = 0
            if t in self.state.parked:
                th.status = "parked"
        self.model = self.models[self.frame]
        self.recon_done_cols = [0] * dims.rows  # completed prefix length per row
        self.recon_done_total = 0
        self.recon_waiters: dict[tuple[int, int], list[int]] = {}
        self.stage = "recon"
        # Filter pool state: completed prefix per (phase, row), claim pointers,
        # ready heap keyed (phase index, row, col).
        self.filter_done_cols = {(p, i): 0 for p in FILTER_PHASES for i in range(dims.rows)}
        self.filter_claim_cols = dict(self.filter_done_cols)
        self.filter_ready: list[tuple[int, int, int]] = []
        self.filter_done_total = 0
        self.filter_waiters: set[int] = set()
        self.frame_done = False

    # --- core occupancy ---

    def _runnable_on(self, core: int) -> int:
        n = 0
        for t in sorted(self.state.bindings):
            th = self.threads[t]
            if self.state.bindings[t] == core and th.job_remaining is not None:
                n += 1
        return n

    # --- recon helpers ---

    def _recon_dep_met(self, row: int, col: int) -> bool:
        if row == 0:
            return True
        need = min(col + 1, self.dims.cols - 1)
        return self.recon_done_cols[row - 1] > need

    def _try_start_recon(self, tid: int):
        """Start the thread's next CTU, or stall on its upper dependency."""
        th = self.threads[tid]
        if th.row is None or th.status == "parked" or th.status == "wait_little":
            return
        row, col = th.row, th.col
        if self._recon_dep_met(row, col):
            task = TaskId(self.frame, Phase.RECON, row, col)
            th.job_remaining = self._eff(float(self.model.recon[row, col]), self.model)
            th.job_task = task
            if th.status == "stalled" and th.idle_logged:
                self.emit(EV_THREAD_RESUME, thread=tid, core=self.state.bindings[tid])
            th.status = "run"
            th.idle_logged = False
            self.emit(EV_CTU_START, thread=tid, core=self.state.bindings[tid], task=task)
        else:
            th.status = "stalled"
            th.job_remaining = None
            th.job_task = None
            key = (row - 1, min(col + 1, self.dims.cols - 1))
            self.recon_waiters.setdefault(key, []).append(tid)
            if not th.idle_logged:
                self.emit(EV_THREAD_IDLE, thread=tid, core=self.state.bindings[tid])
                th.idle_logged = True

    def _start_overhead(self, tid: int, dest: int) -> bool:
        """Charge migration overhead as an active job on the destination."""
        if self.spec.migration_overhead_s <= 0:
            return False
        th = self.threads[tid]
        th.job_remaining = self.spec.migration_overhead_s * self.core_speed[dest]
        th.job_task = None
        th.status = "run"
        th.idle_logged = False
        return True

    def _apply_migration(self, tid: int, dest: int):
        th = self.threads[tid]
        src = self.state.bindings[tid]
        self.state.bindings[tid] = dest
        self.emit(EV_MIGRATION, thread=tid, core=dest, src_core=src)
        if src is not None and src in self.little_set and src != dest:
            self._fill_little_vacancy(src)
        if not self._start_overhead(tid, dest):
            self._continue_after_move(tid)

    def _continue_after_move(self, tid: int):
        if self.stage == "recon":
            self._try_start_recon(tid)
        else:
            self._filter_pull(tid)

    def _fill_little_vacancy(self, core: int):
        """Hand a vacated slow core to the longest-waiting rowed thread."""
        if not self.state.waiting_little:
            return
        if self.state.residents(core):
            return
        tid = self.state.waiting_little.pop(0)
        th = self.threads[tid]
        th.status = "stalled"
        self.state.bindings[tid] = core
        self.emit(EV_MIGRATION, thread=tid, core=core, src_core=None)
        if not self._start_overhead(tid, core):
            self._continue_after_move(tid)

    # --- policy action application ---

    def _apply_row_actions(self, tid: int, actions):
        th = self.threads[tid]
        took_row = False
        moved = False
        for act in actions:
            if isinstance(act, TakeRow):
                self.state.rows[tid] = act.row
                self.state.next_row = max(self.state.next_row, act.row + 1)
                th.row, th.col = act.row, 0
                took_row = True
            elif isinstance(act, BindTo):
                src = self.state.bindings[tid]
                if act.core is None:
                    self.state.bindings[tid] = None
                    self.state.waiting_little.append(tid)
                    th.status = "wait_little"
                    self.emit(EV_THREAD_IDLE, thread=tid, core=src)
                    th.idle_logged = True
                    moved = True
                elif act.core != src:
                    self._apply_migration(tid, act.core)
                    moved = True
            elif isinstance(act, Idle):
                self.state.rows[tid] = None
                th.row = None
                self.state.parked.add(tid)
                th.status = "parked"
                self.emit(EV_THREAD_IDLE, thread=tid, core=self.state.bindings[tid])
                th.idle_logged = True
                src = self.state.bindings[tid]
                if src is not None and src in self.little_set:
                    self._fill_little_vacancy(src)
        if took_row and not moved and th.job_remaining is None and th.status != "wait_little":
            self._try_start_recon(tid)

    # --- recon completion ---

    def _complete_recon(self, tid: int, task: TaskId):
        th = self.threads[tid]
        th.job_remaining = None
        th.job_task = None
        row, col = task.row, task.col
        self.recon_done_cols[row] += 1
        self.recon_done_total += 1
        self.emit(EV_CTU_COMPLETE, thread=tid, core=self.state.bindings[tid], task=task)

        for waiter in self.recon_waiters.pop((row, col), []):
            self._try_start_recon(waiter)

        if col + 1 < self.dims.cols:
            th.col = col + 1
            actions = self.policy.on_recon_ctu_complete(self.state, tid, task.coord)
            migrated = False
            for act in actions:
                if isinstance(act, MigrateSelf):
                    self._apply_migration(tid, act.core)
                    migrated = True
            if not migrated:
                self._try_start_recon(tid)
        else:
            self.emit(
                EV_ROW_COMPLETE, thread=tid, core=self.state.bindings[tid], task=task
            )
            self.state.rows[tid] = None
            th.row = None
            actions = self.policy.on_row_complete(self.state, tid)
            self._apply_row_actions(tid, actions)

        if self.recon_done_total == self.dims.n_ctus:
            self._begin_filter_stage()

    # --- filter stage ---

    def _begin_filter_stage(self):
        self.emit(EV_BARRIER)
        self.stage = "filter"
        rebinds = self.policy.filter_stage_start(self.state)
        self.state.parked.clear()
        self.state.waiting_little.clear()
        for t, th in sorted(self.threads.items()):
            if th.status in ("parked", "wait_little", "stalled"):
                th.status = "stalled"
        for tid, bind in rebinds:
            th = self.threads[tid]
            src = self.state.bindings[tid]
            if bind.core is not None and bind.core != src:
                self.state.bindings[tid] = bind.core
                self.emit(EV_MIGRATION, thread=tid, core=bind.core, src_core=src)
                self._start_overhead(tid, bind.core)
        if self.policy.kind == "affinity" and self.spec.threads == 8:
            big = set(self.platform.big_ids)
            on_big = sum(1 for t in self.state.bindings if self.state.bindings[t] in big)
            if not (on_big == 4 and self.state.n_threads - on_big == 4):
                raise AssertionError(
                    f"filter stage expected a 4/4 split, got {on_big} on big"
                )
        # Seed the ready pool: first horizontal-pass task of every row.
        for i in range(self.dims.rows):
            if self._filter_ready_task(Phase.HFILTER, i, 0):
                heapq.heappush(self.filter_ready, (_PHASE_INDEX[Phase.HFILTER], i, 0))
        for tid, th in sorted(self.threads.items()):
            if th.job_remaining is None:
                self._filter_pull(tid)

    def _filter_ready_task(self, phase: Phase, row: int, col: int) -> bool:
        if col >= self.dims.cols or self.filter_claim_cols[(phase, row)] != col:
            return False
        if self.filter_done_cols[(phase, row)] < col:
            return False
        if phase is Phase.HFILTER:
            return True
        prev = FILTER_PHASES[_PHASE_INDEX[phase] - 1]
        if self.filter_done_cols[(prev, row)] < min(col + 2, self.dims.cols):
            return False
        if row + 1 < self.dims.rows and self.filter_done_cols[(prev, row + 1)] < col + 1:
            return False
        return True

    def _filter_pull(self, tid: int):
        th = self.threads[tid]
        if th.status == "parked":
            th.status = "stalled"
        if self.filter_ready:
            pidx, row, col = heapq.heappop(self.filter_ready)
            phase = FILTER_PHASES[pidx]
            self.filter_claim_cols[(phase, row)] = col + 1
            task = TaskId(self.frame, phase, row, col)
            th.job_remaining = self._eff(self.model.filter_cost_per_ctu(phase), self.model)
            th.job_task = task
            if th.idle_logged:
                self.emit(EV_THREAD_RESUME, thread=tid, core=self.state.bindings[tid])
            th.status = "run"
            th.idle_logged = False
            self.filter_waiters.discard(tid)
            self.emit(EV_CTU_START, thread=tid, core=self.state.bindings[tid], task=task)
        else:
            th.job_remaining = None
            th.job_task = None
            th.status = "stalled"
            self.filter_waiters.add(tid)
            if not th.idle_logged:
                self.emit(EV_THREAD_IDLE, thread=tid, core=self.state.bindings[tid])
                th.idle_logged = True

    def _complete_filter(self, tid: int, task: TaskId):
        th = self.threads[tid]
        th.job_remaining = None
        th.job_task = None
        phase, row, col = task.phase, task.row, task.col
        self.filter_done_cols[(phase, row)] += 1
        self.filter_done_total += 1
        self.emit(EV_CTU_COMPLETE, thread=tid, core=self.state.bindings[tid], task=task)

        # Push tasks that this completion just made ready.
        pidx = _PHASE_INDEX[phase]
        candidates = [(pidx, row, col + 1)]
        if pidx + 1 < len(FILTER_PHASES):
            candidates += [
                (pidx + 1, row, col),
                (pidx + 1, row, col - 1),
                (pidx + 1, row - 1, col),
            ]
        for cand_p, cand_i, cand_j in candidates:
            if cand_i < 0 or cand_j < 0 or cand_i >= self.dims.rows:
                continue
            if self._filter_ready_task(FILTER_PHASES[cand_p], cand_i, cand_j):
                heapq.heappush(self.filter_ready, (cand_p, cand_i, cand_j))

        if self.filter_done_total == self.dims.n_ctus * len(FILTER_PHASES):
            self.frame_done = True
            self.emit(EV_FRAME_COMPLETE)
            return

        actions = self.policy.on_filter_ctu_complete(self.state, tid)
        migrated = False
        for act in actions:
            if isinstance(act, MigrateSelf):
                self._apply_migration(tid, act.core)
                migrated = True
        if not migrated:
            self._filter_pull(tid)
        for waiter in sorted(self.filter_waiters):
            if not self.filter_ready:
                break
            self._filter_pull(waiter)

    # --- overhead completion ---

    def _complete_overhead(self, tid: int):
        th = self.threads[tid]
        th.job_remaining = None
        self._continue_after_move(tid)

    # --- main loop ---

    def run(self) -> list[SimEvent]:
        self.little_set = set(self.platform.little_ids)
        for self.frame in range(self.config.frames):
            self._reset_frame()
            for tid in sorted(self.threads):
                th = self.threads[tid]
                if th.status != "parked":
                    self._try_start_recon(tid)
                else:
                    self.emit(EV_THREAD_IDLE, thread=tid, core=self.state.bindings[tid])
                    th.idle_logged = True
            self._run_frame()
        return self.events

    def _blocked_report(self) -> list[str]:
        out = []
        for tid, th in sorted(self.threads.items()):
            out.append(f"thread {tid}: status={th.status} row={th.row} col={th.col}")
        if self.stage == "recon":
            out.append(f"recon done {self.recon_done_total}/{self.dims.n_ctus}")
        else:
            out.append(
                f"filter done {self.filter_done_total}/{self.dims.n_ctus * len(FILTER_PHASES)}"
            )
        return out

    def _run_frame(self):
        threads = self.threads
        bindings = self.state.bindings
        while not self.frame_done:
            # Collect runnable jobs and their rates.
            occupancy: dict[int, int] = {}
            runnable: list[int] = []
            for tid in sorted(threads):
                th = threads[tid]
                if th.job_remaining is not None:
                    core = bindings[tid]
                    occupancy[core] = occupancy.get(core, 0) + 1
                    runnable.append(tid)
            if not runnable:
                raise DeadlockError(
                    f"no runnable thread at t={self.now:.9f}", self._blocked_report()
                )
            dt_min = None
            for tid in runnable:
                rate = self.core_speed[bindings[tid]] / occupancy[bindings[tid]]
                dt = threads[tid].job_remaining / rate
                if dt_min is None or dt < dt_min:
                    dt_min = dt
            eps = dt_min * 1e-12 + 1e-18
            batch = []
            for tid in runnable:
                core = bindings[tid]
                rate = self.core_speed[core] / occupancy[core]
                th = threads[tid]
                dt = th.job_remaining / rate
                if dt <= dt_min + eps:
                    batch.append(tid)
                    th.job_remaining = 0.0
                else:
                    th.job_remaining -= dt_min * rate
            self.now += dt_min
            # Deterministic completion order: CTU tasks by (phase, row, col,
            # core), then overhead expiries by (core, thread).
            def order(tid):
                th = threads[tid]
                if th.job_task is not None:
                    t = th.job_task
                    p = -1 if t.phase is Phase.RECON else _PHASE_INDEX[t.phase]
                    return (0, p, t.row, t.col, bindings[tid] or 0, tid)
                return (1, 0, 0, 0, bindings[tid] or 0, tid)

            for tid in sorted(batch, key=order):
                th = threads[tid]
                if th.job_remaining is None or th.job_remaining != 0.0:
                    continue  # a prior barrier/rebind in this batch reset it
                task = th.job_task
                if task is None:
                    self._complete_overhead(tid)
                elif task.phase is Phase.RECON:
                    self._complete_recon(tid, task)
                else:
                    self._complete_filter(tid, task)
                if self.frame_done:
                    break


def simulate(config: SimConfig):
    """Run one configuration; returns (event trace, report)."""
    from wavesched import analysis

    trace = _Sim(config).run()
    report = analysis.compute_metrics(trace, config=config)
    return trace, report


def run_sweep(base: SimConfig, thread_counts, policy_kinds, simd_flags=(False,)):
    """Simulate the Cartesian product; failures are captured per cell."""
    thread_counts = list(thread_counts)
    policy_kinds = list(policy_kinds)
    simd_flags = list(simd_flags)
    if not thread_counts or not policy_kinds or not simd_flags:
        raise ValueError("run_sweep needs non-empty thread, policy, and simd lists")
    results = {}
    for kind in policy_kinds:
        for n in thread_counts:
            for simd in simd_flags:
                spec = PolicySpec(
                    kind=kind,
                    threads=n,
                    migration_overhead_s=base.policy.migration_overhead_s,
                )
                cfg = SimConfig(
                    dims=base.dims,
                    frames=base.frames,
                    workload=base.workload,
                    platform=base.platform,
                    policy=spec,
                    simd=simd,
                )
                key = (spec.kind, n, simd)
                try:
                    _, report = simulate(cfg)
                    results[key] = report
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    results[key] = exc
    return results
