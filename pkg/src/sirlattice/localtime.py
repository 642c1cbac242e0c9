"""Occupation-field statistics: local-time proxies, survival summaries,
local-extinction times and the exact discrete integration-by-parts identity.

The lattice analog of the local time at rescaled time t is the occupation
rescaling of the recovered field R_{[N^alpha t]}; it is sitewise nondecreasing
in t because R is.  Space integrals of the rescaled field use the cell volume
N^{-alpha d / 2} per lattice site, the choice under which the discrete
telescoping identity

    sum_n <X_n, R_n> = 1/2 sum_x R_T(x)^2 - 1/2 sum_{n<T} sum_x X_n(x)^2

turns into the continuum integration-by-parts
int_0^t <X_s, L_s> ds = 1/2 int L_t^2 dx with an exactly computable
remainder (the residual reported here), of order dt = N^{-alpha}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from .core import EpidemicState, Site, TrajectoryRecord
from .params import ModelParams
from .rescale import ScaledField, sugitani


class HorizonExceeded(ValueError):
    """Requested rescaled time lies beyond the simulated horizon."""


@dataclass
class TrialSummary:
    """Per-run statistics feeding the acceptance tests.

    extinction_generation is None when the run was censored; the total-mass
    path is zero from the extinction generation onward by construction.
    """

    extinction_generation: int | None
    generations_run: int
    mass_path: list[int]
    radius_path: list[float]
    ball_l1: float
    ball_l2: float
    last_origin_box_generation: int | None
    survival_proxy: bool
    stop_reason: str = "horizon"

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @staticmethod
    def csv_header() -> list[str]:
        return [
            "extinction_generation",
            "generations_run",
            "final_mass",
            "max_mass",
            "max_radius",
            "ball_l1",
            "ball_l2",
            "last_origin_box_generation",
            "survival_proxy",
            "stop_reason",
        ]

    def csv_row(self) -> list[str]:
        return [
            "" if self.extinction_generation is None else str(self.extinction_generation),
            str(self.generations_run),
            str(self.mass_path[-1]),
            str(max(self.mass_path)),
            f"{max(self.radius_path):.6g}",
            f"{self.ball_l1:.12g}",
            f"{self.ball_l2:.12g}",
            ""
            if self.last_origin_box_generation is None
            else str(self.last_origin_box_generation),
            "1" if self.survival_proxy else "0",
            self.stop_reason,
        ]


def local_time_field(
    trajectory: TrajectoryRecord, t: float
) -> ScaledField:
    """Occupation-rescaled R_{[N^alpha t]} read from a stored snapshot.

    The trajectory must have been run with snapshot_times covering
    [N^alpha t]; raises HorizonExceeded past the simulated range.
    """
    params = trajectory.params
    gen = params.generations(t)
    if gen > trajectory.generations_run:
        raise HorizonExceeded(
            f"generation {gen} beyond simulated {trajectory.generations_run}"
        )
    if gen not in trajectory.snapshots:
        raise KeyError(f"no snapshot stored at generation {gen}")
    _, recovered = trajectory.snapshots[gen]
    return sugitani(recovered, params)


def _cell_volume(params: ModelParams) -> float:
    """Integration cell per lattice site, N^{-alpha d/2}: the volume choice
    under which discrete occupation integrals telescope exactly."""
    return params.n_alpha ** (-params.d / 2.0)


def occupation_integrals(
    recovered: Mapping[Site, int], params: ModelParams, radius: float
) -> tuple[float, float]:
    """(<L, 1_B>, <L^2, 1_B>) for the ball B of `radius` around the origin
    in rescaled coordinates: cell-volume-weighted sums of the rescaled field
    and its square over sites mapping into the ball."""
    if radius <= 0 or not recovered:
        return 0.0, 0.0
    stride = params.lattice_stride
    unit = params.sugitani_mass_unit
    vol = _cell_volume(params)
    l1 = 0.0
    l2 = 0.0
    r2 = radius * radius
    for site, count in recovered.items():
        pos2 = sum((c / stride) ** 2 for c in site)
        if pos2 < r2:
            v = count / unit
            l1 += v
            l2 += v * v
    return l1 * vol, l2 * vol


def ball_localtime_moments(
    trajectory: TrajectoryRecord, radius: float
) -> tuple[float, float]:
    """Terminal-occupation estimates of <L_inf, 1_B> and <L_inf^2, 1_B>.

    Uses the final recovered field (plus any still-infected mass's future
    recovery is *not* counted: the estimate is the occupation up to the stop
    generation; pair with a plateau check across horizons for L_inf)."""
    state = trajectory.final_state
    if state is None:
        raise ValueError("trajectory has no final state")
    return occupation_integrals(state.recovered_dict(), state.params, radius)


def killing_lower_bound_holds(
    recovered: Mapping[Site, int],
    params: ModelParams,
    box_half_width: float = 1.5,
    beta: float = 1.0,
) -> bool:
    """Cauchy-Schwarz killing bound on occupation fields supported in
    Q_3(0): (beta/2) int L^2 >= p_c beta (int L)^2 with p_c = 1/(2 3^d).

    Exact for any field whose sites map into the box (it is literally
    Cauchy-Schwarz on the cell sums), so a False return flags a support or
    bookkeeping violation."""
    stride = params.lattice_stride
    for site in recovered:
        if any(abs(c / stride) > box_half_width for c in site):
            raise ValueError("field not supported in Q_3(0)")
    l1, l2 = occupation_integrals(recovered, params, radius=math.inf)
    p_c = 1.0 / (2.0 * 3**params.d)
    return 0.5 * beta * l2 >= p_c * beta * l1 * l1 * (1.0 - 1e-12)


def integration_by_parts_residual(
    trajectory: TrajectoryRecord,
) -> tuple[float, float]:
    """Residual of the discrete occupation identity, with its a priori bound.

    With w = N^{alpha(d/2 - 4)} (the product of mass, field and time units
    and the integration cell), the identity

        sum_{n<T} sum_x X_n R_n * w  =  1/2 sum_x R_T^2 * w  -  residual,
        residual = 1/2 sum_{n<T} sum_x X_n(x)^2 * w,

    is exact (telescoping R_{n+1}^2 - R_n^2 = 2 R_n X_n + X_n^2).  Returns
    (residual, bound) where

        bound = 1/2 * max_{n,x} (X_n(x)/N^{alpha(2-d/2)})
                    * sum_n |X_n| N^{-alpha} * dt,

    i.e. O(dt * ||field||) with dt = N^{-alpha}; requires the full infected
    history (run_trajectory(record_full=True))."""
    if trajectory.full_x is None:
        raise ValueError("run the trajectory with record_full=True")
    params = trajectory.params
    w = params.n_alpha ** (params.d / 2.0 - 4.0)
    residual = 0.0
    max_scaled = 0.0
    mass_time_integral = 0.0
    unit = params.sugitani_mass_unit
    dt = 1.0 / params.n_alpha
    for xs in trajectory.full_x[:-1]:
        for _, c in xs.items():
            residual += c * c
            if c > max_scaled * unit:
                max_scaled = c / unit
        mass_time_integral += sum(xs.values()) / params.n_alpha * dt
    residual *= 0.5 * w
    bound = 0.5 * max_scaled * mass_time_integral
    return residual, bound


def integration_by_parts_sides(
    trajectory: TrajectoryRecord,
) -> tuple[float, float]:
    """(sum_n <X_n, L_n> dt, 1/2 int L_T^2) in the matched normalization;
    their difference equals minus the residual, exactly."""
    if trajectory.full_x is None or trajectory.final_state is None:
        raise ValueError("run the trajectory with record_full=True")
    params = trajectory.params
    w = params.n_alpha ** (params.d / 2.0 - 4.0)
    running: dict[Site, int] = {}
    lhs = 0.0
    for xs in trajectory.full_x[:-1]:
        for site, c in xs.items():
            lhs += c * running.get(site, 0)
        for site, c in xs.items():
            running[site] = running.get(site, 0) + c
    rhs = 0.5 * sum(v * v for v in running.values())
    return lhs * w, rhs * w


def local_extinction_time(
    trajectory: TrajectoryRecord, box: tuple[Sequence[float], Sequence[float]]
) -> int | None:
    """Last generation with infected mass in the continuum box (mapped
    through the space scaling), or None when still occupied at the end.

    The trajectory must have been run with track_box=map_box(...); this
    helper re-derives the answer from the recorded per-generation bits when
    the tracked box matches, otherwise from stored snapshots."""
    if not trajectory.box_alive_path:
        raise ValueError("trajectory was not run with a tracked box")
    last = trajectory.last_box_alive_generation()
    if trajectory.box_alive_path[-1] and trajectory.stop_reason != "extinct":
        return None  # censored: still occupied at the horizon
    return 0 if last is None else last


def map_box(
    lo: Sequence[float], hi: Sequence[float], params: ModelParams
) -> tuple[Site, Site]:
    """Lattice box of sites whose rescaled position z/stride lies in
    [lo, hi] componentwise."""
    stride = params.lattice_stride
    lo_l = tuple(math.ceil(c * stride) for c in lo)
    hi_l = tuple(math.floor(c * stride) for c in hi)
    return lo_l, hi_l


def survival_statistics(
    trajectory: TrajectoryRecord,
    ball_radius: float = 1.0,
    mass_floor: int = 1,
) -> TrialSummary:
    """TrialSummary of one run; the survival proxy is |X_horizon| >=
    mass_floor (censored runs only: extinct runs are never flagged)."""
    final_mass = trajectory.mass_path[-1]
    l1, l2 = ball_localtime_moments(trajectory, ball_radius)
    return TrialSummary(
        extinction_generation=trajectory.extinction_generation,
        generations_run=trajectory.generations_run,
        mass_path=list(trajectory.mass_path),
        radius_path=list(trajectory.radius_path),
        ball_l1=l1,
        ball_l2=l2,
        last_origin_box_generation=trajectory.last_box_alive_generation()
        if trajectory.box_alive_path
        else None,
        survival_proxy=final_mass >= mass_floor,
        stop_reason=trajectory.stop_reason,
    )
