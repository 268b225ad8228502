"""Demand-reduction planning over the recovered aggregate.

The utility sees only community totals per (appliance, level) cell.  A
reduction request drains the high-level cells first, then medium, and touches
low only when high + medium cannot cover the shortfall.  Within one level the
request is split across appliances proportionally to their consumption share
(largest-remainder rounding to whole power units, ties broken by the fixed
appliance order), so the plan is deterministic.

The request is broadcast to the community — the utility cannot address
individual meters precisely because it never learns individual readings — and
sealed with a session key using encrypt-then-digest framing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .aggregation import RecoveredTotal
from .errors import AmiError
from .groups import hash_digest, stream_xor
from .vector import CONTROLLABLE, LEVELS, Appliance, CodecConfig, Level

_SEAL_TAG = b"load-control-seal"


class LoadControlError(AmiError):
    pass


class InsufficientControllableLoad(LoadControlError):
    """Raised when the shortfall exceeds all controllable consumption.

    Carries the maximal request (every controllable cell fully drained) so the
    caller can still act on what is available.
    """

    def __init__(self, required: int, available: int,
                 maximal_request: "ReductionRequest"):
        super().__init__(f"required reduction {required} exceeds controllable "
                         f"load {available}")
        self.required = required
        self.available = available
        self.maximal_request = maximal_request


class SealedFrameError(LoadControlError):
    pass


@dataclass(frozen=True)
class LevelCell:
    meters_on: int
    consumption: int


@dataclass(frozen=True)
class AggregateView:
    """The recovered totals, relabeled per (appliance, level) cell."""

    cells: dict[tuple[Appliance, Level], LevelCell]
    uncontrollable: LevelCell  # (reporting meters, total uncontrollable load)

    def level_cells(self, level: Level) -> list[tuple[Appliance, LevelCell]]:
        return [(app, self.cells[(app, level)]) for app in CONTROLLABLE]

    def controllable_total(self) -> int:
        return sum(c.consumption for c in self.cells.values())


def interpret_aggregate(total: RecoveredTotal, cfg: CodecConfig) -> AggregateView:
    """Lossless relabeling of the recovered vector's fields."""
    v = total.total
    cells = {}
    for app in CONTROLLABLE:
        for lvl in LEVELS:
            cells[(app, lvl)] = LevelCell(
                meters_on=v.get(cfg, app, lvl, "count"),
                consumption=v.get(cfg, app, lvl, "consumption"))
    unc = LevelCell(
        meters_on=v.get(cfg, Appliance.UNCONTROLLABLE, None, "count"),
        consumption=v.get(cfg, Appliance.UNCONTROLLABLE, None, "consumption"))
    return AggregateView(cells=cells, uncontrollable=unc)


@dataclass(frozen=True)
class ReductionRequest:
    """Requested reduction per (appliance, level) cell, in power units."""

    cells: dict[tuple[Appliance, Level], int]
    target_total: int

    def asked(self, appliance: Appliance, level: Level) -> int:
        return self.cells.get((appliance, level), 0)

    def total_requested(self) -> int:
        return sum(self.cells.values())

    def to_json(self) -> dict:
        requests = []
        for app in CONTROLLABLE:
            for lvl in LEVELS:
                units = self.asked(app, lvl)
                if units:
                    requests.append({"appliance": app.value, "level": lvl.value,
                                     "units": units})
        return {"target_total": self.target_total, "requests": requests}

    @classmethod
    def from_json(cls, data: dict) -> "ReductionRequest":
        cells = {}
        for entry in data["requests"]:
            key = (Appliance(entry["appliance"]), Level(entry["level"]))
            if key in cells:
                raise ValueError(f"duplicate request cell {entry}")
            cells[key] = int(entry["units"])
        return cls(cells=cells, target_total=int(data["target_total"]))


def _split_level(take: int, cells: list[tuple[Appliance, LevelCell]]) -> dict:
    """Largest-remainder proportional split of `take` units across one level."""
    level_total = sum(c.consumption for _, c in cells)
    quotas = {}
    fractions = []
    assigned = 0
    for order, (app, cell) in enumerate(cells):
        exact = take * cell.consumption
        share = exact // level_total
        quotas[app] = share
        assigned += share
        remainder = exact % level_total
        if remainder:
            fractions.append((-remainder, order, app))
    for _, _, app in sorted(fractions)[:take - assigned]:
        quotas[app] += 1
    return quotas


def plan_reduction(view: AggregateView, required: int) -> ReductionRequest:
    """Greedy waterfall: drain High, then Medium, then Low."""
    if required < 0:
        raise ValueError("required reduction must be non-negative")
    cells: dict[tuple[Appliance, Level], int] = {}
    remaining = required
    for level in (Level.HIGH, Level.MEDIUM, Level.LOW):
        level_cells = view.level_cells(level)
        level_total = sum(c.consumption for _, c in level_cells)
        if remaining == 0 or level_total == 0:
            continue
        take = min(remaining, level_total)
        for app, units in _split_level(take, level_cells).items():
            if units:
                cells[(app, level)] = units
        remaining -= take
    request = ReductionRequest(cells=cells, target_total=required - remaining)
    if remaining > 0:
        raise InsufficientControllableLoad(
            required=required, available=view.controllable_total(),
            maximal_request=request)
    return request


def seal_request(req: ReductionRequest, session_key: bytes) -> bytes:
    """Encrypt-then-digest framing for the downlink broadcast."""
    body = json.dumps(req.to_json(), sort_keys=True,
                      separators=(",", ":")).encode()
    ct = stream_xor(session_key, body)
    return ct + hash_digest(_SEAL_TAG + session_key + ct)


def open_request(frame: bytes, session_key: bytes) -> ReductionRequest:
    if len(frame) < 32:
        raise SealedFrameError("sealed frame too short")
    ct, tag = frame[:-32], frame[-32:]
    if hash_digest(_SEAL_TAG + session_key + ct) != tag:
        raise SealedFrameError("sealed frame digest mismatch")
    try:
        return ReductionRequest.from_json(json.loads(stream_xor(session_key, ct)))
    except (ValueError, KeyError, TypeError) as exc:
        raise SealedFrameError(f"sealed frame malformed after decrypt: {exc}") from None
