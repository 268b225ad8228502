"""Bit-exact codec for the five-group appliance consumption vector.

A vector is 26 ordered non-negative integers: for each of the four
controllable appliances (water heater, dryer, EV charger, HVAC) and each of
the three levels (low, medium, high) a (count, consumption) pair, then one
(count, consumption) pair for everything uncontrollable.  Packing lays the
fields out most-significant-first in that order, count before consumption, so
the uncontrollable consumption occupies the least-significant bits.

Field widths come from CodecConfig (defaults: 8-bit counts, 16-bit
consumptions, 312 bits total).  Because every field has a fixed width,
integer addition of two packed vectors equals the packed field-wise sum as
long as no field overflows — the homomorphism that both the masking scheme
and the Paillier baseline aggregate through.

Consumption is in abstract integer power units; there is no watt scaling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

from .errors import AmiError
from .groups import hash_digest


class CodecError(AmiError):
    pass


class ConsumptionOverflow(CodecError):
    pass


class ValueOutOfRange(CodecError):
    pass


class FieldOverflow(CodecError):
    pass


class Appliance(enum.Enum):
    WATER_HEATER = "water_heater"
    DRYER = "dryer"
    EV_CHARGER = "ev_charger"
    HVAC = "hvac"
    UNCONTROLLABLE = "uncontrollable"


class Level(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


CONTROLLABLE = (Appliance.WATER_HEATER, Appliance.DRYER,
                Appliance.EV_CHARGER, Appliance.HVAC)
LEVELS = (Level.LOW, Level.MEDIUM, Level.HIGH)

FIELD_COUNT = 26  # 4 appliances x 3 levels x 2 subfields + uncontrollable pair


@dataclass(frozen=True)
class FieldSpec:
    index: int
    name: str
    appliance: Appliance
    level: Level | None
    kind: str  # "count" | "consumption"
    width: int
    offset: int  # bit offset from the least-significant end


@dataclass(frozen=True)
class CodecConfig:
    count_bits: int = 8
    consumption_bits: int = 16
    max_meters: int = 255

    def __post_init__(self):
        if self.count_bits < 1 or self.consumption_bits < 1:
            raise ValueError("field widths must be at least 1 bit")
        if not 1 <= self.max_meters <= (1 << self.count_bits) - 1:
            raise ValueError(
                f"max_meters {self.max_meters} exceeds {self.count_bits}-bit counts")

    @cached_property
    def fields(self) -> tuple[FieldSpec, ...]:
        widths = []
        for app in CONTROLLABLE:
            for lvl in LEVELS:
                widths.append((f"{app.value}.{lvl.value}.count", app, lvl,
                               "count", self.count_bits))
                widths.append((f"{app.value}.{lvl.value}.consumption", app, lvl,
                               "consumption", self.consumption_bits))
        widths.append((f"{Appliance.UNCONTROLLABLE.value}.count",
                       Appliance.UNCONTROLLABLE, None, "count", self.count_bits))
        widths.append((f"{Appliance.UNCONTROLLABLE.value}.consumption",
                       Appliance.UNCONTROLLABLE, None, "consumption",
                       self.consumption_bits))
        total = sum(w for *_, w in widths)
        specs = []
        consumed = 0
        for i, (name, app, lvl, kind, width) in enumerate(widths):
            consumed += width
            specs.append(FieldSpec(index=i, name=name, appliance=app, level=lvl,
                                   kind=kind, width=width, offset=total - consumed))
        return tuple(specs)

    @cached_property
    def total_bits(self) -> int:
        return sum(f.width for f in self.fields)

    @cached_property
    def field_by_name(self) -> dict[str, FieldSpec]:
        return {f.name: f for f in self.fields}

    def field_of(self, appliance: Appliance, level: Level | None, kind: str) -> FieldSpec:
        if appliance is Appliance.UNCONTROLLABLE:
            name = f"{appliance.value}.{kind}"
        else:
            name = f"{appliance.value}.{level.value}.{kind}"
        return self.field_by_name[name]

    @cached_property
    def config_hash(self) -> bytes:
        """Digest of the full layout; mixed into frame digests so either end
        of a link notices a codec disagreement instead of mis-parsing."""
        desc = "|".join(f"{f.name}:{f.width}" for f in self.fields)
        desc += f"|max_meters={self.max_meters}"
        return hash_digest(desc.encode())


@dataclass(frozen=True)
class ApplianceReading:
    """State of one appliance slot of one meter at report time."""

    appliance: Appliance
    is_on: bool
    level: Level | None = None
    consumption: int = 0

    def __post_init__(self):
        if self.consumption < 0:
            raise ValueError("consumption must be non-negative")
        if self.appliance is Appliance.UNCONTROLLABLE:
            if self.level is not None:
                raise ValueError("uncontrollable load has no level")
        elif self.is_on:
            if self.level is None:
                raise ValueError("an ON controllable appliance needs a level")
        else:
            if self.level is not None or self.consumption:
                raise ValueError("an OFF appliance carries no level or consumption")

    @classmethod
    def off(cls, appliance: Appliance) -> "ApplianceReading":
        return cls(appliance=appliance, is_on=False)

    @classmethod
    def on(cls, appliance: Appliance, level: Level, consumption: int) -> "ApplianceReading":
        return cls(appliance=appliance, is_on=True, level=level, consumption=consumption)

    @classmethod
    def uncontrollable(cls, consumption: int) -> "ApplianceReading":
        return cls(appliance=Appliance.UNCONTROLLABLE, is_on=True,
                   consumption=consumption)


@dataclass(frozen=True)
class ConsumptionVector:
    """26 field values in layout order; one meter's reading or an aggregate."""

    values: tuple[int, ...]

    def __post_init__(self):
        if len(self.values) != FIELD_COUNT:
            raise ValueError(f"expected {FIELD_COUNT} fields, got {len(self.values)}")
        if any(v < 0 for v in self.values):
            raise ValueError("field values must be non-negative")

    @classmethod
    def zeros(cls) -> "ConsumptionVector":
        return cls(values=(0,) * FIELD_COUNT)

    def get(self, cfg: CodecConfig, appliance: Appliance,
            level: Level | None, kind: str) -> int:
        return self.values[cfg.field_of(appliance, level, kind).index]

    def to_json(self, cfg: CodecConfig) -> dict[str, int]:
        return {f.name: self.values[f.index] for f in cfg.fields}

    @classmethod
    def from_json(cls, cfg: CodecConfig, data: dict[str, int]) -> "ConsumptionVector":
        unknown = set(data) - set(cfg.field_by_name)
        if unknown:
            raise ValueError(f"unknown vector fields: {sorted(unknown)}")
        return cls(values=tuple(int(data.get(f.name, 0)) for f in cfg.fields))


def encode(readings: list[ApplianceReading], cfg: CodecConfig) -> ConsumptionVector:
    """One meter's readings -> vector.

    Controllable appliances may appear at most once; missing slots count as
    OFF.  Uncontrollable readings may repeat and are summed.  The
    uncontrollable count field is always 1 — a reporting meter reports, even
    if everything is off — which is what lets the utility learn how many
    meters participated.
    """
    cap = 1 << cfg.consumption_bits
    values = [0] * FIELD_COUNT
    seen: set[Appliance] = set()
    unc_total = 0
    for r in readings:
        if r.appliance is Appliance.UNCONTROLLABLE:
            unc_total += r.consumption
            continue
        if r.appliance in seen:
            raise ValueError(f"duplicate reading for {r.appliance.value}")
        seen.add(r.appliance)
        if not r.is_on:
            continue
        if r.consumption >= cap:
            raise ConsumptionOverflow(
                f"{r.appliance.value} consumption {r.consumption} needs more than "
                f"{cfg.consumption_bits} bits")
        values[cfg.field_of(r.appliance, r.level, "count").index] = 1
        values[cfg.field_of(r.appliance, r.level, "consumption").index] = r.consumption
    if unc_total >= cap:
        raise ConsumptionOverflow(
            f"uncontrollable total {unc_total} needs more than "
            f"{cfg.consumption_bits} bits")
    values[cfg.field_of(Appliance.UNCONTROLLABLE, None, "count").index] = 1
    values[cfg.field_of(Appliance.UNCONTROLLABLE, None, "consumption").index] = unc_total
    return ConsumptionVector(values=tuple(values))


def decode(v: ConsumptionVector, cfg: CodecConfig) -> list[ApplianceReading]:
    """Vector -> canonical reading list (inverse of encode for single meters)."""
    readings = []
    for app in CONTROLLABLE:
        on_levels = [lvl for lvl in LEVELS
                     if v.get(cfg, app, lvl, "count")]
        if not on_levels:
            readings.append(ApplianceReading.off(app))
            continue
        if len(on_levels) > 1:
            raise ValueError(f"{app.value} is ON at multiple levels; not a "
                             "single-meter vector")
        lvl = on_levels[0]
        if v.get(cfg, app, lvl, "count") != 1:
            raise ValueError(f"{app.value} count is not 0/1; not a single-meter vector")
        readings.append(ApplianceReading.on(app, lvl, v.get(cfg, app, lvl, "consumption")))
    readings.append(ApplianceReading.uncontrollable(
        v.get(cfg, Appliance.UNCONTROLLABLE, None, "consumption")))
    return readings


def is_single_meter_well_formed(v: ConsumptionVector, cfg: CodecConfig) -> bool:
    for app in CONTROLLABLE:
        on = 0
        for lvl in LEVELS:
            count = v.get(cfg, app, lvl, "count")
            cons = v.get(cfg, app, lvl, "consumption")
            if count not in (0, 1):
                return False
            if count == 0 and cons != 0:
                return False
            on += count
        if on > 1:
            return False
    return v.get(cfg, Appliance.UNCONTROLLABLE, None, "count") == 1


def pack(v: ConsumptionVector, cfg: CodecConfig) -> int:
    """Vector -> big unsigned integer, fields MSB-first in layout order."""
    acc = 0
    for f in cfg.fields:
        val = v.values[f.index]
        if val >> f.width:
            raise ValueOutOfRange(
                f"field {f.name} value {val} does not fit {f.width} bits")
        acc = (acc << f.width) | val
    return acc


def unpack(x: int, cfg: CodecConfig) -> ConsumptionVector:
    if x < 0 or x >> cfg.total_bits:
        raise ValueOutOfRange(f"packed value does not fit {cfg.total_bits} bits")
    values = [0] * FIELD_COUNT
    for f in cfg.fields:
        values[f.index] = (x >> f.offset) & ((1 << f.width) - 1)
    return ConsumptionVector(values=tuple(values))


def vec_add(a: ConsumptionVector, b: ConsumptionVector,
            cfg: CodecConfig) -> ConsumptionVector:
    """Field-wise sum; overflow of any field means a misconfigured community."""
    out = []
    for f in cfg.fields:
        s = a.values[f.index] + b.values[f.index]
        if s >> f.width:
            raise FieldOverflow(
                f"field {f.name} sum {s} exceeds {f.width}-bit capacity")
        out.append(s)
    return ConsumptionVector(values=tuple(out))
