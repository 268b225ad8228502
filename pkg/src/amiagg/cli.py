"""Command-line front door: key agreement demos, single rounds, benchmark
sweeps, and collusion probes.

Exit codes: 0 success, 1 configuration/input error, 2 protocol error,
3 check failure (--check).  All JSON outputs embed the reproducibility
triple (config_hash, seed, version) and are byte-stable under a fixed seed;
the bench CSV carries the triple in comment lines (its measured durations
are the one intentionally non-deterministic output).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import random
import sys

from . import __version__, _arith
from . import loadcontrol as lc
from . import simnet
from .errors import AmiError
from .groups import GroupParams
from .simnet import SCHEMES, build_tree, random_readings, setup_community
from .vector import (Appliance, ApplianceReading, CodecConfig, Level)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROTOCOL = 2
EXIT_CHECK = 3


@dataclasses.dataclass
class ScenarioConfig:
    seed: int = 1
    n: int = 3
    arity: int = 2
    scheme: str = "masked-group"
    profile: str = "toy"  # toy | production
    toy_order: int = 65521
    count_bits: int = 8
    consumption_bits: int = 16
    max_meters: int = 255
    chain_length: int = 8
    window: int = 60
    paillier_bits: int = 384
    hop_latency_ns: int = 0
    epoch: int = 0
    drop_probability: float = 0.0
    bench_n: tuple[int, ...] = (8, 16, 32)
    bench_rounds: int = 5
    bench_schemes: tuple[str, ...] = SCHEMES

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.profile not in ("toy", "production"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.n < 1 or self.arity < 1:
            raise ValueError("need n >= 1 and arity >= 1")
        if self.n > self.max_meters:
            raise ValueError(f"n={self.n} exceeds max_meters={self.max_meters}")
        if self.chain_length < 0 or self.window < 1:
            raise ValueError("chain_length must be >= 0 and window >= 1")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop_probability must be in [0, 1)")
        for s in self.bench_schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown bench scheme {s!r}")

    def config_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def group(self) -> GroupParams:
        if self.profile == "production":
            return GroupParams.production()
        return GroupParams.toy(order=self.toy_order)

    def codec(self) -> CodecConfig:
        return CodecConfig(count_bits=self.count_bits,
                           consumption_bits=self.consumption_bits,
                           max_meters=self.max_meters)


_LIST_FIELDS = {"bench_n": int, "bench_schemes": str}


def load_config(path: str | None, overrides: dict) -> ScenarioConfig:
    cfg = ScenarioConfig()
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for k, v in data.items():
            setattr(cfg, k, tuple(v) if k in _LIST_FIELDS else v)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.bench_n = tuple(int(x) for x in cfg.bench_n)
    cfg.bench_schemes = tuple(cfg.bench_schemes)
    cfg.validate()
    return cfg


def _provenance(cfg: ScenarioConfig) -> dict:
    return {"version": __version__, "config_hash": cfg.config_hash(),
            "seed": cfg.seed}


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


def _dump(obj: dict, out: str | None) -> None:
    _emit(json.dumps(obj, indent=2, sort_keys=True), out)


def _reading_from_json(item: dict) -> ApplianceReading:
    app = Appliance(item["appliance"])
    if app is Appliance.UNCONTROLLABLE:
        return ApplianceReading.uncontrollable(int(item.get("consumption", 0)))
    if not item.get("on", False):
        return ApplianceReading.off(app)
    return ApplianceReading.on(app, Level(item["level"]),
                               int(item.get("consumption", 0)))


def load_readings(path: str, n: int) -> dict[int, list[ApplianceReading]]:
    """Readings file: {"1": [{"appliance": "hvac", "on": true,
    "level": "high", "consumption": 35}, ...], ...} for meters 1..n."""
    with open(path) as fh:
        data = json.load(fh)
    readings = {}
    for key, items in data.items():
        m = int(key)
        if not 1 <= m <= n:
            raise ValueError(f"readings for unknown meter {m}")
        readings[m] = [_reading_from_json(it) for it in items]
    missing = set(range(1, n + 1)) - set(readings)
    if missing:
        raise ValueError(f"missing readings for meters {sorted(missing)}")
    return readings


def _build(cfg: ScenarioConfig, need_paillier: bool):
    rng = random.Random(cfg.seed)
    params = cfg.group()
    codec = cfg.codec()
    topo = build_tree(cfg.n, cfg.arity)
    community = setup_community(
        params, topo, codec, t=cfg.chain_length, rng=rng, now=cfg.epoch,
        window=cfg.window,
        paillier_bits=cfg.paillier_bits if need_paillier else None)
    return rng, community


# -- subcommands --------------------------------------------------------------

def cmd_keys(cfg: ScenarioConfig, args) -> int:
    _, community = _build(cfg, need_paillier=False)
    doc = dict(_provenance(cfg), n=cfg.n, arity=cfg.arity,
               chain_length=community.meter_schedules[1].chain_length,
               schedules={str(m): community.meter_schedules[m].fingerprint()
                          for m in sorted(community.meter_schedules)})
    _dump(doc, args.out)
    return EXIT_OK


def cmd_round(cfg: ScenarioConfig, args) -> int:
    rng, community = _build(cfg, need_paillier=cfg.scheme == simnet.SCHEME_PAILLIER)
    codec = community.cfg
    if args.readings:
        readings = load_readings(args.readings, cfg.n)
    else:
        bound = min((1 << codec.consumption_bits) - 1, community.params.q - 1)
        readings = random_readings(rng, cfg.n, codec, max_field_sum=bound)
    result = simnet.run_round(community, cfg.scheme, readings, 0,
                              now=cfg.epoch, rng=rng,
                              hop_latency_ns=cfg.hop_latency_ns,
                              drop_probability=cfg.drop_probability)
    doc = dict(_provenance(cfg), scheme=cfg.scheme, n=cfg.n, arity=cfg.arity,
               round=0, ok=result.ok, diagnostic=result.diagnostic,
               message_count=result.message_count,
               bytes_on_wire=result.bytes_on_wire)
    if result.recovered is not None:
        doc["recovered"] = {
            "contributing_meters": result.recovered.contributing_meters,
            "contributors": list(result.recovered.contributors),
            "total": result.recovered.total.to_json(codec),
        }
    reduce_failed = False
    if args.reduce is not None:
        if result.recovered is None:
            raise AmiError("no recovered total to plan a reduction from")
        view = lc.interpret_aggregate(result.recovered, codec)
        try:
            request = lc.plan_reduction(view, args.reduce)
            doc["reduction"] = request.to_json()
        except lc.InsufficientControllableLoad as exc:
            reduce_failed = True
            doc["reduction"] = {
                "error": "insufficient_controllable_load",
                "required": exc.required, "available": exc.available,
                "maximal_request": exc.maximal_request.to_json(),
            }
    _dump(doc, args.out)
    if not result.ok:
        return EXIT_CHECK if args.check else EXIT_PROTOCOL
    if reduce_failed:
        return EXIT_PROTOCOL
    return EXIT_OK


def cmd_bench(cfg: ScenarioConfig, args) -> int:
    if not cfg.bench_n or not cfg.bench_schemes or cfg.bench_rounds < 1:
        raise ValueError("benchmark sweep is empty")
    if args.backend:
        _arith.set_backend(args.backend)
    rng = random.Random(cfg.seed)
    params = cfg.group()
    codec = cfg.codec()
    points = [(s, n, cfg.arity) for s in cfg.bench_schemes for n in cfg.bench_n]
    for _, n, _ in points:
        if n > codec.max_meters:
            raise ValueError(f"bench n={n} exceeds max_meters={codec.max_meters}")
    rows = simnet.run_benchmark(
        points, cfg.bench_rounds, params, codec, rng,
        paillier_bits=cfg.paillier_bits, hop_latency_ns=cfg.hop_latency_ns,
        progress=(lambda s, n, a: print(f"# done {s} n={n} arity={a}",
                                        file=sys.stderr))
        if args.verbose else None)
    lines = [f"# amiagg {__version__} bench",
             f"# config_hash={cfg.config_hash()} seed={cfg.seed} "
             f"backend={_arith.active_backend()}",
             ",".join(simnet.BENCH_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in simnet.BENCH_COLUMNS))
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_probe(cfg: ScenarioConfig, args) -> int:
    if cfg.scheme == simnet.SCHEME_PAILLIER:
        raise ValueError("the collusion probe applies to the masked schemes")
    compromised = {int(x) for x in args.compromised.split(",")} \
        if args.compromised else set()
    rng, community = _build(cfg, need_paillier=False)
    codec = community.cfg
    bound = min((1 << codec.consumption_bits) - 1, community.params.q - 1)
    readings = random_readings(rng, cfg.n, codec, max_field_sum=bound)
    result = simnet.run_round(community, cfg.scheme, readings, 0,
                              now=cfg.epoch, rng=rng)
    if not result.ok:
        raise AmiError(f"probe round failed: {result.diagnostic}")
    report = simnet.collusion_probe(
        community, result, compromised,
        compromised_readings={m: readings[m] for m in compromised})
    _dump(dict(_provenance(cfg), **report.to_json()), args.out)
    if args.check and not report.all_private:
        return EXIT_CHECK
    return EXIT_OK


# -- argument plumbing --------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--n", type=int)
    p.add_argument("--arity", type=int)
    p.add_argument("--t", type=int, dest="chain_length",
                   help="session key chain length")
    p.add_argument("--profile", choices=("toy", "production"))
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--check", action="store_true",
                   help="verify results and exit 3 on failure")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amiagg",
        description="Privacy-preserving power aggregation over metering trees")
    parser.add_argument("--version", action="version",
                        version=f"amiagg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keys", help="run key agreement, print fingerprints")
    _add_common(p)

    p = sub.add_parser("round", help="run one aggregation round")
    _add_common(p)
    p.add_argument("--readings", help="per-meter readings JSON")
    p.add_argument("--reduce", type=int,
                   help="plan a load reduction of this many power units")

    p = sub.add_parser("bench", help="benchmark sweep, CSV output")
    _add_common(p)
    p.add_argument("--bench-n", help="comma-separated community sizes")
    p.add_argument("--rounds", type=int, help="rounds per sweep point")
    p.add_argument("--schemes", help="comma-separated schemes to sweep")
    p.add_argument("--backend", choices=_arith.available_backends(),
                   help="arithmetic backend override")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("probe", help="collusion probe over one round")
    _add_common(p)
    p.add_argument("--compromised", help="comma-separated colluding meter ids")
    return parser


_COMMANDS = {"keys": cmd_keys, "round": cmd_round, "bench": cmd_bench,
             "probe": cmd_probe}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k, None)
                 for k in ("seed", "scheme", "n", "arity", "chain_length",
                           "profile")}
    try:
        if getattr(args, "bench_n", None) is not None:
            overrides["bench_n"] = tuple(int(x) for x in
                                         args.bench_n.split(",") if x.strip())
        if getattr(args, "rounds", None) is not None:
            overrides["bench_rounds"] = args.rounds
        if getattr(args, "schemes", None) is not None:
            overrides["bench_schemes"] = tuple(
                s for s in args.schemes.split(",") if s.strip())
        cfg = load_config(args.config, overrides)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "config", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg, args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "config", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG
    except AmiError as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
