"""Privacy-preserving power-consumption aggregation for metering trees.

Smart meters cover their readings with pairwise hash-chain masks that cancel
only in the community sum; the utility recovers aggregate consumption per
appliance class without ever seeing an individual meter's contribution.  A
Paillier pipeline over the same tree serves as the homomorphic baseline for
benchmarking.
"""

from .aggregation import (AggregateFrame, AggregateState, CoverTable,
                          MaskedReport, Mode, RecoveredTotal, bounded_dlog,
                          fold, make_report, merge_aggregate,
                          precompute_covers, unmask)
from .errors import AmiError
from .groups import GroupParams, KeyPair, hash_digest, sign, verify
from .keymgmt import (SeedKey, SessionKeySchedule, build_request,
                      derive_schedule, finalize, mask_for_round,
                      process_request)
from .loadcontrol import (AggregateView, ReductionRequest, interpret_aggregate,
                          open_request, plan_reduction, seal_request)
from .paillier import decrypt, encrypt
from .paillier import add_ciphertexts as paillier_add
from .paillier import keygen as paillier_keygen
from .simnet import (Community, RoundResult, Topology, build_tree,
                     collusion_probe, run_benchmark, run_round,
                     setup_community, summarize_benchmark)
from .vector import (Appliance, ApplianceReading, CodecConfig,
                     ConsumptionVector, Level, decode, encode, pack, unpack,
                     vec_add)

__version__ = "0.1.0"

__all__ = [
    "AggregateFrame", "AggregateState", "AggregateView", "AmiError",
    "Appliance", "ApplianceReading", "CodecConfig", "Community",
    "ConsumptionVector", "CoverTable", "GroupParams", "KeyPair", "Level",
    "MaskedReport",
    "Mode", "RecoveredTotal", "ReductionRequest", "RoundResult", "SeedKey",
    "SessionKeySchedule", "Topology", "bounded_dlog", "build_request",
    "build_tree", "collusion_probe", "decode", "decrypt", "derive_schedule",
    "encode", "encrypt", "finalize", "fold", "hash_digest",
    "interpret_aggregate", "make_report", "mask_for_round", "merge_aggregate",
    "open_request", "pack", "paillier_add", "paillier_keygen",
    "plan_reduction", "precompute_covers", "process_request",
    "run_benchmark", "run_round",
    "seal_request", "setup_community", "sign", "summarize_benchmark",
    "unmask", "unpack", "vec_add", "verify",
]
