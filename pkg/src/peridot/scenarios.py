"""Named scenarios that replay worked examples, plus the residual-error workload.

Each entry pairs a scenario document with the engine settings used to
identify its trace.
"""

from __future__ import annotations

from typing import Any

from .backend import EngineConfig
from .errors import NotFoundError
from .sim import ScenarioConfig

# inc/dec over q = 20: inc sends 1 2 3 4, dec sends 10 9 [8] 7 [6] 5 [4] 3
# ([x] erased), interleaved so the receiver sees 1 2 10 9 3 7 5 3 4.
_EXAMPLE6 = {
    "name": "example6",
    "q": 20,
    "l": 9,
    "increments": [1, 19],
    "devices": 2,
    "names": ["inc", "dec"],
    "initial_cn": [0, 11],
    "schedule": [
        [0, False], [0, False], [1, False], [1, False], [0, False], [1, True],
        [1, False], [1, True], [1, False], [1, True], [1, False], [0, False],
    ],
    "seed": 6,
}

# Increments 1, 21 and 91 of the p = 11, l = 10 construction; the
# increment-21 device sends 77, loses 98, then sends 9.
_EXAMPLE5 = {
    "name": "example5",
    "q": 110,
    "l": 10,
    "increments": [1, 21, 91],
    "devices": 3,
    "names": ["T1", "T21", "T91"],
    "initial_cn": [0, 56, 0],
    "schedule": [[1, False], [1, True], [1, False]],
    "seed": 5,
}

# Identification from CNs alone, as in the worked examples; MACs are only
# checked before delivery.
_CN_ONLY = {"mac_weighting": False, "region_hops_per_packet": None}

_RESIDUAL = {
    "name": "residual",
    "p": 101,
    "l": 10,
    "devices": 50,
    "epsilon": 0.05,
    "events": 100_000,
    "mean_interarrival": 50.0,
    "regions": {
        "nodes": ["R0", "R1", "R2", "R3", "R4", "R5"],
        "edges": [["R0", "R1"], ["R1", "R2"], ["R2", "R3"], ["R3", "R4"], ["R4", "R5"], ["R5", "R0"]],
    },
    "mobility_prob": 0.01,
    "t_bits": 32,
    "seed": 0,
}

BUNDLED: dict[str, tuple[dict[str, Any], dict[str, Any]]] = {
    "example6": (_EXAMPLE6, {"epsilon": 0.1, **_CN_ONLY}),
    # At q = 110 "77 and 9 are first packets of two different devices" is only
    # about q*eps*(1-eps) ~ 10 times less likely than one device with one loss.
    "example5": (_EXAMPLE5, {"epsilon": 0.1, "delivery_ratio": 5.0, **_CN_ONLY}),
    "residual": (_RESIDUAL, {"epsilon": 0.05}),
}


def bundled(name: str, **overrides: Any) -> tuple[ScenarioConfig, EngineConfig]:
    try:
        scenario, engine = BUNDLED[name]
    except KeyError:
        raise NotFoundError(f"no bundled scenario {name!r}; have {sorted(BUNDLED)}") from None
    return ScenarioConfig.from_json({**scenario, **overrides}), EngineConfig.from_json(engine)
