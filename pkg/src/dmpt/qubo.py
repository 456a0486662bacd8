"""Compilation of a :class:`DiscreteProblem` into a QUBO and its Ising form.

Each asset's lot count is written in bounded binary: ``B = floor(log2 N) + 1``
bits with place values ``1, 2, ..., 2**(B-2), N - 2**(B-1) + 1`` so that the
decodable range is exactly ``0..N``. The budget and ESG inequalities get a
non-negative slack integer in the same encoding and enter as squared
equality penalties; the lot-sum constraint is penalized without slack.

Energies use the convention

    E(a) = offset + linear . a + sum_{i<j} quadratic[i, j] * a_i * a_j

with ``quadratic`` symmetric and zero on the diagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .discrete import DiscreteProblem, FeasibilityReport, check_feasible
from .errors import InputError

MAX_SLACK_BITS = 63


def spin_to_bit(s):
    s = np.asarray(s)
    if not np.all((s == 1) | (s == -1)):
        raise InputError("spins must be -1 or +1")
    out = (s + 1) // 2
    return int(out) if out.ndim == 0 else out.astype(np.int8)


def bit_to_spin(a):
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise InputError("bits must be 0 or 1")
    out = 2 * a - 1
    return int(out) if out.ndim == 0 else out.astype(np.int8)


def qubit_bound(k: int, n_tot: int) -> int:
    """Upper bound ``ceil(k * (log2(N+1) + 1))`` on the bits needed for the lots."""
    return math.ceil(k * (math.log2(n_tot + 1) + 1))


def bounded_places(n: int) -> list:
    """Place values whose subset sums cover exactly ``0..n``."""
    if n < 0:
        raise InputError("range bound must be non-negative")
    if n == 0:
        return []
    m = n.bit_length()
    return [1 << i for i in range(m - 1)] + [n - (1 << (m - 1)) + 1]


def encode_value(v: int, places) -> list:
    """Bits representing ``v`` under :func:`bounded_places` (greedy on the top place)."""
    m = len(places)
    if v < 0 or v > sum(places):
        raise InputError(f"value {v} outside the encodable range 0..{sum(places)}")
    if m == 0:
        return []
    low = (1 << (m - 1)) - 1
    top = 0
    if v > low:
        top, v = 1, v - places[-1]
    return [(v >> i) & 1 for i in range(m - 1)] + [top]


def _decimal_scale(values, max_decimals: int) -> Optional[int]:
    """Smallest power of ten turning every value into an integer, if one exists."""
    values = np.asarray(values, dtype=float)
    for d in range(max_decimals + 1):
        scaled = values * 10**d
        if np.all(np.abs(scaled - np.round(scaled)) <= 1e-7 * np.maximum(1.0, np.abs(scaled))):
            return 10**d
    return None


@dataclass(frozen=True)
class BitRange:
    start: int
    places: tuple

    @property
    def stop(self) -> int:
        return self.start + len(self.places)

    def value(self, bits) -> int:
        return int(np.dot(np.asarray(bits[self.start:self.stop], dtype=np.int64), self.places)) if self.places else 0

    def to_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop, "places": list(self.places)}


@dataclass(frozen=True)
class QuboInstance:
    num_bits: int
    linear: np.ndarray
    quadratic: np.ndarray
    offset: float
    assets: tuple
    slacks: dict
    penalty_weights: dict
    units: dict = field(default_factory=dict)
    problem: Optional[DiscreteProblem] = field(default=None, compare=False, repr=False)

    @property
    def lot_bits(self) -> int:
        return sum(len(r.places) for r in self.assets)

    def energy(self, bits) -> np.ndarray:
        """Energy of one assignment (1-D) or of each row of a 2-D batch."""
        a = np.asarray(bits, dtype=float)
        if a.shape[-1] != self.num_bits:
            raise InputError(f"assignment length {a.shape[-1]} != {self.num_bits}")
        e = self.offset + a @ self.linear + 0.5 * np.einsum("...i,ij,...j->...", a, self.quadratic, a)
        return float(e) if a.ndim == 1 else e

    def lots(self, bits) -> np.ndarray:
        return np.array([r.value(bits) for r in self.assets], dtype=np.int64)

    def place_matrix(self) -> np.ndarray:
        """``C`` with ``lots = C @ bits``."""
        c = np.zeros((len(self.assets), self.num_bits))
        for i, r in enumerate(self.assets):
            c[i, r.start:r.stop] = r.places
        return c

    def to_dict(self) -> dict:
        iu, ju = np.triu_indices(self.num_bits, k=1)
        w = self.quadratic[iu, ju]
        nz = w != 0
        tickers = self.problem.stats.tickers if self.problem is not None else [None] * len(self.assets)
        return {
            "num_bits": self.num_bits,
            "offset": self.offset,
            "linear": self.linear.tolist(),
            "quadratic": [[int(i), int(j), float(v)] for i, j, v in zip(iu[nz], ju[nz], w[nz])],
            "decode_map": {
                "assets": [dict(ticker=t, **r.to_dict()) for t, r in zip(tickers, self.assets)],
                "slack": {name: r.to_dict() for name, r in self.slacks.items()},
            },
            "penalty_weights": dict(self.penalty_weights),
            "units": dict(self.units),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict, problem: Optional[DiscreteProblem] = None) -> "QuboInstance":
        n = int(doc["num_bits"])
        quad = np.zeros((n, n))
        for i, j, v in doc["quadratic"]:
            quad[i, j] = quad[j, i] = v
        dm = doc["decode_map"]
        assets = tuple(BitRange(a["start"], tuple(a["places"])) for a in dm["assets"])
        slacks = {k: BitRange(v["start"], tuple(v["places"])) for k, v in dm["slack"].items()}
        return cls(n, np.array(doc["linear"], dtype=float), quad, float(doc["offset"]), assets, slacks,
                   dict(doc["penalty_weights"]), dict(doc.get("units", {})), problem)


@dataclass(frozen=True)
class SpinInstance:
    """``E(s) = offset + field . s + sum_{i<j} coupling[i, j] s_i s_j`` over ``s in {-1, +1}``."""

    field: np.ndarray
    coupling: np.ndarray
    offset: float

    def energy(self, spins) -> np.ndarray:
        s = np.asarray(spins, dtype=float)
        e = self.offset + s @ self.field + 0.5 * np.einsum("...i,ij,...j->...", s, self.coupling, s)
        return float(e) if s.ndim == 1 else e


@dataclass(frozen=True)
class DecodeResult:
    lots: np.ndarray
    report: Optional[FeasibilityReport]
    slack_values: dict
    residuals: dict

    @property
    def exact(self) -> bool:
        """Feasible lots and every penalty residual zero (energy equals the objective)."""
        return all(v == 0 for v in self.residuals.values())


class _Builder:
    """Accumulates ``c + h.a + a'Ga`` and converts it to the upper-pair convention."""

    def __init__(self, n):
        self.g = np.zeros((n, n))
        self.h = np.zeros(n)
        self.c = 0.0

    def add_square(self, weight, v, v0):
        self.g += weight * np.outer(v, v)
        self.h += 2.0 * weight * v0 * v
        self.c += weight * v0 * v0

    def finish(self):
        diag = np.diag(self.g).copy()
        quad = self.g + self.g.T
        np.fill_diagonal(quad, 0.0)
        return self.h + diag, quad, self.c


def objective_bounds(problem: DiscreteProblem):
    """Coefficient bounds used for automatic penalty weights.

    Returns ``(spread, per_lot)``: an upper bound on the range of the
    objective over the box ``0 <= x_i <= N``, and on the change caused by
    adding or removing a single lot anywhere in that box.
    """
    s = problem.stats
    n = problem.n_tot
    phi = abs(problem.phi_d)
    abs_cov = np.abs(s.covariance)
    spread = 0.5 * phi * n * n * abs_cov.sum() + n * np.abs(s.returns).sum()
    per_lot = phi * n * abs_cov.sum(axis=1).max() + 0.5 * phi * abs_cov.diagonal().max() + np.abs(s.returns).max()
    return float(spread), float(per_lot)


def encode(problem: DiscreteProblem, penalties: Optional[dict] = None,
           price_decimals: int = 2, esg_decimals: int = 6) -> QuboInstance:
    """Build the QUBO for ``problem``.

    ``penalties`` may override any of ``lot_sum``, ``budget`` and ``esg``.
    Prices are put on an integer grid of at most ``price_decimals`` decimals
    (cents by default) so that the slack arithmetic is exact; prices with
    finer resolution are rounded and the instance is flagged
    ``units['budget_exact'] = False``. Constraints that no composition can
    violate are dropped.
    """
    k, n = problem.k, problem.n_tot
    cap = problem.esg_cap
    if cap is not None and cap.order != 1:
        raise InputError("only the order-1 ESG cap is QUBO-encodable; use the integer-space sampler")

    assets, pos = [], 0
    for _ in range(k):
        places = tuple(bounded_places(n))
        assets.append(BitRange(pos, places))
        pos += len(places)
    lot_bits = pos
    units = {}
    slacks = {}
    constraints = []  # (name, integer lot coefficients, integer rhs)

    if problem.budget is not None:
        p = problem.stats.prices
        scale = _decimal_scale(p, price_decimals)
        units["budget_exact"] = scale is not None
        scale = scale or 10**price_decimals
        pu = np.round(p * scale).astype(np.int64)
        bu = math.floor(problem.budget * scale + 1e-9)
        units["price_scale"] = scale
        if n * int(pu.max()) > bu:
            constraints.append(("budget", pu, bu))
    if cap is not None:
        coef = cap.coefficients()
        scale = _decimal_scale(coef, esg_decimals)
        if scale is None:
            raise InputError("ESG gaps are not representable on a decimal grid")
        cu = np.round(coef * scale).astype(np.int64)
        ru = math.floor(cap.rhs(n) * scale + 1e-9)
        units["esg_scale"] = scale
        if n * int(cu.max()) > ru:
            constraints.append(("esg", cu, ru))

    for name, coef, rhs in constraints:
        bound = max(rhs - n * int(coef.min()), 0)
        places = tuple(bounded_places(bound))
        if len(places) > MAX_SLACK_BITS:
            raise InputError(f"{name} slack would need {len(places)} bits")
        slacks[name] = BitRange(pos, places)
        pos += len(places)
    num_bits = pos

    spread, per_lot = objective_bounds(problem)
    auto_constraint = 2.0 * spread if spread > 0 else 1.0
    if constraints:
        auto_sum = auto_constraint
    else:
        auto_sum = 2.0 * per_lot if per_lot > 0 else 1.0
    weights = {"lot_sum": auto_sum, "budget": auto_constraint if "budget" in slacks else 0.0,
               "esg": auto_constraint if "esg" in slacks else 0.0}
    if penalties:
        unknown = set(penalties) - set(weights)
        if unknown:
            raise InputError(f"unknown penalty name(s): {', '.join(sorted(unknown))}")
        weights.update({key: float(v) for key, v in penalties.items()})

    c = np.zeros((k, num_bits))
    for i, r in enumerate(assets):
        c[i, r.start:r.stop] = r.places
    b = _Builder(num_bits)
    s = problem.stats
    b.g += 0.5 * problem.phi_d * (c.T @ s.covariance @ c)
    b.h -= c.T @ s.returns
    b.add_square(weights["lot_sum"], c.sum(axis=0), -float(n))
    for name, coef, rhs in constraints:
        v = coef.astype(float) @ c
        r = slacks[name]
        v[r.start:r.stop] = r.places
        b.add_square(weights[name], v, -float(rhs))
    linear, quad, offset = b.finish()
    units["constraints"] = {name: {"coefficients": coef.tolist(), "rhs": int(rhs)} for name, coef, rhs in constraints}
    return QuboInstance(num_bits, linear, quad, offset, tuple(assets), slacks, weights, units, problem)


def decode(instance: QuboInstance, bits) -> DecodeResult:
    bits = np.asarray(bits)
    if bits.shape != (instance.num_bits,):
        raise InputError(f"assignment length {bits.shape} != ({instance.num_bits},)")
    lots = instance.lots(bits)
    slack_values = {name: r.value(bits) for name, r in instance.slacks.items()}
    problem = instance.problem
    residuals = {}
    report = None
    if problem is not None:
        report = check_feasible(lots, problem)
        residuals["lot_sum"] = int(lots.sum()) - problem.n_tot
    for name, con in instance.units.get("constraints", {}).items():
        coef = np.asarray(con["coefficients"], dtype=np.int64)
        residuals[name] = int(coef @ lots) + slack_values[name] - con["rhs"]
    return DecodeResult(lots, report, slack_values, residuals)


def repair_slack(instance: QuboInstance, bits) -> np.ndarray:
    """Set every slack register to the value that minimizes its own penalty."""
    bits = np.array(bits, dtype=np.int8)
    lots = instance.lots(bits)
    for name, con in instance.units.get("constraints", {}).items():
        r = instance.slacks[name]
        coef = np.asarray(con["coefficients"], dtype=np.int64)
        target = con["rhs"] - int(coef @ lots)
        target = min(max(target, 0), sum(r.places))
        bits[r.start:r.stop] = encode_value(target, r.places)
    return bits


def encode_lots(instance: QuboInstance, lots, fill_slack: bool = True) -> np.ndarray:
    """Bit assignment for given lots; slack registers are filled optimally unless disabled."""
    bits = np.zeros(instance.num_bits, dtype=np.int8)
    for v, r in zip(lots, instance.assets):
        bits[r.start:r.stop] = encode_value(int(v), r.places)
    return repair_slack(instance, bits) if fill_slack else bits


def to_spin(instance: QuboInstance) -> SpinInstance:
    w = instance.quadratic
    field_ = 0.5 * instance.linear + 0.25 * w.sum(axis=1)
    offset = instance.offset + 0.5 * instance.linear.sum() + 0.125 * w.sum()
    return SpinInstance(field=field_, coupling=0.25 * w, offset=float(offset))


def iter_assignments(n: int, chunk: int = 1 << 16) -> Iterator[np.ndarray]:
    """All ``2**n`` bit vectors in counting order (bit 0 is the most significant)."""
    total = 1 << n
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        yield ((idx[:, None] >> shifts) & 1).astype(np.int8)


def brute_force_minimum(instance: QuboInstance, max_bits: int = 24):
    """Exhaustive QUBO minimum; ties go to the first assignment in counting order."""
    if instance.num_bits > max_bits:
        raise InputError(f"{instance.num_bits} bits is too many for exhaustive enumeration")
    best_e, best_bits = np.inf, None
    for block in iter_assignments(instance.num_bits):
        e = instance.energy(block)
        i = int(np.argmin(e))
        if e[i] < best_e:
            best_e, best_bits = float(e[i]), block[i].copy()
    return best_bits, best_e
