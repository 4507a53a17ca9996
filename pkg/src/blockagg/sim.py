"""Seeded Monte-Carlo simulator of the aggregation protocol and the per-block baseline.

Blocks arrive as a Poisson process; each block updates every observed
account independently with its per-block probability, writes a fresh
random state into the state trie and advances the root. The aggregation
node flushes one frame per period ``T`` (overhead, all headers of the
period, latest states of the updated observed accounts and one proof for
them); the baseline sends one frame per block. Every frame is pushed over
the fading link until it gets through.

Random draws come from separate counter-based streams (see ``STREAMS``),
so the two protocols see identical block and update sequences for the same
seed and each protocol's channel draws are independent of the other's.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .analytics import pomi_expected_nodes
from .channel import outage_probability
from .errors import ConfigError
from .model import AccountModel
from .params import SystemParams
from .trie import AccountKey, AccountRecord, StateTrie, proof_size_bits, verify_proof

PROTOCOLS = ("aggregation", "p2")
STREAMS = {
    "blocks": 0,
    "updates": 1,
    "payloads": 2,
    "channel/aggregation": 3,
    "channel/p2": 4,
    "background": 5,
    "background/payloads": 6,
    "experiment": 7,
}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Philox generator dedicated to one named purpose of one run."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimConfig:
    """One simulation run.

    ``layout="full"`` fills every slot of a balanced ``L``-ary trie of depth
    ``key_depth`` (default ``eta``), matching the analytical tree; accounts
    are spread over the slots by a fixed affine permutation. ``"hashed"``
    places ``M_total`` accounts at the hash of their address.
    ``background_updates`` also rewrites the unobserved modeled accounts;
    this changes the roots only, never the measured quantities.
    """

    params: SystemParams
    model: AccountModel
    observed: tuple[int, ...]
    M_total: int | None = None
    horizon: float | None = None
    seed: int = 0
    protocol: str = "aggregation"
    layout: str = "full"
    key_depth: int | None = None
    sizing: str = "model"
    background_updates: bool = False
    verify: bool = True

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(sorted(set(int(j) for j in self.observed))))
        p = self.params
        if self.layout not in ("full", "hashed"):
            raise ConfigError(f"unknown layout {self.layout!r}")
        depth = self.key_depth or (p.eta if self.layout == "full" else 8)
        object.__setattr__(self, "key_depth", depth)
        if self.M_total is None:
            object.__setattr__(self, "M_total", p.L ** depth if self.layout == "full"
                               else max(4096, self.model.M))
        if self.layout == "full" and self.M_total != p.L ** depth:
            raise ConfigError(f"full layout needs M_total = L**key_depth = {p.L ** depth}")
        if self.horizon is None:
            object.__setattr__(self, "horizon", 10 * p.T)
        if self.horizon < 10 * p.T * (1 - 1e-12):
            raise ConfigError(f"horizon {self.horizon} shorter than 10*T = {10 * p.T}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.sizing not in ("model", "wire"):
            raise ConfigError("sizing must be 'model' or 'wire'")
        if self.observed and (self.observed[0] < 1 or self.observed[-1] > min(self.M_total, self.model.M)):
            raise ConfigError(f"observed accounts must lie in [1, {min(self.M_total, self.model.M)}]")
        if p.L > 16:
            raise ConfigError("trie supports L <= 16")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class SimReport:
    protocol: str
    seed: int
    horizon: float
    blocks: int = 0
    bits_total: int = 0
    bits_overhead_H: int = 0
    bits_headers: int = 0
    bits_accounts: int = 0
    bits_pomi: int = 0
    frames_sent: int = 0
    retransmissions: int = 0
    halted_frames: int = 0
    verified_frames: int = 0
    failed_verifications: int = 0
    airtime: float = 0.0
    max_airtime: float = 0.0
    duty_cycle: float = 0.0
    delays: list = field(default_factory=list)
    empirical_gain: float | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=False)

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.delays)) if self.delays else math.nan

    def _add_frame(self, overhead, headers, accounts, pomi):
        self.bits_overhead_H += overhead
        self.bits_headers += headers
        self.bits_accounts += accounts
        self.bits_pomi += pomi
        self.bits_total += overhead + headers + accounts + pomi
        self.frames_sent += 1


def gain_empirical(agg: SimReport, p2: SimReport) -> float:
    """Saving in bits per block of the aggregation run over the baseline run."""
    if agg.protocol != "aggregation" or p2.protocol != "p2":
        raise ConfigError("expected an aggregation report and a p2 report")
    if not math.isclose(agg.horizon, p2.horizon):
        raise ConfigError("reports cover different horizons")
    if p2.bits_total == 0 or p2.blocks == 0 or agg.blocks == 0:
        raise ZeroDivisionError("baseline run transmitted nothing")
    return 1.0 - (agg.bits_total / agg.blocks) / (p2.bits_total / p2.blocks)


def pool_reports(reports: Sequence[SimReport]) -> SimReport:
    """Sum independent runs of one protocol into a single report."""
    if not reports:
        raise ValueError("nothing to pool")
    protocols = {r.protocol for r in reports}
    if len(protocols) != 1:
        raise ConfigError("cannot pool different protocols")
    out = SimReport(protocol=reports[0].protocol, seed=-1, horizon=sum(r.horizon for r in reports))
    for name in ("blocks", "bits_total", "bits_overhead_H", "bits_headers", "bits_accounts",
                 "bits_pomi", "frames_sent", "retransmissions", "halted_frames",
                 "verified_frames", "failed_verifications", "airtime"):
        setattr(out, name, sum(getattr(r, name) for r in reports))
    out.max_airtime = max(r.max_airtime for r in reports)
    out.duty_cycle = out.airtime / out.horizon
    out.delays = [d for r in reports for d in r.delays]
    return out


# -- trie population ---------------------------------------------------------

def _coprime_multiplier(n: int) -> int:
    a = max(1, int(n * 0.6180339887498949)) | 1
    while math.gcd(a, n) != 1:
        a += 1
    return a


def account_key(j: int, layout: str, L: int, key_depth: int) -> AccountKey:
    """Trie key of account ``j`` (1-based) under the given layout."""
    if layout == "full":
        n = L ** key_depth
        slot = (_coprime_multiplier(n) * (j - 1) + n // 3) % n
        return AccountKey.from_index(slot, key_depth, L)
    return AccountKey.from_address(address(j), key_depth, L)


def address(j: int) -> bytes:
    return int(j).to_bytes(8, "big")


@functools.lru_cache(maxsize=8)
def genesis_payload(n_bytes: int) -> bytes:
    return np.random.Generator(np.random.Philox(0x5EED)).bytes(n_bytes)


@functools.lru_cache(maxsize=4)
def base_trie(layout: str, L: int, key_depth: int, M_total: int, payload_bytes: int) -> StateTrie:
    """Initial state with all ``M_total`` accounts at version 0 (shared, never mutated)."""
    record = AccountRecord(b"", genesis_payload(payload_bytes), 0)
    if layout == "full":
        return StateTrie.full(record, L, key_depth)
    keys = {}
    for j in range(1, M_total + 1):
        k = account_key(j, layout, L, key_depth)
        if k in keys:
            raise ConfigError(f"accounts {keys[k]} and {j} collide at key depth {key_depth}")
        keys[k] = j
    return StateTrie.from_items(((k, record) for k in keys), L, key_depth)


# -- the run loop --------------------------------------------------------------

def _block_times(rng, lam, end):
    times = []
    t = 0.0
    chunk = max(16, int(lam * end * 1.2) + 16)
    while True:
        gaps = rng.exponential(1.0 / lam, size=chunk)
        for g in gaps:
            t += g
            if t > end:
                return np.asarray(times)
            times.append(t)


class _Link:
    def __init__(self, params, rng):
        self.p_out = outage_probability(params)
        self.R = params.R
        self.rng = rng
        self._draws = iter(())

    def reserve(self, n_frames: int):
        self._draws = iter(self.rng.geometric(1.0 - self.p_out, size=n_frames).tolist())

    def send(self, report: SimReport, bits: int, period: float):
        """Returns airtime on delivery, ``None`` when the frame is halted."""
        k = next(self._draws)
        airtime = k * bits / self.R
        if airtime > period:
            report.halted_frames += 1
            tries = max(1, math.ceil(period * self.R / bits))
            report.retransmissions += min(k, tries) - 1
            report.airtime += period
            return None
        report.retransmissions += k - 1
        report.airtime += airtime
        report.max_airtime = max(report.max_airtime, airtime)
        return airtime


class _Run:
    def __init__(self, config: SimConfig, protocols):
        self.cfg = config
        p = config.params
        self.params = p
        self.n_epochs = int(math.floor(config.horizon / p.T + 1e-9))
        self.end = self.n_epochs * p.T
        self.protocols = protocols
        self.reports = {name: SimReport(name, config.seed, self.end) for name in protocols}
        self.links = {name: _Link(p, rng_stream(config.seed, f"channel/{name}")) for name in protocols}
        self.trie = base_trie(config.layout, p.L, config.key_depth, config.M_total, p.l_a // 8).fork()
        self.obs = list(config.observed)
        self.keys = {j: account_key(j, config.layout, p.L, config.key_depth) for j in self.obs}
        self.version = {j: 0 for j in self.obs}
        self.value_hash = {}
        self.last_update = {}

    def _pomi_bits(self, proof):
        return proof_size_bits(proof, self.cfg.sizing, self.params.l_s)

    def _frame(self, name, n_blocks, updated, start, period):
        p = self.params
        report = self.reports[name]
        accounts = len(updated) * p.l_a
        pomi = 0
        if updated:
            proof = self.trie.prove([self.keys[j] for j in updated])
            pomi = self._pomi_bits(proof)
            if self.cfg.verify:
                ok = verify_proof(self.trie.root, proof) and all(
                    vh == self.value_hash[self._owner[k.digits]] for k, vh in proof.leaves)
                if ok:
                    report.verified_frames += 1
                else:
                    report.failed_verifications += 1
        headers = n_blocks * p.l_H
        report._add_frame(p.H, headers, accounts, pomi)
        airtime = self.links[name].send(report, p.H + headers + accounts + pomi, period)
        if airtime is not None:
            delivered = start + airtime
            report.delays.extend(delivered - self.last_update[j] for j in updated)

    def run(self):
        cfg, p = self.cfg, self.params
        self._owner = {k.digits: j for j, k in self.keys.items()}
        times = _block_times(rng_stream(cfg.seed, "blocks"), p.lam, self.end)
        hits = rng_stream(cfg.seed, "updates").random((times.size, len(self.obs))) < cfg.model.subset(self.obs)
        per_block = [[] for _ in range(times.size)]
        for i, c in zip(*np.nonzero(hits)):
            per_block[i].append(self.obs[c])
        for name, link in self.links.items():
            link.reserve(self.n_epochs if name == "aggregation" else times.size)
        payloads = rng_stream(cfg.seed, "payloads")
        background = self._background(times.size) if cfg.background_updates else None
        n_bytes = p.l_a // 8

        do_agg = "aggregation" in self.protocols
        do_p2 = "p2" in self.protocols
        epoch = 1
        window_blocks = 0
        window_updated: set[int] = set()
        for i, t in enumerate(times.tolist()):
            while do_agg and t > epoch * p.T:
                self._frame("aggregation", window_blocks, sorted(window_updated), epoch * p.T, p.T)
                window_blocks, window_updated = 0, set()
                epoch += 1
            updated = per_block[i]
            for j in updated:
                self.version[j] += 1
                record = AccountRecord(address(j), payloads.bytes(n_bytes), self.version[j])
                vh = record.value_hash()
                self.value_hash[j] = vh
                self.trie.insert(self.keys[j], record, value_hash=vh)
                self.last_update[j] = t
            if background is not None:
                background(i)
            if do_p2:
                self._frame("p2", 1, updated, t, p.block_period)
            window_blocks += 1
            window_updated.update(updated)
        while do_agg and epoch <= self.n_epochs:
            self._frame("aggregation", window_blocks, sorted(window_updated), epoch * p.T, p.T)
            window_blocks, window_updated = 0, set()
            epoch += 1

        for r in self.reports.values():
            r.blocks = int(times.size)
            r.duty_cycle = r.airtime / self.end
        return self.reports

    def _background(self, n_blocks):
        cfg, p = self.cfg, self.params
        observed = set(self.obs)
        others = [j for j in range(1, min(cfg.M_total, cfg.model.M) + 1) if j not in observed]
        probs = cfg.model.subset(others)
        rng = rng_stream(cfg.seed, "background")
        payloads = rng_stream(cfg.seed, "background/payloads")
        versions = dict.fromkeys(others, 0)
        keys = {}

        def step(i):
            for c in np.flatnonzero(rng.random(len(others)) < probs):
                j = others[c]
                versions[j] += 1
                if j not in keys:
                    keys[j] = account_key(j, cfg.layout, p.L, cfg.key_depth)
                self.trie.insert(keys[j], AccountRecord(address(j), payloads.bytes(p.l_a // 8), versions[j]))

        return step


def run(config: SimConfig) -> SimReport:
    """Simulate ``config.protocol`` for one seed."""
    return _Run(config, (config.protocol,)).run()[config.protocol]


def run_pair(config: SimConfig) -> tuple[SimReport, SimReport]:
    """Both protocols in one pass over identical blocks and updates.

    Equal, field by field, to two separate :func:`run` calls.
    """
    reports = _Run(config, PROTOCOLS).run()
    agg, p2 = reports["aggregation"], reports["p2"]
    agg.empirical_gain = gain_empirical(agg, p2)
    return agg, p2


def run_seeds(config: SimConfig, seeds: Iterable[int]) -> list[tuple[SimReport, SimReport]]:
    return [run_pair(config.replace(seed=s)) for s in seeds]


# -- proof-size experiment -----------------------------------------------------

@dataclass(frozen=True)
class PomiSizeStats:
    u: int
    trials: int
    histogram: dict
    mean_nodes: float
    var_nodes: float
    mean_wire_bits: float
    mean_model_bits: float
    analytical_nodes: float


def pomi_size_experiment(config: SimConfig, u_grid: Sequence[int], trials: int) -> list[PomiSizeStats]:
    """Node-count distribution of proofs for ``u`` uniformly drawn accounts.

    Accounts are drawn without replacement from the ``M_total`` populated
    ones. The analytical column uses the recursion at the trie's effective
    height ``ceil(log_L M_total)``.
    """
    p = config.params
    trie = base_trie(config.layout, p.L, config.key_depth, config.M_total, p.l_a // 8)
    rng = rng_stream(config.seed, "experiment")
    eta_eff = max(1, math.ceil(math.log(config.M_total) / math.log(p.L) - 1e-9))
    out = []
    for u in u_grid:
        if not 1 <= u <= config.M_total:
            raise ConfigError(f"u={u} outside [1, {config.M_total}]")
        counts = np.empty(trials, dtype=np.int64)
        wire = np.empty(trials)
        for t in range(trials):
            picks = rng.choice(config.M_total, size=u, replace=False) + 1
            proof = trie.prove(account_key(int(j), config.layout, p.L, config.key_depth) for j in picks)
            counts[t] = proof.num_nodes
            wire[t] = proof.wire_bits()
        values, freq = np.unique(counts, return_counts=True)
        out.append(PomiSizeStats(
            u=u,
            trials=trials,
            histogram={int(v): int(f) for v, f in zip(values, freq)},
            mean_nodes=float(counts.mean()),
            var_nodes=float(counts.var()),
            mean_wire_bits=float(wire.mean()),
            mean_model_bits=float(p.l_s * counts.mean() + 2 * p.l_s * u),
            analytical_nodes=pomi_expected_nodes(p.L, eta_eff, u),
        ))
    return out
