"""Seeded synthetic blocks with token, router, pool and application hubs.

Blocks are reproducible from ``(profile.seed, block_number)`` alone. The five
configured tokens and the DEX routers use the same mainnet addresses as the
default disentangle config, so synthetic data exercises the real rewrite path.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from .disentangle import SEL_BALANCE_OF, SEL_TRANSFER, SEL_TRANSFER_FROM, default_addresses
from .model import Address, BlockTrace, CallFrame, CallKind, Transaction

ANCHOR_BLOCK = 15_000_000
ANCHOR_TIME = 1_655_110_000  # ~2022-06-13 UTC
BLOCK_TIME = 12
TRANSFER_GAS = 21_000

SEL_SWAP_ROUTER = bytes.fromhex("38ed1739")  # swapExactTokensForTokens(...)
SEL_SWAP_POOL = bytes.fromhex("022c0d9f")  # swap(uint256,uint256,address,bytes)
SEL_APP = bytes.fromhex("fb0f3ee1")

CLASSES = ("transfer", "token_transfer", "router_swap", "heavy_call")


@dataclass(frozen=True)
class GasDist:
    """Log-normal gas draw, clipped to ``[low, high]``."""

    median: float
    sigma: float
    low: int = 21_000
    high: int = 3_000_000

    def draw(self, rng: random.Random) -> int:
        g = int(rng.lognormvariate(math.log(self.median), self.sigma))
        return max(self.low, min(self.high, g))


@dataclass(frozen=True)
class WorkloadProfile:
    seed: int = 0
    tx_count: int = 200
    tx_count_spread: int = 20
    mix: tuple[float, float, float, float] = (0.20, 0.35, 0.30, 0.15)  # order of CLASSES
    token_gas: GasDist = GasDist(48_000, 0.25)
    swap_gas: GasDist = GasDist(110_000, 0.35, low=40_000)
    heavy_gas: GasDist = GasDist(70_000, 1.2)
    n_other_tokens: int = 40
    n_pools: int = 60
    n_apps: int = 60
    n_hot_wallets: int = 8
    address_pool: int = 500_000
    configured_token_share: float = 0.7  # token transfers that hit one of the configured tokens
    hub_skew: float = 0.9  # Zipf exponent for hub popularity
    hot_wallet_rate: float = 0.08  # token transfers sent to a shared exchange wallet
    multi_hop_rate: float = 0.3

    def __post_init__(self) -> None:
        if abs(sum(self.mix) - 1.0) > 1e-9 or any(f < 0 for f in self.mix):
            raise ValueError("class mix must be non-negative and sum to 1")
        for name in ("tx_count", "n_other_tokens", "n_pools", "n_apps", "n_hot_wallets", "address_pool"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tx_count_spread < 0 or self.tx_count_spread >= self.tx_count:
            raise ValueError("tx_count_spread must be in [0, tx_count)")


PRESETS: dict[str, WorkloadProfile] = {
    "pre-defi": WorkloadProfile(
        tx_count=100,
        tx_count_spread=20,
        mix=(0.70, 0.15, 0.0, 0.15),
        heavy_gas=GasDist(60_000, 0.9),
        n_other_tokens=150,
        n_apps=150,
        configured_token_share=0.05,
        hub_skew=0.6,
        hot_wallet_rate=0.02,
    ),
    "defi": WorkloadProfile(),
    "recent": WorkloadProfile(
        mix=(0.22, 0.28, 0.28, 0.22),
        n_pools=20,
        n_apps=15,
        hub_skew=1.3,
    ),
}


def preset(name: str, seed: Optional[int] = None, **overrides) -> WorkloadProfile:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    if seed is not None:
        overrides["seed"] = seed
    return replace(base, **overrides) if overrides else base


def _label_address(*parts: object) -> Address:
    digest = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=20).digest()
    return Address("0x" + digest.hex())


def _word(value: int | str) -> bytes:
    if isinstance(value, str):
        return bytes(12) + bytes.fromhex(value[2:])
    return value.to_bytes(32, "big")


def _calldata(selector: bytes, *args: int | str) -> bytes:
    return selector + b"".join(_word(a) for a in args)


@dataclass
class _World:
    """Fixed cast of contracts shared by every block of a profile."""

    tokens: tuple[Address, ...]
    other_tokens: tuple[Address, ...]
    routers: tuple[Address, ...]
    pools: tuple[tuple[Address, Address, Address], ...]  # (pool, token0, token1)
    apps: tuple[Address, ...]
    hot_wallets: tuple[Address, ...]
    usdc_impl: Address
    weights: dict = field(default_factory=dict)


def _zipf(n: int, s: float) -> list[float]:
    return [1.0 / (k + 1) ** s for k in range(n)]


def _world(p: WorkloadProfile) -> _World:
    tokens, routers = default_addresses()
    others = tuple(_label_address(p.seed, "token", i) for i in range(p.n_other_tokens))
    rng = random.Random(f"{p.seed}:world")
    weth = tokens[0]
    pools = []
    for i in range(p.n_pools):
        # most pools pair WETH with another token
        a = weth if rng.random() < 0.75 else rng.choice(tokens[1:])
        b = rng.choice([t for t in tokens + others[:10] if t != a])
        pools.append((_label_address(p.seed, "pool", i), a, b))
    return _World(
        tokens=tokens,
        other_tokens=others,
        routers=routers,
        pools=tuple(pools),
        apps=tuple(_label_address(p.seed, "app", i) for i in range(p.n_apps)),
        hot_wallets=tuple(_label_address(p.seed, "hot", i) for i in range(p.n_hot_wallets)),
        usdc_impl=_label_address("usdc-implementation"),
        weights={
            # configured tokens: WETH and the stablecoins dominate
            "tokens": [0.35, 0.25, 0.25, 0.1, 0.05],
            "others": _zipf(p.n_other_tokens, p.hub_skew),
            "pools": _zipf(p.n_pools, p.hub_skew),
            "apps": _zipf(p.n_apps, p.hub_skew),
            "routers": [0.4, 0.25, 0.15, 0.1, 0.05, 0.03, 0.02],
        },
    )


_WORLD_CACHE: dict[WorkloadProfile, _World] = {}


def _world_for(p: WorkloadProfile) -> _World:
    w = _WORLD_CACHE.get(p)
    if w is None:
        w = _WORLD_CACHE[p] = _world(p)
    return w


class _BlockBuilder:
    def __init__(self, p: WorkloadProfile, world: _World, rng: random.Random):
        self.p, self.w, self.rng = p, world, rng

    def user(self) -> Address:
        return _label_address(self.p.seed, "user", self.rng.randrange(self.p.address_pool))

    def pick(self, items, key):
        return self.rng.choices(items, weights=self.w.weights[key])[0]

    def token_call(self, caller: Address, token: Address, data: bytes, gas: int, static: bool = False) -> CallFrame:
        kind = CallKind.STATICCALL if static else CallKind.CALL
        children: tuple[CallFrame, ...] = ()
        if token == self.w.tokens[1]:
            # USDC sits behind a proxy that delegates to its implementation
            children = (CallFrame(CallKind.DELEGATECALL, token, self.w.usdc_impl, max(gas - 2_600, 0), data),)
        return CallFrame(kind, caller, token, gas, data, children)

    def any_token(self) -> Address:
        if self.rng.random() < self.p.configured_token_share:
            return self.pick(self.w.tokens, "tokens")
        return self.pick(self.w.other_tokens, "others")

    def transfer(self, sender: Address) -> tuple[int, CallFrame]:
        return TRANSFER_GAS, CallFrame(CallKind.TRANSFER, sender, self.user(), 0)

    def token_transfer(self, sender: Address) -> tuple[int, CallFrame]:
        gas = self.p.token_gas.draw(self.rng)
        token = self.any_token()
        to = self.rng.choice(self.w.hot_wallets) if self.rng.random() < self.p.hot_wallet_rate else self.user()
        data = _calldata(SEL_TRANSFER, to, self.rng.randrange(1, 10**24))
        return gas, self.token_call(sender, token, data, gas - TRANSFER_GAS)

    def _swap_leg(self, caller: Address, pool_entry, recipient: Address, budget: int) -> CallFrame:
        pool, t0, t1 = pool_entry
        out_token = t1 if self.rng.random() < 0.5 else t0
        in_token = t0 if out_token == t1 else t1
        leg = budget // 4
        children = (
            self.token_call(pool, out_token, _calldata(SEL_TRANSFER, recipient, self.rng.randrange(1, 10**21)), leg),
            self.token_call(pool, in_token, _calldata(SEL_BALANCE_OF, pool), 2_600, static=True),
            self.token_call(pool, out_token, _calldata(SEL_BALANCE_OF, pool), 2_600, static=True),
        )
        data = _calldata(SEL_SWAP_POOL, 0, self.rng.randrange(1, 10**21), recipient)
        return CallFrame(CallKind.CALL, caller, pool, budget, data, children)

    def router_swap(self, sender: Address) -> tuple[int, CallFrame]:
        gas = self.p.swap_gas.draw(self.rng)
        router = self.pick(self.w.routers, "routers")
        hops = 2 if self.rng.random() < self.p.multi_hop_rate else 1
        pools = [self.pick(self.w.pools, "pools") for _ in range(hops)]
        inner = gas - TRANSFER_GAS - 5_000
        first_pool, t_in, _ = pools[0]
        pull = self.token_call(
            router, t_in, _calldata(SEL_TRANSFER_FROM, sender, first_pool, self.rng.randrange(1, 10**21)), inner // 5
        )
        legs = []
        for h, entry in enumerate(pools):
            recipient = pools[h + 1][0] if h + 1 < hops else sender
            legs.append(self._swap_leg(router, entry, recipient, (inner - inner // 5) // hops))
        data = _calldata(SEL_SWAP_ROUTER, self.rng.randrange(1, 10**21), 0, sender)
        return gas, CallFrame(CallKind.CALL, sender, router, inner, data, (pull, *legs))

    def heavy_call(self, sender: Address) -> tuple[int, CallFrame]:
        gas = self.p.heavy_gas.draw(self.rng)
        app = self.pick(self.w.apps, "apps")
        inner = gas - TRANSFER_GAS
        children = []
        for _ in range(self.rng.randint(0, 3)):
            r = self.rng.random()
            budget = max(inner // 6, 5_000)
            if r < 0.45:
                token = self.any_token()
                data = _calldata(SEL_TRANSFER_FROM, sender, self.user(), self.rng.randrange(1, 10**21))
                children.append(self.token_call(app, token, data, budget))
            elif r < 0.7:
                children.append(self.token_call(app, self.any_token(), _calldata(SEL_BALANCE_OF, sender), 2_600, static=True))
            else:
                children.append(CallFrame(CallKind.CALL, app, self.user(), budget, SEL_APP))
        data = _calldata(SEL_APP, self.rng.randrange(1, 10**18))
        return gas, CallFrame(CallKind.CALL, sender, app, inner, data, tuple(children))


def block_time(number: int) -> int:
    return ANCHOR_TIME + (number - ANCHOR_BLOCK) * BLOCK_TIME


def generate_block(profile: WorkloadProfile, block_number: int) -> BlockTrace:
    """Deterministic synthetic block for ``(profile.seed, block_number)``."""
    rng = random.Random(f"{profile.seed}:block:{block_number}")
    b = _BlockBuilder(profile, _world_for(profile), rng)
    n = profile.tx_count + rng.randint(-profile.tx_count_spread, profile.tx_count_spread)
    makers = (b.transfer, b.token_transfer, b.router_swap, b.heavy_call)
    txs = []
    for pos in range(n):
        cls = rng.choices(range(len(CLASSES)), weights=profile.mix)[0]
        sender = b.user()
        gas, root = makers[cls](sender)
        tx_hash = "0x" + hashlib.blake2b(f"{profile.seed}:{block_number}:{pos}".encode(), digest_size=32).hexdigest()
        txs.append(Transaction(tx_hash, sender, root.to, gas, root))
    return BlockTrace(block_number, block_time(block_number), sum(t.gas_used for t in txs), tuple(txs))


def generate_blocks(profile: WorkloadProfile, start: int, count: int) -> Iterator[BlockTrace]:
    for number in range(start, start + count):
        yield generate_block(profile, number)
