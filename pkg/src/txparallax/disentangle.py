"""Remove artificial conflicts caused by ERC-20 token contracts and DEX routers.

Two rewrites, applied in this order:

* router removal: every call endpoint that is a configured router is replaced
  by the transaction sender, so stateless routers stop linking unrelated swaps;
* token rewriting: ``transfer``/``transferFrom``/``approve``/``balanceOf``/
  ``allowance`` calls on a configured token touch per-account
  :class:`~txparallax.model.VirtualCell` targets instead of the whole token.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

from .model import (
    AccessScope,
    Address,
    BlockTrace,
    CallFrame,
    CallKind,
    Mode,
    Rewrite,
    Transaction,
    VirtualCell,
    address,
    derive_scopes,
    tx_scope_set,
)

# First four bytes of keccak-256 of the canonical signature; checked in tests.
SEL_TRANSFER = bytes.fromhex("a9059cbb")  # transfer(address,uint256)
SEL_TRANSFER_FROM = bytes.fromhex("23b872dd")  # transferFrom(address,address,uint256)
SEL_APPROVE = bytes.fromhex("095ea7b3")  # approve(address,uint256)
SEL_BALANCE_OF = bytes.fromhex("70a08231")  # balanceOf(address)
SEL_ALLOWANCE = bytes.fromhex("dd62ed3e")  # allowance(address,address)

SIGNATURES = {
    SEL_TRANSFER: "transfer(address,uint256)",
    SEL_TRANSFER_FROM: "transferFrom(address,address,uint256)",
    SEL_APPROVE: "approve(address,uint256)",
    SEL_BALANCE_OF: "balanceOf(address)",
    SEL_ALLOWANCE: "allowance(address,address)",
}

# number of 32-byte argument words each selector needs
_ARITY = {SEL_TRANSFER: 2, SEL_TRANSFER_FROM: 3, SEL_APPROVE: 2, SEL_BALANCE_OF: 1, SEL_ALLOWANCE: 2}


@dataclass(frozen=True)
class DisentangleConfig:
    tokens: frozenset[Address] = frozenset()
    routers: frozenset[Address] = frozenset()
    enable_tokens: bool = True
    enable_routers: bool = True

    def __post_init__(self) -> None:
        overlap = self.tokens & self.routers
        if overlap:
            raise ValueError(f"addresses configured as both token and router: {sorted(overlap)}")

    @classmethod
    def from_json(cls, obj: Mapping) -> DisentangleConfig:
        return cls(
            tokens=frozenset(address(a) for a in obj.get("tokens", ())),
            routers=frozenset(address(a) for a in obj.get("routers", ())),
            enable_tokens=bool(obj.get("enable_tokens", True)),
            enable_routers=bool(obj.get("enable_routers", True)),
        )

    def to_json(self) -> dict:
        return {
            "tokens": sorted(self.tokens),
            "routers": sorted(self.routers),
            "enable_tokens": self.enable_tokens,
            "enable_routers": self.enable_routers,
        }

    @property
    def active(self) -> bool:
        return (self.enable_tokens and bool(self.tokens)) or (self.enable_routers and bool(self.routers))


def _default_json() -> dict:
    text = resources.files("txparallax").joinpath("data/default_disentangle.json").read_text("utf-8")
    return json.loads(text)


def default_addresses() -> tuple[tuple[Address, ...], tuple[Address, ...]]:
    """Configured (tokens, routers) of the shipped config, in file order.

    Tokens are WETH, USDC, USDT, DAI, LINK; routers are Uniswap V2, Uniswap V3
    (SwapRouter, SwapRouter02), SushiSwap and 1inch (v3, v4, v5).
    """
    obj = _default_json()
    return tuple(address(a) for a in obj["tokens"]), tuple(address(a) for a in obj["routers"])


def load_config(path: Union[str, Path, None] = None) -> DisentangleConfig:
    """Read a config file; ``None`` or ``"default"`` gives the shipped mainnet config."""
    if path is None or str(path) == "default":
        return DisentangleConfig.from_json(_default_json())
    with open(path, encoding="utf-8") as fh:
        return DisentangleConfig.from_json(json.load(fh))


def _word_address(data: bytes, index: int) -> Optional[Address]:
    word = data[4 + 32 * index: 4 + 32 * (index + 1)]
    if len(word) != 32 or any(word[:12]):
        return None
    return Address("0x" + word[12:].hex())


def _erc20_cells(
    frame: CallFrame, caller: Address, cfg: DisentangleConfig, diagnostics: Optional[Counter]
) -> Optional[frozenset[AccessScope]]:
    if frame.kind not in (CallKind.CALL, CallKind.STATICCALL) or frame.to not in cfg.tokens:
        return None
    sel = frame.selector
    arity = _ARITY.get(sel)
    if arity is None:
        if diagnostics is not None:
            diagnostics["unrewritten_selector"] += 1
        return None
    args = [_word_address(frame.input, i) for i in range(arity)]
    token = frame.to
    W, R = Mode.WRITE, Mode.READ
    if sel == SEL_TRANSFER and args[0]:
        scopes = {(VirtualCell(token, caller), W), (VirtualCell(token, args[0]), W)}
    elif sel == SEL_TRANSFER_FROM and args[0] and args[1]:
        src, dst = args[0], args[1]
        scopes = {(VirtualCell(token, src), W), (VirtualCell(token, dst), W), (VirtualCell(token, src, caller), W)}
    elif sel == SEL_APPROVE and args[0]:
        scopes = {(VirtualCell(token, caller, args[0]), W)}
    elif sel == SEL_BALANCE_OF and args[0]:
        scopes = {(VirtualCell(token, args[0]), R)}
    elif sel == SEL_ALLOWANCE and args[0] and args[1]:
        scopes = {(VirtualCell(token, args[0], args[1]), R)}
    else:
        if diagnostics is not None:
            diagnostics["malformed_calldata"] += 1
        return None
    if frame.kind is CallKind.STATICCALL:
        # a static frame cannot write, whatever the selector claims
        return frozenset(AccessScope(t, R) for t, _ in scopes)
    return frozenset(AccessScope(t, m) for t, m in scopes)


def rewrite_erc20(
    frame: CallFrame,
    caller_scope: Address,
    cfg: DisentangleConfig,
    diagnostics: Optional[Counter] = None,
) -> frozenset[AccessScope]:
    """Scopes of a call into a configured token, expressed as virtual cells.

    Anything that cannot be decoded keeps the frame's ordinary scopes.
    """
    cells = _erc20_cells(frame, caller_scope, cfg, diagnostics) if cfg.enable_tokens else None
    return cells if cells is not None else derive_scopes(frame)


def token_rewriter(cfg: DisentangleConfig, diagnostics: Optional[Counter] = None) -> Optional[Rewrite]:
    """Hook for :func:`txparallax.model.accesses`, or ``None`` when token rewriting is off."""
    if not (cfg.enable_tokens and cfg.tokens):
        return None

    def rewrite(frame: CallFrame) -> Optional[frozenset[AccessScope]]:
        return _erc20_cells(frame, frame.from_, cfg, diagnostics)

    return rewrite


def remove_router(root: CallFrame, tx_sender: Address, cfg: DisentangleConfig) -> CallFrame:
    """Re-point every router endpoint in the tree at ``tx_sender``.

    Non-root frames that end up as childless self-calls of the sender are
    dropped. Gas figures are untouched.
    """
    if not (cfg.enable_routers and cfg.routers):
        return root
    routers = cfg.routers

    def visit(frame: CallFrame) -> CallFrame:
        src = tx_sender if frame.from_ in routers else frame.from_
        dst = tx_sender if frame.to in routers else frame.to
        kids = []
        for child in frame.children:
            new = visit(child)
            if new.from_ == new.to == tx_sender and not new.children:
                continue
            kids.append(new)
        kids_t = tuple(kids)
        if src == frame.from_ and dst == frame.to and kids_t == frame.children:
            return frame
        return replace(frame, from_=src, to=dst, children=kids_t)

    return visit(root)


def remove_routers_tx(tx: Transaction, cfg: DisentangleConfig) -> Transaction:
    root = remove_router(tx.root_call, tx.sender, cfg)
    recipient = tx.sender if tx.recipient in cfg.routers and cfg.enable_routers else tx.recipient
    if root is tx.root_call and recipient == tx.recipient:
        return tx
    return replace(tx, root_call=root, recipient=recipient)


def remove_routers_block(block: BlockTrace, cfg: DisentangleConfig) -> BlockTrace:
    txs = tuple(remove_routers_tx(tx, cfg) for tx in block.transactions)
    return replace(block, transactions=txs)


def disentangle(
    block: BlockTrace, cfg: DisentangleConfig, diagnostics: Optional[Counter] = None
) -> list[frozenset[AccessScope]]:
    """Per-transaction scope sets after router removal and then token rewriting."""
    rewrite = token_rewriter(cfg, diagnostics)
    return [tx_scope_set(remove_routers_tx(tx, cfg), rewrite) for tx in block.transactions]
