import json
from collections import Counter

import pytest
from Crypto.Hash import keccak

from txparallax.disentangle import (
    SEL_ALLOWANCE,
    SEL_APPROVE,
    SEL_BALANCE_OF,
    SEL_TRANSFER,
    SEL_TRANSFER_FROM,
    SIGNATURES,
    DisentangleConfig,
    default_addresses,
    disentangle,
    load_config,
    remove_router,
    remove_routers_block,
    remove_routers_tx,
    rewrite_erc20,
    token_rewriter,
)
from txparallax.graphs import build_tx_graph
from txparallax.ingest import parse_trace_file
from txparallax.model import (
    AccessScope,
    BlockTrace,
    CallFrame,
    CallKind,
    ConflictMode,
    Mode,
    Transaction,
    VirtualCell,
    address,
    conflicting,
    tx_scope_set,
)
from txparallax.synth import generate_blocks, preset

W, R = Mode.WRITE, Mode.READ
TOKEN = address("0x" + "70" * 20)
ROUTER = address("0x" + "80" * 20)
A, B, C, D, P1, P2 = (address(f"0x{i:040x}") for i in (0xA, 0xB, 0xC, 0xD, 0x101, 0x102))
CFG = DisentangleConfig(tokens=frozenset({TOKEN}), routers=frozenset({ROUTER}))


def word(a) -> bytes:
    return int(a, 16).to_bytes(32, "big") if isinstance(a, str) else a.to_bytes(32, "big")


def token_call(caller, sel, *args, kind=CallKind.CALL):
    return CallFrame(kind, caller, TOKEN, 30_000, sel + b"".join(word(x) for x in args))


def tx(root, n=1):
    return Transaction("0x" + f"{n:064x}", root.from_, root.to, 60_000, root)


def keccak_selector(signature: str) -> bytes:
    return keccak.new(digest_bits=256, data=signature.encode()).digest()[:4]


@pytest.mark.parametrize("selector", [SEL_TRANSFER, SEL_TRANSFER_FROM, SEL_APPROVE, SEL_BALANCE_OF, SEL_ALLOWANCE])
def test_selector_constants_match_keccak(selector):
    assert keccak_selector(SIGNATURES[selector]) == selector


class TestRewriteTable:
    def test_transfer(self):
        assert rewrite_erc20(token_call(A, SEL_TRANSFER, B, 5), A, CFG) == {
            (VirtualCell(TOKEN, A), W),
            (VirtualCell(TOKEN, B), W),
        }

    def test_transfer_from(self):
        assert rewrite_erc20(token_call(C, SEL_TRANSFER_FROM, A, B, 5), C, CFG) == {
            (VirtualCell(TOKEN, A), W),
            (VirtualCell(TOKEN, B), W),
            (VirtualCell(TOKEN, A, C), W),
        }

    def test_approve(self):
        assert rewrite_erc20(token_call(A, SEL_APPROVE, B, 5), A, CFG) == {(VirtualCell(TOKEN, A, B), W)}

    def test_balance_of(self):
        assert rewrite_erc20(token_call(A, SEL_BALANCE_OF, B), A, CFG) == {(VirtualCell(TOKEN, B), R)}

    def test_allowance(self):
        assert rewrite_erc20(token_call(A, SEL_ALLOWANCE, B, C), A, CFG) == {(VirtualCell(TOKEN, B, C), R)}

    def test_unknown_selector_falls_back(self):
        diag = Counter()
        f = CallFrame(CallKind.CALL, A, TOKEN, 1, bytes.fromhex("d0e30db0"))  # deposit()
        assert rewrite_erc20(f, A, CFG, diag) == {(TOKEN, W)}
        assert diag["unrewritten_selector"] == 1

    def test_short_calldata_falls_back_with_diagnostic(self):
        diag = Counter()
        f = CallFrame(CallKind.CALL, A, TOKEN, 1, SEL_TRANSFER + word(B)[:20])
        assert rewrite_erc20(f, A, CFG, diag) == {(TOKEN, W)}
        assert diag["malformed_calldata"] == 1

    def test_dirty_address_word_falls_back(self):
        diag = Counter()
        f = CallFrame(CallKind.CALL, A, TOKEN, 1, SEL_TRANSFER + b"\x01" + word(B)[1:] + word(5))
        assert rewrite_erc20(f, A, CFG, diag) == {(TOKEN, W)}
        assert diag["malformed_calldata"] == 1

    def test_delegatecall_not_rewritten(self):
        f = token_call(A, SEL_TRANSFER, B, 5, kind=CallKind.DELEGATECALL)
        assert rewrite_erc20(f, A, CFG) == {(A, W)}

    def test_static_call_never_writes(self):
        f = token_call(A, SEL_TRANSFER, B, 5, kind=CallKind.STATICCALL)
        assert all(m is R for _, m in rewrite_erc20(f, A, CFG))

    def test_cells_are_not_addresses(self):
        cell = VirtualCell(TOKEN, A)
        assert cell != TOKEN and cell != A and str(cell) != A


class TestTokenConflicts:
    def test_read_vs_write_on_same_balance(self):
        reader = tx(token_call(A, SEL_BALANCE_OF, C), 1)
        writer = tx(token_call(B, SEL_TRANSFER, C, 1), 2)
        assert conflicting(reader, writer, ConflictMode.WRITE_AWARE, token_rewriter(CFG))

    def test_shared_recipient_still_conflicts(self, fixtures):
        block = list(parse_trace_file(fixtures / "three_dai_shared.jsonl"))
        g = build_tx_graph(block, rewrites=load_config())
        assert g.edges == {(0, 1)}

    def test_disjoint_transfers_decouple(self, fixtures):
        block = list(parse_trace_file(fixtures / "three_dai.jsonl"))
        assert len(build_tx_graph(block).edges) == 3
        assert build_tx_graph(block, rewrites=load_config()).edges == frozenset()


class TestRouterRemoval:
    def swap(self, sender, pool, n):
        root = CallFrame(
            CallKind.CALL, sender, ROUTER, 100_000, b"",
            (
                CallFrame(CallKind.CALL, ROUTER, pool, 60_000),
                CallFrame(CallKind.STATICCALL, ROUTER, ROUTER, 1_000),
            ),
        )
        return tx(root, n)

    def test_sender_router_pool_becomes_sender_pool(self):
        t = remove_routers_tx(self.swap(A, P1, 1), CFG)
        root = t.root_call
        assert (root.from_, root.to, root.gas_used) == (A, A, 100_000)
        assert [(c.from_, c.to, c.gas_used) for c in root.children] == [(A, P1, 60_000)]
        assert t.recipient == A

    def test_disjoint_pools_decouple(self):
        a, b = self.swap(A, P1, 1), self.swap(B, P2, 2)
        assert conflicting(a, b, ConflictMode.ANY_TOUCH)
        ra, rb = remove_routers_tx(a, CFG), remove_routers_tx(b, CFG)
        for mode in ConflictMode:
            assert not conflicting(ra, rb, mode)

    def test_same_pool_keeps_edge(self):
        ra, rb = remove_routers_tx(self.swap(A, P1, 1), CFG), remove_routers_tx(self.swap(B, P1, 2), CFG)
        for mode in ConflictMode:
            assert conflicting(ra, rb, mode)

    def test_disabled(self):
        off = DisentangleConfig(CFG.tokens, CFG.routers, enable_routers=False)
        root = self.swap(A, P1, 1).root_call
        assert remove_router(root, A, off) is root


class TestConfig:
    def test_default_named_sets(self):
        tokens, routers = default_addresses()
        assert len(tokens) == 5 and len(routers) == 7
        weth, usdc, usdt, dai, link = tokens
        assert weth == "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2"
        assert dai == "0x6b175474e89094c44da98b954eedeac495271d0f"
        assert "0x7a250d5630b4cf539739df2c5dacb4c659f2488d" in routers

    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="both"):
            DisentangleConfig(tokens=frozenset({A}), routers=frozenset({A}))

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(CFG.to_json()))
        assert load_config(path) == CFG
        assert load_config("default") == load_config(None)


class TestOnSyntheticBlocks:
    blocks = list(generate_blocks(preset("defi", seed=4, tx_count=60, tx_count_spread=5), 15_000_000, 4))
    cfg = load_config()

    def test_both_flags_off_is_identity(self):
        off = DisentangleConfig(self.cfg.tokens, self.cfg.routers, False, False)
        for b in self.blocks:
            assert disentangle(b, off) == [tx_scope_set(t) for t in b.transactions]

    def test_idempotent(self):
        for b in self.blocks:
            once = remove_routers_block(b, self.cfg)
            assert remove_routers_block(once, self.cfg) == once
            assert disentangle(once, self.cfg) == disentangle(b, self.cfg)

    def test_routers_gone(self):
        for b in self.blocks:
            for t in remove_routers_block(b, self.cfg).transactions:
                for f in t.root_call.walk():
                    assert f.from_ not in self.cfg.routers and f.to not in self.cfg.routers

    def test_gas_preserved(self):
        for b in self.blocks:
            after = remove_routers_block(b, self.cfg)
            assert isinstance(after, BlockTrace)
            assert [t.gas_used for t in after.transactions] == [t.gas_used for t in b.transactions]

    def test_diagnostics_counted(self):
        diag = Counter()
        for b in self.blocks:
            disentangle(b, self.cfg, diag)
        # generated calldata is well formed
        assert diag["malformed_calldata"] == 0

    def test_sender_scope_kept(self):
        for b in self.blocks:
            for t, scopes in zip(b.transactions, disentangle(b, self.cfg)):
                assert AccessScope(t.sender, W) in scopes
