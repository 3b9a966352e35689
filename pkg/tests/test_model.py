import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txparallax.ingest import dumps_trace_file, parse_trace_file
from txparallax.model import (
    AccessScope,
    BlockTrace,
    CallFrame,
    CallKind,
    ConflictMode,
    Mode,
    TraceError,
    Transaction,
    VirtualCell,
    address,
    conflicting,
    derive_scopes,
    target_key,
    tx_scope_set,
)
from txparallax.synth import generate_block, preset

A, B, C, D, X = (address(f"0x{i:040x}") for i in (0xA, 0xB, 0xC, 0xD, 0xE))
H = "0x" + "11" * 32
W, R = Mode.WRITE, Mode.READ


def tx(root, gas=21_000, h=H):
    return Transaction(h, root.from_, root.to, gas, root)


def frame(kind, src, dst, *kids, gas=1000, data=b""):
    return CallFrame(kind, src, dst, gas, data, tuple(kids))


class TestAddress:
    def test_lowercases(self):
        assert address("0x" + "AB" * 20) == "0x" + "ab" * 20

    def test_bytes_round_trip(self):
        raw = bytes(range(20))
        assert bytes.fromhex(address(raw)[2:]) == raw

    @pytest.mark.parametrize("bad", ["0x1234", "ab" * 20, "0x" + "zz" * 20, 42, "0x" + "00" * 21])
    def test_rejects(self, bad):
        with pytest.raises(TraceError):
            address(bad)


class TestDeriveScopes:
    def test_static_call_reads_callee(self):
        assert derive_scopes(frame(CallKind.STATICCALL, A, B), A) == {(B, R)}

    def test_delegatecall_writes_caller(self):
        assert derive_scopes(frame(CallKind.DELEGATECALL, A, B), A) == {(A, W)}

    def test_callcode_writes_caller(self):
        assert derive_scopes(frame(CallKind.CALLCODE, A, B), A) == {(A, W)}

    def test_transfer_writes_both(self):
        assert derive_scopes(frame(CallKind.TRANSFER, A, B), A) == {(A, W), (B, W)}

    def test_call_writes_callee_only(self):
        assert derive_scopes(frame(CallKind.CALL, A, B), A) == {(B, W)}

    def test_children_are_ignored(self):
        f = frame(CallKind.CALL, A, B, frame(CallKind.CALL, B, C))
        assert derive_scopes(f, A) == {(B, W)}


class TestTxScopeSet:
    def test_plain_transfer(self):
        assert tx_scope_set(tx(frame(CallKind.TRANSFER, A, B))) == {(A, W), (B, W)}

    def test_call_then_static(self):
        t = tx(frame(CallKind.CALL, A, C, frame(CallKind.STATICCALL, C, D)))
        assert tx_scope_set(t) == {(A, W), (C, W), (D, R)}

    def test_write_dominates_read(self):
        t = tx(frame(CallKind.CALL, A, C, frame(CallKind.STATICCALL, C, D), frame(CallKind.CALL, C, D)))
        assert tx_scope_set(t) == {(A, W), (C, W), (D, W)}

    def test_matches_recursive_enumeration(self):
        # three levels, every call kind
        root = frame(
            CallKind.CALL, A, B,
            frame(CallKind.DELEGATECALL, B, C, frame(CallKind.STATICCALL, B, D)),
            frame(CallKind.CALL, B, X, frame(CallKind.TRANSFER, X, A), frame(CallKind.CALLCODE, X, C)),
        )

        def rec(f):
            out = set(derive_scopes(f, A))
            for k in f.children:
                out |= rec(k)
            return out

        flat = rec(root) | {AccessScope(A, W)}
        expected = {}
        for t, m in flat:
            expected[t] = max(expected.get(t, m), m)
        assert tx_scope_set(tx(root)) == {AccessScope(t, m) for t, m in expected.items()}


class TestConflicting:
    def test_disjoint_transfers(self):
        a = tx(frame(CallKind.TRANSFER, A, B))
        b = tx(frame(CallKind.TRANSFER, C, D))
        for mode in ConflictMode:
            assert not conflicting(a, b, mode)

    def test_shared_write(self):
        a = tx(frame(CallKind.CALL, A, X))
        b = tx(frame(CallKind.CALL, B, X))
        for mode in ConflictMode:
            assert conflicting(a, b, mode)

    def test_static_only_sharing(self):
        a = tx(frame(CallKind.CALL, A, C, frame(CallKind.STATICCALL, C, X)))
        b = tx(frame(CallKind.CALL, B, D, frame(CallKind.STATICCALL, D, X)))
        assert not conflicting(a, b, ConflictMode.WRITE_AWARE)
        assert conflicting(a, b, ConflictMode.ANY_TOUCH)

    def test_default_mode_is_write_aware(self):
        a = tx(frame(CallKind.CALL, A, C, frame(CallKind.STATICCALL, C, X)))
        b = tx(frame(CallKind.CALL, B, D, frame(CallKind.STATICCALL, D, X)))
        assert conflicting(a, b) is False


class TestInvariants:
    def test_negative_gas(self):
        with pytest.raises(TraceError):
            CallFrame(CallKind.CALL, A, B, -1)

    def test_zero_gas_transaction(self):
        with pytest.raises(TraceError):
            tx(frame(CallKind.CALL, A, B), gas=0)

    def test_root_must_start_at_sender(self):
        with pytest.raises(TraceError):
            Transaction(H, B, A, 100, frame(CallKind.CALL, A, B))

    def test_block_gas_sum(self):
        t = tx(frame(CallKind.CALL, A, B), gas=100)
        with pytest.raises(TraceError, match="block 7"):
            BlockTrace(7, 0, 99, (t,))

    def test_target_order_mixes_cells_and_addresses(self):
        cells = [VirtualCell(X, B), A, VirtualCell(X, A, B), VirtualCell(X, A)]
        ordered = sorted(cells, key=target_key)
        assert ordered[0] == A
        assert ordered[1:] == [VirtualCell(X, A), VirtualCell(X, A, B), VirtualCell(X, B)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_conflict_properties_on_synthetic_blocks(n):
    block = generate_block(preset("defi", seed=n % 7, tx_count=25, tx_count_spread=5), 15_000_000 + n)
    txs = block.transactions[:18]
    for a, b in itertools.combinations(txs, 2):
        wa = conflicting(a, b, ConflictMode.WRITE_AWARE)
        at = conflicting(a, b, ConflictMode.ANY_TOUCH)
        assert wa == conflicting(b, a, ConflictMode.WRITE_AWARE)
        assert at == conflicting(b, a, ConflictMode.ANY_TOUCH)
        assert not wa or at
    again = list(parse_trace_file(dumps_trace_file([block]).splitlines()))[0]
    assert [tx_scope_set(t) for t in again.transactions] == [tx_scope_set(t) for t in block.transactions]
