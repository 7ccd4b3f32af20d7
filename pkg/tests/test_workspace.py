from __future__ import annotations

import hashlib
import json
import os
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentdag.errors import (
    AddressEscape,
    DanglingAddress,
    DescriptorTooLong,
    NotFound,
    UnknownRecipient,
    VerifyOnlyViolation,
)
from agentdag.workspace import (
    ADDRESS_LIMIT,
    Descriptor,
    Message,
    Workspace,
    message_size_bound,
    normalize_address,
)


def test_put_get_small_payload(ws):
    addr, desc = ws.put("results/a.txt", b"0123456789", "ten digits")
    assert addr == "results/a.txt"
    assert desc.size_bytes == 10
    assert ws.get("results/a.txt") == b"0123456789"
    assert (ws.root / "artifacts" / "results" / "a.txt").read_bytes() == b"0123456789"


@pytest.mark.parametrize("bad", ["../x", "a/../../x", "", "   ", "a/\x00b", "a b"])
def test_bad_addresses_rejected(ws, bad):
    with pytest.raises(AddressEscape):
        ws.put(bad, b"x", "bad")


def test_address_normalization():
    assert normalize_address("/results//./a.txt") == "results/a.txt"
    assert normalize_address("a\\b.txt") == "a/b.txt"
    assert len(normalize_address("a" * ADDRESS_LIMIT)) == ADDRESS_LIMIT
    with pytest.raises(AddressEscape):
        normalize_address("a" * (ADDRESS_LIMIT + 1))


def test_descriptor_limit_boundary(ws):
    ws.put("ok.txt", b"x", "d" * 512)
    with pytest.raises(DescriptorTooLong):
        ws.put("over.txt", b"x", "d" * 513)
    with pytest.raises(DescriptorTooLong):
        ws.put("far.txt", b"x", "d" * 600)
    assert not ws.exists("over.txt")


def test_descriptor_limit_counts_escaped_chars():
    Descriptor("q" * 510 + "\n")  # escapes to 2 chars: 512 in total
    with pytest.raises(DescriptorTooLong):
        Descriptor("q" * 511 + "\n")


def test_unknown_address_not_found(ws):
    with pytest.raises(NotFound):
        ws.get("nope.txt")


def test_one_mib_random_round_trip(ws):
    payload = os.urandom(1 << 20)
    ws.put("blob.bin", payload, "random bytes")
    assert hashlib.sha256(ws.get("blob.bin")).digest() == hashlib.sha256(payload).digest()


@given(st.binary(max_size=2048))
def test_round_trip_is_identity(tmp_path_factory, payload):
    ws = Workspace(tmp_path_factory.mktemp("rt"))
    ws.put("p.bin", payload, "payload")
    assert ws.get("p.bin") == payload


def test_default_descriptor_when_absent(ws):
    _, desc = ws.put("notes/plan.md", b"# Plan\nsteps\n")
    assert desc.text == "notes/plan.md (13 bytes): # Plan"
    assert desc.content_kind == "text/markdown"
    _, drafted = ws.put("x.txt", b"abc", describe=lambda addr, data: f"drafted for {addr}")
    assert drafted.text == "drafted for x.txt"


def test_send_receipt_and_errors(ws):
    ws.register("a", "b")
    addr, desc = ws.put("r.txt", b"r", "result")
    receipt = ws.send(Message("a", "b", addr, desc))
    assert receipt.inbox_length == 1 and len(ws.inbox("b")) == 1
    with pytest.raises(DanglingAddress):
        ws.send(Message("a", "b", "missing.txt", desc))
    with pytest.raises(UnknownRecipient):
        ws.send(Message("a", "ghost", addr, desc))


def test_inbox_preserves_order_per_sender(ws):
    ws.register("s1", "s2", "dst")
    addr, desc = ws.put("r.txt", b"r", "result")
    for i in range(100):
        ws.send(Message(f"s{i % 2 + 1}", "dst", addr, Descriptor(f"msg {i}")))
    inbox = ws.inbox("dst")
    for sender in ("s1", "s2"):
        seq = [int(m.desc.text.split()[1]) for m in inbox if m.sender == sender]
        assert seq == sorted(seq) and len(seq) == 50
    # persisted log matches memory
    lines = (ws.root / "inbox" / "dst.log").read_text().splitlines()
    assert [json.loads(l)["desc"]["text"] for l in lines] == [m.desc.text for m in inbox]


def test_message_has_no_payload_and_is_bounded(ws):
    ws.register("a", "b")
    for size in (1, 1 << 16, 1 << 20):
        addr, desc = ws.put(f"p{size}.bin", b"z" * size, "z" * 512)
        wire = Message("a", "b", addr, desc).serialize()
        assert set(json.loads(wire)) == {"from", "to", "addr", "desc"}
        assert len(wire) <= message_size_bound()


def test_message_bound_is_tight_for_max_fields():
    from agentdag.graph import AGENT_ID_LIMIT

    ids = "i" * AGENT_ID_LIMIT
    kind = "k" * 64
    msg = Message(ids, ids, "a" * ADDRESS_LIMIT, Descriptor("d" * 512, kind, 10**19))
    assert len(msg.serialize()) <= message_size_bound()
    assert message_size_bound() - len(msg.serialize()) <= 1


def test_reopen_restores_index_and_inboxes(tmp_path):
    ws = Workspace(tmp_path / "r")
    ws.register("a", "b")
    addr, desc = ws.put("x.txt", b"1", "first")
    ws.put("x.txt", b"2", "second")
    ws.send(Message("a", "b", addr, desc))
    again = Workspace(tmp_path / "r")
    assert again.get("x.txt") == b"2"
    assert again.descriptor("x.txt").text == "second"
    assert len(again.inbox("b")) == 1
    assert [r["text"] for r in again.audit_trail("x.txt")] == ["first", "second"]


def test_concurrent_puts_same_address_all_recorded(ws):
    def writer(i):
        ws.put("shared.txt", f"v{i}".encode(), f"version {i}")

    threads = [threading.Thread(target=writer, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    trail = ws.audit_trail("shared.txt")
    assert len(trail) == 16
    last = trail[-1]["text"].split()[1]
    assert ws.get("shared.txt") == f"v{last}".encode()


def test_read_only_view_rejects_writes(ws):
    ws.put("a.txt", b"a", "a")
    before = ws.ledger_digest()
    ro = ws.read_only()
    assert ro.get("a.txt") == b"a"
    with pytest.raises(VerifyOnlyViolation):
        ro.put("b.txt", b"b", "b")
    with pytest.raises(VerifyOnlyViolation):
        ro.send(None)
    assert ws.ledger_digest() == before


def test_subspace_is_isolated(ws):
    ws.put("a.txt", b"a", "a")
    sub = ws.subspace("branch-1")
    assert not sub.exists("a.txt")
    sub.put("b.txt", b"b", "b")
    assert not ws.exists("b.txt")
