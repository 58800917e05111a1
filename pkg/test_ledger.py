import json

import pytest

from ledger.ledger import GENESIS_HASH, Block, Ledger, LedgerError


@pytest.fixture
def ledger(tmp_path):
    return Ledger(str(tmp_path / "ledger.json"))


def test_new_ledger_starts_with_genesis(ledger):
    genesis = ledger.get_block(0)
    assert genesis.info == "genesis"
    assert genesis.header.previous_hash == GENESIS_HASH
    assert ledger.get_latest_block_number() == 0
    assert ledger.ledger_file.exists()
    assert ledger.verify_chain() == (True, None)


def test_runs_are_chained(ledger):
    first = ledger.add_run("contraction", 1, "a" * 64, True, {"contraction.csv": "b" * 64}, 0)
    second = ledger.add_run("mixing", 2, "c" * 64, False, {"z.csv": "1", "a.csv": "2"}, 1)
    assert first.header.block_number == 1
    assert first.header.previous_hash == ledger.get_block(0).hash
    assert second.header.previous_hash == first.hash
    assert list(second.transaction["outputs"]) == ["a.csv", "z.csv"]
    assert second.transaction["exit_status"] == 1
    assert ledger.verify_chain() == (True, None)


def test_ledger_survives_reload(ledger):
    block = ledger.add_run("sample", 5, "d" * 64, None, {}, 0)
    reloaded = Ledger(str(ledger.ledger_file))
    assert reloaded.get_latest_block_number() == 1
    assert reloaded.get_block(1).hash == block.hash
    assert reloaded.verify_chain() == (True, None)


def test_tampering_is_detected(ledger):
    ledger.add_run("sample", 5, "d" * 64, True, {"samples.csv": "0" * 64}, 0)
    ledger.add_run("sample", 6, "d" * 64, True, {"samples.csv": "1" * 64}, 0)
    data = json.loads(ledger.ledger_file.read_text())
    data["1"]["transaction"]["passed"] = False
    ledger.ledger_file.write_text(json.dumps(data))
    assert Ledger(str(ledger.ledger_file)).verify_chain() == (False, 1)


def test_relinked_block_is_detected(ledger):
    ledger.add_run("sample", 5, "d" * 64, True, {}, 0)
    ledger.add_run("sample", 6, "d" * 64, True, {}, 0)
    block = ledger.get_block(2)
    block.header.previous_hash = GENESIS_HASH
    block.finalize_block()
    assert ledger.verify_chain() == (False, 2)


def test_missing_block_is_detected(ledger):
    ledger.add_run("sample", 5, "d" * 64, True, {}, 0)
    ledger.add_run("sample", 6, "d" * 64, True, {}, 0)
    del ledger.blocks["1"]
    assert ledger.verify_chain() == (False, 1)


def test_unreadable_ledger_is_not_replaced(tmp_path):
    path = tmp_path / "ledger.json"
    path.write_text("{broken")
    with pytest.raises(LedgerError):
        Ledger(str(path))
    assert path.read_text() == "{broken"


def test_run_history_by_config_digest(ledger):
    ledger.add_run("contraction", 1, "a" * 64, True, {"contraction.csv": "x"}, 0)
    ledger.add_run("mixing", 1, "b" * 64, True, {}, 0)
    ledger.add_run("contraction", 2, "a" * 64, False, {"contraction.csv": "y"}, 1)
    history = ledger.get_run_history("a" * 64)
    assert [h["block_number"] for h in history] == [1, 3]
    assert [h["seed"] for h in history] == [1, 2]
    assert history[1]["passed"] is False
    assert ledger.get_run_history("f" * 64) == []


def test_block_round_trip_keeps_the_hash():
    ledger_block = Block.from_dict({
        "header": {"timestamp": 1.0, "previous_hash": GENESIS_HASH, "block_number": 0},
        "info": "genesis",
        "transaction": {},
        "hash": None,
    })
    ledger_block.finalize_block()
    assert Block.from_dict(ledger_block.to_dict()).calculate_hash() == ledger_block.hash
