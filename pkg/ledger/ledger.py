import json
import logging
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from utils.utils import compute_hash, write_json

logger = logging.getLogger(__name__)

GENESIS_HASH = "0" * 64


@dataclass
class BlockHeader:
    """Block header containing metadata"""
    timestamp: float
    previous_hash: str
    block_number: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BlockHeader":
        return cls(**data)


@dataclass
class Block:
    """One run record: what ran, with which config and seed, and the digests of what it wrote."""

    header: BlockHeader
    info: str
    transaction: dict
    hash: Optional[str] = None

    def calculate_hash(self) -> str:
        block_dict = {
            "header": self.header.to_dict(),
            "info": self.info,
            "transaction": self.transaction,
        }
        return compute_hash(json.dumps(block_dict, sort_keys=True))

    def finalize_block(self) -> None:
        self.hash = self.calculate_hash()

    def to_dict(self) -> dict:
        return {
            "header": self.header.to_dict(),
            "info": self.info,
            "transaction": self.transaction,
            "hash": self.hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Block":
        return cls(
            header=BlockHeader.from_dict(data["header"]),
            info=data["info"],
            transaction=data["transaction"],
            hash=data["hash"],
        )


class LedgerError(ValueError):
    pass


class Ledger:
    """
    Append-only, hash-chained record of runs kept as JSON next to the outputs.

    Blocks are keyed by their number as a string. Every append rewrites the file
    atomically, so a crash leaves the previous chain intact.
    """

    def __init__(self, ledger_file: str = "results/ledger.json"):
        self.ledger_file = Path(ledger_file)
        self.blocks: Dict[str, Block] = {}
        self.load_ledger()

        if not self.blocks:
            self._create_genesis_block()

    def _create_genesis_block(self) -> None:
        header = BlockHeader(timestamp=datetime.now().timestamp(), previous_hash=GENESIS_HASH, block_number=0)
        genesis_block = Block(header=header, info="genesis", transaction={})
        genesis_block.finalize_block()
        self.blocks["0"] = genesis_block
        self.save_ledger()
        logger.info("Genesis block created in %s", self.ledger_file)

    def load_ledger(self) -> None:
        if not self.ledger_file.exists():
            self.blocks = {}
            return
        try:
            with open(self.ledger_file, "r") as f:
                data = json.load(f)
            self.blocks = {num: Block.from_dict(block) for num, block in data.items()}
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            # an unreadable ledger is never silently replaced
            raise LedgerError(f"cannot read ledger {self.ledger_file}: {e}") from e

    def save_ledger(self) -> None:
        write_json(self.ledger_file, {num: block.to_dict() for num, block in self.blocks.items()})

    def get_latest_block_number(self) -> int:
        if not self.blocks:
            return -1
        return max(int(num) for num in self.blocks)

    def add_transaction(self, transaction: dict, info: str) -> Block:
        latest = self.get_latest_block_number()
        header = BlockHeader(
            timestamp=datetime.now().timestamp(),
            previous_hash=self.blocks[str(latest)].hash,
            block_number=latest + 1,
        )
        block = Block(header=header, info=info, transaction=transaction)
        block.finalize_block()
        self.blocks[str(latest + 1)] = block
        self.save_ledger()
        logger.info("Ledger block %d appended (%s)", latest + 1, info)
        return block

    def add_run(self, name: str, seed: int, config_digest: str, passed: Optional[bool],
                outputs: Dict[str, str], status: int) -> Block:
        """Record a finished run; outputs maps file names to their SHA-256."""
        transaction = {
            "experiment": name,
            "seed": int(seed),
            "config_sha256": config_digest,
            "passed": passed,
            "exit_status": int(status),
            "outputs": dict(sorted(outputs.items())),
        }
        return self.add_transaction(transaction, info=name)

    def verify_chain(self) -> Tuple[bool, Optional[int]]:
        """Check links and hashes; returns (ok, first bad block number)."""
        count = len(self.blocks)
        for i in range(count):
            block = self.blocks.get(str(i))
            if block is None:
                return False, i
            if block.hash != block.calculate_hash():
                return False, i
            expected = GENESIS_HASH if i == 0 else self.blocks[str(i - 1)].hash
            if block.header.previous_hash != expected or block.header.block_number != i:
                return False, i
        return True, None

    def get_block(self, block_number: int) -> Optional[Block]:
        return self.blocks.get(str(block_number))

    def get_run_history(self, config_digest: str) -> List[dict]:
        """All runs made from a given config digest, oldest first."""
        history = []
        for num in sorted(self.blocks, key=int):
            block = self.blocks[num]
            if block.transaction.get("config_sha256") == config_digest:
                history.append({
                    "block_number": int(num),
                    "block_hash": block.hash,
                    "timestamp": block.header.timestamp,
                    "info": block.info,
                    "seed": block.transaction["seed"],
                    "passed": block.transaction["passed"],
                    "outputs": block.transaction["outputs"],
                })
        return history
