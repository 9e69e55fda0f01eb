"""Master/servant execution accounting.

Nothing here moves data; the ledger counts what a block-parallel cluster
would do: block multiplications, scalar multiply-adds, bytes between master
and nodes, and storage on either side.
"""

import threading
from dataclasses import dataclass, field
from math import ceil

FLOAT_BYTES = 4


@dataclass
class CostLedger:
    block_mults: int = 0
    scalar_ops: int = 0
    bytes_master_to_node: int = 0
    bytes_node_to_master: int = 0
    node_storage_peak: int = 0
    master_storage: int = 0
    node_budget: int | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def bytes_moved(self):
        return self.bytes_master_to_node + self.bytes_node_to_master

    def record_mult(self, m, n, n_in=None, n_out=None):
        """Count one application of an ``m x n`` block (or its transpose).

        ``n_in``/``n_out`` default to a forward product (``n`` in, ``m`` out);
        the byte total is the same either way.
        """
        n_in = n if n_in is None else n_in
        n_out = m if n_out is None else n_out
        with self._lock:
            self.block_mults += 1
            self.scalar_ops += m * n
            self.bytes_master_to_node += n_in * FLOAT_BYTES
            self.bytes_node_to_master += n_out * FLOAT_BYTES
            self.node_storage_peak = max(self.node_storage_peak, m + n)
            if self.node_budget is not None and m + n > self.node_budget:
                raise ValueError(f"block of {m}+{n} floats exceeds node budget {self.node_budget}")

    def snapshot(self):
        return {
            "block_mults": self.block_mults,
            "scalar_ops": self.scalar_ops,
            "bytes_master_to_node": self.bytes_master_to_node,
            "bytes_node_to_master": self.bytes_node_to_master,
            "bytes_moved": self.bytes_moved,
            "node_storage_peak": self.node_storage_peak,
            "master_storage": self.master_storage,
        }


@dataclass(frozen=True)
class BlockEvent:
    """One block product as seen by the master: shape of the block used."""

    rows: int
    cols: int
    transpose: bool = False


def account_epoch(ledger, events):
    """Add the events of one epoch to ``ledger`` and return it."""
    for ev in events:
        if ev.transpose:
            ledger.record_mult(ev.rows, ev.cols, n_in=ev.rows, n_out=ev.cols)
        else:
            ledger.record_mult(ev.rows, ev.cols)
    return ledger


def plan_rounds(node_num, tasks):
    """Pack block tasks into rounds of at most ``node_num`` tasks each."""
    if node_num < 1:
        raise ValueError("node_num must be >= 1")
    tasks = list(tasks)
    return [tasks[k:k + node_num] for k in range(0, len(tasks), node_num)]


def n_rounds(node_num, n_tasks):
    return ceil(n_tasks / node_num)


def master_storage(M, N, r, c):
    """Floats held by the master: N z-memories of length r, M gradient
    memories of length c, plus the image and the residual."""
    return N * r + M * c + r + c


def master_storage_stated(M, N, r, c):
    """The ``M r + N c`` proportionality quoted alongside the storage plots."""
    return M * r + N * c


def block_dims(partition):
    """Largest row and column block sizes of a partition."""
    return (max(len(b) for b in partition.row_blocks),
            max(len(b) for b in partition.col_blocks))


DEFAULT_SWEEP_M = (2, 4, 8, 16, 32, 64, 135)
DEFAULT_SWEEP_N = (2, 4, 8, 16)


def storage_sweep(geom, budget, Ms=DEFAULT_SWEEP_M, Ns=DEFAULT_SWEEP_N):
    """Evaluate node and master storage over candidate (M, N) partitions.

    Rows are split into contiguous chunks so the row block size can go below
    one projection angle.  Returns ``(rows, best)``: one dict per candidate
    with ``fits`` flagging ``m + n <= budget``, and the fitting candidate
    with the smallest master storage.
    """
    from .partition import make_partition

    rows = []
    for M in Ms:
        for N in Ns:
            if M > geom.n_rows or N > geom.n_cols:
                continue
            part = make_partition(geom, M, N, tiles_per_angle=1, row_unit="row")
            m, n = block_dims(part)
            rows.append({
                "M": M, "N": N, "m": m, "n": n, "node_storage": m + n,
                "fits": m + n <= budget,
                "master_storage": master_storage(M, N, geom.n_rows, geom.n_cols),
                "master_storage_stated": master_storage_stated(M, N, geom.n_rows, geom.n_cols),
            })
    fitting = [row for row in rows if row["fits"]]
    best = min(fitting, key=lambda row: (row["master_storage"], row["M"] * row["N"]), default=None)
    return rows, best
