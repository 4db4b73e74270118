"""Sharded relational blockchain database, desk scale.

Library layout:

- ``vso`` / ``pairing`` / ``polyops``: accumulator-based verifiable set
  operations and their algebra.
- ``merkle``: transaction trees, block headers, SPV checks, the replicated
  table-location tree.
- ``relational``: schema/rows, the SQL subset, planner and executor.
- ``ledger``: per-shard simulated BFT ledgers and the on-chain cross-shard
  commit path.
- ``query``: the delegation-based off-chain cross-shard query pipeline plus
  the shard-cooperation baseline.
- ``migration``: off-chain live table migration plus the stop-restart
  baseline.
- ``balancer``: demand metering and greedy inter-shard planning.
- ``sim``: deterministic discrete-event harness, workloads, adversaries,
  metrics.
- ``cli`` / ``report``: command-line front end; figures and delimited output.
"""

__version__ = "0.1.0"
