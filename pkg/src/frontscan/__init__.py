"""Offline detection of displacement, insertion and suppression frontrunning."""

from .bloom import BloomFilter, bloom_contains, bloom_insert, bloom_params, ngrams
from .chain import (
    Address,
    Block,
    ChainSnapshot,
    ExecutionTrace,
    InternalTransfer,
    PriceTable,
    Terminal,
    Transaction,
    TransferEvent,
    TxStatus,
    fee,
    wei_to_usd,
)
from .config import Config
from .displacement import (
    DisplacementAttack,
    DisplacementDetector,
    check_displacement_heuristics,
    compute_displacement_result,
    scan_displacement,
    validate_by_simulation,
)
from .exceptions import ConfigError, DataError, FrontscanError, OracleError
from .graph import AttackerClusterer, AttackerCluster, AttackerGraph, build_graph, connected_components
from .ingest import FixtureSource, JsonRpcSource, decode_transfer_event, encode_transfer_event, load_fixture, load_snapshot
from .insertion import (
    InsertionAttack,
    InsertionDetector,
    check_insertion_heuristics,
    compute_insertion_result,
    detect_competition,
    scan_insertion,
    tag_gas_token_usage,
)
from .oracle import ExecutionOracle, ReplayOracle
from .report import report_yearly_and_hourly, score_against_manifest, summarize
from .suppression import (
    RoundStatus,
    Strategy,
    SuppressionAttack,
    SuppressionDetector,
    classify_strategy,
    compute_suppression_result,
    scan_suppression,
    segment_rounds,
)
from .synthetic import (
    CpmmPool,
    GroundTruthManifest,
    cpmm_swap_x_for_y,
    cpmm_swap_y_for_x,
    generate_fixture,
    plant_displacement_scenario,
    plant_insertion_scenario,
    plant_suppression_scenario,
)

__version__ = "0.1.0"
