import itertools

import pytest

from frontscan.chain import Address, Block, ChainSnapshot, PriceTable, Transaction, TransferEvent
from frontscan.ingest import load_snapshot
from frontscan.synthetic import generate_fixture

_counter = itertools.count(1)


def addr(n: int) -> Address:
    return Address(n.to_bytes(20, "big"))


def tx_hash(n: int = None) -> str:
    n = next(_counter) if n is None else n
    return "0x" + n.to_bytes(32, "big").hex()


def make_tx(block=1, index=0, sender=1, receiver=2, *, value=0, gas_limit=100_000, gas_used=50_000,
            gas_price=10**9, data=b"", status=None, hash=None):
    kw = {} if status is None else {"status": status}
    return Transaction(
        hash=hash or tx_hash(),
        block_number=block,
        tx_index=index,
        sender=sender if isinstance(sender, Address) else addr(sender),
        receiver=receiver if (receiver is None or isinstance(receiver, Address)) else addr(receiver),
        value=value,
        gas_limit=gas_limit,
        gas_used=gas_used,
        gas_price=gas_price,
        input=data,
        **kw,
    )


def make_block(number, txs=(), timestamp=None, miner=99, gas_limit=30_000_000):
    return Block(
        number=number,
        timestamp=1_600_000_000 + number * 13 if timestamp is None else timestamp,
        miner=addr(miner),
        gas_limit=gas_limit,
        gas_used=sum(t.gas_used for t in txs),
        transactions=tuple(txs),
    )


def make_event(s, r, a, c, tx, log_index=0):
    return TransferEvent(
        s=addr(s) if isinstance(s, int) else s,
        r=addr(r) if isinstance(r, int) else r,
        a=a,
        c=addr(c) if isinstance(c, int) else c,
        h=tx.hash,
        i=tx.tx_index,
        g=tx.gas_price,
        block_number=tx.block_number,
        log_index=log_index,
    )


PRICES = PriceTable.from_pairs([("2020-01-01", "100.00"), ("2020-09-01", "400.00")])


def snapshot_of(blocks, **kw):
    kw.setdefault("prices", PRICES)
    return ChainSnapshot({b.number: b for b in blocks}, **kw)


@pytest.fixture(scope="session")
def small_corpus():
    src, manifest = generate_fixture(11, 400, {"insertion": 8, "displacement": 5, "suppression": 3, "competition": 1})
    snap = load_snapshot(src, manifest.from_block, manifest.to_block)
    return src, manifest, snap


# -- acceptance reporting ------------------------------------------------------

_AC_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_AC_RESULTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    ac, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    crash = getattr(rep.longrepr, "reprcrash", None)
    if rep.failed and crash is not None:
        detail = f"{detail}; {crash.message}" if detail else crash.message
    item.config.stash[_AC_RESULTS][ac] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_AC_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(results, key=lambda a: int(a[2:])):
        status, title, detail = results[ac]
        terminalreporter.write_line(f"{ac} {status}  {title}" + (f"  [{detail}]" if detail else ""))
