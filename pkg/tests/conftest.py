import hashlib
import math

import pytest

from structprompt.data import Example, Metric, Split


def make_split(name, n, prefix="x", metric=Metric.EXACT_MATCH, long_inputs=False):
    pad = " lorem ipsum dolor sit amet" * 20 if long_inputs else ""
    return Split(name=name, metric=metric, examples=tuple(
        Example(id=f"{prefix}{k}", input=f"What is {k} plus {k}?{pad}", target=str(2 * k))
        for k in range(n)))


def oracle_correct(global_seed, item_id, assignment, q):
    """Independent re-derivation of the simulator's hash predicate."""
    h = hashlib.sha256(f"{global_seed}|{item_id}|{assignment.canonical()}".encode()).digest()
    return int.from_bytes(h[:8], "big") % 1_000_000 < math.floor(1_000_000 * q)


def oracle_J(split, assignment, q, global_seed=0):
    return sum(oracle_correct(global_seed, e.id, assignment, q) for e in split) / len(split)


@pytest.fixture
def train():
    return make_split("train", 9, prefix="t")


@pytest.fixture
def val():
    return make_split("val", 12, prefix="v")
