"""Smoke test for the `postcond` extension module.

Build it first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import json
import math
import pathlib
import shutil
import tempfile

import postcond

ROOT = pathlib.Path(__file__).resolve().parent.parent
CLAMP = ROOT / "crates" / "core" / "fixtures" / "corpus" / "clamp"


def check_metrics():
    assert math.isclose(postcond.pass_at_k(5, 2, 1), 0.4, abs_tol=1e-12)
    assert math.isclose(postcond.pass_at_k(5, 2, 3), 0.9, abs_tol=1e-12)
    delta, rho = postcond.gap_metrics(0.118, 0.055)
    assert f"{delta:.3f}" == "0.063" and f"{rho:.3f}" == "0.466"
    assert postcond.gap_metrics(0.0, 0.0)[1] is None
    report = postcond.metric_report([("a", 5, 4, 3), ("b", 5, 0, 0)], [1])
    assert math.isclose(report["corr_at"]["1"], 0.4)
    try:
        postcond.pass_at_k(3, 1, 4)
    except ValueError:
        pass
    else:
        raise AssertionError("k > n accepted")


def check_selection():
    vs = postcond.trigram_embed(["fn clamp(x, lo, hi)", "fn max3(a, b, c)", "fn clamp(x, lo, hi)"])
    assert len(vs) == 3 and vs[0] == vs[2]
    assert postcond.farthest_first_select([[1.0, 0.0], [0.0, 1.0], [0.7071, 0.7071]], 2) == [0, 1]


def check_harness():
    src = (CLAMP / "src.fx").read_text()
    methods = postcond.extract_methods(src, "src.fx")
    assert [m["name"] for m in methods] == ["clamp"]
    mutants = postcond.operator_mutants(src, "clamp")
    assert len(mutants) >= 5 and all(m["diff"].startswith("--- a/") for m in mutants)

    complete = json.loads((CLAMP / "postconds" / "complete.json").read_text())
    # The runner loads every unit in the tests directory, so keep the
    # subject source out of it.
    with tempfile.TemporaryDirectory() as tests:
        shutil.copy(CLAMP / "tests.fx", tests)
        out = postcond.evaluate(src, "clamp", complete, tests)
        assert out["value"] == 1, out
        negated = next(m for m in mutants if m["operator"] == "negate_conditionals")
        out = postcond.evaluate(negated["source"], "clamp", complete, tests)
        assert out["value"] in (0, -1), out


def check_kill_matrix():
    def cell(v):
        kind = {1: "ALL_PASS", 0: "VIOLATION", -1: "TEST_FAIL"}[v]
        return {"value": v, "kind": kind, "violated": [], "ms": 0}

    doc = {
        "task_id": "t",
        "set_ids": ["s0", "s1", "s2"],
        "variants": [
            {"id": "original", "scheme": None, "operator": None},
            {"id": "o1", "scheme": "OPERATOR", "operator": "negate_conditionals"},
            {"id": "l1", "scheme": "LLM", "operator": None},
        ],
        "cells": [[cell(v) for v in row] for row in ([1, 0, 0], [1, 0, 1], [0, 0, 0])],
    }
    km = postcond.KillMatrix.from_json(json.dumps(doc))
    assert km.values() == [[1, 0, 0], [1, 0, 1], [0, 0, 0]]
    assert [v["complete"] for v in km.verdicts()] == [True, False, False]
    assert math.isclose(km.comp_at_1(), 1 / 3)
    assert km.fdr("OPERATOR") == 0.5
    row = km.ablate({"variant": "SCHEME_EXCLUDE", "scheme": "LLM"})
    assert math.isclose(row["mean"], 2 / 3)
    assert json.loads(km.to_json())["task_id"] == "t"


if __name__ == "__main__":
    check_metrics()
    check_selection()
    check_harness()
    check_kill_matrix()
    print("python smoke test ok")
