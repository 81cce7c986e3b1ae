"""Smoke test for the smsplit_py extension.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import math

import smsplit_py as sp


def main():
    assert "8b" in sp.model_presets()
    assert "mixed" in sp.workload_presets()

    # below saturation latency scales as 1/r
    t50 = sp.compute_latency(1e12, 0.5, 0.7, 0.1, 1e14)
    t25 = sp.compute_latency(1e12, 0.25, 0.7, 0.1, 1e14)
    assert math.isclose(t25, 2 * t50, rel_tol=1e-12)

    # no prefill traffic: decode sees the full bandwidth
    assert math.isclose(sp.effective_decode_bandwidth(1.0, 0.0, 0.0, 0.5, 864e9), 864e9)

    assert sp.select_mode(70, 100) == "prefill_prioritized"
    assert sp.select_mode(71, 100) == "decode_prioritized"

    cm = sp.CostModel("8b", "l20")
    alone = cm.decode_latency([1024] * 16, 0.5)
    shared = cm.decode_latency([1024] * 16, 0.5, prefill=(2048, 2048))
    assert shared > alone > 0
    assert cm.prefill_latency(2048, 2048, 0.3) > cm.prefill_latency(2048, 2048, 0.6)

    plan = sp.spf_schedule([(1, 0.0, 900), (2, 0.0, 100), (3, 0.0, 300)], 500)
    assert plan[0] == (2, 100)

    trace = sp.generate_trace("arxiv", 2.0, 20, seed=3)
    assert len(trace) == 20 and trace == sp.generate_trace("arxiv", 2.0, 20, seed=3)

    out = sp.simulate("nexus", "sharegpt", rate=4.0, count=30, seed=1)
    assert out["completed"] == 30 and not out["timed_out"]
    print("nexus mean TTFT %.3fs, TBT %.4fs" % (out["report"]["ttft"]["mean"], out["report"]["tbt"]["mean"]))
    print("smoke test ok")


if __name__ == "__main__":
    main()
