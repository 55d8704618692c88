"""Smoke test for the orbit5gc Python module.

Run from the repository root after `pip install --no-build-isolation -e crates/py`.
"""

import json
import pathlib
import sys

import orbit5gc

ROOT = pathlib.Path(__file__).resolve().parent.parent


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    return bool(cond)


def main():
    results = []

    msg = orbit5gc.NasMessage.parse("RegistrationComplete{}")
    wire = msg.encode()
    results.append(check(orbit5gc.NasMessage.decode(wire) == msg, "codec round trip"))
    results.append(check(msg.message_type == "RegistrationComplete", "message type name"))
    try:
        orbit5gc.NasMessage.decode(b"\x7e")
        results.append(check(False, "truncated message rejected"))
    except ValueError:
        results.append(check(True, "truncated message rejected"))

    scenario = orbit5gc.Scenario.load(str(ROOT / "scenarios" / "sat200ms.toml"))
    out = scenario.run()
    summary = out.summary
    reg = summary["latency"]["registration"]
    results.append(check(abs(reg["mean_us"] / 1000.0 - 501.621) < 0.01,
                         f"registration latency {reg['mean_us'] / 1000.0:.3f} ms"))
    results.append(check(out.verify() == [], "trace verifies clean"))
    results.append(check(orbit5gc.verify_trace(out.trace) == [], "verify_trace on text"))
    again = scenario.run()
    results.append(check(again.trace_hash == out.trace_hash, "same seed, same trace hash"))
    other = scenario.with_seed(scenario.seed + 1).run()
    results.append(check(other.trace_hash != out.trace_hash, "new seed, new trace hash"))
    rows = out.metrics_csv.strip().splitlines()
    results.append(check(len(rows) - 1 == scenario.metrics_ticks, f"{len(rows) - 1} metrics rows"))

    cmp = orbit5gc.compare_latency(10000.0, 550.0, 30.0)
    results.append(check(cmp["leo_us"] < cmp["fiber_us"], "LEO beats fiber over 10000 km"))
    results.append(check(abs(orbit5gc.slant_range_km(550.0, 90.0) - 550.0) < 1e-6,
                         "zenith slant range equals altitude"))

    one = orbit5gc.run_handshake("one_rtt", 1000, 500.0)
    two = orbit5gc.run_handshake("two_rtt", 1000, 500.0)
    results.append(check(two["connection_established_ms"] > one["connection_established_ms"],
                         "2-RTT slower than 1-RTT"))
    cal = orbit5gc.calibrate_table1()
    results.append(check(1.5 < cal["ratio"] < 2.5, f"calibrated ratio {cal['ratio']:.2f}"))

    print(json.dumps({"passed": sum(results), "total": len(results)}))
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
