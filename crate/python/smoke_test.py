"""Smoke test for the fingrav Python extension.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import json

import fingrav


def main():
    assert "cb-short" in fingrav.presets()

    g = fingrav.lookup_guidance(40_000)
    assert (g.runs, g.loi_density_ns, g.margin_rel) == (400, 5_000, 0.05), g

    assert fingrav.compute_ssp_executions(1_000_000, 50_000) == 20
    assert fingrav.compute_ssp_executions(1_000_000, 1_000_000) == 4
    assert fingrav.detect_warmup_count([150, 120, 101, 100, 100]) == 2

    golden = fingrav.select_golden_runs({0: 1000, 1: 1010, 2: 1500, 3: 990}, 0.05)
    assert golden == [0, 1, 3], golden

    assert fingrav.gpu_to_cpu(200, 100, 5_000, 300) == 4_700 + 1_000

    report = fingrav.run_experiment(preset="cb-long", seed=3, runs=40)
    assert report.kernel_id == "cb-long"
    assert report.ssp_execs_total == 4
    points = report.profile("ssp", "total")
    assert points and all(p > 0 for _, p in points)
    assert len(report.fit_coefficients()) == 5
    doc = json.loads(report.to_json())
    assert doc["version"] == fingrav.REPORT_VERSION

    short = fingrav.run_experiment(preset="cb-short")
    print(f"cb-short SSE vs SSP error: {short.sse_ssp_error['total']:.2f}%")

    try:
        fingrav.run_experiment(config_toml='preset = "ramp"\nbogus = 1\n')
    except ValueError as e:
        assert "bogus" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
