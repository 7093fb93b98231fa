import json

import pytest

from flux.bench import (
    SIZES,
    BenchConfig,
    make_payload,
    main,
    overhead_pct,
    payload_schema,
    rss_growth_pct,
    run_bench,
    run_pair,
)
from flux.schema import Envelope, encode_envelope, validate


@pytest.mark.parametrize("size", SIZES)
def test_payload_size_classes(size):
    p = make_payload(size, 7)
    assert validate(p, payload_schema(size)).ok
    body = len(json.dumps(p).encode())
    assert abs(body - size) <= 0.05 * size + 40
    assert len(encode_envelope(Envelope("7", 9, p))) > body


def test_arithmetic():
    assert overhead_pct(116.0, 100.0) == pytest.approx(16.0)
    assert overhead_pct(80.0, 100.0) == pytest.approx(-20.0)
    assert rss_growth_pct(1000, 1040) == pytest.approx(4.0)


@pytest.mark.parametrize("kw", [dict(size=200), dict(mode="fast"), dict(transport="sctp"), dict(n=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        BenchConfig(**kw)


def test_small_pair_delivers_everything_in_order():
    out = run_pair(BenchConfig(50, 3500, 1, "tcp"))
    for mode in ("raw", "middleware"):
        r = out[mode]
        assert r["delivered"] == 50 and r["in_order"] and r["loss_rate"] == 0
        assert r["total_active_ms"] > 0
    assert out["overhead_pct"] == pytest.approx(
        overhead_pct(out["middleware"]["total_active_ms"], out["raw"]["total_active_ms"]))


def test_udp_gps_run():
    r = run_bench(BenchConfig(50, 100, 2, "udp"))
    assert 0 < r.delivered <= 50 and r.loss_rate == pytest.approx(1 - r.delivered / 50)


def test_cli_json(capsys):
    assert main(["--n", "20", "--size", "100", "--interval-ms", "1", "--mode", "middleware", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["delivered"] == 20 and out["config"]["mode"] == "middleware"
