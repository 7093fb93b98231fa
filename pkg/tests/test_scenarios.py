import json

import pytest

from flux.scenarios import ScenarioReport, light_show, main, silent_disco


@pytest.mark.parametrize("group_size", [2, 0])
def test_light_show(group_size):
    report = light_show(group_size)
    assert report.ok, report.failing()


def test_silent_disco_rejects_bad_listener_count():
    with pytest.raises(ValueError):
        silent_disco(listeners=1)


def test_report_needs_steps():
    r = ScenarioReport("x")
    assert not r.ok
    r.check("a", True)
    r.check("b", False, "why")
    assert not r.ok and r.failing() == ["b"]
    assert r.to_json()["steps"][1] == {"name": "b", "ok": False, "detail": "why"}


def test_cli_json(capsys):
    assert main(["light-show", "--group-size", "1", "--json"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert lines[-1] == {"scenario": "light-show", "ok": True} and all(x["ok"] for x in lines[:-1])
