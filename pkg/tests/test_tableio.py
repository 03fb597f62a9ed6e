import json

from rwrelab import (
    Direction,
    Domain,
    TransitionKernel,
    directions,
    green_finite,
    j_exact,
    stationary_env,
    transition_difference_decay,
)
from rwrelab.tableio import fmt


def test_fmt_full_precision():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(1) == "1"
    assert fmt(True) == "true"
    assert fmt("abc") == "abc"


def test_jtable_csv_round_trip(tmp_path, drifted_2d):
    j = j_exact(drifted_2d.p_gamma(0.1), gamma=0.1)
    path = tmp_path / "j.csv"
    j.to_csv(path, config={"fixture": "drifted-2d", "gamma": 0.1})
    raw = path.read_bytes()
    assert b"\r\n" in raw  # RFC-4180 line endings
    lines = raw.decode().split("\r\n")
    assert lines[0].startswith("# config ")
    cfg = json.loads(lines[0][len("# config ") :])
    assert cfg["gamma"] == 0.1
    assert lines[1] == "direction,value,method,resolution,est_error"
    body = [l for l in lines[2:] if l]
    assert len(body) == 4
    for e, line in zip(directions(2), body):
        cells = line.split(",")
        assert cells[0] == e.key
        assert float(cells[1]) == j.value(e)
        assert cells[2] == "quadrature"


def test_green_table_csv(tmp_path):
    dom = Domain.interval(1, 4)
    env = stationary_env(dom, TransitionKernel(1, (0.5, 0.5)))
    table = green_finite(dom, 1.0, env, (1,))
    path = tmp_path / "g.csv"
    table.to_csv(path)
    lines = path.read_bytes().decode().split("\r\n")
    assert lines[0] == "site,value,method,resolution,est_error"
    values = {l.split(",")[0]: float(l.split(",")[1]) for l in lines[1:] if l}
    assert values["0"] == 0.8
    assert values["5"] == 0.19999999999999996


def test_decay_table_csv(tmp_path):
    s = TransitionKernel(2, (0.25,) * 4)
    table = transition_difference_decay(s, [4, 8], dirs=[Direction(1, 1)])
    path = tmp_path / "d.csv"
    table.to_csv(path, config={"n_values": [4, 8]})
    lines = path.read_bytes().decode().split("\r\n")
    assert lines[1] == "n,direction,l1_difference"
    assert lines[2].startswith("4,+1,")
