"""Experiment runners and CSV output."""
import io
from pathlib import Path

import pytest

from cbgrr.experiments import (
    HEADER, ExperimentSpec, SpecError, read_csv, run_experiment, to_csv,
)
from golden_specs import GOLDEN

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_csv(name):
    expected = (GOLDEN_DIR / f"{name}.csv").read_text()
    assert to_csv(run_experiment(GOLDEN[name])) == expected


def test_parallel_jobs_give_identical_bytes(tmp_path):
    spec = GOLDEN["rr-throughput-cbgrr"]
    serial = to_csv(run_experiment(spec))
    out = tmp_path / "rows.csv"
    spec2 = ExperimentSpec(**{**vars(spec), "out": str(out)})
    run_experiment(spec2, jobs=2)
    assert out.read_text() == serial


def test_csv_round_trip():
    rows = run_experiment(GOLDEN["join-cost-cbgrr"])
    back = read_csv(io.StringIO(to_csv(rows)))
    assert list(back[0]) == HEADER
    assert back[0]["frames_by_type"] == "JOIN=3;JPOLL=1;VACK=5;VPUSH=4"
    assert back[0]["lat_mean_us"] == ""


@pytest.mark.parametrize("initial,joiners", [(1, 1), (3, 3), (2, 7), (11, 1), (3, 9)])
def test_join_cost_closed_form(initial, joiners):
    # one poll, one JOIN each, one push per joiner plus one to the old members
    # if there are any besides the coordinator, one ack from everyone else
    spec = ExperimentSpec("join-cost", n=initial + joiners, initial=initial,
                          msg_t=2000, airtime=400, join_t=3000)
    (row,) = run_experiment(spec)
    pushes = joiners + (initial > 1)
    acks = initial - 1 + joiners
    assert row.transmissions == 1 + joiners + pushes + acks
    assert row.delivered_fraction == 1 and row.violations == 0


def test_rr_counts_lossless():
    spec = ExperimentSpec("rr-throughput", "rup-par", n=6, rounds=30, msg_t=2000, airtime=400)
    (row,) = run_experiment(spec)
    assert row.transmissions == 2 * 5 * 30
    spec = ExperimentSpec("rr-throughput", "cbgrr", n=6, rounds=30, msg_t=2000, airtime=400)
    (row,) = run_experiment(spec)
    assert row.transmissions == 6 * 30
    assert row.lat_std_us == 0


@pytest.mark.parametrize("kw", [
    dict(scenario="nope"),
    dict(protocol="tcp"),
    dict(scenario="join-cost", protocol="rup-seq"),
    dict(scenario="n1-polling", protocol="rup-seq"),
    dict(n=1),
    dict(n=65),
    dict(rounds=0),
    dict(loss=1.0),
    dict(seeds=()),
    dict(scenario="join-cost", n=4, initial=4),
    dict(payload=2000),
])
def test_spec_validation(kw):
    with pytest.raises(SpecError):
        ExperimentSpec(**kw).validate()
