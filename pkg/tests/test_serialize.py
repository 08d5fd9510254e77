import csv
import json

from pathlib import Path

import numpy as np
import pytest

from ezmsg.sparsecube.core import ProblemInstance, InstanceError
from ezmsg.sparsecube.solver import solve_exact
from ezmsg.sparsecube.experiments import ExperimentReport, TrialRecord
from ezmsg.sparsecube.serialize import (
    CSV_COLUMNS,
    RunArtifact,
    dump_instance,
    experiment_summary,
    instance_from_dict,
    load_instance,
    report_to_dict,
    write_csv,
    write_summary,
)


def test_load_fixture(p1_path: Path) -> None:
    instance = load_instance(p1_path)
    assert instance.A.tolist() == [[2, 3, 5]]
    assert instance.b.tolist() == [8.0]
    assert instance.sigma == 2
    assert not instance.has_bounds


def test_instance_file_keeps_bounds(tmp_path: Path) -> None:
    instance = ProblemInstance.create([[1, -2], [0, 3]], [0.1, 1 / 3], 1, [2, 1])
    path = tmp_path / 'instance.json'
    dump_instance(instance, path)
    loaded = load_instance(path)
    assert loaded.A.tolist() == instance.A.tolist()
    assert loaded.b.tolist() == instance.b.tolist()
    assert loaded.u.tolist() == [2, 1]
    assert loaded.sigma == 1


@pytest.mark.parametrize('data, message', [
    ([1, 2], 'JSON object'),
    ({'A': [[1]], 'b': [1]}, 'missing field: sigma'),
    ({'A': [[1.5]], 'b': [1], 'sigma': 1}, 'A must be integral'),
    ({'A': [[1]], 'b': [1, 2], 'sigma': 1}, 'b must have length'),
    ({'A': [[1]], 'b': [1], 'sigma': 'two'}, 'sigma must be an integer'),
    ({'A': [[1]], 'b': [1], 'sigma': 0}, 'sigma must be'),
])
def test_bad_instances(data, message: str) -> None:
    with pytest.raises(InstanceError) as err:
        instance_from_dict(data)
    assert any(message in v for v in err.value.violations)


def test_invalid_json(tmp_path: Path) -> None:
    path = tmp_path / 'broken.json'
    path.write_text('{"A": [[1]], ')
    with pytest.raises(InstanceError):
        load_instance(path)
    with pytest.raises(OSError):
        load_instance(tmp_path / 'missing.json')


def test_report_is_json(p1: ProblemInstance) -> None:
    report = solve_exact(p1)
    data = json.loads(json.dumps(report_to_dict(report)))
    assert data['best']['support'] == [1, 2]
    assert data['heuristic'] is False
    assert data['bounds']['box_radius'] == pytest.approx(report.bounds.box_radius)
    assert 'wall_time' in data['stats']
    assert 'wall_time' not in report_to_dict(report, timings = False)['stats']


def make_report() -> ExperimentReport:
    records = (
        TrialRecord(0, (0.1,), 0.0, 0.0, True, True),
        TrialRecord(1, (2.5,), 0.1 + 0.2, 0.5, False, False, proposals = 3),
    )
    return ExperimentReport('far', records, 0.5, 0.25, 0.1, 0.9, lam = 4.0, acceptance_rate = 0.5)


def test_csv_round_trips_doubles(tmp_path: Path) -> None:
    path = tmp_path / 'trials.csv'
    write_csv(path, make_report())
    with open(path, newline = '') as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1] == ['0', '4', '0', '0', '1', '1']
    assert float(rows[2][2]) == 0.1 + 0.2
    assert rows[2][4:] == ['0', '0']


def test_summary(tmp_path: Path) -> None:
    report = make_report()
    path = tmp_path / 'summary.json'
    write_summary(path, report)
    data = json.loads(path.read_text())
    assert data == experiment_summary(report)
    assert data['trials'] == 2
    assert data['halfwidth'] == pytest.approx(0.4)


def test_artifact_round_trip() -> None:
    artifact = RunArtifact('p1.json', 'solve', {'epsilon': None}, {'best': {'x': [0.0, 1.0, 1.0]}}, {'wall_time': 0.5})
    assert RunArtifact.from_json(artifact.to_json()) == artifact
    bare = RunArtifact.from_json(json.dumps({'command': 'bench'}))
    assert bare.input is None and bare.results == {}
    assert np.isfinite(json.loads(artifact.to_json())['timings']['wall_time'])
