import csv
import json
import typing

from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .core import ProblemInstance, SparseSolution, InstanceError
from .relaxation import RelaxedSolution
from .proximity import ProximityBound
from .solver import SolveReport
from .experiments import ExperimentReport

# Doubles go to CSV with enough digits to come back bit-identical;
# json already writes the shortest representation that round-trips
FLOAT_FORMAT = '.17g'

CSV_COLUMNS = ('trial', 'lambda', 'objective_relax', 'objective_exact', 'integral_optimal', 'exact')


def instance_to_dict(instance: ProblemInstance) -> typing.Dict[str, typing.Any]:
    out: typing.Dict[str, typing.Any] = {
        'A': instance.A.tolist(),
        'b': [float(v) for v in instance.b],
        'sigma': int(instance.sigma),
    }
    if instance.u is not None:
        out['u'] = instance.u.tolist()
    return out


def instance_from_dict(data: typing.Any) -> ProblemInstance:
    if not isinstance(data, dict):
        raise InstanceError(['instance must be a JSON object'])
    missing = [key for key in ('A', 'b', 'sigma') if key not in data]
    if missing:
        raise InstanceError([f'missing field: {key}' for key in missing])
    if not isinstance(data['sigma'], (int, float)):
        raise InstanceError(['sigma must be an integer'])
    try:
        A = np.asarray(data['A'], dtype = float)
        b = np.asarray(data['b'], dtype = float)
        u = None if data.get('u') is None else np.asarray(data['u'], dtype = float)
    except (TypeError, ValueError) as err:
        raise InstanceError([f'malformed instance: {err}']) from err
    return ProblemInstance.create(A, b, data['sigma'], u)


def load_instance(path: typing.Union[str, Path]) -> ProblemInstance:
    """ Raises InstanceError for unparseable or invalid files, OSError for unreadable ones """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise InstanceError([f'{path}: invalid JSON ({err})']) from err
    return instance_from_dict(data)


def dumps_instance(instance: ProblemInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent = 2) + '\n'


def dump_instance(instance: ProblemInstance, path: typing.Union[str, Path]) -> None:
    Path(path).write_text(dumps_instance(instance))


def solution_to_dict(solution: SparseSolution) -> typing.Dict[str, typing.Any]:
    return {
        'x': [float(v) for v in solution.x],
        'support': list(solution.support),
        'objective': float(solution.objective),
    }


def relaxation_to_dict(relaxed: RelaxedSolution) -> typing.Dict[str, typing.Any]:
    return {
        'x_bar': [float(v) for v in relaxed.x_bar],
        'certified_gap': float(relaxed.certified_gap),
        'iterations': int(relaxed.iterations),
        'objective': float(relaxed.objective),
    }


def bounds_to_dict(bounds: ProximityBound) -> typing.Dict[str, typing.Any]:
    out = asdict(bounds)
    out['box_radius'] = bounds.box_radius
    return out


def report_to_dict(report: SolveReport, timings: bool = True) -> typing.Dict[str, typing.Any]:
    """ JSON-able SolveReport; timings=False drops wall-clock fields so runs compare bit for bit """
    stats = asdict(report.stats)
    if not timings:
        stats.pop('wall_time')
    return {
        'best': solution_to_dict(report.best),
        'relaxation': relaxation_to_dict(report.relaxation),
        'bounds': bounds_to_dict(report.bounds),
        'epsilon': float(report.epsilon),
        'heuristic': bool(report.heuristic),
        'notes': list(report.notes),
        'stats': stats,
    }


def experiment_summary(report: ExperimentReport) -> typing.Dict[str, typing.Any]:
    return {
        'kind': report.kind,
        'trials': report.trials,
        'lambda': report.lam,
        'frequency': report.frequency,
        'rho': report.rho,
        'ci_low': report.ci_low,
        'ci_high': report.ci_high,
        'halfwidth': report.halfwidth,
        'acceptance_rate': report.acceptance_rate,
        'tolerance': report.tolerance,
    }


def _cell(value: typing.Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, FLOAT_FORMAT)
    if value is None:
        return ''
    return str(value)


def experiment_rows(report: ExperimentReport) -> typing.List[typing.List[str]]:
    return [
        [_cell(v) for v in (r.trial, report.lam, r.objective_relax, r.objective_exact, r.integral_optimal, r.exact)]
        for r in report.records
    ]


def write_csv(path: typing.Union[str, Path], report: ExperimentReport) -> None:
    with open(path, 'w', newline = '') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        writer.writerows(experiment_rows(report))


def write_summary(path: typing.Union[str, Path], report: ExperimentReport) -> None:
    Path(path).write_text(json.dumps(experiment_summary(report), indent = 2) + '\n')


@dataclass(frozen = True)
class RunArtifact:
    """ What a CLI run leaves behind: enough to rerun it and compare """
    input: typing.Optional[str]
    command: str
    config: typing.Dict[str, typing.Any] = field(default_factory = dict)
    results: typing.Dict[str, typing.Any] = field(default_factory = dict)
    timings: typing.Dict[str, float] = field(default_factory = dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent = 2, sort_keys = True) + '\n'

    @classmethod
    def from_json(cls, text: str) -> 'RunArtifact':
        data = json.loads(text)
        return cls(
            data.get('input'),
            data['command'],
            data.get('config', {}),
            data.get('results', {}),
            data.get('timings', {}),
        )
