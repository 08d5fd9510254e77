import typing

from dataclasses import field

import ezmsg.core as ez

from ezmsg.util.generator import consumer

from .core import ProblemInstance, SparseCubeError
from .solver import SolverConfig, SolveReport, solve_exact


@consumer
def solve_stream(config: typing.Optional[SolverConfig] = None) -> typing.Generator[typing.Optional[SolveReport], ProblemInstance, None]:
    """ Send ProblemInstances, receive SolveReports """
    config = SolverConfig() if config is None else config
    report: typing.Optional[SolveReport] = None
    while True:
        instance = yield report
        report = solve_exact(instance, config)


class SparseSolverSettings(ez.Settings):
    config: SolverConfig = field(default_factory = SolverConfig)


class SparseSolverState(ez.State):
    solver: typing.Optional[typing.Generator[typing.Optional[SolveReport], ProblemInstance, None]] = None
    solved: int = 0
    failed: int = 0


class SparseSolver(ez.Unit):
    """ Exact sparse solves inside a pipeline; instances that fail to solve are logged and dropped """
    SETTINGS = SparseSolverSettings
    STATE = SparseSolverState

    INPUT_INSTANCE = ez.InputStream(ProblemInstance)
    OUTPUT_REPORT = ez.OutputStream(SolveReport)

    def initialize(self) -> None:
        self.STATE.solver = solve_stream(self.SETTINGS.config)

    @ez.subscriber(INPUT_INSTANCE)
    @ez.publisher(OUTPUT_REPORT)
    async def on_instance(self, instance: ProblemInstance) -> typing.AsyncGenerator:
        if self.STATE.solver is None:
            self.initialize()
        try:
            report = self.STATE.solver.send(instance)
        except SparseCubeError as err:
            # the generator is finished once it raises
            self.STATE.failed += 1
            self.STATE.solver = solve_stream(self.SETTINGS.config)
            ez.logger.warning(f'instance dropped: {err}')
            return

        self.STATE.solved += 1
        ez.logger.debug(f'solved instance {self.STATE.solved}: objective {report.best.objective:.6g}')
        yield self.OUTPUT_REPORT, report
