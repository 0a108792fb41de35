from ExperimentManager.runner import run_experiment
from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Runs the configured number of replications and writes rep_<seed>.json files and aggregate.json.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('-r', '--replications', type=int, help='Number of replications')
        parser.add_argument('-j', '--jobs', type=int, default=1, help='Replications dispatched as huey tasks when > 1')
        parser.add_argument('--no-record', action='store_true', help='Do not record the run in the database')

    def load_config(self, options):
        config = super().load_config(options)
        if options.get('replications') is not None:
            config = config.replace(replications=options['replications'])
        return config

    def run(self, options):
        config = self.load_config(options)
        result = run_experiment(config, jobs=options['jobs'], record=not options['no_record'])
        for split, metrics in result.metrics.items():
            for metric, stats in metrics.items():
                self.stdout.write(f"{split:>3} {metric:<12} {stats['mean']:.4f} ± {stats['stderr']:.4f} (n={stats['count']})")
        message = f'{result.completed} replications completed, {result.failed} failed'
        self.stdout.write(self.style.SUCCESS(message) if not result.failed else self.style.WARNING(message))
