from ExperimentManager.runner import evaluate_checkpoint
from ExperimentManager.utils import dump_json, write_json
from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Scores a trained checkpoint on a dataset CSV and writes metrics_<split>.json.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', type=str, required=True, help='Checkpoint written by train or replicate')
        parser.add_argument('--data', type=str, required=True, help='Dataset CSV (x0..x{k-1},t,yf[,ycf][,mu0,mu1])')
        parser.add_argument('--split', type=str, choices=['in', 'out'], default='out', help='Split tag of the report')

    def run(self, options):
        config = self.load_config(options)
        report = evaluate_checkpoint(options['checkpoint'], options['data'], options['split'])
        write_json(config.out_path / f"metrics_{options['split']}.json", report.to_dict())
        self.stdout.write(dump_json(report.to_dict()))
