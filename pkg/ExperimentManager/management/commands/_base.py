from django.core.management.base import BaseCommand

from ExperimentManager.exceptions import AbceiError
from ExperimentManager.runner import ExperimentConfig
from ExperimentManager.utils import command_error, load_config_file


class ExperimentCommand(BaseCommand):
    """Shared flags of the experiment commands; AbceiErrors become CommandErrors with exit codes."""
    default_variant = None

    def add_arguments(self, parser):
        parser.add_argument('-c', '--config', type=str, help='Experiment config JSON file')
        parser.add_argument('-s', '--seed', type=int, help='Seed (base seed for replicate)')
        parser.add_argument('-o', '--out', type=str, help='Output directory')
        parser.add_argument('--variant', type=str, help='full, abcei*, abcei** or ols_lr1, ols_lr2, knn')
        parser.add_argument('--preset', type=str, help='Model preset: desk, ihdp, jobs, twins or acic')
        parser.add_argument('--override', action='store_true', help='Allow model settings outside the search space')

    def load_config(self, options):
        data = load_config_file(options['config']) if options.get('config') else {}
        if self.default_variant and 'variant' not in data:
            data['variant'] = self.default_variant
        for option, key in (('variant', 'variant'), ('out', 'out_dir'), ('preset', 'preset'), ('seed', 'base_seed')):
            if options.get(option) is not None:
                data[key] = options[option]
        if options.get('override'):
            data['override'] = True
        return ExperimentConfig.from_dict(data)

    def handle(self, *args, **options):
        try:
            self.run(options)
        except AbceiError as e:
            raise command_error(e)

    def run(self, options):
        raise NotImplementedError
