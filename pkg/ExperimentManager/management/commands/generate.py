from ExperimentManager.runner import generate
from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Generates (or loads and re-assigns) the configured dataset and writes it as data_<seed>.csv.'

    def run(self, options):
        config = self.load_config(options)
        path = config.out_path / f'data_{config.base_seed}.csv'
        dataset = generate(config, config.base_seed, path)
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {dataset.n} units ({int(dataset.T.sum())} treated, {dataset.k} covariates) to {path}'))
