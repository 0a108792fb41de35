from ExperimentManager.runner import train
from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Trains one model with early stopping and writes its checkpoint and training trace.'

    def run(self, options):
        config = self.load_config(options)
        _, trace, checkpoint = train(config, config.base_seed)
        stop = 'early stop' if trace.stopped_early else 'epoch budget reached'
        self.stdout.write(self.style.SUCCESS(
            f'Trained {len(trace)} epochs ({stop}), best epoch {trace.best_epoch}; checkpoint {checkpoint}'))
