from ExperimentManager.runner import trace_mi
from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Trains without the adversarial component and writes the per-epoch MI estimate and validation sqrt PEHE to trace_mi.csv.'
    default_variant = 'abcei**'

    def run(self, options):
        config = self.load_config(options)
        frame = trace_mi(config)
        first, last = frame.iloc[0], frame.iloc[-1]
        self.stdout.write(
            f"MI estimate {first['mi_estimate']:.4f} -> {last['mi_estimate']:.4f}, "
            f"sqrt PEHE {first['sqrt_pehe']:.4f} -> {last['sqrt_pehe']:.4f}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(frame)} epochs to {config.out_path / 'trace_mi.csv'}"))
