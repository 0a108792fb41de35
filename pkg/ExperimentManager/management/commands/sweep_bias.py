from ExperimentManager.runner import sweep_bias
from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Sweeps treatment selection bias on the toy generator and writes sweep_bias.csv.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        levels = parser.add_mutually_exclusive_group(required=True)
        levels.add_argument('--offsets', type=float, nargs='+', help='Mean offsets of the treated group')
        levels.add_argument('--kl-targets', type=float, nargs='+', help='Target KL divergences between the groups')
        parser.add_argument('-m', '--methods', type=str, nargs='+', help='Estimators to compare (default: --variant)')
        parser.add_argument('-r', '--replications', type=int, help='Replications per level and method')
        parser.add_argument('-j', '--jobs', type=int, default=1)

    def run(self, options):
        config = self.load_config(options)
        if options.get('replications') is not None:
            config = config.replace(replications=options['replications'])
        frame = sweep_bias(config, offsets=options.get('offsets'), kl_targets=options.get('kl_targets'),
                           methods=options.get('methods'), jobs=options['jobs'])
        self.stdout.write(frame[['offset', 'kl', 'method', 'sqrt_pehe_out']].to_string(index=False))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(frame)} rows to {config.out_path / 'sweep_bias.csv'}"))
