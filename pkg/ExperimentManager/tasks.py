from huey.contrib.djhuey import task
import logging

logger = logging.getLogger('experiment_logger')


@task()
def replication_task(config_data, seed):
    from .runner import ExperimentConfig, run_replication

    config = ExperimentConfig.from_dict(config_data)
    return run_replication(config, seed).to_dict()


@task(retries=1)
def async_run_experiment(experiment_name, jobs=1):
    from .models import Experiment
    from .runner import ExperimentConfig, run_experiment

    experiment = Experiment.objects.get(name=experiment_name)
    try:
        config = ExperimentConfig.from_dict({**experiment.config, 'name': experiment.name, 'variant': experiment.variant})
        run_experiment(config, jobs=jobs)
    except Exception as e:
        logger.error(f"Error in async_run_experiment for {experiment_name}: {str(e)}")
        Experiment.objects.filter(name=experiment_name).update(status='failed')
        raise
