from django.apps import AppConfig


class ExperimentmanagerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ExperimentManager'
