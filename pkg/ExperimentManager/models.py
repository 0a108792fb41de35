from django.db import models


class Experiment(models.Model):
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]
    name = models.CharField(max_length=255, unique=True, help_text="Experiments are re-recorded under the same name on every run.")
    variant = models.CharField(max_length=32, default='full', help_text="full, abcei*, abcei** or a baseline (ols_lr1, ols_lr2, knn).")
    config = models.JSONField(default=dict, help_text="Resolved experiment config, the same JSON the replicate command accepts.")
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default='pending')
    aggregate = models.JSONField(default=None, blank=True, null=True, editable=False)
    failed_replications = models.PositiveIntegerField(default=0, editable=False)
    last_run = models.DateTimeField(default=None, blank=True, null=True, editable=False)

    def __str__(self):
        return self.name


class Replication(models.Model):
    STATUS_CHOICES = [
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]
    experiment = models.ForeignKey(Experiment, on_delete=models.CASCADE, related_name='replications')
    seed = models.IntegerField()
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default='completed')
    error = models.TextField(blank=True, default='')
    epochs = models.PositiveIntegerField(default=0)
    in_sample = models.JSONField(default=None, blank=True, null=True)
    out_sample = models.JSONField(default=None, blank=True, null=True)

    class Meta:
        ordering = ['seed']
        constraints = [
            models.UniqueConstraint(fields=['experiment', 'seed'], name='unique_replication_seed'),
        ]

    def __str__(self):
        return f'{self.experiment.name} seed {self.seed}'
