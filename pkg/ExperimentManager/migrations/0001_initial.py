from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Experiment',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(help_text='Experiments are re-recorded under the same name on every run.', max_length=255, unique=True)),
                ('variant', models.CharField(default='full', help_text='full, abcei*, abcei** or a baseline (ols_lr1, ols_lr2, knn).', max_length=32)),
                ('config', models.JSONField(default=dict, help_text='Resolved experiment config, the same JSON the replicate command accepts.')),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=16)),
                ('aggregate', models.JSONField(blank=True, default=None, editable=False, null=True)),
                ('failed_replications', models.PositiveIntegerField(default=0, editable=False)),
                ('last_run', models.DateTimeField(blank=True, default=None, editable=False, null=True)),
            ],
        ),
        migrations.CreateModel(
            name='Replication',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('seed', models.IntegerField()),
                ('status', models.CharField(choices=[('completed', 'Completed'), ('failed', 'Failed')], default='completed', max_length=16)),
                ('error', models.TextField(blank=True, default='')),
                ('epochs', models.PositiveIntegerField(default=0)),
                ('in_sample', models.JSONField(blank=True, default=None, null=True)),
                ('out_sample', models.JSONField(blank=True, default=None, null=True)),
                ('experiment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='replications', to='ExperimentManager.experiment')),
            ],
            options={
                'ordering': ['seed'],
            },
        ),
        migrations.AddConstraint(
            model_name='replication',
            constraint=models.UniqueConstraint(fields=('experiment', 'seed'), name='unique_replication_seed'),
        ),
    ]
