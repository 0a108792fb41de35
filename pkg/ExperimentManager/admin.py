from django.contrib import admin
from nested_admin.nested import NestedModelAdmin, NestedTabularInline

from .forms import ExperimentAdminForm
from .models import Experiment, Replication
from .tasks import async_run_experiment


def run_selected_experiments(modeladmin, request, queryset):
    for experiment in queryset:
        queryset.filter(pk=experiment.pk).update(status='pending')
        async_run_experiment(experiment.name)
        modeladmin.message_user(request, f"Experiment run has been queued for: {experiment.name}")

run_selected_experiments.short_description = "Run selected experiments"


class ReplicationInline(NestedTabularInline):
    model = Replication
    extra = 0
    readonly_fields = [field.name for field in Replication._meta.fields if field.name != 'id']

    def has_add_permission(self, request, obj=None):
        return False


class ExperimentAdmin(NestedModelAdmin):
    form = ExperimentAdminForm
    inlines = [ReplicationInline]
    list_display = ('name', 'variant', 'status', 'replication_count', 'failed_replications', 'out_sqrt_pehe', 'last_run')
    list_filter = ('status', 'variant')
    search_fields = ('name',)
    readonly_fields = ('aggregate', 'failed_replications', 'last_run')
    actions = [run_selected_experiments]

    def replication_count(self, obj):
        return obj.replications.count()
    replication_count.short_description = 'Replications'

    def out_sqrt_pehe(self, obj):
        # mean ± stderr of the out-sample sqrt PEHE, when available
        stats = ((obj.aggregate or {}).get('metrics', {}).get('out', {})).get('sqrt_pehe')
        if not stats:
            return '-'
        return f"{stats['mean']:.3f} ± {stats['stderr']:.3f}"
    out_sqrt_pehe.short_description = 'Out-sample √PEHE'


admin.site.register(Experiment, ExperimentAdmin)
