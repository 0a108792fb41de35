import pandas as pd
from django.http import Http404, HttpResponse, JsonResponse
from django.shortcuts import get_object_or_404

from .models import Experiment

REPLICATION_COLUMNS = ['seed', 'status', 'epochs', 'error']


def aggregate_json(request, name):
    experiment = get_object_or_404(Experiment, name=name)
    if experiment.aggregate is None:
        raise Http404(f'Experiment {name} has no aggregate yet')
    return JsonResponse(experiment.aggregate, json_dumps_params={'sort_keys': True, 'indent': 2})


def replications_csv(request, name):
    """One row per replication, metrics flattened as in_<metric> / out_<metric>."""
    experiment = get_object_or_404(Experiment, name=name)
    rows = []
    for replication in experiment.replications.all():
        row = {column: getattr(replication, column) for column in REPLICATION_COLUMNS}
        for prefix, report in (('in', replication.in_sample), ('out', replication.out_sample)):
            for metric, value in (report or {}).items():
                if metric != 'split':
                    row[f'{prefix}_{metric}'] = value
        rows.append(row)
    frame = pd.DataFrame(rows)
    if frame.empty:
        frame = pd.DataFrame(columns=REPLICATION_COLUMNS)
    response = HttpResponse(content_type='text/csv')
    response['Content-Disposition'] = f'attachment; filename="{name}_replications.csv"'
    frame.to_csv(response, index=False, float_format='%.17g')
    return response
