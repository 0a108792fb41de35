"""
URL configuration for the abceilab project.

admin/        experiment records, replications and the run action
experiments/  read-only export of aggregates and per-replication metrics
"""
from django.contrib import admin
from django.urls import path, include
from django.views.generic.base import RedirectView
import os

urlpatterns = [
    path('admin/', admin.site.urls),
    path('experiments/', include('ExperimentManager.urls')),
    path('', RedirectView.as_view(url='/admin/', permanent=True)),
]

DEBUG = os.environ.get('DEBUG') == '1'
if DEBUG:
    import debug_toolbar
    urlpatterns = [
        path('__debug__/', include(debug_toolbar.urls)),
    ] + urlpatterns
