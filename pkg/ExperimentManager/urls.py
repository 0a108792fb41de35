from django.urls import path
from . import views

urlpatterns = [
    path('<str:name>/aggregate.json', views.aggregate_json, name='experiment_aggregate'),
    path('<str:name>/replications.csv', views.replications_csv, name='experiment_replications'),
]
