from django import forms

from .exceptions import ConfigError
from .models import Experiment

LAMBDAS = (1e-3, 1e-4, 5e-5)
BETAS = (1.0, 5.0, 10.0, 15.0)
WIDTHS = (50, 100, 200, 300, 500)
BATCH_SIZES = (65, 80, 100, 200, 300, 500)
OPTIMIZERS = ('adam', 'rmsprop')


def _choices(values):
    return [(str(v), str(v)) for v in values]


def _depth_field():
    return forms.IntegerField(min_value=1, max_value=6)


def _width_field():
    return forms.TypedChoiceField(choices=_choices(WIDTHS), coerce=int)


class AbceiConfigForm(forms.Form):
    """Hyper-parameter search space; configs outside it need `"override": true`."""
    lam = forms.TypedChoiceField(choices=_choices(LAMBDAS), coerce=float)
    beta = forms.TypedChoiceField(choices=_choices(BETAS), coerce=float)
    encoder_depth = _depth_field()
    mi_depth = _depth_field()
    disc_depth = _depth_field()
    pred_depth = _depth_field()
    encoder_width = _width_field()
    mi_width = _width_field()
    disc_width = _width_field()
    pred_width = _width_field()
    batch_size = forms.TypedChoiceField(choices=_choices(BATCH_SIZES), coerce=int)
    optimizer = forms.ChoiceField(choices=_choices(OPTIMIZERS))

    @classmethod
    def from_config(cls, config):
        data = {name: str(getattr(config, name)) for name in cls.base_fields}
        data['lam'] = str(float(config.lam))
        data['beta'] = str(float(config.beta))
        return cls(data=data)


def validate_search_space(config, override=False):
    """Raise ConfigError unless `config` lies inside the search space (skipped on override)."""
    if override:
        return config
    form = AbceiConfigForm.from_config(config)
    if not form.is_valid():
        problems = '; '.join(f'{field}: {" ".join(errors)}' for field, errors in form.errors.items())
        raise ConfigError(f'model settings outside the search space ({problems}); set "override": true to allow')
    return config


class ExperimentAdminForm(forms.ModelForm):
    class Meta:
        model = Experiment
        fields = '__all__'
        widgets = {
            'config': forms.Textarea(attrs={'cols': 80, 'rows': 12}),
        }
