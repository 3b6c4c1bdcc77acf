import importlib
import os

DEFAULT_SETTINGS_MODULE = "medimux.settings.base"


def get_settings(module=None):
    """
    Collect the UPPER_CASE names of a settings module into a dict. The module
    defaults to MEDIMUX_SETTINGS, then to medimux.settings.base.
    """
    module = module or os.getenv("MEDIMUX_SETTINGS", DEFAULT_SETTINGS_MODULE)
    settings_module = importlib.import_module(module)
    return {
        name: getattr(settings_module, name)
        for name in dir(settings_module)
        if name.isupper()
    }
