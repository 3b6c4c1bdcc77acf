from scipy import stats

from medimux.mixins.latent_family import LatentFamilyMixin


def _normal_pdf_slope(eta):
    return -eta * stats.norm.pdf(eta)


def _logistic_pdf_slope(eta):
    return stats.logistic.pdf(eta) * (1 - 2 * stats.logistic.cdf(eta))


# Configuration for each binary family
family_configs = [
    {
        "class_name": "LogitFamily",
        "name": "logit",
        "latent": stats.logistic,
        "pdf_slope": staticmethod(_logistic_pdf_slope),
    },
    {
        "class_name": "ProbitFamily",
        "name": "probit",
        "latent": stats.norm,
        "pdf_slope": staticmethod(_normal_pdf_slope),
    },
]


def create_families():
    """
    Dynamically create family classes using the family_configs list
    and register them in the global namespace.
    """
    for config in family_configs:
        class_name = config["class_name"]
        attrs = {k: v for k, v in config.items() if k != "class_name"}
        globals()[class_name] = type(class_name, (LatentFamilyMixin,), attrs)


# Create all family classes at module load
create_families()
