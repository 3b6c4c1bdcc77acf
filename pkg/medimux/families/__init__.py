from medimux.families import binary
from medimux.families.linear import LinearFamily

FAMILIES = {
    "linear": LinearFamily(),
    "logit": binary.LogitFamily(),
    "probit": binary.ProbitFamily(),
}


def get_family(name):
    """Resolve an outcome family by name: linear, logit or probit."""
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(
            f"Unknown outcome family {name!r}; expected one of {sorted(FAMILIES)}"
        ) from None
