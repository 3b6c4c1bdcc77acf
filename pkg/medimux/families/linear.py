class LinearFamily:
    """Gaussian outcome with identity link; expected outcome is eta itself."""

    name = "linear"
    binary = False

    def mean(self, eta):
        return eta
