"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input is outside an operation's mathematical domain."""


class ParameterError(ValueError):
    """A hyperparameter is outside its valid range."""


class VocabularyError(ValueError):
    """A token id is outside the encoder vocabulary."""


class ConfigError(ValueError):
    """A run configuration is invalid or inconsistent."""


class FixtureError(ValueError):
    """Base class for fixture / checkpoint parse failures."""


class FixtureMagicError(FixtureError):
    """File does not start with the expected magic bytes."""


class FixtureVersionError(FixtureError):
    """File declares an unsupported format version."""


class FixtureTruncatedError(FixtureError):
    """File ends before the declared payload is complete."""


class FixtureValueError(FixtureError):
    """Payload contains a non-finite float."""


class FixtureLookupError(KeyError):
    """Requested sample id is not present in the loaded fixture."""
