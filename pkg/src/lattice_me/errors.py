class ConfigError(ValueError):
    """Invalid configuration; ``field`` and ``line`` locate the offending entry."""

    def __init__(self, message, field=None, line=None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.field = field
        self.line = line
