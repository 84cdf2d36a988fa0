"""Exception hierarchy shared by all mdcgcn modules."""


class MdcGcnError(Exception):
    pass


class MeshError(MdcGcnError):
    pass


class ParseError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedTopologyError(MeshError):
    pass


class TopologyError(MeshError):
    pass


class DegenerateGeometryError(MeshError):
    pass


class ShapeError(MdcGcnError, ValueError):
    pass


class ConfigError(MdcGcnError, ValueError):
    pass


class LabelError(MdcGcnError, ValueError):
    pass


class TapeError(MdcGcnError, RuntimeError):
    pass


class TrainingError(MdcGcnError, RuntimeError):
    pass
