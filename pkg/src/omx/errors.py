"""Exception types shared across the engine."""


class OmxError(Exception):
    """Base class for every error raised by this package."""


class MalformedRecord(OmxError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"malformed record at line {line_no}: {reason}" if reason
                         else f"malformed record at line {line_no}")


class NonFiniteValue(OmxError):
    def __init__(self, line_no, value):
        self.line_no = line_no
        self.value = value
        super().__init__(f"non-finite value {value!r} at line {line_no}")


class UnknownMetric(OmxError):
    def __init__(self, metric_id):
        self.metric_id = metric_id
        super().__init__(f"unknown metric {metric_id!r}")


class MissingMetric(UnknownMetric):
    """A detection expression or tool referenced a metric the store lacks."""


class InsufficientData(OmxError):
    def __init__(self, needed, got):
        self.needed = needed
        self.got = got
        super().__init__(f"insufficient data: needed {needed}, got {got}")


class SchemaError(OmxError):
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class UnknownStatSpec(SchemaError):
    def __init__(self, path, spec):
        super().__init__(path, f"unknown stat spec {spec!r}")


class BadThreshold(SchemaError):
    def __init__(self, path, value):
        super().__init__(path, f"bad threshold {value!r}")


class GraphError(OmxError):
    pass


class DanglingEndpoint(GraphError):
    def __init__(self, vertex_id):
        self.vertex_id = vertex_id
        super().__init__(f"edge endpoint {vertex_id!r} does not exist")


class SynonymKindViolation(GraphError):
    def __init__(self, src, dst):
        super().__init__(f"Synonym edge requires two Tag vertices: {src!r} -> {dst!r}")


class SelfLoop(GraphError):
    def __init__(self, vertex_id):
        super().__init__(f"self-loop on {vertex_id!r}")


class KindChange(GraphError):
    def __init__(self, vertex_id, old, new):
        super().__init__(f"vertex {vertex_id!r} cannot change kind {old} -> {new}")


class DuplicateModelId(GraphError):
    def __init__(self, model_id):
        self.model_id = model_id
        super().__init__(f"duplicate model id {model_id!r}")


class UnknownSeed(GraphError):
    def __init__(self, vertex_id):
        self.vertex_id = vertex_id
        super().__init__(f"seed {vertex_id!r} not in graph")


class CorruptGraphFile(GraphError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"corrupt graph file: {reason}")


class UnknownTrigger(OmxError):
    def __init__(self, model_id):
        self.model_id = model_id
        super().__init__(f"no Trigger vertex for model {model_id!r}")


class UnknownTool(OmxError):
    def __init__(self, tool_id):
        self.tool_id = tool_id
        super().__init__(f"unknown tool {tool_id!r}")


class DuplicateTool(OmxError):
    def __init__(self, tool_id):
        self.tool_id = tool_id
        super().__init__(f"tool {tool_id!r} already registered")


class EmptyContext(OmxError):
    pass


class LlmError(OmxError):
    pass


class LlmTimeout(LlmError):
    pass


class HttpStatus(LlmError):
    def __init__(self, code):
        self.code = code
        super().__init__(f"LLM endpoint returned HTTP {code}")


class MalformedResponse(LlmError):
    pass


class ReportError(OmxError):
    pass


class MissingSection(ReportError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"report is missing section {name!r}")


class TooManyCauses(ReportError):
    def __init__(self, n):
        self.n = n
        super().__init__(f"report lists {n} root causes (at most 5 allowed)")


class NoCauses(ReportError):
    def __init__(self):
        super().__init__("report lists no root causes")


class BadWindow(OmxError):
    pass


class OutOfRange(OmxError):
    pass


class IoError(OmxError):
    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"{path}: {reason}")
