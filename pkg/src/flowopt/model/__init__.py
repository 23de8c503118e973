from .types import (AND_JOIN, AND_SPLIT, END, START, TASK, XOR, DurationDistribution, Node,
                    ProcessDefinition, ResourcePool, SequenceFlow)
from .validate import (ProcessError, ProcessSyntaxError, ProcessValidationError, Violation,
                       raise_for_violations, validate)
from .validate import (BadDegree, DanglingFlow, MissingEnd, MissingStart, MultipleStart,
                       ProbabilitySum, Unreachable, UnknownRole)
from .io import (import_bpmn_xml, load_process, parse_process, process_from_doc, process_to_doc,
                 serialize_process)
