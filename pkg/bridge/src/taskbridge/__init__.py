"""Model worker speaking the v1 orchestrator protocol over stdio."""

from taskbridge.parsing import answer_in_text, parse_teacher_output
from taskbridge.protocol import PROTOCOL_VERSION, error_response, ok_response
from taskbridge.stub import EchoModel

__all__ = [
    "PROTOCOL_VERSION",
    "EchoModel",
    "answer_in_text",
    "error_response",
    "ok_response",
    "parse_teacher_output",
]
