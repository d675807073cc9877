import pytest

from taskbridge.parsing import answer_in_text, parse_boxed_value, parse_teacher_output

WELL_FORMED = (
    "Here is some reasoning about the problem first.\n"
    "<question>If 2x + 5 = 13, what is x?</question>"
    "<answer>\\boxed{4}</answer>"
)


class TestParseTeacherOutput:
    def test_well_formed_accepted(self):
        parsed = parse_teacher_output(WELL_FORMED)
        assert parsed == {"question": "If 2x + 5 = 13, what is x?", "answer": "4"}

    def test_missing_answer_tag_rejected(self):
        text = "<question>compute 1 + 1</question>the answer is \\boxed{2}"
        assert parse_teacher_output(text) is None

    def test_missing_question_tag_rejected(self):
        assert parse_teacher_output("<answer>\\boxed{2}</answer>") is None

    def test_unclosed_question_tag_rejected(self):
        text = "<question>compute 1 + 1<answer>\\boxed{2}</answer>"
        assert parse_teacher_output(text) is None

    def test_missing_boxed_rejected(self):
        text = "<question>compute 1 + 1</question><answer>2</answer>"
        assert parse_teacher_output(text) is None

    def test_unparseable_boxed_rejected(self):
        text = "<question>solve it</question><answer>\\boxed{x+y}</answer>"
        assert parse_teacher_output(text) is None
        text = "<question>solve it</question><answer>\\boxed{}</answer>"
        assert parse_teacher_output(text) is None

    def test_empty_question_rejected(self):
        text = "<question>  </question><answer>\\boxed{1}</answer>"
        assert parse_teacher_output(text) is None

    def test_fraction_and_float_answers_normalize(self):
        text = "<question>q</question><answer>\\boxed{6/8}</answer>"
        assert parse_teacher_output(text)["answer"] == "3/4"
        text = "<question>q</question><answer>\\boxed{2.5}</answer>"
        assert parse_teacher_output(text)["answer"] == "5/2"
        text = "<question>q</question><answer>\\boxed{ -12 }</answer>"
        assert parse_teacher_output(text)["answer"] == "-12"

    @pytest.mark.parametrize(
        "content,expected",
        [("4", "4"), ("4/2", "2"), ("0", "0"), ("nonsense", None), ("1/0", None)],
    )
    def test_boxed_value_cases(self, content, expected):
        assert parse_boxed_value(content) == expected


class TestAnswerContainment:
    def test_whitespace_stripped_containment(self):
        assert answer_in_text("3 / 4", "the value is 3/4 here")
        assert answer_in_text("42", "...  4 2 ...")
        assert not answer_in_text("7", "nothing here")
        assert not answer_in_text("   ", "anything")
