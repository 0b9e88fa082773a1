import itertools
import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webagent.harvester import ElementRecord
from webagent.protocol import (
    AgentOutput,
    CursorState,
    EmptyTask,
    EscapeViolation,
    InteractionEvent,
    MissingKey,
    NoJsonObject,
    ProtocolError,
    UnknownEventKind,
    WrongType,
    build_input,
    parse_output,
    record_editable,
    validate_events,
)

VALID_OUTPUT = (
    '{"event_list": [{"type": "cursor_move", "item": 9}, {"type": "click", "item": 9}], '
    '"next_step": "check the results page", "is_complete": false, "questions": [], '
    '"action": "clicked search"}'
)


def record(tag="a", role="link", visible=True, location=(10, 10)):
    return ElementRecord(
        tag_name=tag,
        accessible_name="",
        aria_role=role,
        dom_id="",
        css_class="",
        text="",
        location=location,
        size=(20, 40),
        visible_in_viewport=visible,
    )


@pytest.fixture
def elements():
    return {
        "0": record(),                                  # visible link
        "1": record(visible=False, location=(10, 900)),  # below the fold
        "2": record(tag="input", role=""),              # editable field
        "3": record(tag="input", role="button"),        # submit-style button
    }


class TestParseOutput:
    def test_conforming_sample(self):
        out = parse_output(VALID_OUTPUT)
        assert len(out.event_list) == 2
        assert out.event_list[0] == InteractionEvent("cursor_move", 9)
        assert out.event_list[1] == InteractionEvent("click", 9)
        assert out.is_complete is False
        assert out.questions == []
        assert out.action == "clicked search"

    def test_minimal_completion_object(self):
        out = parse_output(
            '{"event_list": [], "next_step": "", "is_complete": true, "questions": [], '
            '"action": "done"}'
        )
        assert out.is_complete is True
        assert out.event_list == []

    def test_embedded_in_prose(self):
        out = parse_output("Sure! Here is the plan: " + VALID_OUTPUT + " Good luck!")
        assert len(out.event_list) == 2

    def test_prose_with_decoy_braces(self):
        raw = "I used {braces} and also {not: valid json here " + VALID_OUTPUT
        assert len(parse_output(raw).event_list) == 2

    def test_no_object_anywhere(self):
        with pytest.raises(NoJsonObject):
            parse_output("no json to be found")

    def test_unbalanced_object(self):
        with pytest.raises(NoJsonObject):
            parse_output('{"event_list": [')

    @pytest.mark.parametrize("key", ["event_list", "next_step", "is_complete", "questions", "action"])
    def test_each_required_key(self, key):
        data = json.loads(VALID_OUTPUT)
        del data[key]
        with pytest.raises(MissingKey):
            parse_output(json.dumps(data))

    def test_wrong_types(self):
        data = json.loads(VALID_OUTPUT)
        data["is_complete"] = "false"
        with pytest.raises(WrongType):
            parse_output(json.dumps(data))
        data = json.loads(VALID_OUTPUT)
        data["questions"] = [1, 2]
        with pytest.raises(WrongType):
            parse_output(json.dumps(data))

    def test_unknown_event_kind(self):
        raw = (
            '{"event_list": [{"type": "hover", "item": 1}], "next_step": "", '
            '"is_complete": false, "questions": [], "action": "x"}'
        )
        with pytest.raises(UnknownEventKind):
            parse_output(raw)

    def test_item_must_be_plain_int(self):
        for bad in ["true", '"3"', "-1", "1.5"]:
            raw = (
                '{"event_list": [{"type": "click", "item": %s}], "next_step": "", '
                '"is_complete": false, "questions": [], "action": "x"}' % bad
            )
            with pytest.raises(WrongType):
                parse_output(raw)

    def test_text_input_requires_nonempty_text(self):
        base = (
            '{"event_list": [{"type": "text_input", "item": 2%s}], "next_step": "", '
            '"is_complete": false, "questions": [], "action": "x"}'
        )
        with pytest.raises(MissingKey):
            parse_output(base % "")
        with pytest.raises(WrongType):
            parse_output(base % ', "text": ""')
        out = parse_output(base % ', "text": "pizza"')
        assert out.event_list[0].text == "pizza"

    def test_strict_mode_rejects_escapes(self):
        raw = (
            '{"event_list": [], "next_step": "say \\"hi\\"", "is_complete": false, '
            '"questions": [], "action": "x"}'
        )
        with pytest.raises(EscapeViolation):
            parse_output(raw, strict=True)
        out = parse_output(raw, strict=False)
        assert out.next_step == 'say "hi"'

    def test_extra_keys_dropped_with_warning(self, caplog):
        data = json.loads(VALID_OUTPUT)
        data["confidence"] = 0.9
        with caplog.at_level(logging.WARNING, logger="webagent.protocol"):
            out = parse_output(json.dumps(data))
        assert "confidence" in caplog.text
        assert not hasattr(out, "confidence")

    def test_round_trip(self):
        out = parse_output(VALID_OUTPUT)
        assert parse_output(out.to_json()) == out

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=400))
    def test_totality_on_arbitrary_text(self, raw):
        try:
            result = parse_output(raw, strict=True)
        except ProtocolError:
            return
        assert isinstance(result, AgentOutput)


class TestEditableRule:
    def test_bare_input_is_editable(self):
        assert record_editable(record(tag="input", role=""))

    def test_textarea_is_editable(self):
        assert record_editable(record(tag="textarea", role=""))

    def test_input_with_button_role_is_not(self):
        assert not record_editable(record(tag="input", role="button"))

    def test_texty_role_on_any_tag_is_editable(self):
        assert record_editable(record(tag="div", role="searchbox"))

    def test_select_is_not(self):
        assert not record_editable(record(tag="select", role=""))


class TestValidateEvents:
    def test_click_without_cursor(self, elements):
        report = validate_events([InteractionEvent("click", 0)], elements)
        assert not report.ok
        assert report.violations[0].rule_id == "R2"

    def test_move_then_click_ok(self, elements):
        report = validate_events(
            [InteractionEvent("cursor_move", 0), InteractionEvent("click", 0)], elements
        )
        assert report.ok

    def test_text_input_to_button_violates_r4(self, elements):
        events = [
            InteractionEvent("cursor_move", 3),
            InteractionEvent("click", 3),
            InteractionEvent("text_input", 3, "pizza"),
        ]
        report = validate_events(events, elements)
        assert [v.rule_id for v in report.violations] == ["R4"]
        assert report.violations[0].event_index == 2

    def test_move_to_offscreen_requires_scroll(self, elements):
        report = validate_events([InteractionEvent("cursor_move", 1)], elements)
        assert [v.rule_id for v in report.violations] == ["R3"]
        report = validate_events(
            [InteractionEvent("scroll", 1), InteractionEvent("cursor_move", 1)], elements
        )
        assert report.ok

    def test_unknown_item(self, elements):
        report = validate_events([InteractionEvent("cursor_move", 42)], elements)
        assert [v.rule_id for v in report.violations] == ["R1"]

    def test_unknown_kind(self, elements):
        report = validate_events([InteractionEvent("hover", 0)], elements)
        assert [v.rule_id for v in report.violations] == ["R5"]

    def test_violations_in_ascending_event_order(self, elements):
        events = [
            InteractionEvent("click", 0),       # R2
            InteractionEvent("cursor_move", 1),  # R3
            InteractionEvent("text_input", 3, "x"),  # R2 (+R4)
        ]
        report = validate_events(events, elements)
        indices = [v.event_index for v in report.violations]
        assert indices == sorted(indices)

    def test_carried_cursor_satisfies_r2(self, elements):
        cursor = CursorState(current_item=0, position=(10, 10))
        report = validate_events([InteractionEvent("click", 0)], elements, cursor)
        assert report.ok

    def test_carried_cursor_rejected_if_element_moved(self, elements):
        cursor = CursorState(current_item=0, position=(99, 99))
        report = validate_events([InteractionEvent("click", 0)], elements, cursor)
        assert not report.ok

    def test_carried_cursor_rejected_if_element_gone(self, elements):
        cursor = CursorState(current_item=77, position=(10, 10))
        report = validate_events([InteractionEvent("click", 77)], elements, cursor)
        assert [v.rule_id for v in report.violations] == ["R1"]

    def test_exhaustive_short_plans_match_brute_force_oracle(self, elements):
        # Independent oracle: abort at the first failing event, recomputing
        # cursor/scroll facts by scanning the prefix instead of threading
        # state.  (Any prefix it is still evaluating is all-passing, so the
        # last cursor_move in it is the cursor position.)
        def oracle_ok(events):
            for i, e in enumerate(events):
                rec = elements.get(str(e.item))
                if rec is None:
                    return False
                if e.kind == "cursor_move":
                    if not rec.visible_in_viewport and not any(
                        p.kind == "scroll" and p.item == e.item for p in events[:i]
                    ):
                        return False
                elif e.kind in ("click", "text_input"):
                    moves = [p.item for p in events[:i] if p.kind == "cursor_move"]
                    if not moves or moves[-1] != e.item:
                        return False
                    if e.kind == "text_input" and not record_editable(rec):
                        return False
            return True

        pool = [
            InteractionEvent(kind, item, "txt" if kind == "text_input" else None)
            for kind in ("click", "cursor_move", "scroll", "text_input")
            for item in (0, 1, 2, 9)
        ]
        mismatches = 0
        for length in (1, 2, 3):
            for combo in itertools.product(pool, repeat=length):
                got = validate_events(list(combo), elements).ok
                want = oracle_ok(list(combo))
                mismatches += got != want
        assert mismatches == 0


class TestBuildInput:
    def test_empty_task_rejected(self, elements):
        with pytest.raises(EmptyTask):
            build_input("", elements)

    def test_first_step_input(self, elements):
        inp = build_input("search for pizza", elements)
        assert inp.next_step == "" and inp.history == "" and inp.clarifying_qa == []

    def test_fields_carried(self, elements):
        inp = build_input(
            "buy an iPhone",
            elements,
            next_step="open product page",
            history="Step 1: searched",
            qa=[("which model?", "iPhone 15")],
        )
        assert inp.clarifying_qa == [("which model?", "iPhone 15")]
        assert inp.history == "Step 1: searched"

    def test_zero_elements_is_valid(self):
        inp = build_input("t", {})
        assert inp.elements == {}
