import json
from pathlib import Path

import pytest

from webagent.harvester import NodeInfo, PageSnapshot, Rect, Viewport, harvest, load_snapshot
from webagent.protocol import InteractionEvent
from webagent.session import FixtureWorld, SimulatedSession

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def make_random_page(rng):
    """A page of 3-8 interactable nodes mixing the profiles the movement
    rules care about: visible/off-screen links, editable fields, widget-role
    inputs."""
    nodes = []
    for i in range(rng.randint(3, 8)):
        profile = rng.choice(["link", "offscreen_link", "field", "widget_input", "textbox_div"])
        y_visible = rng.randint(0, 700)
        y_hidden = rng.randint(900, 2800)
        if profile == "link":
            tag, role, y = "a", "link", y_visible
        elif profile == "offscreen_link":
            tag, role, y = "a", "link", y_hidden
        elif profile == "field":
            tag, role, y = "input", "", rng.choice([y_visible, y_hidden])
        elif profile == "widget_input":
            tag, role, y = "input", "button", y_visible
        else:
            tag, role, y = "div", "textbox", rng.choice([y_visible, y_hidden])
        nodes.append(
            NodeInfo(
                tag_name=tag,
                accessible_name=f"element {i}",
                aria_role=role,
                text=f"text {i}",
                box=Rect(rng.randint(0, 900), y, rng.randint(10, 60), rng.randint(20, 200)),
                tabindex=0 if tag == "div" else None,
            )
        )
        if rng.random() < 0.3:
            nodes.append(NodeInfo(tag_name="p", text="filler", box=Rect(0, 0, 10, 10)))
    return PageSnapshot(
        url="fixture://random",
        viewport=Viewport(1000, 800),
        scroll_offset=(0.0, 0.0),
        nodes=nodes,
    )


def output_json(events=(), next_step="", complete=False, questions=(), action=""):
    """Hand-author one conforming model response."""
    return json.dumps(
        {
            "event_list": list(events),
            "next_step": next_step,
            "is_complete": complete,
            "questions": list(questions),
            "action": action,
        }
    )


# The two-step scripted pizza run over the google-home world: plan, then done.
PIZZA_RESPONSES = [
    output_json(
        events=[{"type": "cursor_move", "item": 9}, {"type": "click", "item": 9}],
        next_step="confirm the results page lists pizza links",
        action="moved the cursor to the search button and clicked it",
    ),
    output_json(
        complete=True,
        action="confirmed the results page lists pizza links; task finished",
    ),
]

# A run that first needs a clarifying answer, then finishes.
QUESTION_RESPONSES = [
    output_json(
        questions=["Which city should the pizza search target?"],
        next_step="search for pizza in the city the user names",
        action="asked which city the pizza search should target",
    ),
    output_json(
        events=[{"type": "cursor_move", "item": 9}, {"type": "click", "item": 9}],
        complete=True,
        action="searched for pizza in the given city and confirmed results",
    ),
]


def make_random_events(rng, n_elements, max_len=6):
    events = []
    for _ in range(rng.randint(0, max_len)):
        kind = rng.choice(["click", "cursor_move", "scroll", "text_input"])
        # Mostly valid ids, sometimes out of range.
        item = rng.randint(0, n_elements + 1) if rng.random() < 0.15 else rng.randrange(max(n_elements, 1))
        events.append(
            InteractionEvent(kind, item, "typed text" if kind == "text_input" else None)
        )
    return events


@pytest.fixture
def google_home_snapshot():
    return load_snapshot(FIXTURES / "google_home.json")


@pytest.fixture
def google_home_elements(google_home_snapshot):
    return harvest(google_home_snapshot)


@pytest.fixture
def golden_elements_line():
    return (GOLDEN / "elements_google_home.txt").read_text()


@pytest.fixture
def golden_prompt():
    return (GOLDEN / "prompt_first_step.txt").read_text()


@pytest.fixture
def world():
    return FixtureWorld.load(FIXTURES / "google_home_world.json")


@pytest.fixture
def world_dict():
    return json.loads((FIXTURES / "google_home_world.json").read_text())


@pytest.fixture
def session(world):
    return SimulatedSession(world)
