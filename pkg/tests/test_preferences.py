import json

import pytest
from hypothesis import given, settings, strategies as st

from discern.corpus import InteractionRecord, build_catalog
from discern.preferences import (
    BUILTIN_TEMPLATES,
    ClientError,
    IncompleteSetError,
    PreferenceError,
    PreferenceSet,
    ReplayClient,
    ResponseParseError,
    approximate_preferences,
    classify_preference_sentiment,
    invert_negative_preference,
    load_preference_sets,
    parse_response,
    postprocess_to_five,
    prompt_digest,
    render_prompt,
    save_preference_sets,
    serialize_instructions,
)

FIVE = ["Search for red", "Look for blue", "Avoid green", "Prioritize yellow", "Opt for black"]


def catalog_one_user(n_items=4):
    records = [
        InteractionRecord(user="u1", item=f"i{t}", timestamp=t, review=f"review {t}")
        for t in range(n_items)
    ]
    return build_catalog(records)


def test_render_single_pair_single_block():
    catalog = catalog_one_user(1)
    rendered = render_prompt(catalog.sequences["u1"], BUILTIN_TEMPLATES["default"])
    assert rendered.text.count('"item"') == 1
    assert '"review": "review 0"' in rendered.text
    assert not rendered.truncated


def test_render_chronological_order():
    catalog = catalog_one_user(2)
    rendered = render_prompt(catalog.sequences["u1"], BUILTIN_TEMPLATES["default"])
    assert rendered.text.index("i0") < rendered.text.index("i1")


def test_render_deterministic():
    catalog = catalog_one_user(3)
    a = render_prompt(catalog.sequences["u1"], BUILTIN_TEMPLATES["default"])
    b = render_prompt(catalog.sequences["u1"], BUILTIN_TEMPLATES["default"])
    assert a.text.encode() == b.text.encode()


def test_render_truncates_oldest_first():
    catalog = catalog_one_user(4)
    rendered = render_prompt(
        catalog.sequences["u1"], BUILTIN_TEMPLATES["default"], prompt_char_budget=650
    )
    assert rendered.truncated
    assert "i3" in rendered.text  # newest survives
    assert "i0" not in rendered.text


def test_render_review_char_cap():
    records = [InteractionRecord(user="u1", item="a", timestamp=1, review="x" * 5000)]
    catalog = build_catalog(records)
    rendered = render_prompt(catalog.sequences["u1"], BUILTIN_TEMPLATES["default"], review_char_cap=100)
    assert "x" * 100 in rendered.text
    assert "x" * 101 not in rendered.text


def test_builtin_templates_have_single_placeholder():
    for template in BUILTIN_TEMPLATES.values():
        assert template.body.count("{history}") == 1


# hand-annotated parse fixtures: (raw response, expected instruction list or None)
PARSE_FIXTURES = [
    ('{"instructions": ["a", "b"]}', ["a", "b"]),
    ('{"instructions": []}', []),
    ("Here you go!\n```json\n{\"instructions\": [\"x\"]}\n```\nHope that helps.", ["x"]),
    ("```\n{\"instructions\": [\"fenced no lang\"]}\n```", ["fenced no lang"]),
    ('Sure: {"instructions": ["inline"]} trailing words', ["inline"]),
    ('{"notes": "first object wrong", "instructions": ["both keys"]}', ["both keys"]),
    ('{"items": []} then {"instructions": ["second object"]}', ["second object"]),
    ('prefix {"nested": {"instructions": ["inner"]}} suffix', ["inner"]),
    ('{"instructions": ["quote \\" inside"]}', ['quote " inside']),
    ('{"instructions": ["unicode café"]}', ["unicode café"]),
    ("  \n  {\"instructions\": [\"leading whitespace\"]}", ["leading whitespace"]),
    ('{"instructions": ["a"], "extra": 1}', ["a"]),
    ('[{"instructions": ["inside array"]}]', ["inside array"]),
    ("The JSON file is as follows: {\"instructions\": [\"one\", \"two\", \"three\"]}", ["one", "two", "three"]),
    ('{"INSTRUCTIONS": ["wrong case"]}', None),
    ('{"items": []}', None),
    ("no json at all", None),
    ('{"instructions": "not a list"}', None),
    ('{"instructions": [1, 2]}', None),
    ("{broken json", None),
]


@pytest.mark.parametrize("raw,expected", PARSE_FIXTURES)
def test_parse_response_fixture_set(raw, expected):
    if expected is None:
        with pytest.raises(ResponseParseError) as err:
            parse_response(raw)
        assert err.value.raw == raw
    else:
        assert parse_response(raw) == expected


def test_parse_nested_object_extraction():
    # the first balanced object containing the key wins, even nested in prose
    raw = 'analysis... {"instructions": ["from prose"]} and more {"instructions": ["later"]}'
    assert parse_response(raw) == ["from prose"]


def test_parse_serialize_identity():
    for instructions in ([], ["a"], FIVE):
        assert parse_response(serialize_instructions(instructions)) == instructions


def test_postprocess_identity_on_five():
    assert postprocess_to_five(FIVE) == FIVE


def test_postprocess_keeps_first_five_of_seven():
    seven = FIVE + ["Consider sixth", "Choose seventh"]
    assert postprocess_to_five(seven) == FIVE


def test_postprocess_incomplete_reports_survivors():
    with pytest.raises(IncompleteSetError) as err:
        postprocess_to_five(["a", "b", "b", " "])
    assert err.value.survivors == ["a", "b"]


def test_postprocess_trims_and_dedups():
    raw = ["  a  ", "a", "b", "", "c", "d", "e"]
    assert postprocess_to_five(raw) == ["a", "b", "c", "d", "e"]


def test_sentiment_paper_examples():
    assert classify_preference_sentiment("Avoid products that require base coat") == "negative"
    assert classify_preference_sentiment("Search for nail polish with shimmer finish") == "positive"
    assert classify_preference_sentiment("Exclude strategy games") == "negative"
    assert classify_preference_sentiment("No fragrances with alcohol") == "negative"


def test_sentiment_case_insensitive_and_punctuation():
    assert classify_preference_sentiment("avoid heavy fragrance") == "negative"
    assert classify_preference_sentiment('"Avoid glitter"') == "negative"
    assert classify_preference_sentiment("  no parabens") == "negative"
    # "no" must be the whole first word, not a prefix
    assert classify_preference_sentiment("Noise cancelling headphones") == "positive"


def test_invert_examples():
    assert invert_negative_preference("Avoid glitter polish") == "Find glitter polish"
    assert (
        invert_negative_preference("Exclude strategy games", style="search_for")
        == "Search for strategy games"
    )
    assert invert_negative_preference("  no parabens") == "Find parabens"


def test_invert_positive_input_is_contract_error():
    with pytest.raises(PreferenceError):
        invert_negative_preference("Find matte shades")


LEAD = st.sampled_from(["Avoid", "avoid", "AVOID", "Exclude", "exclude", "No", "no"])
BODY = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters=" "),
    min_size=1,
    max_size=40,
).filter(lambda s: s.strip())


@settings(max_examples=200, deadline=None)
@given(lead=LEAD, body=BODY, style=st.sampled_from(["find", "search_for"]))
def test_inversion_always_classifies_positive(lead, body, style):
    negative = f"{lead} {body}"
    assert classify_preference_sentiment(negative) == "negative"
    inverted = invert_negative_preference(negative, style=style)
    assert classify_preference_sentiment(inverted) == "positive"
    # the remainder is preserved
    assert inverted.endswith(body)


def _write_replay(tmp_path, catalog, template, response_builder):
    lines = []
    for user in sorted(catalog.sequences):
        seq = catalog.sequences[user]
        for t in range(1, len(seq)):
            prompt = render_prompt(seq, template, upto=t).text
            lines.append(json.dumps({"prompt_sha256": prompt_digest(prompt), "response": response_builder(user, t)}))
    fixture = tmp_path / "replay.jsonl"
    fixture.write_text("\n".join(lines) + "\n")
    return fixture


def test_approximate_with_replay_fixture(tmp_path):
    catalog = catalog_one_user(5)  # T_u = 5 -> t in {1..4}
    template = BUILTIN_TEMPLATES["default"]
    fixture = _write_replay(
        tmp_path, catalog, template,
        lambda user, t: json.dumps({"instructions": [f"{p} {t}" for p in FIVE]}),
    )
    client = ReplayClient(fixture)
    run = approximate_preferences(catalog, client, template)
    assert not run.missing and run.retries == 0
    assert set(run.sets) == {("u1", t) for t in (1, 2, 3, 4)}
    assert client.calls == 4
    # replay mode is fully deterministic
    rerun = approximate_preferences(catalog, ReplayClient(fixture), template)
    assert {k: v.preferences for k, v in rerun.sets.items()} == {
        k: v.preferences for k, v in run.sets.items()
    }


class FlakyClient:
    def __init__(self, good):
        self.good = good
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        if self.calls == 1:
            return "garbage !!"
        return self.good


def test_retry_then_success(tmp_path):
    catalog = catalog_one_user(2)  # single (u1, 1) generation
    client = FlakyClient(json.dumps({"instructions": FIVE}))
    run = approximate_preferences(catalog, client, BUILTIN_TEMPLATES["default"])
    assert run.retries == 1
    assert run.sets[("u1", 1)].preferences == FIVE


class DeadClient:
    def complete(self, prompt):
        raise ClientError("down")


def test_failures_recorded_and_run_continues():
    catalog = catalog_one_user(3)
    run = approximate_preferences(catalog, DeadClient(), BUILTIN_TEMPLATES["default"], max_retries=1)
    assert run.sets == {}
    assert set(run.missing) == {("u1", 1), ("u1", 2)}
    assert run.report()["missing"] == [["u1", 1], ["u1", 2]]


def test_preference_set_round_trip(tmp_path):
    sets = {
        ("u1", 1): PreferenceSet(user="u1", t=1, preferences=FIVE),
        ("u2", 3): PreferenceSet(user="u2", t=3, preferences=[f"{p}!" for p in FIVE]),
    }
    path = tmp_path / "prefs.jsonl"
    save_preference_sets(sets, path)
    loaded = load_preference_sets(path)
    assert {k: v.preferences for k, v in loaded.items()} == {k: v.preferences for k, v in sets.items()}


def test_preference_set_requires_exactly_five():
    with pytest.raises(PreferenceError):
        PreferenceSet(user="u", t=1, preferences=["only", "four", "given", "here"])
