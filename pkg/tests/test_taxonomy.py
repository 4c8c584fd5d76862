import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triagebench.taxonomy import (
    ANSWER_CONTRACT,
    CategoryCode,
    TaxonomyError,
    builtin_taxonomy,
    load_taxonomy,
    parse_category,
    priority_of,
    render_prompt_block,
)

CODES = list(CategoryCode.taxonomy_codes())


class TestBuiltinTaxonomy:
    def test_twelve_categories_in_code_order(self, taxonomy):
        assert [c.code for c in taxonomy.categories] == CODES
        assert [c.code.value for c in taxonomy.categories] == [
            f"CAT{k}" for k in range(1, 13)
        ]

    def test_unparsed_excluded(self, taxonomy):
        assert CategoryCode.UNPARSED not in [c.code for c in taxonomy.categories]
        assert len(CODES) == 12

    def test_names_unique_and_nonempty(self, taxonomy):
        names = [c.name for c in taxonomy.categories]
        assert len(set(names)) == 12
        assert all(names)

    def test_priorities_in_band(self, taxonomy):
        assert all(1 <= c.priority <= 5 for c in taxonomy.categories)

    def test_priority_lookup(self, taxonomy):
        assert priority_of(CategoryCode.CAT10, taxonomy) == 2
        with pytest.raises(TaxonomyError):
            priority_of(CategoryCode.UNPARSED, taxonomy)

    def test_from_number_bounds(self):
        assert CategoryCode.from_number(1) is CategoryCode.CAT1
        assert CategoryCode.from_number(12) is CategoryCode.CAT12
        for bad in (0, 13, -1):
            with pytest.raises(TaxonomyError):
                CategoryCode.from_number(bad)


class TestPromptBlock:
    def test_each_code_and_name_once(self, taxonomy):
        block = render_prompt_block(taxonomy)
        for cat in taxonomy.categories:
            assert block.count(f"{cat.code.value} ") == 1
            assert block.count(cat.name) == 1
            assert cat.description in block

    def test_line_per_category(self, taxonomy):
        lines = render_prompt_block(taxonomy).splitlines()
        assert len(lines) == 12
        assert lines[0].startswith("CAT1 ")

    def test_contract_names_the_final_line(self):
        assert 'FINAL: CATk' in ANSWER_CONTRACT


class TestLoadTaxonomy:
    def test_override_round_trips(self, tmp_path, taxonomy):
        rows = [
            {
                "code": c.code.value,
                "name": c.name,
                "description": c.description,
                "priority": c.priority,
            }
            for c in taxonomy.categories
        ]
        path = tmp_path / "tax.json"
        path.write_text(json.dumps(rows), encoding="utf-8")
        assert load_taxonomy(path) == taxonomy

    def test_rejects_wrong_count(self, tmp_path, taxonomy):
        rows = [
            {
                "code": c.code.value,
                "name": c.name,
                "description": c.description,
                "priority": c.priority,
            }
            for c in taxonomy.categories[:11]
        ]
        path = tmp_path / "tax.json"
        path.write_text(json.dumps(rows), encoding="utf-8")
        with pytest.raises(TaxonomyError):
            load_taxonomy(path)

    def test_rejects_duplicate_names(self, tmp_path, taxonomy):
        rows = [
            {
                "code": c.code.value,
                "name": "Same Name",
                "description": c.description,
                "priority": c.priority,
            }
            for c in taxonomy.categories
        ]
        path = tmp_path / "tax.json"
        path.write_text(json.dumps(rows), encoding="utf-8")
        with pytest.raises(TaxonomyError):
            load_taxonomy(path)


class TestParseContractLine:
    @pytest.mark.parametrize("code", CODES)
    def test_round_trip_every_code(self, code):
        assert parse_category(f"FINAL: {code.value}") is code

    def test_case_and_spacing_tolerated(self):
        assert parse_category("final: cat 7") is CategoryCode.CAT7
        assert parse_category("Final :CAT2") is CategoryCode.CAT2
        assert parse_category("FINAL: [CAT3]") is CategoryCode.CAT3

    def test_last_contract_line_wins(self):
        text = "FINAL: CAT2\nwait, reconsidering\nFINAL: CAT9"
        assert parse_category(text) is CategoryCode.CAT9

    def test_contract_beats_later_bare_token(self):
        text = "FINAL: CAT4\nP.S. it could also be CAT8"
        assert parse_category(text) is CategoryCode.CAT4

    def test_out_of_range_number_skipped(self):
        assert parse_category("FINAL: CAT13") is CategoryCode.UNPARSED
        assert parse_category("FINAL: CAT13\nFINAL: CAT4") is CategoryCode.CAT4


class TestParseFallbacks:
    def test_last_standalone_token(self):
        assert parse_category("could be CAT3 or maybe CAT11.") is CategoryCode.CAT11

    def test_token_case_insensitive(self):
        assert parse_category("leaning cat9 here") is CategoryCode.CAT9

    def test_token_needs_word_boundary(self):
        assert parse_category("CONCATENATE12 things") is CategoryCode.UNPARSED
        assert parse_category("CAT5x") is CategoryCode.UNPARSED

    def test_category_name_match(self, taxonomy):
        assert (
            parse_category("This is clearly Data Exfiltration or Leakage.", taxonomy)
            is CategoryCode.CAT4
        )

    def test_name_case_and_whitespace_insensitive(self, taxonomy):
        assert (
            parse_category("looks like social\n   engineering to me", taxonomy)
            is CategoryCode.CAT7
        )

    def test_last_name_occurrence_wins(self, taxonomy):
        text = "Not Account Compromise after all; settled on Malware."
        assert parse_category(text, taxonomy) is CategoryCode.CAT2

    def test_name_not_matched_inside_word(self, taxonomy):
        assert parse_category("Malwarebytes flagged it", taxonomy) is (
            CategoryCode.UNPARSED
        )

    def test_unparsed_cases(self):
        for text in ("", "no category here", "CATASTROPHE", "cat food"):
            assert parse_category(text) is CategoryCode.UNPARSED


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=400))
def test_parse_total_over_arbitrary_text(text):
    # Never raises, always lands in the enum.
    assert parse_category(text) in set(CategoryCode)


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from(CODES),
    st.text(alphabet=st.characters(blacklist_characters="\x00"), max_size=80),
)
def test_parse_contract_survives_noise_suffix(code, noise):
    # The appended line is the last contract match, so it must win.
    text = f"{noise}\nFINAL: {code.value}"
    assert parse_category(text) is code
