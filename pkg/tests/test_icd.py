"""Range matching against enumeration oracles, Table-3 definitions, hierarchy."""

import itertools
import string

import pytest
from hypothesis import given, settings, strategies as st

from ehr_riskbench.errors import ParseError, SystemMismatch, UnsupportedSystem
from ehr_riskbench.icd import (
    BUILTIN_TASKS, CaseDefinition, CodeRange, OverlapWarning, ancestors,
    chapter_of, classify, load_case_definitions, make_range, matches_range,
    parse_case_definitions,
)
from ehr_riskbench.model import CodeSystem, normalize_code


def icd9_universe(categories):
    """All ICD-9 codes for the given plain categories, in canonical order.

    Order comes from the generation sequence itself (bare, then each first
    digit, then its two-digit extensions), which is an independent statement
    of the ordering the matcher must honor.
    """
    out = []
    for cat in categories:
        out.append(f"{cat:03d}")
        for d1 in range(10):
            out.append(f"{cat:03d}.{d1}")
            for d2 in range(10):
                out.append(f"{cat:03d}.{d1}{d2}")
    return out


def oracle_icd9(code: str, start: str, end: str, categories) -> bool:
    universe = icd9_universe(categories)
    if code not in universe:
        return False
    i, j = universe.index(start), universe.index(end)
    return i <= universe.index(code) <= j


ICD10_CATEGORIES = ["".join(t) for t in itertools.product(
    string.ascii_uppercase[:8], "0123", "0123456789")]


class TestMatchesRangeOracle:
    """matches_range must agree with brute-force enumeration membership."""

    @given(st.integers(300, 310), st.integers(0, 9), st.integers(0, 9),
           st.integers(300, 310), st.integers(0, 9), st.integers(0, 9),
           st.sampled_from(["", "7", "70", "03", "9", "99"]))
    @settings(max_examples=200)
    def test_icd9_subcoded_ranges(self, c1, a1, a2, c2, b1, b2, probe_sub):
        start = f"{min(c1, c2):03d}.{a1}{a2}"
        end = f"{max(c1, c2):03d}.{b1}{b2}"
        cats = range(298, 313)
        universe = icd9_universe(cats)
        if universe.index(start) > universe.index(end):
            start, end = end, start
        rng = make_range(CodeSystem.ICD9, start, end)
        for cat in (min(c1, c2) - 1, c1, c2, max(c1, c2) + 1):
            code_text = f"{cat:03d}" + (f".{probe_sub}" if probe_sub else "")
            code = normalize_code(CodeSystem.ICD9, code_text)
            assert matches_range(code, rng) == oracle_icd9(code.normalized, start, end, cats)

    @given(st.integers(291, 295), st.integers(291, 295),
           st.sampled_from(["", "0", "81", "9"]), st.integers(289, 297))
    @settings(max_examples=100)
    def test_icd9_bare_category_ranges(self, c1, c2, sub, probe_cat):
        lo, hi = min(c1, c2), max(c1, c2)
        rng = make_range(CodeSystem.ICD9, str(lo), str(hi))
        code_text = f"{probe_cat:03d}" + (f".{sub}" if sub else "")
        code = normalize_code(CodeSystem.ICD9, code_text)
        # bare endpoints take in every subcode of categories in [lo, hi]
        assert matches_range(code, rng) == (lo <= probe_cat <= hi)

    @given(st.sampled_from(ICD10_CATEGORIES), st.sampled_from(ICD10_CATEGORIES),
           st.sampled_from(ICD10_CATEGORIES), st.sampled_from(["", "1", "20", "911"]))
    @settings(max_examples=200)
    def test_icd10_category_ranges(self, s, e, probe, sub):
        lo, hi = min(s, e), max(s, e)
        rng = make_range(CodeSystem.ICD10, lo, hi)
        code = normalize_code(CodeSystem.ICD10, probe + ("." + sub if sub else ""))
        i, j, k = (ICD10_CATEGORIES.index(lo), ICD10_CATEGORIES.index(hi),
                   ICD10_CATEGORIES.index(probe))
        assert matches_range(code, rng) == (i <= k <= j)

    def test_wildcard(self):
        rng = make_range(CodeSystem.ICD9, "250", "250", wildcard=True)
        assert matches_range(normalize_code(CodeSystem.ICD9, "250.13"), rng)
        assert matches_range(normalize_code(CodeSystem.ICD9, "250"), rng)
        assert not matches_range(normalize_code(CodeSystem.ICD9, "251.0"), rng)

    def test_partial_subcode_outside_padded_range(self):
        rng = make_range(CodeSystem.ICD9, "304.70", "304.73")
        assert not matches_range(normalize_code(CodeSystem.ICD9, "304.7"), rng)
        assert matches_range(normalize_code(CodeSystem.ICD9, "304.70"), rng)
        assert matches_range(normalize_code(CodeSystem.ICD9, "304.73"), rng)
        assert not matches_range(normalize_code(CodeSystem.ICD9, "304.74"), rng)

    def test_system_mismatch(self):
        rng = make_range(CodeSystem.ICD10, "F10", "F19")
        with pytest.raises(SystemMismatch):
            matches_range(normalize_code(CodeSystem.ICD9, "304"), rng)

    def test_paper_row_examples(self):
        assert matches_range(normalize_code(CodeSystem.ICD10, "F11.20"),
                             make_range(CodeSystem.ICD10, "F11", "F11"))
        assert matches_range(normalize_code(CodeSystem.ICD9, "304.72"),
                             make_range(CodeSystem.ICD9, "304.70", "304.73"))
        assert not matches_range(normalize_code(CodeSystem.ICD10, "E66.9"),
                                 make_range(CodeSystem.ICD10, "E08", "E13"))


DEFS = load_case_definitions()


def c9(text):
    return normalize_code(CodeSystem.ICD9, text)


def c10(text):
    return normalize_code(CodeSystem.ICD10, text)


class TestBuiltinDefinitions:
    def test_names(self):
        assert set(DEFS) == set(BUILTIN_TASKS) == {"OUD", "SUD", "Diabetes"}

    def test_oud_exact_ranges(self):
        spans = {(r.start, r.end, r.wildcard) for r in DEFS["OUD"].ranges}
        assert spans == {("F11", "F11", False), ("304.00", "304.03", False),
                         ("304.70", "304.73", False), ("305.50", "305.53", False)}

    # one inside and one outside probe for every published range
    TABLE = [
        ("OUD", c10("F11.20"), True), ("OUD", c10("F10.13"), False),
        ("OUD", c9("304.00"), True), ("OUD", c9("304.03"), True),
        ("OUD", c9("304.04"), False), ("OUD", c9("304.10"), False),
        ("OUD", c9("304.70"), True), ("OUD", c9("304.73"), True),
        ("OUD", c9("304.74"), False),
        ("OUD", c9("305.50"), True), ("OUD", c9("305.53"), True),
        ("OUD", c9("305.54"), False), ("OUD", c9("305.1"), False),
        ("SUD", c10("F10.13"), True), ("SUD", c10("F19.99"), True),
        ("SUD", c10("F09"), False), ("SUD", c10("F20"), False),
        ("SUD", c9("291"), True), ("SUD", c9("291.81"), True),
        ("SUD", c9("292.9"), True), ("SUD", c9("290.9"), False),
        ("SUD", c9("293"), False),
        ("SUD", c9("303.00"), True), ("SUD", c9("303.03"), True),
        ("SUD", c9("303.04"), False),
        ("SUD", c9("303.90"), True), ("SUD", c9("303.93"), True),
        ("SUD", c9("303.94"), False),
        ("SUD", c9("304.00"), True), ("SUD", c9("304.13"), True),
        ("SUD", c9("304.23"), True), ("SUD", c9("304.33"), True),
        ("SUD", c9("304.43"), True), ("SUD", c9("304.53"), True),
        ("SUD", c9("304.63"), True), ("SUD", c9("304.73"), True),
        ("SUD", c9("304.83"), True), ("SUD", c9("304.93"), True),
        ("SUD", c9("304.94"), False), ("SUD", c9("304.9"), False),
        ("SUD", c9("648.30"), True), ("SUD", c9("648.34"), True),
        ("SUD", c9("648.35"), False), ("SUD", c9("648.2"), False),
        ("Diabetes", c10("E08"), True), ("Diabetes", c10("E11.9"), True),
        ("Diabetes", c10("E13.9"), True), ("Diabetes", c10("E14"), False),
        ("Diabetes", c10("E07.9"), False), ("Diabetes", c10("I10"), False),
        ("Diabetes", c9("250"), True), ("Diabetes", c9("250.13"), True),
        ("Diabetes", c9("250.99"), True), ("Diabetes", c9("251.0"), False),
        ("Diabetes", c9("249.00"), False),
    ]

    @pytest.mark.parametrize("task,code,expected", TABLE,
                             ids=[f"{t}-{c.normalized}" for t, c, _ in TABLE])
    def test_table_probes(self, task, code, expected):
        assert classify(code, DEFS[task]) == expected

    def test_classify_is_or_of_ranges(self):
        for task in BUILTIN_TASKS:
            for code in (c10("F11.20"), c9("304.71"), c10("Z00"), c9("250.01")):
                by_or = any(matches_range(code, r) for r in DEFS[task].ranges
                            if r.system is code.system)
                assert classify(code, DEFS[task]) == by_or


@st.composite
def any_code(draw):
    if draw(st.booleans()):
        cat = draw(st.from_regex(r"[A-Z][0-9]{2}", fullmatch=True))
        sub = draw(st.from_regex(r"[0-9]{0,2}", fullmatch=True))
        return normalize_code(CodeSystem.ICD10, cat + ("." + sub if sub else ""))
    cat = draw(st.integers(0, 999))
    sub = draw(st.from_regex(r"[0-9]{0,2}", fullmatch=True))
    return normalize_code(CodeSystem.ICD9, f"{cat:03d}" + ("." + sub if sub else ""))


class TestOudSudContainment:
    """OUD matches imply SUD matches, except the published 305.5x block.

    305.50-305.53 sits in the OUD row only; no SUD range covers 305.x, so the
    containment is asserted over everything outside that block and the
    exception is pinned down explicitly.
    """

    @given(any_code())
    @settings(max_examples=300)
    def test_containment_outside_carveout(self, code):
        if code.system is CodeSystem.ICD9 and code.category == "305":
            return
        if classify(code, DEFS["OUD"]):
            assert classify(code, DEFS["SUD"])

    def test_carveout_is_real(self):
        for text in ("305.50", "305.51", "305.52", "305.53"):
            code = c9(text)
            assert classify(code, DEFS["OUD"])
            assert not classify(code, DEFS["SUD"])


class TestHierarchy:
    def test_icd10_examples(self):
        assert ancestors(c10("F10.13")) == ["F10.1", "F10", "F01-F99"]
        assert ancestors(c10("F10")) == ["F01-F99"]

    def test_icd9_examples(self):
        assert ancestors(c9("250.01")) == ["250.0", "250"]
        assert ancestors(c9("250")) == []

    def test_deep_subcode(self):
        assert ancestors(c10("S06.0X1A")) == ["S06.0X1", "S06.0X", "S06.0", "S06", "S00-T88"]

    def test_snomed_unsupported(self):
        with pytest.raises(UnsupportedSystem):
            ancestors(normalize_code(CodeSystem.SNOMED, "44054006"))

    def test_chapter_lookup(self):
        assert chapter_of("F11") == "F01-F99"
        assert chapter_of("A00") == "A00-B99"
        assert chapter_of("Z99") == "Z00-Z99"


class TestDefinitionFiles:
    def test_parse_error_start_after_end(self):
        text = "name\tsystem\tstart\tend\twildcard\nX\tICD10\tE13\tE08\t0\n"
        with pytest.raises(ParseError) as err:
            parse_case_definitions(text, path="defs.tsv")
        assert err.value.line == 2

    def test_empty_file(self):
        assert parse_case_definitions("name\tsystem\tstart\tend\twildcard\n") == {}

    def test_overlap_warning(self):
        text = ("name\tsystem\tstart\tend\twildcard\n"
                "X\tICD9\t304.00\t304.50\t0\n"
                "X\tICD9\t304.40\t304.90\t0\n")
        with pytest.warns(OverlapWarning):
            parse_case_definitions(text)

    def test_user_file_round_trip(self, tmp_path):
        path = tmp_path / "defs.tsv"
        path.write_text("name\tsystem\tstart\tend\twildcard\n"
                        "Hypertension\tICD10\tI10\tI16\t0\n")
        defs = load_case_definitions(str(path))
        assert classify(c10("I10"), defs["Hypertension"])
        assert not classify(c10("I09"), defs["Hypertension"])

    def test_make_range_validations(self):
        with pytest.raises(ValueError):
            make_range(CodeSystem.ICD10, "F11.2", "F11.2")  # subcoded ICD-10 endpoint
        with pytest.raises(ValueError):
            make_range(CodeSystem.ICD9, "304.00", "305")  # mixed bare/subcoded
        with pytest.raises(ValueError):
            make_range(CodeSystem.ICD9, "250", "251", wildcard=True)  # non-singleton
