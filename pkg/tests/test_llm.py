"""Prompt templates, Yes/No extraction, oracle clients, probes, and export."""

import json
import math
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehr_riskbench.cohort import Cohort, CohortSample
from ehr_riskbench.errors import (
    CodeWithoutDescription,
    OracleError,
    OracleUnreachable,
    OverLength,
)
from ehr_riskbench.evaluate import roc_auc
from ehr_riskbench.llm.export import export_finetune_dataset
from ehr_riskbench.llm.extract import TopKDistribution, extract_yes_no
from ehr_riskbench.llm.mock_oracle import (
    MockRules,
    load_rules,
    respond,
    score_prompt,
)
from ehr_riskbench.llm.oracle import (
    HttpOracle,
    InProcessOracle,
    MockProcessOracle,
    run_inference,
    to_prediction_set,
)
from ehr_riskbench.llm.probes import (
    inject_codes,
    probe_instruction_swap,
    probe_risk_factor_injection,
)
from ehr_riskbench.llm.prompts import (
    OPEN_TAG,
    STYLE_V1,
    STYLE_V2,
    OracleProfile,
    PromptInstance,
    build_prompt_v1,
    build_prompt_v2,
    condition_phrase,
    estimate_tokens,
)
from ehr_riskbench.model import CodeCatalog, CodeSystem

from conftest import mk_code, mk_visit

DESCRIPTIONS = {
    "E11.9": "Type 2 diabetes mellitus without complications",
    "I10": "Essential (primary) hypertension",
    "F11.20": "Opioid dependence, uncomplicated",
    "J45.909": "Unspecified asthma, uncomplicated",
    "Z51.81": "Encounter for therapeutic drug level monitoring of buprenorphine",
}


@pytest.fixture(scope="module")
def catalog():
    cat = CodeCatalog()
    for code, desc in DESCRIPTIONS.items():
        cat.descriptions[(CodeSystem.ICD10, code)] = desc
    return cat


def sample_of(pid, visit_specs, label=0):
    """visit_specs: list of (codes, day)."""
    visits = tuple(mk_visit(i + 1, codes, day=day)
                   for i, (codes, day) in enumerate(visit_specs))
    return CohortSample(pid, visits, label, len(visit_specs) + 1)


@pytest.fixture
def diabetic_sample():
    return sample_of("p1", [(["E11.9", "I10"], 0), (["E11.9"], 30)])


PROFILE = OracleProfile()

V1_GOLDEN = (
    "You are a clinical risk prediction assistant. Given a patient's past "
    "diagnoses, answer whether the patient will be diagnosed with opioid use "
    "disorder in the future. Answer only Yes or No inside the tags.\n"
    "Past diagnoses (with occurrence counts across visits):\n"
    "- Type 2 diabetes mellitus without complications (x2)\n"
    "- Essential (primary) hypertension (x1)\n"
    "<Diagnosis>"
)

V2_GOLDEN = (
    "You are a clinical risk prediction assistant. Given a patient's past "
    "diagnoses, answer whether the patient will be diagnosed with opioid use "
    "disorder in the future. Answer only Yes or No inside the tags.\n"
    "Visit 1:\n"
    "- Type 2 diabetes mellitus without complications\n"
    "- Essential (primary) hypertension\n"
    "30 days later\n"
    "Visit 2:\n"
    "- Type 2 diabetes mellitus without complications\n"
    "<Diagnosis>"
)


class TestEstimateTokens:
    def test_400_bytes(self):
        assert estimate_tokens("a" * 400) == 108

    def test_empty(self):
        assert estimate_tokens("") == 8

    def test_counts_utf8_bytes_not_characters(self):
        text = "ééé"  # 3 characters, 6 UTF-8 bytes
        assert len(text.encode()) == 6
        assert estimate_tokens(text) == math.ceil(6 / 4) + 8
        assert estimate_tokens(text) > estimate_tokens("eee")

    @given(st.text(max_size=200), st.text(max_size=200))
    def test_monotone_in_length(self, a, b):
        assert estimate_tokens(a + b) >= estimate_tokens(a)


class TestPromptV1:
    def test_golden_text(self, catalog, diabetic_sample):
        prompt = build_prompt_v1(diabetic_sample, catalog,
                                 condition_phrase("OUD"))
        assert prompt.text == V1_GOLDEN
        assert prompt.style == STYLE_V1
        assert prompt.token_estimate == estimate_tokens(V1_GOLDEN)

    def test_ends_with_open_tag(self, catalog, diabetic_sample):
        prompt = build_prompt_v1(diabetic_sample, catalog, "diabetes mellitus")
        assert prompt.text.endswith(OPEN_TAG)

    def test_first_occurrence_order(self, catalog):
        sample = sample_of("p2", [(["I10"], 0), (["E11.9", "I10"], 7)])
        prompt = build_prompt_v1(sample, catalog, "x")
        body = prompt.text.splitlines()
        assert body[2] == "- Essential (primary) hypertension (x2)"
        assert body[3] == "- Type 2 diabetes mellitus without complications (x1)"

    def test_counts_are_per_visit_occurrences(self, catalog):
        sample = sample_of("p3", [(["E11.9"], 0), (["E11.9"], 7),
                                  (["E11.9"], 14)])
        prompt = build_prompt_v1(sample, catalog, "x")
        assert "- Type 2 diabetes mellitus without complications (x3)" in prompt.text

    def test_deterministic(self, catalog, diabetic_sample):
        a = build_prompt_v1(diabetic_sample, catalog, "x")
        b = build_prompt_v1(diabetic_sample, catalog, "x")
        assert a.text == b.text

    def test_missing_descriptions_listed(self, catalog):
        sample = sample_of("p4", [(["E11.9", "A00.0", "B99.9"], 0)])
        with pytest.raises(CodeWithoutDescription) as err:
            build_prompt_v1(sample, catalog, "x")
        assert "A00.0" in str(err.value) and "B99.9" in str(err.value)

    def test_highlow_instruction_swaps_one_sentence(self, catalog,
                                                    diabetic_sample):
        yn = build_prompt_v1(diabetic_sample, catalog, "x").text
        hl = build_prompt_v1(diabetic_sample, catalog, "x",
                             instruction="highlow").text
        assert "Answer only High or Low inside the tags." in hl
        assert "Yes or No" not in hl
        assert yn.splitlines()[1:] == hl.splitlines()[1:]

    def test_condition_phrases(self):
        assert condition_phrase("OUD") == "opioid use disorder"
        assert condition_phrase("SUD") == "substance use disorder"
        assert condition_phrase("Diabetes") == "diabetes mellitus"
        assert condition_phrase("CustomTask") == "CustomTask"


class TestPromptV2:
    def test_golden_text(self, catalog, diabetic_sample):
        prompt = build_prompt_v2(diabetic_sample, catalog,
                                 condition_phrase("OUD"), PROFILE)
        assert prompt.text == V2_GOLDEN
        assert prompt.style == STYLE_V2

    def test_single_visit_has_no_separator(self, catalog):
        sample = sample_of("p5", [(["I10"], 0)])
        prompt = build_prompt_v2(sample, catalog, "x", PROFILE)
        assert "days later" not in prompt.text
        assert "Visit 1:" in prompt.text

    def test_consecutive_gaps(self, catalog):
        sample = sample_of("p6", [(["I10"], 0), (["I10"], 7), (["I10"], 21)])
        lines = build_prompt_v2(sample, catalog, "x", PROFILE).text.splitlines()
        assert lines.count("7 days later") == 1
        assert lines.count("14 days later") == 1

    def test_over_length(self, catalog, diabetic_sample):
        tight = OracleProfile(context_limit=10)
        with pytest.raises(OverLength) as err:
            build_prompt_v2(diabetic_sample, catalog, "x", tight)
        assert err.value.limit == 10
        assert err.value.estimate > 10

    def test_instance_invariants_enforced(self):
        with pytest.raises(ValueError):
            PromptInstance("no tag here", STYLE_V1, 5, "p", 0)


class TestTopKDistribution:
    def test_valid(self):
        TopKDistribution((("Yes", 0.6), ("No", 0.3), ("the", 0.1)))

    def test_probability_range(self):
        with pytest.raises(ValueError):
            TopKDistribution((("Yes", 1.2),))
        with pytest.raises(ValueError):
            TopKDistribution((("Yes", -0.1),))

    def test_sum_bound(self):
        with pytest.raises(ValueError):
            TopKDistribution((("Yes", 0.7), ("No", 0.7)))

    def test_sorted_descending_required(self):
        with pytest.raises(ValueError):
            TopKDistribution((("Yes", 0.1), ("No", 0.5)))

    def test_ties_allowed(self):
        TopKDistribution((("Yes", 0.4), ("No", 0.4)))


class TestExtract:
    def test_documented_example(self):
        dist = TopKDistribution((("Yes", 0.6), ("No", 0.2), ("yes", 0.1),
                                 ("the", 0.05)))
        out = extract_yes_no(dist)
        assert out.s_yes == pytest.approx(0.7, abs=1e-15)
        assert out.s_no == pytest.approx(0.2, abs=1e-15)
        assert out.p_yes == pytest.approx(0.6224593312018546, abs=1e-12)
        assert not out.indeterminate

    def test_single_no_token(self):
        out = extract_yes_no(TopKDistribution((("no", 1.0),)))
        assert out.p_yes == pytest.approx(0.2689414213699951, abs=1e-12)

    def test_no_variants_indeterminate(self):
        out = extract_yes_no(TopKDistribution((("maybe", 0.5), ("the", 0.2))))
        assert out.indeterminate
        assert out.p_yes == 0.5

    def test_trim_and_case_matching(self):
        dist = TopKDistribution(((" Yes ", 0.4), ("YES", 0.3), ("\tno\n", 0.2)))
        out = extract_yes_no(dist)
        assert out.s_yes == pytest.approx(0.7, abs=1e-15)
        assert out.s_no == pytest.approx(0.2, abs=1e-15)

    def test_subword_fragments_excluded(self):
        out = extract_yes_no(TopKDistribution((("Ye", 0.6), ("N", 0.3))))
        assert out.indeterminate

    def test_custom_variant_sets(self):
        dist = TopKDistribution((("High", 0.8), ("Low", 0.1)))
        out = extract_yes_no(dist, yes_variants=("high",),
                             no_variants=("low",))
        assert out.p_yes == pytest.approx(1 / (1 + math.exp(-0.7)), abs=1e-12)

    def test_monotone_in_s_yes(self):
        lo = extract_yes_no(TopKDistribution((("No", 0.2), ("Yes", 0.1))))
        hi = extract_yes_no(TopKDistribution((("Yes", 0.6), ("No", 0.2))))
        assert hi.p_yes > lo.p_yes

    @given(st.lists(
        st.tuples(st.sampled_from(["Yes", "no", "YES", "No ", "maybe", "42"]),
                  st.floats(0.0, 1.0)),
        max_size=8))
    def test_invariants(self, raw):
        total = sum(p for _, p in raw)
        if total > 1.0:
            raw = [(t, p / total) for t, p in raw]
        raw.sort(key=lambda tp: -tp[1])
        out = extract_yes_no(TopKDistribution(tuple(raw)))
        assert out.p_yes + out.p_no == 1.0
        lo = 1 / (1 + math.e)
        assert lo - 1e-12 <= out.p_yes <= 1 - lo + 1e-12
        assert out.indeterminate == (out.s_yes == 0.0 and out.s_no == 0.0)


class RulesOracle:
    """In-process oracle that runs the mock scoring rules directly."""

    def __init__(self, rules):
        self.rules = rules

    def topk(self, request_id, prompt, k):
        reply = respond(self.rules, {"id": request_id, "prompt": prompt,
                                     "k": k})
        return TopKDistribution(tuple((e["token"], e["prob"])
                                      for e in reply["topk"]))


class TestMockRules:
    def test_keyword_scoring_counts_occurrences(self):
        rules = MockRules(keywords={"opioid": 0.25}, bias=-0.1)
        assert score_prompt(rules, "Opioid and opioid") == pytest.approx(0.4)
        assert score_prompt(rules, "nothing") == pytest.approx(-0.1)

    def test_planted_logit_overrides_keywords(self):
        rules = MockRules(keywords={"x": 9.0}, planted={"p1": 0.3})
        reply = respond(rules, {"id": "p1#yn", "prompt": "x x x", "k": 20})
        dist = TopKDistribution(tuple((e["token"], e["prob"])
                                      for e in reply["topk"]))
        out = extract_yes_no(dist)
        assert out.p_yes == pytest.approx(1 / (1 + math.exp(-0.3)), abs=1e-12)

    @pytest.mark.parametrize("logit", [-1.0, -0.5, 0.0, 0.3, 1.0])
    def test_extraction_recovers_sigmoid_of_logit(self, logit):
        rules = MockRules(planted={"p": logit})
        oracle = RulesOracle(rules)
        out = extract_yes_no(oracle.topk("p", "whatever", 20))
        assert out.p_yes == pytest.approx(1 / (1 + math.exp(-logit)),
                                          abs=1e-12)

    def test_logit_clipped_to_unit_interval(self):
        rules = MockRules(planted={"p": 5.0})
        out = extract_yes_no(RulesOracle(rules).topk("p", "x", 20))
        assert out.p_yes == pytest.approx(1 / (1 + math.exp(-1.0)), abs=1e-12)

    def test_highlow_detection_and_adherence_flag(self, catalog,
                                                  diabetic_sample):
        hl_prompt = build_prompt_v1(diabetic_sample, catalog, "x",
                                    instruction="highlow").text
        adherent = respond(MockRules(bias=0.4), {"id": "p", "prompt": hl_prompt,
                                                 "k": 20})
        tokens = {e["token"] for e in adherent["topk"]}
        assert tokens == {"High", "Low"}
        stubborn = respond(MockRules(bias=0.4, adhere_highlow=False),
                           {"id": "p", "prompt": hl_prompt, "k": 20})
        assert {e["token"] for e in stubborn["topk"]} == {"Yes", "No"}

    def test_inversion_is_deterministic_per_patient(self, catalog,
                                                    diabetic_sample):
        rules = MockRules(bias=0.4, inversion_rate=0.5, inversion_seed=1)
        hl = build_prompt_v1(diabetic_sample, catalog, "x",
                             instruction="highlow").text
        a = respond(rules, {"id": "px#hl", "prompt": hl, "k": 20})
        b = respond(rules, {"id": "px#other", "prompt": hl, "k": 20})
        assert a["topk"] == b["topk"]

    def test_rules_file_round_trip(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"keywords": {"a": 1.0}, "bias": -0.2,
                                    "inversion_rate": 0.1}))
        rules = load_rules(str(path))
        assert rules.keywords == {"a": 1.0}
        assert rules.bias == -0.2
        assert not rules.planted

    def test_unknown_rule_keys_rejected(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"keyword_weights": {}}))
        with pytest.raises(ValueError, match="keyword_weights"):
            load_rules(str(path))


def separable_cohort(n_per_class=20):
    """Positives carry the opioid-dependence code; negatives never do."""
    samples = []
    for i in range(n_per_class):
        samples.append(sample_of(f"pos{i:03d}",
                                 [(["F11.20", "I10"], 0), (["F11.20"], 30)],
                                 label=1))
        samples.append(sample_of(f"neg{i:03d}",
                                 [(["J45.909"], 0), (["I10"], 30)], label=0))
    return samples


SEPARATING_RULES = MockRules(keywords={"dependence": 0.8}, bias=-0.4)


class TestRunInference:
    def test_mock_separates_cohort(self, catalog):
        samples = separable_cohort()
        results = run_inference(samples, catalog, condition_phrase("OUD"),
                                STYLE_V1, RulesOracle(SEPARATING_RULES),
                                PROFILE)
        preds = to_prediction_set(results, model="llm-mock")
        assert roc_auc(preds) >= 0.95
        assert all(r.error is None for r in results)

    def test_empty_topk_marks_indeterminate(self, catalog, diabetic_sample):
        oracle = InProcessOracle(lambda prompt, k: [])
        results = run_inference([diabetic_sample], catalog, "x", STYLE_V1,
                                oracle, PROFILE)
        assert results[0].indeterminate
        assert results[0].p_yes == 0.5
        assert results[0].error is None

    def test_parallel_matches_serial(self, catalog):
        samples = separable_cohort(10)
        oracle = RulesOracle(SEPARATING_RULES)
        serial = run_inference(samples, catalog, "x", STYLE_V1, oracle,
                               OracleProfile(parallelism=1))
        parallel = run_inference(samples, catalog, "x", STYLE_V1, oracle,
                                 OracleProfile(parallelism=4))
        assert serial == parallel

    def test_per_sample_oracle_error_recorded(self, catalog):
        samples = separable_cohort(3)
        broken_id = samples[2].patient_id

        class Flaky(RulesOracle):
            def topk(self, request_id, prompt, k):
                if request_id == broken_id:
                    raise OracleError("boom")
                return super().topk(request_id, prompt, k)

        results = run_inference(samples, catalog, "x", STYLE_V1,
                                Flaky(SEPARATING_RULES), PROFILE)
        by_id = {r.patient_id: r for r in results}
        assert by_id[broken_id].error is not None
        assert by_id[broken_id].p_yes == 0.5
        assert sum(r.error is not None for r in results) == 1

    def test_unreachable_is_fatal(self, catalog, diabetic_sample):
        class Dead:
            def topk(self, request_id, prompt, k):
                raise OracleUnreachable("nobody home")

        with pytest.raises(OracleUnreachable):
            run_inference([diabetic_sample], catalog, "x", STYLE_V1, Dead(),
                          PROFILE)

    def test_missing_description_recorded_not_fatal(self, catalog):
        stranger = sample_of("odd", [(["C44.101"], 0)], label=0)
        samples = [stranger] + separable_cohort(2)
        results = run_inference(samples, catalog, "x", STYLE_V1,
                                RulesOracle(SEPARATING_RULES), PROFILE)
        assert results[0].error is not None
        assert "CodeWithoutDescription" in results[0].error
        assert all(r.error is None for r in results[1:])

    def test_oversized_topk_rejected(self, catalog, diabetic_sample):
        oracle = InProcessOracle(
            lambda prompt, k: [(f"t{i}", 0.01) for i in range(25)])
        results = run_inference([diabetic_sample], catalog, "x", STYLE_V1,
                                oracle, PROFILE)
        assert "OracleError" in results[0].error


class TestInstructionSwapProbe:
    def test_consistent_oracle_never_inverts(self, catalog):
        samples = separable_cohort(5)
        report = probe_instruction_swap(samples, catalog, "x", STYLE_V1,
                                        RulesOracle(SEPARATING_RULES), PROFILE)
        assert report.adherence_rate == 1.0
        assert report.inversion_rate == 0.0

    def test_instruction_ignoring_oracle_has_zero_adherence(self, catalog):
        rules = MockRules(keywords={"dependence": 0.8}, bias=-0.4,
                          adhere_highlow=False)
        report = probe_instruction_swap(separable_cohort(5), catalog, "x",
                                        STYLE_V1, RulesOracle(rules), PROFILE)
        assert report.adherence_rate == 0.0
        assert report.inversion_rate == 0.0

    def test_planted_inversion_rate_recovered(self, catalog):
        rules = MockRules(bias=0.4, inversion_rate=0.35, inversion_seed=7)
        samples = [sample_of(f"pt{i:04d}", [(["I10"], 0)]) for i in range(1000)]
        report = probe_instruction_swap(samples, catalog, "x", STYLE_V1,
                                        RulesOracle(rules), PROFILE)
        assert report.adherence_rate == 1.0
        assert abs(report.inversion_rate - 0.35) <= 0.03

    def test_rows_flag_individual_inversions(self, catalog):
        rules = MockRules(bias=0.4, inversion_rate=0.35, inversion_seed=7)
        samples = [sample_of(f"pt{i:04d}", [(["I10"], 0)]) for i in range(50)]
        report = probe_instruction_swap(samples, catalog, "x", STYLE_V1,
                                        RulesOracle(rules), PROFILE)
        for row in report.rows:
            assert row.inverted == ((row.p_yes > 0.5) != (row.p_high > 0.5))


class TestInjectionProbe:
    def test_risk_keyword_raises_probability(self, catalog):
        rules = MockRules(keywords={"buprenorphine": 0.5}, bias=-0.2)
        samples = separable_cohort(3)
        report = probe_risk_factor_injection(
            samples, [mk_code("Z51.81")], catalog, "x", STYLE_V1,
            RulesOracle(rules), PROFILE)
        assert all(r.delta > 0 for r in report.rows)
        assert report.mean_delta > 0

    def test_neutral_codes_leave_probability_unchanged(self, catalog):
        rules = MockRules(keywords={"buprenorphine": 0.5}, bias=-0.2)
        report = probe_risk_factor_injection(
            separable_cohort(3), [mk_code("E11.9")], catalog, "x", STYLE_V1,
            RulesOracle(rules), PROFILE)
        assert all(r.delta == 0.0 for r in report.rows)

    def test_delta_fixture_plus_five_points(self, catalog):
        bias = math.log(0.45 / 0.55)
        rules = MockRules(keywords={"buprenorphine": -bias}, bias=bias)
        sample = sample_of("fx", [(["I10"], 0), (["J45.909"], 30)])
        report = probe_risk_factor_injection(
            [sample], [mk_code("Z51.81")], catalog, "x", STYLE_V1,
            RulesOracle(rules), PROFILE)
        row = report.rows[0]
        assert row.p_before == pytest.approx(0.45, abs=1e-12)
        assert row.p_after == pytest.approx(0.50, abs=1e-12)
        assert row.delta == pytest.approx(0.05, abs=1e-12)

    def test_inject_codes_dedups_existing(self, catalog):
        sample = sample_of("d", [(["I10"], 0), (["E11.9"], 7)])
        widened = inject_codes(sample, [mk_code("E11.9"), mk_code("I10")])
        assert [c.normalized for c in widened.input_visits[-1].codes] == \
            ["E11.9", "I10"]
        assert widened.input_visits[0] == sample.input_visits[0]

    def test_undescribed_injection_recorded_as_error(self, catalog):
        report = probe_risk_factor_injection(
            separable_cohort(2), [mk_code("C44.101")], catalog, "x", STYLE_V1,
            RulesOracle(SEPARATING_RULES), PROFILE)
        assert all(r.error is not None for r in report.rows)
        assert report.mean_delta == 0.0


class TestExport:
    def cohort(self):
        samples = [
            sample_of("a", [(["E11.9"], 0), (["I10"], 10)], label=1),
            sample_of("b", [(["J45.909"], 0)], label=0),
            sample_of("c", [(["F11.20"], 0)], label=1),
        ]
        return Cohort(task="OUD", samples=samples)

    def test_three_lines_with_mapped_labels(self, catalog, tmp_path):
        path = tmp_path / "ft.jsonl"
        report = export_finetune_dataset(self.cohort(), catalog, STYLE_V1,
                                         str(path))
        assert report.n_written == 3
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert [l["response"] for l in lines] == \
            ["Yes</Diagnosis>", "No</Diagnosis>", "Yes</Diagnosis>"]
        assert all(l["prompt"].endswith(OPEN_TAG) for l in lines)
        assert set(lines[0]) == {"prompt", "response"}

    def test_byte_stable(self, catalog, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_finetune_dataset(self.cohort(), catalog, STYLE_V1, str(p1))
        export_finetune_dataset(self.cohort(), catalog, STYLE_V1, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_overlength_skipped_and_reported(self, catalog, tmp_path):
        path = tmp_path / "ft.jsonl"
        tight = OracleProfile(context_limit=60)
        report = export_finetune_dataset(self.cohort(), catalog, STYLE_V2,
                                         str(path), profile=tight)
        assert report.n_written < 3
        assert report.skipped
        assert all("OverLength" in reason for _, reason in report.skipped)

    def test_strict_mode_raises_with_sample_id(self, catalog, tmp_path):
        path = tmp_path / "ft.jsonl"
        tight = OracleProfile(context_limit=60)
        with pytest.raises(OverLength, match="sample "):
            export_finetune_dataset(self.cohort(), catalog, STYLE_V2,
                                    str(path), profile=tight, strict=True)

    def test_missing_description_skipped(self, catalog, tmp_path):
        cohort = Cohort(task="OUD", samples=[
            sample_of("ok", [(["I10"], 0)], label=0),
            sample_of("bad", [(["C44.101"], 0)], label=1),
        ])
        report = export_finetune_dataset(cohort, catalog, STYLE_V1,
                                         str(tmp_path / "ft.jsonl"))
        assert report.n_written == 1
        assert report.skipped[0][0] == "bad"


def rules_oracle_reply(rules, handler_body):
    request = json.loads(handler_body)
    return respond(rules, request)


class TestHttpOracle:
    @pytest.fixture
    def server(self):
        rules = SEPARATING_RULES

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                if self.path != "/v1/topk":
                    self.send_response(404)
                    self.end_headers()
                    return
                reply = rules_oracle_reply(rules, body)
                data = json.dumps(reply).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        yield f"http://127.0.0.1:{httpd.server_address[1]}"
        httpd.shutdown()

    def test_round_trip(self, server, catalog, diabetic_sample):
        oracle = HttpOracle(server)
        prompt = build_prompt_v1(diabetic_sample, catalog, "x")
        dist = oracle.topk("p1", prompt.text, 20)
        out = extract_yes_no(dist)
        assert not out.indeterminate

    def test_inference_over_http(self, server, catalog):
        samples = separable_cohort(5)
        results = run_inference(samples, catalog, "x", STYLE_V1,
                                HttpOracle(server), PROFILE)
        preds = to_prediction_set(results)
        assert roc_auc(preds) >= 0.95

    def test_unreachable(self):
        oracle = HttpOracle("http://127.0.0.1:9", timeout=0.5, retries=0)
        with pytest.raises(OracleUnreachable):
            oracle.topk("p", "text", 20)

    def test_id_mismatch_is_oracle_error(self, catalog):
        class EchoWrongId:
            def topk(self, request_id, prompt, k):
                raise OracleError("wrong id")

        from ehr_riskbench.llm.oracle import _parse_response
        body = json.dumps({"id": "other", "topk": []})
        with pytest.raises(OracleError, match="id"):
            _parse_response(body, "mine")

    def test_malformed_body_is_oracle_error(self):
        from ehr_riskbench.llm.oracle import _parse_response
        with pytest.raises(OracleError):
            _parse_response("not json", "p")
        with pytest.raises(OracleError):
            _parse_response(json.dumps({"id": "p", "topk": [{"tok": "x"}]}),
                            "p")


class TestMockProcessOracle:
    @pytest.fixture
    def rules_path(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"keywords": {"dependence": 0.8},
                                    "bias": -0.4}))
        return str(path)

    def argv(self, rules_path):
        return [sys.executable, "-m", "ehr_riskbench.llm.mock_oracle",
                rules_path]

    def test_subprocess_round_trip(self, rules_path, catalog,
                                   diabetic_sample):
        prompt = build_prompt_v1(diabetic_sample, catalog, "x")
        with MockProcessOracle(self.argv(rules_path)) as oracle:
            dist = oracle.topk("p1", prompt.text, 20)
            out = extract_yes_no(dist)
            assert out.p_yes == pytest.approx(1 / (1 + math.exp(0.4)),
                                              abs=1e-12)

    def test_inference_through_subprocess(self, rules_path, catalog):
        samples = separable_cohort(5)
        with MockProcessOracle(self.argv(rules_path)) as oracle:
            results = run_inference(samples, catalog, "x", STYLE_V1, oracle,
                                    PROFILE)
        assert roc_auc(to_prediction_set(results)) >= 0.95
        in_process = run_inference(samples, catalog, "x", STYLE_V1,
                                   RulesOracle(SEPARATING_RULES), PROFILE)
        np.testing.assert_allclose([r.p_yes for r in results],
                                   [r.p_yes for r in in_process], atol=1e-12)

    def test_dead_process_is_unreachable(self, rules_path):
        oracle = MockProcessOracle(self.argv(rules_path))
        oracle.close()
        with pytest.raises(OracleUnreachable):
            oracle.topk("p", "text", 20)
