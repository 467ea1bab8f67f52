import itertools
import json

import pytest
from hypothesis import given, strategies as st

from manicheck.inference import (
    NO_CONTEXT_SENTENCE,
    LLMTransportError,
    PromptTemplate,
    ScriptedLLMProvider,
    ScriptError,
    TemplateError,
    build_prompt,
    default_template,
    load_template,
    parse_verdict,
    prompt_digest,
    run_majority,
    run_single,
)
from manicheck.models import VerdictLabel


class TestParseVerdict:
    @pytest.mark.parametrize("raw,label", [
        ("The sources agree with the statement. True", VerdictLabel.TRUE),
        ("The claim is fabricated. **False.**", VerdictLabel.FALSE),
        ("I don't know whether this is accurate.", VerdictLabel.NON_CONCLUSIVE),
        ("TRUE", VerdictLabel.TRUE),
        ("false", VerdictLabel.FALSE),
        ("Verdict: 'False'", VerdictLabel.FALSE),
        ("It ends with True!!!", VerdictLabel.TRUE),
        ("`True`", VerdictLabel.TRUE),
        ("This is truthful", VerdictLabel.NON_CONCLUSIVE),
        ("", VerdictLabel.NON_CONCLUSIVE),
        ("12345", VerdictLabel.NON_CONCLUSIVE),
        ("maybe", VerdictLabel.NON_CONCLUSIVE),
    ])
    def test_examples(self, raw, label):
        assert parse_verdict(raw).label is label

    def test_explanation_excludes_decision_token(self):
        verdict = parse_verdict("The analysis goes here. True")
        assert verdict.explanation == "The analysis goes here"
        assert verdict.raw == "The analysis goes here. True"

    def test_non_conclusive_keeps_full_text(self):
        raw = "I don't know whether this is accurate."
        assert parse_verdict(raw).explanation == raw

    @pytest.mark.parametrize("suffix", [
        ".", "!", "?", "...", " ", "\n", "\t", "**", "*", "`", '"', "'", ":", ";", ",",
        ".**", '."', "!'", "?!", "\n\n", ".\n", "  \n ", "!!", "*.*", '".`',
    ])
    @pytest.mark.parametrize("token", ["True", "False"])
    def test_punctuation_suffixes(self, token, suffix):
        verdict = parse_verdict(f"Some reasoning first. {token}{suffix}")
        assert verdict.label is VerdictLabel(token.lower())

    @given(raw=st.text(max_size=200))
    def test_total_function(self, raw):
        assert parse_verdict(raw).label in set(VerdictLabel)

    @given(raw=st.text(max_size=200))
    def test_idempotent_reconstruction(self, raw):
        verdict = parse_verdict(raw)
        if verdict.label is not VerdictLabel.NON_CONCLUSIVE:
            token = "True" if verdict.label is VerdictLabel.TRUE else "False"
            again = parse_verdict(verdict.explanation + " " + token)
            assert again.label is verdict.label


class TestPromptTemplate:
    def test_default_template_valid(self):
        template = default_template()
        assert "{CONTEXT}" in template.system_text
        assert template.user_text.count("{CLAIM}") == 1

    def test_missing_context_placeholder_rejected(self):
        with pytest.raises(TemplateError):
            PromptTemplate(system_text="no placeholder", user_text="{CLAIM}")

    def test_missing_claim_placeholder_rejected(self):
        with pytest.raises(TemplateError):
            PromptTemplate(system_text="{CONTEXT}", user_text="no placeholder")

    def test_load_template_file(self, tmp_path):
        path = tmp_path / "template.txt"
        path.write_text("---SYSTEM---\nRules. {CONTEXT}\n---USER---\nClaim: {CLAIM}\n")
        template = load_template(path)
        assert template.system_text == "Rules. {CONTEXT}\n"
        assert template.user_text == "Claim: {CLAIM}"

    def test_load_template_missing_markers(self, tmp_path):
        path = tmp_path / "template.txt"
        path.write_text("{CONTEXT} {CLAIM}")
        with pytest.raises(TemplateError):
            load_template(path)


class TestBuildPrompt:
    def test_substitution(self):
        system_text, user_text = build_prompt("C", "K")
        assert "K" in system_text
        assert "C" in user_text
        assert "{CONTEXT}" not in system_text and "{CLAIM}" not in user_text

    def test_context_appears_before_rules_end(self):
        system_text, _ = build_prompt("C", "K")
        assert system_text.index("K") < system_text.index("single word")

    def test_empty_context_uses_no_context_sentence(self):
        system_text, _ = build_prompt("C", "")
        assert NO_CONTEXT_SENTENCE in system_text
        assert "{CONTEXT}" not in system_text

    def test_pure_function(self):
        assert build_prompt("C", "K") == build_prompt("C", "K")

    def test_empty_claim_rejected(self):
        with pytest.raises(ValueError):
            build_prompt("  ", "K")


def scripted(responses, claim="C", context="K"):
    system_text, user_text = build_prompt(claim, context)
    return ScriptedLLMProvider({prompt_digest(system_text, user_text): responses})


class TestScriptedProvider:
    def test_sequence_per_key(self):
        provider = scripted(["one True", "two False", "three True"])
        system_text, user_text = build_prompt("C", "K")
        assert provider.complete(system_text, user_text, 0.1) == "one True"
        assert provider.complete(system_text, user_text, 0.1) == "two False"

    def test_unmatched_digest_is_error(self):
        provider = scripted(["x"])
        with pytest.raises(ScriptError):
            provider.complete("other system", "other user", 0.1)

    def test_exhausted_sequence_is_error(self):
        provider = scripted(["only one"])
        system_text, user_text = build_prompt("C", "K")
        provider.complete(system_text, user_text, 0.1)
        with pytest.raises(ScriptError):
            provider.complete(system_text, user_text, 0.1)

    def test_loads_from_file(self, tmp_path):
        system_text, user_text = build_prompt("C", "K")
        path = tmp_path / "script.json"
        path.write_text(json.dumps({prompt_digest(system_text, user_text): ["resp True"]}))
        provider = ScriptedLLMProvider(path)
        assert provider.complete(system_text, user_text, 0.1) == "resp True"


class FlakyProvider:
    """Raises transport errors for the first `failures` calls, then answers."""

    def __init__(self, failures, answer="recovered True"):
        self.failures = failures
        self.answer = answer
        self.calls = 0

    def complete(self, system_text, user_text, temperature):
        self.calls += 1
        if self.calls <= self.failures:
            raise LLMTransportError("connection reset")
        return self.answer


class TestRunSingle:
    def test_parses_scripted_response(self):
        verdict = run_single("C", "K", None, scripted(["analysis… True"]))
        assert verdict.label is VerdictLabel.TRUE

    def test_non_conclusive_passthrough(self):
        verdict = run_single("C", "K", None, scripted(["maybe"]))
        assert verdict.label is VerdictLabel.NON_CONCLUSIVE

    def test_transport_error_retried_once(self):
        provider = FlakyProvider(failures=1)
        verdict = run_single("C", "K", None, provider)
        assert verdict.label is VerdictLabel.TRUE
        assert provider.calls == 2

    def test_transport_error_twice_propagates(self):
        provider = FlakyProvider(failures=2)
        with pytest.raises(LLMTransportError):
            run_single("C", "K", None, provider)


class TestRunMajority:
    def run_with(self, responses):
        return run_majority("C", "K", None, scripted(responses))

    def test_two_of_three_true(self):
        prediction = self.run_with(["a True", "b True", "c False"])
        assert prediction.majority is VerdictLabel.TRUE

    def test_all_three_differ(self):
        prediction = self.run_with(["a True", "b False", "maybe"])
        assert prediction.majority is VerdictLabel.NON_CONCLUSIVE

    def test_non_conclusive_majority(self):
        prediction = self.run_with(["maybe", "unclear", "c True"])
        assert prediction.majority is VerdictLabel.NON_CONCLUSIVE

    def test_exactly_three_provider_calls(self):
        provider = scripted(["a True"] * 3)
        run_majority("C", "K", None, provider)
        assert provider.calls == 3

    def test_runs_stored_in_order(self):
        prediction = self.run_with(["first True", "second False", "third True"])
        assert [v.raw for v in prediction.runs] == ["first True", "second False", "third True"]

    def test_permutation_invariant_over_all_triples(self):
        answers = {"T": "x True", "F": "x False", "N": "no idea"}
        for triple in itertools.product("TFN", repeat=3):
            baseline = self.run_with([answers[t] for t in triple]).majority
            for perm in itertools.permutations(triple):
                assert self.run_with([answers[t] for t in perm]).majority is baseline
