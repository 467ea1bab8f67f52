import json
from datetime import date

import pytest
from hypothesis import given, strategies as st

from manicheck.models import (
    ClaimKind,
    ClaimRecord,
    ManipulationSpan,
    Veracity,
    VerdictLabel,
    dump_claims,
    load_claims,
    majority_label,
    validate_claim_record,
)


def make_original(**overrides) -> ClaimRecord:
    base = dict(
        id="bbc-2024-07-26-0001",
        headline="At least 150 people have been killed in Bangladesh protests",
        kind=ClaimKind.ORIGINAL,
        label=Veracity.TRUE,
        provider="BBC",
        region="UK",
        published_date=date(2024, 7, 26),
    )
    base.update(overrides)
    return ClaimRecord(**base)


def make_altered(**overrides) -> ClaimRecord:
    base = dict(
        id="bbc-2024-07-26-0001-alt",
        headline="At least 1500 people have been killed in Bangladesh protests",
        kind=ClaimKind.CONTEXT_ALTERED,
        label=Veracity.FALSE,
        provider="BBC",
        region="UK",
        published_date=date(2024, 7, 26),
        origin_id="bbc-2024-07-26-0001",
        manipulation=ManipulationSpan(original="150 people", replacement="1500 people"),
    )
    base.update(overrides)
    return ClaimRecord(**base)


class TestValidation:
    def test_well_formed_original(self):
        assert validate_claim_record(make_original()) == []

    def test_well_formed_altered(self):
        assert validate_claim_record(make_altered()) == []

    def test_context_altered_requires_manipulation(self):
        record = make_altered(manipulation=None)
        violations = validate_claim_record(record)
        assert violations == ["manipulation: required for context_altered"]

    def test_replacement_must_occur_in_headline(self):
        record = make_altered(
            manipulation=ManipulationSpan(original="150 people", replacement="2000 people"),
        )
        violations = validate_claim_record(record)
        assert any("replacement occurs in headline" in v for v in violations)

    def test_original_must_not_occur_in_headline(self):
        record = make_altered(
            headline="At least 150 people and 1500 others were hurt in Bangladesh protests",
            manipulation=ManipulationSpan(original="150 people", replacement="1500 others"),
        )
        violations = validate_claim_record(record)
        assert any("original must not occur" in v for v in violations)

    def test_label_must_match_kind(self):
        record = make_original(label=Veracity.FALSE)
        assert any(v.startswith("label:") for v in validate_claim_record(record))

    def test_blank_headline(self):
        record = make_original(headline="   ")
        assert any(v.startswith("headline:") for v in validate_claim_record(record))

    def test_identical_span_sides(self):
        record = make_altered(
            headline="At least 1500 People have been killed in Bangladesh protests",
            manipulation=ManipulationSpan(original="1500 people", replacement="1500 People"),
        )
        assert any("must differ" in v for v in validate_claim_record(record))


class TestSerialization:
    def test_round_trip_file(self, tmp_path):
        records = [make_original(), make_altered()]
        path = tmp_path / "claims.jsonl"
        dump_claims(records, path)
        assert load_claims(path) == records

    def test_jsonl_field_names(self, tmp_path):
        path = tmp_path / "claims.jsonl"
        dump_claims([make_altered()], path)
        row = json.loads(path.read_text().splitlines()[0])
        assert set(row) == {"id", "headline", "kind", "label", "provider", "region",
                            "published_date", "origin_id", "manipulation"}
        assert row["label"] == "false"
        assert row["manipulation"] == {"original": "150 people", "replacement": "1500 people"}

    def test_null_manipulation(self, tmp_path):
        path = tmp_path / "claims.jsonl"
        dump_claims([make_original()], path)
        row = json.loads(path.read_text().splitlines()[0])
        assert row["manipulation"] is None

    @given(
        headline=st.text(min_size=1).filter(lambda s: s.strip()),
        provider=st.sampled_from(["BBC", "Fox News", "Google News"]),
        region=st.sampled_from(["UK", "US", "Singapore"]),
        day=st.dates(min_value=date(2024, 7, 24), max_value=date(2024, 8, 12)),
    )
    def test_round_trip_property(self, headline, provider, region, day):
        record = ClaimRecord(
            id=f"{provider.lower()}-{day.isoformat()}-0000",
            headline=headline,
            kind=ClaimKind.ORIGINAL,
            label=Veracity.TRUE,
            provider=provider,
            region=region,
            published_date=day,
        )
        assert ClaimRecord.from_dict(json.loads(json.dumps(record.to_dict()))) == record


class TestMajorityLabel:
    @pytest.mark.parametrize("labels,expected", [
        (["true", "true", "false"], "true"),
        (["true", "false", "non_conclusive"], "non_conclusive"),
        (["non_conclusive", "non_conclusive", "true"], "non_conclusive"),
        (["false", "false", "false"], "false"),
    ])
    def test_examples(self, labels, expected):
        votes = [VerdictLabel(l) for l in labels]
        assert majority_label(votes) is VerdictLabel(expected)
