import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocrqa.corpus import (
    Dataset,
    DatasetError,
    OcrToken,
    Quad,
    Sample,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    load_dataset_with_report,
    nearest_token_index,
    parse_sample,
    write_dataset,
)
from ocrqa.norm import normalize
from ocrqa.textprep import compute_reading_order, generate_candidates


def make_record(sample_id="s1", width=100.0, height=100.0, **overrides):
    record = {
        "sample_id": sample_id,
        "image_width": width,
        "image_height": height,
        "question": "what does the sign say",
        "answers": ["stop"],
        "ocr": [{"text": "stop", "quad": [10, 10, 40, 10, 40, 30, 10, 30]}],
        "objects": [{"name": "sign", "attributes": ["red"], "quad": [5, 5, 50, 5, 50, 40, 5, 40]}],
    }
    record.update(overrides)
    return record


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


class TestQuad:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Quad(0, 0, 1, 0, 1, math.inf, 0, 1)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            Quad(-1, 0, 1, 0, 1, 1, 0, 1)

    def test_center_and_height(self):
        q = Quad(0, 0, 10, 0, 10, 20, 0, 20)
        assert q.center() == (5.0, 10.0)
        assert q.height() == 20.0


class TestLoader:
    def test_three_line_file_keeps_order(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [make_record(sample_id=f"s{i}") for i in range(3)])
        ds = load_dataset(path)
        assert [s.sample_id for s in ds.samples] == ["s0", "s1", "s2"]

    def test_zero_width_names_field(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [make_record(width=0)])
        with pytest.raises(DatasetError, match="image_width"):
            load_dataset(path)

    def test_out_of_bounds_quad_clamped_with_warning(self, tmp_path):
        # x1 beyond the image: clamped to image_width, counted as a warning
        record = make_record()
        record["ocr"][0]["quad"] = [105, 10, 110, 10, 110, 30, 105, 30]
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [record])
        ds, report = load_dataset_with_report(path)
        assert ds.samples[0].ocr_tokens[0].quad.x1 == 100.0
        assert report.warnings == 1

    def test_duplicate_sample_id_is_error(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [make_record(), make_record()])
        with pytest.raises(DatasetError, match="duplicate"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="not found"):
            load_dataset(tmp_path / "nope.jsonl")

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        with open(path, "w") as fh:
            fh.write(json.dumps(make_record()) + "\n")
            fh.write("{not json\n")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path)

    def test_lenient_counts_reconcile(self, tmp_path):
        path = tmp_path / "d.jsonl"
        records = [make_record(sample_id="a"), make_record(sample_id="b", width=-3),
                   make_record(sample_id="a")]  # duplicate
        write_jsonl(path, records)
        ds, report = load_dataset_with_report(path, strict=False)
        assert report.loaded + report.rejected == report.lines == 3
        assert report.loaded == len(ds.samples) == 1
        assert report.rejected == 2

    def test_empty_answers_allowed_for_test_split(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [make_record(answers=[])])
        with pytest.raises(DatasetError, match="answers"):
            load_dataset(path, split="train")
        ds = load_dataset(path, split="test")
        assert ds.samples[0].gold_answers == ()

    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(num_samples=12, vocab_size=20, seed=5))
        path = tmp_path / "rt.jsonl"
        write_dataset(ds, path)
        reloaded = load_dataset(path)
        assert reloaded.samples == ds.samples

    def test_dictionary_round_trip(self, tmp_path):
        record = make_record(dictionary=["coca cola", "stop"])
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [record])
        ds = load_dataset(path)
        assert ds.samples[0].dictionary == ("coca cola", "stop")
        out = tmp_path / "o.jsonl"
        write_dataset(ds, out)
        assert load_dataset(out).samples == ds.samples


class TestSynthetic:
    def test_determinism(self):
        cfg = SyntheticConfig(num_samples=20, vocab_size=25, seed=7)
        assert generate_synthetic(cfg) == generate_synthetic(cfg)

    def test_seed_changes_output(self):
        a = generate_synthetic(SyntheticConfig(num_samples=8, vocab_size=25, seed=1))
        b = generate_synthetic(SyntheticConfig(num_samples=8, vocab_size=25, seed=2))
        assert a != b

    def test_vocab_too_small(self):
        with pytest.raises(ValueError):
            SyntheticConfig(num_samples=5, vocab_size=9)

    def test_counts_and_reachability(self):
        ds = generate_synthetic(SyntheticConfig(num_samples=200, vocab_size=50, seed=7))
        assert len(ds) == 200
        for sample in ds.samples:
            assert 3 <= len(sample.ocr_tokens) <= 8
            assert 1 <= len(sample.objects) <= 4
            order = compute_reading_order(sample.ocr_tokens, sample.image_width, sample.image_height)
            texts = {normalize(c.text) for c in generate_candidates(sample, order, ())}
            assert normalize(sample.gold_answers[0]) in texts

    def test_nearest_center_rule(self):
        # one object at (100, 100); tokens centered at (110, 100) and (900, 900)
        near = OcrToken("near", Quad(100, 90, 120, 90, 120, 110, 100, 110))
        far = OcrToken("far", Quad(890, 890, 910, 890, 910, 910, 890, 910))
        assert nearest_token_index([near, far], (100.0, 100.0)) == 0
        assert nearest_token_index([far, near], (100.0, 100.0)) == 1

    def test_family_b_gold_matches_nearest_rule(self):
        ds = generate_synthetic(SyntheticConfig(num_samples=40, vocab_size=30, seed=3))
        for sample in ds.samples:
            if not sample.sample_id.startswith("b/"):
                continue
            name = sample.question.rsplit(" ", 1)[-1]
            target = next(o for o in sample.objects if o.name == name)
            idx = nearest_token_index(sample.ocr_tokens, target.quad.center())
            assert sample.ocr_tokens[idx].text == sample.gold_answers[0]

    def test_family_assignment_round_robin(self):
        ds = generate_synthetic(SyntheticConfig(num_samples=8, vocab_size=20, seed=0))
        assert [s.sample_id.split("/")[0] for s in ds.samples] == list("abcdabcd")


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=10**6))
def test_synthetic_ids_unique(num_samples, seed):
    ds = generate_synthetic(SyntheticConfig(num_samples=num_samples, vocab_size=15, seed=seed))
    ids = [s.sample_id for s in ds.samples]
    assert len(set(ids)) == len(ids)


def test_parse_sample_rejects_bool_dimensions():
    record = make_record(width=True)
    with pytest.raises(DatasetError, match="image_width"):
        parse_sample(record)
