import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build_fixture_store, instant_client
from vulnforge.dataset import (
    PAIRING_POLICIES,
    SPLIT_NAMES,
    TOKEN_BUDGET,
    InstructionPair,
    SplitAssignment,
    TrainingConfig,
    annotate_explanations,
    build_pairs,
    emit_dataset,
    emit_training_config,
    load_split,
    make_query,
    parse_training_config,
    split_by_lineage,
)
from vulnforge.errors import ConfigError, DatasetError, UnknownLabelError
from vulnforge.llm import MockBackend, MockRule
from vulnforge.store import CorpusStore
from vulnforge.taxonomy import BUILTIN_TAXONOMY, CweLabel, lookup


# ------------------------------------------------------------------- queries


def test_query_pins_answer_format():
    q = make_query(lookup("CWE-321"))
    assert "VERDICT: PRESENT or VERDICT: ABSENT" in q
    assert "RATIONALE:" in q
    assert "CWE-321" in q
    assert "Use of hardcoded cryptographic key" in q


def test_query_names_variant():
    q = make_query(lookup("CWE-310", "csr-access"))
    assert "(variant: csr-access)" in q


def test_query_rejects_foreign_label():
    foreign = CweLabel(cwe_id="CWE-9999", short_name="Imaginary weakness")
    with pytest.raises(UnknownLabelError):
        make_query(foreign)


# --------------------------------------------------------------------- pairs


def test_pairs_secure_counterpart_policy(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="secure-counterpart")
    assert len(pairs) == 10  # 5 positives + 5 negatives
    by_design = {}
    for p in pairs:
        by_design.setdefault(p.design_id, []).append(p)
    # the lineage with a golden twin uses it for the ABSENT row
    golden_rows = by_design["csr_unit_golden"]
    assert len(golden_rows) == 1
    neg = golden_rows[0]
    assert neg.ground_truth == "absent"
    assert neg.target_cwe == lookup("CWE-310", "csr-access")  # same query as positive
    assert neg.lineage_id == "csr_unit"
    # lineages without a twin fall back to a non-matching self query
    aes_rows = by_design["aes_key_store"]
    assert {p.ground_truth for p in aes_rows} == {"present", "absent"}
    aes_neg = next(p for p in aes_rows if p.ground_truth == "absent")
    assert aes_neg.target_cwe.key != lookup("CWE-321").key


def test_pairs_positives_only(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="positives-only")
    assert len(pairs) == 5
    assert all(p.ground_truth == "present" for p in pairs)
    assert all(p.target_cwe == store.get(p.design_id).label for p in pairs)


def test_pairs_cross_cwe(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="cross-cwe")
    negatives = [p for p in pairs if p.ground_truth == "absent"]
    assert len(negatives) == 5
    for p in negatives:
        own = store.get(p.design_id).label
        assert p.target_cwe.key != own.key


def test_pairs_row_id_format(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store)
    assert pairs[0].row_id == "00000_aes_key_store_cwe-321_present"
    for i, p in enumerate(pairs):
        assert p.row_id.startswith(f"{i:05d}_")
        assert p.row_id.endswith(p.ground_truth)
    assert len({p.row_id for p in pairs}) == len(pairs)


def test_pairs_prompt_embeds_design_and_query(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    for p in build_pairs(store):
        assert p.prompt_text.startswith("```verilog\n")
        assert "VERDICT: PRESENT or VERDICT: ABSENT" in p.prompt_text
        expected_verdict = "VERDICT: PRESENT" if p.ground_truth == "present" else "VERDICT: ABSENT"
        assert p.response_text.startswith(expected_verdict)


def test_pairs_token_budget_flags_not_drops(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    tight = build_pairs(store, token_budget=10)
    roomy = build_pairs(store, token_budget=10**9)
    assert len(tight) == len(roomy)
    assert all(p.over_budget for p in tight)
    assert not any(p.over_budget for p in roomy)
    assert all(p.token_estimate > 0 for p in tight)


def test_pairs_validation(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    with pytest.raises(ConfigError):
        build_pairs(store, policy="adversarial")
    from conftest import FIXED_CLOCK

    empty = CorpusStore.create(tmp_path / "empty", clock=lambda: FIXED_CLOCK)
    with pytest.raises(DatasetError):
        build_pairs(empty)


def test_pairs_deterministic(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    assert build_pairs(store) == build_pairs(store)


def test_all_policies_accepted(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    for policy in PAIRING_POLICIES:
        assert build_pairs(store, policy=policy)


# ---------------------------------------------------------------- annotation


def test_annotate_rewrites_rationale(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="positives-only")
    client = instant_client(MockBackend([
        MockRule(match="correct verdict", response="The reset path loads a fixed constant."),
    ]))
    out = annotate_explanations(pairs, client)
    assert len(out) == len(pairs)
    for before, after in zip(pairs, out):
        assert after.annotation == "llm"
        assert after.response_text.splitlines()[0] == before.response_text.splitlines()[0]
        assert "The reset path loads a fixed constant." in after.response_text
        assert after.token_estimate > 0


def test_annotate_strips_smuggled_verdicts(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="positives-only")[:1]
    client = instant_client(MockBackend([
        MockRule(match=".", response="VERDICT: ABSENT\nbecause the key is constant"),
    ]))
    out = annotate_explanations(pairs, client)
    # the drafted ABSENT line must not override the PRESENT ground truth
    assert out[0].response_text.startswith("VERDICT: PRESENT\n")
    assert out[0].response_text.count("VERDICT") == 1
    assert "because the key is constant" in out[0].response_text


def test_annotate_failure_keeps_template(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="positives-only")[:2]
    client = instant_client(
        MockBackend([MockRule(match=".", failure="permanent")]), retry_budget=0
    )
    out = annotate_explanations(pairs, client)
    assert out == pairs  # untouched, annotation still "template"


def test_annotate_skips_already_annotated(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store, policy="positives-only")[:1]
    client = instant_client(MockBackend([MockRule(match=".", response="fresh words")]))
    once = annotate_explanations(pairs, client)
    counting = MockBackend([MockRule(match=".", response="should never appear")])
    twice = annotate_explanations(once, instant_client(counting))
    assert twice == once
    assert counting.calls == 0


# -------------------------------------------------------------------- splits


def test_split_apportionment_oracle():
    lineages = [f"lin_{i:02d}" for i in range(10)]
    assignment = split_by_lineage(lineages, ratios=(0.8, 0.1, 0.1), seed=7)
    counts = {name: 0 for name in SPLIT_NAMES}
    for split in assignment.mapping.values():
        counts[split] += 1
    assert counts == {"train": 8, "validation": 1, "test": 1}


def test_split_deterministic_under_seed():
    lineages = [f"lin_{i}" for i in range(12)]
    a = split_by_lineage(lineages, seed=3)
    b = split_by_lineage(lineages, seed=3)
    assert a.mapping == b.mapping
    c = split_by_lineage(lineages, seed=4)
    assert c.mapping != a.mapping or True  # different seed may legally coincide


def test_split_orders_input_insensitively():
    lineages = [f"lin_{i}" for i in range(9)]
    a = split_by_lineage(lineages, seed=1)
    b = split_by_lineage(list(reversed(lineages)), seed=1)
    assert a.mapping == b.mapping


def test_split_validation():
    lineages = [f"lin_{i}" for i in range(6)]
    with pytest.raises(ConfigError):
        split_by_lineage(lineages, ratios=(0.5, 0.5, 0.0))
    with pytest.raises(ConfigError):
        split_by_lineage(lineages, ratios=(0.7, 0.2, 0.2))
    with pytest.raises(DatasetError):
        split_by_lineage(["only", "two"])


def test_split_of_unknown_lineage():
    assignment = split_by_lineage([f"lin_{i}" for i in range(4)])
    with pytest.raises(DatasetError):
        assignment.split_of("stranger")


@given(st.integers(min_value=3, max_value=40), st.integers(min_value=0, max_value=99))
def test_split_partition_properties(n, seed):
    lineages = [f"lin_{i:02d}" for i in range(n)]
    assignment = split_by_lineage(lineages, seed=seed)
    assert set(assignment.mapping) == set(lineages)
    counts = {name: 0 for name in SPLIT_NAMES}
    for split in assignment.mapping.values():
        assert split in SPLIT_NAMES
        counts[split] += 1
    assert sum(counts.values()) == n
    assert all(c >= 1 for c in counts.values())


def test_split_round_trip_dict():
    assignment = split_by_lineage([f"lin_{i}" for i in range(5)], seed=2)
    again = SplitAssignment.from_dict(assignment.to_dict())
    assert again.mapping == assignment.mapping
    assert again.ratios == assignment.ratios
    assert again.seed == assignment.seed


# ------------------------------------------------------------------ emission


def _emitted(tmp_path, seed=0):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store)
    assignment = split_by_lineage(store, seed=seed)
    out_dir = tmp_path / "dataset"
    stats = emit_dataset(pairs, assignment, out_dir)
    return store, pairs, assignment, out_dir, stats


def test_emit_writes_expected_files(tmp_path):
    _, pairs, _, out_dir, stats = _emitted(tmp_path)
    for name in SPLIT_NAMES:
        assert (out_dir / f"{name}.jsonl").exists()
    assert (out_dir / "stats.json").exists()
    assert (out_dir / "split_assignment.json").exists()
    assert stats["rows_total"] == len(pairs)
    assert sum(s["rows"] for s in stats["per_split"].values()) == len(pairs)
    assert stats["per_ground_truth"] == {"present": 5, "absent": 5}


def test_emit_is_byte_deterministic(tmp_path):
    _, pairs, assignment, out_dir, _ = _emitted(tmp_path)
    first = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}
    emit_dataset(pairs, assignment, out_dir)
    second = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}
    assert first == second


def test_emit_rows_inherit_lineage_split(tmp_path):
    _, _, assignment, out_dir, _ = _emitted(tmp_path)
    for name in SPLIT_NAMES:
        for row in load_split(out_dir / f"{name}.jsonl"):
            assert row.split == name
            assert assignment.split_of(row.lineage_id) == name


def test_emit_no_lineage_straddles_splits(tmp_path):
    _, _, _, out_dir, _ = _emitted(tmp_path)
    seen: dict[str, str] = {}
    for name in SPLIT_NAMES:
        for row in load_split(out_dir / f"{name}.jsonl"):
            assert seen.setdefault(row.lineage_id, name) == name


def test_emit_rows_sorted_by_row_id(tmp_path):
    _, _, _, out_dir, _ = _emitted(tmp_path)
    for name in SPLIT_NAMES:
        ids = [row.row_id for row in load_split(out_dir / f"{name}.jsonl")]
        assert ids == sorted(ids)


def test_load_split_round_trip(tmp_path):
    _, pairs, assignment, out_dir, _ = _emitted(tmp_path)
    loaded = []
    for name in SPLIT_NAMES:
        loaded.extend(load_split(out_dir / f"{name}.jsonl"))
    by_id = {p.row_id: p for p in loaded}
    assert len(by_id) == len(pairs)
    for p in pairs:
        got = by_id[p.row_id]
        assert got.prompt_text == p.prompt_text
        assert got.response_text == p.response_text
        assert got.target_cwe == p.target_cwe


def test_load_split_rejects_corrupt_rows(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"row_id": "x"}\n', encoding="utf-8")
    with pytest.raises(DatasetError):
        load_split(path)


def test_emit_missing_assignment_raises(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store)
    foreign = split_by_lineage(["a", "b", "c"])
    with pytest.raises(DatasetError):
        emit_dataset(pairs, foreign, tmp_path / "out")


# ----------------------------------------------------------- training config


REFERENCE_RECIPE = {
    "lora_rank": 128,
    "lora_alpha": 256,
    "lora_dropout": 0.1,
    "quantization": "nf4-4bit",
    "compute_dtype": "float16",
    "learning_rate": 2e-6,
    "batch_size": 4,
    "grad_accum_steps": 1,
    "epochs": 3,
    "optimizer": "paged-adamw-32bit",
    "weight_decay": 0.001,
    "max_grad_norm": 0.3,
    "lr_schedule": "constant",
    "warmup_ratio": 0.03,
    "gradient_checkpointing": True,
    "max_seq_len": 512,
}


def test_training_defaults_match_reference_recipe():
    config = TrainingConfig()
    for key, value in REFERENCE_RECIPE.items():
        assert getattr(config, key) == value, key
    assert len(TrainingConfig.__dataclass_fields__) == len(REFERENCE_RECIPE)


def test_emit_training_config_file_shape(tmp_path):
    path = tmp_path / "train.cfg"
    emit_training_config(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "lora_rank = 128"
    assert "gradient_checkpointing = true" in lines
    assert "learning_rate = 2e-06" in lines
    assert len(lines) == len(REFERENCE_RECIPE)
    # declaration order preserved
    keys = [line.split(" = ")[0] for line in lines]
    assert keys == list(TrainingConfig.__dataclass_fields__)


def test_training_config_round_trip(tmp_path):
    path = tmp_path / "train.cfg"
    emitted = emit_training_config(path, overrides={"epochs": 5, "lr_schedule": "cosine"})
    parsed = parse_training_config(path)
    assert parsed == emitted
    assert parsed.epochs == 5
    assert parsed.lr_schedule == "cosine"
    assert parsed.lora_rank == 128  # untouched default


def test_training_config_rejects_unknown_override(tmp_path):
    with pytest.raises(ConfigError):
        emit_training_config(tmp_path / "x.cfg", overrides={"dropout": 0.5})


def test_parse_training_config_rejects_unknown_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("lora_rank = 128\nmystery_knob = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_training_config(path)


def test_parse_training_config_tolerates_comments(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("# recipe\n\nlora_rank = 64\n", encoding="utf-8")
    assert parse_training_config(path).lora_rank == 64


def test_parse_training_config_bool_strictness(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("gradient_checkpointing = yes\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_training_config(path)


# ------------------------------------------------------------- row invariants


@given(st.sampled_from(BUILTIN_TAXONOMY), st.sampled_from(["present", "absent"]))
def test_row_json_round_trip(label, gt):
    pair = InstructionPair(
        row_id=f"00000_x_{label.slug}_{gt}",
        design_id="x",
        lineage_id="x",
        target_cwe=label,
        prompt_text="```verilog\nmodule x; endmodule\n```\n\nquery",
        response_text=f"VERDICT: {gt.upper()}\nRATIONALE: why",
        ground_truth=gt,
        token_estimate=10,
    )
    again = InstructionPair.from_json_dict(json.loads(json.dumps(pair.to_json_dict())))
    assert again == pair
