import hashlib
import json
import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from strategy_induct.datasets import (
    BadAlphabet,
    BadShift,
    BadWordLength,
    CipherInstance,
    DuplicateId,
    NotEnoughItems,
    SchemaError,
    build_cipher_tasks,
    load_tasks,
    read_word_corpus,
    rot_decode,
    rot_encode,
    sample_items,
    write_task_file,
)

from conftest import synthetic_task


def lookup_table_encode(word, k):
    """Second implementation: explicit 26-entry table, no modular arithmetic on ord()."""
    letters = string.ascii_lowercase
    table = dict(zip(letters, letters[k:] + letters[:k]))
    return "".join(table[c] for c in word)


def write_task(path, **overrides):
    doc = {
        "task": "Demo",
        "subtask": None,
        "short_phrase": "Demo Task",
        "answer_format": "a single word",
        "items": [{"id": f"i{i}", "question": f"q{i}", "gold": f"a{i}"} for i in range(25)],
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return doc


def test_load_one_file(tmp_path):
    write_task(tmp_path / "demo.json")
    [task] = load_tasks(tmp_path)
    assert len(task.items) == 25
    assert task.short_phrase == "Demo Task"


def test_missing_answer_format(tmp_path):
    doc = write_task(tmp_path / "a.json")
    del doc["answer_format"]
    (tmp_path / "a.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError) as info:
        load_tasks(tmp_path)
    assert info.value.field == "answer_format"
    assert "a.json" in str(info.value)


def test_first_bad_file_named(tmp_path):
    write_task(tmp_path / "a.json")
    (tmp_path / "b.json").write_text("{not json")
    with pytest.raises(SchemaError, match="b.json"):
        load_tasks(tmp_path)


def test_duplicate_item_ids(tmp_path):
    write_task(tmp_path / "a.json", items=[{"id": "x", "question": "1"}, {"id": "x", "question": "2"}])
    with pytest.raises(DuplicateId):
        load_tasks(tmp_path)


def test_empty_short_phrase_needs_optional_flag(tmp_path):
    write_task(tmp_path / "a.json", short_phrase="")
    with pytest.raises(SchemaError):
        load_tasks(tmp_path)
    write_task(tmp_path / "a.json", short_phrase="", short_phrase_optional=True)
    [task] = load_tasks(tmp_path)
    assert task.short_phrase == ""


def test_bbh_shaped_directory(tmp_path):
    for i in range(23):
        write_task(tmp_path / f"t{i:02d}.json", task=f"task {i}", subtask=f"subtask {i}")
    assert len(load_tasks(tmp_path)) == 23


def test_questions_pass_through_byte_exact(tmp_path):
    questions = ["  lead space", "tabs\tand\nnewlines\n", "ünïcödé ✓ ½", "(A) x\n(B) y"]
    items = [{"id": str(i), "question": q} for i, q in enumerate(questions)]
    write_task(tmp_path / "a.json", items=items)
    [task] = load_tasks(tmp_path)
    digest = lambda qs: hashlib.sha256("\x00".join(qs).encode()).hexdigest()
    assert digest([it.question for it in task.items]) == digest(questions)


def test_write_then_load_round_trip(tmp_path):
    task = synthetic_task("round")
    write_task_file(task, tmp_path)
    [loaded] = load_tasks(tmp_path)
    assert loaded == task


def test_sample_full_set():
    task = synthetic_task("t", m=10)
    assert set(sample_items(task, 10, seed=1)) == set(task.items)


def test_sample_deterministic():
    task = synthetic_task("t", m=100)
    assert sample_items(task, 25, seed=7) == sample_items(task, 25, seed=7)


def test_sample_seeds_differ():
    task = synthetic_task("t", m=100)
    a, b = sample_items(task, 25, seed=1), sample_items(task, 25, seed=2)
    assert len(set(a)) == 25
    assert a != b


def test_sample_ignores_file_order():
    task = synthetic_task("t", m=40)
    from dataclasses import replace

    shuffled = replace(task, items=tuple(reversed(task.items)))
    assert sample_items(task, 5, seed=3) == sample_items(shuffled, 5, seed=3)


@pytest.mark.parametrize("n", [0, 26])
def test_sample_bounds(n):
    with pytest.raises(NotEnoughItems):
        sample_items(synthetic_task("t", m=25), n, seed=0)


def test_rot3_example():
    assert rot_encode("choosed", 3) == "fkrrvhg"
    assert rot_decode("fkrrvhg", 3) == "choosed"


def test_wrap_around():
    assert rot_encode("abcz", 1) == "bcda"


def test_rot13_table():
    assert rot_decode("nopqrst", 13) == "abcdefg"
    assert lookup_table_encode("abcdefg", 13) == "nopqrst"


@pytest.mark.parametrize("word", ["Choosed", "choo sed", "chöosed", ""])
def test_bad_alphabet(word):
    with pytest.raises(BadAlphabet):
        rot_encode(word, 3)


@pytest.mark.parametrize("k", [0, 26, -1, 3.0, True])
def test_bad_shift(k):
    with pytest.raises(BadShift):
        rot_decode("abc", k)


words7 = st.text(alphabet=string.ascii_lowercase, min_size=7, max_size=7)


@given(words7, st.integers(1, 25))
def test_inverse_law(w, k):
    assert rot_decode(rot_encode(w, k), k) == w
    assert rot_encode(rot_decode(w, k), k) == w


@given(words7, st.integers(1, 25))
def test_group_inverse(w, k):
    encoded = rot_encode(w, k)
    assert (rot_encode(encoded, 26 - k) if k != 26 else encoded) == w


@given(words7)
def test_rot13_involution(w):
    assert rot_encode(rot_encode(w, 13), 13) == w


@given(words7, st.integers(1, 25))
def test_matches_lookup_table(w, k):
    assert rot_encode(w, k) == lookup_table_encode(w, k)


def test_cipher_instance():
    inst = CipherInstance("choosed", 3)
    assert inst.ciphertext == "fkrrvhg"


def test_build_all_shifts():
    words = read_word_corpus()[:25]
    tasks = build_cipher_tasks(words, range(1, 26))
    assert len(tasks) == 25
    assert all(len(t.items) == 25 for t in tasks)
    assert tasks[12].subtask == "Shift Cipher – ROT-13"
    assert {t.short_phrase for t in tasks} == {"Shift Cipher"}


def test_build_single_shift_golds():
    [task] = build_cipher_tasks(read_word_corpus(), [13])
    for item in task.items:
        assert item.gold == rot_decode(item.question, 13)


def test_build_spot_check_against_table():
    tasks = build_cipher_tasks(read_word_corpus(), range(1, 26))
    for k, task in zip(range(1, 26), tasks):
        for item in task.items:
            assert item.question == lookup_table_encode(item.gold, k)


def test_build_bad_length():
    with pytest.raises(BadWordLength):
        build_cipher_tasks(["short"], [1])


def test_default_corpus_has_choosed():
    words = read_word_corpus()
    assert "choosed" in words
    assert all(len(w) == 7 for w in words)
