from hypothesis import given, strategies as st

from mevsim.engine import run_scenario
from mevsim.eventlog import HEADER, EventLog, Record, read_log, replay, replay_file
from mevsim.scenario import load_scenario

from conftest import SCENARIO_DIR

json_scalars = st.one_of(st.integers(-10**9, 10**9), st.text(max_size=8), st.booleans(), st.none())


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.sampled_from(["BID", "BLOCK", "SUBMIT"]),
       st.text(alphabet="abcXYZ019", max_size=6), st.lists(st.integers(0, 10**12), max_size=5),
       st.dictionaries(st.text(alphabet="abc", min_size=1, max_size=4), json_scalars, max_size=4))
def test_record_line_round_trip(rnd, tick, typ, actor, ids, data):
    rec = Record(rnd, tick, typ, actor, tuple(ids), data)
    assert Record.from_line(rec.to_line()) == rec


def test_log_text_has_header_and_one_line_per_record(tmp_path):
    log = EventLog()
    log.append(0, 0, "SUBMIT", "u", [1], {"b": 2, "a": 1})
    log.append(0, 1, "BID", "B1")
    text = log.text()
    assert text.startswith(HEADER)
    assert text.splitlines()[-2] == '0\t0\tSUBMIT\tu\t1\t{"a":1,"b":2}'
    assert text.splitlines()[-1] == "0\t1\tBID\tB1\t-\t{}"
    log.write(tmp_path / "e.log")
    assert len(read_log(tmp_path / "e.log")) == 2
    assert len(log.of_type("BID")) == 1


def test_replay_detects_tampering(tmp_path):
    res = run_scenario(load_scenario(SCENARIO_DIR / "canonical_sandwich.toml"))
    path = tmp_path / "events.log"
    res.log.write(path)
    assert replay_file(path).ok
    records = read_log(path)
    tampered = [r if r.type != "END" else Record(r.round, r.tick, r.type, r.actor, r.ids,
                                                 {**r.data, "state_hash": "0" * 64}) for r in records]
    assert not replay(tampered).ok
    no_end = [r for r in records if r.type != "END"]
    assert not replay(no_end).ok
