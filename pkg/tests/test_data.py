import numpy as np
import pytest

from shapesize import (
    DataError,
    Dataset,
    Subject,
    TrimSpec,
    UNTRIMMED,
    load_dataset,
    save_dataset,
    validate,
)
from tests.conftest import make_dataset

SUBJECTS_CSV = """id,c,z1,z2
s1,1.0,0.5,-0.25
s2,0.8,-1.5,2.0
s3,1.0,0.0,0.125
"""

EVENTS_CSV = """id,t
s1,0.25
s1,0.75
s3,0.5
s2,0.1
"""


def _write(tmp_path, subjects=SUBJECTS_CSV, events=EVENTS_CSV):
    sp = tmp_path / "subjects.csv"
    ep = tmp_path / "events.csv"
    sp.write_text(subjects)
    ep.write_text(events)
    return sp, ep


class TestSubject:
    def test_basic_fields(self):
        s = Subject(id="a", z=[1.0, 2.0], c=0.9, events=[0.1, 0.5])
        assert s.n_events == 2
        assert s.z.flags.writeable is False
        assert s.events.flags.writeable is False

    def test_zero_events_ok(self):
        s = Subject(id="a", z=[0.0], c=0.5, events=[])
        assert s.n_events == 0

    def test_event_after_censoring_rejected(self):
        with pytest.raises(DataError, match="after censoring"):
            Subject(id="a", z=[0.0], c=0.4, events=[0.1, 0.5])

    def test_unsorted_events_rejected(self):
        with pytest.raises(DataError, match="sorted"):
            Subject(id="a", z=[0.0], c=1.0, events=[0.5, 0.1])

    def test_negative_event_rejected(self):
        with pytest.raises(DataError, match="negative"):
            Subject(id="a", z=[0.0], c=1.0, events=[-0.1, 0.5])

    def test_nonfinite_covariate_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            Subject(id="a", z=[np.nan], c=1.0, events=[])

    def test_negative_censoring_rejected(self):
        with pytest.raises(DataError, match="censoring"):
            Subject(id="a", z=[0.0], c=-0.5, events=[])


class TestDataset:
    def test_accessors(self, seven_event_fixture):
        ds = seven_event_fixture
        assert ds.n == 5
        assert ds.p == 2
        assert ds.covariates().shape == (5, 2)
        assert ds.censoring().shape == (5,)
        assert ds.total_events() == 7
        assert ds.event_counts().sum() == 7

    def test_mixed_dimension_rejected(self):
        with pytest.raises(DataError, match="dimension"):
            Dataset(
                subjects=(
                    Subject(id="a", z=[0.0], c=1.0, events=[]),
                    Subject(id="b", z=[0.0, 1.0], c=1.0, events=[]),
                ),
                tau=1.0,
            )

    def test_censoring_beyond_tau_rejected(self):
        with pytest.raises(DataError, match="exceeds tau"):
            make_dataset([("a", [0.0], 1.5, [])], tau=1.0)

    def test_empty_rejected(self):
        with pytest.raises(DataError, match="at least one"):
            Dataset(subjects=(), tau=1.0)

    def test_duplicate_ids_allowed_in_memory(self):
        # bootstrap resamples reuse subjects verbatim
        s = Subject(id="a", z=[0.0, 1.0], c=1.0, events=[0.2])
        ds = Dataset(subjects=(s, s, s), tau=1.0)
        assert ds.n == 3


class TestTrimSpec:
    def test_untrimmed_window(self):
        assert UNTRIMMED.window(2.0) == (0.0, 2.0)

    def test_window_resolution(self):
        t = TrimSpec(tau0=0.1, tau1=0.9)
        assert t.window(1.0) == (0.1, 0.9)

    def test_tau1_beyond_tau_rejected(self):
        with pytest.raises(DataError, match="exceeds"):
            TrimSpec(tau1=2.0).window(1.0)

    def test_inverted_interval_rejected(self):
        with pytest.raises(DataError):
            TrimSpec(tau0=0.5, tau1=0.2)

    def test_box_membership(self):
        t = TrimSpec(z_lower=[-1.0, 0.0], z_upper=[1.0, 2.0])
        z = np.array([[0.0, 1.0], [2.0, 1.0], [0.0, -0.5], [1.0, 2.0]])
        assert t.in_region(z).tolist() == [True, False, False, True]

    def test_untrimmed_keeps_everything(self):
        z = np.random.default_rng(0).normal(size=(10, 3))
        assert UNTRIMMED.in_region(z).all()

    def test_one_sided_box_rejected(self):
        with pytest.raises(DataError, match="together"):
            TrimSpec(z_lower=[0.0])

    def test_inverted_box_rejected(self):
        with pytest.raises(DataError, match="z_lower > z_upper"):
            TrimSpec(z_lower=[1.0], z_upper=[0.0])

    def test_box_dimension_mismatch(self):
        t = TrimSpec(z_lower=[0.0], z_upper=[1.0])
        with pytest.raises(DataError, match="dimension"):
            t.in_region(np.zeros((4, 2)))


class TestLoader:
    def test_load_basic(self, tmp_path):
        sp, ep = _write(tmp_path)
        ds = load_dataset(sp, ep, tau=1.0)
        assert ds.n == 3
        assert ds.p == 2
        assert [s.id for s in ds.subjects] == ["s1", "s2", "s3"]
        s1 = ds.subjects[0]
        assert s1.events.tolist() == [0.25, 0.75]
        assert s1.z.tolist() == [0.5, -0.25]
        # events arrive unordered in the file but are stored sorted per subject
        assert ds.subjects[1].events.tolist() == [0.1]

    def test_round_trip_identity(self, tmp_path, seven_event_fixture):
        ds = seven_event_fixture
        sp = tmp_path / "s.csv"
        ep = tmp_path / "e.csv"
        save_dataset(ds, sp, ep)
        back = load_dataset(sp, ep, tau=ds.tau)
        assert back.n == ds.n
        for a, b in zip(back.subjects, ds.subjects):
            assert a.id == b.id
            assert a.c == b.c
            assert np.array_equal(a.z, b.z)
            assert np.array_equal(a.events, b.events)

    def test_save_is_byte_stable(self, tmp_path, seven_event_fixture):
        pa, pb = tmp_path / "a", tmp_path / "b"
        pa.mkdir(), pb.mkdir()
        save_dataset(seven_event_fixture, pa / "s.csv", pa / "e.csv")
        save_dataset(seven_event_fixture, pb / "s.csv", pb / "e.csv")
        assert (pa / "s.csv").read_bytes() == (pb / "s.csv").read_bytes()
        assert (pa / "e.csv").read_bytes() == (pb / "e.csv").read_bytes()

    def test_duplicate_subject_id(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,1.0,0.0\na,0.5,1.0\n",
                        events="id,t\n")
        with pytest.raises(DataError, match="duplicate"):
            load_dataset(sp, ep, tau=1.0)

    def test_unknown_event_id(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,1.0,0.0\n",
                        events="id,t\nb,0.5\n")
        with pytest.raises(DataError, match="unknown subject"):
            load_dataset(sp, ep, tau=1.0)

    def test_event_outside_censoring(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,0.4,0.0\n",
                        events="id,t\na,0.5\n")
        with pytest.raises(DataError, match="outside"):
            load_dataset(sp, ep, tau=1.0)

    def test_censoring_beyond_tau(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,1.5,0.0\n", events="id,t\n")
        with pytest.raises(DataError, match="exceeds tau"):
            load_dataset(sp, ep, tau=1.0)

    def test_non_numeric_field(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,xx,0.0\n", events="id,t\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_dataset(sp, ep, tau=1.0)

    def test_bad_headers(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="subject,c,z1\na,1.0,0.0\n", events="id,t\n")
        with pytest.raises(DataError, match="header"):
            load_dataset(sp, ep, tau=1.0)
        sp2, ep2 = _write(tmp_path, subjects="id,c,x1\na,1.0,0.0\n", events="id,t\n")
        with pytest.raises(DataError, match="covariate columns"):
            load_dataset(sp2, ep2, tau=1.0)
        sp3, ep3 = _write(tmp_path, events="id,time\na,0.5\n")
        with pytest.raises(DataError, match="id,t"):
            load_dataset(sp3, ep3, tau=1.0)

    def test_field_count_mismatch(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,1.0,0.0,9.0\n", events="id,t\n")
        with pytest.raises(DataError, match="fields"):
            load_dataset(sp, ep, tau=1.0)

    def test_zero_event_subject_loads(self, tmp_path):
        sp, ep = _write(tmp_path, subjects="id,c,z1\na,1.0,0.0\n", events="id,t\n")
        ds = load_dataset(sp, ep, tau=1.0)
        assert ds.subjects[0].n_events == 0


class TestValidate:
    def test_clean_dataset_quiet(self, seven_event_fixture):
        assert validate(seven_event_fixture) == []

    def test_tie_and_zero_event_notes(self):
        ds = make_dataset(
            [
                ("a", [0.1, 0.2], 1.0, [0.5]),
                ("b", [0.7, -0.4], 1.0, [0.5]),
                ("c", [0.2, 0.9], 1.0, []),
            ],
            tau=1.0,
        )
        notes = validate(ds)
        assert any("shared" in n for n in notes)
        assert any("zero observed events" in n for n in notes)

    def test_constant_coordinate_note(self):
        ds = make_dataset(
            [("a", [1.0, 0.3], 1.0, [0.5]), ("b", [1.0, -0.4], 1.0, [])],
            tau=1.0,
        )
        notes = validate(ds)
        assert any("z1 is constant" in n for n in notes)

    def test_rank_deficiency_note(self):
        # second coordinate is an affine function of the first
        ds = make_dataset(
            [("a", [0.0, 1.0], 1.0, []), ("b", [1.0, 3.0], 1.0, []),
             ("c", [2.0, 5.0], 1.0, [])],
            tau=1.0,
        )
        notes = validate(ds)
        assert any("rank-deficient" in n and "unidentifiable" in n for n in notes)
