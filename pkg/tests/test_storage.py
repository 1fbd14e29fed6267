import numpy as np
import pytest

from hjgraph import storage
from hjgraph.averaging import AveragedTable


@pytest.fixture(autouse=True)
def private_cache(tmp_path, monkeypatch):
    monkeypatch.setenv(storage.CACHE_ENV, str(tmp_path / "cache"))


def test_content_key_is_order_free_and_sensitive():
    a = storage.content_key(x=1.0, y=(1, 2), z="q")
    assert a == storage.content_key(z="q", y=(1, 2), x=1.0)
    assert a != storage.content_key(x=1.0 + 1e-16 * 3, y=(1, 2), z="q")


def test_tables_round_trip_bit_exact(tmp_path, rng):
    h = np.sort(rng.uniform(-1, 0, 7))
    t = AveragedTable.from_function(2, h, np.linspace(-1, 1, 9), lambda hh, qq: np.sin(qq * 3.3) + hh,
                                    nu=1.0, M=0.5, L=rng.uniform(1, 2, 7), T=rng.uniform(1, 9, 7))
    storage.save_tables(tmp_path / "t.npz", [t, t])
    back = storage.load_tables(tmp_path / "t.npz")
    assert len(back) == 2
    for name in ("h", "q", "values", "L", "T"):
        assert np.array_equal(getattr(back[1], name), getattr(t, name))
    assert (back[0].nu, back[0].M, back[0].G00, back[0].edge) == (t.nu, t.M, t.G00, t.edge)


def test_profiles_round_trip_bit_exact(tmp_path, h3_pipeline):
    prof = h3_pipeline.profiles
    storage.save_profiles(tmp_path / "p.npz", prof)
    back = storage.load_profiles(tmp_path / "p.npz")
    for a, b in zip(prof, back):
        assert np.array_equal(a.T, b.T) and np.array_equal(a.L, b.L)
        assert np.array_equal(a.loops[3].vertices, b.loops[3].vertices)
        assert a.loops[3].level == b.loops[3].level


def test_cached_builds_once():
    calls = []

    def build():
        calls.append(1)
        return [AveragedTable.from_function(0, [0.0, 1.0], [-1.0, 0.0, 1.0], lambda h, q: q * q)]

    a = storage.cached("tables", "k1", build, storage.save_tables, storage.load_tables)
    b = storage.cached("tables", "k1", build, storage.save_tables, storage.load_tables)
    assert len(calls) == 1
    assert np.array_equal(a[0].values, b[0].values)
    storage.cached("tables", "k1", build, storage.save_tables, storage.load_tables, use_cache=False)
    assert len(calls) == 2


def test_corrupt_cache_entry_is_rebuilt():
    path = storage.cache_dir() / "tables-bad.npz"
    path.write_bytes(b"not an archive")
    out = storage.cached("tables", "bad", lambda: [], storage.save_tables, storage.load_tables)
    assert out == [] and storage.load_tables(path) == []


def test_flat_config():
    kv = storage.read_flat_config("# comment\nfamily = h4\n\nEPS = 0.4, 0.2  # trailing\n")
    assert kv == {"family": "h4", "eps": "0.4, 0.2"}
    with pytest.raises(ValueError):
        storage.read_flat_config("novalue\n")


def test_csv_writes_header(tmp_path):
    p = storage.write_csv(tmp_path / "a" / "b.csv", ("x", "y"), [(1, 2), (3, 4)])
    assert p.read_text().splitlines() == ["x,y", "1,2", "3,4"]


def test_directory_lock_is_exclusive(tmp_path):
    with storage.DirectoryLock(tmp_path):
        with pytest.raises(RuntimeError):
            with storage.DirectoryLock(tmp_path):
                pass
    with storage.DirectoryLock(tmp_path):
        pass
