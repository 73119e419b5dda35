import numpy as np
from scipy import stats

from besqmkv import StreamRNG
from besqmkv.rng import brownian_normals, stream_key


class TestStreams:
    def test_reproducible(self):
        a = StreamRNG(7, 3).normals(5, 100)
        b = StreamRNG(7, 3).normals(5, 100)
        assert np.array_equal(a, b)

    def test_streams_and_steps_differ(self):
        base = StreamRNG(7, 3).normals(5, 100)
        assert not np.array_equal(base, StreamRNG(7, 4).normals(5, 100))
        assert not np.array_equal(base, StreamRNG(8, 3).normals(5, 100))
        assert not np.array_equal(base, StreamRNG(7, 3).normals(6, 100))

    def test_prefix_stable(self):
        # particle i's draw does not depend on how many particles exist
        assert np.array_equal(StreamRNG(1, 0).normals(9, 10), StreamRNG(1, 0).normals(9, 1000)[:10])

    def test_batch_equals_single(self):
        keys = np.array([stream_key(3, s) for s in range(4)], dtype=np.uint64)
        batch = brownian_normals(keys, 11, 50)
        assert np.array_equal(batch[2], StreamRNG(3, 2).normals(11, 50))

    def test_gaussian(self):
        z = np.concatenate([StreamRNG(0, s).normals(k, 1000) for s in range(5) for k in range(20)])
        assert abs(z.mean()) < 4 / np.sqrt(z.size)
        assert abs(z.var() - 1) < 0.02
        assert stats.kstest(z, "norm").pvalue > 1e-3
        assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 4 / np.sqrt(z.size)

    def test_generator_keyed_by_block_and_lane(self):
        r = StreamRNG(5, 1)
        assert np.array_equal(r.generator(2, 1).random(4), r.generator(2, 1).random(4))
        assert not np.array_equal(r.generator(2, 1).random(4), r.generator(3, 1).random(4))
        assert not np.array_equal(r.generator(2, 1).random(4), r.generator(2, 2).random(4))
