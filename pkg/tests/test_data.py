import json

import numpy as np
import pytest

from boostmatch import data as D
from boostmatch import encoders, evaluation

PINNED = D.LatentSpec(latent_dim=16)  # 800/100/100 images, C=5, noise 0.3
PINNED_SHA256 = "e4e7ee8a2988e02196271aa6391a2e45905c540c5e7e9c7bfefbca5720ee2449"


def small(**kw):
    base = dict(latent_dim=4, image_dim=6, text_dim=5, n_train=20, n_val=6, n_test=4)
    base.update(kw)
    return D.LatentSpec(**base)


def oracle_params(ds):
    # project tokens straight back onto the latent: A^T and B^T undo the modality maps
    s = ds.spec
    p = encoders.init_params("pooled", s.image_dim, s.text_dim, s.latent_dim, seed=0)
    p.weights.update(img_w=ds.image_map.copy(), txt_w=ds.text_map.copy(),
                     img_b=np.zeros((1, s.latent_dim)), txt_b=np.zeros((1, s.latent_dim)))
    return p


def test_pinned_dataset_checksum():
    ds = D.generate(PINNED, 1)
    assert ds.images.shape == (1000, 4, 16)
    assert ds.captions.shape == (5000, 4, 16)
    assert ds.checksum == PINNED_SHA256


def test_regeneration_is_bit_identical():
    a, b = D.generate(small(), 3), D.generate(small(), 3)
    for name in ("latents", "image_map", "text_map", "images", "captions", "caption_image"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.checksum != D.generate(small(), 4).checksum


def test_latents_on_sphere_and_maps_orthonormal():
    ds = D.generate(small(), 2)
    assert np.allclose(np.linalg.norm(ds.latents, axis=1), 1.0)
    assert np.allclose(ds.image_map.T @ ds.image_map, np.eye(4))
    assert np.allclose(ds.text_map.T @ ds.text_map, np.eye(4))


def test_every_caption_has_one_image():
    ds = D.generate(small(), 1)
    assert ds.caption_image.tolist() == [i for i in range(30) for _ in range(5)]


def test_splits_are_disjoint_and_cover():
    ds = D.generate(small(), 1)
    parts = [ds.split_images(s) for s in D.SPLITS]
    assert [p.size for p in parts] == [20, 6, 4]
    assert np.array_equal(np.concatenate(parts), np.arange(30))
    with pytest.raises(ValueError):
        ds.split_images("holdout")


def test_noiseless_data_allows_perfect_retrieval():
    ds = D.generate(small(noise=0.0), 5)
    ids, caps, truth = D.test_pairs(ds, "train")
    s = encoders.score_batch(oracle_params(ds), ds.images[ids], ds.captions[caps])
    rep = evaluation.report(s, truth)
    assert rep.rsum == 600.0


def test_one_batch_when_size_covers_split():
    ds = D.generate(small(), 1)
    out = D.batches(ds, "train", 20, seed=1)
    assert len(out) == 1 and out[0].images.size == 20


def test_short_final_batch_dropped():
    ds = D.generate(small(n_train=9), 1)
    assert [b.images.size for b in D.batches(ds, "train", 4, seed=1)] == [4, 4]
    assert [b.images.size for b in D.batches(ds, "train", 3, seed=1)] == [3, 3, 3]


def test_batches_are_pure_and_belong_to_split():
    ds = D.generate(small(n_train=50), 1)
    train = set(ds.split_images("train").tolist())
    for epoch in range(5):
        for b in D.batches(ds, "train", 7, seed=2, epoch=epoch):
            assert len(set(b.images.tolist())) == b.images.size
            assert set(b.images.tolist()) <= train
            owners = ds.caption_image[b.captions]
            assert np.array_equal(owners, b.images)
            # off-diagonal pairs are never ground-truth matches
            for i in range(b.images.size):
                for j in range(b.images.size):
                    assert (owners[j] == b.images[i]) == (i == j)


def test_batches_deterministic_and_reshuffled_per_epoch():
    ds = D.generate(small(), 1)
    a = D.batches(ds, "train", 5, seed=3, epoch=0)
    b = D.batches(ds, "train", 5, seed=3, epoch=0)
    c = D.batches(ds, "train", 5, seed=3, epoch=1)
    assert all(np.array_equal(x.captions, y.captions) for x, y in zip(a, b))
    assert not all(np.array_equal(x.images, y.images) for x, y in zip(a, c))


def test_batches_reject_bad_size():
    with pytest.raises(ValueError):
        D.batches(D.generate(small(), 1), "train", 1, seed=0)


@pytest.mark.parametrize("n,c", [(2, 1), (3, 5)])
def test_gallery_shapes(n, c):
    ds = D.generate(small(n_test=n, captions_per_image=c), 1)
    ids, caps, truth = D.test_pairs(ds)
    assert (ids.size, caps.size) == (n, n * c)
    assert np.bincount(truth).tolist() == [c] * n


def test_gallery_truth_matches_generator_map():
    ds = D.generate(small(), 7)
    ids, caps, truth = D.test_pairs(ds, "val")
    assert np.array_equal(ids[truth], ds.caption_image[caps])


def test_difficulty_grows_with_noise():
    sigmas = [0.0, 0.15, 0.3, 0.6, 1.0]
    for seed in range(1, 6):
        means = []
        for sigma in sigmas:
            ds = D.generate(small(noise=sigma, n_train=0, n_val=0, n_test=60), seed)
            ids, caps, truth = D.test_pairs(ds)
            s = encoders.score_batch(oracle_params(ds), ds.images[ids], ds.captions[caps])
            means.append(s[truth, np.arange(caps.size)].mean())
        assert all(b <= a for a, b in zip(means, means[1:])), (seed, means)


def test_manifest_round_trip():
    ds = D.generate(small(), 4)
    back = D.load_manifest(D.export(ds))
    assert back.checksum == ds.checksum and back.spec == ds.spec


def test_manifest_detects_tampering():
    doc = json.loads(D.export(D.generate(small(), 4)))
    doc["checksum"] = "0" * 64
    with pytest.raises(ValueError, match="checksum"):
        D.load_manifest(json.dumps(doc))


@pytest.mark.parametrize("field,value", [("latent_dim", 0), ("noise", -0.1), ("captions_per_image", 0)])
def test_spec_validation(field, value):
    with pytest.raises(ValueError):
        small(**{field: value})
