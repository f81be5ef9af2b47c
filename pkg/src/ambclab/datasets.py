"""Builders for the two training corpora.

The offline (SOURCE) corpus draws a fresh channel for every example so the
network learns channel-generic structure; the online (TARGET) set recycles
one frame's few pilot blocks into a large fine-tuning set by adding small
complex Gaussian perturbations to the raw samples before the covariance is
taken.
"""
import numpy as np

from .cmnet import SOURCE, TARGET, LabeledCovarianceSet
from .features import batch_block_features, block_feature
from .simcore import _crandn, draw_channel, generate_block


def build_offline_dataset(rng, params, count, dtype=np.float32, ident=None):
    """SOURCE set of `count` examples, alternating labels 1, 0, 1, ...

    params may be one SimParams or a sequence of them; a sequence is cycled
    example by example, which is how a sweep mixes its operating points into
    one offline corpus.  Every example gets an independent channel draw.
    """
    if count < 2 or count % 2 != 0:
        raise ValueError("count must be an even number >= 2 "
                         "(labels alternate, SOURCE sets must stay balanced)")
    plist = list(params) if isinstance(params, (list, tuple)) else [params]
    m = plist[0].m
    if any(p.m != m for p in plist):
        raise ValueError("all SimParams in a corpus must share one antenna count")
    features = np.empty((count, m, m, 2), dtype=dtype)
    labels = np.empty(count, dtype=int)
    for i in range(count):
        p = plist[i % len(plist)]
        label = 1 - (i % 2)
        ch = draw_channel(rng, p)
        block = generate_block(rng, ch, p, label)
        features[i] = block_feature(block.x, dtype=dtype)
        labels[i] = label
    if ident is None:
        ident = f"source:m{m}:count{count}:mix{len(plist)}"
    return LabeledCovarianceSet(features=features, labels=labels,
                                domain=SOURCE, ident=ident)


def build_online_dataset(rng, frame, target_count, aug_sigma2=1e-3,
                         dtype=np.float32, ident=None):
    """TARGET set: cycle the frame's pilot blocks up to target_count examples.

    Each copy perturbs the raw pilot samples with CN(0, aug_sigma2) noise
    before the covariance is computed; aug_sigma2 = 0 reproduces the pilot
    covariances exactly (the set is then target_count/P copies of P points).
    """
    pilots = frame.blocks[: frame.pilot_count]
    p = len(pilots)
    if target_count < p:
        raise ValueError("target_count must be at least the pilot count")
    if aug_sigma2 < 0:
        raise ValueError("aug_sigma2 must be nonnegative")
    xs = np.stack([b.x for b in pilots])  # (p, m, n)
    labels = np.array([b.label for b in pilots], dtype=int)
    idx = np.arange(target_count) % p
    xa = xs[idx]
    if aug_sigma2 > 0:
        xa = xa + np.sqrt(aug_sigma2) * _crandn(rng, *xa.shape)
    features = batch_block_features(xa, dtype=dtype)
    if ident is None:
        ident = f"target:p{p}:count{target_count}:aug{aug_sigma2!r}"
    return LabeledCovarianceSet(features=features, labels=labels[idx],
                                domain=TARGET, ident=ident)
