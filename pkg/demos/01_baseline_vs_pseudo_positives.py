"""
Baseline vs pseudo-positive regularization
==========================================

Train an identification classifier on a small labeled set, borrow extra
training samples from an unlabeled pool, retrain and compare retrieval.
"""

import numpy as np

from ppreid import (
    ProtocolConfig,
    evaluate_cross_camera,
    extract_features,
    merge,
    mine_nearest,
    select_pseudo_positives,
    train,
)
from ppreid.benchmarks import BENCHMARK_TRAIN
from ppreid.synth import SynthConfig, generate

# 50 people, 6 labeled images each, two cameras, 2000 unlabeled vectors
train_set, query, gallery, pool = generate(SynthConfig(seed=7))
print("train", train_set.vectors.shape, "pool", pool.vectors.shape)

# the baseline: softmax over identities, penultimate layer as the feature
baseline, log = train(train_set, None, BENCHMARK_TRAIN)
print("final training loss %.3f" % log.epoch_loss[-1])


def score(model):
    q = query.with_vectors(extract_features(model, query))
    g = gallery.with_vectors(extract_features(model, gallery))
    return evaluate_cross_camera(q, g, ProtocolConfig())


base = score(baseline)
print("baseline rank-1 %.3f  mAP %.3f" % (base.rank1, base.map))

# every labeled sample retrieves its nearest pool vector in feature space
pairs = mine_nearest(extract_features(baseline, train_set), extract_features(baseline, pool),
                     train_set.identities)
print("mined", len(pairs), "pairs, median distance %.3f" % np.median([p.distance for p in pairs]))

# keep a small random subset and give each one the label of its query
pseudo = select_pseudo_positives(pairs, 30, seed=1)
augmented = merge(train_set, pseudo, pool)
print("training set grows from", len(train_set), "to", len(augmented))

# same recipe, fresh start, more (noisy but plausible) samples
ppr_model, _ = train(augmented, None, BENCHMARK_TRAIN)
ppr = score(ppr_model)
print("with pseudo-positives rank-1 %.3f  mAP %.3f" % (ppr.rank1, ppr.map))
