"""Hand-built model weights with a known ranking behaviour."""

import numpy as np


def make_similarity_oracle(model, c=5.0, d=0.1, eps=0.01):
    """Rewrite the SDN so the score peaks exactly when both feature vectors agree.

    Hidden units come in pairs tanh(c(a_i - b_i) + cd), tanh(c(a_i - b_i) - cd);
    their difference is an even bump in a_i - b_i, maximal at 0. The remaining
    layers pass eps * sum(bumps) through monotone maps, so identical features
    give the largest attainable score.
    """
    feat = model.fen_config.feature_dim
    hidden = model.sdn_config.hidden_sizes
    n = min(hidden[0] // 2, feat)
    p = model.params
    for name in p:
        if name.startswith("sdn."):
            p[name].data = np.zeros_like(p[name].data)
    w0 = np.zeros_like(p["sdn.fc0.weight"].data)
    b0 = np.zeros_like(p["sdn.fc0.bias"].data)
    for i in range(n):
        for row, sign in ((2 * i, 1.0), (2 * i + 1, -1.0)):
            w0[row, i] = c
            w0[row, feat + i] = -c
            b0[row] = sign * c * d
    p["sdn.fc0.weight"].data = w0
    p["sdn.fc0.bias"].data = b0
    w1 = np.zeros_like(p["sdn.fc1.weight"].data)
    w1[0, 0:2 * n:2] = eps
    w1[0, 1:2 * n:2] = -eps
    p["sdn.fc1.weight"].data = w1
    for i in range(2, len(hidden)):
        w = np.zeros_like(p[f"sdn.fc{i}.weight"].data)
        w[0, 0] = 1.0
        p[f"sdn.fc{i}.weight"].data = w
    head = np.zeros_like(p["sdn.head.weight"].data)
    head[0, 0] = 1.0
    p["sdn.head.weight"].data = head
    return model
