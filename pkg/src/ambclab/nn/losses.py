"""Softmax scores and the two-class cross-entropy cost."""
import numpy as np

# Scores below this floor are clamped inside the log, so a confidently wrong
# score costs at most -ln(1e-12) instead of overflowing to infinity.
SCORE_FLOOR = 1e-12


def softmax(z):
    """Row-wise softmax of (B, K) logits, max-shifted before exponentiation."""
    z = np.asarray(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(scores, onehot):
    """Mean over the batch of -sum(onehot * ln(scores)), scores floored."""
    scores = np.asarray(scores)
    onehot = np.asarray(onehot)
    if scores.shape != onehot.shape:
        raise ValueError("scores and onehot shapes disagree")
    logs = np.log(np.maximum(scores, SCORE_FLOOR))
    return float(-(onehot * logs).sum() / scores.shape[0])


def softmax_xent_grad(scores, onehot):
    """Gradient of cross_entropy(softmax(z), onehot) w.r.t. the logits z."""
    return (scores - onehot) / scores.shape[0]
