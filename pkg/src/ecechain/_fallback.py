"""Pure-Python versions of the per-query kernels.

Must stay bit-identical to ``_kernels.pyx``; ``tests/test_kernels.py``
compares the two whenever the extension is built.
"""
import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance ``state``; return (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def sample_positions(n: int, k: int, seed: int) -> list[int]:
    """Uniform k-subset of range(n) via partial Fisher-Yates, sorted."""
    pos = list(range(n))
    state = int(seed)
    for i in range(k):
        state, x = splitmix64(state)
        j = i + int(((x >> 11) * _TO_UNIT) * (n - i))
        pos[i], pos[j] = pos[j], pos[i]
    return sorted(pos[:k])


def pack_ece_batch(indptr, nb_ent, nb_rel, nb_time, subj, rel, qtime, answer,
                   seeds, k, history_only, strict):
    b = len(subj)
    out_ent = np.zeros((b, k), dtype=np.int64)
    out_rel = np.zeros((b, k), dtype=np.int64)
    out_time = np.zeros((b, k), dtype=np.int64)
    counts = np.zeros(b, dtype=np.int64)
    for q in range(b):
        s, p, t, a = int(subj[q]), int(rel[q]), int(qtime[q]), int(answer[q])
        lo, hi = int(indptr[s]), int(indptr[s + 1])
        if history_only:
            hi = lo + int(np.searchsorted(nb_time[lo:hi], t, side="right"))
        ents = nb_ent[lo:hi]
        if strict:
            keep = ents != a
        else:
            keep = ~((ents == a) & (nb_rel[lo:hi] == p) & (nb_time[lo:hi] == t))
        cand = np.flatnonzero(keep) + lo
        n = len(cand)
        if n > k:
            cand = cand[sample_positions(n, k, int(seeds[q]))]
            n = k
        counts[q] = n
        out_ent[q, :n] = nb_ent[cand]
        out_rel[q, :n] = nb_rel[cand]
        out_time[q, :n] = nb_time[cand]
    return out_ent, out_rel, out_time, counts


def count_ranks(scores, answers, filt_indptr, filt_idx):
    """Per row: (#candidates scoring strictly above the answer, #ties).

    Candidates listed in the row's filter slice are skipped, the answer
    itself is never counted.
    """
    scores = np.asarray(scores)
    b = scores.shape[0]
    rows = np.arange(b)
    target = scores[rows, answers]
    masked = scores.copy()
    row_of = np.repeat(rows, np.diff(filt_indptr))
    masked[row_of, filt_idx] = -np.inf
    masked[rows, answers] = -np.inf
    greater = (masked > target[:, None]).sum(axis=1).astype(np.int64)
    ties = (masked == target[:, None]).sum(axis=1).astype(np.int64)
    return greater, ties
