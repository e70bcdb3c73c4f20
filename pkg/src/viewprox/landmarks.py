"""Index conventions of the 68-point facial landmark scheme."""

from __future__ import annotations

N_LANDMARKS = 68

JAW = range(0, 17)
RIGHT_BROW = range(17, 22)
LEFT_BROW = range(22, 27)
NOSE_BRIDGE = range(27, 31)
NOSE_BASE = range(31, 36)
RIGHT_EYE = range(36, 42)
LEFT_EYE = range(42, 48)
MOUTH = range(48, 68)

# No tragion exists in this scheme; the jaw endpoints sit closest to the ears.
TRAGION_PROXIES = (0, 16)
CHIN = 8
NASION = 27

# (subject-right, subject-left) mirror pairs.
MIRROR_PAIRS: tuple[tuple[int, int], ...] = (
    *((i, 16 - i) for i in range(8)),
    (17, 26), (18, 25), (19, 24), (20, 23), (21, 22),
    (31, 35), (32, 34),
    (36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46),
    (48, 54), (49, 53), (50, 52), (55, 59), (56, 58),
    (60, 64), (61, 63), (65, 67),
)
MIDLINE = (8, 27, 28, 29, 30, 33, 51, 57, 62, 66)


def mirror_index() -> list[int]:
    """Permutation mapping each landmark to its mirror partner."""
    perm = list(range(N_LANDMARKS))
    for a, b in MIRROR_PAIRS:
        perm[a], perm[b] = b, a
    return perm
