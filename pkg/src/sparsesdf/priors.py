"""Matching priors: match ingestion, triangulated depth, epipolar weights and
angular source-view selection.

Uncertainty ``u`` follows the "0 means fully confident" reading; every
weighted sum uses ``1 - u``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

from . import geometry
from .errors import AllUncertain, ParseError, UnknownView

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1.0 - math.cos(math.radians(10.0))
DEFAULT_GAMMA = 10.0


@dataclass(frozen=True)
class MatchPair:
    pixel_r: np.ndarray
    pixel_s: np.ndarray
    uncertainty: float


@dataclass
class MatchBlock:
    """All matches between one ordered view pair, stored column-wise."""

    ref_view: int
    src_view: int
    pixel_r: np.ndarray  # (N, 2)
    pixel_s: np.ndarray  # (N, 2)
    uncertainty: np.ndarray  # (N,)

    def __post_init__(self):
        self.pixel_r = np.asarray(self.pixel_r, dtype=float).reshape(-1, 2)
        self.pixel_s = np.asarray(self.pixel_s, dtype=float).reshape(-1, 2)
        self.uncertainty = np.asarray(self.uncertainty, dtype=float).reshape(-1)

    def __len__(self) -> int:
        return len(self.uncertainty)

    def __iter__(self):
        for a, b, u in zip(self.pixel_r, self.pixel_s, self.uncertainty):
            yield MatchPair(a, b, float(u))

    def swapped(self) -> "MatchBlock":
        return MatchBlock(self.src_view, self.ref_view, self.pixel_s, self.pixel_r, self.uncertainty)

    def subset(self, idx) -> "MatchBlock":
        return MatchBlock(self.ref_view, self.src_view, self.pixel_r[idx], self.pixel_s[idx], self.uncertainty[idx])


@dataclass
class MatchSet:
    blocks: dict[tuple[int, int], MatchBlock] = field(default_factory=dict)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.blocks)

    def add(self, block: MatchBlock) -> None:
        key = (block.ref_view, block.src_view)
        if key in self.blocks:
            old = self.blocks[key]
            block = MatchBlock(
                *key,
                np.vstack([old.pixel_r, block.pixel_r]),
                np.vstack([old.pixel_s, block.pixel_s]),
                np.concatenate([old.uncertainty, block.uncertainty]),
            )
        self.blocks[key] = block

    def get(self, ref_view: int, src_view: int) -> MatchBlock | None:
        """Block oriented with ``ref_view`` as reference, whichever way it was stored."""
        if (ref_view, src_view) in self.blocks:
            return self.blocks[(ref_view, src_view)]
        if (src_view, ref_view) in self.blocks:
            return self.blocks[(src_view, ref_view)].swapped()
        return None

    def partners(self, view: int) -> list[int]:
        out = set()
        for a, b in self.blocks:
            if a == view:
                out.add(b)
            elif b == view:
                out.add(a)
        return sorted(out)


@dataclass
class ViewPairPriors:
    ref_view: int
    src_view: int
    matches: MatchBlock
    tri_depth: np.ndarray | None = None  # NaN where invalid
    epi_weight: np.ndarray | None = None
    angular_score: float = float("nan")

    @property
    def match_count(self) -> int:
        return len(self.matches)

    @property
    def valid(self) -> np.ndarray:
        if self.tri_depth is None:
            return np.zeros(self.match_count, dtype=bool)
        return np.isfinite(self.tri_depth)


def _parse_row(tokens, lineno, n):
    if len(tokens) != n:
        raise ParseError(lineno, f"expected {n} fields, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None


def load_matches(path, cameras: Mapping[int, geometry.Camera]) -> MatchSet:
    """Parse a match file.

    Layout: blocks introduced by a ``ref_id src_id count`` header followed by
    ``count`` rows of ``u_r v_r u_s v_s uncertainty``. ``#`` starts a comment.
    Rows whose pixels fall outside either image, or whose uncertainty leaves
    [0, 1], are dropped and counted in ``MatchSet.dropped``.
    """
    lines = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body.split()))
    out = MatchSet()
    i = 0
    while i < len(lines):
        lineno, tok = lines[i]
        if len(tok) != 3:
            raise ParseError(lineno, "expected block header 'ref_id src_id count'")
        try:
            ref, src, count = (int(t) for t in tok)
        except ValueError:
            raise ParseError(lineno, "block header fields must be integers") from None
        if count < 0:
            raise ParseError(lineno, "negative match count")
        for vid in (ref, src):
            if vid not in cameras:
                raise UnknownView(f"line {lineno}: view {vid} not in camera set")
        if count > len(lines) - i - 1:
            raise ParseError(lineno, f"block announces {count} rows but file ends early")
        rows = np.array([_parse_row(t, ln, 5) for ln, t in lines[i + 1 : i + 1 + count]]).reshape(-1, 5)
        i += 1 + count
        pr, ps, u = rows[:, 0:2], rows[:, 2:4], rows[:, 4]
        keep = cameras[ref].in_bounds(pr) & cameras[src].in_bounds(ps) & (u >= 0) & (u <= 1)
        out.dropped += int((~keep).sum())
        out.add(MatchBlock(ref, src, pr[keep], ps[keep], u[keep]))
    if out.dropped:
        logger.warning("dropped %d out-of-bounds match rows from %s", out.dropped, path)
    return out


def save_matches(path, matches: MatchSet | Iterable[MatchBlock]) -> None:
    blocks = matches.blocks.values() if isinstance(matches, MatchSet) else matches
    lines = ["# ref_id src_id count / u_r v_r u_s v_s uncertainty"]
    for b in sorted(blocks, key=lambda b: (b.ref_view, b.src_view)):
        lines.append(f"{b.ref_view} {b.src_view} {len(b)}")
        for pr, ps, u in zip(b.pixel_r, b.pixel_s, b.uncertainty):
            lines.append(f"{pr[0]:.6f} {pr[1]:.6f} {ps[0]:.6f} {ps[1]:.6f} {u:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def angular_score(pair: ViewPairPriors | MatchBlock, cameras: Mapping[int, geometry.Camera]) -> float:
    """One minus the cosine between the certainty-weighted mean ray directions
    of the two views. Lies in [0, 2]."""
    m = pair.matches if isinstance(pair, ViewPairPriors) else pair
    wts = 1.0 - m.uncertainty
    _, d_r = geometry.pixels_to_rays(cameras[m.ref_view], m.pixel_r)
    _, d_s = geometry.pixels_to_rays(cameras[m.src_view], m.pixel_s)
    a = wts @ d_r
    b = wts @ d_s
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if len(m) == 0 or na < 1e-9 or nb < 1e-9:
        raise AllUncertain(f"pair ({m.ref_view}, {m.src_view}) has no confident match")
    cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return 1.0 - cos


def select_source_view(ref_view: int, pairs: Iterable[ViewPairPriors], epsilon: float) -> int | None:
    """Most-matched partner of ``ref_view`` among those whose angular score
    exceeds ``epsilon``. Ties go to the larger score, then the smaller id."""
    best = None
    for p in pairs:
        if p.ref_view != ref_view or p.src_view == ref_view:
            continue
        if not p.angular_score - epsilon > 0:
            continue
        key = (p.match_count, p.angular_score, -p.src_view)
        if best is None or key > best[0]:
            best = (key, p.src_view)
    return None if best is None else best[1]


def epipolar_weights(F, pixel_r, pixel_s, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Per-match weight ``0.5 * (1 - sigmoid(gamma * sampson))`` in [0, 0.25].

    Ill-conditioned matches get weight 0.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    d = geometry.sampson_distances(F, pixel_r, pixel_s)
    w = 0.5 * expit(-gamma * d)
    return np.where(np.isnan(d), 0.0, w)


def triangulated_depth_priors(cameras: Mapping[int, geometry.Camera], pair: ViewPairPriors) -> ViewPairPriors:
    """Triangulate every match; store the reference-ray depth, NaN where invalid."""
    m = pair.matches
    o_r, d_r = geometry.pixels_to_rays(cameras[m.ref_view], m.pixel_r)
    o_s, d_s = geometry.pixels_to_rays(cameras[m.src_view], m.pixel_s)
    if len(m) == 0:
        return replace(pair, tri_depth=np.zeros(0))
    _, t_r, _, _, _, status = geometry.triangulate_rays(o_r, d_r, o_s, d_s)
    return replace(pair, tri_depth=np.where(status == 0, t_r, np.nan))


def build_pair_priors(
    cameras: Mapping[int, geometry.Camera],
    block: MatchBlock,
    gamma: float = DEFAULT_GAMMA,
) -> ViewPairPriors:
    pair = ViewPairPriors(block.ref_view, block.src_view, block)
    pair = triangulated_depth_priors(cameras, pair)
    F = geometry.fundamental_matrix(cameras[block.ref_view], cameras[block.src_view])
    pair.epi_weight = epipolar_weights(F, block.pixel_r, block.pixel_s, gamma)
    try:
        pair.angular_score = angular_score(pair, cameras)
    except AllUncertain:
        pair.angular_score = 0.0
    return pair


def build_all_priors(
    cameras: Mapping[int, geometry.Camera], matches: MatchSet, gamma: float = DEFAULT_GAMMA
) -> dict[tuple[int, int], ViewPairPriors]:
    """Priors for every ordered pair (both orientations of each stored block)."""
    out = {}
    for r in sorted(cameras):
        for s in matches.partners(r):
            block = matches.get(r, s)
            if block is not None and len(block):
                out[(r, s)] = build_pair_priors(cameras, block, gamma)
    return out


def select_all_sources(
    views: Iterable[int], priors: Mapping[tuple[int, int], ViewPairPriors], epsilon: float | None
) -> dict[int, int | None]:
    """Source view per reference view. ``epsilon=None`` disables the angular filter."""
    eps = -math.inf if epsilon is None else epsilon
    return {r: select_source_view(r, priors.values(), eps) for r in views}
