"""Past/future view construction under the five augmentation placements."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .audio import AudioBuffer
from .effects import ConcreteChain, EffectChainSpec, apply_chain, sample_chain
from .errors import ChainError
from .rng import RngStream

_PAST, _FUTURE = 0, 1


class AugPlacement(str, Enum):
    """Where augmentation lands relative to the prediction task."""

    SAME_FOR_ALL = "same_for_all"
    PER_SEQUENCE = "per_sequence"
    PAST_ONLY = "past_only"
    FUTURE_ONLY = "future_only"
    PAST_PLUS_FUTURE = "past_plus_future"


@dataclass(frozen=True)
class ViewPair:
    """Two views of one source window; un-augmented views alias the source."""

    past: AudioBuffer
    future: AudioBuffer
    past_chain: Optional[ConcreteChain]
    future_chain: Optional[ConcreteChain]


def make_views(
    batch: Sequence[AudioBuffer],
    placement: AugPlacement,
    spec: EffectChainSpec,
    rng: RngStream,
    threads: int = 1,
) -> list[ViewPair]:
    """Build (past, future) views for every window in the batch.

    Chains are derived from ``rng`` at per-item paths ``(item, view)``, so
    the result is independent of application order and thread count.
    """
    if not batch:
        return []
    length = len(batch[0])
    rate = batch[0].sample_rate
    for buf in batch:
        if len(buf) != length or buf.sample_rate != rate:
            raise ChainError("batch windows must share length and sample rate")

    placement = AugPlacement(placement)
    chains: list[tuple[Optional[ConcreteChain], Optional[ConcreteChain]]] = []
    if placement is AugPlacement.SAME_FOR_ALL:
        shared = sample_chain(spec, length, rate, rng.child(0, _PAST))
        chains = [(shared, shared)] * len(batch)
    else:
        for i in range(len(batch)):
            if placement is AugPlacement.PER_SEQUENCE:
                chain = sample_chain(spec, length, rate, rng.child(i, _PAST))
                chains.append((chain, chain))
            elif placement is AugPlacement.PAST_ONLY:
                chains.append((sample_chain(spec, length, rate, rng.child(i, _PAST)), None))
            elif placement is AugPlacement.FUTURE_ONLY:
                chains.append((None, sample_chain(spec, length, rate, rng.child(i, _FUTURE))))
            else:  # PAST_PLUS_FUTURE: two independent draws
                chains.append(
                    (
                        sample_chain(spec, length, rate, rng.child(i, _PAST)),
                        sample_chain(spec, length, rate, rng.child(i, _FUTURE)),
                    )
                )

    # identity views alias the source; a shared chain is applied only once
    jobs = []
    for i, (past_chain, future_chain) in enumerate(chains):
        if past_chain is not None:
            jobs.append((i, _PAST, past_chain))
        if future_chain is not None and future_chain is not past_chain:
            jobs.append((i, _FUTURE, future_chain))

    def run(job):
        i, _view, chain = job
        return apply_chain(batch[i], chain)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, jobs))
    else:
        outputs = [run(job) for job in jobs]

    past_views = list(batch)
    future_views = list(batch)
    for (i, view, _chain), out in zip(jobs, outputs):
        if view == _PAST:
            past_views[i] = out
        else:
            future_views[i] = out
    for i, (past_chain, future_chain) in enumerate(chains):
        if future_chain is not None and future_chain is past_chain:
            future_views[i] = past_views[i]

    return [
        ViewPair(past_views[i], future_views[i], chains[i][0], chains[i][1])
        for i in range(len(batch))
    ]
