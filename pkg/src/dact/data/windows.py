"""Next-item training and evaluation windows.

A window is (context item list, target item). Contexts walk the user's
chronological history and may reach back into earlier periods; targets
always come from the requested split of the current period. Windows with
empty contexts are dropped because there is nothing to condition on.
"""

from __future__ import annotations

from .events import PeriodDataset


def build_training_windows(
    period: PeriodDataset, split: str = "train", max_len: int = 20
) -> list[tuple[list[int], int]]:
    """Expand one period into (context, target) pairs for the given split.

    For ``train``, every train-split item with at least one predecessor
    becomes a target once. For ``val`` and ``test``, each user contributes at
    most one window whose context is everything the user did before the
    held-out item. Contexts keep the most recent ``max_len`` items.
    """
    if split not in ("train", "val", "test"):
        raise ValueError(f"unknown split {split!r}")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")

    windows: list[tuple[list[int], int]] = []
    for user in sorted(period.splits):
        s = period.splits[user]
        prefix = list(period.prior_items.get(user, []))
        if split == "train":
            for target in s.train:
                if prefix:
                    windows.append((prefix[-max_len:], target))
                prefix.append(target)
            continue
        prefix.extend(s.train)
        if split == "test" and s.val is not None:
            prefix.append(s.val)
        target = s.val if split == "val" else s.test
        if target is not None and prefix:
            windows.append((prefix[-max_len:], target))
    return windows
