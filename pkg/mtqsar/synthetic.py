# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Synthetic assay collections with shared signal and temporal drift.

Compounds come from a shared pool. Each pool compound gets a time position
``f`` in [0, 1) and a scaffold template whose choice drifts with ``f``:
template ``j`` sits at position ``j / (J - 1)`` and is picked with
probability proportional to ``exp(-drift * |position - f|)``. Template slots
are filled with random substituent branches.

Task ``t`` labels compound ``x`` active when ``w_t . x`` exceeds the pool
quantile that leaves ``active_fraction`` of the pool active, where
``w_t = rho_t * latent + sqrt(1 - rho_t**2) * own_t``. Labels are then flipped
with probability ``noise``. A record's date places ``f`` inside the task's
date range.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple
import datetime
import logging
import math

import numpy as np

from .chem import Fingerprint, featurize, fingerprint_matrix
from .data import Collection, Record, TaskDataset
from .qsarerror import DataError

logger = logging.getLogger(__name__)

TEMPLATES = (
    "c1cc{0}cc{1}c1",
    "c1ccc2cc{0}c{1}cc2c1",
    "C1CC{0}N(C{1})CC1",
    "c1cnc{0}c{1}n1",
    "O=C(N{0}C{1})c1ccccc1",
    "CC{0}C{1}C(=O)O",
    "c1ccc(cc1)C{0}C{1}N",
    "C1CCC{0}C{1}C1",
    "c1cc{0}sc1C{1}",
    "N{0}CC{1}OC",
    "c1ccc2c(c1)oc{0}c2{1}",
    "CN{0}C(=O)C{1}c1ccncc1",
)

DECORATIONS = (
    "(C)", "(O)", "(N)", "(F)", "(Cl)", "(Br)", "(I)", "(CC)", "(CCO)", "(OC)", "(C#N)",
    "(C(=O)O)", "(C(N)=O)", "(N(C)C)", "(C(F)(F)F)", "(S(=O)(=O)N)", "(c9ccccc9)",
)

SLOT_FILL_PROBABILITY = 0.7


@dataclass
class SyntheticTask:
    name: str
    size: int
    rho: float = 1.0
    noise: float = 0.0
    active_fraction: float = 0.3
    start: Optional[str] = None
    end: Optional[str] = None
    side: bool = False


@dataclass
class SyntheticSpec:
    """Parameters of a synthetic collection.

    :param tasks: per-task sizes, correlation with the latent signal, label
        noise and optional date range
    :param pool_size: shared compound pool (default: the largest task size)
    :param drift: strength of the temporal template drift, 0 for none
    """

    tasks: List[SyntheticTask]
    pool_size: int = 0
    start: str = "2010-01-01"
    end: str = "2019-12-31"
    drift: float = 0.0
    radius: int = 2
    width: int = 1024

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise DataError(message="unknown synthetic spec keys: " + ", ".join(sorted(unknown)), code="InvalidSpec")
        values = dict(data)
        try:
            values["tasks"] = [task if isinstance(task, SyntheticTask) else SyntheticTask(**task)
                               for task in values.get("tasks", [])]
            spec = cls(**values)
        except TypeError as exc:
            raise DataError(message="bad synthetic spec: %s" % exc, code="InvalidSpec")
        return spec.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> "SyntheticSpec":
        if not self.tasks:
            raise DataError(message="synthetic spec has no tasks", code="InvalidSpec")
        names = [task.name for task in self.tasks]
        if len(set(names)) != len(names):
            raise DataError(message="duplicate synthetic task names", code="InvalidSpec")
        for task in self.tasks:
            if task.size < 2:
                raise DataError(message="task %s needs at least 2 records" % task.name, code="InvalidSpec")
            if not -1.0 <= task.rho <= 1.0:
                raise DataError(message="task %s: rho must be in [-1, 1]" % task.name, code="InvalidSpec")
            if not 0.0 <= task.noise <= 0.5:
                raise DataError(message="task %s: noise must be in [0, 0.5]" % task.name, code="InvalidSpec")
            if not 0.0 < task.active_fraction < 1.0:
                raise DataError(message="task %s: active fraction must be in (0, 1)" % task.name,
                                code="InvalidSpec")
            self.date_range(task)
        if self.pool_size and self.pool_size < max(task.size for task in self.tasks):
            raise DataError(message="pool is smaller than the largest task", code="InvalidSpec")
        if self.drift < 0:
            raise DataError(message="drift must be >= 0", code="InvalidSpec")
        return self

    def date_range(self, task: SyntheticTask) -> Tuple[datetime.date, datetime.date]:
        try:
            start = datetime.date.fromisoformat(task.start or self.start)
            end = datetime.date.fromisoformat(task.end or self.end)
        except ValueError as exc:
            raise DataError(message="bad date in synthetic spec: %s" % exc, code="InvalidSpec")
        if end <= start:
            raise DataError(message="task %s: date range is empty" % task.name, code="InvalidSpec")
        return start, end

    @property
    def effective_pool_size(self) -> int:
        return self.pool_size or max(task.size for task in self.tasks)


def _template_probabilities(position: float, drift: float) -> np.ndarray:
    anchors = np.linspace(0.0, 1.0, len(TEMPLATES))
    logits = -drift * np.abs(anchors - position)
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


def _draw_smiles(rng: np.random.Generator, position: float, drift: float) -> str:
    template = TEMPLATES[rng.choice(len(TEMPLATES), p=_template_probabilities(position, drift))]
    slots = []
    for _ in range(template.count("{")):
        if rng.random() < SLOT_FILL_PROBABILITY:
            slots.append(DECORATIONS[rng.integers(len(DECORATIONS))])
        else:
            slots.append("")
    return template.format(*slots)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Collection:
    """Generate a collection from ``spec``; identical for identical seeds.

    :raises DataError: ``InvalidSpec`` for bad parameters or a task that ends
        up with a single class
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    pool_size = spec.effective_pool_size

    positions = rng.random(pool_size)
    smiles = [_draw_smiles(rng, float(position), spec.drift) for position in positions]
    cache: Dict[str, Fingerprint] = {}
    fingerprints = []
    for text in smiles:
        if text not in cache:
            cache[text] = featurize(text, spec.radius, spec.width)
        fingerprints.append(cache[text])
    features = fingerprint_matrix(fingerprints, spec.width).astype(np.float64)

    latent = rng.standard_normal(spec.width)
    tasks: List[TaskDataset] = []
    side: List[str] = []
    for task in spec.tasks:
        own = rng.standard_normal(spec.width)
        weights = task.rho * latent + math.sqrt(max(0.0, 1.0 - task.rho * task.rho)) * own
        scores = features @ weights
        threshold = np.quantile(scores, 1.0 - task.active_fraction)
        members = np.sort(rng.choice(pool_size, size=task.size, replace=False))
        flips = rng.random(task.size) < task.noise
        start, end = spec.date_range(task)
        span = (end - start).days

        records = []
        for member, flip in zip(members, flips):
            label = int(scores[member] > threshold)
            if flip:
                label = 1 - label
            date = start + datetime.timedelta(days=int(positions[member] * (span + 1)))
            records.append(Record("SYN%06d" % member, smiles[member], fingerprints[member], label, date))
        dataset = TaskDataset(task.name, tuple(records))
        if dataset.n_actives == 0 or dataset.n_inactives == 0:
            raise DataError(message="synthetic task %s has a single class" % task.name, code="InvalidSpec",
                            task=task.name)
        tasks.append(dataset)
        if task.side:
            side.append(task.name)
        logger.debug(f"synthetic task {task.name}: {dataset.n_actives} actives, {dataset.n_inactives} inactives")
    return Collection(tuple(tasks), tuple(side))


def drifted_spec(sizes: Dict[str, int], drift: float = 4.0, rho: float = 0.9, noise: float = 0.05,
                 width: int = 1024, side_end: Optional[str] = None) -> SyntheticSpec:
    """Convenience spec: tasks of ``sizes`` sharing one latent signal.

    :param side_end: end date of every task but the first, to let side tasks
        extend past the focus task's range
    """
    tasks = []
    for index, (name, size) in enumerate(sizes.items()):
        tasks.append(SyntheticTask(name, size, rho, noise, end=side_end if index and side_end else None))
    return SyntheticSpec(tasks, drift=drift, width=width).validate()

