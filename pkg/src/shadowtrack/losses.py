"""Embedding losses for paired-instance tracking, with analytic gradients.

Three losses are implemented:

* center loss  -- L1 pull of every location embedding toward its instance mean,
* contrast loss -- cross entropy of the row-softmaxed center dot-product
  similarity matrix against the identity, pushing instance centers apart,
* cycle loss   -- cross entropy of the forward/backward transition product
  against the identity, enforcing temporal correspondence between frames.

Every loss returns both its value and the gradient with respect to a flat
parameter vector, so central finite differences can verify the math
(:func:`grad_check`). A small direct-gradient-descent fitter
(:class:`ToyEmbeddingFitter`) optimizes raw sample embeddings under a weighted
sum of the three losses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from .validation import check_matrix, check_nonzero_rows, check_vector

#: Location samples at or below this classification score are ignored.
SCORE_THRESHOLD = 0.05

#: Softmax temperature of the transition matrix. The raw cosine range [-1, 1]
#: is too flat for a useful softmax; dividing by 0.1 sharpens the rows.
DEFAULT_TEMPERATURE = 0.1

KINDS = ("shadow", "object")


@dataclass(frozen=True)
class LocationSample:
    """One feature-map location: embedding, classification score, instance label."""

    embedding: np.ndarray
    class_score: float
    instance_id: int


@dataclass(frozen=True)
class InstanceGroup:
    """The above-threshold location samples of one instance, as an (N, D) matrix."""

    instance_id: int
    embeddings: np.ndarray

    def __post_init__(self) -> None:
        emb = check_matrix(self.embeddings, "group embeddings")
        object.__setattr__(self, "embeddings", emb)

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


def group_samples(
    samples, threshold: float = SCORE_THRESHOLD
) -> list[InstanceGroup]:
    """Filter samples by score (strictly above ``threshold``) and group by instance.

    Instances whose samples all fall at or below the threshold produce no group.
    Groups are returned in ascending instance-id order.
    """
    kept: dict[int, list[np.ndarray]] = {}
    for sample in samples:
        if sample.class_score > threshold:
            kept.setdefault(sample.instance_id, []).append(
                check_vector(sample.embedding, "sample embedding")
            )
    return [
        InstanceGroup(instance_id, np.stack(rows))
        for instance_id, rows in sorted(kept.items())
    ]


def center_embedding(group: InstanceGroup) -> np.ndarray:
    """Arithmetic mean of the group's sample embeddings."""
    if group.size == 0:
        raise ValueError("cannot average an empty instance group")
    return group.embeddings.mean(axis=0)


@dataclass(frozen=True)
class LossValue:
    """A scalar loss with its gradient over a documented flat parameter layout."""

    value: float
    gradient: np.ndarray


def center_loss(groups) -> LossValue:
    """Summed L1 distance of every sample to its instance center.

    The center is the group mean, so the gradient accounts for the full chain
    rule through it. Parameter layout: the sample embeddings of each group in
    the given group order, rows flattened row-major. The L1 subgradient at
    zero is taken as zero.
    """
    groups = list(groups)
    if not groups:
        raise ValueError("center_loss needs at least one instance group")
    value = 0.0
    grads = []
    for group in groups:
        emb = group.embeddings
        center = emb.mean(axis=0)
        residual = center - emb
        value += float(np.abs(residual).sum())
        signs = np.sign(residual)
        grads.append((signs.mean(axis=0) - signs).ravel())
    return LossValue(value, np.concatenate(grads))


def _row_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _row_softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def similarity_matrix(centers) -> np.ndarray:
    """Row-wise softmax of the raw center dot products (self term included).

    Entry (i, j) is exp(C_i . C_j) normalised over all j for row i, so every
    row sums to 1 and every entry is strictly positive.
    """
    c = check_matrix(centers, "centers")
    return _row_softmax(c @ c.T)


def _identity_cross_entropy(probs: np.ndarray, name: str) -> float:
    if probs.shape[0] != probs.shape[1]:
        raise ValueError(f"{name} must be square, got shape {probs.shape}")
    diag = np.diag(probs)
    if np.any(diag <= 0.0):
        raise ValueError(f"{name} has a non-positive diagonal entry")
    total = float(-np.log(diag).sum())
    # Row-stochastic inputs keep the diagonal <= 1, so the true value is
    # non-negative; snap the few-ulp rounding undershoot at diag == 1 to zero.
    if -1e-9 < total < 0.0:
        return 0.0
    return total


def contrast_loss(sim_s, sim_o, centers_s, centers_o) -> LossValue:
    """Cross entropy of both similarity matrices against the identity.

    The value is computed from the matrices as given; the gradient is taken
    with respect to the two center matrices (softmax backward through the dot
    products), laid out as [centers_s, centers_o] flattened row-major.
    """
    value = 0.0
    grads = []
    for sim, centers, name in (
        (sim_s, centers_s, "sim_s"),
        (sim_o, centers_o, "sim_o"),
    ):
        sim = check_matrix(sim, name)
        centers = check_matrix(centers, name + " centers")
        if sim.shape[0] != centers.shape[0]:
            raise ValueError(
                f"{name} is {sim.shape} but has {centers.shape[0]} centers"
            )
        value += _identity_cross_entropy(sim, name)
        dgram = sim - np.eye(sim.shape[0])
        grads.append((dgram @ centers + dgram.T @ centers).ravel())
    return LossValue(value, np.concatenate(grads))


def _unit_rows(matrix: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = check_nonzero_rows(matrix, name)
    return matrix / norms[:, None], norms


def _unit_rows_backward(
    unit: np.ndarray, norms: np.ndarray, dunit: np.ndarray
) -> np.ndarray:
    inner = (dunit * unit).sum(axis=1, keepdims=True)
    return (dunit - inner * unit) / norms[:, None]


def transition_matrix(emb_t, emb_t1, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Row-stochastic transition probabilities between two frames' embeddings.

    Entry (i, j) is the softmax over j of cos(emb_t[i], emb_t1[j]) divided by
    ``temperature``. Cosine makes the matrix invariant to positive rescaling
    of any single embedding.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    u = check_matrix(emb_t, "emb_t")
    v = check_matrix(emb_t1, "emb_t1")
    if u.shape[1] != v.shape[1]:
        raise ValueError(f"embedding dims differ: {u.shape[1]} vs {v.shape[1]}")
    u_hat, _ = _unit_rows(u, "emb_t")
    v_hat, _ = _unit_rows(v, "emb_t1")
    return _row_softmax((u_hat @ v_hat.T) / temperature)


def cycle_loss(a_fwd, a_bwd) -> LossValue:
    """Cross entropy of the round-trip transition product against the identity.

    ``a_fwd`` is M x N, ``a_bwd`` is N x M; the loss is -sum_i log((a_fwd @
    a_bwd)[i, i]). Gradient layout: [a_fwd, a_bwd] flattened row-major.
    """
    fwd = check_matrix(a_fwd, "a_fwd")
    bwd = check_matrix(a_bwd, "a_bwd")
    if fwd.shape[1] != bwd.shape[0] or fwd.shape[0] != bwd.shape[1]:
        raise ValueError(f"shape mismatch: {fwd.shape} vs {bwd.shape}")
    product = fwd @ bwd
    value = _identity_cross_entropy(product, "transition product")
    dprod = np.zeros_like(product)
    diag = np.diag(product)
    np.fill_diagonal(dprod, -1.0 / diag)
    dfwd = dprod @ bwd.T
    dbwd = fwd.T @ dprod
    return LossValue(value, np.concatenate([dfwd.ravel(), dbwd.ravel()]))


def _cycle_forward_backward(
    u: np.ndarray, v: np.ndarray, temperature: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value and embedding gradients of cycle_loss(transition(u,v), transition(v,u))."""
    u_hat, u_norm = _unit_rows(u, "emb_t")
    v_hat, v_norm = _unit_rows(v, "emb_t1")
    cos = u_hat @ v_hat.T
    a_fwd = _row_softmax(cos / temperature)
    a_bwd = _row_softmax(cos.T / temperature)
    product = a_fwd @ a_bwd
    value = _identity_cross_entropy(product, "transition product")

    dprod = np.zeros_like(product)
    np.fill_diagonal(dprod, -1.0 / np.diag(product))
    dfwd = dprod @ a_bwd.T
    dbwd = a_fwd.T @ dprod
    dcos = _row_softmax_backward(a_fwd, dfwd) / temperature
    dcos += (_row_softmax_backward(a_bwd, dbwd) / temperature).T
    du = _unit_rows_backward(u_hat, u_norm, dcos @ v_hat)
    dv = _unit_rows_backward(v_hat, v_norm, dcos.T @ u_hat)
    return value, du, dv


def cycle_loss_embeddings(
    emb_t, emb_t1, temperature: float = DEFAULT_TEMPERATURE
) -> LossValue:
    """Cycle loss composed with the transition matrices built from embeddings.

    Gradient layout: [emb_t, emb_t1] flattened row-major.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    u = check_matrix(emb_t, "emb_t")
    v = check_matrix(emb_t1, "emb_t1")
    if u.shape[1] != v.shape[1]:
        raise ValueError(f"embedding dims differ: {u.shape[1]} vs {v.shape[1]}")
    value, du, dv = _cycle_forward_backward(u, v, temperature)
    return LossValue(value, np.concatenate([du.ravel(), dv.ravel()]))


def grad_check(loss_fn, params, step: float = 1e-6) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``loss_fn`` maps a flat parameter vector to a :class:`LossValue`. The
    relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    params = check_vector(np.asarray(params, dtype=float), "params")
    base = loss_fn(params)
    if not np.isfinite(base.value) or not np.all(np.isfinite(base.gradient)):
        raise ValueError("loss is not finite at the given point")
    analytic = np.asarray(base.gradient, dtype=float)
    if analytic.shape != params.shape:
        raise ValueError(
            f"gradient length {analytic.size} does not match {params.size} parameters"
        )
    worst = 0.0
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] = params[i] + step
        hi = loss_fn(bumped).value
        bumped[i] = params[i] - step
        lo = loss_fn(bumped).value
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"loss is not finite near coordinate {i}")
        numeric = (hi - lo) / (2.0 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Two-frame toy scenarios: raw location samples carrying frame and part kind.


@dataclass(frozen=True)
class ScenarioSample:
    """A location sample tagged with its frame (0 or 1) and part kind."""

    frame: int
    kind: str
    instance_id: int
    class_score: float
    embedding: np.ndarray


@dataclass(frozen=True)
class ScenarioLayout:
    """Canonical ordering of a scenario's kept samples and their grouping."""

    samples: tuple[ScenarioSample, ...]
    dim: int
    instance_ids: tuple[int, ...]
    # (frame, kind) -> list of per-instance row-index arrays, instance order
    group_rows: dict

    @property
    def size(self) -> int:
        return len(self.samples)


def scenario_layout(samples, threshold: float = SCORE_THRESHOLD) -> ScenarioLayout:
    """Vet and canonically order a two-frame scenario.

    Samples at or below the score threshold are dropped. Every (frame, kind)
    cell must cover the same set of instance ids so the per-frame center sets
    line up for the contrast and cycle losses.
    """
    kept = []
    for position, sample in enumerate(samples):
        if sample.frame not in (0, 1):
            raise ValueError(f"scenario frames must be 0 or 1, got {sample.frame}")
        if sample.kind not in KINDS:
            raise ValueError(f"unknown part kind {sample.kind!r}")
        if sample.class_score > threshold:
            kept.append((sample.frame, KINDS.index(sample.kind), sample.instance_id, position, sample))
    if not kept:
        raise ValueError("no scenario samples above the score threshold")
    kept.sort(key=lambda item: item[:4])
    ordered = tuple(item[4] for item in kept)
    dims = {check_vector(s.embedding, "sample embedding").size for s in ordered}
    if len(dims) != 1:
        raise ValueError(f"mixed embedding dimensions in scenario: {sorted(dims)}")

    instance_ids = tuple(sorted({s.instance_id for s in ordered}))
    group_rows: dict = {}
    for frame in (0, 1):
        for kind in KINDS:
            per_instance = {iid: [] for iid in instance_ids}
            for row, sample in enumerate(ordered):
                if sample.frame == frame and sample.kind == kind:
                    per_instance[sample.instance_id].append(row)
            missing = [iid for iid, rows in per_instance.items() if not rows]
            if missing:
                raise ValueError(
                    f"frame {frame} {kind} groups missing instances {missing}"
                )
            group_rows[(frame, kind)] = [
                np.asarray(per_instance[iid], dtype=int) for iid in instance_ids
            ]
    return ScenarioLayout(ordered, dims.pop(), instance_ids, group_rows)


def flatten_embeddings(layout: ScenarioLayout) -> np.ndarray:
    return np.concatenate([np.asarray(s.embedding, dtype=float) for s in layout.samples])


@dataclass(frozen=True)
class LossWeights:
    center: float = 1.0
    contrast: float = 1.0
    cycle: float = 1.0


def scenario_loss(
    params,
    layout: ScenarioLayout,
    weights: LossWeights = LossWeights(),
    temperature: float = DEFAULT_TEMPERATURE,
) -> LossValue:
    """Weighted sum of the three losses over a two-frame scenario.

    ``params`` holds all kept sample embeddings in the layout's canonical
    order. The cycle term pairs each instance's shadow and object centers
    (concatenated) and runs the round trip in both directions.
    """
    params = np.asarray(params, dtype=float)
    emb = params.reshape(layout.size, layout.dim)
    grad = np.zeros_like(emb)
    value = 0.0

    # Center loss over every (frame, kind, instance) group.
    if weights.center != 0.0:
        for rows_per_instance in layout.group_rows.values():
            for rows in rows_per_instance:
                block = emb[rows]
                center = block.mean(axis=0)
                residual = center - block
                value += weights.center * float(np.abs(residual).sum())
                signs = np.sign(residual)
                grad[rows] += weights.center * (signs.mean(axis=0) - signs)

    centers: dict = {}
    for (frame, kind), rows_per_instance in layout.group_rows.items():
        centers[(frame, kind)] = np.stack(
            [emb[rows].mean(axis=0) for rows in rows_per_instance]
        )

    def scatter_center_grad(frame: int, kind: str, dcenters: np.ndarray) -> None:
        for rows, drow in zip(layout.group_rows[(frame, kind)], dcenters):
            grad[rows] += drow / rows.size

    # Contrast loss per frame: both kinds' similarity matrices vs identity.
    if weights.contrast != 0.0:
        for frame in (0, 1):
            for kind in KINDS:
                c = centers[(frame, kind)]
                sim = _row_softmax(c @ c.T)
                value += weights.contrast * _identity_cross_entropy(sim, "similarity")
                dgram = sim - np.eye(sim.shape[0])
                scatter_center_grad(
                    frame, kind, weights.contrast * (dgram @ c + dgram.T @ c)
                )

    # Cycle loss on the concatenated shadow|object centers, both directions.
    if weights.cycle != 0.0:
        paired0 = np.hstack([centers[(0, "shadow")], centers[(0, "object")]])
        paired1 = np.hstack([centers[(1, "shadow")], centers[(1, "object")]])
        dim = layout.dim
        for u, v, uf, vf in ((paired0, paired1, 0, 1), (paired1, paired0, 1, 0)):
            cyc_value, du, dv = _cycle_forward_backward(u, v, temperature)
            value += weights.cycle * cyc_value
            scatter_center_grad(uf, "shadow", weights.cycle * du[:, :dim])
            scatter_center_grad(uf, "object", weights.cycle * du[:, dim:])
            scatter_center_grad(vf, "shadow", weights.cycle * dv[:, :dim])
            scatter_center_grad(vf, "object", weights.cycle * dv[:, dim:])

    return LossValue(value, grad.ravel())


@dataclass(frozen=True)
class ToyFitResult:
    """Optimized embeddings plus the loss recorded before each step and at the end."""

    layout: ScenarioLayout
    embeddings: np.ndarray
    loss_trace: np.ndarray

    def updated_samples(self) -> tuple[ScenarioSample, ...]:
        return tuple(
            replace(sample, embedding=self.embeddings[i].copy())
            for i, sample in enumerate(self.layout.samples)
        )


def fit_toy(
    samples,
    steps: int,
    learning_rate: float,
    weights: LossWeights = LossWeights(),
    temperature: float = DEFAULT_TEMPERATURE,
) -> ToyFitResult:
    """Plain gradient descent on the raw sample embeddings.

    The loss trace has ``steps + 1`` entries: the loss before each update and
    one final evaluation. A non-finite loss aborts with the step index.
    """
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    if learning_rate <= 0.0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    layout = scenario_layout(samples)
    params = flatten_embeddings(layout)
    trace = np.empty(steps + 1)
    for step in range(steps):
        loss = scenario_loss(params, layout, weights, temperature)
        if not np.isfinite(loss.value):
            raise ValueError(f"loss diverged to non-finite value at step {step}")
        trace[step] = loss.value
        params = params - learning_rate * loss.gradient
    final = scenario_loss(params, layout, weights, temperature)
    if not np.isfinite(final.value):
        raise ValueError(f"loss diverged to non-finite value at step {steps}")
    trace[steps] = final.value
    return ToyFitResult(layout, params.reshape(layout.size, layout.dim), trace)


def random_scenario(
    instances: int = 4,
    samples_per_group: int = 5,
    dim: int = 16,
    seed: int = 0,
    sample_noise: float = 0.7,
    score_low: float = 0.2,
) -> list[ScenarioSample]:
    """Seeded two-frame scenario of noisy samples around per-instance latents.

    Each (instance, kind) owns one latent unit vector shared by both frames;
    every sample is that latent plus ``sample_noise`` times a Gaussian vector,
    renormalised. At the default noise the instances start inseparable.
    """
    if instances < 1 or samples_per_group < 1:
        raise ValueError("instances and samples_per_group must be positive")
    rng = np.random.default_rng(seed)
    latents = {}
    for instance_id in range(instances):
        for kind in KINDS:
            vec = rng.standard_normal(dim)
            latents[(instance_id, kind)] = vec / np.linalg.norm(vec)
    samples = []
    for frame in (0, 1):
        for kind in KINDS:
            for instance_id in range(instances):
                for _ in range(samples_per_group):
                    vec = latents[(instance_id, kind)] + sample_noise * rng.standard_normal(dim)
                    vec /= np.linalg.norm(vec)
                    samples.append(
                        ScenarioSample(
                            frame=frame,
                            kind=kind,
                            instance_id=instance_id,
                            class_score=float(rng.uniform(score_low, 1.0)),
                            embedding=vec,
                        )
                    )
    return samples


class ToyEmbeddingFitter(BaseEstimator):
    """Estimator wrapper around :func:`fit_toy`.

    Parameters mirror the function arguments; after :meth:`fit` the optimized
    embeddings, canonical layout, and loss trace are available as
    ``embeddings_``, ``layout_``, and ``loss_trace_``.
    """

    def __init__(
        self,
        steps: int = 2000,
        learning_rate: float = 0.01,
        w_center: float = 1.0,
        w_contrast: float = 1.0,
        w_cycle: float = 1.0,
        temperature: float = DEFAULT_TEMPERATURE,
    ):
        self.steps = steps
        self.learning_rate = learning_rate
        self.w_center = w_center
        self.w_contrast = w_contrast
        self.w_cycle = w_cycle
        self.temperature = temperature

    def fit(self, samples, y=None):
        weights = LossWeights(self.w_center, self.w_contrast, self.w_cycle)
        result = fit_toy(
            samples, self.steps, self.learning_rate, weights, self.temperature
        )
        self.layout_ = result.layout
        self.embeddings_ = result.embeddings
        self.loss_trace_ = result.loss_trace
        return self
