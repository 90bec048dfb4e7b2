"""From-scratch neural regressors: a two-hidden-layer MLP trained with
scaled conjugate gradient, and a Gaussian RBF network with least-squares
output weights.

The MLP uses hyperbolic-tangent hidden activations and a linear output
layer; training is full batch with validation-failure early stopping and
returns the parameters from the best-validation epoch. The RBF hidden layer
is unweighted Gaussian kernels; centers come either from every training
point (exact interpolation) or from greedy orthogonal least squares, and
the linear output layer is solved directly.

Both models operate on plain arrays; callers scale inputs/targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MLP_FORMAT_VERSION = 1
RBF_FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainingState:
    epoch: int
    best_validation_error: float
    validation_failures: int


@dataclass
class MlpNetwork:
    """Feed-forward net: tanh hidden layers, linear output."""

    layer_sizes: tuple[int, ...]
    weights: list  # per layer, shape (fan_out, fan_in)
    biases: list   # per layer, shape (fan_out,)
    training_state: TrainingState | None = None


@dataclass(frozen=True)
class MlpTrainConfig:
    max_epochs: int = 500
    max_validation_failures: int = 5
    min_gradient: float = 1e-6
    sigma: float = 5e-5
    lambda_init: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_validation_failures < 1:
            raise ValueError("max_validation_failures must be at least 1")


def mlp_init(layer_sizes, seed: int = 0) -> MlpNetwork:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    layer_sizes = tuple(int(v) for v in layer_sizes)
    if len(layer_sizes) != 4:
        raise ValueError("expected [input, hidden1, hidden2, output] layer sizes")
    if any(v < 1 for v in layer_sizes):
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpNetwork(layer_sizes=layer_sizes, weights=weights, biases=biases)


def _as_batch(x, width, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != width:
        raise ValueError(f"{what} width {x.shape[1]} does not match expected {width}")
    return x, single


def mlp_forward(net: MlpNetwork, inputs):
    """Nested forward pass: linear(W_out tanh(W2 tanh(W1 x + b1) + b2) + b_out)."""
    x, single = _as_batch(inputs, net.layer_sizes[0], "input")
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.tanh(a @ w.T + b)
    out = a @ net.weights[-1].T + net.biases[-1]
    return out[0] if single else out


def mlp_sse(net: MlpNetwork, inputs, targets) -> float:
    """Sum of squared errors over the batch (summed over outputs too)."""
    y, _ = _as_batch(targets, net.layer_sizes[-1], "target")
    pred = mlp_forward(net, inputs)
    pred = pred if pred.ndim == 2 else pred[None, :]
    return float(np.sum((pred - y) ** 2))


def mlp_gradient(net: MlpNetwork, inputs, targets):
    """Backpropagated gradient of the batch SSE for every weight and bias.

    Returns (grad_weights, grad_biases) matching the network's shapes.
    """
    x, _ = _as_batch(inputs, net.layer_sizes[0], "input")
    y, _ = _as_batch(targets, net.layer_sizes[-1], "target")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree on batch size")
    activations = [x]
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.tanh(a @ w.T + b)
        activations.append(a)
    pred = a @ net.weights[-1].T + net.biases[-1]

    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.biases)
    delta = 2.0 * (pred - y)
    for layer in range(len(net.weights) - 1, -1, -1):
        grad_w[layer] = delta.T @ activations[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer]) * (1.0 - activations[layer] ** 2)
    return grad_w, grad_b


def _pack(weights, biases) -> np.ndarray:
    return np.concatenate([w.ravel() for w in weights] + [b.ravel() for b in biases])


def _unpack(vector, layer_sizes):
    weights, biases = [], []
    pos = 0
    shapes = [(o, i) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
    for shape in shapes:
        size = shape[0] * shape[1]
        weights.append(vector[pos:pos + size].reshape(shape))
        pos += size
    for shape in shapes:
        biases.append(vector[pos:pos + shape[0]])
        pos += shape[0]
    return weights, biases


@dataclass(frozen=True)
class MlpTrainTrace:
    train_sse: tuple[float, ...]
    validation_rmse: tuple[float, ...]
    stop_reason: str
    epochs: int


@np.errstate(over="ignore", invalid="ignore")
def mlp_train(train_inputs, train_targets, val_inputs, val_targets,
              layer_sizes, config: MlpTrainConfig = MlpTrainConfig()):
    """Full-batch scaled-conjugate-gradient training with early stopping.

    Stops on the epoch budget, a gradient norm below ``min_gradient``, or
    ``max_validation_failures`` consecutive epochs whose validation error
    exceeds the best seen; the returned network holds the best-validation
    parameters. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    x, _ = _as_batch(train_inputs, layer_sizes[0], "input")
    y = np.asarray(train_targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    xv, _ = _as_batch(val_inputs, layer_sizes[0], "input")
    yv = np.asarray(val_targets, dtype=float)
    if yv.ndim == 1:
        yv = yv[:, None]
    # Canonicalize row order so full-batch training is exactly invariant to
    # how the caller happened to order the samples.
    order = np.lexsort(np.column_stack([x, y]).T)
    x, y = x[order], y[order]
    v_order = np.lexsort(np.column_stack([xv, yv]).T)
    xv, yv = xv[v_order], yv[v_order]

    net = mlp_init(layer_sizes, seed=config.seed)
    sizes = net.layer_sizes

    def energy_grad(wvec):
        weights, biases = _unpack(wvec, sizes)
        probe = MlpNetwork(sizes, weights, biases)
        gw, gb = mlp_gradient(probe, x, y)
        return _pack(gw, gb)

    def energy(wvec):
        weights, biases = _unpack(wvec, sizes)
        return mlp_sse(MlpNetwork(sizes, weights, biases), x, y)

    def val_rmse(wvec):
        weights, biases = _unpack(wvec, sizes)
        probe = MlpNetwork(sizes, weights, biases)
        pred = mlp_forward(probe, xv)
        pred = pred if pred.ndim == 2 else pred[None, :]
        return float(np.sqrt(np.mean((pred - yv) ** 2)))

    w = _pack(net.weights, net.biases)
    n_params = w.size
    lam = config.lambda_init
    lam_bar = 0.0
    e_now = energy(w)
    if not np.isfinite(e_now):
        raise TrainingDiverged("initial training loss is not finite",
                               MlpTrainTrace((), (), "diverged", 0))
    r = -energy_grad(w)
    p = r.copy()
    success = True

    best_val = val_rmse(w)
    best_w = w.copy()
    failures = 0
    sse_trace = [e_now]
    val_trace = [best_val]
    stop_reason = "max_epochs"
    epoch = 0
    p_norm2 = float(p @ p)
    delta = 0.0

    for epoch in range(1, config.max_epochs + 1):
        if not np.isfinite(e_now):
            raise TrainingDiverged("training loss is not finite",
                                   MlpTrainTrace(tuple(sse_trace), tuple(val_trace),
                                                 "diverged", epoch))
        if np.linalg.norm(r) < config.min_gradient:
            stop_reason = "min_gradient"
            break
        if success:
            p_norm2 = float(p @ p)
            if p_norm2 == 0.0:
                stop_reason = "min_gradient"
                break
            sigma_k = config.sigma / np.sqrt(p_norm2)
            # r is the negative gradient, so E'(w + sigma*p) - E'(w) = grad + r
            s = (energy_grad(w + sigma_k * p) + r) / sigma_k
            delta = float(p @ s)
        delta += (lam - lam_bar) * p_norm2
        if delta <= 0:  # make the quadratic approximation positive definite
            lam_bar = 2.0 * (lam - delta / p_norm2)
            delta = -delta + lam * p_norm2
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        e_new = energy(w + alpha * p)
        comparison = 2.0 * delta * (e_now - e_new) / (mu * mu) if mu != 0 else -1.0
        if comparison >= 0:
            w = w + alpha * p
            r_new = -energy_grad(w)
            e_now = e_new
            lam_bar = 0.0
            success = True
            if epoch % n_params == 0:
                p = r_new.copy()
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            if comparison >= 0.75:
                lam = max(lam * 0.25, 1e-300)
        else:
            lam_bar = lam
            success = False
        if comparison < 0.25:
            lam = lam + delta * (1.0 - comparison) / p_norm2
        if lam > 1e100:
            stop_reason = "stalled"
            break

        sse_trace.append(e_now)
        vr = val_rmse(w)
        val_trace.append(vr)
        if vr < best_val:
            best_val = vr
            best_w = w.copy()
            failures = 0
        elif vr > best_val:
            failures += 1
            if failures >= config.max_validation_failures:
                stop_reason = "validation_failures"
                break

    weights, biases = _unpack(best_w, sizes)
    trained = MlpNetwork(
        layer_sizes=sizes,
        weights=[np.array(wm) for wm in weights],
        biases=[np.array(bv) for bv in biases],
        training_state=TrainingState(epoch=epoch, best_validation_error=best_val,
                                     validation_failures=failures),
    )
    trace = MlpTrainTrace(tuple(sse_trace), tuple(val_trace), stop_reason, epoch)
    return trained, trace


def mlp_to_dict(net: MlpNetwork, input_scaling=None, target_scaling=None) -> dict:
    return {
        "format_version": MLP_FORMAT_VERSION,
        "kind": "mlp",
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.ravel().tolist() for w in net.weights],  # row-major
        "biases": [b.tolist() for b in net.biases],
        "input_scaling": input_scaling,
        "target_scaling": target_scaling,
    }


def mlp_from_dict(doc: dict) -> MlpNetwork:
    if doc.get("kind") != "mlp":
        raise ValueError("not an MLP document")
    if doc.get("format_version") != MLP_FORMAT_VERSION:
        raise ValueError(f"unsupported MLP format version {doc.get('format_version')}")
    sizes = tuple(doc["layer_sizes"])
    shapes = [(o, i) for i, o in zip(sizes[:-1], sizes[1:])]
    weights = [np.asarray(flat, dtype=float).reshape(shape)
               for flat, shape in zip(doc["weights"], shapes)]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    return MlpNetwork(layer_sizes=sizes, weights=weights, biases=biases)


@dataclass
class RbfNetwork:
    """Gaussian-kernel hidden layer plus linear output with bias."""

    centers: np.ndarray         # (m, d)
    spreads: np.ndarray         # (m,)
    output_weights: np.ndarray  # (m, k)
    output_bias: np.ndarray     # (k,)
    ridge_fallback: bool = False


def rbf_design_matrix(centers, spreads, inputs) -> np.ndarray:
    """G[i, m] = exp(-||x_i - V_m||^2 / (2 sigma_m^2))."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    spreads = np.broadcast_to(np.asarray(spreads, dtype=float), (centers.shape[0],))
    if np.any(spreads <= 0):
        raise ValueError("spreads must be positive")
    sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-sq / (2.0 * spreads ** 2))


def _solve_output_layer(g: np.ndarray, y: np.ndarray, ridge: float):
    """Least-squares output weights on [G, 1]; ridge fallback when needed."""
    a = np.column_stack([g, np.ones(g.shape[0])])
    used_ridge = False
    if ridge == 0.0:
        coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
        # Underdetermined systems (all-points centers) are expected; only a
        # genuinely rank-deficient kernel matrix triggers the fallback.
        if rank < min(a.shape):
            used_ridge = True
    else:
        used_ridge = True
    if used_ridge:
        lam = ridge if ridge > 0.0 else 1e-8
        ata = a.T @ a + lam * np.eye(a.shape[1])
        coef = np.linalg.solve(ata, a.T @ y)
    return coef[:-1], coef[-1], used_ridge


def _greedy_centers(g: np.ndarray, y: np.ndarray, max_m: int, goal_mse: float):
    """Orthogonal least-squares forward selection of design-matrix columns.

    Each step adds the candidate that most reduces the residual SSE (after
    the constant regressor), until the goal MSE or the neuron cap is hit.
    """
    n, n_candidates = g.shape
    q0 = np.full(n, 1.0 / np.sqrt(n))
    basis = g - np.outer(q0, q0 @ g)
    resid = y - np.outer(q0, q0 @ y)
    norms2 = np.einsum("ij,ij->j", basis, basis)
    # Columns whose orthogonalized remainder shrinks below this are treated
    # as spanned by the current basis and never selected.
    min_norm2 = 1e-8 * np.maximum(norms2, 1e-30)
    proj = basis.T @ resid  # (C, k)
    q_basis = np.empty((n, min(max_m, n_candidates)))
    selected = []
    total = y.size
    while len(selected) < min(max_m, n_candidates):
        if float(np.sum(resid ** 2)) / total <= goal_mse:
            break
        usable = norms2 > min_norm2
        usable[selected] = False
        if not usable.any():
            break
        scores = np.where(usable, (proj ** 2).sum(axis=1) / np.where(usable, norms2, 1.0), -np.inf)
        j = int(np.argmax(scores))
        if not np.isfinite(scores[j]) or scores[j] <= 0.0:
            break
        # The stored norm can drift under the rank-1 updates; normalize by
        # the true norm and re-orthogonalize against the accepted basis so
        # q stays an exact unit direction.
        v = basis[:, j]
        true_norm2 = float(v @ v)
        if true_norm2 <= min_norm2[j]:
            norms2[j] = 0.0
            continue
        q = v / np.sqrt(true_norm2)
        if selected:
            accepted = q_basis[:, :len(selected)]
            q = q - accepted @ (accepted.T @ q)
            q_norm = float(np.sqrt(q @ q))
            if q_norm < 1e-8:
                norms2[j] = 0.0
                continue
            q = q / q_norm
        a = q @ basis           # (C,)
        b = q @ resid           # (k,)
        basis -= np.outer(q, a)
        resid -= np.outer(q, b)
        norms2 = np.maximum(norms2 - a ** 2, 0.0)
        proj -= np.outer(a, b)
        q_basis[:, len(selected)] = q
        selected.append(j)
    return selected


def rbf_train(inputs, targets, spread: float, center_policy: str = "greedy",
              max_m: int = 600, goal_mse: float = 1e-1, ridge: float = 0.0,
              max_candidates: int | None = None, seed: int = 0) -> RbfNetwork:
    """Fit an RBF network with a shared spread.

    ``center_policy='all_points'`` places one kernel on every training point
    (exact interpolation when inputs are distinct and ridge is zero);
    ``'greedy'`` grows centers by orthogonal least squares until the goal
    MSE or ``max_m``. ``max_candidates`` optionally subsamples the greedy
    candidate pool (seeded) to bound cost on large training sets.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree on sample count")
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    if spread <= 0:
        raise ValueError("spread must be positive")

    if center_policy == "all_points":
        centers = x
    elif center_policy == "greedy":
        if max_candidates is not None and max_candidates < x.shape[0]:
            rng = np.random.default_rng(seed)
            pool = np.sort(rng.choice(x.shape[0], size=max_candidates, replace=False))
            candidates = x[pool]
        else:
            candidates = x
        g = rbf_design_matrix(candidates, spread, x)
        chosen = _greedy_centers(g, y, max_m=max_m, goal_mse=goal_mse)
        if not chosen:
            chosen = [0]
        centers = candidates[np.array(chosen)]
    else:
        raise ValueError(f"unknown center policy {center_policy!r}")

    g = rbf_design_matrix(centers, spread, x)
    weights, bias, used_ridge = _solve_output_layer(g, y, ridge)
    return RbfNetwork(
        centers=np.array(centers),
        spreads=np.full(centers.shape[0], float(spread)),
        output_weights=weights,
        output_bias=bias,
        ridge_fallback=used_ridge and ridge == 0.0,
    )


def rbf_predict(net: RbfNetwork, inputs):
    """y_k = sum_m w_mk G_m(x) + bias_k."""
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    g = rbf_design_matrix(net.centers, net.spreads, x)
    out = g @ net.output_weights + net.output_bias
    if out.shape[1] == 1:
        out = out[:, 0]
    return out[0] if single else out


def rbf_to_dict(net: RbfNetwork, input_scaling=None, target_scaling=None) -> dict:
    return {
        "format_version": RBF_FORMAT_VERSION,
        "kind": "rbf",
        "n_centers": int(net.centers.shape[0]),
        "n_inputs": int(net.centers.shape[1]),
        "n_outputs": int(net.output_weights.shape[1]),
        "centers": net.centers.ravel().tolist(),  # row-major
        "spreads": net.spreads.tolist(),
        "output_weights": net.output_weights.ravel().tolist(),
        "output_bias": net.output_bias.tolist(),
        "ridge_fallback": bool(net.ridge_fallback),
        "input_scaling": input_scaling,
        "target_scaling": target_scaling,
    }


def rbf_from_dict(doc: dict) -> RbfNetwork:
    if doc.get("kind") != "rbf":
        raise ValueError("not an RBF document")
    if doc.get("format_version") != RBF_FORMAT_VERSION:
        raise ValueError(f"unsupported RBF format version {doc.get('format_version')}")
    m, d, k = doc["n_centers"], doc["n_inputs"], doc["n_outputs"]
    return RbfNetwork(
        centers=np.asarray(doc["centers"], dtype=float).reshape(m, d),
        spreads=np.asarray(doc["spreads"], dtype=float),
        output_weights=np.asarray(doc["output_weights"], dtype=float).reshape(m, k),
        output_bias=np.asarray(doc["output_bias"], dtype=float),
        ridge_fallback=bool(doc.get("ridge_fallback", False)),
    )
