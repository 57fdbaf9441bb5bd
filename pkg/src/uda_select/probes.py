"""Small trainable heads used by the metrics.

All probes are trained full-batch with a deterministic quasi-Newton
optimizer (L-BFGS with line search, history 10). Training data is brought
into a canonical row order first, so results do not depend on the order in
which samples arrive. The two-layer head uses tanh hidden units, which
keeps all probe objectives smooth for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .numerics import softmax


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    architecture: str = "linear"  # "linear" or "mlp2"
    hidden_dim: int | None = None  # mlp2 only; defaults to the feature dim
    max_steps: int = 200
    seed: int = 0
    l2_penalty: float = 1e-4
    margin_rho: float = 4.0  # MDD adversary only

    def __post_init__(self):
        if self.architecture not in ("linear", "mlp2"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.margin_rho < 1:
            raise ValueError("margin rho must be >= 1")


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignment: np.ndarray  # per-sample fold index, original order

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        sizes = np.bincount(a, minlength=self.n_folds)
        if sizes.max() - sizes.min() > 1:
            raise ValueError("fold sizes differ by more than 1")
        object.__setattr__(self, "assignment", a)


@dataclass
class ProbeResult:
    heldout_predictions: np.ndarray  # row-stochastic, original sample order
    train_losses: list  # per-fold final training loss


def _canonical_rows(X: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    if y is not None:
        keys.insert(0, y)
    return np.lexsort(tuple(keys))


class _Net:
    """Parameter layout and forward/backward for one probe head."""

    def __init__(self, cfg: ProbeConfig, d_in: int, n_out: int):
        self.arch = cfg.architecture
        self.d_in = d_in
        self.n_out = n_out
        self.hidden = cfg.hidden_dim or d_in
        if self.arch == "linear":
            self.shapes = [(d_in, n_out), (n_out,)]
        else:
            self.shapes = [
                (d_in, self.hidden),
                (self.hidden,),
                (self.hidden, n_out),
                (n_out,),
            ]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.n_params = sum(self.sizes)

    def init(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        fan_in = self.d_in
        for shape in self.shapes:
            if len(shape) == 2:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=shape).ravel())
        return np.concatenate(parts)

    def unpack(self, theta: np.ndarray) -> list:
        out = []
        pos = 0
        for shape, size in zip(self.shapes, self.sizes):
            out.append(theta[pos : pos + size].reshape(shape))
            pos += size
        return out

    def forward(self, theta: np.ndarray, X: np.ndarray):
        params = self.unpack(theta)
        if self.arch == "linear":
            W, b = params
            return X @ W + b, (X,)
        W1, b1, W2, b2 = params
        A = np.tanh(X @ W1 + b1)
        return A @ W2 + b2, (X, A)

    def backward(self, theta, cache, g_logits) -> np.ndarray:
        params = self.unpack(theta)
        if self.arch == "linear":
            (X,) = cache
            W, _ = params
            gW = X.T @ g_logits
            gb = g_logits.sum(axis=0)
            return np.concatenate([gW.ravel(), gb.ravel()])
        X, A = cache
        W1, _, W2, _ = params
        gW2 = A.T @ g_logits
        gb2 = g_logits.sum(axis=0)
        gA = g_logits @ W2.T
        gH = gA * (1.0 - A * A)
        gW1 = X.T @ gH
        gb1 = gH.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1.ravel(), gW2.ravel(), gb2.ravel()])

    def l2_terms(self, theta, l2):
        """Penalty value and gradient over weight matrices only."""
        grad = np.zeros_like(theta)
        val = 0.0
        pos = 0
        for shape, size in zip(self.shapes, self.sizes):
            if len(shape) == 2:
                w = theta[pos : pos + size]
                val += l2 * float(w @ w)
                grad[pos : pos + size] = 2.0 * l2 * w
            pos += size
        return val, grad


def _ce_value_grad_logits(logits, y, n_out):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    P = softmax(logits)
    ll = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(ll).sum(axis=1))
    val = float(np.mean(logZ - ll[np.arange(n), y]))
    Y = np.zeros_like(P)
    Y[np.arange(n), y] = 1.0
    return val, (P - Y) / n


def ce_objective(net: _Net, X: np.ndarray, y: np.ndarray, l2: float):
    """theta -> (mean cross-entropy + l2 penalty, gradient)."""

    def fun(theta):
        logits, cache = net.forward(theta, X)
        val, g_logits = _ce_value_grad_logits(logits, y, net.n_out)
        grad = net.backward(theta, cache, g_logits)
        pen, pen_grad = net.l2_terms(theta, l2)
        return val + pen, grad + pen_grad

    return fun


def mcd_objective(net: _Net, Xs, ys, Xt, l2: float, lambda_dis: float = 1.0):
    """Joint objective for a classifier pair: agree on source, disagree on target.

    theta stacks both heads; the target term is the mean per-class absolute
    probability gap between the two heads.
    """

    def fun(theta):
        t1, t2 = theta[: net.n_params], theta[net.n_params :]
        logits1, c1 = net.forward(t1, Xs)
        logits2, c2 = net.forward(t2, Xs)
        v1, g1 = _ce_value_grad_logits(logits1, ys, net.n_out)
        v2, g2 = _ce_value_grad_logits(logits2, ys, net.n_out)
        grad1 = net.backward(t1, c1, g1)
        grad2 = net.backward(t2, c2, g2)

        zt1, ct1 = net.forward(t1, Xt)
        zt2, ct2 = net.forward(t2, Xt)
        P1, P2 = softmax(zt1), softmax(zt2)
        diff = P1 - P2
        nt, K = P1.shape
        dis = float(np.mean(np.abs(diff)))
        S = np.sign(diff)
        # d mean_k |p - p'| / d logits, via the softmax Jacobian
        g_zt1 = P1 * (S - np.sum(S * P1, axis=1, keepdims=True)) / (nt * K)
        g_zt2 = -P2 * (S - np.sum(S * P2, axis=1, keepdims=True)) / (nt * K)
        grad1 -= lambda_dis * net.backward(t1, ct1, g_zt1)
        grad2 -= lambda_dis * net.backward(t2, ct2, g_zt2)

        pen1, pg1 = net.l2_terms(t1, l2)
        pen2, pg2 = net.l2_terms(t2, l2)
        val = v1 + v2 - lambda_dis * dis + pen1 + pen2
        return val, np.concatenate([grad1 + pg1, grad2 + pg2])

    return fun


def mdd_objective(net: _Net, Xs, ys_hat, Xt, yt_hat, rho: float, l2: float):
    """Margin-disparity adversary: match f on source, mismatch on target.

    loss = CE(f'(x_s), argmax f(x_s))
           - (1/rho) * E_t[log(1 - p_{f'}(argmax f(x_t)))]
    """
    eps = 1e-7

    def fun(theta):
        logits_s, cs = net.forward(theta, Xs)
        v_s, g_s = _ce_value_grad_logits(logits_s, ys_hat, net.n_out)
        grad = net.backward(theta, cs, g_s)

        logits_t, ct = net.forward(theta, Xt)
        P = softmax(logits_t)
        nt = P.shape[0]
        pc = np.clip(P[np.arange(nt), yt_hat], None, 1.0 - eps)
        v_t = float(np.mean(np.log(1.0 - pc)))
        # d[-log(1 - p_c)]/d z_i = p_c (delta_ic - p_i) / (1 - p_c)
        coef = pc / (1.0 - pc)
        g_t = -P * coef[:, None]
        g_t[np.arange(nt), yt_hat] += coef
        grad += (1.0 / rho) * net.backward(theta, ct, g_t / nt)

        pen, pg = net.l2_terms(theta, l2)
        return v_s - (1.0 / rho) * v_t + pen, grad + pg

    return fun


def _optimize(fun, theta0, max_steps):
    res = minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_steps, "maxcor": 10, "ftol": 1e-12, "gtol": 1e-10},
    )
    return res.x, float(res.fun)


class ProbeClassifier:
    """Row-stochastic classifier head with a fit/predict_proba surface."""

    def __init__(self, config: ProbeConfig | None = None, **overrides):
        self.config = replace(config or ProbeConfig(), **overrides)
        self._net = None
        self._theta = None
        self.final_loss_ = None
        self.initial_loss_ = None

    def get_params(self, deep: bool = True) -> dict:
        return {"config": self.config}

    def set_params(self, **params):
        if "config" in params:
            self.config = params.pop("config")
        self.config = replace(self.config, **params)
        return self

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ProbeClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        classes = np.unique(y)
        if classes.size < 2:
            raise ProbeError("fewer than 2 classes present")
        n_out = int(y.max()) + 1
        order = _canonical_rows(X, y)
        Xc, yc = X[order], y[order]
        net = _Net(self.config, X.shape[1], n_out)
        rng = np.random.default_rng(self.config.seed)
        theta0 = net.init(rng)
        fun = ce_objective(net, Xc, yc, self.config.l2_penalty)
        self.initial_loss_ = fun(theta0)[0]
        self._theta, self.final_loss_ = _optimize(fun, theta0, self.config.max_steps)
        self._net = net
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self._theta is None:
            raise ProbeError("probe is not fitted")
        logits, _ = self._net.forward(self._theta, np.asarray(X, dtype=np.float64))
        return softmax(logits)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    @classmethod
    def _from_theta(cls, config, net, theta):
        probe = cls(config)
        probe._net = net
        probe._theta = theta
        return probe


def train_probe(X, y, cfg: ProbeConfig) -> ProbeClassifier:
    return ProbeClassifier(cfg).fit(X, y)


def make_fold_plan(X, y, n_folds: int, seed: int, max_retries: int = 10) -> FoldPlan:
    """Seeded shuffle over the canonical row order, stratification by retry.

    Every fold's training portion (its complement) must contain every class
    present in y; the shuffle is re-drawn up to `max_retries` times.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n_folds < 2 or n_folds > n:
        raise ProbeError("invalid fold count")
    order = _canonical_rows(X, y)
    classes = np.unique(y)
    for attempt in range(max_retries):
        rng = np.random.default_rng((seed, attempt))
        perm = rng.permutation(n)
        assignment = np.empty(n, dtype=np.int64)
        assignment[order[perm]] = np.arange(n) % n_folds
        ok = all(
            np.isin(classes, y[assignment != f]).all() for f in range(n_folds)
        )
        if ok:
            return FoldPlan(n_folds=n_folds, assignment=assignment)
    raise ProbeError("could not build folds covering every class")


def kfold_heldout_predict(X, y, cfg: ProbeConfig, plan: FoldPlan) -> ProbeResult:
    """Train on each fold's complement, predict the fold, reassemble in order."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_out = int(y.max()) + 1
    preds = np.zeros((X.shape[0], n_out))
    losses = []
    for f in range(plan.n_folds):
        train = plan.assignment != f
        probe = train_probe(X[train], y[train], cfg)
        losses.append(probe.final_loss_)
        held = ~train
        preds[held] = probe.predict_proba(X[held])
    return ProbeResult(heldout_predictions=preds, train_losses=losses)


def train_classifier_pair_mcd(source, target_features, cfg: ProbeConfig):
    """Two linear heads trained to agree on source and disagree on target."""
    Xs, ys = source
    Xs = np.asarray(Xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    Xt = np.asarray(target_features, dtype=np.float64)
    if np.unique(ys).size < 2:
        raise ProbeError("fewer than 2 classes present")
    n_out = int(ys.max()) + 1
    so = _canonical_rows(Xs, ys)
    to = _canonical_rows(Xt)
    net = _Net(replace(cfg, architecture="linear"), Xs.shape[1], n_out)
    rng = np.random.default_rng(cfg.seed)
    theta0 = np.concatenate([net.init(rng), net.init(rng)])
    fun = mcd_objective(net, Xs[so], ys[so], Xt[to], cfg.l2_penalty)
    theta, _ = _optimize(fun, theta0, cfg.max_steps)
    cfg_lin = replace(cfg, architecture="linear")
    return (
        ProbeClassifier._from_theta(cfg_lin, net, theta[: net.n_params]),
        ProbeClassifier._from_theta(cfg_lin, net, theta[net.n_params :]),
    )


def train_mdd_adversary(source, target_features, f_predictions, cfg: ProbeConfig):
    """Linear adversary trained against the model classifier's argmax labels."""
    Xs, _ = source
    Xs = np.asarray(Xs, dtype=np.float64)
    Xt = np.asarray(target_features, dtype=np.float64)
    ps, pt = f_predictions
    ys_hat = np.asarray(ps).argmax(axis=1).astype(np.int64)
    yt_hat = np.asarray(pt).argmax(axis=1).astype(np.int64)
    if np.unique(ys_hat).size < 2:
        raise ProbeError("fewer than 2 classes present")
    n_out = ps.shape[1]
    so = _canonical_rows(Xs, ys_hat)
    to = _canonical_rows(Xt, yt_hat)
    net = _Net(replace(cfg, architecture="linear"), Xs.shape[1], n_out)
    rng = np.random.default_rng(cfg.seed)
    theta0 = net.init(rng)
    fun = mdd_objective(
        net, Xs[so], ys_hat[so], Xt[to], yt_hat[to], cfg.margin_rho, cfg.l2_penalty
    )
    theta, _ = _optimize(fun, theta0, cfg.max_steps)
    return ProbeClassifier._from_theta(replace(cfg, architecture="linear"), net, theta)
